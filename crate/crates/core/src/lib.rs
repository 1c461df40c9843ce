//! Active-stereo depth sensor simulation.
//!
//! The crate renders binocular views of procedural scenes, recovers
//! disparity with a census transform and semi-global matching, refines and
//! converts it to depth, and evaluates the result with standard depth and
//! 6DoF pose metrics.
//!
//! Data-parallel loops go through rayon when the `parallel` feature is on
//! (the default). Every kernel writes disjoint output regions or reduces in
//! a fixed order, so results are bit-identical for any thread count and for
//! the sequential build.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod camera;
pub mod census;
pub mod error;
pub mod image;
pub mod io;
pub mod maps;
pub mod metrics;
mod par;
pub mod refine;
pub mod scenegen;
pub mod sgm;

pub use camera::StereoRig;
pub use census::{build_cost_volume, census_transform, CensusDescriptorMap, CostVolume};
pub use error::{Error, Result};
pub use image::{to_grayscale, ImageGray, ImageRgb, StereoImage};
pub use maps::{
    depth_to_disparity, disparity_to_depth, DepthConversionParams, DepthMap, DisparityMap,
    MaskedMap,
};
pub use refine::{
    lr_consistency, match_stereo, median_filter, speckle_filter, MatchConfig, RefineOrder,
    RefineParams, StageTimings, StereoMatch,
};
pub use sgm::{
    aggregate, aggregate_single_path, right_disparity_from_volume, subpixel_refine, wta_disparity,
    AggregatedVolume, PathDirection, PathSet, SgmParams,
};
