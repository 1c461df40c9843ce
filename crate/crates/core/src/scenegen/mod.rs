//! Procedural stereo scene rendering with range-aware IR/RGB switching.
//!
//! Surfaces are analytic primitives hit by one ray per pixel, so ground
//! truth depth is exact. IR frames carry a projected dot pattern that both
//! cameras observe in world space; RGB frames use ambient plus headlight
//! shading.

mod render;
mod scene;
mod sequence;

pub use render::{
    apply_sensor_noise, median_depth, project_ir_pattern, projector_dots, projector_pose,
    rect_solid_angle, render_gt_depth, render_stereo_frame, render_view, select_render_mode,
    CameraView, FrameOptions, IrLayer, IrProjectorSpec, ModeSelect, RenderMode, SensorSpec,
    StereoFrame, OCCLUSION_TOLERANCE_M,
};
pub use scene::{Background, Color, Illumination, SceneObject, SceneSpec, Texture, WorldScene};
pub use sequence::{
    render_sequence, simulate_sequence, Keyframe, ObjectTrack, RigidTransform, SequenceSpec,
    SimulatedFrame,
};
