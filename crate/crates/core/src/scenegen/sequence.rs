//! Scripted rigid motion over a fixed number of frames.

use nalgebra::{Isometry3, Matrix3, Rotation3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::render::{render_stereo_frame, FrameOptions, StereoFrame};
use super::scene::{SceneSpec, WorldScene};
use crate::camera::StereoRig;
use crate::error::{Error, Result};
use crate::image::StereoImage;
use crate::maps::{DepthMap, DisparityMap};
use crate::par;
use crate::refine::{match_stereo, MatchConfig, StageTimings};

const ORTHONORMAL_TOL: f64 = 1e-6;

/// Rotation (row-major 3×3) followed by translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigidTransform {
    #[serde(default)]
    pub translation: [f64; 3],
    #[serde(default = "identity_rows")]
    pub rotation: [[f64; 3]; 3],
}

fn identity_rows() -> [[f64; 3]; 3] {
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self {
            translation: [0.0; 3],
            rotation: identity_rows(),
        }
    }
}

impl RigidTransform {
    pub fn from_translation(t: [f64; 3]) -> Self {
        Self {
            translation: t,
            ..Default::default()
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        let r = &self.rotation;
        Matrix3::new(
            r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
        )
    }

    /// Checks `RᵀR = I` and `det R = +1`.
    pub fn validate(&self, path: &str) -> Result<()> {
        let m = self.matrix();
        let err = (m.transpose() * m - Matrix3::identity()).abs().max();
        if !(err <= ORTHONORMAL_TOL) || !((m.determinant() - 1.0).abs() <= ORTHONORMAL_TOL) {
            return Err(Error::Schema {
                path: format!("{path}.rotation"),
                message: "must be orthonormal with determinant +1".into(),
            });
        }
        if !self.translation.iter().all(|v| v.is_finite()) {
            return Err(Error::Schema {
                path: format!("{path}.translation"),
                message: "must be finite".into(),
            });
        }
        Ok(())
    }

    pub fn isometry(&self) -> Isometry3<f64> {
        let rot =
            UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.matrix()));
        Isometry3::from_parts(Translation3::from(Vector3::from(self.translation)), rot)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Keyframe {
    pub frame: usize,
    #[serde(flatten)]
    pub transform: RigidTransform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectTrack {
    /// Index into the scene's object list.
    pub object: usize,
    pub keyframes: Vec<Keyframe>,
}

/// `frame_count` frames; the camera rig and any object may follow keyframed
/// rigid transforms, interpolated linearly in translation and spherically
/// in rotation, held constant outside the keyed range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceSpec {
    pub frame_count: usize,
    #[serde(default)]
    pub camera: Vec<Keyframe>,
    #[serde(default)]
    pub objects: Vec<ObjectTrack>,
}

impl SequenceSpec {
    pub fn still(frame_count: usize) -> Self {
        Self {
            frame_count,
            camera: Vec::new(),
            objects: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_count == 0 {
            return Err(Error::Schema {
                path: "frame_count".into(),
                message: "must be >= 1".into(),
            });
        }
        check_track(&self.camera, "camera")?;
        for (i, t) in self.objects.iter().enumerate() {
            check_track(&t.keyframes, &format!("objects[{i}].keyframes"))?;
        }
        Ok(())
    }

    pub fn validate_against(&self, scene: &SceneSpec) -> Result<()> {
        self.validate()?;
        for (i, t) in self.objects.iter().enumerate() {
            if t.object >= scene.objects.len() {
                return Err(Error::Schema {
                    path: format!("objects[{i}].object"),
                    message: format!("scene has {} objects", scene.objects.len()),
                });
            }
        }
        Ok(())
    }

    pub fn camera_pose(&self, frame: usize) -> Isometry3<f64> {
        interpolate(&self.camera, frame)
    }

    /// Per-object poses at `frame`, indexed like the scene's objects.
    pub fn object_poses(&self, frame: usize, object_count: usize) -> Vec<Isometry3<f64>> {
        let mut poses = vec![Isometry3::identity(); object_count];
        for t in &self.objects {
            if t.object < object_count {
                poses[t.object] = interpolate(&t.keyframes, frame);
            }
        }
        poses
    }
}

fn check_track(keys: &[Keyframe], path: &str) -> Result<()> {
    for (i, k) in keys.iter().enumerate() {
        k.transform.validate(&format!("{path}[{i}]"))?;
        if i > 0 && keys[i - 1].frame >= k.frame {
            return Err(Error::Schema {
                path: format!("{path}[{i}].frame"),
                message: "keyframes must have strictly increasing frame numbers".into(),
            });
        }
    }
    Ok(())
}

fn interpolate(keys: &[Keyframe], frame: usize) -> Isometry3<f64> {
    let (first, last) = match (keys.first(), keys.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Isometry3::identity(),
    };
    if frame <= first.frame {
        return first.transform.isometry();
    }
    if frame >= last.frame {
        return last.transform.isometry();
    }
    let i = keys
        .iter()
        .rposition(|k| k.frame <= frame)
        .expect("bracketed");
    let (a, b) = (&keys[i], &keys[i + 1]);
    if a.frame == frame {
        return a.transform.isometry();
    }
    let s = (frame - a.frame) as f64 / (b.frame - a.frame) as f64;
    let (ia, ib) = (a.transform.isometry(), b.transform.isometry());
    let t = ia.translation.vector.lerp(&ib.translation.vector, s);
    let r = ia.rotation.slerp(&ib.rotation, s);
    Isometry3::from_parts(Translation3::from(t), r)
}

fn frame_scene(scene: &SceneSpec, seq: &SequenceSpec, t: usize) -> (WorldScene, Isometry3<f64>) {
    let poses = seq.object_poses(t, scene.objects.len());
    (WorldScene::build(scene, &poses), seq.camera_pose(t))
}

/// Renders every frame of `seq`; frames run in parallel.
pub fn render_sequence(
    scene: &SceneSpec,
    seq: &SequenceSpec,
    rig: &StereoRig,
    opts: &FrameOptions,
) -> Result<Vec<StereoFrame>> {
    scene.validate()?;
    seq.validate_against(scene)?;
    par::map_range(seq.frame_count, |t| {
        let (world, pose) = frame_scene(scene, seq, t);
        render_stereo_frame(&world, rig, &pose, opts, t)
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone)]
pub struct SimulatedFrame {
    pub frame: StereoFrame,
    pub disparity: DisparityMap,
    pub depth: DepthMap,
    pub timings: StageTimings,
}

/// Renders and matches every frame of `seq`. Frames run one after another;
/// each match is parallel internally.
pub fn simulate_sequence(
    scene: &SceneSpec,
    seq: &SequenceSpec,
    rig: &StereoRig,
    opts: &FrameOptions,
    cfg: &MatchConfig,
) -> Result<Vec<SimulatedFrame>> {
    cfg.validate()?;
    scene.validate()?;
    seq.validate_against(scene)?;
    (0..seq.frame_count)
        .map(|t| {
            let (world, pose) = frame_scene(scene, seq, t);
            let frame = render_stereo_frame(&world, rig, &pose, opts, t)?;
            let m = match_stereo(&gray(&frame.left), &gray(&frame.right), rig, cfg)?;
            Ok(SimulatedFrame {
                frame,
                disparity: m.disparity,
                depth: m.depth,
                timings: m.timings,
            })
        })
        .collect()
}

fn gray(img: &StereoImage) -> crate::image::ImageGray {
    img.to_gray()
}
