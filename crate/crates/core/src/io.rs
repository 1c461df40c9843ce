//! File formats and JSON configuration.
//!
//! * PFM (`Pf`, single channel) for float-exact disparity and depth.
//! * 16-bit PNG for depth, `scale` meters per unit, 0 meaning invalid.
//! * 8-bit PNG for gray and RGB images.
//! * JSON for scene, sequence, match and device configuration, and for
//!   dataset manifests. Unknown keys are rejected.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma, Rgb};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::camera::StereoRig;
use crate::error::{Error, Result};
use crate::image::{ImageGray, ImageRgb, StereoImage};
use crate::maps::{DepthMap, DisparityMap, MaskedMap, Unit};
use crate::refine::MatchConfig;
use crate::scenegen::{
    FrameOptions, IrProjectorSpec, ModeSelect, RenderMode, SceneSpec, SensorSpec, SequenceSpec,
    StereoFrame,
};

/// Meters per PNG16 depth unit (0.1 mm).
pub const DEFAULT_DEPTH_SCALE: f64 = 1e-4;

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn format_err(format: &'static str, reason: impl Into<String>) -> Error {
    Error::Format {
        format,
        reason: reason.into(),
    }
}

/// Little-endian PFM with rows stored bottom to top.
pub fn encode_pfm<U: Unit>(map: &MaskedMap<U>) -> Vec<u8> {
    let (w, h) = map.dims();
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(w * h * 4);
    for y in (0..h).rev() {
        for v in &map.values()[y * w..(y + 1) * w] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(format_err("PFM", "truncated header"));
    }
    std::str::from_utf8(&bytes[start..*pos]).map_err(|_| format_err("PFM", "non-ASCII header"))
}

/// Parses a single-channel PFM. Non-finite or inadmissible values decode
/// as invalid pixels.
pub fn decode_pfm<U: Unit>(bytes: &[u8]) -> Result<MaskedMap<U>> {
    let mut pos = 0;
    match header_token(bytes, &mut pos)? {
        "Pf" => {}
        "PF" => {
            return Err(format_err(
                "PFM",
                "three-channel PFM (\"PF\") where a scalar map was expected",
            ))
        }
        other => return Err(format_err("PFM", format!("bad magic {other:?}"))),
    }
    let dim = |s: &str| {
        s.parse::<usize>()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| format_err("PFM", format!("bad dimension {s:?}")))
    };
    let w = dim(header_token(bytes, &mut pos)?)?;
    let h = dim(header_token(bytes, &mut pos)?)?;
    let scale_tok = header_token(bytes, &mut pos)?;
    let scale: f32 = scale_tok
        .parse()
        .ok()
        .filter(|s: &f32| s.is_finite() && *s != 0.0)
        .ok_or_else(|| format_err("PFM", format!("bad scale {scale_tok:?}")))?;
    // exactly one whitespace byte separates the header from the payload
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(format_err("PFM", "missing payload"));
    }
    pos += 1;
    let payload = &bytes[pos..];
    let expected = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| format_err("PFM", "dimensions overflow"))?;
    if payload.len() != expected {
        return Err(format_err(
            "PFM",
            format!("payload is {} bytes, expected {expected}", payload.len()),
        ));
    }
    let little = scale < 0.0;
    let mut values = vec![0.0f32; w * h];
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        };
        let (row, x) = (h - 1 - i / w, i % w);
        values[row * w + x] = v;
    }
    MaskedMap::from_values(w, h, values)
}

pub fn write_pfm<U: Unit>(map: &MaskedMap<U>, path: &Path) -> Result<()> {
    write_bytes(path, &encode_pfm(map))
}

pub fn read_pfm<U: Unit>(path: &Path) -> Result<MaskedMap<U>> {
    decode_pfm(&read_bytes(path)?)
}

fn encode_png(img: DynamicImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .map_err(|e| format_err("PNG", e.to_string()))?;
    Ok(buf.into_inner())
}

fn decode_png(bytes: &[u8]) -> Result<DynamicImage> {
    image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| format_err("PNG", e.to_string()))
}

/// Depth as 16-bit PNG, `round(z / scale)` per pixel and 0 for invalid.
pub fn encode_depth_png16(z: &DepthMap, scale: f64) -> Result<Vec<u8>> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::param("scale", "must be finite and > 0"));
    }
    let (w, h) = z.dims();
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let Some(v) = z.get(x, y) else {
                data.push(0u16);
                continue;
            };
            let q = (v as f64 / scale).round();
            if !(1.0..=u16::MAX as f64).contains(&q) {
                return Err(Error::InvalidPixel {
                    x,
                    y,
                    reason: format!(
                        "depth {v} m is outside the encodable range ({} m to {} m)",
                        0.5 * scale,
                        u16::MAX as f64 * scale
                    ),
                });
            }
            data.push(q as u16);
        }
    }
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(w as u32, h as u32, data).expect("buffer sized to image");
    encode_png(DynamicImage::ImageLuma16(buf))
}

pub fn decode_depth_png16(bytes: &[u8], scale: f64) -> Result<DepthMap> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::param("scale", "must be finite and > 0"));
    }
    let img = match decode_png(bytes)? {
        DynamicImage::ImageLuma16(b) => b,
        other => {
            return Err(format_err(
                "PNG",
                format!("depth must be 16-bit grayscale, found {:?}", other.color()),
            ))
        }
    };
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.into_raw();
    Ok(DepthMap::from_fn(w, h, |x, y| {
        let q = raw[y * w + x];
        (q != 0).then_some((q as f64 * scale) as f32)
    }))
}

pub fn write_depth_png16(z: &DepthMap, path: &Path, scale: f64) -> Result<()> {
    write_bytes(path, &encode_depth_png16(z, scale)?)
}

pub fn read_depth_png16(path: &Path, scale: f64) -> Result<DepthMap> {
    decode_depth_png16(&read_bytes(path)?, scale)
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// 8-bit PNG; gray images are written single-channel.
pub fn encode_image_png(img: &StereoImage) -> Result<Vec<u8>> {
    let (w, h) = img.dims();
    let dynimg = match img {
        StereoImage::Gray(g) => {
            let data = g.data().iter().map(|&v| to_u8(v)).collect();
            DynamicImage::ImageLuma8(
                ImageBuffer::<Luma<u8>, _>::from_raw(w as u32, h as u32, data)
                    .expect("buffer sized to image"),
            )
        }
        StereoImage::Rgb(c) => {
            let data = c.data().iter().map(|&v| to_u8(v)).collect();
            DynamicImage::ImageRgb8(
                ImageBuffer::<Rgb<u8>, _>::from_raw(w as u32, h as u32, data)
                    .expect("buffer sized to image"),
            )
        }
    };
    encode_png(dynimg)
}

pub fn decode_image_png(bytes: &[u8]) -> Result<StereoImage> {
    let unit = |b: &u8| *b as f32 / 255.0;
    match decode_png(bytes)? {
        DynamicImage::ImageLuma8(b) => {
            let (w, h) = (b.width() as usize, b.height() as usize);
            Ok(StereoImage::Gray(ImageGray::new(
                w,
                h,
                b.as_raw().iter().map(unit).collect(),
            )?))
        }
        DynamicImage::ImageRgb8(b) => {
            let (w, h) = (b.width() as usize, b.height() as usize);
            Ok(StereoImage::Rgb(ImageRgb::new(
                w,
                h,
                b.as_raw().iter().map(unit).collect(),
            )?))
        }
        other => Err(format_err(
            "PNG",
            format!("expected 8-bit gray or RGB, found {:?}", other.color()),
        )),
    }
}

pub fn write_image_png(img: &StereoImage, path: &Path) -> Result<()> {
    write_bytes(path, &encode_image_png(img)?)
}

pub fn read_image_png(path: &Path) -> Result<StereoImage> {
    decode_image_png(&read_bytes(path)?)
}

/// Deserializes JSON, reporting failures with the path of the offending
/// field.
pub fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::Schema {
            path: if path == "." { "$".into() } else { path },
            message: e.into_inner().to_string(),
        }
    })
}

fn param_as_schema(prefix: &str, e: Error) -> Error {
    match e {
        Error::InvalidParameter { name, reason } => Error::Schema {
            path: if prefix.is_empty() {
                name.to_string()
            } else {
                format!("{prefix}.{name}")
            },
            message: reason,
        },
        other => other,
    }
}

pub fn parse_scene_spec(text: &str) -> Result<SceneSpec> {
    let spec: SceneSpec = parse_json(text)?;
    spec.validate()?;
    Ok(spec)
}

pub fn parse_sequence(text: &str) -> Result<SequenceSpec> {
    let seq: SequenceSpec = parse_json(text)?;
    seq.validate()?;
    Ok(seq)
}

pub fn parse_match_config(text: &str) -> Result<MatchConfig> {
    let cfg: MatchConfig = parse_json(text)?;
    cfg.validate().map_err(|e| param_as_schema("", e))?;
    Ok(cfg)
}

pub fn parse_device(text: &str) -> Result<DeviceSpec> {
    let dev: DeviceSpec = parse_json(text)?;
    dev.validate()?;
    Ok(dev)
}

fn default_projector() -> Option<IrProjectorSpec> {
    Some(IrProjectorSpec::default())
}

fn default_threshold() -> f64 {
    2.0
}

/// Contents of a rig file: stereo geometry plus the emitter and sensor.
/// `"projector": null` disables the dot projector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSpec {
    pub baseline_m: f64,
    pub focal_px: f64,
    /// Defaults to the image center.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub principal_point: Option<(f64, f64)>,
    pub image_size: (usize, usize),
    #[serde(default = "default_projector")]
    pub projector: Option<IrProjectorSpec>,
    #[serde(default)]
    pub sensor: SensorSpec,
    #[serde(default = "default_threshold")]
    pub mode_threshold_m: f64,
}

impl Default for DeviceSpec {
    fn default() -> Self {
        Self::from_rig(&StereoRig::default())
    }
}

impl DeviceSpec {
    pub fn from_rig(rig: &StereoRig) -> Self {
        Self {
            baseline_m: rig.baseline_m,
            focal_px: rig.focal_px,
            principal_point: Some(rig.principal_point),
            image_size: rig.image_size,
            projector: default_projector(),
            sensor: SensorSpec::default(),
            mode_threshold_m: default_threshold(),
        }
    }

    pub fn rig(&self) -> Result<StereoRig> {
        let (w, h) = self.image_size;
        let pp = self
            .principal_point
            .unwrap_or(((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0));
        StereoRig::new(self.baseline_m, self.focal_px, pp, self.image_size)
            .map_err(|e| param_as_schema("", e))
    }

    pub fn validate(&self) -> Result<()> {
        self.rig()?;
        self.frame_options(ModeSelect::Auto)
            .validate()
            .map_err(|e| match e {
                Error::InvalidParameter {
                    name: "threshold_m",
                    reason,
                } => Error::Schema {
                    path: "mode_threshold_m".into(),
                    message: reason,
                },
                Error::InvalidParameter {
                    name: n @ ("noise_std" | "seed" | "quantize"),
                    reason,
                } => Error::Schema {
                    path: format!("sensor.{n}"),
                    message: reason,
                },
                other => param_as_schema("projector", other),
            })
    }

    pub fn frame_options(&self, mode: ModeSelect) -> FrameOptions {
        FrameOptions {
            projector: self.projector,
            sensor: self.sensor,
            mode,
            threshold_m: self.mode_threshold_m,
        }
    }

    /// Replaces the projector and sensor seeds.
    pub fn with_seed(mut self, seed: u64) -> Self {
        if let Some(p) = &mut self.projector {
            p.seed = seed;
        }
        self.sensor.seed = seed;
        self
    }
}

pub const MANIFEST_VERSION: &str = "1";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameEntry {
    pub frame_index: usize,
    pub mode: RenderMode,
    pub left: String,
    pub right: String,
    /// Float ground truth (PFM).
    pub gt_depth: String,
    /// Quantized ground truth (PNG16).
    pub gt_depth_png: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim_depth: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disparity: Option<String>,
}

/// Index of a dataset directory. Paths are relative to the directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: String,
    pub device: DeviceSpec,
    pub scene: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequence: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub match_config: Option<String>,
    pub depth_png_scale: f64,
    pub frames: Vec<FrameEntry>,
}

impl DatasetManifest {
    pub fn new(device: DeviceSpec) -> Self {
        Self {
            version: MANIFEST_VERSION.into(),
            device,
            scene: "scene.json".into(),
            sequence: None,
            match_config: None,
            depth_png_scale: DEFAULT_DEPTH_SCALE,
            frames: Vec::new(),
        }
    }

    /// Every relative path the manifest references.
    pub fn files(&self) -> Vec<&str> {
        let mut out = vec![self.scene.as_str()];
        out.extend(self.sequence.as_deref());
        out.extend(self.match_config.as_deref());
        for f in &self.frames {
            out.extend([
                f.left.as_str(),
                f.right.as_str(),
                f.gt_depth.as_str(),
                f.gt_depth_png.as_str(),
            ]);
            out.extend(f.sim_depth.as_deref());
            out.extend(f.disparity.as_deref());
        }
        out
    }

    /// Checks the version and that every referenced file exists under `dir`.
    pub fn check(&self, dir: &Path) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::Schema {
                path: "version".into(),
                message: format!("unsupported manifest version {:?}", self.version),
            });
        }
        for f in self.files() {
            let p = dir.join(f);
            if !p.is_file() {
                return Err(Error::io(
                    &p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "referenced by manifest"),
                ));
            }
        }
        Ok(())
    }
}

pub fn to_json_pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable value");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    write_bytes(path, to_json_pretty(value).as_bytes())
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_manifest(m: &DatasetManifest, dir: &Path) -> Result<()> {
    write_json(m, &dir.join(MANIFEST_FILE))
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let m: DatasetManifest = parse_json(&read_text(&dir.join(MANIFEST_FILE))?)?;
    m.check(dir)?;
    Ok(m)
}

/// Writes one frame's images and ground truth, plus optional matcher
/// output, under `dir`; returns the manifest entry.
pub fn write_frame(
    dir: &Path,
    frame: &StereoFrame,
    sim: Option<(&DisparityMap, &DepthMap)>,
    depth_png_scale: f64,
) -> Result<FrameEntry> {
    let stem = format!("{:06}", frame.frame_index);
    let name = |suffix: &str| format!("{stem}_{suffix}");
    let path = |n: &str| -> PathBuf { dir.join(n) };
    let entry = FrameEntry {
        frame_index: frame.frame_index,
        mode: frame.mode,
        left: name("left.png"),
        right: name("right.png"),
        gt_depth: name("gt_depth.pfm"),
        gt_depth_png: name("gt_depth.png"),
        sim_depth: sim.map(|_| name("sim_depth.pfm")),
        disparity: sim.map(|_| name("disparity.pfm")),
    };
    write_image_png(&frame.left, &path(&entry.left))?;
    write_image_png(&frame.right, &path(&entry.right))?;
    write_pfm(&frame.gt_depth, &path(&entry.gt_depth))?;
    write_depth_png16(&frame.gt_depth, &path(&entry.gt_depth_png), depth_png_scale)?;
    if let (Some((disp, depth)), Some(d), Some(z)) = (sim, &entry.disparity, &entry.sim_depth) {
        write_pfm(disp, &path(d))?;
        write_pfm(depth, &path(z))?;
    }
    Ok(entry)
}
