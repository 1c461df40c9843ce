//! Intensity images with values in `[0, 1]`, stored row-major from the
//! top-left corner.

use crate::error::{Error, Result};

const LUMA_WEIGHTS: [f32; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Clone, PartialEq)]
pub struct ImageGray {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl ImageGray {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Invalid(format!(
                "gray image data has {} values, expected {}x{}={}",
                data.len(),
                width,
                height,
                width * height
            )));
        }
        check_unit_range(&data, width, 1)?;
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self {
            width,
            height,
            data: vec![value.clamp(0.0, 1.0); width * height],
        }
    }

    /// Builds an image from a generator; outputs are clamped to `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(clamp_unit(f(x, y)));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    /// Wraps data already known to satisfy the invariants.
    pub(crate) fn from_raw(width: usize, height: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRgb {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl ImageRgb {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != 3 * width * height {
            return Err(Error::Invalid(format!(
                "rgb image data has {} values, expected 3x{}x{}={}",
                data.len(),
                width,
                height,
                3 * width * height
            )));
        }
        check_unit_range(&data, width, 3)?;
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let px = rgb.map(clamp_unit);
        let mut data = Vec::with_capacity(3 * width * height);
        for _ in 0..width * height {
            data.extend_from_slice(&px);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub(crate) fn from_raw(width: usize, height: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), 3 * width * height);
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }
}

/// A rendered or loaded view: single-channel IR or three-channel color.
#[derive(Debug, Clone, PartialEq)]
pub enum StereoImage {
    Gray(ImageGray),
    Rgb(ImageRgb),
}

impl StereoImage {
    pub fn dims(&self) -> (usize, usize) {
        match self {
            StereoImage::Gray(g) => g.dims(),
            StereoImage::Rgb(c) => c.dims(),
        }
    }

    /// The single-channel image the matcher consumes.
    pub fn to_gray(&self) -> ImageGray {
        match self {
            StereoImage::Gray(g) => g.clone(),
            StereoImage::Rgb(c) => to_grayscale(c),
        }
    }
}

/// Luminance with the Rec. 601 weights `0.299 R + 0.587 G + 0.114 B`.
pub fn to_grayscale(img: &ImageRgb) -> ImageGray {
    let data = img
        .data
        .chunks_exact(3)
        .map(|p| clamp_unit(luma(p[0], p[1], p[2])))
        .collect();
    ImageGray::from_raw(img.width, img.height, data)
}

#[inline]
pub(crate) fn luma(r: f32, g: f32, b: f32) -> f32 {
    LUMA_WEIGHTS[0] * r + LUMA_WEIGHTS[1] * g + LUMA_WEIGHTS[2] * b
}

#[inline]
pub(crate) fn clamp_unit(v: f32) -> f32 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

fn check_unit_range(data: &[f32], width: usize, channels: usize) -> Result<()> {
    if let Some(i) = data
        .iter()
        .position(|v| !v.is_finite() || !(0.0..=1.0).contains(v))
    {
        let px = i / channels;
        let (x, y) = if width == 0 {
            (0, 0)
        } else {
            (px % width, px / width)
        };
        return Err(Error::InvalidPixel {
            x,
            y,
            reason: format!("intensity {} outside [0, 1]", data[i]),
        });
    }
    Ok(())
}
