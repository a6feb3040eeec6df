use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ImageDims;
use crate::error::{dimension, validation, Result};
use crate::rng::stream;

/// A channel-major image.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    pub dims: ImageDims,
    pub pixels: Vec<f64>,
}

impl Raster {
    pub fn new(dims: ImageDims, pixels: Vec<f64>) -> Result<Self> {
        if dims.len() != pixels.len() || dims.is_empty() {
            return Err(dimension(
                "raster",
                format!("{dims:?} needs {} pixels, got {}", dims.len(), pixels.len()),
            ));
        }
        Ok(Self { dims, pixels })
    }

    fn at(&self, c: usize, r: usize, col: usize) -> f64 {
        self.pixels[(c * self.dims.height + r) * self.dims.width + col]
    }

    /// Bilinear sample at continuous pixel-centre coordinates; zero outside.
    fn sample(&self, c: usize, y: f64, x: f64) -> f64 {
        let (h, w) = (self.dims.height as isize, self.dims.width as isize);
        let (y0, x0) = (libm::floor(y), libm::floor(x));
        let (fy, fx) = (y - y0, x - x0);
        let mut acc = 0.0;
        for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
            for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
                let (r, q) = (y0 as isize + dy, x0 as isize + dx);
                if wy * wx != 0.0 && (0..h).contains(&r) && (0..w).contains(&q) {
                    acc += wy * wx * self.at(c, r as usize, q as usize);
                }
            }
        }
        acc
    }

    fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Raster {
        let mut pixels = Vec::with_capacity(self.dims.channels * height * width);
        for c in 0..self.dims.channels {
            for r in top..top + height {
                for q in left..left + width {
                    pixels.push(self.at(c, r, q));
                }
            }
        }
        Raster {
            dims: ImageDims {
                channels: self.dims.channels,
                height,
                width,
            },
            pixels,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum AugmentOp {
    Normalize { mean: f64, std: f64 },
    Resize { height: usize, width: usize },
    RandomCrop { height: usize, width: usize },
    CenterCrop { height: usize, width: usize },
    HorizontalFlip { p: f64 },
    VerticalFlip { p: f64 },
    /// Uniform angle in `[-max_degrees, max_degrees]`, bilinear, zero fill.
    Rotation { max_degrees: f64 },
    /// Multiplies every pixel by a factor uniform in `[1 − b, 1 + b]`.
    ColorJitter { brightness: f64 },
}

impl AugmentOp {
    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(validation("p", format!("{p} not in [0, 1]")))
            }
        };
        match *self {
            AugmentOp::Normalize { mean, std } => {
                if !mean.is_finite() {
                    return Err(validation("mean", "must be finite"));
                }
                if !(std > 0.0) || !std.is_finite() {
                    return Err(validation("std", format!("{std} must be positive")));
                }
            }
            AugmentOp::Resize { height, width }
            | AugmentOp::RandomCrop { height, width }
            | AugmentOp::CenterCrop { height, width } => {
                if height == 0 || width == 0 {
                    return Err(validation("size", "height and width must be at least 1"));
                }
            }
            AugmentOp::HorizontalFlip { p } | AugmentOp::VerticalFlip { p } => prob(p)?,
            AugmentOp::Rotation { max_degrees } => {
                if !(max_degrees >= 0.0) || !max_degrees.is_finite() {
                    return Err(validation("max_degrees", "must be finite and nonnegative"));
                }
            }
            AugmentOp::ColorJitter { brightness } => {
                if !(0.0..1.0).contains(&brightness) {
                    return Err(validation("brightness", format!("{brightness} not in [0, 1)")));
                }
            }
        }
        Ok(())
    }

    fn output_dims(&self, dims: ImageDims) -> Result<ImageDims> {
        match *self {
            AugmentOp::Resize { height, width } => Ok(ImageDims { height, width, ..dims }),
            AugmentOp::RandomCrop { height, width } | AugmentOp::CenterCrop { height, width } => {
                if height > dims.height || width > dims.width {
                    return Err(dimension(
                        "crop",
                        format!("{height}×{width} crop of a {}×{} image", dims.height, dims.width),
                    ));
                }
                Ok(ImageDims { height, width, ..dims })
            }
            _ => Ok(dims),
        }
    }

    fn apply(&self, img: Raster, rng: &mut ChaCha8Rng) -> Result<Raster> {
        let d = img.dims;
        let out_dims = self.output_dims(d)?;
        Ok(match *self {
            AugmentOp::Normalize { mean, std } => Raster {
                dims: d,
                pixels: img.pixels.iter().map(|v| (v - mean) / std).collect(),
            },
            AugmentOp::Resize { height, width } => {
                let (sy, sx) = (d.height as f64 / height as f64, d.width as f64 / width as f64);
                let mut pixels = Vec::with_capacity(out_dims.len());
                for c in 0..d.channels {
                    for r in 0..height {
                        for q in 0..width {
                            // Half-pixel centres, clamped to the source grid.
                            let y = ((r as f64 + 0.5) * sy - 0.5).clamp(0.0, (d.height - 1) as f64);
                            let x = ((q as f64 + 0.5) * sx - 0.5).clamp(0.0, (d.width - 1) as f64);
                            pixels.push(img.sample(c, y, x));
                        }
                    }
                }
                Raster { dims: out_dims, pixels }
            }
            AugmentOp::RandomCrop { height, width } => {
                let top = rng.random_range(0..=d.height - height);
                let left = rng.random_range(0..=d.width - width);
                img.crop(top, left, height, width)
            }
            AugmentOp::CenterCrop { height, width } => {
                img.crop((d.height - height) / 2, (d.width - width) / 2, height, width)
            }
            AugmentOp::HorizontalFlip { p } => {
                if rng.random::<f64>() < p {
                    let mut pixels = img.pixels;
                    pixels.chunks_exact_mut(d.width).for_each(|row| row.reverse());
                    Raster { dims: d, pixels }
                } else {
                    img
                }
            }
            AugmentOp::VerticalFlip { p } => {
                if rng.random::<f64>() < p {
                    let plane = d.height * d.width;
                    let mut pixels = Vec::with_capacity(img.pixels.len());
                    for ch in img.pixels.chunks_exact(plane) {
                        for row in ch.chunks_exact(d.width).rev() {
                            pixels.extend_from_slice(row);
                        }
                    }
                    Raster { dims: d, pixels }
                } else {
                    img
                }
            }
            AugmentOp::Rotation { max_degrees } => {
                let angle = if max_degrees > 0.0 {
                    rng.random_range(-max_degrees..=max_degrees).to_radians()
                } else {
                    0.0
                };
                let (s, c) = (libm::sin(angle), libm::cos(angle));
                let (cy, cx) = ((d.height as f64 - 1.0) / 2.0, (d.width as f64 - 1.0) / 2.0);
                let mut pixels = vec![0.0; d.len()];
                for ch in 0..d.channels {
                    for r in 0..d.height {
                        for q in 0..d.width {
                            let (y, x) = (r as f64 - cy, q as f64 - cx);
                            // Inverse map: rotate the output coordinate back.
                            let sy = c * y - s * x + cy;
                            let sx = s * y + c * x + cx;
                            pixels[(ch * d.height + r) * d.width + q] = img.sample(ch, sy, sx);
                        }
                    }
                }
                Raster { dims: d, pixels }
            }
            AugmentOp::ColorJitter { brightness } => {
                let f = if brightness > 0.0 {
                    rng.random_range(1.0 - brightness..=1.0 + brightness)
                } else {
                    1.0
                };
                Raster {
                    dims: d,
                    pixels: img.pixels.iter().map(|v| v * f).collect(),
                }
            }
        })
    }
}

/// Applies `pipeline` in order with randomness from `seed`.
pub fn augment(img: &Raster, pipeline: &[AugmentOp], seed: u64) -> Result<Raster> {
    augment_with_rng(img, pipeline, &mut stream(seed, 0))
}

pub fn augment_with_rng(img: &Raster, pipeline: &[AugmentOp], rng: &mut ChaCha8Rng) -> Result<Raster> {
    let mut out = img.clone();
    for op in pipeline {
        op.validate()?;
        out = op.apply(out, rng)?;
    }
    Ok(out)
}

/// Shape after the pipeline runs on `dims`.
pub fn output_dims(pipeline: &[AugmentOp], dims: ImageDims) -> Result<ImageDims> {
    pipeline.iter().try_fold(dims, |d, op| {
        op.validate()?;
        op.output_dims(d)
    })
}

/// The deterministic counterpart used at evaluation time: random crops
/// become centre crops and the random perturbations are dropped.
pub fn eval_pipeline(pipeline: &[AugmentOp]) -> Vec<AugmentOp> {
    pipeline
        .iter()
        .filter_map(|op| match *op {
            AugmentOp::RandomCrop { height, width } => Some(AugmentOp::CenterCrop { height, width }),
            AugmentOp::HorizontalFlip { .. }
            | AugmentOp::VerticalFlip { .. }
            | AugmentOp::Rotation { .. }
            | AugmentOp::ColorJitter { .. } => None,
            ref other => Some(other.clone()),
        })
        .collect()
}
