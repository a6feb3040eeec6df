use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{check_finite, DatasetSpec, Domain, DomainPair, ImageDims, LabeledSet};
use crate::error::{dimension, validation, Result};
use crate::rng::{derive_seed, stream};
use crate::tensor::Tensor;

/// Two interleaved half circles. Class 0 is the upper arc
/// `(cos t, sin t)`, class 1 the lower arc `(1 − cos t, ½ − sin t)`, with `t`
/// evenly spaced over `[0, π]`. Class 0 rows come first.
pub fn gen_two_moons(n: usize, noise: f64, seed: u64) -> Result<LabeledSet> {
    if n < 2 {
        return Err(validation("n", format!("two moons need n ≥ 2, got {n}")));
    }
    if !(noise >= 0.0) || !noise.is_finite() {
        return Err(validation("noise", format!("{noise} must be a finite nonnegative std")));
    }
    let n0 = n / 2;
    let n1 = n - n0;
    let spaced = |m: usize, i: usize| {
        if m == 1 {
            0.0
        } else {
            core::f64::consts::PI * i as f64 / (m - 1) as f64
        }
    };
    let mut rng = stream(seed, 0);
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n0 {
        let t = spaced(n0, i);
        data.extend([libm::cos(t), libm::sin(t)]);
        labels.push(0);
    }
    for i in 0..n1 {
        let t = spaced(n1, i);
        data.extend([1.0 - libm::cos(t), 0.5 - libm::sin(t)]);
        labels.push(1);
    }
    if noise > 0.0 {
        for v in &mut data {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += noise * z;
        }
    }
    LabeledSet::new(Tensor::matrix(n, 2, data)?, labels, 2, Domain::Source)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Transform {
    /// Counter-clockwise rotation in the plane of the first two features.
    Rotate { degrees: f64 },
    Translate { offset: Vec<f64> },
    Scale { factor: f64 },
}

/// Applies a covariate shift to the inputs; labels are untouched.
pub fn shift_domain(set: &LabeledSet, transform: &Transform) -> Result<LabeledSet> {
    let d = set.features();
    let mut inputs = set.inputs().clone();
    match transform {
        Transform::Rotate { degrees } => {
            check_finite("degrees", *degrees)?;
            if d < 2 {
                return Err(dimension("rotate", format!("needs ≥ 2 features, set has {d}")));
            }
            let a = degrees.to_radians();
            let (s, c) = (libm::sin(a), libm::cos(a));
            for row in inputs.data_mut().chunks_exact_mut(d) {
                let (x, y) = (row[0], row[1]);
                row[0] = c * x - s * y;
                row[1] = s * x + c * y;
            }
        }
        Transform::Translate { offset } => {
            if offset.len() != d {
                return Err(dimension(
                    "translate",
                    format!("offset has {} entries, set has {d} features", offset.len()),
                ));
            }
            for &o in offset {
                check_finite("offset", o)?;
            }
            for row in inputs.data_mut().chunks_exact_mut(d) {
                for (v, o) in row.iter_mut().zip(offset) {
                    *v += o;
                }
            }
        }
        Transform::Scale { factor } => {
            check_finite("factor", *factor)?;
            for v in inputs.data_mut() {
                *v *= factor;
            }
        }
    }
    Ok(set.clone().map_inputs(inputs))
}

fn gen_blobs(means: &[Vec<f64>], n_per_class: usize, std: f64, seed: u64, domain: Domain) -> Result<LabeledSet> {
    let k = means.len();
    let d = means[0].len();
    let mut rng = stream(seed, 0);
    let mut data = Vec::with_capacity(k * n_per_class * d);
    let mut labels = Vec::with_capacity(k * n_per_class);
    for (class, mean) in means.iter().enumerate() {
        for _ in 0..n_per_class {
            for &m in mean {
                let z: f64 = StandardNormal.sample(&mut rng);
                data.push(m + std * z);
            }
            labels.push(class);
        }
    }
    LabeledSet::new(Tensor::matrix(k * n_per_class, d, data)?, labels, k, domain)
}

/// Gaussian clusters around `source_means`; the target clusters sit at
/// `mean + offset` with the same spread.
pub fn gen_blobs_shift(
    classes: usize,
    n_per_class: usize,
    source_means: &[Vec<f64>],
    offset: &[f64],
    std: f64,
    seed: u64,
) -> Result<DomainPair> {
    if classes < 2 {
        return Err(validation("classes", "blobs need K ≥ 2"));
    }
    if n_per_class == 0 {
        return Err(validation("n_per_class", "must be at least 1"));
    }
    if !(std >= 0.0) || !std.is_finite() {
        return Err(validation("std", format!("{std} must be a finite nonnegative std")));
    }
    if source_means.len() != classes {
        return Err(validation(
            "source_means",
            format!("{} means for K = {classes}", source_means.len()),
        ));
    }
    let d = offset.len();
    if d == 0 || source_means.iter().any(|m| m.len() != d) {
        return Err(dimension("blobs", "every mean and the offset need the same length"));
    }
    for v in source_means.iter().flatten().chain(offset) {
        check_finite("means", *v)?;
    }
    let target_means: Vec<Vec<f64>> = source_means
        .iter()
        .map(|m| m.iter().zip(offset).map(|(a, b)| a + b).collect())
        .collect();
    let src = gen_blobs(source_means, n_per_class, std, derive_seed(seed, 0), Domain::Source)?;
    let tgt = gen_blobs(&target_means, n_per_class, std, derive_seed(seed, 1), Domain::Target)?;
    let descriptor = DatasetSpec::Blobs {
        classes,
        n_per_class,
        std,
        offset: offset.to_vec(),
        means: Some(source_means.to_vec()),
        radius: super::default_radius(),
        seed,
    };
    DomainPair::new(src, tgt, descriptor)
}

/// Rendering parameters for one glyph domain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlyphStyle {
    /// Stroke value.
    pub intensity: f64,
    pub background: f64,
    /// Std of additive pixel noise.
    pub noise: f64,
}

pub const GLYPH_CLASSES: usize = 6;

/// Distance-style test for glyph `class` at unit coordinates `(u, v)`.
fn on_stroke(class: usize, u: f64, v: f64, w: f64) -> bool {
    let (du, dv) = (u - 0.5, v - 0.5);
    match class {
        0 => du.abs() < w && dv.abs() < 0.35,
        1 => dv.abs() < w && du.abs() < 0.35,
        2 => (libm::sqrt(du * du + dv * dv) - 0.3).abs() < w,
        3 => (du - dv).abs() < w * core::f64::consts::SQRT_2 && du.abs() < 0.35,
        4 => (du.abs() < w && dv.abs() < 0.35) || (dv.abs() < w && du.abs() < 0.35),
        _ => {
            let edge = du.abs().max(dv.abs());
            (edge - 0.3).abs() < w
        }
    }
}

/// Small single-channel glyph images (bars, ring, diagonal, cross, box),
/// jittered by up to one pixel.
pub fn gen_glyphs(classes: usize, n_per_class: usize, size: usize, style: &GlyphStyle, seed: u64) -> Result<LabeledSet> {
    if !(2..=GLYPH_CLASSES).contains(&classes) {
        return Err(validation("classes", format!("glyphs support 2..={GLYPH_CLASSES} classes")));
    }
    if size < 8 {
        return Err(validation("size", "glyphs need at least 8×8 pixels"));
    }
    if n_per_class == 0 {
        return Err(validation("n_per_class", "must be at least 1"));
    }
    for v in [style.intensity, style.background, style.noise] {
        check_finite("style", v)?;
    }
    if style.noise < 0.0 {
        return Err(validation("noise", "must be nonnegative"));
    }
    let mut rng = stream(seed, 0);
    let px = size * size;
    let n = classes * n_per_class;
    let mut data = Vec::with_capacity(n * px);
    let mut labels = Vec::with_capacity(n);
    let s = size as f64;
    for class in 0..classes {
        for _ in 0..n_per_class {
            let (jr, jc) = (rng.random_range(-1i32..=1), rng.random_range(-1i32..=1));
            let width = rng.random_range(0.7..1.3) / s;
            let mut img = vec![style.background; px];
            for r in 0..size {
                for c in 0..size {
                    let u = (c as f64 + 0.5 - jc as f64) / s;
                    let v = (r as f64 + 0.5 - jr as f64) / s;
                    if on_stroke(class, u, v, width) {
                        img[r * size + c] = style.intensity;
                    }
                }
            }
            if style.noise > 0.0 {
                for p in &mut img {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *p += style.noise * z;
                }
            }
            data.extend(img);
            labels.push(class);
        }
    }
    LabeledSet::new(Tensor::matrix(n, px, data)?, labels, classes, Domain::Source)?.with_image(ImageDims {
        channels: 1,
        height: size,
        width: size,
    })
}
