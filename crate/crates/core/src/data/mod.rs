//! Synthetic domain pairs, dual-domain batching and raster augmentation.
//!
//! Training code receives a [`LabeledSet`] for the source and an
//! [`UnlabeledSet`] for the target. The target labels stay inside
//! [`DomainPair`] and can only be consulted through [`GroundTruth`], which
//! scores predictions without handing out the labels themselves.
//!
//! ```compile_fail
//! # use uda_core::data::DatasetSpec;
//! let pair = DatasetSpec::default_two_moons(1).generate().unwrap();
//! let peek = &pair.target_labels; // private field
//! ```
//!
//! ```compile_fail
//! # use uda_core::data::DatasetSpec;
//! let pair = DatasetSpec::default_two_moons(1).generate().unwrap();
//! let peek = pair.target().labels(); // unlabeled sets have no label view
//! ```

mod augment;
mod batch;
mod synth;

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{validation, Result};
use crate::tensor::Tensor;

pub use augment::{augment, augment_with_rng, eval_pipeline, output_dims, AugmentOp, Raster};
pub use batch::{plan_batches, BatchIndices, BatchPlan, BatchStrategy};
pub use synth::{gen_blobs_shift, gen_glyphs, gen_two_moons, shift_domain, GlyphStyle, Transform};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn index(self) -> usize {
        match self {
            Domain::Source => 0,
            Domain::Target => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }
}

/// Channel-major layout of a flattened raster row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageDims {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageDims {
    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSet {
    inputs: Tensor,
    labels: Vec<usize>,
    classes: usize,
    domain: Domain,
    image: Option<ImageDims>,
}

impl LabeledSet {
    pub fn new(inputs: Tensor, labels: Vec<usize>, classes: usize, domain: Domain) -> Result<Self> {
        let (n, _) = inputs.dims2("labeled set")?;
        if labels.len() != n {
            return Err(validation(
                "labels",
                format!("{} labels for {n} inputs", labels.len()),
            ));
        }
        if classes < 2 {
            return Err(validation("classes", "need at least two classes"));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(validation("labels", format!("label {bad} not below K = {classes}")));
        }
        Ok(Self {
            inputs,
            labels,
            classes,
            domain,
            image: None,
        })
    }

    pub fn with_image(mut self, dims: ImageDims) -> Result<Self> {
        if dims.len() != self.inputs.cols() {
            return Err(crate::error::dimension(
                "labeled set",
                format!("image {dims:?} does not match {} features", self.inputs.cols()),
            ));
        }
        self.image = Some(dims);
        Ok(self)
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn image(&self) -> Option<ImageDims> {
        self.image
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> usize {
        self.inputs.cols()
    }

    pub(crate) fn map_inputs(mut self, inputs: Tensor) -> Self {
        self.inputs = inputs;
        self
    }

    pub(crate) fn relabel_domain(mut self, domain: Domain) -> Self {
        self.domain = domain;
        self
    }

    fn split_labels(self) -> (UnlabeledSet, Vec<usize>) {
        let set = UnlabeledSet {
            inputs: self.inputs,
            classes: self.classes,
            domain: self.domain,
            image: self.image,
        };
        (set, self.labels)
    }
}

/// Inputs only. This is all the training loop ever sees of the target domain.
#[derive(Clone, Debug, PartialEq)]
pub struct UnlabeledSet {
    inputs: Tensor,
    classes: usize,
    domain: Domain,
    image: Option<ImageDims>,
}

impl UnlabeledSet {
    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn image(&self) -> Option<ImageDims> {
        self.image
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn features(&self) -> usize {
        self.inputs.cols()
    }
}

/// Scores predictions against the hidden target labels.
#[derive(Clone, Copy, Debug)]
pub struct GroundTruth<'a> {
    labels: &'a [usize],
}

impl GroundTruth<'_> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Percent of `predictions` that match.
    pub fn accuracy(&self, predictions: &[usize]) -> Result<f64> {
        crate::eval::accuracy(predictions, self.labels)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DomainPair {
    source: LabeledSet,
    target: UnlabeledSet,
    target_labels: Vec<usize>,
    descriptor: DatasetSpec,
}

impl DomainPair {
    pub fn new(source: LabeledSet, target: LabeledSet, descriptor: DatasetSpec) -> Result<Self> {
        if source.classes() != target.classes() {
            return Err(validation(
                "classes",
                format!("source K = {} but target K = {}", source.classes(), target.classes()),
            ));
        }
        if source.features() != target.features() || source.image() != target.image() {
            return Err(crate::error::dimension(
                "domain pair",
                format!("source has {} features, target {}", source.features(), target.features()),
            ));
        }
        if source.is_empty() || target.is_empty() {
            return Err(validation("n", "both domains need at least one sample"));
        }
        let source = source.relabel_domain(Domain::Source);
        let (target, target_labels) = target.relabel_domain(Domain::Target).split_labels();
        Ok(Self {
            source,
            target,
            target_labels,
            descriptor,
        })
    }

    pub fn source(&self) -> &LabeledSet {
        &self.source
    }

    pub fn target(&self) -> &UnlabeledSet {
        &self.target
    }

    pub fn classes(&self) -> usize {
        self.source.classes()
    }

    pub fn descriptor(&self) -> &DatasetSpec {
        &self.descriptor
    }

    pub fn ground_truth(&self) -> GroundTruth<'_> {
        GroundTruth {
            labels: &self.target_labels,
        }
    }

    /// Every sample as `(domain, label, features)`, source first. Meant for
    /// dataset caches, not for training.
    pub fn storage_rows(&self) -> impl Iterator<Item = (Domain, usize, &[f64])> + '_ {
        let src = self
            .source
            .labels()
            .iter()
            .enumerate()
            .map(|(i, &y)| (Domain::Source, y, self.source.inputs().row(i)));
        let tgt = self
            .target_labels
            .iter()
            .enumerate()
            .map(|(i, &y)| (Domain::Target, y, self.target.inputs().row(i)));
        src.chain(tgt)
    }
}

fn default_rotation() -> f64 {
    30.0
}
pub(crate) fn default_radius() -> f64 {
    3.0
}

/// Generator name plus parameters; enough to rebuild a pair bit for bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Two moons per domain, the target rotated about the data centre.
    TwoMoons {
        n: usize,
        noise: f64,
        #[serde(default = "default_rotation")]
        rotation_deg: f64,
        seed: u64,
    },
    /// Gaussian blobs; the target is shifted by `offset`. Without explicit
    /// `means` the class means sit evenly on a circle of `radius` in the
    /// first two coordinates.
    Blobs {
        classes: usize,
        n_per_class: usize,
        std: f64,
        offset: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        means: Option<Vec<Vec<f64>>>,
        #[serde(default = "default_radius")]
        radius: f64,
        seed: u64,
    },
    /// Procedural glyph rasters; the target has lower contrast and more noise.
    Glyphs {
        classes: usize,
        n_per_class: usize,
        size: usize,
        source: GlyphStyle,
        target: GlyphStyle,
        seed: u64,
    },
}

impl DatasetSpec {
    pub fn default_two_moons(seed: u64) -> Self {
        DatasetSpec::TwoMoons {
            n: 500,
            noise: 0.1,
            rotation_deg: default_rotation(),
            seed,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DatasetSpec::TwoMoons { .. } => "two_moons",
            DatasetSpec::Blobs { .. } => "blobs",
            DatasetSpec::Glyphs { .. } => "glyphs",
        }
    }

    pub fn generate(&self) -> Result<DomainPair> {
        use crate::rng::derive_seed;
        match *self {
            DatasetSpec::TwoMoons {
                n,
                noise,
                rotation_deg,
                seed,
            } => {
                let centre = Transform::Translate {
                    offset: alloc::vec![-0.5, -0.25],
                };
                let src = gen_two_moons(n, noise, derive_seed(seed, 0))?;
                let src = shift_domain(&src, &centre)?;
                let tgt = gen_two_moons(n, noise, derive_seed(seed, 1))?;
                let tgt = shift_domain(&tgt, &centre)?;
                let tgt = shift_domain(
                    &tgt,
                    &Transform::Rotate {
                        degrees: rotation_deg,
                    },
                )?;
                DomainPair::new(src, tgt, self.clone())
            }
            DatasetSpec::Blobs {
                classes,
                n_per_class,
                std,
                ref offset,
                ref means,
                radius,
                seed,
            } => {
                let dim = offset.len();
                let means = match means {
                    Some(m) => m.clone(),
                    None => {
                        if dim < 2 {
                            return Err(validation("offset", "circle means need at least two dimensions"));
                        }
                        if !(radius.is_finite() && radius > 0.0) {
                            return Err(validation("radius", "must be positive"));
                        }
                        (0..classes)
                            .map(|k| {
                                let a = 2.0 * core::f64::consts::PI * k as f64 / classes.max(1) as f64;
                                let mut m = alloc::vec![0.0; dim];
                                m[0] = radius * libm::cos(a);
                                m[1] = radius * libm::sin(a);
                                m
                            })
                            .collect()
                    }
                };
                let pair = gen_blobs_shift(classes, n_per_class, &means, offset, std, seed)?;
                Ok(DomainPair {
                    descriptor: self.clone(),
                    ..pair
                })
            }
            DatasetSpec::Glyphs {
                classes,
                n_per_class,
                size,
                source,
                target,
                seed,
            } => {
                let src = gen_glyphs(classes, n_per_class, size, &source, derive_seed(seed, 0))?;
                let tgt = gen_glyphs(classes, n_per_class, size, &target, derive_seed(seed, 1))?;
                DomainPair::new(src, tgt, self.clone())
            }
        }
    }
}

pub(crate) fn check_finite(field: &'static str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(validation(field, format!("{v} is not finite")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn pair_seals_target_labels() {
        let pair = DatasetSpec::default_two_moons(4).generate().unwrap();
        assert_eq!(pair.source().len(), 500);
        assert_eq!(pair.target().len(), 500);
        assert_eq!(pair.target().domain(), Domain::Target);
        let gt = pair.ground_truth();
        assert_eq!(gt.len(), 500);
        // Class 0 comes first, so a half-and-half guess scores 100.
        let guess: Vec<usize> = (0..500).map(|i| usize::from(i >= 250)).collect();
        assert_eq!(gt.accuracy(&guess).unwrap(), 100.0);
        assert_eq!(pair.storage_rows().count(), 1000);
    }

    #[test]
    fn generation_is_pure() {
        let spec = DatasetSpec::Blobs {
            classes: 3,
            n_per_class: 7,
            std: 0.3,
            offset: vec![1.0, -1.0],
            means: None,
            radius: 3.0,
            seed: 9,
        };
        assert_eq!(spec.generate().unwrap(), spec.generate().unwrap());
    }

    #[test]
    fn mismatched_pair_rejected() {
        let a = LabeledSet::new(Tensor::zeros(&[2, 2]), vec![0, 1], 2, Domain::Source).unwrap();
        let b = LabeledSet::new(Tensor::zeros(&[2, 3]), vec![0, 1], 2, Domain::Target).unwrap();
        assert!(DomainPair::new(a.clone(), b, DatasetSpec::default_two_moons(0)).is_err());
        let c = LabeledSet::new(Tensor::zeros(&[2, 2]), vec![0, 2], 3, Domain::Target).unwrap();
        assert!(DomainPair::new(a, c, DatasetSpec::default_two_moons(0)).is_err());
    }

    #[test]
    fn label_range_checked() {
        assert!(LabeledSet::new(Tensor::zeros(&[2, 2]), vec![0, 2], 2, Domain::Source).is_err());
        assert!(LabeledSet::new(Tensor::zeros(&[2, 2]), vec![0], 2, Domain::Source).is_err());
    }
}
