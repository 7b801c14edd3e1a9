//! Uniform access to classifiers: probabilities, penultimate features and
//! saliency maps, whether the model runs in-process or behind the framed wire
//! protocol.
//!
//! [`Bridge`] is the engine-side session. It resizes inputs to the backend's
//! declared resolution, batches requests, checks every response against the
//! handshake, max-normalises saliency and upsamples it back to the caller's
//! image resolution.

pub mod protocol;
mod reference;
mod remote;
mod train;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Grid, ImageTensor, SaliencyMap, Shape};

pub use reference::{GradTarget, ReferenceBackend, ReferenceConfig};
pub use remote::{serve, RemoteBackend};
pub use train::{
    cross_entropy_gradient, cross_entropy_loss, fit_linear_head, train_linear_head, HeadHyper,
    TrainReport,
};

pub const DEFAULT_BATCH_SIZE: usize = 32;
pub const DEFAULT_TIMEOUT_SECS: u64 = 120;
pub const PROBABILITY_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Resnet,
    Vit,
    Deit,
    ClipResnet,
    ClipVit,
    RobustResnet,
    Simclr,
    Reference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub name: String,
    pub family: Family,
    pub parameter_count: u64,
    pub input_size: usize,
    /// Free-form model facts: patch size, adversarial ε, pretraining set,
    /// `input_dtype = "u8"` when the model needs byte-quantised input.
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl BackendDescriptor {
    pub fn wants_byte_input(&self) -> bool {
        self.metadata.get("input_dtype").map(String::as_str) == Some("u8")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Capabilities {
    pub predict: bool,
    pub features: bool,
    pub saliency: bool,
    /// The backend accepts a replacement linear head (`set_head`).
    pub train_head: bool,
}

impl Capabilities {
    pub fn all() -> Self {
        Self {
            predict: true,
            features: true,
            saliency: true,
            train_head: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Handshake {
    pub descriptor: BackendDescriptor,
    pub capabilities: Capabilities,
    pub n_classes: usize,
    pub feature_dim: usize,
    #[serde(default)]
    pub concurrent: bool,
}

impl Handshake {
    pub fn validate(&self) -> Result<()> {
        if self.descriptor.input_size < 8 {
            return Err(Error::Protocol(format!(
                "backend input_size must be >= 8, got {}",
                self.descriptor.input_size
            )));
        }
        if self.n_classes < 1 {
            return Err(Error::Protocol("backend declares zero classes".into()));
        }
        if self.capabilities.features && self.feature_dim == 0 {
            return Err(Error::Protocol("backend declares zero feature dimension".into()));
        }
        Ok(())
    }
}

/// Linear classification head over penultimate features; `weights` is
/// row-major `[n_classes][feature_dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead<T> {
    pub n_classes: usize,
    pub feature_dim: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> LinearHead<T> {
    pub fn zeros(n_classes: usize, feature_dim: usize) -> Self {
        Self {
            n_classes,
            feature_dim,
            weights: vec![T::zero(); n_classes * feature_dim],
            bias: vec![T::zero(); n_classes],
        }
    }

    pub fn logits(&self, features: &[T]) -> Vec<T> {
        (0..self.n_classes)
            .map(|c| {
                let row = &self.weights[c * self.feature_dim..(c + 1) * self.feature_dim];
                row.iter().zip(features).map(|(w, f)| *w * *f).sum::<T>() + self.bias[c]
            })
            .collect()
    }

    pub fn probs(&self, features: &[T]) -> Vec<T> {
        softmax(&self.logits(features))
    }

    pub fn convert<U: Scalar>(&self) -> LinearHead<U> {
        LinearHead {
            n_classes: self.n_classes,
            feature_dim: self.feature_dim,
            weights: self.weights.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
            bias: self.bias.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
        }
    }
}

pub fn softmax<T: Scalar>(z: &[T]) -> Vec<T> {
    let m = z.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = z.iter().map(|v| (*v - m).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// A classifier reachable through the bridge.
///
/// Implementations receive images already resized to the declared
/// `input_size` and may return saliency at any resolution; normalisation and
/// upsampling happen in [`Bridge`].
pub trait Backend<T: Scalar>: Send {
    fn handshake(&self) -> &Handshake;

    fn predict(&mut self, images: &[&ImageTensor<T>]) -> Result<Vec<Vec<T>>>;

    fn features(&mut self, images: &[&ImageTensor<T>]) -> Result<Vec<Vec<T>>>;

    fn feature_saliency(&mut self, _images: &[&ImageTensor<T>], _feature: usize) -> Result<Vec<Grid<T>>> {
        Err(Error::MissingCapability("saliency"))
    }

    fn class_saliency(&mut self, _images: &[&ImageTensor<T>], _class: usize) -> Result<Vec<Grid<T>>> {
        Err(Error::MissingCapability("saliency"))
    }

    fn set_head(&mut self, _head: &LinearHead<T>) -> Result<()> {
        Err(Error::MissingCapability("train_head"))
    }
}

impl<T: Scalar, B: Backend<T> + ?Sized> Backend<T> for Box<B> {
    fn handshake(&self) -> &Handshake {
        (**self).handshake()
    }
    fn predict(&mut self, images: &[&ImageTensor<T>]) -> Result<Vec<Vec<T>>> {
        (**self).predict(images)
    }
    fn features(&mut self, images: &[&ImageTensor<T>]) -> Result<Vec<Vec<T>>> {
        (**self).features(images)
    }
    fn feature_saliency(&mut self, images: &[&ImageTensor<T>], feature: usize) -> Result<Vec<Grid<T>>> {
        (**self).feature_saliency(images, feature)
    }
    fn class_saliency(&mut self, images: &[&ImageTensor<T>], class: usize) -> Result<Vec<Grid<T>>> {
        (**self).class_saliency(images, class)
    }
    fn set_head(&mut self, head: &LinearHead<T>) -> Result<()> {
        (**self).set_head(head)
    }
}

/// Per-image probability vectors, in request order.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionBatch<T> {
    pub probs: Vec<Vec<T>>,
}

impl<T: Scalar> PredictionBatch<T> {
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Predicted class per image (ties resolve to the lowest index).
    pub fn argmax(&self) -> Vec<usize> {
        self.probs
            .iter()
            .map(|p| {
                let mut best = 0;
                for (i, v) in p.iter().enumerate() {
                    if *v > p[best] {
                        best = i;
                    }
                }
                best
            })
            .collect()
    }
}

/// Per-image penultimate feature vectors, in request order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBatch<T> {
    pub dim: usize,
    pub features: Vec<Vec<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BridgeOptions {
    pub batch_size: usize,
    /// Run a probe batch twice at connect time and require identical output.
    pub verify_determinism: bool,
}

impl Default for BridgeOptions {
    fn default() -> Self {
        Self {
            batch_size: DEFAULT_BATCH_SIZE,
            verify_determinism: true,
        }
    }
}

/// Engine-side session over one backend connection. One request is in flight
/// at a time.
pub struct Bridge<T: Scalar> {
    backend: Box<dyn Backend<T>>,
    info: Handshake,
    opts: BridgeOptions,
}

impl<T: Scalar> fmt::Debug for Bridge<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Bridge")
            .field("backend", &self.info.descriptor.name)
            .field("opts", &self.opts)
            .finish()
    }
}

impl<T: Scalar> Bridge<T> {
    pub fn connect(backend: impl Backend<T> + 'static, opts: BridgeOptions) -> Result<Self> {
        Self::connect_boxed(Box::new(backend), opts)
    }

    pub fn connect_boxed(backend: Box<dyn Backend<T>>, opts: BridgeOptions) -> Result<Self> {
        if opts.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        let info = backend.handshake().clone();
        info.validate()?;
        let mut bridge = Self { backend, info, opts };
        if opts.verify_determinism {
            bridge.verify_determinism()?;
        }
        Ok(bridge)
    }

    pub fn handshake(&self) -> &Handshake {
        &self.info
    }

    pub fn descriptor(&self) -> &BackendDescriptor {
        &self.info.descriptor
    }

    pub fn n_classes(&self) -> usize {
        self.info.n_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.info.feature_dim
    }

    pub fn options(&self) -> BridgeOptions {
        self.opts
    }

    pub fn backend_mut(&mut self) -> &mut dyn Backend<T> {
        self.backend.as_mut()
    }

    fn input_shape(&self) -> Shape {
        let s = self.info.descriptor.input_size;
        Shape::new(s, s)
    }

    fn prepare(&self, images: &[&ImageTensor<T>]) -> Vec<ImageTensor<T>> {
        let target = self.input_shape();
        let quantize = self.info.descriptor.wants_byte_input();
        images
            .iter()
            .map(|img| {
                let resized = img.resize_bilinear(target);
                if quantize {
                    resized.quantize_u8()
                } else {
                    resized
                }
            })
            .collect()
    }

    /// Splits `images` into batches, resizes them and forwards each batch.
    fn dispatch<R>(
        &mut self,
        images: &[&ImageTensor<T>],
        mut call: impl FnMut(&mut dyn Backend<T>, &[&ImageTensor<T>]) -> Result<Vec<R>>,
    ) -> Result<Vec<R>> {
        if images.is_empty() {
            return Err(Error::InvalidArgument("empty image batch".into()));
        }
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(self.opts.batch_size) {
            let prepared = self.prepare(chunk);
            let refs: Vec<&ImageTensor<T>> = prepared.iter().collect();
            let got = call(self.backend.as_mut(), &refs)?;
            if got.len() != chunk.len() {
                return Err(Error::Protocol(format!(
                    "backend returned {} results for {} images",
                    got.len(),
                    chunk.len()
                )));
            }
            out.extend(got);
        }
        Ok(out)
    }

    fn require(&self, have: bool, name: &'static str) -> Result<()> {
        if have {
            Ok(())
        } else {
            Err(Error::MissingCapability(name))
        }
    }

    pub fn predict_probs(&mut self, images: &[&ImageTensor<T>]) -> Result<PredictionBatch<T>> {
        self.require(self.info.capabilities.predict, "predict")?;
        let n_classes = self.info.n_classes;
        let probs = self.dispatch(images, |b, batch| b.predict(batch))?;
        for (i, p) in probs.iter().enumerate() {
            if p.len() != n_classes {
                return Err(Error::Protocol(format!(
                    "probability vector {i} has {} entries, expected {n_classes}",
                    p.len()
                )));
            }
            let sum: f64 = p.iter().map(|v| v.to_f64_lossy()).sum();
            if p.iter().any(|v| !(*v >= T::zero())) || (sum - 1.0).abs() > PROBABILITY_TOLERANCE {
                return Err(Error::Protocol(format!(
                    "probability vector {i} is not a distribution (sum {sum})"
                )));
            }
        }
        Ok(PredictionBatch { probs })
    }

    pub fn get_features(&mut self, images: &[&ImageTensor<T>]) -> Result<FeatureBatch<T>> {
        self.require(self.info.capabilities.features, "features")?;
        let dim = self.info.feature_dim;
        let features = self.dispatch(images, |b, batch| b.features(batch))?;
        if let Some((i, f)) = features.iter().enumerate().find(|(_, f)| f.len() != dim) {
            return Err(Error::Protocol(format!(
                "feature vector {i} has dimension {}, expected {dim}",
                f.len()
            )));
        }
        Ok(FeatureBatch { dim, features })
    }

    pub fn get_feature_saliency(
        &mut self,
        images: &[&ImageTensor<T>],
        feature_index: usize,
    ) -> Result<Vec<SaliencyMap<T>>> {
        self.require(self.info.capabilities.saliency, "saliency")?;
        if feature_index >= self.info.feature_dim {
            return Err(Error::InvalidArgument(format!(
                "feature index {feature_index} out of range for dimension {}",
                self.info.feature_dim
            )));
        }
        let raw = self.dispatch(images, |b, batch| b.feature_saliency(batch, feature_index))?;
        Ok(finish_saliency(images, raw))
    }

    pub fn get_class_saliency(
        &mut self,
        images: &[&ImageTensor<T>],
        class_id: usize,
    ) -> Result<Vec<SaliencyMap<T>>> {
        self.require(self.info.capabilities.saliency, "saliency")?;
        if class_id >= self.info.n_classes {
            return Err(Error::InvalidArgument(format!(
                "class {class_id} out of range for {} classes",
                self.info.n_classes
            )));
        }
        let raw = self.dispatch(images, |b, batch| b.class_saliency(batch, class_id))?;
        Ok(finish_saliency(images, raw))
    }

    pub fn set_head(&mut self, head: &LinearHead<T>) -> Result<()> {
        self.require(self.info.capabilities.train_head, "train_head")?;
        if head.n_classes != self.info.n_classes || head.feature_dim != self.info.feature_dim {
            return Err(Error::shape(
                Some("linear head".into()),
                format!("{}x{}", self.info.n_classes, self.info.feature_dim),
                format!("{}x{}", head.n_classes, head.feature_dim),
            ));
        }
        self.backend.set_head(head)
    }

    /// Sends a fixed probe batch twice and requires bit-identical answers.
    pub fn verify_determinism(&mut self) -> Result<()> {
        let shape = self.input_shape();
        let probe: Vec<ImageTensor<T>> = (0..2)
            .map(|k| {
                ImageTensor::from_fn(shape.height, shape.width, |y, x| {
                    let v = ((y * 31 + x * 17 + k * 7) % 97) as f64 / 96.0;
                    [T::lit(v), T::lit(1.0 - v), T::lit(0.5 * v + 0.25)]
                })
                .expect("probe image in range")
            })
            .collect();
        let refs: Vec<&ImageTensor<T>> = probe.iter().collect();
        let same = |a: &[Vec<T>], b: &[Vec<T>]| {
            a.len() == b.len()
                && a.iter().zip(b).all(|(u, v)| {
                    u.len() == v.len()
                        && u.iter().zip(v).all(|(x, y)| x.to_f64_lossy().to_bits() == y.to_f64_lossy().to_bits())
                })
        };
        if self.info.capabilities.predict {
            let a = self.backend.predict(&refs)?;
            let b = self.backend.predict(&refs)?;
            if !same(&a, &b) {
                return Err(Error::Nondeterministic("predict probe differs between calls".into()));
            }
        }
        if self.info.capabilities.features {
            let a = self.backend.features(&refs)?;
            let b = self.backend.features(&refs)?;
            if !same(&a, &b) {
                return Err(Error::Nondeterministic("feature probe differs between calls".into()));
            }
        }
        Ok(())
    }
}

fn finish_saliency<T: Scalar>(images: &[&ImageTensor<T>], raw: Vec<Grid<T>>) -> Vec<SaliencyMap<T>> {
    raw.into_iter()
        .zip(images)
        .map(|(grid, img)| SaliencyMap::normalize(grid.resize_bilinear(img.shape())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_sums_to_one_and_is_shift_invariant() {
        let p = softmax(&[1.0f64, 2.0, 3.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let q = softmax(&[101.0f64, 102.0, 103.0]);
        for (a, b) in p.iter().zip(&q) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn argmax_ties_resolve_low() {
        let b = PredictionBatch { probs: vec![vec![0.5f32, 0.5], vec![0.2, 0.8]] };
        assert_eq!(b.argmax(), vec![0, 1]);
    }

    #[test]
    fn descriptor_byte_input_flag() {
        let mut d = BackendDescriptor {
            name: "x".into(),
            family: Family::Resnet,
            parameter_count: 1,
            input_size: 224,
            metadata: BTreeMap::new(),
        };
        assert!(!d.wants_byte_input());
        d.metadata.insert("input_dtype".into(), "u8".into());
        assert!(d.wants_byte_input());
        let json = serde_json::to_string(&d).unwrap();
        assert!(json.contains("\"family\":\"resnet\""));
    }
}
