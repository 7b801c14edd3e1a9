#![allow(dead_code)]

pub mod oracles;
pub mod scenarios;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use regionsense::bridge::{Backend, Handshake, LinearHead};
use regionsense::dataset::{AttributeId, Dataset, Sample};
use regionsense::tensor::{BinaryMask, Grid, ImageTensor, SaliencyMap, Shape};
use regionsense::{Error, Result};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random max-normalised 8x8 saliency map. Every other fixture is quantised
/// to eighths so thresholds tie.
pub fn random_saliency(rng: &mut ChaCha8Rng, case: usize) -> SaliencyMap<f64> {
    let n = 64;
    let mut data: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    if case.is_multiple_of(2) {
        for v in data.iter_mut() {
            *v = (*v * 8.0).floor() / 8.0;
        }
    }
    if case % 7 == 3 {
        for v in data.iter_mut().take(20) {
            *v = 0.0;
        }
    }
    let peak = rng.random_range(0..n);
    data[peak] = 1.0;
    SaliencyMap::from_normalized(8, 8, data).unwrap()
}

/// Random nonempty 8x8 mask with a random fill rate.
pub fn random_mask(rng: &mut ChaCha8Rng, shape: Shape) -> BinaryMask {
    let p: f64 = rng.random_range(0.05..0.95);
    let mut data: Vec<bool> = (0..shape.pixels()).map(|_| rng.random::<f64>() < p).collect();
    let i = rng.random_range(0..data.len());
    data[i] = true;
    BinaryMask::new(shape.height, shape.width, data).unwrap()
}

pub fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> ImageTensor<f64> {
    let data = (0..h * w * 3).map(|_| rng.random::<f64>()).collect();
    ImageTensor::new(h, w, data).unwrap()
}

/// Copy of `s` with `attr` set and its mask replaced by `mask`.
pub fn with_attribute<T: regionsense::Scalar>(s: &Sample<T>, attr: AttributeId, mask: BinaryMask) -> Sample<T> {
    let mut out = s.clone();
    out.attributes.insert(attr);
    out.attribute_masks.insert(attr, Arc::new(mask));
    out
}

/// Copy of `s` with every attribute removed.
pub fn without_attributes<T: regionsense::Scalar>(s: &Sample<T>) -> Sample<T> {
    let mut out = s.clone();
    out.attributes = Default::default();
    out.attribute_masks = BTreeMap::new();
    out
}

#[derive(Default, Debug)]
pub struct CallCounts {
    pub predict: AtomicUsize,
    pub features: AtomicUsize,
    pub saliency: AtomicUsize,
}

/// Wraps a backend, counting calls and optionally failing `predict` on one
/// numbered call.
pub struct Instrumented<B> {
    pub inner: B,
    pub counts: Arc<CallCounts>,
    pub fail_predict_on: Option<usize>,
}

impl<B> Instrumented<B> {
    pub fn new(inner: B) -> (Self, Arc<CallCounts>) {
        let counts = Arc::new(CallCounts::default());
        (
            Self {
                inner,
                counts: counts.clone(),
                fail_predict_on: None,
            },
            counts,
        )
    }
}

impl<B: Backend<f32>> Backend<f32> for Instrumented<B> {
    fn handshake(&self) -> &Handshake {
        self.inner.handshake()
    }

    fn predict(&mut self, images: &[&ImageTensor<f32>]) -> Result<Vec<Vec<f32>>> {
        let n = self.counts.predict.fetch_add(1, Ordering::SeqCst);
        if self.fail_predict_on == Some(n) {
            return Err(Error::Backend("injected fault".into()));
        }
        self.inner.predict(images)
    }

    fn features(&mut self, images: &[&ImageTensor<f32>]) -> Result<Vec<Vec<f32>>> {
        self.counts.features.fetch_add(1, Ordering::SeqCst);
        self.inner.features(images)
    }

    fn feature_saliency(&mut self, images: &[&ImageTensor<f32>], feature: usize) -> Result<Vec<Grid<f32>>> {
        self.counts.saliency.fetch_add(1, Ordering::SeqCst);
        self.inner.feature_saliency(images, feature)
    }

    fn class_saliency(&mut self, images: &[&ImageTensor<f32>], class: usize) -> Result<Vec<Grid<f32>>> {
        self.counts.saliency.fetch_add(1, Ordering::SeqCst);
        self.inner.class_saliency(images, class)
    }

    fn set_head(&mut self, head: &LinearHead<f32>) -> Result<()> {
        self.inner.set_head(head)
    }
}

pub fn dataset_from(samples: Vec<Sample<f32>>) -> Dataset<f32> {
    Dataset::from_samples(samples).unwrap()
}
