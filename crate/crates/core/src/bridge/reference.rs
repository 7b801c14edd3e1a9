//! Small analytically differentiable classifier used as a desk-scale stand-in
//! for pretrained vision models.
//!
//! Forward pass for an `S x S` image with pooling cell `c` (`U = (S/c)^2` cells):
//!
//! ```text
//! p[u]      = mean RGB of cell u                       (3-vector)
//! z[j][u]   = w[j] · p[u] + b[j]
//! h[j][u]   = softplus(z[j][u])                        (activation cells)
//! f[j]      = (1/U) Σ_u g[j][u] h[j][u]                (penultimate features)
//! logits    = V f + c,   probs = softmax(logits)
//! ```
//!
//! `g` is an optional per-feature spatial gate (all ones by default). Saliency
//! for a target `y` is the rectified gradient-weighted activation map
//! `relu(Σ_j (∂y/∂h[j][u]) h[j][u])`, bilinearly upsampled to the image.

use std::collections::BTreeMap;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{softmax, Backend, BackendDescriptor, Capabilities, Family, Handshake, LinearHead};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seeding::{combine, rng_from};
use crate::tensor::{BinaryMask, Grid, ImageTensor, Shape, CHANNELS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceConfig {
    pub image_size: usize,
    pub n_classes: usize,
    pub feature_dim: usize,
    pub pooling_cell: usize,
}

impl ReferenceConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.image_size < 8 {
            return bad(format!("image_size must be >= 8, got {}", self.image_size));
        }
        if self.n_classes < 2 {
            return bad("n_classes must be >= 2".into());
        }
        if self.feature_dim < self.n_classes {
            return bad(format!(
                "feature_dim ({}) must be >= n_classes ({})",
                self.feature_dim, self.n_classes
            ));
        }
        if self.pooling_cell == 0 || !self.image_size.is_multiple_of(self.pooling_cell) {
            return bad(format!(
                "pooling_cell {} must divide image_size {}",
                self.pooling_cell, self.image_size
            ));
        }
        Ok(())
    }

    pub fn cells(&self) -> Shape {
        let n = self.image_size / self.pooling_cell;
        Shape::new(n, n)
    }
}

/// What a gradient or saliency map is taken with respect to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradTarget {
    Feature(usize),
    ClassLogit(usize),
}

#[derive(Debug, Clone)]
pub struct ReferenceBackend<T> {
    config: ReferenceConfig,
    handshake: Handshake,
    detector_w: Vec<[T; 3]>,
    detector_b: Vec<T>,
    gates: Vec<Option<Vec<T>>>,
    head: LinearHead<T>,
}

struct Forward<T> {
    /// Pre-activations, `[feature][cell]`.
    z: Vec<Vec<T>>,
    /// Activation cells, `[feature][cell]`.
    h: Vec<Vec<T>>,
    features: Vec<T>,
}

fn softplus<T: Scalar>(z: T) -> T {
    z.max(T::zero()) + (-z.abs()).exp().ln_1p()
}

fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> ReferenceBackend<T> {
    /// Random detectors centred on mid-gray plus a small random head.
    pub fn new(config: ReferenceConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_from(combine(seed, &[0xBAC4E4D]));
        let w_dist = Normal::new(0.0, 2.0).expect("valid");
        let b_dist = Normal::new(0.0, 0.5).expect("valid");
        let head_dist = Normal::new(0.0, 0.01).expect("valid");
        let mut detector_w = Vec::with_capacity(config.feature_dim);
        let mut detector_b = Vec::with_capacity(config.feature_dim);
        for _ in 0..config.feature_dim {
            let w: [f64; 3] = [
                w_dist.sample(&mut rng),
                w_dist.sample(&mut rng),
                w_dist.sample(&mut rng),
            ];
            let centre = -(w[0] + w[1] + w[2]) * 0.5;
            detector_w.push(w.map(T::lit));
            detector_b.push(T::lit(centre + b_dist.sample(&mut rng)));
        }
        let mut head = LinearHead::zeros(config.n_classes, config.feature_dim);
        for w in head.weights.iter_mut() {
            *w = T::lit(head_dist.sample(&mut rng));
        }
        let params = (config.feature_dim * 4 + config.n_classes * (config.feature_dim + 1)) as u64;
        let mut metadata = BTreeMap::new();
        metadata.insert("pooling_cell".into(), config.pooling_cell.to_string());
        metadata.insert("saliency".into(), "gradient-weighted activation cells".into());
        metadata.insert("seed".into(), seed.to_string());
        let handshake = Handshake {
            descriptor: BackendDescriptor {
                name: format!(
                    "reference-s{}-c{}-f{}-k{}",
                    config.image_size, config.pooling_cell, config.feature_dim, config.n_classes
                ),
                family: Family::Reference,
                parameter_count: params,
                input_size: config.image_size,
                metadata,
            },
            capabilities: Capabilities::all(),
            n_classes: config.n_classes,
            feature_dim: config.feature_dim,
            concurrent: false,
        };
        Ok(Self {
            config,
            handshake,
            detector_w,
            detector_b,
            gates: vec![None; config.feature_dim],
            head,
        })
    }

    pub fn config(&self) -> &ReferenceConfig {
        &self.config
    }

    pub fn head(&self) -> &LinearHead<T> {
        &self.head
    }

    /// Overrides the colour detector behind feature `j`.
    pub fn set_feature_detector(&mut self, j: usize, weights: [T; 3], bias: T) -> Result<()> {
        self.check_feature(j)?;
        self.detector_w[j] = weights;
        self.detector_b[j] = bias;
        Ok(())
    }

    /// Restricts feature `j` to the cells covered by `gate`. The gate may be
    /// given at cell or at image resolution (nearest-neighbour resampled).
    pub fn set_spatial_gate(&mut self, j: usize, gate: &BinaryMask) -> Result<()> {
        self.check_feature(j)?;
        let cells = gate.resize_nearest(self.config.cells());
        self.gates[j] = Some(
            cells
                .data()
                .iter()
                .map(|&b| if b { T::one() } else { T::zero() })
                .collect(),
        );
        Ok(())
    }

    fn check_feature(&self, j: usize) -> Result<()> {
        if j >= self.config.feature_dim {
            return Err(Error::InvalidArgument(format!(
                "feature {j} out of range for dimension {}",
                self.config.feature_dim
            )));
        }
        Ok(())
    }

    fn check_image(&self, img: &ImageTensor<T>) -> Result<()> {
        let s = self.config.image_size;
        if img.shape() != Shape::new(s, s) {
            return Err(Error::shape(Some("reference backend input".into()), Shape::new(s, s), img.shape()));
        }
        Ok(())
    }

    fn gate(&self, j: usize, u: usize) -> T {
        self.gates[j].as_ref().map_or(T::one(), |g| g[u])
    }

    fn n_cells(&self) -> usize {
        self.config.cells().pixels()
    }

    fn pool(&self, img: &ImageTensor<T>) -> Vec<[T; 3]> {
        let cell = self.config.pooling_cell;
        let cells = self.config.cells();
        let area = T::lit((cell * cell) as f64);
        let mut out = vec![[T::zero(); 3]; cells.pixels()];
        let data = img.data();
        let width = img.width();
        for y in 0..img.height() {
            let row = (y / cell) * cells.width;
            for x in 0..width {
                let acc = &mut out[row + x / cell];
                let i = (y * width + x) * CHANNELS;
                acc[0] += data[i];
                acc[1] += data[i + 1];
                acc[2] += data[i + 2];
            }
        }
        for p in out.iter_mut() {
            for v in p.iter_mut() {
                *v /= area;
            }
        }
        out
    }

    fn forward(&self, img: &ImageTensor<T>) -> Forward<T> {
        let pooled = self.pool(img);
        let n_cells = T::lit(self.n_cells() as f64);
        let mut z = Vec::with_capacity(self.config.feature_dim);
        let mut h = Vec::with_capacity(self.config.feature_dim);
        let mut features = Vec::with_capacity(self.config.feature_dim);
        for j in 0..self.config.feature_dim {
            let w = self.detector_w[j];
            let b = self.detector_b[j];
            let zj: Vec<T> = pooled
                .iter()
                .map(|p| w[0] * p[0] + w[1] * p[1] + w[2] * p[2] + b)
                .collect();
            let hj: Vec<T> = zj.iter().map(|v| softplus(*v)).collect();
            let fj = hj
                .iter()
                .enumerate()
                .map(|(u, v)| self.gate(j, u) * *v)
                .sum::<T>()
                / n_cells;
            z.push(zj);
            h.push(hj);
            features.push(fj);
        }
        Forward {
            z,
            h,
            features,
        }
    }

    pub fn features_of(&self, img: &ImageTensor<T>) -> Result<Vec<T>> {
        self.check_image(img)?;
        Ok(self.forward(img).features)
    }

    pub fn logits_of(&self, img: &ImageTensor<T>) -> Result<Vec<T>> {
        Ok(self.head.logits(&self.features_of(img)?))
    }

    /// `∂target/∂f[j]` for every feature.
    fn feature_weights(&self, target: GradTarget) -> Result<Vec<T>> {
        match target {
            GradTarget::Feature(j) => {
                self.check_feature(j)?;
                let mut w = vec![T::zero(); self.config.feature_dim];
                w[j] = T::one();
                Ok(w)
            }
            GradTarget::ClassLogit(c) => {
                if c >= self.config.n_classes {
                    return Err(Error::InvalidArgument(format!("class {c} out of range")));
                }
                let d = self.config.feature_dim;
                Ok(self.head.weights[c * d..(c + 1) * d].to_vec())
            }
        }
    }

    /// Closed-form gradient of `target` w.r.t. every input pixel-channel,
    /// laid out like the image data.
    pub fn input_gradient(&self, img: &ImageTensor<T>, target: GradTarget) -> Result<Vec<T>> {
        self.check_image(img)?;
        let coef = self.feature_weights(target)?;
        let fw = self.forward(img);
        let cell = self.config.pooling_cell;
        let cells = self.config.cells();
        // ∂target/∂p[u][c] = Σ_j coef[j] g[j][u] σ(z[j][u]) w[j][c] / U
        let scale = T::one() / T::lit((self.n_cells() * cell * cell) as f64);
        let mut per_cell = vec![[T::zero(); 3]; cells.pixels()];
        for (j, cj) in coef.iter().enumerate() {
            if *cj == T::zero() {
                continue;
            }
            for (u, acc) in per_cell.iter_mut().enumerate() {
                let s = *cj * self.gate(j, u) * sigmoid(fw.z[j][u]) * scale;
                for (a, &w) in acc.iter_mut().zip(&self.detector_w[j]) {
                    *a += s * w;
                }
            }
        }
        let mut out = Vec::with_capacity(img.data().len());
        for y in 0..img.height() {
            for x in 0..img.width() {
                out.extend_from_slice(&per_cell[(y / cell) * cells.width + x / cell]);
            }
        }
        Ok(out)
    }

    /// Rectified gradient-weighted activation map at cell resolution.
    pub fn activation_cam(&self, img: &ImageTensor<T>, target: GradTarget) -> Result<Grid<T>> {
        self.check_image(img)?;
        let coef = self.feature_weights(target)?;
        let fw = self.forward(img);
        let n_cells = T::lit(self.n_cells() as f64);
        let cells = self.config.cells();
        let data = (0..cells.pixels())
            .map(|u| {
                let v = coef
                    .iter()
                    .enumerate()
                    .map(|(j, cj)| *cj * self.gate(j, u) / n_cells * fw.h[j][u])
                    .sum::<T>();
                v.max(T::zero())
            })
            .collect();
        Grid::new(cells.height, cells.width, data)
    }

    fn saliency(&self, images: &[&ImageTensor<T>], target: GradTarget) -> Result<Vec<Grid<T>>> {
        let s = self.config.image_size;
        images
            .iter()
            .map(|img| Ok(self.activation_cam(img, target)?.resize_bilinear(Shape::new(s, s))))
            .collect()
    }
}

impl<T: Scalar> Backend<T> for ReferenceBackend<T> {
    fn handshake(&self) -> &Handshake {
        &self.handshake
    }

    fn predict(&mut self, images: &[&ImageTensor<T>]) -> Result<Vec<Vec<T>>> {
        images
            .iter()
            .map(|img| Ok(softmax(&self.logits_of(img)?)))
            .collect()
    }

    fn features(&mut self, images: &[&ImageTensor<T>]) -> Result<Vec<Vec<T>>> {
        images.iter().map(|img| self.features_of(img)).collect()
    }

    fn feature_saliency(&mut self, images: &[&ImageTensor<T>], feature: usize) -> Result<Vec<Grid<T>>> {
        self.saliency(images, GradTarget::Feature(feature))
    }

    fn class_saliency(&mut self, images: &[&ImageTensor<T>], class: usize) -> Result<Vec<Grid<T>>> {
        self.saliency(images, GradTarget::ClassLogit(class))
    }

    fn set_head(&mut self, head: &LinearHead<T>) -> Result<()> {
        if head.n_classes != self.config.n_classes || head.feature_dim != self.config.feature_dim {
            return Err(Error::shape(
                Some("linear head".into()),
                format!("{}x{}", self.config.n_classes, self.config.feature_dim),
                format!("{}x{}", head.n_classes, head.feature_dim),
            ));
        }
        self.head = head.clone();
        Ok(())
    }
}
