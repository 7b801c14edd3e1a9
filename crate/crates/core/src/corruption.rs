//! Region-targeted Gaussian noise, gray ablations and mask-guided composites.
//!
//! Noisy images follow `clip(x + n * w)` where `w` is the object mask, its
//! complement, or all ones. The noise tensor is never clamped itself; only
//! the sum is clipped to `[0, 1]`.

use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dataset::{AttributeId, Sample};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seeding::{rng_from, trial_seed};
use crate::tensor::{BinaryMask, ImageTensor, Shape, CHANNELS};

pub const GRAY: f64 = 0.5;

/// Image region targeted by a corruption.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Region {
    Foreground,
    Background,
    Full,
    /// Pixels under one attribute mask. For the pixel-level operations this
    /// behaves like `Foreground` with the attribute mask passed as `m`.
    Attribute(AttributeId),
}

impl Region {
    /// Mask of the pixels this region perturbs for `sample`.
    pub fn mask_for<T: Scalar>(&self, sample: &Sample<T>) -> Result<BinaryMask> {
        Ok(match self {
            Region::Foreground => (*sample.object_mask).clone(),
            Region::Background => sample.object_mask.complement(),
            Region::Full => BinaryMask::ones(sample.image.shape()),
            Region::Attribute(a) => sample
                .attribute_mask(*a)
                .ok_or_else(|| Error::Attribute {
                    sample_id: sample.id.clone(),
                    message: format!("no mask for attribute `{a}`"),
                })?
                .clone(),
        })
    }

    /// The mask argument the pixel-level operations expect for this region
    /// (object mask for foreground/background, attribute mask for attributes).
    pub fn source_mask<'a, T: Scalar>(&self, sample: &'a Sample<T>) -> Result<&'a BinaryMask> {
        match self {
            Region::Attribute(a) => sample.attribute_mask(*a).ok_or_else(|| Error::Attribute {
                sample_id: sample.id.clone(),
                message: format!("no mask for attribute `{a}`"),
            }),
            _ => Ok(&sample.object_mask),
        }
    }

    pub(crate) fn weight(&self, inside: bool) -> bool {
        match self {
            Region::Foreground | Region::Attribute(_) => inside,
            Region::Background => !inside,
            Region::Full => true,
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Region::Foreground => f.write_str("foreground"),
            Region::Background => f.write_str("background"),
            Region::Full => f.write_str("full"),
            Region::Attribute(a) => write!(f, "attribute:{}", a.name()),
        }
    }
}

impl FromStr for Region {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "foreground" | "fg" => Ok(Region::Foreground),
            "background" | "bg" => Ok(Region::Background),
            "full" => Ok(Region::Full),
            other => other
                .strip_prefix("attribute:")
                .and_then(AttributeId::from_name)
                .map(Region::Attribute)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown region `{other}`"))),
        }
    }
}

impl Serialize for Region {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Region {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// i.i.d. `N(0, level^2)` per pixel-channel.
    LinfGaussian,
    /// Standard normal noise rescaled to ℓ2 norm `level` over the region.
    L2Normalized,
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseKind::LinfGaussian => "linf_gaussian",
            NoiseKind::L2Normalized => "l2_normalized",
        })
    }
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linf_gaussian" | "linf" => Ok(NoiseKind::LinfGaussian),
            "l2_normalized" | "l2" => Ok(NoiseKind::L2Normalized),
            other => Err(Error::InvalidArgument(format!("unknown noise kind `{other}`"))),
        }
    }
}

impl NoiseKind {
    /// Default sweep levels: σ ∈ {30, 60, …, 210}/255 for ℓ∞, norms 25..=200 step 25 for ℓ2.
    pub fn default_levels(self) -> Vec<f64> {
        match self {
            NoiseKind::LinfGaussian => (1..=7).map(|k| (30 * k) as f64 / 255.0).collect(),
            NoiseKind::L2Normalized => (1..=8).map(|k| (25 * k) as f64).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub level: f64,
    pub region: Region,
    pub trials: usize,
    pub base_seed: u64,
}

impl NoiseSpec {
    /// `level = 0` is accepted only when `allow_zero` (identity checks).
    pub fn validate(&self, allow_zero: bool) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidArgument("trials must be >= 1".into()));
        }
        if !self.level.is_finite() || self.level < 0.0 || (self.level == 0.0 && !allow_zero) {
            return Err(Error::InvalidArgument(format!(
                "noise level must be > 0, got {}",
                self.level
            )));
        }
        if self.kind == NoiseKind::LinfGaussian && self.level > 1.0 {
            return Err(Error::InvalidArgument(format!(
                "linf_gaussian σ must lie in [0, 1], got {}",
                self.level
            )));
        }
        Ok(())
    }
}

/// Unbounded noise with the layout of an [`ImageTensor`].
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseTensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> NoiseTensor<T> {
    pub fn new(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.pixels() * CHANNELS {
            return Err(Error::shape(None, shape.pixels() * CHANNELS, data.len()));
        }
        Ok(Self { shape, data })
    }

    pub fn filled(shape: Shape, value: T) -> Self {
        Self {
            shape,
            data: vec![value; shape.pixels() * CHANNELS],
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// ℓ2 norm over the pixels selected by `region` relative to `m`.
    pub fn region_norm(&self, m: &BinaryMask, region: Region) -> f64 {
        self.data
            .chunks_exact(CHANNELS)
            .zip(m.data())
            .filter(|(_, &inside)| region.weight(inside))
            .flat_map(|(px, _)| px.iter())
            .map(|v| {
                let v = v.to_f64_lossy();
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// i.i.d. Gaussian noise with standard deviation `sigma`, deterministic in `seed`.
pub fn gaussian_noise<T: Scalar>(shape: Shape, sigma: f64, seed: u64) -> Result<NoiseTensor<T>> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "noise standard deviation must be >= 0, got {sigma}"
        )));
    }
    let mut rng = rng_from(seed);
    let data = (0..shape.pixels() * CHANNELS)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            T::lit(z * sigma)
        })
        .collect();
    Ok(NoiseTensor { shape, data })
}

/// The noise tensor of one sweep trial, reproducible from `base_seed` alone.
/// ℓ∞ trials draw `N(0, level^2)`; ℓ2 trials draw `N(0, 1)` to be normalised
/// per region afterwards.
pub fn trial_noise<T: Scalar>(
    shape: Shape,
    kind: NoiseKind,
    level: f64,
    base_seed: u64,
    sample_id: &str,
    level_index: usize,
    trial_index: usize,
) -> Result<NoiseTensor<T>> {
    let seed = trial_seed(base_seed, sample_id, level_index, trial_index);
    match kind {
        NoiseKind::LinfGaussian => gaussian_noise(shape, level, seed),
        NoiseKind::L2Normalized => gaussian_noise(shape, 1.0, seed),
    }
}

fn check_shapes<T: Scalar>(x: &ImageTensor<T>, m: &BinaryMask, n: Option<&NoiseTensor<T>>) -> Result<()> {
    m.check_shape(x.shape(), "mask")?;
    if let Some(n) = n {
        if n.shape != x.shape() {
            return Err(Error::shape(Some("noise".into()), x.shape(), n.shape));
        }
    }
    Ok(())
}

/// `clip(x + n ⊙ w)` with `w = m`, `1 - m` or `1` for foreground, background
/// and full respectively. Untargeted pixels are copied bit-for-bit.
pub fn apply_region_noise<T: Scalar>(
    x: &ImageTensor<T>,
    m: &BinaryMask,
    n: &NoiseTensor<T>,
    region: Region,
) -> Result<ImageTensor<T>> {
    check_shapes(x, m, Some(n))?;
    let mut out = x.data().to_vec();
    for ((px, noise), &inside) in out
        .chunks_exact_mut(CHANNELS)
        .zip(n.data.chunks_exact(CHANNELS))
        .zip(m.data())
    {
        if region.weight(inside) {
            for (v, e) in px.iter_mut().zip(noise) {
                *v = (*v + *e).max(T::zero()).min(T::one());
            }
        }
    }
    Ok(ImageTensor::from_raw(x.shape(), out))
}

/// Rescales `n` so its ℓ2 norm over the targeted entries equals `target`,
/// zeroing every other entry.
pub fn l2_normalize_noise<T: Scalar>(
    n: &NoiseTensor<T>,
    m: &BinaryMask,
    region: Region,
    target: f64,
) -> Result<NoiseTensor<T>> {
    m.check_shape(n.shape, "mask")?;
    if !(target >= 0.0) || !target.is_finite() {
        return Err(Error::InvalidArgument(format!("l2 target must be >= 0, got {target}")));
    }
    if !m.data().iter().any(|&inside| region.weight(inside)) {
        return Err(Error::EmptyRegion(format!("{region} region has no pixels")));
    }
    let norm = n.region_norm(m, region);
    if norm == 0.0 {
        return Err(Error::InvalidArgument(format!(
            "noise is identically zero on the {region} region"
        )));
    }
    let scale = target / norm;
    let mut data = Vec::with_capacity(n.data.len());
    for (px, &inside) in n.data.chunks_exact(CHANNELS).zip(m.data()) {
        if region.weight(inside) {
            data.extend(px.iter().map(|v| T::lit(v.to_f64_lossy() * scale)));
        } else {
            data.extend([T::zero(); CHANNELS]);
        }
    }
    Ok(NoiseTensor { shape: n.shape, data })
}

/// Sets the targeted pixels to 0.5 in every channel.
pub fn gray_ablate<T: Scalar>(x: &ImageTensor<T>, m: &BinaryMask, region: Region) -> Result<ImageTensor<T>> {
    check_shapes(x, m, None)?;
    if region == Region::Full {
        return Err(Error::InvalidArgument(
            "gray ablation targets foreground or background".into(),
        ));
    }
    let gray = T::lit(GRAY);
    let mut out = x.data().to_vec();
    for (px, &inside) in out.chunks_exact_mut(CHANNELS).zip(m.data()) {
        if region.weight(inside) {
            px.fill(gray);
        }
    }
    Ok(ImageTensor::from_raw(x.shape(), out))
}

/// Grays out one positive, part-level attribute of `s`.
pub fn attribute_ablate<T: Scalar>(s: &Sample<T>, attr: AttributeId) -> Result<ImageTensor<T>> {
    if attr.is_whole_object() {
        return Err(Error::Attribute {
            sample_id: s.id.clone(),
            message: format!("`{attr}` covers the whole object and cannot be ablated"),
        });
    }
    if !s.has_attribute(attr) {
        return Err(Error::Attribute {
            sample_id: s.id.clone(),
            message: format!("attribute `{attr}` is absent"),
        });
    }
    let mask = s.attribute_mask(attr).ok_or_else(|| Error::Attribute {
        sample_id: s.id.clone(),
        message: format!("attribute `{attr}` has no mask"),
    })?;
    gray_ablate(&s.image, mask, Region::Foreground)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SwapRegion {
    Foreground,
    Attribute(AttributeId),
}

/// Pastes the donor's region onto the target at identical coordinates. The
/// donor image is resized bilinearly and its mask bilinearly then
/// re-thresholded at 0.5 when spatial shapes differ.
pub fn compose_swap<T: Scalar>(
    target: &Sample<T>,
    donor: &Sample<T>,
    donor_region: SwapRegion,
) -> Result<ImageTensor<T>> {
    let donor_mask = match donor_region {
        SwapRegion::Foreground => donor.object_mask.as_ref(),
        SwapRegion::Attribute(a) => donor.attribute_mask(a).ok_or_else(|| Error::Attribute {
            sample_id: donor.id.clone(),
            message: format!("donor has no mask for `{a}`"),
        })?,
    };
    let shape = target.image.shape();
    let mask = donor_mask.resize_rethreshold(shape);
    if mask.is_empty_region() {
        return Err(Error::EmptyRegion(format!("donor {} region is empty", donor.id)));
    }
    let donor_img = donor.image.resize_bilinear(shape);
    let mut out = target.image.data().to_vec();
    for ((px, src), &inside) in out
        .chunks_exact_mut(CHANNELS)
        .zip(donor_img.data().chunks_exact(CHANNELS))
        .zip(mask.data())
    {
        if inside {
            px.copy_from_slice(src);
        }
    }
    Ok(ImageTensor::from_raw(shape, out))
}
