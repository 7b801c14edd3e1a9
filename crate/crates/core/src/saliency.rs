//! Agreement between max-normalised saliency maps and ground-truth masks.
//!
//! All metrics take the saliency `s` (values in `[0, 1]`, max 1) and a binary
//! mask `m` of the same shape and return `f64`.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bridge::Bridge;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{BinaryMask, ImageTensor, SaliencyMap};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_MASS_FRACTION: f64 = 0.75;

/// Value of the Δ-density ratio when the background mean is 0 and the
/// foreground mean is not.
pub const RATIO_INFINITY: f64 = f64::INFINITY;

pub const METRIC_NAMES: [&str; 7] = [
    "iou_standard",
    "iou_paper_formula",
    "delta_density_diff",
    "delta_density_ratio",
    "average_precision",
    "saliency_precision",
    "saliency_recall",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IouVariant {
    /// `|a ∩ b| / |a ∪ b|`.
    #[default]
    Standard,
    /// `|a ∩ b| / (|a| + |b|)`, at most 0.5.
    PaperFormula,
}

impl fmt::Display for IouVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IouVariant::Standard => "standard",
            IouVariant::PaperFormula => "paper_formula",
        })
    }
}

impl FromStr for IouVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(IouVariant::Standard),
            "paper_formula" => Ok(IouVariant::PaperFormula),
            other => Err(Error::InvalidArgument(format!("unknown IOU variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaVariant {
    #[default]
    Difference,
    Ratio,
}

fn check<T: Scalar>(s: &SaliencyMap<T>, m: &BinaryMask) -> Result<()> {
    m.check_shape(s.shape(), "saliency mask")
}

/// Pixels with `s >= tau`.
pub fn binarize<T: Scalar>(s: &SaliencyMap<T>, tau: f64) -> Result<BinaryMask> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::InvalidArgument(format!("threshold must lie in (0, 1], got {tau}")));
    }
    let shape = s.shape();
    BinaryMask::new(
        shape.height,
        shape.width,
        s.data().iter().map(|v| v.to_f64_lossy() >= tau).collect(),
    )
}

/// IOU of two masks; 0 when both are empty.
pub fn iou(a: &BinaryMask, b: &BinaryMask, variant: IouVariant) -> Result<f64> {
    b.check_shape(a.shape(), "iou")?;
    let inter = a.intersection_count(b) as f64;
    let (na, nb) = (a.count() as f64, b.count() as f64);
    let denom = match variant {
        IouVariant::Standard => na + nb - inter,
        IouVariant::PaperFormula => na + nb,
    };
    Ok(if denom == 0.0 { 0.0 } else { inter / denom })
}

fn region_means<T: Scalar>(s: &SaliencyMap<T>, m: &BinaryMask) -> ((f64, usize), (f64, usize)) {
    let (mut fg, mut nf, mut bg, mut nb) = (0.0, 0, 0.0, 0);
    for (v, &inside) in s.data().iter().zip(m.data()) {
        if inside {
            fg += v.to_f64_lossy();
            nf += 1;
        } else {
            bg += v.to_f64_lossy();
            nb += 1;
        }
    }
    let mean = |sum: f64, n: usize| if n == 0 { 0.0 } else { sum / n as f64 };
    ((mean(fg, nf), nf), (mean(bg, nb), nb))
}

/// Mean saliency on `m` against mean saliency off `m`.
///
/// `Difference` treats an empty side as mean 0. `Ratio` needs both sides
/// nonempty; it is [`RATIO_INFINITY`] when only the background mean is 0
/// and 0 when both means are 0.
pub fn delta_densities<T: Scalar>(s: &SaliencyMap<T>, m: &BinaryMask, variant: DeltaVariant) -> Result<f64> {
    check(s, m)?;
    let ((fg, nf), (bg, nb)) = region_means(s, m);
    match variant {
        DeltaVariant::Difference => Ok(fg - bg),
        DeltaVariant::Ratio => {
            if nf == 0 || nb == 0 {
                return Err(Error::EmptyRegion(format!(
                    "Δ-density ratio needs pixels on both sides of the mask ({nf} inside, {nb} outside)"
                )));
            }
            Ok(if bg == 0.0 {
                if fg == 0.0 {
                    0.0
                } else {
                    RATIO_INFINITY
                }
            } else {
                fg / bg
            })
        }
    }
}

/// `Σ (R_n - R_{n-1}) P_n` over thresholds at the distinct saliency values,
/// scanned from high to low, with `m` as the positives.
pub fn average_precision<T: Scalar>(s: &SaliencyMap<T>, m: &BinaryMask) -> Result<f64> {
    check(s, m)?;
    let positives = m.count();
    if positives == 0 {
        return Err(Error::EmptyRegion("average precision needs a nonempty mask".into()));
    }
    let mut scored: Vec<(f64, bool)> = s.data().iter().map(|v| v.to_f64_lossy()).zip(m.data().iter().copied()).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (mut tp, mut seen) = (0usize, 0usize);
    let (mut ap, mut prev_recall) = (0.0, 0.0);
    let mut i = 0;
    while i < scored.len() {
        let v = scored[i].0;
        while i < scored.len() && scored[i].0 == v {
            tp += scored[i].1 as usize;
            seen += 1;
            i += 1;
        }
        let recall = tp as f64 / positives as f64;
        let precision = tp as f64 / seen as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

/// Share of total saliency mass inside `m`; 0 for an all-zero map.
pub fn saliency_precision<T: Scalar>(s: &SaliencyMap<T>, m: &BinaryMask) -> Result<f64> {
    check(s, m)?;
    let (mut inside, mut total) = (0.0, 0.0);
    for (v, &k) in s.data().iter().zip(m.data()) {
        let v = v.to_f64_lossy();
        total += v;
        if k {
            inside += v;
        }
    }
    Ok(if total == 0.0 { 0.0 } else { inside / total })
}

/// Fraction of `m` covered by the most salient pixels that together carry
/// `mass_fraction` of the total saliency. The cut-off is the largest
/// distinct saliency value `t` with `Σ_{s >= t} s >= mass_fraction Σ s`.
pub fn saliency_recall<T: Scalar>(s: &SaliencyMap<T>, m: &BinaryMask, mass_fraction: f64) -> Result<f64> {
    check(s, m)?;
    if !(mass_fraction > 0.0 && mass_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("mass fraction must lie in (0, 1], got {mass_fraction}")));
    }
    if m.is_empty_region() {
        return Err(Error::EmptyRegion("saliency recall needs a nonempty mask".into()));
    }
    let mut vals: Vec<f64> = s.data().iter().map(|v| v.to_f64_lossy()).collect();
    vals.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = vals.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidArgument("saliency recall of an all-zero map".into()));
    }
    let goal = mass_fraction * total;
    let mut cum = 0.0;
    let mut cutoff = vals[vals.len() - 1];
    let mut i = 0;
    while i < vals.len() {
        let v = vals[i];
        while i < vals.len() && vals[i] == v {
            cum += vals[i];
            i += 1;
        }
        if cum >= goal {
            cutoff = v;
            break;
        }
    }
    let hit = s
        .data()
        .iter()
        .zip(m.data())
        .filter(|(v, &k)| k && v.to_f64_lossy() >= cutoff)
        .count();
    Ok(hit as f64 / m.count() as f64)
}

/// Which conventions were applied while scoring one map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Degenerate {
    pub zero_saliency: bool,
    pub empty_mask: bool,
    pub empty_background: bool,
}

impl Degenerate {
    pub fn any(self) -> bool {
        self.zero_saliency || self.empty_mask || self.empty_background
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentScores {
    pub iou_standard: f64,
    pub iou_paper_formula: f64,
    pub delta_density_diff: f64,
    /// [`RATIO_INFINITY`] is serialised as `null` in JSON.
    #[serde(with = "ratio_json")]
    pub delta_density_ratio: f64,
    pub average_precision: f64,
    pub saliency_precision: f64,
    pub saliency_recall: f64,
    pub degenerate: Degenerate,
}

mod ratio_json {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(super::RATIO_INFINITY))
    }
}

impl AlignmentScores {
    pub fn metric(&self, name: &str) -> Result<f64> {
        Ok(match name {
            "iou_standard" => self.iou_standard,
            "iou_paper_formula" => self.iou_paper_formula,
            "delta_density_diff" => self.delta_density_diff,
            "delta_density_ratio" => self.delta_density_ratio,
            "average_precision" => self.average_precision,
            "saliency_precision" => self.saliency_precision,
            "saliency_recall" => self.saliency_recall,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown metric `{other}`, expected one of {}",
                    METRIC_NAMES.join(", ")
                )))
            }
        })
    }
}

/// All alignment metrics of one map. A zero map or empty mask scores 0 on
/// every metric that would be undefined, with the matching flag set; a full
/// mask makes the ratio [`RATIO_INFINITY`] (0 for a zero map).
pub fn score_map<T: Scalar>(s: &SaliencyMap<T>, m: &BinaryMask, tau: f64) -> Result<AlignmentScores> {
    check(s, m)?;
    let flags = Degenerate {
        zero_saliency: s.is_zero(),
        empty_mask: m.is_empty_region(),
        empty_background: m.count() == m.data().len(),
    };
    let b = binarize(s, tau)?;
    let delta_density_ratio = if flags.empty_mask {
        0.0
    } else if flags.empty_background {
        if flags.zero_saliency {
            0.0
        } else {
            RATIO_INFINITY
        }
    } else {
        delta_densities(s, m, DeltaVariant::Ratio)?
    };
    let undefined = flags.zero_saliency || flags.empty_mask;
    Ok(AlignmentScores {
        iou_standard: iou(&b, m, IouVariant::Standard)?,
        iou_paper_formula: iou(&b, m, IouVariant::PaperFormula)?,
        delta_density_diff: delta_densities(s, m, DeltaVariant::Difference)?,
        delta_density_ratio,
        average_precision: if undefined { 0.0 } else { average_precision(s, m)? },
        saliency_precision: saliency_precision(s, m)?,
        saliency_recall: if undefined { 0.0 } else { saliency_recall(s, m, DEFAULT_MASS_FRACTION)? },
        degenerate: flags,
    })
}

/// Whose gradient the saliency follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "index")]
pub enum SaliencyTarget {
    /// Each sample's own label.
    #[default]
    TrueClass,
    Class(usize),
    Feature(usize),
}

/// Saliency of every sample of `ds` scored against its object mask, in
/// dataset order.
pub fn score_alignment<T: Scalar>(
    bridge: &mut Bridge<T>,
    ds: &Dataset<T>,
    target: SaliencyTarget,
    tau: f64,
) -> Result<Vec<(String, AlignmentScores)>> {
    if ds.is_empty() {
        return Err(Error::InvalidArgument("no samples to score".into()));
    }
    // Group samples by the target index so each backend call shares one target.
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in ds.iter().enumerate() {
        let t = match target {
            SaliencyTarget::TrueClass => s.class_label.index(),
            SaliencyTarget::Class(c) | SaliencyTarget::Feature(c) => c,
        };
        groups.entry(t).or_default().push(i);
    }
    let samples = ds.samples();
    let mut out: Vec<Option<(String, AlignmentScores)>> = vec![None; ds.len()];
    for (t, idx) in groups {
        let images: Vec<&ImageTensor<T>> = idx.iter().map(|&i| &samples[i].image).collect();
        let maps = match target {
            SaliencyTarget::Feature(_) => bridge.get_feature_saliency(&images, t)?,
            _ => bridge.get_class_saliency(&images, t)?,
        };
        for (&i, map) in idx.iter().zip(&maps) {
            let s = &samples[i];
            out[i] = Some((s.id.clone(), score_map(map, &s.object_mask, tau)?));
        }
    }
    Ok(out.into_iter().map(|o| o.expect("every sample scored")).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedSample {
    pub sample_id: String,
    pub value: f64,
}

/// The `k` samples with the lowest value of `metric`, ties broken by sample id.
pub fn rank_misaligned(scores: &[(String, AlignmentScores)], metric: &str, k: usize) -> Result<Vec<RankedSample>> {
    if k > scores.len() {
        return Err(Error::InvalidArgument(format!("k = {k} exceeds {} scored samples", scores.len())));
    }
    let mut ranked: Vec<RankedSample> = scores
        .iter()
        .map(|(id, s)| {
            Ok(RankedSample {
                sample_id: id.clone(),
                value: s.metric(metric)?,
            })
        })
        .collect::<Result<_>>()?;
    ranked.sort_by(|a, b| a.value.total_cmp(&b.value).then_with(|| a.sample_id.cmp(&b.sample_id)));
    ranked.truncate(k);
    Ok(ranked)
}

/// One row per sample: id, the seven metrics, then the degenerate flags.
/// An infinite ratio is written as `inf`.
pub fn write_alignment_csv(w: impl Write, scores: &[(String, AlignmentScores)]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["sample_id"];
    header.extend(METRIC_NAMES);
    header.extend(["zero_saliency", "empty_mask", "empty_background"]);
    out.write_record(&header)?;
    for (id, s) in scores {
        let mut row = vec![id.clone()];
        for name in METRIC_NAMES {
            row.push(s.metric(name)?.to_string());
        }
        row.push(s.degenerate.zero_saliency.to_string());
        row.push(s.degenerate.empty_mask.to_string());
        row.push(s.degenerate.empty_background.to_string());
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MisalignmentReport {
    pub metric: String,
    pub k: usize,
    pub ranked: Vec<RankedSample>,
}
