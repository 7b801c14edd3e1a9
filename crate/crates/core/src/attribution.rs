//! Neural-node attribution: for each (class, attribute) pair, the penultimate
//! feature whose saliency on its top-activating images best overlaps the
//! attribute masks, and how well that choice holds up on held-out images.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize, Serializer};

use crate::bridge::Bridge;
use crate::dataset::{AttributeId, ClassId, Dataset, Sample};
use crate::error::{Error, Result};
use crate::saliency::{binarize, iou, IouVariant, DEFAULT_THRESHOLD};
use crate::scalar::Scalar;
use crate::stats::{mean, median, roc_area, Histogram};
use crate::tensor::ImageTensor;

pub const DEFAULT_TOP_K: usize = 10;
pub const IOU_HISTOGRAM_BINS: usize = 20;
pub const ACTIVATION_HISTOGRAM_BINS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttributionOptions {
    pub k: usize,
    pub tau: f64,
    pub iou_variant: IouVariant,
}

impl Default for AttributionOptions {
    fn default() -> Self {
        Self {
            k: DEFAULT_TOP_K,
            tau: DEFAULT_THRESHOLD,
            iou_variant: IouVariant::Standard,
        }
    }
}

/// Which class pools attribution runs over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassScope {
    /// One class-free pool.
    All,
    /// One pool per class present in the dataset.
    Each,
    Only(ClassId),
}

fn serialize_class<S: Serializer>(c: &Option<ClassId>, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(c.map_or("all", ClassId::name))
}

fn deserialize_class<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Option<ClassId>, D::Error> {
    let name = String::deserialize(d)?;
    if name == "all" {
        return Ok(None);
    }
    ClassId::from_name(&name)
        .map(Some)
        .ok_or_else(|| serde::de::Error::custom(format!("unknown class `{name}`")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedFeature {
    #[serde(serialize_with = "serialize_class", deserialize_with = "deserialize_class")]
    pub class: Option<ClassId>,
    pub attribute: AttributeId,
    pub feature_index: usize,
    pub train_mean_iou: f64,
    /// The top-activating train samples the score was computed on.
    pub train_ids: Vec<String>,
    /// The attribute mask is the object mask, so this is foreground alignment.
    pub whole_object: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedPair {
    #[serde(serialize_with = "serialize_class", deserialize_with = "deserialize_class")]
    pub class: Option<ClassId>,
    pub attribute: AttributeId,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub iou_variant: IouVariant,
    pub k: usize,
    pub entries: Vec<SelectedFeature>,
    pub skipped: Vec<SkippedPair>,
}

/// Feature activations of every sample of `ds`, one row per sample.
fn activations<T: Scalar>(bridge: &mut Bridge<T>, samples: &[&Sample<T>]) -> Result<Vec<Vec<f64>>> {
    let images: Vec<&ImageTensor<T>> = samples.iter().map(|s| &s.image).collect();
    let feats = bridge.get_features(&images)?;
    Ok(feats
        .features
        .into_iter()
        .map(|f| f.into_iter().map(|v| v.to_f64_lossy()).collect())
        .collect())
}

/// Positions of the `k` largest activations of `feature`, ties by sample id.
fn top_positions<T: Scalar>(samples: &[&Sample<T>], acts: &[Vec<f64>], feature: usize, k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| {
        acts[b][feature]
            .total_cmp(&acts[a][feature])
            .then_with(|| samples[a].id.cmp(&samples[b].id))
    });
    order.truncate(k);
    order
}

/// Ids of the `k` samples (optionally of one class) with the highest
/// activation of `feature_index`, highest first; ties by sample id.
pub fn top_activating<T: Scalar>(
    bridge: &mut Bridge<T>,
    ds: &Dataset<T>,
    feature_index: usize,
    k: usize,
    class_filter: Option<ClassId>,
) -> Result<Vec<String>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    if feature_index >= bridge.feature_dim() {
        return Err(Error::InvalidArgument(format!(
            "feature index {feature_index} out of range for dimension {}",
            bridge.feature_dim()
        )));
    }
    let pool: Vec<&Sample<T>> = ds
        .iter()
        .filter(|s| class_filter.is_none_or(|c| s.class_label == c))
        .collect();
    if pool.len() < k {
        return Err(Error::InvalidArgument(format!("pool of {} samples is smaller than k = {k}", pool.len())));
    }
    let acts = activations(bridge, &pool)?;
    Ok(top_positions(&pool, &acts, feature_index, k)
        .into_iter()
        .map(|i| pool[i].id.clone())
        .collect())
}

/// Per-sample IOU between the binarised saliency of `feature_index` and the
/// attribute mask, from a single batched saliency request.
fn per_sample_iou<T: Scalar>(
    bridge: &mut Bridge<T>,
    samples: &[&Sample<T>],
    feature_index: usize,
    attr: AttributeId,
    opts: &AttributionOptions,
) -> Result<Vec<f64>> {
    let masks = samples
        .iter()
        .map(|s| {
            s.attribute_mask(attr).ok_or_else(|| Error::Attribute {
                sample_id: s.id.clone(),
                message: format!("no mask for attribute `{attr}`"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let images: Vec<&ImageTensor<T>> = samples.iter().map(|s| &s.image).collect();
    let maps = bridge.get_feature_saliency(&images, feature_index)?;
    maps.iter()
        .zip(masks)
        .map(|(map, m)| iou(&binarize(map, opts.tau)?, m, opts.iou_variant))
        .collect()
}

/// Mean IOU of `feature_index`'s saliency with the `attr` masks of the named samples.
pub fn feature_attr_score<T: Scalar>(
    bridge: &mut Bridge<T>,
    ds: &Dataset<T>,
    sample_ids: &[String],
    feature_index: usize,
    attr: AttributeId,
    opts: &AttributionOptions,
) -> Result<f64> {
    if sample_ids.is_empty() {
        return Err(Error::InvalidArgument("no samples to score".into()));
    }
    let samples = sample_ids
        .iter()
        .map(|id| ds.get(id).ok_or_else(|| Error::InvalidArgument(format!("unknown sample {id}"))))
        .collect::<Result<Vec<_>>>()?;
    let ious = per_sample_iou(bridge, &samples, feature_index, attr, opts)?;
    Ok(mean(&ious).expect("nonempty"))
}

fn scope_classes<T: Scalar>(ds: &Dataset<T>, scope: ClassScope) -> Vec<Option<ClassId>> {
    match scope {
        ClassScope::All => vec![None],
        ClassScope::Each => ds.classes().into_iter().map(Some).collect(),
        ClassScope::Only(c) => vec![Some(c)],
    }
}

/// For each pool and attribute, scores every feature on its top-`k`
/// activating attribute-positive images and keeps the best (lowest index on
/// ties). Pools with fewer than `k` positives use all of them. Attributes
/// with no positives in a pool are listed in `skipped`.
pub fn select_best_features<T: Scalar>(
    bridge: &mut Bridge<T>,
    ds_train: &Dataset<T>,
    scope: ClassScope,
    opts: &AttributionOptions,
) -> Result<Selection> {
    if opts.k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    if ds_train.is_empty() {
        return Err(Error::InvalidArgument("attribution needs training samples".into()));
    }
    let all: Vec<&Sample<T>> = ds_train.iter().collect();
    let acts = activations(bridge, &all)?;
    let row: HashMap<&str, usize> = all.iter().enumerate().map(|(i, s)| (s.id.as_str(), i)).collect();
    let n_features = bridge.feature_dim();

    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    for class in scope_classes(ds_train, scope) {
        for attr in AttributeId::all() {
            let pool: Vec<&Sample<T>> = all
                .iter()
                .copied()
                .filter(|s| class.is_none_or(|c| s.class_label == c) && s.has_attribute(attr))
                .collect();
            if pool.is_empty() {
                skipped.push(SkippedPair {
                    class,
                    attribute: attr,
                    reason: "no attribute-positive samples in pool".into(),
                });
                continue;
            }
            let pool_acts: Vec<Vec<f64>> = pool.iter().map(|s| acts[row[s.id.as_str()]].clone()).collect();
            let k = opts.k.min(pool.len());
            let mut best: Option<(usize, f64, Vec<String>)> = None;
            for j in 0..n_features {
                let top: Vec<&Sample<T>> = top_positions(&pool, &pool_acts, j, k).into_iter().map(|i| pool[i]).collect();
                let score = mean(&per_sample_iou(bridge, &top, j, attr, opts)?).expect("k >= 1");
                if best.as_ref().is_none_or(|(_, b, _)| score > *b) {
                    best = Some((j, score, top.iter().map(|s| s.id.clone()).collect()));
                }
            }
            let (feature_index, train_mean_iou, train_ids) = best.expect("at least one feature");
            entries.push(SelectedFeature {
                class,
                attribute: attr,
                feature_index,
                train_mean_iou,
                train_ids,
                whole_object: attr.is_whole_object(),
            });
        }
    }
    Ok(Selection {
        iou_variant: opts.iou_variant,
        k: opts.k,
        entries,
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub sample_id: String,
    pub activation: f64,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationSplit {
    pub feature_index: usize,
    pub attribute: AttributeId,
    pub positive: Histogram,
    pub negative: Histogram,
    /// Area under the ROC curve of the activation as an attribute detector.
    pub roc_area: f64,
    pub n_positive: usize,
    pub n_negative: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionResult {
    #[serde(serialize_with = "serialize_class", deserialize_with = "deserialize_class")]
    pub class: Option<ClassId>,
    pub attribute: AttributeId,
    pub feature_index: usize,
    pub train_mean_iou: f64,
    pub test_scores: Vec<SampleScore>,
    pub test_iou_mean: f64,
    pub test_iou_median: f64,
    pub test_iou_hist: Histogram,
    /// `None` when the test pool lacks attribute-negative samples.
    pub test_activation_split: Option<ActivationSplit>,
    pub whole_object: bool,
}

impl AttributionResult {
    pub fn test_ious(&self) -> Vec<f64> {
        self.test_scores.iter().map(|s| s.iou).collect()
    }
}

fn split_from(
    feature_index: usize,
    attr: AttributeId,
    pos: &[f64],
    neg: &[f64],
) -> Result<ActivationSplit> {
    let roc = roc_area(pos, neg).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "activation split for `{attr}` needs positive and negative samples ({} / {})",
            pos.len(),
            neg.len()
        ))
    })?;
    let lo = pos.iter().chain(neg).copied().fold(f64::INFINITY, f64::min);
    let hi = pos.iter().chain(neg).copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
    Ok(ActivationSplit {
        feature_index,
        attribute: attr,
        positive: Histogram::new(pos, lo, hi, ACTIVATION_HISTOGRAM_BINS)?,
        negative: Histogram::new(neg, lo, hi, ACTIVATION_HISTOGRAM_BINS)?,
        roc_area: roc,
        n_positive: pos.len(),
        n_negative: neg.len(),
    })
}

/// Activations of `feature_index` on every sample of `ds_test`, split by
/// whether `attr` is present, with shared bin edges and the ROC area.
pub fn activation_attribute_split<T: Scalar>(
    bridge: &mut Bridge<T>,
    ds_test: &Dataset<T>,
    feature_index: usize,
    attr: AttributeId,
) -> Result<ActivationSplit> {
    if feature_index >= bridge.feature_dim() {
        return Err(Error::InvalidArgument(format!("feature index {feature_index} out of range")));
    }
    let samples: Vec<&Sample<T>> = ds_test.iter().collect();
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no test samples".into()));
    }
    let acts = activations(bridge, &samples)?;
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for (s, a) in samples.iter().zip(&acts) {
        if s.has_attribute(attr) {
            pos.push(a[feature_index]);
        } else {
            neg.push(a[feature_index]);
        }
    }
    split_from(feature_index, attr, &pos, &neg)
}

/// Scores each selected feature on every held-out sample bearing its
/// (class, attribute) labels.
pub fn generalization_eval<T: Scalar>(
    bridge: &mut Bridge<T>,
    ds_test: &Dataset<T>,
    selection: &Selection,
    opts: &AttributionOptions,
) -> Result<Vec<AttributionResult>> {
    let all: Vec<&Sample<T>> = ds_test.iter().collect();
    if all.is_empty() {
        return Err(Error::InvalidArgument("no test samples".into()));
    }
    let acts = activations(bridge, &all)?;
    let mut out = Vec::with_capacity(selection.entries.len());
    for e in &selection.entries {
        let in_class: Vec<usize> = (0..all.len())
            .filter(|&i| e.class.is_none_or(|c| all[i].class_label == c))
            .collect();
        let pool: Vec<usize> = in_class.iter().copied().filter(|&i| all[i].has_attribute(e.attribute)).collect();
        if pool.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "no test samples of class {} carry `{}`",
                e.class.map_or("all", ClassId::name),
                e.attribute
            )));
        }
        let samples: Vec<&Sample<T>> = pool.iter().map(|&i| all[i]).collect();
        let ious = per_sample_iou(bridge, &samples, e.feature_index, e.attribute, opts)?;
        let test_scores: Vec<SampleScore> = pool
            .iter()
            .zip(&ious)
            .map(|(&i, &iou)| SampleScore {
                sample_id: all[i].id.clone(),
                activation: acts[i][e.feature_index],
                iou,
            })
            .collect();
        let neg: Vec<f64> = in_class
            .iter()
            .filter(|&&i| !all[i].has_attribute(e.attribute))
            .map(|&i| acts[i][e.feature_index])
            .collect();
        let pos: Vec<f64> = pool.iter().map(|&i| acts[i][e.feature_index]).collect();
        let split = if neg.is_empty() {
            None
        } else {
            Some(split_from(e.feature_index, e.attribute, &pos, &neg)?)
        };
        out.push(AttributionResult {
            class: e.class,
            attribute: e.attribute,
            feature_index: e.feature_index,
            train_mean_iou: e.train_mean_iou,
            test_iou_mean: mean(&ious).expect("nonempty"),
            test_iou_median: median(&ious).expect("nonempty"),
            test_iou_hist: Histogram::new(&ious, 0.0, 1.0, IOU_HISTOGRAM_BINS)?,
            test_scores,
            test_activation_split: split,
            whole_object: e.whole_object,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub class: String,
    pub attribute: String,
    pub feature: usize,
    pub train_iou: f64,
    pub test_iou_mean: f64,
    pub test_iou_median: f64,
    pub test_iou_hist: Histogram,
    pub roc_area: Option<f64>,
    pub whole_object: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub iou_variant: IouVariant,
    pub k: usize,
    pub pairs: Vec<PairReport>,
    pub skipped: Vec<SkippedPair>,
}

pub fn attribution_report(selection: &Selection, results: &[AttributionResult]) -> AttributionReport {
    AttributionReport {
        iou_variant: selection.iou_variant,
        k: selection.k,
        pairs: results
            .iter()
            .map(|r| PairReport {
                class: r.class.map_or("all", ClassId::name).to_string(),
                attribute: r.attribute.name().to_string(),
                feature: r.feature_index,
                train_iou: r.train_mean_iou,
                test_iou_mean: r.test_iou_mean,
                test_iou_median: r.test_iou_median,
                test_iou_hist: r.test_iou_hist.clone(),
                roc_area: r.test_activation_split.as_ref().map(|s| s.roc_area),
                whole_object: r.whole_object,
            })
            .collect(),
        skipped: selection.skipped.clone(),
    }
}

/// Scatter rows `sample_id,activation,iou` for one pair.
pub fn write_scatter_csv(w: impl Write, result: &AttributionResult) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["sample_id", "activation", "iou"])?;
    for s in &result.test_scores {
        out.write_record([s.sample_id.clone(), s.activation.to_string(), s.iou.to_string()])?;
    }
    out.flush()?;
    Ok(())
}
