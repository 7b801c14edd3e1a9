//! Accuracy under gray ablation of the background or of single attributes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sweep::accuracy;
use crate::bridge::{fit_linear_head, Bridge, HeadHyper};
use crate::corruption::{attribute_ablate, gray_ablate, Region};
use crate::dataset::{AttributeId, Dataset, Sample, Split};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::ImageTensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundRemovalReport {
    pub clean_acc: f64,
    pub ablated_acc: f64,
    /// Test accuracy of a fresh head fit on background-ablated train images.
    pub finetuned_ablated_acc: Option<f64>,
    pub finetune_epoch_losses: Option<Vec<f64>>,
    pub n_test: usize,
    pub n_train: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeAblationReport {
    pub attribute: String,
    pub n: usize,
    pub clean_acc: f64,
    pub ablated_acc: f64,
}

fn ablate_background<T: Scalar>(samples: &[&Sample<T>]) -> Result<Vec<ImageTensor<T>>> {
    samples
        .par_iter()
        .map(|s| gray_ablate(&s.image, &s.object_mask, Region::Background))
        .collect()
}

/// Clean and background-grayed accuracy on the test split. With `finetune`,
/// a new linear head is then fit on background-grayed train images and
/// installed in the backend, replacing the previous head.
pub fn background_removal_eval<T: Scalar>(
    bridge: &mut Bridge<T>,
    ds: &Dataset<T>,
    finetune: Option<&HeadHyper>,
) -> Result<BackgroundRemovalReport> {
    let test: Vec<&Sample<T>> = ds.iter().filter(|s| s.split == Split::Test).collect();
    if test.is_empty() {
        return Err(Error::InvalidArgument("background removal needs test samples".into()));
    }
    let labels: Vec<usize> = test.iter().map(|s| s.class_label.index()).collect();
    let clean: Vec<&ImageTensor<T>> = test.iter().map(|s| &s.image).collect();
    let clean_acc = accuracy(bridge, &clean, &labels)?;
    let ablated = ablate_background(&test)?;
    let ablated_refs: Vec<&ImageTensor<T>> = ablated.iter().collect();
    let ablated_acc = accuracy(bridge, &ablated_refs, &labels)?;

    let train: Vec<&Sample<T>> = ds.iter().filter(|s| s.split == Split::Train).collect();
    let (finetuned_ablated_acc, finetune_epoch_losses) = match finetune {
        None => (None, None),
        Some(hyper) => {
            if train.is_empty() {
                return Err(Error::InvalidArgument("finetuning needs train samples".into()));
            }
            let train_imgs = ablate_background(&train)?;
            let refs: Vec<&ImageTensor<T>> = train_imgs.iter().collect();
            let feats = bridge.get_features(&refs)?;
            let train_labels: Vec<usize> = train.iter().map(|s| s.class_label.index()).collect();
            let report = fit_linear_head(&feats.features, &train_labels, bridge.n_classes(), hyper)?;
            bridge.set_head(&report.head)?;
            (Some(accuracy(bridge, &ablated_refs, &labels)?), Some(report.epoch_losses))
        }
    };
    Ok(BackgroundRemovalReport {
        clean_acc,
        ablated_acc,
        finetuned_ablated_acc,
        finetune_epoch_losses,
        n_test: test.len(),
        n_train: train.len(),
    })
}

/// Clean versus attribute-grayed accuracy over the samples of `ds` that
/// carry `attr`.
pub fn attribute_ablation_eval<T: Scalar>(
    bridge: &mut Bridge<T>,
    ds: &Dataset<T>,
    attr: AttributeId,
) -> Result<AttributeAblationReport> {
    let pool: Vec<&Sample<T>> = ds.iter().filter(|s| s.has_attribute(attr)).collect();
    if pool.is_empty() {
        return Err(Error::EmptyRegion(format!("no sample carries `{attr}`")));
    }
    let labels: Vec<usize> = pool.iter().map(|s| s.class_label.index()).collect();
    let clean: Vec<&ImageTensor<T>> = pool.iter().map(|s| &s.image).collect();
    let clean_acc = accuracy(bridge, &clean, &labels)?;
    let ablated: Vec<ImageTensor<T>> = pool
        .par_iter()
        .map(|s| attribute_ablate(s, attr))
        .collect::<Result<_>>()?;
    let refs: Vec<&ImageTensor<T>> = ablated.iter().collect();
    Ok(AttributeAblationReport {
        attribute: attr.name().to_string(),
        n: pool.len(),
        clean_acc,
        ablated_acc: accuracy(bridge, &refs, &labels)?,
    })
}
