use std::fmt;

use serde::Serialize;

use super::{AttributeId, Dataset, Sample};
use crate::scalar::Scalar;
use crate::tensor::MIN_IMAGE_SIDE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationRule {
    ImageTooSmall,
    ImageValueOutOfRange,
    ObjectMaskShapeMismatch,
    UnknownClass,
    MissingAttributeMask,
    MaskForAbsentAttribute,
    AttributeMaskShapeMismatch,
    WholeObjectAttributeMaskMismatch,
}

impl fmt::Display for ViolationRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ViolationRule::ImageTooSmall => "image too small",
            ViolationRule::ImageValueOutOfRange => "image value out of range",
            ViolationRule::ObjectMaskShapeMismatch => "object mask shape mismatch",
            ViolationRule::UnknownClass => "unknown class",
            ViolationRule::MissingAttributeMask => "missing attribute mask",
            ViolationRule::MaskForAbsentAttribute => "mask for absent attribute",
            ViolationRule::AttributeMaskShapeMismatch => "attribute mask shape mismatch",
            ViolationRule::WholeObjectAttributeMaskMismatch => {
                "whole-object attribute mask mismatch"
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub sample_id: String,
    pub field: String,
    pub rule: ViolationRule,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}: {}", self.sample_id, self.field, self.rule)
    }
}

/// Lists every broken sample invariant; empty iff the sample is well formed.
pub fn validate_sample<T: Scalar>(s: &Sample<T>) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut flag = |field: String, rule| {
        out.push(Violation {
            sample_id: s.id.clone(),
            field,
            rule,
        })
    };

    let shape = s.image.shape();
    if shape.height < MIN_IMAGE_SIDE || shape.width < MIN_IMAGE_SIDE {
        flag("image".into(), ViolationRule::ImageTooSmall);
    }
    if s
        .image
        .data()
        .iter()
        .any(|v| !(*v >= T::zero() && *v <= T::one()))
    {
        flag("image".into(), ViolationRule::ImageValueOutOfRange);
    }
    if s.object_mask.shape() != shape {
        flag("object_mask".into(), ViolationRule::ObjectMaskShapeMismatch);
    }
    if !s.class_label.is_known() {
        flag("class_label".into(), ViolationRule::UnknownClass);
    }

    for attr in AttributeId::all() {
        let field = format!("attribute_masks.{}", attr.name());
        let positive = s.attributes.contains(attr);
        match (positive, s.attribute_masks.get(&attr)) {
            (true, None) => flag(field, ViolationRule::MissingAttributeMask),
            (false, Some(_)) => flag(field, ViolationRule::MaskForAbsentAttribute),
            (true, Some(mask)) => {
                if mask.shape() != shape {
                    flag(field, ViolationRule::AttributeMaskShapeMismatch);
                } else if attr.is_whole_object() && **mask != *s.object_mask {
                    flag(field, ViolationRule::WholeObjectAttributeMaskMismatch);
                }
            }
            (false, None) => {}
        }
    }
    out
}

pub fn validate_dataset<T: Scalar>(ds: &Dataset<T>) -> Vec<Violation> {
    ds.iter().flat_map(validate_sample).collect()
}
