//! Mask-annotated image datasets: domain types, the JSON Lines manifest
//! format, sample validation, synthetic fixtures and the attribute probe.

mod manifest;
mod probe;
mod synth;
mod validate;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{BinaryMask, ImageTensor};

pub use manifest::{load_manifest, save_manifest};
pub use probe::{attribute_linear_probe, ProbeOptions, ProbeResult};
pub use synth::{synth_dataset, Coding, SynthSpec, CLASS_PALETTE, MARKER_ATTRIBUTE, MARKER_COLOR};
pub use validate::{validate_dataset, validate_sample, Violation, ViolationRule};

pub const CLASS_NAMES: [&str; 10] = [
    "bird", "car", "cat", "deer", "dog", "equine", "frog", "plane", "ship", "truck",
];

pub const ATTRIBUTE_NAMES: [&str; 18] = [
    "beak",
    "colored-eyes",
    "ears",
    "floppy-ears",
    "hairy",
    "horns",
    "long",
    "long-snout",
    "mane",
    "metallic",
    "patterned",
    "rectangular",
    "tail",
    "tall",
    "text",
    "wet",
    "wheels",
    "wings",
];

/// Attributes that describe the whole object; their mask is the object mask.
pub const WHOLE_OBJECT_ATTRIBUTES: [&str; 7] = [
    "metallic",
    "hairy",
    "wet",
    "tall",
    "long",
    "rectangular",
    "patterned",
];

/// Index into [`CLASS_NAMES`]; serialised by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ClassId(pub u8);

impl ClassId {
    pub fn from_name(name: &str) -> Option<Self> {
        CLASS_NAMES
            .iter()
            .position(|n| *n == name)
            .map(|i| ClassId(i as u8))
    }

    pub fn name(self) -> &'static str {
        CLASS_NAMES.get(self.0 as usize).copied().unwrap_or("?")
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn is_known(self) -> bool {
        (self.0 as usize) < CLASS_NAMES.len()
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Index into [`ATTRIBUTE_NAMES`]; serialised by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AttributeId(pub u8);

impl AttributeId {
    pub fn from_name(name: &str) -> Option<Self> {
        ATTRIBUTE_NAMES
            .iter()
            .position(|n| *n == name)
            .map(|i| AttributeId(i as u8))
    }

    pub fn name(self) -> &'static str {
        ATTRIBUTE_NAMES[self.0 as usize]
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn is_whole_object(self) -> bool {
        WHOLE_OBJECT_ATTRIBUTES.contains(&self.name())
    }

    pub fn all() -> impl Iterator<Item = AttributeId> {
        (0..ATTRIBUTE_NAMES.len() as u8).map(AttributeId)
    }
}

impl fmt::Display for AttributeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

macro_rules! serde_by_name {
    ($ty:ty, $what:literal) => {
        impl Serialize for $ty {
            fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                s.serialize_str(self.name())
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                let name = String::deserialize(d)?;
                <$ty>::from_name(&name)
                    .ok_or_else(|| serde::de::Error::custom(format!(concat!("unknown ", $what, " `{}`"), name)))
            }
        }
    };
}

serde_by_name!(ClassId, "class");
serde_by_name!(AttributeId, "attribute");

/// 18-bit attribute label vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct AttributeSet(u32);

impl AttributeSet {
    pub fn empty() -> Self {
        Self(0)
    }

    pub fn contains(self, attr: AttributeId) -> bool {
        self.0 >> attr.0 & 1 == 1
    }

    pub fn insert(&mut self, attr: AttributeId) {
        self.0 |= 1 << attr.0;
    }

    pub fn remove(&mut self, attr: AttributeId) {
        self.0 &= !(1 << attr.0);
    }

    pub fn iter(self) -> impl Iterator<Item = AttributeId> {
        AttributeId::all().filter(move |a| self.contains(*a))
    }

    /// Dense 0/1 vector in attribute order.
    pub fn to_vec(self) -> Vec<f64> {
        AttributeId::all()
            .map(|a| if self.contains(a) { 1.0 } else { 0.0 })
            .collect()
    }

    pub fn bits(self) -> u32 {
        self.0
    }
}

impl FromIterator<AttributeId> for AttributeSet {
    fn from_iter<I: IntoIterator<Item = AttributeId>>(iter: I) -> Self {
        let mut s = AttributeSet::empty();
        for a in iter {
            s.insert(a);
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub id: String,
    pub split: Split,
    pub image: ImageTensor<T>,
    pub object_mask: Arc<BinaryMask>,
    pub class_label: ClassId,
    pub attributes: AttributeSet,
    /// Present for positive attributes; whole-object attributes alias `object_mask`.
    pub attribute_masks: BTreeMap<AttributeId, Arc<BinaryMask>>,
}

impl<T: Scalar> Sample<T> {
    pub fn attribute_mask(&self, attr: AttributeId) -> Option<&BinaryMask> {
        self.attribute_masks.get(&attr).map(|m| m.as_ref())
    }

    pub fn has_attribute(&self, attr: AttributeId) -> bool {
        self.attributes.contains(attr)
    }
}

/// Ordered, immutable collection of samples with unique ids.
#[derive(Debug, Clone)]
pub struct Dataset<T> {
    samples: Vec<Arc<Sample<T>>>,
    attribute_names: Vec<String>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(samples: Vec<Arc<Sample<T>>>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(samples.len());
        for s in &samples {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate sample id `{}`",
                    s.id
                )));
            }
        }
        Ok(Self {
            samples,
            attribute_names: ATTRIBUTE_NAMES.iter().map(|s| s.to_string()).collect(),
        })
    }

    pub fn from_samples(samples: Vec<Sample<T>>) -> Result<Self> {
        Self::new(samples.into_iter().map(Arc::new).collect())
    }

    pub fn samples(&self) -> &[Arc<Sample<T>>] {
        &self.samples
    }

    pub fn attribute_names(&self) -> &[String] {
        &self.attribute_names
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Sample<T>> {
        self.samples.iter().map(|s| s.as_ref())
    }

    /// The split shared by every sample, if uniform.
    pub fn split(&self) -> Option<Split> {
        let first = self.samples.first()?.split;
        self.samples
            .iter()
            .all(|s| s.split == first)
            .then_some(first)
    }

    pub fn filter_split(&self, split: Split) -> Dataset<T> {
        self.filter(|s| s.split == split)
    }

    pub fn filter(&self, keep: impl Fn(&Sample<T>) -> bool) -> Dataset<T> {
        Dataset {
            samples: self
                .samples
                .iter()
                .filter(|s| keep(s))
                .cloned()
                .collect(),
            attribute_names: self.attribute_names.clone(),
        }
    }

    pub fn get(&self, id: &str) -> Option<&Sample<T>> {
        self.iter().find(|s| s.id == id)
    }

    pub fn labels(&self) -> HashMap<String, ClassId> {
        self.iter().map(|s| (s.id.clone(), s.class_label)).collect()
    }

    /// Sorted class ids present in the dataset.
    pub fn classes(&self) -> Vec<ClassId> {
        let mut c: Vec<ClassId> = self.iter().map(|s| s.class_label).collect();
        c.sort();
        c.dedup();
        c
    }
}
