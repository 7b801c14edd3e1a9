//! Synthetic mask-annotated datasets whose class signal lives entirely in the
//! foreground or entirely in the background.
//!
//! Layout of every sample:
//! * one rectangle or ellipse object covering 20-60% of the image;
//! * foreground-coded: object painted in the class colour (plus small per-sample
//!   jitter and per-pixel texture), background a constant 0.5 gray;
//! * background-coded: background painted in the class colour, object a
//!   random class-independent gray level;
//! * attribute `text` (the marker) is an 8x8 square, aligned to multiples of 8,
//!   painted in [`MARKER_COLOR`] inside the object for about half the samples;
//! * each class owns one part attribute (label and mask only, lower third of
//!   the object), `metallic` marks odd classes and `patterned` is a coin flip
//!   with no visual effect.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AttributeId, AttributeSet, ClassId, Dataset, Sample, Split};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seeding::{combine, rng_from};
use crate::tensor::{BinaryMask, ImageTensor, Shape};

pub const CLASS_PALETTE: [[f64; 3]; 10] = [
    [0.85, 0.15, 0.10],
    [0.15, 0.80, 0.10],
    [0.85, 0.80, 0.10],
    [0.35, 0.35, 0.02],
    [0.90, 0.50, 0.10],
    [0.50, 0.90, 0.10],
    [0.60, 0.20, 0.15],
    [0.20, 0.60, 0.15],
    [0.95, 0.95, 0.60],
    [0.70, 0.70, 0.30],
];

pub const MARKER_COLOR: [f64; 3] = [0.05, 0.05, 0.95];
pub const MARKER_ATTRIBUTE: &str = "text";

/// Part attribute owned by each class.
const CLASS_PART_ATTRIBUTES: [&str; 10] = [
    "beak",
    "wheels",
    "ears",
    "horns",
    "floppy-ears",
    "mane",
    "colored-eyes",
    "wings",
    "tail",
    "long-snout",
];

const BACKGROUND_GRAY: f64 = 0.5;
const JITTER: f64 = 0.03;
const TEXTURE: f64 = 0.03;
const MARKER_SIDE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Coding {
    ForegroundCoded,
    BackgroundCoded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_samples: usize,
    pub image_size: usize,
    pub coding: Coding,
    pub n_classes: usize,
    pub seed: u64,
    /// Fraction of samples assigned to the test split (taken from the end).
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
}

fn default_test_fraction() -> f64 {
    0.25
}

impl SynthSpec {
    pub fn new(n_samples: usize, image_size: usize, coding: Coding, n_classes: usize, seed: u64) -> Self {
        Self {
            n_samples,
            image_size,
            coding,
            n_classes,
            seed,
            test_fraction: default_test_fraction(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_samples < 1 {
            return Err(Error::InvalidArgument("n_samples must be >= 1".into()));
        }
        if self.image_size < 16 {
            return Err(Error::InvalidArgument("image_size must be >= 16".into()));
        }
        if !(2..=CLASS_PALETTE.len()).contains(&self.n_classes) {
            return Err(Error::InvalidArgument(format!(
                "n_classes must be in 2..={}",
                CLASS_PALETTE.len()
            )));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::InvalidArgument(
                "test_fraction must be in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Generates a deterministic dataset for `spec`; identical specs give
/// bitwise-identical datasets.
pub fn synth_dataset<T: Scalar>(spec: &SynthSpec) -> Result<Dataset<T>> {
    spec.validate()?;
    let mut labels: Vec<usize> = (0..spec.n_samples).map(|i| i % spec.n_classes).collect();
    labels.shuffle(&mut rng_from(combine(spec.seed, &[0x5EED])));
    let n_test = (spec.n_samples as f64 * spec.test_fraction).round() as usize;
    let n_train = spec.n_samples - n_test;

    let samples = labels
        .iter()
        .enumerate()
        .map(|(i, &label)| {
            let split = if i < n_train { Split::Train } else { Split::Test };
            synth_sample(spec, i, ClassId(label as u8), split)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::from_samples(samples)
}

#[derive(Clone, Copy)]
enum Blob {
    Rect { y0: usize, x0: usize, h: usize, w: usize },
    Ellipse { cy: f64, cx: f64, ry: f64, rx: f64 },
}

impl Blob {
    fn contains(&self, y: usize, x: usize) -> bool {
        match *self {
            Blob::Rect { y0, x0, h, w } => y >= y0 && y < y0 + h && x >= x0 && x < x0 + w,
            Blob::Ellipse { cy, cx, ry, rx } => {
                let dy = (y as f64 + 0.5 - cy) / ry;
                let dx = (x as f64 + 0.5 - cx) / rx;
                dy * dy + dx * dx <= 1.0
            }
        }
    }
}

fn random_blob(rng: &mut ChaCha8Rng, size: usize) -> BinaryMask {
    let shape = Shape::new(size, size);
    let total = (size * size) as f64;
    loop {
        let area = rng.random_range(0.25..0.55) * total;
        let aspect: f64 = rng.random_range(0.6..1.6);
        let blob = if rng.random_bool(0.5) {
            let w = ((area * aspect).sqrt().round() as usize).clamp(1, size);
            let h = ((area / w as f64).round() as usize).clamp(1, size);
            Blob::Rect {
                y0: rng.random_range(0..=size - h),
                x0: rng.random_range(0..=size - w),
                h,
                w,
            }
        } else {
            let rx = (area * aspect / std::f64::consts::PI).sqrt().min(size as f64 / 2.0);
            let ry = (area / (std::f64::consts::PI * rx)).min(size as f64 / 2.0);
            Blob::Ellipse {
                cy: rng.random_range(ry..=size as f64 - ry),
                cx: rng.random_range(rx..=size as f64 - rx),
                ry,
                rx,
            }
        };
        let mask = BinaryMask::from_fn(shape, |y, x| blob.contains(y, x));
        let frac = mask.count() as f64 / total;
        if (0.2..=0.6).contains(&frac) {
            return mask;
        }
    }
}

fn jittered(rng: &mut ChaCha8Rng, base: [f64; 3]) -> [f64; 3] {
    base.map(|c| (c + rng.random_range(-JITTER..=JITTER)).clamp(0.0, 1.0))
}

/// Candidate top-left corners of aligned marker squares fully inside `mask`.
fn marker_slots(mask: &BinaryMask) -> Vec<(usize, usize)> {
    let size = mask.shape().height;
    let mut slots = Vec::new();
    let mut y = 0;
    while y + MARKER_SIDE <= size {
        let mut x = 0;
        while x + MARKER_SIDE <= size {
            let inside = (y..y + MARKER_SIDE)
                .all(|yy| (x..x + MARKER_SIDE).all(|xx| mask.get(yy, xx)));
            if inside {
                slots.push((y, x));
            }
            x += MARKER_SIDE;
        }
        y += MARKER_SIDE;
    }
    slots
}

fn lower_third(mask: &BinaryMask) -> BinaryMask {
    let shape = mask.shape();
    let rows: Vec<usize> = (0..shape.height)
        .filter(|&y| (0..shape.width).any(|x| mask.get(y, x)))
        .collect();
    let (top, bottom) = (rows[0], *rows.last().expect("nonempty object"));
    let cut = bottom + 1 - ((bottom + 1 - top) / 3).max(1);
    BinaryMask::from_fn(shape, |y, x| y >= cut && mask.get(y, x))
}

fn synth_sample<T: Scalar>(spec: &SynthSpec, index: usize, class: ClassId, split: Split) -> Result<Sample<T>> {
    let mut rng = rng_from(combine(spec.seed, &[index as u64]));
    let size = spec.image_size;
    let object = random_blob(&mut rng, size);

    let class_color = jittered(&mut rng, CLASS_PALETTE[class.index()]);
    let (fg_color, bg_color) = match spec.coding {
        Coding::ForegroundCoded => (class_color, [BACKGROUND_GRAY; 3]),
        Coding::BackgroundCoded => {
            let g = rng.random_range(0.3..0.7);
            ([g; 3], class_color)
        }
    };

    let marker_slot = {
        let slots = marker_slots(&object);
        let wanted = rng.random_bool(0.5);
        (wanted && !slots.is_empty()).then(|| slots[rng.random_range(0..slots.len())])
    };
    let marker = marker_slot.map(|(my, mx)| {
        BinaryMask::from_fn(object.shape(), |y, x| {
            y >= my && y < my + MARKER_SIDE && x >= mx && x < mx + MARKER_SIDE
        })
    });

    let textured_bg = spec.coding == Coding::BackgroundCoded;
    let mut data = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let texture = rng.random_range(-TEXTURE..=TEXTURE);
            let px = if marker.as_ref().is_some_and(|m| m.get(y, x)) {
                MARKER_COLOR
            } else if object.get(y, x) {
                fg_color.map(|c| c + texture)
            } else if textured_bg {
                bg_color.map(|c| c + texture)
            } else {
                bg_color
            };
            // Snap to the 8-bit grid so the dataset survives a PNG round trip.
            data.extend(px.map(|c| T::lit((c.clamp(0.0, 1.0) * 255.0).round() / 255.0)));
        }
    }
    let image = ImageTensor::new(size, size, data)?;

    let object = Arc::new(object);
    let mut attributes = AttributeSet::empty();
    let mut attribute_masks = BTreeMap::new();

    let part = AttributeId::from_name(CLASS_PART_ATTRIBUTES[class.index()]).expect("known");
    attributes.insert(part);
    attribute_masks.insert(part, Arc::new(lower_third(&object)));

    if let Some(m) = marker {
        let text = AttributeId::from_name(MARKER_ATTRIBUTE).expect("known");
        attributes.insert(text);
        attribute_masks.insert(text, Arc::new(m));
    }
    let metallic = AttributeId::from_name("metallic").expect("known");
    if class.0 % 2 == 1 {
        attributes.insert(metallic);
        attribute_masks.insert(metallic, Arc::clone(&object));
    }
    let patterned = AttributeId::from_name("patterned").expect("known");
    if rng.random_bool(0.5) {
        attributes.insert(patterned);
        attribute_masks.insert(patterned, Arc::clone(&object));
    }

    Ok(Sample {
        id: format!("synth-{index:05}"),
        split,
        image,
        object_mask: object,
        class_label: class,
        attributes,
        attribute_masks,
    })
}
