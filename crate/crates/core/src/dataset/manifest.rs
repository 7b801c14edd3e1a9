use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{AttributeId, AttributeSet, ClassId, Dataset, Sample, Split, ATTRIBUTE_NAMES};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{quantize_unit, BinaryMask, ImageTensor, Shape, CHANNELS};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestRecord {
    id: String,
    split: Split,
    class: String,
    image: String,
    object_mask: String,
    attributes: BTreeMap<String, u8>,
    #[serde(default)]
    attribute_masks: BTreeMap<String, String>,
}

/// Loads a JSON Lines manifest. Paths inside records are resolved relative to
/// the manifest's directory; samples keep manifest order.
pub fn load_manifest<T: Scalar>(path: impl AsRef<Path>) -> Result<Dataset<T>> {
    let path = path.as_ref();
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut samples = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ManifestRecord =
            serde_json::from_str(&line).map_err(|e| Error::Manifest {
                line: line_no,
                message: e.to_string(),
            })?;
        samples.push(Arc::new(load_record(&base, line_no, record)?));
    }
    Dataset::new(samples)
}

fn load_record<T: Scalar>(base: &Path, line: usize, rec: ManifestRecord) -> Result<Sample<T>> {
    let malformed = |message: String| Error::Manifest { line, message };
    let class_label = ClassId::from_name(&rec.class)
        .ok_or_else(|| malformed(format!("sample {}: unknown class `{}`", rec.id, rec.class)))?;

    let mut attributes = AttributeSet::empty();
    for name in ATTRIBUTE_NAMES {
        match rec.attributes.get(name) {
            Some(0) => {}
            Some(1) => attributes.insert(AttributeId::from_name(name).expect("known")),
            Some(v) => {
                return Err(malformed(format!(
                    "sample {}: attribute `{name}` must be 0 or 1, got {v}",
                    rec.id
                )))
            }
            None => {
                return Err(malformed(format!(
                    "sample {}: attribute `{name}` missing",
                    rec.id
                )))
            }
        }
    }
    if let Some(unknown) = rec
        .attributes
        .keys()
        .find(|k| AttributeId::from_name(k).is_none())
    {
        return Err(malformed(format!(
            "sample {}: unknown attribute `{unknown}`",
            rec.id
        )));
    }

    let image = read_image::<T>(&base.join(&rec.image), &rec.id)?;
    let shape = image.shape();
    let object_mask = Arc::new(read_mask(&base.join(&rec.object_mask), &rec.id)?);
    object_mask.check_shape(shape, &format!("sample {} object_mask", rec.id))?;

    let mut attribute_masks = BTreeMap::new();
    for (name, rel) in &rec.attribute_masks {
        let attr = AttributeId::from_name(name).ok_or_else(|| {
            malformed(format!("sample {}: unknown attribute mask `{name}`", rec.id))
        })?;
        let mask = read_mask(&base.join(rel), &rec.id)?;
        mask.check_shape(shape, &format!("sample {} attribute mask `{name}`", rec.id))?;
        attribute_masks.insert(attr, Arc::new(mask));
    }
    for attr in attributes.iter().filter(|a| a.is_whole_object()) {
        attribute_masks
            .entry(attr)
            .or_insert_with(|| Arc::clone(&object_mask));
    }

    Ok(Sample {
        id: rec.id,
        split: rec.split,
        image,
        object_mask,
        class_label,
        attributes,
        attribute_masks,
    })
}

fn read_image<T: Scalar>(path: &Path, sample_id: &str) -> Result<ImageTensor<T>> {
    let decoded = open_image(path, sample_id)?.to_rgb8();
    let (w, h) = decoded.dimensions();
    let data = decoded
        .into_raw()
        .into_iter()
        .map(|b| T::lit(b as f64 / 255.0))
        .collect();
    ImageTensor::new(h as usize, w as usize, data).map_err(|e| Error::ImageDecode {
        sample_id: sample_id.to_string(),
        message: e.to_string(),
    })
}

fn read_mask(path: &Path, sample_id: &str) -> Result<BinaryMask> {
    let decoded = open_image(path, sample_id)?.to_luma8();
    let (w, h) = decoded.dimensions();
    BinaryMask::from_luma8(Shape::new(h as usize, w as usize), decoded.as_raw())
}

fn open_image(path: &Path, sample_id: &str) -> Result<image::DynamicImage> {
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("file referenced by sample {sample_id} not found"),
            ),
        ));
    }
    image::open(path).map_err(|e| Error::ImageDecode {
        sample_id: sample_id.to_string(),
        message: format!("{}: {e}", path.display()),
    })
}

/// Writes `dataset` as PNG files plus a manifest at `dir/manifest_name`.
/// Whole-object attribute masks are not stored; the loader aliases them.
/// Images are quantised to 8 bits (round half up).
pub fn save_manifest<T: Scalar>(
    dataset: &Dataset<T>,
    dir: impl AsRef<Path>,
    manifest_name: &str,
) -> Result<PathBuf> {
    let dir = dir.as_ref();
    for sub in ["images", "masks"] {
        std::fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
    }
    let manifest_path = dir.join(manifest_name);
    let file = File::create(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let mut out = BufWriter::new(file);

    for (index, s) in dataset.iter().enumerate() {
        let stem = format!("{index:06}_{}", sanitize(&s.id));
        let image_rel = format!("images/{stem}.png");
        write_rgb(&dir.join(&image_rel), &s.image)?;
        let mask_rel = format!("masks/{stem}_object.png");
        write_mask(&dir.join(&mask_rel), &s.object_mask)?;

        let mut attribute_masks = BTreeMap::new();
        for (attr, mask) in &s.attribute_masks {
            if attr.is_whole_object() && Arc::ptr_eq(mask, &s.object_mask) {
                continue;
            }
            let rel = format!("masks/{stem}_{}.png", attr.name());
            write_mask(&dir.join(&rel), mask)?;
            attribute_masks.insert(attr.name().to_string(), rel);
        }
        let record = ManifestRecord {
            id: s.id.clone(),
            split: s.split,
            class: s.class_label.name().to_string(),
            image: image_rel,
            object_mask: mask_rel,
            attributes: AttributeId::all()
                .map(|a| (a.name().to_string(), s.attributes.contains(a) as u8))
                .collect(),
            attribute_masks,
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n").map_err(|e| Error::io(&manifest_path, e))?;
    }
    out.flush().map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest_path)
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

fn write_rgb<T: Scalar>(path: &Path, img: &ImageTensor<T>) -> Result<()> {
    debug_assert_eq!(img.data().len(), img.shape().pixels() * CHANNELS);
    let bytes: Vec<u8> = img
        .data()
        .iter()
        .map(|v| quantize_unit(v.to_f64_lossy()))
        .collect();
    image::save_buffer(
        path,
        &bytes,
        img.width() as u32,
        img.height() as u32,
        image::ExtendedColorType::Rgb8,
    )
    .map_err(|e| Error::io(path, std::io::Error::other(e)))
}

fn write_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    image::save_buffer(
        path,
        &mask.to_luma8(),
        mask.shape().width as u32,
        mask.shape().height as u32,
        image::ExtendedColorType::L8,
    )
    .map_err(|e| Error::io(path, std::io::Error::other(e)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sanitize_keeps_safe_chars() {
        assert_eq!(sanitize("n0123/abc.JPEG"), "n0123_abc_JPEG");
    }
}
