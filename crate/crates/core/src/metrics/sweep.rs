//! Region noise sweeps with a resumable JSONL checkpoint.

use std::collections::{HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bridge::{Bridge, PredictionBatch};
use crate::corruption::{apply_region_noise, l2_normalize_noise, trial_noise, NoiseKind, Region};
use crate::dataset::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seeding::fnv1a64;
use crate::tensor::ImageTensor;

/// Images sent to the backend per checkpoint flush.
const IMAGES_PER_FLUSH: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub kind: NoiseKind,
    pub levels: Vec<f64>,
    pub trials: usize,
    pub regions: Vec<Region>,
    pub base_seed: u64,
}

impl SweepSpec {
    /// Default protocol for `kind`: its standard levels, 10 trials, foreground and background.
    pub fn new(kind: NoiseKind, base_seed: u64) -> Self {
        Self {
            kind,
            levels: kind.default_levels(),
            trials: 10,
            regions: vec![Region::Foreground, Region::Background],
            base_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::InvalidArgument("sweep needs at least one level".into()));
        }
        if self.trials == 0 {
            return Err(Error::InvalidArgument("sweep needs at least one trial".into()));
        }
        if self.regions.is_empty() {
            return Err(Error::InvalidArgument("sweep needs at least one region".into()));
        }
        let mut seen = HashSet::new();
        for r in &self.regions {
            if matches!(r, Region::Attribute(_)) {
                return Err(Error::InvalidArgument(format!(
                    "sweep regions must be foreground, background or full, got {r}"
                )));
            }
            if !seen.insert(*r) {
                return Err(Error::InvalidArgument(format!("region {r} listed twice")));
            }
        }
        for &l in &self.levels {
            let ok = l.is_finite() && l > 0.0 && (self.kind != NoiseKind::LinfGaussian || l <= 1.0);
            if !ok {
                return Err(Error::InvalidArgument(format!("invalid {} level {l}", self.kind)));
            }
        }
        Ok(())
    }

    /// `|samples| * |regions| * |levels| * trials`.
    pub fn expected_records(&self, n_samples: usize) -> usize {
        n_samples * self.regions.len() * self.levels.len() * self.trials
    }
}

/// One corrupted image's model response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub sample_id: String,
    pub region: Region,
    pub kind: NoiseKind,
    pub level_index: usize,
    pub trial: usize,
    pub probs: Vec<f64>,
    pub correct: bool,
}

type Key = (String, Region, usize, usize);

impl TrialRecord {
    fn key(&self) -> Key {
        (self.sample_id.clone(), self.region, self.level_index, self.trial)
    }
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct CheckpointMeta {
    spec: SweepSpec,
    n_samples: usize,
    dataset_fingerprint: u64,
}

fn fingerprint<T: Scalar>(ds: &Dataset<T>) -> u64 {
    let ids: Vec<&str> = ds.iter().map(|s| s.id.as_str()).collect();
    fnv1a64(&ids.join("\n"))
}

fn meta_path(checkpoint: &Path) -> PathBuf {
    let mut p = checkpoint.as_os_str().to_owned();
    p.push(".meta.json");
    PathBuf::from(p)
}

/// Corrupted images of one (sample, level, trial) for the requested regions.
/// All regions share one noise draw.
fn corrupt<T: Scalar>(
    sample: &Sample<T>,
    spec: &SweepSpec,
    level_index: usize,
    trial: usize,
    regions: &[Region],
) -> Result<Vec<ImageTensor<T>>> {
    let x = &sample.image;
    let m = &*sample.object_mask;
    let level = spec.levels[level_index];
    let noise = trial_noise::<T>(x.shape(), spec.kind, level, spec.base_seed, &sample.id, level_index, trial)?;
    regions
        .iter()
        .map(|&r| match spec.kind {
            NoiseKind::LinfGaussian => apply_region_noise(x, m, &noise, r),
            NoiseKind::L2Normalized => {
                if !m.data().iter().any(|&inside| r.weight(inside)) {
                    return Ok(x.clone());
                }
                let scaled = l2_normalize_noise(&noise, m, r, level)?;
                apply_region_noise(x, m, &scaled, r)
            }
        })
        .collect()
}

fn load_checkpoint<T: Scalar>(path: &Path, ds: &Dataset<T>, spec: &SweepSpec) -> Result<Vec<TrialRecord>> {
    let meta = CheckpointMeta {
        spec: spec.clone(),
        n_samples: ds.len(),
        dataset_fingerprint: fingerprint(ds),
    };
    let mpath = meta_path(path);
    if !path.exists() {
        fs::write(&mpath, serde_json::to_vec_pretty(&meta)?).map_err(|e| Error::io(&mpath, e))?;
        File::create(path).map_err(|e| Error::io(path, e))?;
        return Ok(Vec::new());
    }
    let stored: CheckpointMeta = match fs::read(&mpath) {
        Ok(bytes) => serde_json::from_slice(&bytes)?,
        Err(e) => return Err(Error::io(&mpath, e)),
    };
    if stored != meta {
        return Err(Error::InvalidArgument(format!(
            "checkpoint {} was written for a different sweep or dataset",
            path.display()
        )));
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    let mut truncated = false;
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<TrialRecord>(&line) {
            Ok(r) => records.push(r),
            // A torn final line from an interrupted write; it is rewritten below.
            Err(_) if !truncated => truncated = true,
            Err(e) => return Err(e.into()),
        }
    }
    if truncated {
        let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        for r in &records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }
    Ok(records)
}

/// Runs every (sample, region, level, trial) of `spec` through the bridge and
/// returns the records in canonical order: dataset order, then level, trial
/// and the order of `spec.regions`.
///
/// With a checkpoint path, each batch of records is appended as JSONL before
/// the next batch starts, and keys already present are not recomputed. A
/// failure mid-run leaves the checkpoint in place and is reported as
/// [`Error::SweepInterrupted`].
pub fn noise_sweep<T: Scalar>(
    bridge: &mut Bridge<T>,
    ds: &Dataset<T>,
    spec: &SweepSpec,
    checkpoint: Option<&Path>,
) -> Result<Vec<TrialRecord>> {
    spec.validate()?;
    if ds.is_empty() {
        return Err(Error::InvalidArgument("sweep over an empty dataset".into()));
    }
    let mut done: HashMap<Key, TrialRecord> = HashMap::new();
    if let Some(path) = checkpoint {
        for r in load_checkpoint(path, ds, spec)? {
            if ds.get(&r.sample_id).is_none()
                || r.kind != spec.kind
                || r.level_index >= spec.levels.len()
                || r.trial >= spec.trials
                || !spec.regions.contains(&r.region)
            {
                return Err(Error::InvalidArgument(format!(
                    "checkpoint record for {} is outside the sweep",
                    r.sample_id
                )));
            }
            done.insert(r.key(), r);
        }
    }

    // Work items in canonical order, each with its still-missing regions.
    let mut work: Vec<(usize, usize, usize, Vec<Region>)> = Vec::new();
    for (si, s) in ds.iter().enumerate() {
        for li in 0..spec.levels.len() {
            for ti in 0..spec.trials {
                let missing: Vec<Region> = spec
                    .regions
                    .iter()
                    .copied()
                    .filter(|r| !done.contains_key(&(s.id.clone(), *r, li, ti)))
                    .collect();
                if !missing.is_empty() {
                    work.push((si, li, ti, missing));
                }
            }
        }
    }

    let mut sink = match checkpoint {
        Some(path) => Some(BufWriter::new(
            OpenOptions::new().append(true).open(path).map_err(|e| Error::io(path, e))?,
        )),
        None => None,
    };
    let samples = ds.samples();
    let items_per_flush = (IMAGES_PER_FLUSH / spec.regions.len()).max(1);
    for chunk in work.chunks(items_per_flush) {
        let mut step = || -> Result<Vec<TrialRecord>> {
            let images: Vec<Vec<ImageTensor<T>>> = chunk
                .par_iter()
                .map(|(si, li, ti, regions)| corrupt(&samples[*si], spec, *li, *ti, regions))
                .collect::<Result<_>>()?;
            let refs: Vec<&ImageTensor<T>> = images.iter().flatten().collect();
            let batch = bridge.predict_probs(&refs)?;
            let predicted = batch.argmax();
            let mut out = Vec::with_capacity(refs.len());
            let mut k = 0;
            for (si, li, ti, regions) in chunk {
                let s = &samples[*si];
                for &r in regions {
                    out.push(TrialRecord {
                        sample_id: s.id.clone(),
                        region: r,
                        kind: spec.kind,
                        level_index: *li,
                        trial: *ti,
                        probs: batch.probs[k].iter().map(|v| v.to_f64_lossy()).collect(),
                        correct: predicted[k] == s.class_label.index(),
                    });
                    k += 1;
                }
            }
            Ok(out)
        };
        let fresh = match step() {
            Ok(r) => r,
            Err(e) => {
                return Err(Error::SweepInterrupted {
                    completed: done.len(),
                    source: Box::new(e),
                })
            }
        };
        if let Some(w) = sink.as_mut() {
            for r in &fresh {
                serde_json::to_writer(&mut *w, r)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
        }
        for r in fresh {
            done.insert(r.key(), r);
        }
    }

    let mut out = Vec::with_capacity(done.len());
    for s in ds.iter() {
        for li in 0..spec.levels.len() {
            for ti in 0..spec.trials {
                for &r in &spec.regions {
                    let rec = done
                        .remove(&(s.id.clone(), r, li, ti))
                        .expect("every key computed or restored");
                    out.push(rec);
                }
            }
        }
    }
    Ok(out)
}

pub fn write_trials_jsonl(path: &Path, records: &[TrialRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_trials_jsonl(path: &Path) -> Result<Vec<TrialRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Accuracy of the backend's argmax predictions on `images` against `labels`.
pub(crate) fn accuracy<T: Scalar>(
    bridge: &mut Bridge<T>,
    images: &[&ImageTensor<T>],
    labels: &[usize],
) -> Result<f64> {
    let batch: PredictionBatch<T> = bridge.predict_probs(images)?;
    let hits = batch.argmax().iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_specs_follow_protocol() {
        let s = SweepSpec::new(NoiseKind::LinfGaussian, 1);
        assert_eq!(s.levels.len(), 7);
        assert!((s.levels[0] - 30.0 / 255.0).abs() < 1e-15);
        assert_eq!(s.trials, 10);
        assert_eq!(s.expected_records(5308), 743_120);
        assert_eq!(SweepSpec::new(NoiseKind::L2Normalized, 1).levels, vec![25.0, 50.0, 75.0, 100.0, 125.0, 150.0, 175.0, 200.0]);
    }

    #[test]
    fn invalid_specs() {
        let mut s = SweepSpec::new(NoiseKind::LinfGaussian, 1);
        s.levels.push(1.5);
        assert!(s.validate().is_err());
        let mut s = SweepSpec::new(NoiseKind::LinfGaussian, 1);
        s.regions.push(Region::Foreground);
        assert!(s.validate().is_err());
        let mut s = SweepSpec::new(NoiseKind::LinfGaussian, 1);
        s.trials = 0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn record_json_shape() {
        let r = TrialRecord {
            sample_id: "a".into(),
            region: Region::Background,
            kind: NoiseKind::LinfGaussian,
            level_index: 2,
            trial: 3,
            probs: vec![0.25, 0.75],
            correct: true,
        };
        let s = serde_json::to_string(&r).unwrap();
        assert_eq!(
            s,
            r#"{"sample_id":"a","region":"background","kind":"linf_gaussian","level_index":2,"trial":3,"probs":[0.25,0.75],"correct":true}"#
        );
        assert_eq!(serde_json::from_str::<TrialRecord>(&s).unwrap(), r);
    }
}
