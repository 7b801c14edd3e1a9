//! Grouped accuracies, RFS and per-instance iRFS from trial records.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::rfs::{irfs, rfs};
use super::sweep::TrialRecord;
use crate::corruption::Region;
use crate::dataset::ClassId;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupField {
    Model,
    Class,
    Level,
}

/// Group coordinates; `None` means the field is not grouped on.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroupKey {
    pub model: Option<String>,
    pub class: Option<ClassId>,
    pub level: Option<usize>,
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if let Some(m) = &self.model {
            parts.push(format!("model={m}"));
        }
        if let Some(c) = self.class {
            parts.push(format!("class={}", c.name()));
        }
        if let Some(l) = self.level {
            parts.push(format!("level={l}"));
        }
        if parts.is_empty() {
            f.write_str("all")
        } else {
            f.write_str(&parts.join(";"))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRecord {
    pub key: GroupKey,
    pub a_fg: Option<f64>,
    pub a_bg: Option<f64>,
    /// `(a_fg + a_bg) / 2`.
    pub mean: Option<f64>,
    /// RFS of the group accuracies; absent when a region is missing.
    pub rfs: Option<f64>,
    /// Mean over levels of the per-level RFS.
    pub rfs_level_mean: Option<f64>,
    pub n_trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSensitivity {
    pub sample_id: String,
    pub p_fg: f64,
    pub p_bg: f64,
    pub mean: f64,
    pub irfs: f64,
}

/// Trial records of one model.
#[derive(Debug, Clone, Copy)]
pub struct ModelRecords<'a> {
    pub model: &'a str,
    pub records: &'a [TrialRecord],
}

#[derive(Default, Clone, Copy)]
struct Counts {
    correct: usize,
    total: usize,
}

impl Counts {
    fn add(&mut self, correct: bool) {
        self.total += 1;
        self.correct += correct as usize;
    }

    fn accuracy(self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }
}

#[derive(Default)]
struct Group {
    fg: Counts,
    bg: Counts,
    per_level: BTreeMap<usize, (Counts, Counts)>,
}

/// Accuracy under foreground and background noise per group, with RFS.
/// Records of other regions are ignored. Counting is exact, so the result
/// does not depend on record order.
pub fn aggregate(
    runs: &[ModelRecords<'_>],
    labels: &HashMap<String, ClassId>,
    group_by: &[GroupField],
) -> Result<Vec<SensitivityRecord>> {
    if runs.iter().all(|r| r.records.is_empty()) {
        return Err(Error::InvalidArgument("no trial records to aggregate".into()));
    }
    let by = |f| group_by.contains(&f);
    let mut groups: BTreeMap<GroupKey, Group> = BTreeMap::new();
    for run in runs {
        for r in run.records {
            let fg = match r.region {
                Region::Foreground => true,
                Region::Background => false,
                _ => continue,
            };
            let class = if by(GroupField::Class) {
                Some(*labels.get(&r.sample_id).ok_or_else(|| {
                    Error::InvalidArgument(format!("no label for sample {}", r.sample_id))
                })?)
            } else {
                None
            };
            let key = GroupKey {
                model: by(GroupField::Model).then(|| run.model.to_string()),
                class,
                level: by(GroupField::Level).then_some(r.level_index),
            };
            let g = groups.entry(key).or_default();
            let lvl = g.per_level.entry(r.level_index).or_default();
            if fg {
                g.fg.add(r.correct);
                lvl.0.add(r.correct);
            } else {
                g.bg.add(r.correct);
                lvl.1.add(r.correct);
            }
        }
    }
    if groups.is_empty() {
        return Err(Error::InvalidArgument("no foreground or background records to aggregate".into()));
    }
    Ok(groups
        .into_iter()
        .map(|(key, g)| {
            let a_fg = g.fg.accuracy();
            let a_bg = g.bg.accuracy();
            let both = a_fg.zip(a_bg);
            let level_rfs: Option<Vec<f64>> = g
                .per_level
                .values()
                .map(|(f, b)| f.accuracy().zip(b.accuracy()).map(|(f, b)| rfs(f, b)))
                .collect();
            SensitivityRecord {
                key,
                a_fg,
                a_bg,
                mean: both.map(|(f, b)| (f + b) / 2.0),
                rfs: both.map(|(f, b)| rfs(f, b)),
                rfs_level_mean: level_rfs.map(|v| v.iter().sum::<f64>() / v.len() as f64),
                n_trials: g.fg.total + g.bg.total,
            }
        })
        .collect())
}

/// Per-sample iRFS. True-class probabilities are averaged over trials within
/// each level, then over levels.
pub fn instance_sensitivity(
    records: &[TrialRecord],
    labels: &HashMap<String, ClassId>,
) -> Result<Vec<InstanceSensitivity>> {
    // sample -> level -> (fg sum, fg n, bg sum, bg n); BTreeMaps and a
    // sorted pass keep the float sums independent of input order.
    let mut sorted: Vec<&TrialRecord> = records
        .iter()
        .filter(|r| matches!(r.region, Region::Foreground | Region::Background))
        .collect();
    sorted.sort_by(|a, b| {
        (&a.sample_id, a.level_index, a.trial, a.region).cmp(&(&b.sample_id, b.level_index, b.trial, b.region))
    });
    type LevelSums = BTreeMap<usize, [(f64, usize); 2]>;
    let mut acc: BTreeMap<&str, LevelSums> = BTreeMap::new();
    for r in sorted {
        let label = labels
            .get(&r.sample_id)
            .ok_or_else(|| Error::InvalidArgument(format!("no label for sample {}", r.sample_id)))?;
        let p = *r.probs.get(label.index()).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "record for {} has {} probabilities, label index {}",
                r.sample_id,
                r.probs.len(),
                label.index()
            ))
        })?;
        let slot = usize::from(r.region == Region::Background);
        let cell = &mut acc.entry(&r.sample_id).or_default().entry(r.level_index).or_default()[slot];
        cell.0 += p;
        cell.1 += 1;
    }
    acc.into_iter()
        .map(|(id, levels)| {
            let mut means = [Vec::new(), Vec::new()];
            for cells in levels.values() {
                for (slot, &(sum, n)) in cells.iter().enumerate() {
                    if n > 0 {
                        means[slot].push(sum / n as f64);
                    }
                }
            }
            if means[0].is_empty() || means[1].is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "sample {id} lacks {} records",
                    if means[0].is_empty() { "foreground" } else { "background" }
                )));
            }
            let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            let (p_fg, p_bg) = (avg(&means[0]), avg(&means[1]));
            Ok(InstanceSensitivity {
                sample_id: id.to_string(),
                p_fg,
                p_bg,
                mean: (p_fg + p_bg) / 2.0,
                irfs: irfs(p_fg, p_bg),
            })
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// CSV columns: `group_key,a_fg,a_bg,mean,rfs,n,rfs_level_mean`; missing values are empty.
pub fn write_sensitivity_csv(w: impl Write, records: &[SensitivityRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["group_key", "a_fg", "a_bg", "mean", "rfs", "n", "rfs_level_mean"])?;
    for r in records {
        out.write_record([
            r.key.to_string(),
            opt(r.a_fg),
            opt(r.a_bg),
            opt(r.mean),
            opt(r.rfs),
            r.n_trials.to_string(),
            opt(r.rfs_level_mean),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// CSV columns: `sample_id,p_fg,p_bg,mean,irfs`.
pub fn write_instance_csv(w: impl Write, records: &[InstanceSensitivity]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["sample_id", "p_fg", "p_bg", "mean", "irfs"])?;
    for r in records {
        out.write_record([
            r.sample_id.clone(),
            r.p_fg.to_string(),
            r.p_bg.to_string(),
            r.mean.to_string(),
            r.irfs.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corruption::NoiseKind;

    fn rec(id: &str, region: Region, level: usize, trial: usize, p_true: f64, correct: bool) -> TrialRecord {
        TrialRecord {
            sample_id: id.into(),
            region,
            kind: NoiseKind::LinfGaussian,
            level_index: level,
            trial,
            probs: vec![p_true, 1.0 - p_true],
            correct,
        }
    }

    fn labels(ids: &[&str]) -> HashMap<String, ClassId> {
        ids.iter().map(|i| (i.to_string(), ClassId(0))).collect()
    }

    #[test]
    fn extreme_accuracies_give_minus_one() {
        let rs = vec![rec("a", Region::Foreground, 0, 0, 0.9, true), rec("a", Region::Background, 0, 0, 0.1, false)];
        let out = aggregate(&[ModelRecords { model: "m", records: &rs }], &labels(&["a"]), &[]).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!((out[0].a_fg, out[0].a_bg, out[0].rfs), (Some(1.0), Some(0.0), Some(-1.0)));
        assert_eq!(out[0].key.to_string(), "all");
    }

    #[test]
    fn one_sided_group_omits_rfs() {
        let rs = vec![rec("a", Region::Foreground, 0, 0, 0.9, true)];
        let out = aggregate(&[ModelRecords { model: "m", records: &rs }], &labels(&["a"]), &[GroupField::Model]).unwrap();
        assert_eq!(out[0].rfs, None);
        assert_eq!(out[0].a_bg, None);
        assert_eq!(out[0].key.to_string(), "model=m");
    }

    #[test]
    fn level_mean_differs_from_accuracies_first() {
        let rs = vec![
            rec("a", Region::Foreground, 0, 0, 0.0, false),
            rec("a", Region::Background, 0, 0, 0.0, true),
            rec("a", Region::Foreground, 1, 0, 0.0, true),
            rec("a", Region::Background, 1, 0, 0.0, true),
        ];
        let out = aggregate(&[ModelRecords { model: "m", records: &rs }], &labels(&["a"]), &[]).unwrap();
        // accuracies first: a_fg=0.5, a_bg=1 → 0.5/(2·0.25) = 1; per level: 1 and 0.
        assert_eq!(out[0].rfs, Some(1.0));
        assert_eq!(out[0].rfs_level_mean, Some(0.5));
    }

    #[test]
    fn irfs_averages_trials_first() {
        let rs = vec![
            rec("a", Region::Foreground, 0, 0, 0.0, false),
            rec("a", Region::Foreground, 0, 1, 0.0, false),
            rec("a", Region::Background, 0, 0, 0.2, false),
            rec("a", Region::Background, 0, 1, 0.6, false),
        ];
        let out = instance_sensitivity(&rs, &labels(&["a"])).unwrap();
        assert!((out[0].p_bg - 0.4).abs() < 1e-15);
        assert!((out[0].irfs - 1.0).abs() < 1e-12);
        assert!(instance_sensitivity(&rs[..2], &labels(&["a"])).is_err());
    }

    #[test]
    fn csv_header_and_empty_cells() {
        let rs = vec![rec("a", Region::Foreground, 0, 0, 0.9, true)];
        let out = aggregate(&[ModelRecords { model: "m", records: &rs }], &labels(&["a"]), &[]).unwrap();
        let mut buf = Vec::new();
        write_sensitivity_csv(&mut buf, &out).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "group_key,a_fg,a_bg,mean,rfs,n,rfs_level_mean\nall,1,,,,1,\n");
    }
}
