//! Plot-ready tables for the standard figures.
//!
//! | figure | file | columns |
//! |---|---|---|
//! | `fg_bg_scatter` | `fg_bg_scatter.csv` | model, parameter_count, a_fg, a_bg, mean, rfs, rfs_level_mean, n |
//! | `accuracy_curves` | `accuracy_curves.csv` | model, region, level_index, level, accuracy, n |
//! | `irfs_histograms` | `irfs_histograms.csv` | model, bin_lo, bin_hi, count |
//! | `alignment_bars` | `alignment_bars.csv` | model, metric, mean, n, n_degenerate |
//! | `attribution_histograms` | `attribution_histograms.csv` | model, class, attribute, feature, bin_lo, bin_hi, count |
//!
//! Rows are ordered by model (input order), then by the remaining key columns.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attribution::AttributionResult;
use crate::corruption::Region;
use crate::dataset::ClassId;
use crate::error::{Error, Result};
use crate::metrics::{aggregate, instance_sensitivity, ModelRecords, SweepSpec, TrialRecord};
use crate::saliency::{AlignmentScores, METRIC_NAMES};
use crate::stats::Histogram;

pub const IRFS_BINS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Figure {
    FgBgScatter,
    AccuracyCurves,
    IrfsHistograms,
    AlignmentBars,
    AttributionHistograms,
}

impl Figure {
    pub const ALL: [Figure; 5] = [
        Figure::FgBgScatter,
        Figure::AccuracyCurves,
        Figure::IrfsHistograms,
        Figure::AlignmentBars,
        Figure::AttributionHistograms,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Figure::FgBgScatter => "fg_bg_scatter",
            Figure::AccuracyCurves => "accuracy_curves",
            Figure::IrfsHistograms => "irfs_histograms",
            Figure::AlignmentBars => "alignment_bars",
            Figure::AttributionHistograms => "attribution_histograms",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.csv", self.name())
    }
}

impl fmt::Display for Figure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Figure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Figure::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown figure `{s}`")))
    }
}

/// Sweep output of one model.
#[derive(Debug, Clone)]
pub struct ModelSweep {
    pub model: String,
    pub parameter_count: u64,
    pub spec: SweepSpec,
    pub records: Vec<TrialRecord>,
}

/// Everything the figures can draw on; absent parts make the figures that
/// need them fail with a missing-prerequisite error.
#[derive(Debug, Clone, Default)]
pub struct FigureInputs {
    pub labels: HashMap<String, ClassId>,
    pub sweeps: Vec<ModelSweep>,
    pub alignments: Vec<(String, Vec<(String, AlignmentScores)>)>,
    pub attributions: Vec<(String, Vec<AttributionResult>)>,
}

fn missing(figure: Figure, what: &str) -> Error {
    Error::InvalidArgument(format!("figure {figure} needs {what}"))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_fg_bg_scatter(w: impl Write, inputs: &FigureInputs) -> Result<()> {
    if inputs.sweeps.is_empty() {
        return Err(missing(Figure::FgBgScatter, "sweep results"));
    }
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["model", "parameter_count", "a_fg", "a_bg", "mean", "rfs", "rfs_level_mean", "n"])?;
    for sw in &inputs.sweeps {
        let run = [ModelRecords { model: &sw.model, records: &sw.records }];
        for r in aggregate(&run, &inputs.labels, &[])? {
            out.write_record([
                sw.model.clone(),
                sw.parameter_count.to_string(),
                opt(r.a_fg),
                opt(r.a_bg),
                opt(r.mean),
                opt(r.rfs),
                opt(r.rfs_level_mean),
                r.n_trials.to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// One row per (model, region, level) over every region present in the records.
pub fn write_accuracy_curves(w: impl Write, inputs: &FigureInputs) -> Result<()> {
    if inputs.sweeps.is_empty() {
        return Err(missing(Figure::AccuracyCurves, "sweep results"));
    }
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["model", "region", "level_index", "level", "accuracy", "n"])?;
    for sw in &inputs.sweeps {
        let mut counts: BTreeMap<(usize, usize), (usize, usize)> = BTreeMap::new();
        for r in &sw.records {
            let ri = sw.spec.regions.iter().position(|x| *x == r.region).ok_or_else(|| {
                Error::InvalidArgument(format!("record region {} not in the sweep spec", r.region))
            })?;
            let c = counts.entry((ri, r.level_index)).or_default();
            c.0 += r.correct as usize;
            c.1 += 1;
        }
        for ((ri, li), (correct, n)) in counts {
            let region: Region = sw.spec.regions[ri];
            let level = sw.spec.levels.get(li).copied().ok_or_else(|| {
                Error::InvalidArgument(format!("level index {li} outside the sweep spec"))
            })?;
            out.write_record([
                sw.model.clone(),
                region.to_string(),
                li.to_string(),
                level.to_string(),
                (correct as f64 / n as f64).to_string(),
                n.to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// iRFS histogram per model, [`IRFS_BINS`] bins over `[-1, 1]`.
pub fn write_irfs_histograms(w: impl Write, inputs: &FigureInputs) -> Result<()> {
    if inputs.sweeps.is_empty() {
        return Err(missing(Figure::IrfsHistograms, "sweep results"));
    }
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["model", "bin_lo", "bin_hi", "count"])?;
    for sw in &inputs.sweeps {
        let values: Vec<f64> = instance_sensitivity(&sw.records, &inputs.labels)?
            .into_iter()
            .map(|r| r.irfs)
            .collect();
        let h = Histogram::new(&values, -1.0, 1.0, IRFS_BINS)?;
        write_hist_rows(&mut out, std::slice::from_ref(&sw.model), &h)?;
    }
    out.flush()?;
    Ok(())
}

fn write_hist_rows<W: Write>(out: &mut csv::Writer<W>, prefix: &[String], h: &Histogram) -> Result<()> {
    for (i, c) in h.counts.iter().enumerate() {
        let mut row = prefix.to_vec();
        row.extend([h.edges[i].to_string(), h.edges[i + 1].to_string(), c.to_string()]);
        out.write_record(&row)?;
    }
    Ok(())
}

/// Mean of each alignment metric per model over non-degenerate samples.
/// Infinite ratios are excluded from the ratio mean and counted as degenerate.
pub fn write_alignment_bars(w: impl Write, inputs: &FigureInputs) -> Result<()> {
    if inputs.alignments.is_empty() {
        return Err(missing(Figure::AlignmentBars, "saliency alignment results"));
    }
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["model", "metric", "mean", "n", "n_degenerate"])?;
    for (model, scores) in &inputs.alignments {
        for name in METRIC_NAMES {
            let mut values = Vec::new();
            let mut degenerate = 0;
            for (_, s) in scores {
                let v = s.metric(name)?;
                if s.degenerate.any() || !v.is_finite() {
                    degenerate += 1;
                } else {
                    values.push(v);
                }
            }
            let mean = crate::stats::mean(&values);
            out.write_record([
                model.clone(),
                name.to_string(),
                opt(mean),
                values.len().to_string(),
                degenerate.to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_attribution_histograms(w: impl Write, inputs: &FigureInputs) -> Result<()> {
    if inputs.attributions.is_empty() {
        return Err(missing(Figure::AttributionHistograms, "attribution results"));
    }
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["model", "class", "attribute", "feature", "bin_lo", "bin_hi", "count"])?;
    for (model, results) in &inputs.attributions {
        for r in results {
            let prefix = [
                model.clone(),
                r.class.map_or("all", ClassId::name).to_string(),
                r.attribute.name().to_string(),
                r.feature_index.to_string(),
            ];
            write_hist_rows(&mut out, &prefix, &r.test_iou_hist)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Writes `figure` into `out_dir` and returns the file path.
pub fn emit_figure_data(inputs: &FigureInputs, figure: Figure, out_dir: &Path) -> Result<PathBuf> {
    let path = out_dir.join(figure.file_name());
    let mut buf = Vec::new();
    match figure {
        Figure::FgBgScatter => write_fg_bg_scatter(&mut buf, inputs)?,
        Figure::AccuracyCurves => write_accuracy_curves(&mut buf, inputs)?,
        Figure::IrfsHistograms => write_irfs_histograms(&mut buf, inputs)?,
        Figure::AlignmentBars => write_alignment_bars(&mut buf, inputs)?,
        Figure::AttributionHistograms => write_attribution_histograms(&mut buf, inputs)?,
    }
    let mut f = File::create(&path).map_err(|e| Error::io(&path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
