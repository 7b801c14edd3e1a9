//! Run orchestration behind the `regionsense` binary.
//!
//! A [`RunConfig`] names one analysis, a dataset, the backends to query, a
//! base seed and an output directory. [`run`] writes the analysis outputs, a
//! `run_manifest.json` echoing the config and a `summary.txt`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use regionsense::attribution::{
    attribution_report, generalization_eval, select_best_features, write_scatter_csv, AttributionOptions,
    AttributionResult, ClassScope,
};
use regionsense::bridge::protocol::DEFAULT_MAX_FRAME_BYTES;
use regionsense::bridge::{
    serve, train_linear_head, Backend, BackendDescriptor, Bridge, BridgeOptions, HeadHyper, ReferenceBackend,
    ReferenceConfig, RemoteBackend, DEFAULT_BATCH_SIZE,
};
use regionsense::corruption::{NoiseKind, Region};
use regionsense::dataset::{
    attribute_linear_probe, load_manifest, synth_dataset, validate_dataset, AttributeId, ClassId, Dataset, ProbeOptions,
    Split, SynthSpec,
};
use regionsense::metrics::{
    aggregate, attribute_ablation_eval, background_removal_eval, instance_sensitivity, noise_sweep, read_trials_jsonl,
    write_instance_csv, write_sensitivity_csv, write_trials_jsonl, GroupField, ModelRecords, SweepSpec, TrialRecord,
};
use regionsense::report::{emit_figure_data, Figure, FigureInputs, ModelSweep};
use regionsense::saliency::{
    rank_misaligned, score_alignment, write_alignment_csv, AlignmentScores, MisalignmentReport, SaliencyTarget,
    DEFAULT_THRESHOLD,
};
use regionsense::seeding::{combine, fnv1a64};

/// Default backend spec when neither flags nor config name one.
pub const BACKEND_ENV: &str = "REGIONSENSE_BACKEND";
pub const MANIFEST_FILE: &str = "run_manifest.json";
pub const SUMMARY_FILE: &str = "summary.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Analysis {
    IngestValidate,
    Sweep,
    Ablate,
    Saliency,
    Attribution,
    Probe,
}

impl Analysis {
    fn needs_backend(self) -> bool {
        !matches!(self, Analysis::IngestValidate | Analysis::Probe)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    Manifest(PathBuf),
    Synth(SynthSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitChoice {
    Train,
    #[default]
    Test,
    All,
}

impl SplitChoice {
    fn apply(self, ds: &Dataset<f32>) -> Dataset<f32> {
        match self {
            SplitChoice::Train => ds.filter_split(Split::Train),
            SplitChoice::Test => ds.filter_split(Split::Test),
            SplitChoice::All => ds.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub kind: NoiseKind,
    /// Defaults to the kind's standard levels.
    pub levels: Option<Vec<f64>>,
    pub trials: usize,
    pub regions: Vec<Region>,
    pub split: SplitChoice,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            kind: NoiseKind::LinfGaussian,
            levels: None,
            trials: 10,
            regions: vec![Region::Foreground, Region::Background],
            split: SplitChoice::Test,
        }
    }
}

impl SweepConfig {
    pub fn spec(&self, seed: u64) -> SweepSpec {
        SweepSpec {
            kind: self.kind,
            levels: self.levels.clone().unwrap_or_else(|| self.kind.default_levels()),
            trials: self.trials,
            regions: self.regions.clone(),
            base_seed: seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct AblateConfig {
    /// Also fit a head on background-grayed train images.
    pub finetune: bool,
    /// Attributes to gray out one at a time on the test split.
    pub attributes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SaliencyConfig {
    pub target: SaliencyTarget,
    pub tau: f64,
    pub rank_metric: String,
    pub k: usize,
    pub split: SplitChoice,
}

impl Default for SaliencyConfig {
    fn default() -> Self {
        Self {
            target: SaliencyTarget::TrueClass,
            tau: DEFAULT_THRESHOLD,
            rank_metric: "delta_density_diff".into(),
            k: 10,
            split: SplitChoice::Test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttributionConfig {
    pub scope: ClassScope,
    #[serde(flatten)]
    pub options: AttributionOptions,
}

impl Default for AttributionConfig {
    fn default() -> Self {
        Self {
            scope: ClassScope::Each,
            options: AttributionOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub analysis: Analysis,
    pub dataset: Option<DatasetSource>,
    #[serde(default)]
    pub backends: Vec<String>,
    /// Base seed; every random draw of the run derives from it.
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    /// Fit a fresh linear head on the train split before the analysis.
    #[serde(default)]
    pub train_head: Option<HeadHyper>,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub timeout_secs: Option<u64>,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub ablate: AblateConfig,
    #[serde(default)]
    pub saliency: SaliencyConfig,
    #[serde(default)]
    pub attribution: AttributionConfig,
    #[serde(default)]
    pub probe: ProbeOptions,
}

impl RunConfig {
    pub fn new(analysis: Analysis) -> Self {
        Self {
            analysis,
            dataset: None,
            backends: Vec::new(),
            seed: None,
            out_dir: None,
            train_head: None,
            batch_size: None,
            timeout_secs: None,
            sweep: SweepConfig::default(),
            ablate: AblateConfig::default(),
            saliency: SaliencyConfig::default(),
            attribution: AttributionConfig::default(),
            probe: ProbeOptions::default(),
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Fills `backends` from the environment when nothing else named one.
    pub fn apply_backend_env(&mut self) {
        if self.backends.is_empty() && self.analysis.needs_backend() {
            if let Ok(spec) = std::env::var(BACKEND_ENV) {
                if !spec.trim().is_empty() {
                    self.backends.push(spec);
                }
            }
        }
    }

    fn checked(&self) -> Result<(u64, &DatasetSource, &Path)> {
        let seed = self.seed.ok_or_else(|| anyhow!("a base seed is required (--seed or \"seed\" in the config)"))?;
        let ds = self
            .dataset
            .as_ref()
            .ok_or_else(|| anyhow!("a dataset is required (--manifest or --synth)"))?;
        let out = self
            .out_dir
            .as_deref()
            .ok_or_else(|| anyhow!("an output directory is required (--out)"))?;
        if self.analysis.needs_backend() && self.backends.is_empty() {
            bail!("no backend given (--backend or {BACKEND_ENV})");
        }
        Ok((seed, ds, out))
    }
}

/// Reference backend file: a [`ReferenceConfig`] plus an optional init seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReferenceFile {
    #[serde(flatten)]
    pub config: ReferenceConfig,
    #[serde(default)]
    pub seed: Option<u64>,
}

pub fn load_reference(path: &Path, fallback_seed: u64) -> Result<ReferenceBackend<f32>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading reference config {}", path.display()))?;
    let file: ReferenceFile =
        serde_json::from_str(&text).with_context(|| format!("parsing reference config {}", path.display()))?;
    Ok(ReferenceBackend::new(file.config, file.seed.unwrap_or(fallback_seed))?)
}

/// Opens `reference:<config.json>`, `cmd:<program and args>` or `socket:<host:port>`.
pub fn open_backend(spec: &str, seed: u64, timeout: Option<Duration>) -> Result<Box<dyn Backend<f32>>> {
    let (kind, rest) = spec
        .split_once(':')
        .ok_or_else(|| anyhow!("backend `{spec}` must look like reference:<path>, cmd:<argv> or socket:<addr>"))?;
    Ok(match kind {
        "reference" => Box::new(load_reference(Path::new(rest), combine(seed, &[fnv1a64("reference")]))?),
        "cmd" => {
            let argv: Vec<String> = rest.split_whitespace().map(str::to_string).collect();
            Box::new(RemoteBackend::<f32>::spawn(&argv, timeout)?)
        }
        "socket" => Box::new(RemoteBackend::<f32>::connect_tcp(rest, timeout)?),
        other => bail!("unknown backend kind `{other}` in `{spec}`"),
    })
}

pub fn load_dataset(source: &DatasetSource) -> Result<Dataset<f32>> {
    Ok(match source {
        DatasetSource::Manifest(p) => load_manifest(p).with_context(|| format!("loading manifest {}", p.display()))?,
        DatasetSource::Synth(spec) => synth_dataset(spec)?,
    })
}

/// File-name-safe form of a model name, prefixed with its position.
fn model_stem(index: usize, name: &str) -> String {
    let clean: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect();
    format!("{index:02}_{clean}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub stem: String,
    pub descriptor: BackendDescriptor,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub created_unix: u64,
    pub config: RunConfig,
    pub models: Vec<ModelEntry>,
    /// Paths relative to the output directory.
    pub outputs: Vec<String>,
}

struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
    summary: Vec<String>,
}

impl Outputs {
    fn path(&mut self, rel: &str) -> Result<PathBuf> {
        let p = self.dir.join(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        self.files.push(rel.to_string());
        Ok(p)
    }

    fn json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let p = self.path(rel)?;
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(&p, text).with_context(|| format!("writing {}", p.display()))
    }

    fn writer(&mut self, rel: &str) -> Result<BufWriter<fs::File>> {
        let p = self.path(rel)?;
        Ok(BufWriter::new(fs::File::create(&p).with_context(|| format!("creating {}", p.display()))?))
    }

    fn line(&mut self, s: impl Into<String>) {
        self.summary.push(s.into());
    }
}

/// What a finished run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub outputs: Vec<String>,
    pub summary: String,
    /// False when the analysis itself found problems (validation violations).
    pub clean: bool,
}

/// Executes one analysis end to end.
pub fn run(config: &RunConfig) -> Result<RunOutcome> {
    let (seed, source, out_dir) = config.checked()?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let ds = load_dataset(source)?;
    let mut out = Outputs {
        dir: out_dir.to_path_buf(),
        files: Vec::new(),
        summary: Vec::new(),
    };
    out.line(format!("analysis: {:?}", config.analysis));
    out.line(format!("seed: {seed}"));
    out.line(format!("samples: {}", ds.len()));

    let mut models = Vec::new();
    let mut clean = true;
    match config.analysis {
        Analysis::IngestValidate => clean = run_validate(&ds, &mut out)?,
        Analysis::Probe => {
            let r = attribute_linear_probe(&ds, combine(seed, &[fnv1a64("probe")]), &config.probe)?;
            out.line(format!(
                "attribute probe: train accuracy {:.4}, test accuracy {:.4} ({} / {} samples)",
                r.train_accuracy, r.test_accuracy, r.n_train, r.n_test
            ));
            out.json("probe.json", &r)?;
        }
        analysis => {
            let timeout = config.timeout_secs.map(Duration::from_secs);
            let opts = BridgeOptions {
                batch_size: config.batch_size.unwrap_or(DEFAULT_BATCH_SIZE),
                verify_determinism: true,
            };
            let labels: BTreeMap<String, ClassId> = ds.iter().map(|s| (s.id.clone(), s.class_label)).collect();
            if analysis == Analysis::Sweep {
                out.json("labels.json", &labels)?;
            }
            for (i, spec) in config.backends.iter().enumerate() {
                let backend = open_backend(spec, seed, timeout).with_context(|| format!("opening backend {spec}"))?;
                let mut bridge = Bridge::connect_boxed(backend, opts).with_context(|| format!("connecting to {spec}"))?;
                let descriptor = bridge.descriptor().clone();
                let stem = model_stem(i, &descriptor.name);
                out.line(format!("model {}: {}", stem, descriptor.name));
                if let Some(hyper) = &config.train_head {
                    let hyper = HeadHyper {
                        seed: combine(seed, &[fnv1a64("head"), i as u64]),
                        ..*hyper
                    };
                    let train = ds.filter_split(Split::Train);
                    let rep = train_linear_head(&mut bridge, &train, &hyper)?;
                    out.line(format!("  head trained: train accuracy {:.4}", rep.train_accuracy));
                }
                match analysis {
                    Analysis::Sweep => run_sweep(config, seed, &ds, &mut bridge, &stem, &mut out)?,
                    Analysis::Ablate => run_ablate(config, &ds, &mut bridge, &stem, &mut out)?,
                    Analysis::Saliency => run_saliency(config, &ds, &mut bridge, &stem, &mut out)?,
                    Analysis::Attribution => run_attribution(config, &ds, &mut bridge, &stem, &mut out)?,
                    Analysis::IngestValidate | Analysis::Probe => unreachable!(),
                }
                models.push(ModelEntry { stem, descriptor });
            }
        }
    }

    let summary = out.summary.join("\n") + "\n";
    fs::write(out_dir.join(SUMMARY_FILE), &summary).context("writing summary")?;
    out.files.push(SUMMARY_FILE.to_string());
    let manifest = RunManifest {
        tool: "regionsense".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed,
        created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        config: config.clone(),
        models,
        outputs: out.files.clone(),
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(out_dir.join(MANIFEST_FILE), text).context("writing run manifest")?;
    Ok(RunOutcome {
        out_dir: out_dir.to_path_buf(),
        outputs: out.files,
        summary,
        clean,
    })
}

fn run_validate(ds: &Dataset<f32>, out: &mut Outputs) -> Result<bool> {
    let violations = validate_dataset(ds);
    out.line(format!("violations: {}", violations.len()));
    for v in violations.iter().take(20) {
        out.line(format!("  {} {}: {}", v.sample_id, v.field, v.rule));
    }
    let train = ds.iter().filter(|s| s.split == Split::Train).count();
    out.line(format!("train: {train}, test: {}", ds.len() - train));
    out.json("violations.json", &violations)?;
    Ok(violations.is_empty())
}

fn run_sweep(
    config: &RunConfig,
    seed: u64,
    ds: &Dataset<f32>,
    bridge: &mut Bridge<f32>,
    stem: &str,
    out: &mut Outputs,
) -> Result<()> {
    let spec = config.sweep.spec(seed);
    let eval = config.sweep.split.apply(ds);
    let checkpoint = out.dir.join(format!("trials/{stem}.partial.jsonl"));
    fs::create_dir_all(out.dir.join("trials"))?;
    let records = noise_sweep(bridge, &eval, &spec, Some(&checkpoint))?;
    let rel = format!("trials/{stem}.jsonl");
    let path = out.path(&rel)?;
    write_trials_jsonl(&path, &records)?;
    for p in [checkpoint.clone(), {
        let mut m = checkpoint.into_os_string();
        m.push(".meta.json");
        PathBuf::from(m)
    }] {
        let _ = fs::remove_file(p);
    }
    let labels = eval.labels();
    let run = [ModelRecords { model: &bridge.descriptor().name, records: &records }];
    let overall = aggregate(&run, &labels, &[GroupField::Model])?;
    write_sensitivity_csv(out.writer(&format!("sensitivity/{stem}.csv"))?, &overall)?;
    write_sensitivity_csv(
        out.writer(&format!("sensitivity/{stem}_by_class.csv"))?,
        &aggregate(&run, &labels, &[GroupField::Model, GroupField::Class])?,
    )?;
    write_sensitivity_csv(
        out.writer(&format!("sensitivity/{stem}_by_level.csv"))?,
        &aggregate(&run, &labels, &[GroupField::Model, GroupField::Level])?,
    )?;
    let has_both = spec.regions.contains(&Region::Foreground) && spec.regions.contains(&Region::Background);
    if has_both {
        let inst = instance_sensitivity(&records, &labels)?;
        write_instance_csv(out.writer(&format!("instances/{stem}.csv"))?, &inst)?;
        let mut v: Vec<f64> = inst.iter().map(|r| r.irfs).collect();
        v.sort_by(f64::total_cmp);
        out.line(format!("  median iRFS: {:.4}", regionsense::stats::median(&v).unwrap_or(0.0)));
    }
    let r = &overall[0];
    out.line(format!(
        "  records: {} (expected {})",
        records.len(),
        spec.expected_records(eval.len())
    ));
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
    out.line(format!("  a_fg {}  a_bg {}  RFS {}", fmt(r.a_fg), fmt(r.a_bg), fmt(r.rfs)));
    Ok(())
}

fn run_ablate(
    config: &RunConfig,
    ds: &Dataset<f32>,
    bridge: &mut Bridge<f32>,
    stem: &str,
    out: &mut Outputs,
) -> Result<()> {
    #[derive(Serialize)]
    struct AblationOut {
        background: regionsense::metrics::BackgroundRemovalReport,
        attributes: Vec<regionsense::metrics::AttributeAblationReport>,
    }
    let test = ds.filter_split(Split::Test);
    let mut attributes = Vec::new();
    for name in &config.ablate.attributes {
        let attr = AttributeId::from_name(name).ok_or_else(|| anyhow!("unknown attribute `{name}`"))?;
        attributes.push(attribute_ablation_eval(bridge, &test, attr)?);
    }
    let hyper = config.ablate.finetune.then(|| config.train_head.unwrap_or_default());
    let background = background_removal_eval(bridge, ds, hyper.as_ref())?;
    out.line(format!(
        "  clean {:.4}  background grayed {:.4}{}",
        background.clean_acc,
        background.ablated_acc,
        background
            .finetuned_ablated_acc
            .map_or(String::new(), |a| format!("  finetuned {a:.4}"))
    ));
    for a in &attributes {
        out.line(format!("  {}: clean {:.4} ablated {:.4} (n={})", a.attribute, a.clean_acc, a.ablated_acc, a.n));
    }
    out.json(&format!("ablation/{stem}.json"), &AblationOut { background, attributes })
}

fn run_saliency(
    config: &RunConfig,
    ds: &Dataset<f32>,
    bridge: &mut Bridge<f32>,
    stem: &str,
    out: &mut Outputs,
) -> Result<()> {
    let c = &config.saliency;
    let eval = c.split.apply(ds);
    let scores = score_alignment(bridge, &eval, c.target, c.tau)?;
    write_alignment_csv(out.writer(&format!("alignment/{stem}.csv"))?, &scores)?;
    out.json(&format!("alignment/{stem}.json"), &scores)?;
    let k = c.k.min(scores.len());
    let ranked = rank_misaligned(&scores, &c.rank_metric, k)?;
    out.json(
        &format!("misaligned/{stem}.json"),
        &MisalignmentReport {
            metric: c.rank_metric.clone(),
            k,
            ranked,
        },
    )?;
    let ok: Vec<&AlignmentScores> = scores.iter().map(|(_, s)| s).filter(|s| !s.degenerate.any()).collect();
    let mean_iou = ok.iter().map(|s| s.iou_standard).sum::<f64>() / ok.len().max(1) as f64;
    out.line(format!(
        "  scored {} samples ({} degenerate), mean standard IOU {:.4}",
        scores.len(),
        scores.len() - ok.len(),
        mean_iou
    ));
    Ok(())
}

fn run_attribution(
    config: &RunConfig,
    ds: &Dataset<f32>,
    bridge: &mut Bridge<f32>,
    stem: &str,
    out: &mut Outputs,
) -> Result<()> {
    let c = &config.attribution;
    let train = ds.filter_split(Split::Train);
    let test = ds.filter_split(Split::Test);
    let selection = select_best_features(bridge, &train, c.scope, &c.options)?;
    // Entries whose pair has no held-out positives cannot be evaluated.
    let mut evaluable = selection.clone();
    evaluable.entries.retain(|e| {
        test.iter()
            .any(|s| e.class.is_none_or(|cl| s.class_label == cl) && s.has_attribute(e.attribute))
    });
    for e in selection.entries.iter().filter(|e| !evaluable.entries.contains(e)) {
        evaluable.skipped.push(regionsense::attribution::SkippedPair {
            class: e.class,
            attribute: e.attribute,
            reason: "no attribute-positive test samples".into(),
        });
    }
    let results = generalization_eval(bridge, &test, &evaluable, &c.options)?;
    let report = attribution_report(&evaluable, &results);
    out.json(&format!("attribution/{stem}.json"), &report)?;
    out.json(&format!("attribution/{stem}.results.json"), &results)?;
    for r in &results {
        let cls = r.class.map_or("all", ClassId::name);
        write_scatter_csv(
            out.writer(&format!("attribution/{stem}/{cls}_{}.csv", r.attribute.name()))?,
            r,
        )?;
    }
    out.line(format!(
        "  {} pairs evaluated, {} skipped",
        results.len(),
        report.skipped.len()
    ));
    for r in results.iter().take(10) {
        out.line(format!(
            "  {}/{} -> feature {}: train IOU {:.3}, test IOU mean {:.3}",
            r.class.map_or("all", ClassId::name),
            r.attribute,
            r.feature_index,
            r.train_mean_iou,
            r.test_iou_mean
        ));
    }
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(BufReader::new(f)).with_context(|| format!("parsing {}", path.display()))
}

/// Rebuilds figure tables from a finished run directory. With no figures
/// named, every figure the run's analysis supports is written.
pub fn figure_data(run_dir: &Path, figures: &[Figure], out_dir: &Path) -> Result<Vec<PathBuf>> {
    let manifest: RunManifest = read_json(&run_dir.join(MANIFEST_FILE))?;
    let mut inputs = FigureInputs::default();
    let analysis = manifest.config.analysis;
    match analysis {
        Analysis::Sweep => {
            let labels: BTreeMap<String, ClassId> = read_json(&run_dir.join("labels.json"))?;
            inputs.labels = labels.into_iter().collect();
            let spec = manifest.config.sweep.spec(manifest.seed);
            for m in &manifest.models {
                let records: Vec<TrialRecord> = read_trials_jsonl(&run_dir.join(format!("trials/{}.jsonl", m.stem)))?;
                inputs.sweeps.push(ModelSweep {
                    model: m.descriptor.name.clone(),
                    parameter_count: m.descriptor.parameter_count,
                    spec: spec.clone(),
                    records,
                });
            }
        }
        Analysis::Saliency => {
            for m in &manifest.models {
                let scores: Vec<(String, AlignmentScores)> =
                    read_json(&run_dir.join(format!("alignment/{}.json", m.stem)))?;
                inputs.alignments.push((m.descriptor.name.clone(), scores));
            }
        }
        Analysis::Attribution => {
            for m in &manifest.models {
                let results: Vec<AttributionResult> =
                    read_json(&run_dir.join(format!("attribution/{}.results.json", m.stem)))?;
                inputs.attributions.push((m.descriptor.name.clone(), results));
            }
        }
        other => bail!("a {other:?} run has no figure data"),
    }
    let wanted: Vec<Figure> = if figures.is_empty() {
        match analysis {
            Analysis::Sweep => vec![Figure::FgBgScatter, Figure::AccuracyCurves, Figure::IrfsHistograms],
            Analysis::Saliency => vec![Figure::AlignmentBars],
            _ => vec![Figure::AttributionHistograms],
        }
    } else {
        figures.to_vec()
    };
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    wanted
        .into_iter()
        .map(|f| emit_figure_data(&inputs, f, out_dir).map_err(Into::into))
        .collect()
}

/// Serves a reference backend over stdio, or over TCP connections one at a
/// time when `listen` is given.
pub fn serve_reference(config_path: &Path, seed: u64, listen: Option<&str>) -> Result<()> {
    let mut backend = load_reference(config_path, seed)?;
    match listen {
        None => {
            let stdin = std::io::stdin();
            let stdout = std::io::stdout();
            serve(&mut backend, stdin.lock(), stdout.lock(), DEFAULT_MAX_FRAME_BYTES)?;
        }
        Some(addr) => {
            let listener = TcpListener::bind(addr).with_context(|| format!("binding {addr}"))?;
            eprintln!("listening on {}", listener.local_addr()?);
            for stream in listener.incoming() {
                let stream = stream?;
                let reader = stream.try_clone()?;
                if let Err(e) = serve(&mut backend, reader, stream, DEFAULT_MAX_FRAME_BYTES) {
                    eprintln!("connection ended: {e}");
                }
            }
        }
    }
    Ok(())
}
