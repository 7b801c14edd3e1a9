use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use regionsense::attribution::ClassScope;
use regionsense::corruption::{NoiseKind, Region};
use regionsense::dataset::{save_manifest, synth_dataset, ClassId, Coding, SynthSpec};
use regionsense::report::Figure;
use regionsense::saliency::{IouVariant, SaliencyTarget};
use regionsense_cli::{figure_data, run, serve_reference, Analysis, DatasetSource, RunConfig, SplitChoice};

#[derive(Parser, Debug)]
#[command(name = "regionsense", version)]
#[command(about = "Measure how image classifiers use foreground, background and attribute regions")]
#[command(after_help = "Backends:
  reference:<config.json>   in-process reference model
  cmd:<program args...>     spawn a process speaking the frame protocol on stdio
  socket:<host:port>        connect to a running server

REGIONSENSE_BACKEND supplies a backend when neither --backend nor the config names one.")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Worker threads for image corruption (default: all cores)
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a dataset manifest and its masks
    IngestValidate(Common),
    /// Region-masked noise sweep with RFS/iRFS aggregation
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sweep: SweepArgs,
    },
    /// Accuracy with the background or single attributes grayed out
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Also fit a head on background-grayed train images
        #[arg(long)]
        finetune: bool,
        /// Attribute to gray out (repeatable)
        #[arg(long = "attribute")]
        attributes: Vec<String>,
    },
    /// Score saliency maps against object masks
    SaliencyAlign {
        #[command(flatten)]
        common: Common,
        /// true-class, class:<index> or feature:<index>
        #[arg(long, value_parser = parse_target)]
        target: Option<SaliencyTarget>,
        #[arg(long)]
        tau: Option<f64>,
        /// Metric used to rank misaligned samples
        #[arg(long)]
        rank_metric: Option<String>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, value_parser = parse_split)]
        split: Option<SplitChoice>,
    },
    /// Match penultimate-layer features to attribute masks
    AttributeNodes {
        #[command(flatten)]
        common: Common,
        /// all, each or a class name
        #[arg(long, value_parser = parse_scope)]
        scope: Option<ClassScope>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        tau: Option<f64>,
        /// standard or paper_formula
        #[arg(long)]
        iou_variant: Option<IouVariant>,
    },
    /// Linear probe from attribute-mask features to class labels
    Probe(Common),
    /// Rebuild figure tables from a finished run directory
    FigureData {
        /// Run directory holding run_manifest.json
        #[arg(long)]
        from: PathBuf,
        /// Figure to emit (repeatable; default: all the run supports)
        #[arg(long = "figure")]
        figures: Vec<Figure>,
        /// Output directory (default: <from>/figures)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic dataset with known region coding
    Synth {
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        /// foreground-coded or background-coded
        #[arg(long, default_value = "foreground-coded", value_parser = parse_coding)]
        coding: Coding,
        #[arg(long, default_value_t = 0.25)]
        test_fraction: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the reference backend over stdio or TCP
    ServeReference {
        /// Reference config JSON
        #[arg(long)]
        config: PathBuf,
        /// Init seed when the config has none
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// TCP address; stdio when absent
        #[arg(long)]
        listen: Option<String>,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// Run config JSON; flags override its fields
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset manifest
    #[arg(long, conflicts_with = "synth")]
    manifest: Option<PathBuf>,
    /// Synthetic dataset spec JSON
    #[arg(long)]
    synth: Option<PathBuf>,
    /// Backend spec (repeatable)
    #[arg(long = "backend")]
    backends: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    timeout_secs: Option<u64>,
    /// Fit a linear head on the train split first
    #[arg(long)]
    train_head: bool,
    #[arg(long, requires = "train_head")]
    head_lr: Option<f64>,
    #[arg(long, requires = "train_head")]
    head_epochs: Option<usize>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// linf_gaussian or l2_normalized
    #[arg(long)]
    kind: Option<NoiseKind>,
    /// Comma-separated noise levels
    #[arg(long, value_delimiter = ',')]
    levels: Option<Vec<f64>>,
    #[arg(long)]
    trials: Option<usize>,
    /// Comma-separated regions
    #[arg(long, value_delimiter = ',')]
    regions: Option<Vec<Region>>,
    #[arg(long, value_parser = parse_split)]
    split: Option<SplitChoice>,
}

fn parse_target(s: &str) -> Result<SaliencyTarget, String> {
    let index = |v: &str| v.parse::<usize>().map_err(|e| format!("bad index `{v}`: {e}"));
    match s.split_once(':') {
        None if s == "true-class" => Ok(SaliencyTarget::TrueClass),
        Some(("class", v)) => Ok(SaliencyTarget::Class(index(v)?)),
        Some(("feature", v)) => Ok(SaliencyTarget::Feature(index(v)?)),
        _ => Err(format!("expected true-class, class:<n> or feature:<n>, got `{s}`")),
    }
}

fn parse_split(s: &str) -> Result<SplitChoice, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| format!("expected train, test or all, got `{s}`"))
}

fn parse_coding(s: &str) -> Result<Coding, String> {
    serde_json::from_value(serde_json::Value::String(s.into()))
        .map_err(|_| format!("expected foreground-coded or background-coded, got `{s}`"))
}

fn parse_scope(s: &str) -> Result<ClassScope, String> {
    match s {
        "all" => Ok(ClassScope::All),
        "each" => Ok(ClassScope::Each),
        name => ClassId::from_name(name)
            .map(ClassScope::Only)
            .ok_or_else(|| format!("unknown class `{name}`")),
    }
}

fn base_config(analysis: Analysis, c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(path) => {
            let cfg = RunConfig::from_json_file(path)?;
            if cfg.analysis != analysis {
                bail!("config {} is for {:?}, not {:?}", path.display(), cfg.analysis, analysis);
            }
            cfg
        }
        None => RunConfig::new(analysis),
    };
    if let Some(m) = &c.manifest {
        cfg.dataset = Some(DatasetSource::Manifest(m.clone()));
    }
    if let Some(p) = &c.synth {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let spec: SynthSpec = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
        cfg.dataset = Some(DatasetSource::Synth(spec));
    }
    if !c.backends.is_empty() {
        cfg.backends = c.backends.clone();
    }
    cfg.seed = c.seed.or(cfg.seed);
    cfg.out_dir = c.out.clone().or(cfg.out_dir);
    cfg.batch_size = c.batch_size.or(cfg.batch_size);
    cfg.timeout_secs = c.timeout_secs.or(cfg.timeout_secs);
    if c.train_head {
        let mut h = cfg.train_head.unwrap_or_default();
        h.lr = c.head_lr.unwrap_or(h.lr);
        h.epochs = c.head_epochs.unwrap_or(h.epochs);
        cfg.train_head = Some(h);
    }
    cfg.apply_backend_env();
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<bool> {
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| anyhow!("configuring {n} workers: {e}"))?;
    }
    let cfg = match cli.command {
        Command::IngestValidate(c) => base_config(Analysis::IngestValidate, &c)?,
        Command::Probe(c) => base_config(Analysis::Probe, &c)?,
        Command::Sweep { common, sweep } => {
            let mut cfg = base_config(Analysis::Sweep, &common)?;
            let s = &mut cfg.sweep;
            s.kind = sweep.kind.unwrap_or(s.kind);
            if sweep.levels.is_some() {
                s.levels = sweep.levels;
            }
            s.trials = sweep.trials.unwrap_or(s.trials);
            s.regions = sweep.regions.unwrap_or(std::mem::take(&mut s.regions));
            s.split = sweep.split.unwrap_or(s.split);
            cfg
        }
        Command::Ablate {
            common,
            finetune,
            attributes,
        } => {
            let mut cfg = base_config(Analysis::Ablate, &common)?;
            cfg.ablate.finetune |= finetune;
            if !attributes.is_empty() {
                cfg.ablate.attributes = attributes;
            }
            cfg
        }
        Command::SaliencyAlign {
            common,
            target,
            tau,
            rank_metric,
            k,
            split,
        } => {
            let mut cfg = base_config(Analysis::Saliency, &common)?;
            let s = &mut cfg.saliency;
            s.target = target.unwrap_or(s.target);
            s.tau = tau.unwrap_or(s.tau);
            if let Some(m) = rank_metric {
                s.rank_metric = m;
            }
            s.k = k.unwrap_or(s.k);
            s.split = split.unwrap_or(s.split);
            cfg
        }
        Command::AttributeNodes {
            common,
            scope,
            k,
            tau,
            iou_variant,
        } => {
            let mut cfg = base_config(Analysis::Attribution, &common)?;
            let a = &mut cfg.attribution;
            a.scope = scope.unwrap_or(a.scope);
            a.options.k = k.unwrap_or(a.options.k);
            a.options.tau = tau.unwrap_or(a.options.tau);
            a.options.iou_variant = iou_variant.unwrap_or(a.options.iou_variant);
            cfg
        }
        Command::FigureData { from, figures, out } => {
            let out = out.unwrap_or_else(|| from.join("figures"));
            for p in figure_data(&from, &figures, &out)? {
                println!("{}", p.display());
            }
            return Ok(true);
        }
        Command::Synth {
            n,
            size,
            classes,
            coding,
            test_fraction,
            seed,
            out,
        } => {
            let spec = SynthSpec {
                test_fraction,
                ..SynthSpec::new(n, size, coding, classes, seed)
            };
            let ds = synth_dataset::<f32>(&spec)?;
            let path = save_manifest(&ds, &out, "manifest.jsonl")?;
            println!("{}", path.display());
            return Ok(true);
        }
        Command::ServeReference { config, seed, listen } => {
            serve_reference(&config, seed, listen.as_deref())?;
            return Ok(true);
        }
    };
    let outcome = run(&cfg)?;
    print!("{}", outcome.summary);
    eprintln!("outputs written to {}", outcome.out_dir.display());
    Ok(outcome.clean)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
