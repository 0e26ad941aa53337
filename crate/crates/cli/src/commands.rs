//! Argument structs and handlers of the pipeline subcommands.
//!
//! Every argument struct can also be read from a JSON file given with
//! `--config`; keys are the field names below and explicit flags win.

use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};

use fvp_core::adapt::{adapt as run_adapt, AdaptConfig, LR_GRID};
use fvp_core::data::{generate, load_dataset, write_dataset, Domain, GeneratorConfig, Sample};
use fvp_core::metrics::evaluate;
use fvp_core::prompt::{load_prompt, save_prompt, Prompt, PromptKind, VisualPrompt};
use fvp_core::pseudo::SelectionConfig;
use fvp_core::segnet::{load_model, save_model, train_source, SegModel, TrainConfig};

use crate::experiment::{run_ablation, AblationConfig};
use crate::{read_config, require, usage, write_json, CliResult};

macro_rules! config_merge {
    ($ty:ident { $($field:ident),* $(,)? } $(flags { $($flag:ident),* $(,)? })?) => {
        impl $ty {
            /// Fills unset fields from the `--config` file, if any.
            fn merged(mut self) -> CliResult<Self> {
                if let Some(path) = self.config.clone() {
                    let file: $ty = read_config(&path)?;
                    $( if self.$field.is_none() { self.$field = file.$field; } )*
                    $($( self.$flag |= file.$flag; )*)?
                }
                Ok(self)
            }
        }
    };
}

fn seed_or_default(seed: Option<u64>) -> u64 {
    seed.unwrap_or(0)
}

type Model = SegModel<f64>;

fn load_samples(dir: &PathBuf, split: &str) -> CliResult<(usize, Vec<Sample<f64>>)> {
    let (manifest, data) = load_dataset::<f64>(dir)?;
    let samples = match split {
        "train" => data.train,
        "test" => data.test,
        other => return Err(usage(format!("unknown split `{other}` (train|test)"))),
    };
    if samples.is_empty() {
        return Err(usage(format!("{} has no {split} samples", dir.display())));
    }
    Ok((manifest.n_classes, samples))
}

fn check_split(split: &str) -> CliResult<()> {
    match split {
        "train" | "test" => Ok(()),
        other => Err(usage(format!("unknown split `{other}` (train|test)"))),
    }
}

#[derive(Clone, Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenDataArgs {
    /// Output directory; `source/` and `target/` are created inside.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, env = "FVP_SEED")]
    pub seed: Option<u64>,
    /// Image side in pixels (multiple of 4).
    #[arg(long)]
    pub size: Option<usize>,
    /// Number of classes including background.
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

config_merge!(GenDataArgs { out, seed, size, classes, n_train, n_test });

impl GenDataArgs {
    pub fn generator(&self) -> GeneratorConfig {
        let d = GeneratorConfig::default();
        GeneratorConfig::new(
            self.size.unwrap_or(d.size),
            self.classes.unwrap_or(d.n_classes),
            self.n_train.unwrap_or(d.n_train),
            self.n_test.unwrap_or(d.n_test),
        )
    }
}

#[derive(Serialize)]
struct GenDataRecord<'a> {
    seed: u64,
    generator: &'a GeneratorConfig,
}

pub fn gen_data(args: GenDataArgs) -> CliResult<()> {
    let args = args.merged()?;
    let out = require(&args.out, "out")?;
    let seed = seed_or_default(args.seed);
    let cfg = args.generator();
    let pair = generate(&cfg, seed)?;
    write_dataset(out.join("source"), Domain::Source, &pair.source, seed)?;
    write_dataset(out.join("target"), Domain::Target, &pair.target, seed)?;
    write_json(&out.join("generator.json"), &GenDataRecord { seed, generator: &cfg })?;
    Ok(())
}

#[derive(Clone, Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainArgs {
    /// Labeled dataset directory (holding `manifest.json`).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Weight file to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, env = "FVP_SEED")]
    pub seed: Option<u64>,
    /// Optional JSON file for the per-epoch loss history.
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

config_merge!(PretrainArgs { data, out, epochs, lr, batch_size, seed, history });

#[derive(Serialize)]
struct PretrainRecord<'a> {
    config: &'a TrainConfig,
    epoch_loss: &'a [f64],
    model_checksum: String,
}

pub fn pretrain(args: PretrainArgs) -> CliResult<()> {
    let args = args.merged()?;
    let data = require(&args.data, "data")?;
    let out = require(&args.out, "out")?;
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        epochs: args.epochs.unwrap_or(d.epochs),
        lr: args.lr.unwrap_or(d.lr),
        batch_size: args.batch_size.unwrap_or(d.batch_size),
        seed: seed_or_default(args.seed),
    };
    cfg.validate()?;
    let (n_classes, samples) = load_samples(&data, "train")?;
    let (model, history) = train_source(&samples, n_classes, &cfg)?;
    save_model(&model, &out)?;
    if let Some(path) = &args.history {
        let record = PretrainRecord {
            config: &cfg,
            epoch_loss: &history.epoch_loss,
            model_checksum: model.checksum(),
        };
        write_json(path, &record)?;
    }
    Ok(())
}

#[derive(Clone, Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptArgs {
    /// Frozen source model.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Target dataset directory; labels, if present, are ignored.
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Which target split to adapt on (train|test).
    #[arg(long)]
    pub split: Option<String>,
    /// complex | amplitude | phase | svp
    #[arg(long)]
    pub variant: Option<PromptKind>,
    /// Side of the low-frequency box (spectral variants).
    #[arg(long)]
    pub r: Option<usize>,
    /// Pad width (svp).
    #[arg(long)]
    pub pad: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub k: Option<f64>,
    /// Disable the global probability floor.
    #[arg(long)]
    pub no_global: bool,
    /// Disable the intra-class top-k threshold.
    #[arg(long)]
    pub no_intra: bool,
    /// Disable prototype-consistency filtering.
    #[arg(long)]
    pub no_prototype: bool,
    /// Learning rate(s); several values run a sweep (default 0.01,0.1,1).
    #[arg(long, value_delimiter = ',')]
    pub lr: Option<Vec<f64>>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long, env = "FVP_SEED")]
    pub seed: Option<u64>,
    /// Prompt file to write (default `prompt.fvpp`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON report to write.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Include wall-clock time in the report.
    #[arg(long)]
    pub timings: bool,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

config_merge!(AdaptArgs {
    model, target, split, variant, r, pad, lambda, k, lr, epochs, batch_size, weight_decay, seed, out, report
} flags { no_global, no_intra, no_prototype, timings });

impl AdaptArgs {
    pub fn adapt_config(&self) -> CliResult<AdaptConfig> {
        let d = AdaptConfig::default();
        let variant = self.variant.unwrap_or(d.variant);
        let size = match (variant, self.r, self.pad) {
            (PromptKind::Svp, None, Some(p)) => p,
            (PromptKind::Svp, Some(_), _) => return Err(usage("svp takes --pad, not --r")),
            (PromptKind::Svp, None, None) => return Err(usage("svp requires --pad")),
            (_, _, Some(_)) => return Err(usage("--pad only applies to the svp variant")),
            (_, r, None) => r.unwrap_or(d.size),
        };
        let s = SelectionConfig::default();
        let cfg = AdaptConfig {
            variant,
            size,
            selection: SelectionConfig {
                lambda: self.lambda.unwrap_or(s.lambda),
                k: self.k.unwrap_or(s.k),
                use_global: !self.no_global,
                use_intra: !self.no_intra,
                use_prototype: !self.no_prototype,
            },
            learning_rates: self.lr.clone().unwrap_or_else(|| LR_GRID.to_vec()),
            epochs: self.epochs.unwrap_or(d.epochs),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            weight_decay: self.weight_decay.unwrap_or(d.weight_decay),
            seed: seed_or_default(self.seed),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn adapt(args: AdaptArgs) -> CliResult<()> {
    let args = args.merged()?;
    let cfg = args.adapt_config()?;
    let model_path = require(&args.model, "model")?;
    let target = require(&args.target, "target")?;
    let split = args.split.clone().unwrap_or_else(|| "train".into());
    check_split(&split)?;
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from("prompt.fvpp"));
    let model: Model = load_model(&model_path)?;
    let (_, samples) = load_samples(&target, &split)?;
    let images: Vec<_> = samples.into_iter().map(|s| s.image).collect();
    let (h, w, c) = images[0].shape();
    Prompt::<f64>::new(cfg.variant, cfg.size, h, w, c)?;
    let (prompt, mut report) = run_adapt(&model, &images, &cfg)?;
    if !args.timings {
        report.wall_clock_secs = None;
    }
    for warning in &report.warnings {
        eprintln!("warning: {warning}");
    }
    save_prompt(&prompt, &out)?;
    if let Some(path) = &args.report {
        write_json(path, &report)?;
    }
    Ok(())
}

#[derive(Clone, Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Labeled dataset directory.
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Prompt file; without it the source-only model is evaluated.
    #[arg(long)]
    pub prompt: Option<PathBuf>,
    /// train | test (default test).
    #[arg(long)]
    pub split: Option<String>,
    /// JSON report path; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

config_merge!(EvalArgs { model, target, prompt, split, out });

pub fn eval(args: EvalArgs) -> CliResult<()> {
    let args = args.merged()?;
    let model_path = require(&args.model, "model")?;
    let target = require(&args.target, "target")?;
    let split = args.split.clone().unwrap_or_else(|| "test".into());
    check_split(&split)?;
    let model: Model = load_model(&model_path)?;
    let (n_classes, samples) = load_samples(&target, &split)?;
    if n_classes != model.n_classes() {
        return Err(usage(format!(
            "dataset has {n_classes} classes, model {}",
            model.n_classes()
        )));
    }
    let prompt: Option<Prompt<f64>> = args.prompt.as_ref().map(load_prompt).transpose()?;
    let report = evaluate(&model, prompt.as_ref().map(|p| p as &dyn VisualPrompt<f64>), &samples)?;
    match &args.out {
        Some(path) => write_json(path, &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report).map_err(anyhow::Error::from)?),
    }
    Ok(())
}

#[derive(Clone, Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateArgs {
    /// JSON report to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Benchmark seeds, one full pipeline each.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Tables to produce: size, variant, svp, selection.
    #[arg(long, value_delimiter = ',')]
    pub tables: Option<Vec<String>>,
    /// Box sides of the size sweep.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    /// Pad widths of the svp table.
    #[arg(long, value_delimiter = ',')]
    pub pads: Option<Vec<usize>>,
    /// Box side for the variant and selection tables.
    #[arg(long)]
    pub r: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub lr: Option<Vec<f64>>,
    /// Adaptation epochs per run.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub pretrain_epochs: Option<usize>,
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

config_merge!(AblateArgs {
    out, seeds, tables, sizes, pads, r, lr, epochs, pretrain_epochs, size, classes, n_train, n_test
});

impl AblateArgs {
    pub fn ablation_config(&self) -> CliResult<AblationConfig> {
        let mut cfg = AblationConfig::default();
        let gen = GenDataArgs {
            size: self.size,
            classes: self.classes,
            n_train: self.n_train,
            n_test: self.n_test,
            ..GenDataArgs::default()
        };
        cfg.experiment.generator = gen.generator();
        let side = cfg.experiment.generator.size;
        cfg.sizes = AblationConfig::default_sizes(side);
        cfg.pads = AblationConfig::default_pads(side);
        if let Some(s) = &self.seeds {
            cfg.seeds = s.clone();
        }
        if let Some(t) = &self.tables {
            cfg.tables = t.clone();
        }
        if let Some(s) = &self.sizes {
            cfg.sizes = s.clone();
        }
        if let Some(p) = &self.pads {
            cfg.pads = p.clone();
        }
        if let Some(r) = self.r {
            cfg.experiment.adapt.size = r;
        }
        if let Some(lr) = &self.lr {
            cfg.experiment.adapt.learning_rates = lr.clone();
        }
        if let Some(e) = self.epochs {
            cfg.experiment.adapt.epochs = e;
        }
        if let Some(e) = self.pretrain_epochs {
            cfg.experiment.train.epochs = e;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn ablate(args: AblateArgs) -> CliResult<()> {
    let args = args.merged()?;
    let out = require(&args.out, "out")?;
    let cfg = args.ablation_config()?;
    let report = run_ablation(&cfg)?;
    write_json(&out, &report)
}
