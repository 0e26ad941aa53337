//! Benchmark harness. One seed generates both domains, pretrains a source
//! model and a target-supervised reference, adapts prompts on the unlabeled
//! target training images and evaluates everything on the target test
//! split.

use serde::{Deserialize, Serialize};

use fvp_core::adapt::{adapt, AdaptConfig, AdaptReport};
use fvp_core::data::{generate, Dataset, GeneratorConfig};
use fvp_core::metrics::{evaluate, EvalReport};
use fvp_core::prompt::{PromptKind, VisualPrompt};
use fvp_core::pseudo::SelectionConfig;
use fvp_core::segnet::{train_source, SegModel, TrainConfig};
use fvp_core::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub generator: GeneratorConfig,
    pub train: TrainConfig,
    pub adapt: AdaptConfig,
}

/// Source model, target-supervised reference and their data for one seed.
pub struct Baselines {
    pub seed: u64,
    pub target: Dataset<f64>,
    pub source_model: SegModel<f64>,
    pub source_only: EvalReport,
    pub target_supervised: EvalReport,
}

pub fn baselines(cfg: &ExperimentConfig, seed: u64) -> Result<Baselines> {
    let data = generate(&cfg.generator, seed)?;
    let train = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let (source_model, _) = train_source(&data.source.train, data.source.n_classes, &train)?;
    let (target_model, _) = train_source(&data.target.train, data.target.n_classes, &train)?;
    Ok(Baselines {
        seed,
        source_only: evaluate(&source_model, None, &data.target.test)?,
        target_supervised: evaluate(&target_model, None, &data.target.test)?,
        target: data.target,
        source_model,
    })
}

/// One adaptation run and its evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptRow {
    pub label: String,
    pub variant: PromptKind,
    /// Box side or pad width.
    pub size: usize,
    pub selection: SelectionConfig,
    pub learnable_params: usize,
    pub chosen_lr: f64,
    pub selected_fraction: f64,
    pub final_loss: Option<f64>,
    pub eval: EvalReport,
}

pub fn adapt_row(base: &Baselines, label: &str, cfg: &AdaptConfig) -> Result<(AdaptRow, AdaptReport)> {
    let cfg = AdaptConfig {
        seed: base.seed,
        ..cfg.clone()
    };
    let (prompt, mut report) = adapt(&base.source_model, &base.target.train_images(), &cfg)?;
    report.wall_clock_secs = None;
    let eval = evaluate(
        &base.source_model,
        Some(&prompt as &dyn VisualPrompt<f64>),
        &base.target.test,
    )?;
    let row = AdaptRow {
        label: label.to_string(),
        variant: cfg.variant,
        size: cfg.size,
        selection: cfg.selection.clone(),
        learnable_params: report.learnable_params,
        chosen_lr: report.chosen_lr,
        selected_fraction: report.selected_fraction,
        final_loss: report.epoch_loss.last().copied(),
        eval,
    };
    Ok((row, report))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub source_only: EvalReport,
    pub target_supervised: EvalReport,
    pub adapted: EvalReport,
    pub adapt: AdaptReport,
}

impl SeedOutcome {
    pub fn dice_gain(&self) -> f64 {
        self.adapted.mean_fg_dice - self.source_only.mean_fg_dice
    }
}

/// Baselines plus the configured adaptation for one seed.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedOutcome> {
    let base = baselines(cfg, seed)?;
    let (row, report) = adapt_row(&base, "fvp", &cfg.adapt)?;
    Ok(SeedOutcome {
        seed,
        source_only: base.source_only,
        target_supervised: base.target_supervised,
        adapted: row.eval,
        adapt: report,
    })
}

pub const TABLES: [&str; 4] = ["size", "variant", "svp", "selection"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub experiment: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub tables: Vec<String>,
    /// Box sides of the size sweep.
    pub sizes: Vec<usize>,
    /// Pad widths of the spatial-prompt table.
    pub pads: Vec<usize>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            experiment: ExperimentConfig::default(),
            seeds: vec![0],
            tables: TABLES.iter().map(|t| t.to_string()).collect(),
            sizes: vec![2, 4, 8, 16, 32, 64],
            pads: vec![32, 20, 7],
        }
    }
}

impl AblationConfig {
    /// Box sides 2, 4, ... up to the image side.
    pub fn default_sizes(side: usize) -> Vec<usize> {
        std::iter::successors(Some(2), |&r| Some(r * 2)).take_while(|&r| r <= side).collect()
    }

    /// Pad widths 32, 20 and 7 for 64-pixel images, scaled to `side`.
    pub fn default_pads(side: usize) -> Vec<usize> {
        [32.0, 20.0, 7.0]
            .iter()
            .map(|p| ((p * side as f64 / 64.0).round() as usize).max(1))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.experiment.adapt.validate()?;
        self.experiment.train.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::InvalidArgument("at least one seed required".into()));
        }
        if let Some(t) = self.tables.iter().find(|t| !TABLES.contains(&t.as_str())) {
            return Err(Error::InvalidArgument(format!(
                "unknown table `{t}` (size|variant|svp|selection)"
            )));
        }
        let side = self.experiment.generator.size;
        let sizes = if self.wants("size") { &self.sizes[..] } else { &[] };
        if let Some(r) = sizes.iter().find(|&&r| r == 0 || r > side) {
            return Err(Error::InvalidArgument(format!("box side {r} outside 1..={side}")));
        }
        let pads = if self.wants("svp") { &self.pads[..] } else { &[] };
        if let Some(p) = pads.iter().find(|&&p| p == 0 || 2 * p > side) {
            return Err(Error::InvalidArgument(format!("pad width {p} outside 1..={}", side / 2)));
        }
        Ok(())
    }

    fn wants(&self, table: &str) -> bool {
        self.tables.iter().any(|t| t == table)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedAblation {
    pub seed: u64,
    pub source_only: EvalReport,
    pub target_supervised: EvalReport,
    /// The configured complex prompt with full selection.
    pub fvp: AdaptRow,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub size: Vec<AdaptRow>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub variant: Vec<AdaptRow>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub svp: Vec<AdaptRow>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub selection: Vec<AdaptRow>,
}

/// Mean foreground Dice/ASD of one row label across seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub table: String,
    pub label: String,
    pub mean_fg_dice: f64,
    pub mean_fg_asd: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub config: AblationConfig,
    pub seeds: Vec<SeedAblation>,
    pub summary: Vec<SummaryRow>,
}

fn selection_rows() -> Vec<(&'static str, SelectionConfig)> {
    let full = SelectionConfig::default();
    vec![
        ("none", SelectionConfig::none()),
        (
            "global",
            SelectionConfig {
                use_intra: false,
                use_prototype: false,
                ..full.clone()
            },
        ),
        (
            "global+intra",
            SelectionConfig {
                use_prototype: false,
                ..full.clone()
            },
        ),
        ("global+intra+prototype", full),
    ]
}

fn ablate_seed(cfg: &AblationConfig, seed: u64) -> Result<SeedAblation> {
    let base = baselines(&cfg.experiment, seed)?;
    let main = AdaptConfig {
        variant: PromptKind::Complex,
        ..cfg.experiment.adapt.clone()
    };
    let (fvp, _) = adapt_row(&base, "complex", &main)?;
    let run = |label: String, c: AdaptConfig| adapt_row(&base, &label, &c).map(|(row, _)| row);
    let mut out = SeedAblation {
        seed,
        source_only: base.source_only.clone(),
        target_supervised: base.target_supervised.clone(),
        fvp: fvp.clone(),
        size: Vec::new(),
        variant: Vec::new(),
        svp: Vec::new(),
        selection: Vec::new(),
    };
    if cfg.wants("size") {
        for &r in &cfg.sizes {
            let row = if r == main.size {
                AdaptRow {
                    label: format!("r={r}"),
                    ..fvp.clone()
                }
            } else {
                run(format!("r={r}"), AdaptConfig { size: r, ..main.clone() })?
            };
            out.size.push(row);
        }
    }
    if cfg.wants("variant") {
        out.variant.push(fvp.clone());
        for kind in [PromptKind::Amplitude, PromptKind::Phase] {
            out.variant
                .push(run(kind.name().to_string(), AdaptConfig { variant: kind, ..main.clone() })?);
        }
    }
    if cfg.wants("svp") {
        for &p in &cfg.pads {
            let c = AdaptConfig {
                variant: PromptKind::Svp,
                size: p,
                ..main.clone()
            };
            out.svp.push(run(format!("pad={p}"), c)?);
        }
    }
    if cfg.wants("selection") {
        for (label, selection) in selection_rows() {
            let row = if selection == main.selection {
                AdaptRow {
                    label: label.to_string(),
                    ..fvp.clone()
                }
            } else {
                run(label.to_string(), AdaptConfig { selection, ..main.clone() })?
            };
            out.selection.push(row);
        }
    }
    Ok(out)
}

fn summarize(seeds: &[SeedAblation]) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    let mut add = |table: &str, label: &str, reports: Vec<&EvalReport>| {
        let n = reports.len() as f64;
        let asd: Vec<f64> = reports.iter().filter_map(|r| r.mean_fg_asd).collect();
        out.push(SummaryRow {
            table: table.to_string(),
            label: label.to_string(),
            mean_fg_dice: reports.iter().map(|r| r.mean_fg_dice).sum::<f64>() / n,
            mean_fg_asd: (asd.len() == reports.len()).then(|| asd.iter().sum::<f64>() / n),
        });
    };
    add("baseline", "source_only", seeds.iter().map(|s| &s.source_only).collect());
    add("baseline", "target_supervised", seeds.iter().map(|s| &s.target_supervised).collect());
    add("baseline", "fvp", seeds.iter().map(|s| &s.fvp.eval).collect());
    type Pick = fn(&SeedAblation) -> &Vec<AdaptRow>;
    let tables: [(&str, Pick); 4] = [
        ("size", |s| &s.size),
        ("variant", |s| &s.variant),
        ("svp", |s| &s.svp),
        ("selection", |s| &s.selection),
    ];
    for (name, pick) in tables {
        let first = pick(&seeds[0]);
        for (i, row) in first.iter().enumerate() {
            add(name, &row.label, seeds.iter().map(|s| &pick(s)[i].eval).collect());
        }
    }
    out
}

pub fn run_ablation(cfg: &AblationConfig) -> Result<AblationReport> {
    cfg.validate()?;
    let seeds = cfg
        .seeds
        .iter()
        .map(|&s| ablate_seed(cfg, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationReport {
        config: cfg.clone(),
        summary: summarize(&seeds),
        seeds,
    })
}
