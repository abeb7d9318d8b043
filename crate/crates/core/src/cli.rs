//! Command-line front end.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::contraction::{contraction_scan, ConstantMetric, Verdict};
use crate::dataset::{generate_dataset, Dataset};
use crate::error::{Error, Result};
use crate::experiment::{run_comparison, sweep};
use crate::fields::{ModelKind, VectorFieldModel};
use crate::io::{read_to_string, write_atomic, write_json};
use crate::metrics::R2_CONVENTION;
use crate::train::{evaluate, predict_sample, train};

#[derive(Debug, Parser)]
#[command(name = "icode-lab", version, about = "Neural ODE system identification experiments")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Output directory.
    #[arg(long, global = true, default_value = "runs")]
    pub out: PathBuf,
    /// Overrides the config seed (and its seed list).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true, env = "ICODE_LAB_JOBS")]
    pub jobs: Option<usize>,
    /// Suppresses the per-run summary lines.
    #[arg(long, short, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// Experiment config (JSON).
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a ground-truth dataset.
    Generate(ConfigArg),
    /// Train `model` of the config and evaluate its prediction.
    Train {
        #[command(flatten)]
        config: ConfigArg,
        /// Dataset directory; generated from the config when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Overrides the model kind of the config.
        #[arg(long)]
        kind: Option<ModelKind>,
    },
    /// Evaluate a saved model on a dataset.
    Eval {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train every model of the config on shared data.
    Compare(ConfigArg),
    /// Run the sweep axis of the config.
    Sweep(ConfigArg),
    /// Sample the contraction condition of an ICODE model over a box.
    ContractionCheck {
        /// Check settings (JSON): state_box, input_box, samples, c, seed, metric.
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        model: PathBuf,
    },
}

/// Settings of a contraction check.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckConfig {
    pub state_box: Vec<(f64, f64)>,
    #[serde(default)]
    pub input_box: Vec<(f64, f64)>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Required contraction rate.
    #[serde(default)]
    pub c: f64,
    #[serde(default)]
    pub seed: u64,
    /// Rows of a constant invertible factor `L` of the metric `LᵀL`.
    #[serde(default)]
    pub metric: Option<Vec<Vec<f64>>>,
}

fn default_samples() -> usize {
    1024
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_json(&read_to_string(path)?)?;
    if let Some(s) = seed {
        cfg.seed = s;
        cfg.seeds.clear();
    }
    Ok(cfg)
}

fn dataset_for(cfg: &ExperimentConfig, data: Option<&Path>) -> Result<Dataset> {
    match data {
        Some(dir) => Dataset::load(dir),
        None => generate_dataset(cfg),
    }
}

struct Ctx<'a> {
    out: &'a Path,
    quiet: bool,
}

impl Ctx<'_> {
    fn say(&self, line: String) {
        if !self.quiet {
            println!("{line}");
        }
    }
}

fn cmd_train(ctx: &Ctx, cfg: &ExperimentConfig, data: Option<&Path>) -> Result<()> {
    let ds = dataset_for(cfg, data)?;
    let out = train(cfg, &ds)?;
    let metrics = evaluate(&out.model, &ds)?;
    write_atomic(&ctx.out.join("model.json"), out.model.to_json()?.as_bytes())?;
    let mut curve = String::from("epoch,loss\n");
    for (e, l) in out.loss_curve.iter().enumerate() {
        curve.push_str(&format!("{},{l:?}\n", e + 1));
    }
    write_atomic(&ctx.out.join("loss_curve.csv"), curve.as_bytes())?;
    for (i, s) in ds.samples.iter().enumerate() {
        let pred = predict_sample(&out.model, &ds, s)?;
        write_atomic(&ctx.out.join(format!("pred_{i:03}.csv")), pred.to_csv_string()?.as_bytes())?;
    }
    write_json(
        &ctx.out.join("run.json"),
        &json!({
            "config": cfg,
            "seed": cfg.seed,
            "metrics": metrics,
            "r2_convention": R2_CONVENTION,
            "loss_curve": out.loss_curve,
            "checkpoints": out.checkpoints,
            "best_epoch": out.best.epoch,
            "dataset_fingerprint": ds.fingerprint()?,
        }),
    )?;
    ctx.say(format!(
        "train {} {}: best epoch {} mse {:.6e} r2 {:.4}",
        cfg.name, cfg.model, out.best.epoch, metrics.mse, metrics.r2
    ));
    Ok(())
}

fn cmd_contraction(ctx: &Ctx, check: &CheckConfig, model: &VectorFieldModel) -> Result<()> {
    let icode = model
        .as_icode()
        .ok_or_else(|| Error::invalid("contraction check", "the model must be an ICODE"))?;
    let metric = match &check.metric {
        None => None,
        Some(rows) => {
            let n = rows.len();
            if rows.iter().any(|r| r.len() != n) {
                return Err(Error::invalid("metric", "L must be square"));
            }
            let l = nalgebra::DMatrix::from_fn(n, n, |i, j| rows[i][j]);
            Some(ConstantMetric::new(l)?)
        }
    };
    let report = contraction_scan(
        icode,
        metric.as_ref(),
        &check.state_box,
        &check.input_box,
        check.samples,
        check.c,
        check.seed,
    )?;
    write_json(&ctx.out.join("contraction.json"), &report)?;
    let verdict = match report.verdict {
        Verdict::CertifiedOnSamples => "certified-on-samples",
        Verdict::Violated => "violated",
    };
    ctx.say(format!(
        "contraction: {verdict}, worst lambda {:?}, margin {:?}",
        report.worst_lambda, report.margin
    ));
    Ok(())
}

/// Runs a parsed command.
pub fn execute(cli: Cli) -> Result<()> {
    let g = &cli.global;
    let ctx = Ctx {
        out: &g.out,
        quiet: g.quiet,
    };
    match &cli.command {
        Command::Generate(c) => {
            let cfg = load_config(&c.config, g.seed)?;
            let ds = generate_dataset(&cfg)?;
            let dir = g.out.join("dataset");
            let fp = ds.save(&dir)?;
            ctx.say(format!("generate {}: {} trajectories, fingerprint {fp}", cfg.name, ds.len()));
        }
        Command::Train { config, data, kind } => {
            let mut cfg = load_config(&config.config, g.seed)?;
            if let Some(k) = kind {
                cfg.model = *k;
            }
            cmd_train(&ctx, &cfg, data.as_deref())?;
        }
        Command::Eval { config, model, data } => {
            let cfg = load_config(&config.config, g.seed)?;
            let model = VectorFieldModel::from_json(&read_to_string(model)?)?;
            let ds = dataset_for(&cfg, data.as_deref())?;
            let metrics = evaluate(&model, &ds)?;
            write_json(
                &g.out.join("eval.json"),
                &json!({
                    "model": model.kind(),
                    "metrics": metrics,
                    "r2_convention": R2_CONVENTION,
                    "dataset_fingerprint": ds.fingerprint()?,
                    "seed": ds.seed,
                }),
            )?;
            ctx.say(format!("eval {} {}: mse {:.6e} r2 {:.4}", cfg.name, model.kind(), metrics.mse, metrics.r2));
        }
        Command::Compare(c) => {
            let cfg = load_config(&c.config, g.seed)?;
            let cmp = run_comparison(&cfg)?;
            write_atomic(&g.out.join("comparison.csv"), cmp.to_csv().as_bytes())?;
            write_json(&g.out.join("comparison.json"), &json!({"config": cfg, "comparison": cmp}))?;
            for row in cmp.table() {
                let s = row.scores.expect("comparison rows carry scores");
                ctx.say(format!("{} {}: mse {:.6e} r2 {:.4}", row.scenario, row.model, s.mse, s.r2));
            }
        }
        Command::Sweep(c) => {
            let cfg = load_config(&c.config, g.seed)?;
            let axis = cfg
                .sweep
                .clone()
                .ok_or_else(|| Error::invalid("sweep", "the config has no sweep axis"))?;
            let result = sweep(&cfg, &axis)?;
            write_atomic(&g.out.join("sweep.csv"), result.to_csv().as_bytes())?;
            write_json(&g.out.join("sweep.json"), &json!({"config": cfg, "sweep": result}))?;
            for cell in &result.cells {
                match (&cell.scores, &cell.error) {
                    (Some(s), _) => ctx.say(format!("{} {}: mse {:.6e} r2 {:.4}", cell.scenario, cell.model, s.mse, s.r2)),
                    (None, e) => ctx.say(format!("{} {}: failed: {}", cell.scenario, cell.model, e.as_deref().unwrap_or("?"))),
                }
            }
        }
        Command::ContractionCheck { config, model } => {
            let check: CheckConfig = serde_json::from_str(&read_to_string(&config.config)?)?;
            let model = VectorFieldModel::from_json(&read_to_string(model)?)?;
            cmd_contraction(&ctx, &check, &model)?;
        }
    }
    Ok(())
}

/// Parses `argv`, runs the command in a pool of the requested size and
/// returns the process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.global.jobs {
        if j == 0 {
            eprintln!("error: --jobs must be >= 1");
            return 2;
        }
        pool = pool.num_threads(j);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    match pool.install(|| execute(cli)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
