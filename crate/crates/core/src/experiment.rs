//! Model comparisons and sweep studies over a base configuration.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, SweepAxis};
use crate::dataset::{generate_dataset, Dataset};
use crate::error::{Error, Result};
use crate::fields::ModelKind;
use crate::integrate::format_f64;
use crate::metrics::{median, Metrics, Scores, R2_CONVENTION};
use crate::train::{evaluate, train, TrainOutcome};

/// One row of a result table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub model: ModelKind,
    pub scenario: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Absent when the cell failed.
    pub scores: Option<Scores>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_epoch: Option<usize>,
}

pub const CSV_HEADER: &str = "model,scenario,mse,mae,rmse,r2";

/// Result table in the fixed column order; failed cells print `NaN`.
pub fn rows_to_csv(rows: &[ResultRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let nan = Scores {
            mse: f64::NAN,
            mae: f64::NAN,
            rmse: f64::NAN,
            r2: f64::NAN,
        };
        let s = r.scores.unwrap_or(nan);
        let scenario = if r.scenario.contains([',', '"']) {
            format!("\"{}\"", r.scenario.replace('"', "\"\""))
        } else {
            r.scenario.clone()
        };
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.model,
            scenario,
            format_f64(s.mse),
            format_f64(s.mae),
            format_f64(s.rmse),
            format_f64(s.r2)
        )
        .expect("writing to a string");
    }
    out
}

/// One trained and evaluated model.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub kind: ModelKind,
    pub seed: u64,
    pub outcome: TrainOutcome,
    pub metrics: Metrics,
}

/// Trains and evaluates one model on a dataset.
pub fn run_one(cfg: &ExperimentConfig, kind: ModelKind, dataset: &Dataset) -> Result<RunResult> {
    let mut cfg = cfg.clone();
    cfg.model = kind;
    let outcome = train(&cfg, dataset)?;
    let metrics = evaluate(&outcome.model, dataset)?;
    Ok(RunResult {
        kind,
        seed: cfg.seed,
        outcome,
        metrics,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedFingerprint {
    pub seed: u64,
    pub fingerprint: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Comparison {
    pub scenario: String,
    pub r2_convention: String,
    pub datasets: Vec<SeedFingerprint>,
    /// Per-seed rows, seeds outer and models inner.
    pub runs: Vec<ResultRow>,
    /// Per-model medians across seeds; empty for a single seed.
    pub medians: Vec<ResultRow>,
}

impl Comparison {
    /// The table written as CSV: per-seed rows, then the medians.
    pub fn table(&self) -> Vec<ResultRow> {
        self.runs.iter().chain(&self.medians).cloned().collect()
    }

    pub fn to_csv(&self) -> String {
        rows_to_csv(&self.table())
    }

    pub fn median(&self, kind: ModelKind) -> Option<Scores> {
        if self.medians.is_empty() {
            self.runs.iter().find(|r| r.model == kind).and_then(|r| r.scores)
        } else {
            self.medians.iter().find(|r| r.model == kind).and_then(|r| r.scores)
        }
    }
}

/// Trains every model of `cfg.models` on the same dataset for each seed of
/// `cfg.run_seeds()`.
pub fn run_comparison(cfg: &ExperimentConfig) -> Result<Comparison> {
    cfg.validate()?;
    let seeds = cfg.run_seeds();
    let datasets = seeds
        .iter()
        .map(|&seed| {
            let mut c = cfg.clone();
            c.seed = seed;
            generate_dataset(&c).map(|d| (c, d))
        })
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, ModelKind)> = (0..seeds.len())
        .flat_map(|i| cfg.models.iter().map(move |&k| (i, k)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(i, kind)| run_one(&datasets[i].0, kind, &datasets[i].1))
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let multi = seeds.len() > 1;
    let runs: Vec<ResultRow> = results
        .iter()
        .map(|r| ResultRow {
            model: r.kind,
            scenario: if multi {
                format!("{}:seed={}", cfg.name, r.seed)
            } else {
                cfg.name.clone()
            },
            seed: Some(r.seed),
            scores: Some(r.metrics.scores()),
            error: None,
            best_epoch: Some(r.outcome.best.epoch),
        })
        .collect();
    let medians = if multi {
        cfg.models
            .iter()
            .map(|&kind| {
                let of = |f: fn(&Scores) -> f64| -> f64 {
                    let v: Vec<f64> = runs
                        .iter()
                        .filter(|r| r.model == kind)
                        .filter_map(|r| r.scores.as_ref().map(f))
                        .collect();
                    median(&v)
                };
                ResultRow {
                    model: kind,
                    scenario: format!("{}:median", cfg.name),
                    seed: None,
                    scores: Some(Scores {
                        mse: of(|s| s.mse),
                        mae: of(|s| s.mae),
                        rmse: of(|s| s.rmse),
                        r2: of(|s| s.r2),
                    }),
                    error: None,
                    best_epoch: None,
                }
            })
            .collect()
    } else {
        Vec::new()
    };
    let fingerprints = datasets
        .iter()
        .map(|(c, d)| {
            Ok(SeedFingerprint {
                seed: c.seed,
                fingerprint: d.fingerprint()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Comparison {
        scenario: cfg.name.clone(),
        r2_convention: R2_CONVENTION.to_string(),
        datasets: fingerprints,
        runs,
        medians,
    })
}

/// Labelled configurations of the sweep points of `axis`.
pub fn sweep_points(base: &ExperimentConfig, axis: &SweepAxis) -> Result<Vec<(String, ExperimentConfig)>> {
    let mut out = Vec::new();
    let mut push = |label: String, f: &dyn Fn(&mut ExperimentConfig)| {
        let mut c = base.clone();
        f(&mut c);
        out.push((label, c));
    };
    match axis {
        SweepAxis::Architecture { widths, depths } => {
            for &w in widths {
                for &d in depths {
                    push(format!("width={w} depth={d}"), &|c| {
                        c.width = w;
                        c.hidden_layers = d;
                    });
                }
            }
        }
        SweepAxis::StateNoise { levels } => {
            for &p in levels {
                push(format!("state_noise={p}"), &|c| c.state_noise = p);
            }
        }
        SweepAxis::InputNoise { levels } => {
            for &p in levels {
                push(format!("input_noise={p}"), &|c| c.input_noise = p);
            }
        }
        SweepAxis::InputSpan { levels } => {
            for &k in levels {
                push(format!("k_u={k}"), &|c| c.signal = c.signal.with_span(k));
            }
        }
        SweepAxis::Transition { widths } => {
            for &w in widths {
                push(format!("transition={w}"), &|c| c.signal = c.signal.with_transition(w));
            }
        }
    }
    if out.is_empty() {
        return Err(Error::invalid("sweep", "axis has no values"));
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub scenario: String,
    pub axis: SweepAxis,
    pub r2_convention: String,
    /// Sweep points outer, models inner.
    pub cells: Vec<ResultRow>,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        rows_to_csv(&self.cells)
    }

    pub fn failures(&self) -> usize {
        self.cells.iter().filter(|c| c.error.is_some()).count()
    }
}

/// Full train and evaluate for every (sweep point, model) cell. Failed
/// cells are recorded and do not stop the sweep.
pub fn sweep(base: &ExperimentConfig, axis: &SweepAxis) -> Result<SweepResult> {
    base.validate()?;
    let points = sweep_points(base, axis)?;
    let datasets: Vec<Result<Dataset>> = points
        .iter()
        .map(|(_, c)| c.validate().and_then(|_| generate_dataset(c)))
        .collect();
    let jobs: Vec<(usize, ModelKind)> = (0..points.len())
        .flat_map(|i| base.models.iter().map(move |&k| (i, k)))
        .collect();
    let cells = jobs
        .par_iter()
        .map(|&(i, kind)| {
            let (label, cfg) = &points[i];
            let result = match &datasets[i] {
                Ok(ds) => run_one(cfg, kind, ds),
                Err(e) => Err(Error::invalid("sweep dataset", e.to_string())),
            };
            let (scores, error, best_epoch) = match result {
                Ok(r) => (Some(r.metrics.scores()), None, Some(r.outcome.best.epoch)),
                Err(e) => (None, Some(e.to_string()), None),
            };
            ResultRow {
                model: kind,
                scenario: format!("{} {label}", base.name),
                seed: Some(cfg.seed),
                scores,
                error,
                best_epoch,
            }
        })
        .collect();
    Ok(SweepResult {
        scenario: base.name.clone(),
        axis: axis.clone(),
        r2_convention: R2_CONVENTION.to_string(),
        cells,
    })
}
