//! Experiment configuration and per-task presets.
//!
//! A config is one JSON document. If it carries a `"preset"` key, its other
//! keys are merged over that preset (objects merge recursively, everything
//! else replaces).

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::fields::{Architecture, ModelKind};
use crate::integrate::TimeGrid;
use crate::signal::{InputSignal, SignalSpec};
use crate::systems::SystemSpec;

fn default_true() -> bool {
    true
}
fn default_one() -> usize {
    1
}
fn default_eval_every() -> usize {
    10
}
fn default_models() -> Vec<ModelKind> {
    ModelKind::ALL.to_vec()
}

/// One axis of a sweep study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "axis", rename_all = "snake_case")]
pub enum SweepAxis {
    /// Cartesian product of widths and hidden-layer counts.
    Architecture { widths: Vec<usize>, depths: Vec<usize> },
    StateNoise { levels: Vec<f64> },
    InputNoise { levels: Vec<f64> },
    /// Input levels drawn from `[-k_u, k_u]`.
    InputSpan { levels: Vec<f64> },
    /// Ramp widths replacing the input jumps.
    Transition { widths: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Label of the scenario, used in result tables.
    pub name: String,
    pub system: SystemSpec,
    #[serde(default = "default_model")]
    pub model: ModelKind,
    /// Models trained by `compare` and `sweep`.
    #[serde(default = "default_models")]
    pub models: Vec<ModelKind>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub width: usize,
    pub hidden_layers: usize,
    #[serde(default = "default_true")]
    pub bias: bool,
    #[serde(default = "default_one")]
    pub subnets: usize,
    #[serde(default)]
    pub augment_dim: usize,
    pub trajectories: usize,
    pub t0: f64,
    pub t1: f64,
    pub steps: usize,
    /// Number of leading grid points used for training; prediction covers
    /// the remaining points.
    pub split: usize,
    #[serde(default)]
    pub seed: u64,
    /// Seeds of repeated runs in `compare`; `[seed]` when empty.
    #[serde(default)]
    pub seeds: Vec<u64>,
    /// Trajectories per optimiser step; full batch when absent.
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    pub signal: SignalSpec,
    #[serde(default)]
    pub state_noise: f64,
    #[serde(default)]
    pub input_noise: f64,
    #[serde(default)]
    pub sweep: Option<SweepAxis>,
}

fn default_model() -> ModelKind {
    ModelKind::Icode
}

impl ExperimentConfig {
    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.t0, self.t1, self.steps)
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            width: self.width,
            hidden_layers: self.hidden_layers,
            bias: self.bias,
            subnets: self.subnets,
            augment_dim: self.augment_dim,
        }
    }

    pub fn run_seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.seed]
        } else {
            self.seeds.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::invalid("experiment config", reason));
        self.grid()?;
        self.system.validate()?;
        let points = self.steps + 1;
        if self.split < 2 || self.split >= points {
            return bad(format!("split {} must lie in [2, {})", self.split, points));
        }
        if self.epochs == 0 {
            return bad("epochs must be > 0".into());
        }
        if self.width == 0 || self.hidden_layers == 0 {
            return bad("width and hidden_layers must be >= 1".into());
        }
        if self.trajectories == 0 {
            return bad("trajectories must be > 0".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be > 0".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every must be > 0".into());
        }
        if self.batch_size == Some(0) {
            return bad("batch_size must be > 0".into());
        }
        if self.models.is_empty() {
            return bad("models must not be empty".into());
        }
        for p in [self.state_noise, self.input_noise] {
            if !(p.is_finite() && p >= 0.0) {
                return bad("noise levels must be >= 0".into());
            }
        }
        Ok(())
    }

    /// Parses a config document, resolving a `"preset"` key if present.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)?;
        Self::from_value(value)
    }

    pub fn from_value(mut value: Value) -> Result<Self> {
        let preset = match value.as_object_mut().and_then(|o| o.remove("preset")) {
            None => None,
            Some(Value::String(name)) => Some(name),
            Some(other) => return Err(Error::invalid("preset", format!("expected a name, got {other}"))),
        };
        if let Some(name) = preset {
            let mut base = serde_json::to_value(preset_config(&name)?)?;
            // a different system replaces the preset's parameters wholesale
            if let (Some(new), Some(old)) = (value.get("system"), base.get("system")) {
                if new.get("id").is_some() && new.get("id") != old.get("id") {
                    base["system"] = Value::Null;
                }
            }
            merge(&mut base, value);
            value = base;
        }
        let cfg: ExperimentConfig = serde_json::from_value(value)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (slot, v) => *slot = v,
    }
}

pub const PRESETS: [&str; 12] = [
    "robot",
    "robot_du0",
    "robot_du0.1",
    "dcdc_i",
    "dcdc_ii",
    "rigid_body",
    "rf",
    "glyco",
    "swing",
    "heat1d",
    "heat2d",
    "linear_toy",
];

fn steps_signal(switch_times: &[f64], values: &[f64], channels: usize, transition: f64) -> SignalSpec {
    SignalSpec::Fixed {
        signal: InputSignal::Piecewise {
            switch_times: switch_times.to_vec(),
            values: values.iter().map(|&v| vec![v; channels]).collect(),
            transition,
        },
    }
}

#[allow(clippy::too_many_arguments)]
fn base(
    name: &str,
    system: &str,
    learning_rate: f64,
    epochs: usize,
    width: usize,
    hidden_layers: usize,
    trajectories: usize,
    (t0, t1, steps, split): (f64, f64, usize, usize),
    augment_dim: usize,
    signal: SignalSpec,
) -> Result<ExperimentConfig> {
    Ok(ExperimentConfig {
        name: name.to_string(),
        system: SystemSpec::by_id(system)?,
        model: ModelKind::Icode,
        models: default_models(),
        learning_rate,
        epochs,
        width,
        hidden_layers,
        bias: true,
        subnets: 1,
        augment_dim,
        trajectories,
        t0,
        t1,
        steps,
        split,
        seed: 0,
        seeds: Vec::new(),
        batch_size: None,
        eval_every: 10,
        signal,
        state_noise: 0.0,
        input_noise: 0.0,
        sweep: None,
    })
}

/// Built-in task settings.
pub fn preset_config(name: &str) -> Result<ExperimentConfig> {
    let robot = |du: f64, label: &str| {
        base(
            label,
            "single_link",
            5e-3,
            100,
            50,
            3,
            10,
            (0.0, 1.0, 100, 76),
            2,
            steps_signal(&[0.1, 0.4, 0.8], &[0.0, du, 0.0, du], 1, 0.0),
        )
    };
    let dcdc = |switches: &[f64], values: &[f64], label: &str| {
        base(
            label,
            "dc_dc",
            5e-4,
            600,
            60,
            3,
            10,
            (0.0, 1.0, 74, 50),
            2,
            steps_signal(switches, values, 1, 0.0),
        )
    };
    let cfg = match name {
        "robot" => robot(0.5, "robot")?,
        "robot_du0" => robot(0.0, "robot_du0")?,
        "robot_du0.1" => robot(0.1, "robot_du0.1")?,
        "dcdc_i" => dcdc(&[0.4], &[0.0, 1.0], "dcdc_i")?,
        "dcdc_ii" => dcdc(&[0.1, 0.5, 0.8], &[0.0, 1.0, 0.0, 1.0], "dcdc_ii")?,
        "rigid_body" => base(
            "rigid_body",
            "rigid_body",
            1e-3,
            200,
            60,
            2,
            10,
            (0.0, 1.0, 100, 76),
            2,
            SignalSpec::RandomLevels {
                switch_times: vec![0.1, 0.4, 0.8],
                low: -1.0,
                high: 1.0,
                shared_channels: true,
                transition: 0.0,
                initial: None,
            },
        )?,
        "rf" => base(
            "rf",
            "rabinovich_fabrikant",
            5e-4,
            800,
            60,
            3,
            40,
            (0.0, 1.0, 50, 38),
            2,
            steps_signal(&[0.2], &[0.1, 1.0], 1, 0.8),
        )?,
        "glyco" => base(
            "glyco",
            "glycolytic",
            5e-4,
            500,
            60,
            3,
            10,
            (0.0, 2.0, 200, 151),
            10,
            SignalSpec::RandomLevels {
                switch_times: vec![0.5, 1.0, 1.5],
                low: -0.2,
                high: 0.2,
                shared_channels: false,
                transition: 0.0,
                initial: None,
            },
        )?,
        "swing" => {
            let mut c = base(
                "swing",
                "swing",
                5e-4,
                200,
                60,
                3,
                128,
                (0.0, 5.0, 500, 376),
                50,
                steps_signal(&[0.5, 2.5, 4.5], &[0.0, 1.0, 0.0, 1.0], 10, 0.0),
            )?;
            c.batch_size = Some(16);
            c
        }
        "heat1d" => base(
            "heat1d",
            "heat1d",
            2e-3,
            400,
            200,
            3,
            5,
            (0.0, 0.018, 100, 76),
            200,
            SignalSpec::Fixed {
                signal: InputSignal::HeatBoundary { channels: 2 },
            },
        )?,
        "heat2d" => {
            let t = 0.018;
            base(
                "heat2d",
                "heat2d",
                2e-3,
                400,
                200,
                3,
                5,
                (0.0, t, 100, 76),
                200,
                steps_signal(&[0.1 * t, 0.4 * t, 0.6 * t, 0.9 * t], &[0.0, 10.0, 0.0, 10.0, 0.0], 1, 0.0),
            )?
        }
        // small, fast configuration for smoke tests
        "linear_toy" => base(
            "linear_toy",
            "single_link",
            5e-3,
            20,
            8,
            1,
            3,
            (0.0, 1.0, 20, 16),
            2,
            steps_signal(&[0.3], &[0.0, 0.5], 1, 0.0),
        )?,
        other => {
            return Err(Error::invalid(
                "preset",
                format!("unknown preset {other:?}; known: {}", PRESETS.join(", ")),
            ))
        }
    };
    cfg.validate()?;
    Ok(cfg)
}
