//! External input signals `u(t)` and their random generators.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::integrate::{InputSampler, TimeGrid, Trajectory};

/// A deterministic vector-valued input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputSignal {
    /// `values[0]` before the first switch, `values[k]` from `switch_times[k-1]`
    /// on. A positive `transition` replaces each jump with a linear ramp over
    /// `[s, s + transition]`.
    Piecewise {
        switch_times: Vec<f64>,
        values: Vec<Vec<f64>>,
        #[serde(default)]
        transition: f64,
    },
    /// `offset + amplitude · sin(2π frequency t + phase)` per channel.
    Sine {
        amplitude: Vec<f64>,
        offset: Vec<f64>,
        frequency: f64,
        #[serde(default)]
        phase: f64,
    },
    /// `2 sin(2πt) e^{-t/5} + 0.1` repeated on every channel.
    HeatBoundary { channels: usize },
    /// Linear interpolation of samples on a uniform grid, held constant
    /// outside it.
    Sampled { t0: f64, dt: f64, values: Vec<Vec<f64>> },
}

impl InputSignal {
    pub fn piecewise(switch_times: Vec<f64>, values: Vec<Vec<f64>>, transition: f64) -> Result<Self> {
        let s = InputSignal::Piecewise {
            switch_times,
            values,
            transition,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn constant(value: Vec<f64>) -> Self {
        InputSignal::Piecewise {
            switch_times: Vec::new(),
            values: vec![value],
            transition: 0.0,
        }
    }

    pub fn sampled(grid: &TimeGrid, values: Vec<Vec<f64>>) -> Result<Self> {
        check_dim("sampled signal", grid.len(), values.len())?;
        let s = InputSignal::Sampled {
            t0: grid.t0(),
            dt: grid.dt(),
            values,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |v: &[Vec<f64>]| v.iter().flatten().all(|x| x.is_finite());
        match self {
            InputSignal::Piecewise {
                switch_times,
                values,
                transition,
            } => {
                check_dim("piecewise values", switch_times.len() + 1, values.len())?;
                let m = values[0].len();
                if values.iter().any(|v| v.len() != m) || !finite(values) {
                    return Err(Error::invalid("piecewise signal", "values must be finite and equally sized"));
                }
                if !(transition.is_finite() && *transition >= 0.0) {
                    return Err(Error::invalid("piecewise signal", "transition must be >= 0"));
                }
                if switch_times.iter().any(|t| !t.is_finite()) {
                    return Err(Error::invalid("piecewise signal", "switch times must be finite"));
                }
                for w in switch_times.windows(2) {
                    if w[1] <= w[0] || w[1] < w[0] + transition {
                        return Err(Error::invalid(
                            "piecewise signal",
                            "switch times must increase and ramps must not overlap",
                        ));
                    }
                }
                Ok(())
            }
            InputSignal::Sine {
                amplitude,
                offset,
                frequency,
                phase,
            } => {
                check_dim("sine offset", amplitude.len(), offset.len())?;
                if amplitude.iter().chain(offset).chain([frequency, phase]).all(|v| v.is_finite()) {
                    Ok(())
                } else {
                    Err(Error::invalid("sine signal", "parameters must be finite"))
                }
            }
            InputSignal::HeatBoundary { .. } => Ok(()),
            InputSignal::Sampled { t0, dt, values } => {
                if values.is_empty() || !(dt.is_finite() && *dt > 0.0 && t0.is_finite()) {
                    return Err(Error::invalid("sampled signal", "need samples and dt > 0"));
                }
                let m = values[0].len();
                if values.iter().any(|v| v.len() != m) || !finite(values) {
                    return Err(Error::invalid("sampled signal", "values must be finite and equally sized"));
                }
                Ok(())
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            InputSignal::Piecewise { values, .. } => values[0].len(),
            InputSignal::Sine { amplitude, .. } => amplitude.len(),
            InputSignal::HeatBoundary { channels } => *channels,
            InputSignal::Sampled { values, .. } => values[0].len(),
        }
    }

    pub fn sample(&self, t: f64) -> Vec<f64> {
        match self {
            InputSignal::Piecewise {
                switch_times,
                values,
                transition,
            } => {
                // index of the last switch at or before t
                let k = switch_times.partition_point(|&s| s <= t);
                if k == 0 {
                    return values[0].clone();
                }
                let s = switch_times[k - 1];
                if *transition > 0.0 && t < s + transition {
                    let a = (t - s) / transition;
                    values[k - 1]
                        .iter()
                        .zip(&values[k])
                        .map(|(p, q)| p + a * (q - p))
                        .collect()
                } else {
                    values[k].clone()
                }
            }
            InputSignal::Sine {
                amplitude,
                offset,
                frequency,
                phase,
            } => {
                let s = (2.0 * std::f64::consts::PI * frequency * t + phase).sin();
                amplitude.iter().zip(offset).map(|(a, o)| o + a * s).collect()
            }
            InputSignal::HeatBoundary { channels } => {
                let v = heat_boundary(t);
                vec![v; *channels]
            }
            InputSignal::Sampled { t0, dt, values } => {
                let x = (t - t0) / dt;
                let last = values.len() - 1;
                if x <= 0.0 {
                    return values[0].clone();
                }
                let k = (x.floor() as usize).min(last);
                if k == last {
                    return values[last].clone();
                }
                let a = x - k as f64;
                values[k]
                    .iter()
                    .zip(&values[k + 1])
                    .map(|(p, q)| p + a * (q - p))
                    .collect()
            }
        }
    }

    /// Samples at every point of `grid`.
    pub fn sample_grid(&self, grid: &TimeGrid) -> Vec<Vec<f64>> {
        grid.times().into_iter().map(|t| self.sample(t)).collect()
    }
}

/// Boundary temperature of the heat benchmark.
pub fn heat_boundary(t: f64) -> f64 {
    2.0 * (2.0 * std::f64::consts::PI * t).sin() * (-t / 5.0).exp() + 0.1
}

impl InputSampler for InputSignal {
    fn input_dim(&self) -> usize {
        self.dim()
    }

    fn sample(&self, t: f64) -> Vec<f64> {
        InputSignal::sample(self, t)
    }
}

/// Slope of the linear interpolant of the grid samples of `sig` on the grid
/// interval containing `t` (the interval to the right at a grid point; the
/// last interval at `t1`).
pub fn signal_derivative(sig: &InputSignal, grid: &TimeGrid, t: f64) -> Vec<f64> {
    let dt = grid.dt();
    let x = ((t - grid.t0()) / dt).floor();
    let k = if x <= 0.0 { 0 } else { (x as usize).min(grid.steps() - 1) };
    let (a, b) = (grid.time(k), grid.time(k + 1));
    let ua = sig.sample(a);
    let ub = sig.sample(b);
    ua.iter().zip(&ub).map(|(p, q)| (q - p) / (b - a)).collect()
}

/// How the input of each trajectory is produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SignalSpec {
    /// The same signal for every trajectory.
    Fixed { signal: InputSignal },
    /// Piecewise signal with levels drawn uniformly from `[low, high]`.
    RandomLevels {
        switch_times: Vec<f64>,
        low: f64,
        high: f64,
        /// One level shared by all channels per segment.
        #[serde(default)]
        shared_channels: bool,
        #[serde(default)]
        transition: f64,
        /// Level before the first switch; random when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        initial: Option<Vec<f64>>,
    },
}

impl SignalSpec {
    /// Signal of one trajectory with input dimension `m`.
    pub fn realize<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Result<InputSignal> {
        match self {
            SignalSpec::Fixed { signal } => {
                signal.validate()?;
                check_dim("signal channels", m, signal.dim())?;
                Ok(signal.clone())
            }
            SignalSpec::RandomLevels {
                switch_times,
                low,
                high,
                shared_channels,
                transition,
                initial,
            } => {
                if !(low.is_finite() && high.is_finite() && low <= high) {
                    return Err(Error::invalid("random levels", "need low <= high"));
                }
                let mut draw = || {
                    if low == high {
                        vec![*low; m]
                    } else if *shared_channels {
                        vec![rng.random_range(*low..*high); m]
                    } else {
                        (0..m).map(|_| rng.random_range(*low..*high)).collect()
                    }
                };
                let mut values = Vec::with_capacity(switch_times.len() + 1);
                match initial {
                    Some(v) => {
                        check_dim("random levels initial", m, v.len())?;
                        values.push(v.clone());
                    }
                    None => values.push(draw()),
                }
                for _ in switch_times {
                    values.push(draw());
                }
                InputSignal::piecewise(switch_times.clone(), values, *transition)
            }
        }
    }

    fn switch_times(&self) -> Vec<f64> {
        match self {
            SignalSpec::Fixed {
                signal: InputSignal::Piecewise { switch_times, .. },
            } => switch_times.clone(),
            SignalSpec::Fixed { .. } => Vec::new(),
            SignalSpec::RandomLevels { switch_times, .. } => switch_times.clone(),
        }
    }

    /// Same switch instants with levels drawn from `[-k_u, k_u]`.
    pub fn with_span(&self, k_u: f64) -> SignalSpec {
        let transition = match self {
            SignalSpec::Fixed {
                signal: InputSignal::Piecewise { transition, .. },
            } => *transition,
            SignalSpec::RandomLevels { transition, .. } => *transition,
            _ => 0.0,
        };
        SignalSpec::RandomLevels {
            switch_times: self.switch_times(),
            low: -k_u.abs(),
            high: k_u.abs(),
            shared_channels: matches!(self, SignalSpec::RandomLevels { shared_channels: true, .. }),
            transition,
            initial: None,
        }
    }

    /// Same levels with every jump replaced by a ramp of width `w`.
    pub fn with_transition(&self, w: f64) -> SignalSpec {
        let mut out = self.clone();
        match &mut out {
            SignalSpec::Fixed {
                signal: InputSignal::Piecewise { transition, .. },
            }
            | SignalSpec::RandomLevels { transition, .. } => *transition = w,
            SignalSpec::Fixed { .. } => {}
        }
        out
    }
}

/// Per-coordinate root mean square over a sequence of vectors.
pub fn coordinate_rms(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.first().map_or(0, Vec::len);
    let mut acc = vec![0.0; n];
    for r in rows {
        for (a, v) in acc.iter_mut().zip(r) {
            *a += v * v;
        }
    }
    acc.iter().map(|a| (a / rows.len() as f64).sqrt()).collect()
}

fn perturb<R: Rng + ?Sized>(rows: &[Vec<f64>], p: f64, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    if !(p.is_finite() && p >= 0.0) {
        return Err(Error::invalid("noise level", format!("need p >= 0, got {p}")));
    }
    if p == 0.0 {
        return Ok(rows.to_vec());
    }
    let sigma: Vec<f64> = coordinate_rms(rows).into_iter().map(|r| p * r).collect();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    Ok(rows
        .iter()
        .map(|r| {
            r.iter()
                .zip(&sigma)
                .map(|(v, s)| v + s * normal.sample(rng))
                .collect()
        })
        .collect())
}

/// Gaussian state noise with standard deviation `p` times the per-coordinate
/// RMS of the clean states. Inputs are left untouched.
pub fn add_state_noise<R: Rng + ?Sized>(traj: &Trajectory, p: f64, rng: &mut R) -> Result<Trajectory> {
    Ok(Trajectory {
        grid: traj.grid,
        states: perturb(&traj.states, p, rng)?,
        inputs: traj.inputs.clone(),
    })
}

/// Gaussian noise on measured input samples, scaled as in
/// [`add_state_noise`].
pub fn add_input_noise<R: Rng + ?Sized>(samples: &[Vec<f64>], p: f64, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    perturb(samples, p, rng)
}
