//! Ground-truth datasets: generation, storage and fingerprinting.
//!
//! On disk a dataset is a directory with `manifest.json`, one
//! `traj_XXX.csv` per trajectory holding the observed (possibly noisy)
//! states and measured inputs, and a matching `truth_XXX.csv` with the clean
//! rollout.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{check_dim, Error, Result};
use crate::integrate::{rollout, TimeGrid, Trajectory};
use crate::io::{read_to_string, write_atomic, write_json};
use crate::rng::{stream, Purpose};
use crate::signal::{add_input_noise, add_state_noise, InputSignal};
use crate::systems::SystemSpec;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub truth: Trajectory,
    pub observed: Trajectory,
    /// Input driving the true system.
    pub signal: InputSignal,
    /// Input available to the models.
    pub measured: InputSignal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    /// Fully resolved system, absent for hand-built datasets.
    pub system: Option<SystemSpec>,
    pub grid: TimeGrid,
    pub split: usize,
    pub seed: u64,
    pub state_noise: f64,
    pub input_noise: f64,
    pub samples: Vec<Sample>,
}

#[derive(Serialize, Deserialize)]
struct SignalPair {
    signal: InputSignal,
    measured: InputSignal,
}

#[derive(Serialize, Deserialize)]
struct FilePair {
    observed: String,
    truth: String,
}

#[derive(Serialize, Deserialize)]
struct ManifestBody {
    name: String,
    system: Option<SystemSpec>,
    grid: TimeGrid,
    split: usize,
    seed: u64,
    state_noise: f64,
    input_noise: f64,
    n: usize,
    m: usize,
    trajectories: usize,
    files: Vec<FilePair>,
    signals: Vec<SignalPair>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    #[serde(flatten)]
    body: ManifestBody,
    fingerprint: String,
}

/// Generates the dataset described by `cfg` (with `cfg.seed`).
pub fn generate_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    cfg.validate()?;
    let seed = cfg.seed;
    let grid = cfg.grid()?;
    let system = cfg.system.resolve(&mut stream(seed, Purpose::SystemParams, 0))?;
    let m = system.m();
    let samples = (0..cfg.trajectories)
        .into_par_iter()
        .map(|i| -> Result<Sample> {
            let idx = i as u64;
            let x0 = system.sample_initial(&mut stream(seed, Purpose::InitialState, idx));
            let signal = cfg.signal.realize(m, &mut stream(seed, Purpose::Signal, idx))?;
            let truth = rollout(&system, &x0, &signal, &grid)?;
            let mut observed = add_state_noise(&truth, cfg.state_noise, &mut stream(seed, Purpose::StateNoise, idx))?;
            let measured = if cfg.input_noise > 0.0 {
                let noisy = add_input_noise(&truth.inputs, cfg.input_noise, &mut stream(seed, Purpose::InputNoise, idx))?;
                InputSignal::sampled(&grid, noisy)?
            } else {
                signal.clone()
            };
            observed.inputs = measured.sample_grid(&grid);
            Ok(Sample {
                truth,
                observed,
                signal,
                measured,
            })
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        name: cfg.name.clone(),
        system: Some(system),
        grid,
        split: cfg.split,
        seed,
        state_noise: cfg.state_noise,
        input_noise: cfg.input_noise,
        samples,
    })
}

impl Dataset {
    /// Noise-free dataset from explicit rollouts, observed as they are.
    pub fn from_rollouts(name: &str, split: usize, rollouts: Vec<(Trajectory, InputSignal)>) -> Result<Self> {
        let Some((first, _)) = rollouts.first() else {
            return Err(Error::invalid("dataset", "need at least one trajectory"));
        };
        let grid = first.grid;
        let samples = rollouts
            .into_iter()
            .map(|(truth, signal)| Sample {
                observed: truth.clone(),
                truth,
                measured: signal.clone(),
                signal,
            })
            .collect();
        let ds = Dataset {
            name: name.to_string(),
            system: None,
            grid,
            split,
            seed: 0,
            state_noise: 0.0,
            input_noise: 0.0,
            samples,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn n(&self) -> usize {
        self.samples[0].truth.state_dim()
    }

    pub fn m(&self) -> usize {
        self.samples[0].truth.input_dim()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::invalid("dataset", "no trajectories"));
        }
        if self.split < 2 || self.split >= self.grid.len() {
            return Err(Error::invalid(
                "dataset",
                format!("split {} must lie in [2, {})", self.split, self.grid.len()),
            ));
        }
        let (n, m) = (self.n(), self.m());
        for s in &self.samples {
            for t in [&s.truth, &s.observed] {
                if t.grid != self.grid {
                    return Err(Error::invalid("dataset", "trajectories on different grids"));
                }
                check_dim("dataset state", n, t.state_dim())?;
                check_dim("dataset input", m, t.input_dim())?;
            }
            check_dim("dataset signal", m, s.measured.dim())?;
        }
        Ok(())
    }

    /// Grid of the training segment, points `0..split`.
    pub fn train_grid(&self) -> Result<TimeGrid> {
        self.grid.window(0, self.split - 1)
    }

    /// Grid of the prediction rollout: starts at the last training point and
    /// covers points `split..len`.
    pub fn predict_grid(&self) -> Result<TimeGrid> {
        self.grid.window(self.split - 1, self.grid.len() - self.split)
    }

    fn body(&self) -> Result<ManifestBody> {
        self.validate()?;
        Ok(ManifestBody {
            name: self.name.clone(),
            system: self.system.clone(),
            grid: self.grid,
            split: self.split,
            seed: self.seed,
            state_noise: self.state_noise,
            input_noise: self.input_noise,
            n: self.n(),
            m: self.m(),
            trajectories: self.samples.len(),
            files: (0..self.samples.len())
                .map(|i| FilePair {
                    observed: format!("traj_{i:03}.csv"),
                    truth: format!("truth_{i:03}.csv"),
                })
                .collect(),
            signals: self
                .samples
                .iter()
                .map(|s| SignalPair {
                    signal: s.signal.clone(),
                    measured: s.measured.clone(),
                })
                .collect(),
        })
    }

    fn csvs(&self) -> Result<Vec<(String, String)>> {
        self.samples
            .iter()
            .map(|s| Ok((s.observed.to_csv_string()?, s.truth.to_csv_string()?)))
            .collect()
    }

    fn digest(body: &ManifestBody, csvs: &[(String, String)]) -> Result<String> {
        let mut h = Sha256::new();
        h.update(serde_json::to_string(body)?.as_bytes());
        for (obs, truth) in csvs {
            h.update(b"\0");
            h.update(obs.as_bytes());
            h.update(b"\0");
            h.update(truth.as_bytes());
        }
        Ok(hex::encode(h.finalize()))
    }

    /// SHA-256 over the manifest content and every CSV file.
    pub fn fingerprint(&self) -> Result<String> {
        Self::digest(&self.body()?, &self.csvs()?)
    }

    /// Writes the dataset directory and returns its fingerprint.
    pub fn save(&self, dir: &Path) -> Result<String> {
        let body = self.body()?;
        let csvs = self.csvs()?;
        let fingerprint = Self::digest(&body, &csvs)?;
        for (files, (obs, truth)) in body.files.iter().zip(&csvs) {
            write_atomic(&dir.join(&files.observed), obs.as_bytes())?;
            write_atomic(&dir.join(&files.truth), truth.as_bytes())?;
        }
        write_json(
            &dir.join("manifest.json"),
            &Manifest {
                body,
                fingerprint: fingerprint.clone(),
            },
        )?;
        Ok(fingerprint)
    }

    /// Reads a directory written by [`Dataset::save`] and checks its
    /// fingerprint.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: Manifest = serde_json::from_str(&read_to_string(&dir.join("manifest.json"))?)?;
        let body = manifest.body;
        check_dim("manifest signals", body.trajectories, body.signals.len())?;
        check_dim("manifest files", body.trajectories, body.files.len())?;
        let mut samples = Vec::with_capacity(body.trajectories);
        for (files, sig) in body.files.iter().zip(&body.signals) {
            let read = |name: &str| -> Result<Trajectory> {
                let path = dir.join(name);
                Trajectory::read_csv(read_to_string(&path)?.as_bytes())
            };
            let mut observed = read(&files.observed)?;
            let mut truth = read(&files.truth)?;
            // times are recomputed from the manifest grid
            observed.grid = body.grid;
            truth.grid = body.grid;
            samples.push(Sample {
                truth,
                observed,
                signal: sig.signal.clone(),
                measured: sig.measured.clone(),
            });
        }
        let ds = Dataset {
            name: body.name,
            system: body.system,
            grid: body.grid,
            split: body.split,
            seed: body.seed,
            state_noise: body.state_noise,
            input_noise: body.input_noise,
            samples,
        };
        ds.validate()?;
        check_dim("manifest state", body.n, ds.n())?;
        check_dim("manifest input", body.m, ds.m())?;
        let actual = ds.fingerprint()?;
        if actual != manifest.fingerprint {
            return Err(Error::invalid(
                "dataset",
                format!("fingerprint mismatch: manifest {} vs contents {actual}", manifest.fingerprint),
            ));
        }
        Ok(ds)
    }
}
