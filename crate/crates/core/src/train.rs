//! Training loop and prediction metrics.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::dataset::{Dataset, Sample};
use crate::error::{check_dim, Error, Result};
use crate::fields::{ModelGradient, ModelKind, VectorFieldModel};
use crate::integrate::{rollout, rollout_loss_grad, Differentiable, InputSampler, NoInput, Trajectory};
use crate::metrics::{compute_metrics, Metrics};
use crate::nn::{AdamConfig, AdamState};
use crate::rng::{stream, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    /// One-based epoch count after which the checkpoint was taken.
    pub epoch: usize,
    pub train_loss: f64,
    /// Pooled prediction MSE; infinite when the prediction diverged.
    pub predict_mse: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best checkpoint snapshot.
    pub model: VectorFieldModel,
    /// Mean training loss of every epoch.
    pub loss_curve: Vec<f64>,
    pub checkpoints: Vec<Checkpoint>,
    pub best: Checkpoint,
}

fn input_of<'a>(model: &VectorFieldModel, sample: &'a Sample) -> &'a dyn InputSampler {
    if model.uses_input() {
        &sample.measured
    } else {
        &NoInput
    }
}

/// Randomly initialised model of `kind` for the dataset, seeded per kind.
pub fn init_model(cfg: &ExperimentConfig, kind: ModelKind, dataset: &Dataset) -> Result<VectorFieldModel> {
    let index = ModelKind::ALL.iter().position(|k| *k == kind).unwrap_or(0) as u64;
    let mut rng = stream(cfg.seed, Purpose::ModelInit, index);
    VectorFieldModel::build(kind, dataset.n(), dataset.m(), &cfg.architecture(), &mut rng)
}

/// Trains `cfg.model` from a fresh initialisation.
pub fn train(cfg: &ExperimentConfig, dataset: &Dataset) -> Result<TrainOutcome> {
    train_from(cfg, init_model(cfg, cfg.model, dataset)?, dataset)
}

fn batch_loss_grad(model: &VectorFieldModel, dataset: &Dataset, batch: &[usize]) -> Result<(f64, ModelGradient)> {
    let grid = dataset.train_grid()?;
    let steps = grid.steps();
    let parts = batch
        .par_iter()
        .map(|&i| {
            let s = &dataset.samples[i];
            let target = s.observed.window(0, steps)?;
            rollout_loss_grad(model, &s.observed.states[0], input_of(model, s), &grid, &target)
        })
        .collect::<Vec<_>>();
    let mut loss = 0.0;
    let mut grad = model.zero_gradient();
    for part in parts {
        let part = part?;
        loss += part.loss;
        grad.add_assign(&part.gradient);
    }
    let scale = 1.0 / batch.len() as f64;
    grad.scale(scale);
    Ok((loss * scale, grad))
}

/// Adam on the training segments starting from `model`. Every
/// `cfg.eval_every` epochs and after the last one the prediction MSE is
/// recorded and the best snapshot kept.
pub fn train_from(cfg: &ExperimentConfig, mut model: VectorFieldModel, dataset: &Dataset) -> Result<TrainOutcome> {
    if cfg.epochs == 0 {
        return Err(Error::invalid("training", "epochs must be > 0"));
    }
    dataset.validate()?;
    check_dim("model state", dataset.n(), model.n())?;
    if model.uses_input() {
        check_dim("model input", dataset.m(), model.m())?;
    }
    let adam = AdamConfig::new(cfg.learning_rate);
    let mut states: Vec<AdamState> = model.nets().into_iter().map(|n| AdamState::new(adam, n)).collect();
    let count = dataset.len();
    let batch = cfg.batch_size.unwrap_or(count).clamp(1, count);

    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    let mut checkpoints = Vec::new();
    let mut best: Option<(Checkpoint, VectorFieldModel)> = None;
    let mut order: Vec<usize> = (0..count).collect();
    for epoch in 0..cfg.epochs {
        if batch < count {
            order.sort_unstable();
            order.shuffle(&mut stream(cfg.seed, Purpose::Batching, epoch as u64));
        }
        let mut weighted = 0.0;
        for chunk in order.chunks(batch) {
            let diverged = |e: Error| Error::TrainingDiverged {
                epoch,
                source: Box::new(e),
            };
            let (loss, grad) = batch_loss_grad(&model, dataset, chunk).map_err(diverged)?;
            if !grad.is_finite() {
                return Err(diverged(Error::invalid("gradient", "non-finite value")));
            }
            for ((net, state), g) in model.nets_mut().into_iter().zip(&mut states).zip(&grad.0) {
                state.update(net, g)?;
            }
            weighted += loss * chunk.len() as f64;
        }
        let epoch_loss = weighted / count as f64;
        loss_curve.push(epoch_loss);

        let done = epoch + 1;
        if done % cfg.eval_every == 0 || done == cfg.epochs {
            let predict_mse = evaluate(&model, dataset).map(|m| m.mse).unwrap_or(f64::INFINITY);
            let cp = Checkpoint {
                epoch: done,
                train_loss: epoch_loss,
                predict_mse,
            };
            checkpoints.push(cp);
            let better = match &best {
                None => true,
                Some((b, _)) => predict_mse < b.predict_mse,
            };
            if better {
                best = Some((cp, model.clone()));
            }
        }
    }
    let (best, model) = best.expect("at least one checkpoint");
    Ok(TrainOutcome {
        model,
        loss_curve,
        checkpoints,
        best,
    })
}

/// Prediction rollout of one sample: starts from the observed state at the
/// last training point and covers points `split - 1..len`. The first state
/// is the starting point itself.
pub fn predict_sample(model: &VectorFieldModel, dataset: &Dataset, sample: &Sample) -> Result<Trajectory> {
    let grid = dataset.predict_grid()?;
    let x0 = &sample.observed.states[dataset.split - 1];
    let h0 = model.lift(x0)?;
    Ok(rollout(model, &h0, input_of(model, sample), &grid)?.project(model.n()))
}

/// Prediction metrics against the clean ground truth of every trajectory.
pub fn evaluate(model: &VectorFieldModel, dataset: &Dataset) -> Result<Metrics> {
    dataset.validate()?;
    check_dim("model state", dataset.n(), model.n())?;
    let predicted = dataset
        .samples
        .par_iter()
        .map(|s| predict_sample(model, dataset, s).map(|t| t.states[1..].to_vec()))
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let truth: Vec<Vec<Vec<f64>>> = dataset
        .samples
        .iter()
        .map(|s| s.truth.states[dataset.split..].to_vec())
        .collect();
    compute_metrics(&predicted, &truth)
}
