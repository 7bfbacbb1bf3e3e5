//! Supervised pre-training of forecasters and forecast-error evaluation.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::forecast::ForecastModel;
use crate::market_data::WindowSample;
use crate::optim::{Adam, AdamConfig};
use crate::params::{Bindings, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default = "default_clip")]
    pub clip_norm: f64,
    pub seed: u64,
    /// Epochs without a dev-MAE improvement before stopping.
    pub patience: usize,
}

fn default_clip() -> f64 {
    1.0
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            clip_norm: 1.0,
            seed: 0,
            patience: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return Err(Error::InvalidConfig("epochs, batch_size and patience must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if !(self.clip_norm.is_finite() && self.clip_norm > 0.0) {
            return Err(Error::InvalidConfig("clip_norm must be positive".into()));
        }
        Ok(())
    }
}

/// MAE, RMSE and MAPE (as a ratio) over every forecast entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastErrorReport {
    pub mae: f64,
    pub rmse: f64,
    pub mape: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_mae: f64,
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub model: ForecastModel,
    pub curve: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_dev_mae: f64,
}

/// Relative-price MSE of one sample: residuals are divided by each asset's
/// window mean so assets at different price levels weigh the same.
pub fn sample_loss(tape: &mut Tape, model: &ForecastModel, bindings: &Bindings, sample: &WindowSample) -> Result<Var> {
    let (out, norm) = model.forward_graph(tape, bindings, &sample.window)?;
    let (h, n) = tape.shape(out);
    if sample.target.dim() != (n, h) {
        return Err(Error::ShapeMismatch(format!(
            "target {:?}, forecast is {:?}",
            sample.target.dim(),
            (n, h)
        )));
    }
    // pred/level − target/level = out·(scale/level) + (mean − target)/level
    let gain = Array2::from_shape_fn((h, n), |(_, i)| norm.scale[i] / norm.mean[i]);
    let offset = Array2::from_shape_fn((h, n), |(j, i)| (norm.mean[i] - sample.target[[i, j]]) / norm.mean[i]);
    let gain = tape.constant(gain);
    let offset = tape.constant(offset);
    let scaled = tape.mul(out, gain);
    let resid = tape.add(scaled, offset);
    let sq = tape.mul(resid, resid);
    Ok(tape.mean(sq))
}

/// Loss and full-parameter gradient for one sample.
pub fn sample_gradient(model: &ForecastModel, sample: &WindowSample) -> Result<(f64, ParamStore)> {
    let mut tape = Tape::new();
    let b = model.bind(&mut tape, |_| true);
    let loss = sample_loss(&mut tape, model, &b, sample)?;
    let grads = tape.backward(loss);
    let g = b.gradients(&tape, &grads, model.params().names().cloned());
    Ok((tape.scalar_value(loss), g))
}

/// Mean loss and gradient over a batch. Per-sample work runs in parallel;
/// the reduction is sequential in sample order, so results do not depend on
/// thread scheduling.
pub fn batch_gradient(model: &ForecastModel, batch: &[&WindowSample]) -> Result<(f64, ParamStore)> {
    let parts: Vec<(f64, ParamStore)> = batch
        .par_iter()
        .map(|s| sample_gradient(model, s))
        .collect::<Result<_>>()?;
    let mut total = ParamStore::new();
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        total.add_scaled(g, 1.0);
    }
    let k = batch.len() as f64;
    total.scale(1.0 / k);
    Ok((loss / k, total))
}

/// Train every parameter of `model` by minibatch gradient descent, keeping
/// the parameters with the best dev MAE.
pub fn pretrain(
    model: ForecastModel,
    train: &[WindowSample],
    dev: &[WindowSample],
    cfg: &TrainConfig,
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || dev.is_empty() {
        return Err(Error::InvalidData("pretraining needs at least one train and one dev sample".into()));
    }
    let mut model = model;
    let mut opt = Adam::new(AdamConfig {
        learning_rate: cfg.learning_rate,
        clip_norm: Some(cfg.clip_norm),
        ..AdamConfig::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut best = model.clone();
    let mut best_mae = evaluate_forecasts(&model, dev)?.mae;
    let mut best_epoch = 0;
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut stale = 0;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&WindowSample> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, grads) = batch_gradient(&model, &batch)?;
            if !loss.is_finite() || !grads.all_finite() {
                return Err(Error::DivergedLoss {
                    epoch,
                    step,
                    detail: format!("batch loss {loss}, gradient norm {}", grads.global_norm()),
                });
            }
            opt.step(model.params_mut(), &grads);
            if !model.params().all_finite() {
                return Err(Error::DivergedLoss {
                    epoch,
                    step,
                    detail: "parameters became non-finite".into(),
                });
            }
            epoch_loss += loss * batch.len() as f64;
        }
        let dev_mae = evaluate_forecasts(&model, dev)?.mae;
        curve.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / train.len() as f64,
            dev_mae,
        });
        log::debug!("epoch {epoch}: train loss {:.3e}, dev MAE {dev_mae:.4}", epoch_loss / train.len() as f64);
        if dev_mae < best_mae {
            best_mae = dev_mae;
            best = model.clone();
            best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    Ok(PretrainOutcome {
        model: best,
        curve,
        best_epoch,
        best_dev_mae: best_mae,
    })
}

/// MAE/RMSE/MAPE between paired prediction and target matrices.
pub fn error_report(predictions: &[Array2<f64>], targets: &[Array2<f64>]) -> Result<ForecastErrorReport> {
    if predictions.is_empty() || predictions.len() != targets.len() {
        return Err(Error::InvalidData("need equally many, nonempty predictions and targets".into()));
    }
    let (mut abs, mut sq, mut pct, mut count) = (0.0, 0.0, 0.0, 0usize);
    for (p, t) in predictions.iter().zip(targets) {
        if p.dim() != t.dim() {
            return Err(Error::ShapeMismatch(format!("prediction {:?} vs target {:?}", p.dim(), t.dim())));
        }
        for (&pv, &tv) in p.iter().zip(t.iter()) {
            if tv == 0.0 {
                return Err(Error::ZeroTarget);
            }
            let e = pv - tv;
            abs += e.abs();
            sq += e * e;
            pct += e.abs() / tv.abs();
            count += 1;
        }
    }
    let c = count as f64;
    Ok(ForecastErrorReport {
        mae: abs / c,
        rmse: (sq / c).sqrt(),
        mape: pct / c,
    })
}

/// Forecast error of `model` over `samples`, in price units.
pub fn evaluate_forecasts(model: &ForecastModel, samples: &[WindowSample]) -> Result<ForecastErrorReport> {
    if samples.is_empty() {
        return Err(Error::InvalidData("no samples to evaluate".into()));
    }
    let preds: Vec<Array2<f64>> = samples
        .par_iter()
        .map(|s| model.forward(&s.window).map(|f| f.values))
        .collect::<Result<_>>()?;
    let targets: Vec<Array2<f64>> = samples.iter().map(|s| s.target.clone()).collect();
    error_report(&preds, &targets)
}
