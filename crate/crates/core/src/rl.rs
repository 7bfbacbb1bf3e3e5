//! Reward signals and policy fine-tuning on realized returns.
//!
//! The per-day objective logged is `α·log(ρ)·r1 + β·r2`. The gradient step
//! uses the score-function form instead: `α·A·log N(ρ̃; μ, σ)` with `A` the
//! realized `r1` minus the batch mean, plus `α·r1` differentiated through the
//! confidence vector at fixed ρ, plus `β·r2`.

use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use ndarray::{s, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::forecast::ForecastModel;
use crate::lora::{inject, AdapterTarget, InjectionPlan, RankPolicy};
use crate::market_data::PriceSeries;
use crate::optim::{Adam, AdamConfig};
use crate::params::ParamStore;
use crate::policy::{
    clamp_rho, position_weights, select_positions, ForecasterStage, Policy, PortfolioVector, ScoreMode,
    TrainableParts,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RLConfig {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    pub epochs: usize,
    /// Cap on decision days per episode; the whole series when absent.
    #[serde(default)]
    pub episode_days: Option<usize>,
    #[serde(default = "default_batch")]
    pub batch_days: usize,
    pub learning_rate: f64,
    #[serde(default = "default_clip")]
    pub clip_norm: f64,
    pub seed: u64,
}

fn default_alpha() -> f64 {
    0.05
}
fn default_beta() -> f64 {
    1.0
}
fn default_batch() -> usize {
    32
}
fn default_clip() -> f64 {
    1.0
}

impl Default for RLConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            beta: 1.0,
            epochs: 40,
            episode_days: None,
            batch_days: 32,
            learning_rate: 0.02,
            clip_norm: 1.0,
            seed: 0,
        }
    }
}

impl RLConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.beta > 0.0 && self.alpha.is_finite() && self.beta.is_finite()) {
            return Err(Error::InvalidConfig("alpha and beta must be positive".into()));
        }
        if self.epochs == 0 || self.batch_days == 0 || self.episode_days == Some(0) {
            return Err(Error::InvalidConfig("epochs, batch_days and episode_days must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) || !(self.clip_norm > 0.0) {
            return Err(Error::InvalidConfig("learning_rate and clip_norm must be positive".into()));
        }
        Ok(())
    }
}

fn check_len(what: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch(format!("{what}: {a} returns vs {b} assets")));
    }
    Ok(())
}

/// `Σ δ∘(long + short)`.
pub fn reward_r1(delta: &[f64], portfolio: &PortfolioVector) -> Result<f64> {
    check_len("r1", delta.len(), portfolio.n_assets())?;
    Ok(delta
        .iter()
        .zip(portfolio.long_alloc.iter().zip(&portfolio.short_alloc))
        .map(|(d, (l, s))| d * l + d * s)
        .sum())
}

/// `Σ δ∘v` over every asset.
pub fn reward_r2(delta: &[f64], v: &[f64]) -> Result<f64> {
    check_len("r2", delta.len(), v.len())?;
    Ok(delta.iter().zip(v).map(|(d, v)| d * v).sum())
}

pub fn objective(rho: f64, r1: f64, r2: f64, cfg: &RLConfig) -> f64 {
    cfg.alpha * rho.ln() * r1 + cfg.beta * r2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub date: Option<NaiveDate>,
    pub delta: Vec<f64>,
    pub portfolio: PortfolioVector,
    pub r1: f64,
    pub r2: f64,
}

/// One line of an episode log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub epoch: usize,
    pub date: NaiveDate,
    pub rho: f64,
    pub mu: f64,
    pub sigma: f64,
    pub r1: f64,
    pub r2: f64,
    pub j: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ObjectiveForm {
    /// `α·log(ρ)·r1 + β·r2` with ρ = μ + σ·noise differentiated directly.
    Literal,
    /// The training surrogate. `advantage` replaces the realized `r1` as the
    /// score-function weight when given; `draw` replaces `μ + σ·noise` as the
    /// sampled proportion.
    Surrogate { advantage: Option<f64>, draw: Option<f64> },
}

/// Nodes and values for one day's objective.
#[derive(Debug, Clone)]
pub struct StepGraph {
    pub objective: Var,
    /// `α·log N(ρ̃; μ, σ)`; absent for the literal form.
    pub score_term: Option<Var>,
    /// `α·r1 + β·r2` with ρ held fixed; absent for the literal form.
    pub pathwise_term: Option<Var>,
    pub handles: Vec<(String, Var)>,
    pub mu: f64,
    pub sigma: f64,
    pub rho: f64,
    pub r1: f64,
    pub r2: f64,
    pub v: Vec<f64>,
}

pub fn step_graph(
    tape: &mut Tape,
    policy: &Policy,
    window: &Array2<f64>,
    delta: &[f64],
    noise: f64,
    parts: TrainableParts,
    cfg: &RLConfig,
    form: ObjectiveForm,
) -> Result<StepGraph> {
    check_len("step", delta.len(), policy.n_assets())?;
    let g = policy.graph(tape, window, parts)?;
    let mu_v = tape.scalar_value(g.mu);
    let sigma_v = tape.scalar_value(g.sigma);
    let rho_raw = match form {
        ObjectiveForm::Surrogate { draw: Some(x), .. } => x,
        _ => mu_v + sigma_v * noise,
    };
    let rho = clamp_rho(rho_raw);

    let v: Vec<f64> = tape.value(g.v).iter().cloned().collect();
    let (long, short) = select_positions(&v, policy.selection)?;
    let vt = tape.transpose(g.v);

    let d_long = tape.constant(Array2::from_shape_fn((1, long.len()), |(_, k)| delta[long[k]]));
    let vl = tape.gather_cols(vt, &long);
    let wl = tape.softmax_rows(vl);
    let prod = tape.mul(wl, d_long);
    let long_ret = tape.sum(prod);

    let d_short = tape.constant(Array2::from_shape_fn((1, short.len()), |(_, k)| delta[short[k]]));
    let vs = tape.gather_cols(vt, &short);
    let vs = tape.scale(vs, -1.0);
    let vs = tape.offset(vs, 1.0);
    let ws = tape.softmax_rows(vs);
    let prod = tape.mul(ws, d_short);
    let short_ret = tape.sum(prod);
    let short_ret = tape.scale(short_ret, -1.0);

    let d_all = tape.constant(Array2::from_shape_vec((1, delta.len()), delta.to_vec()).expect("1×n"));
    let prod = tape.mul(vt, d_all);
    let r2 = tape.sum(prod);

    let r1_val = rho * tape.scalar_value(long_ret) + (1.0 - rho) * tape.scalar_value(short_ret);
    let r2_val = tape.scalar_value(r2);

    let (objective, score_term, pathwise_term) = match form {
        ObjectiveForm::Literal => {
            let rho_var = if rho == rho_raw {
                let sz = tape.scale(g.sigma, noise);
                tape.add(g.mu, sz)
            } else {
                tape.scalar(rho)
            };
            let gap = tape.sub(long_ret, short_ret);
            let lift = tape.mul_scalar(gap, rho_var);
            let r1 = tape.add(short_ret, lift);
            let log_rho = tape.ln(rho_var);
            let a = tape.mul(log_rho, r1);
            let a = tape.scale(a, cfg.alpha);
            let b = tape.scale(r2, cfg.beta);
            (tape.add(a, b), None, None)
        }
        ObjectiveForm::Surrogate { advantage, .. } => {
            let target = tape.scalar(rho_raw);
            let diff = tape.sub(target, g.mu);
            let sq = tape.mul(diff, diff);
            let var = tape.mul(g.sigma, g.sigma);
            let var2 = tape.scale(var, 2.0);
            let quad = tape.div(sq, var2);
            let log_sigma = tape.ln(g.sigma);
            let neg = tape.add(quad, log_sigma);
            let score = tape.scale(neg, -cfg.alpha);

            let l = tape.scale(long_ret, cfg.alpha * rho);
            let s = tape.scale(short_ret, cfg.alpha * (1.0 - rho));
            let path = tape.add(l, s);
            let b = tape.scale(r2, cfg.beta);
            let path = tape.add(path, b);

            let weighted = tape.scale(score, advantage.unwrap_or(r1_val));
            (tape.add(weighted, path), Some(score), Some(path))
        }
    };
    Ok(StepGraph {
        objective,
        score_term,
        pathwise_term,
        handles: g.handles,
        mu: mu_v,
        sigma: sigma_v,
        rho,
        r1: r1_val,
        r2: r2_val,
        v,
    })
}

/// Table-4 style variants of the forecaster stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum AblationMode {
    /// The market scorer reads the raw window.
    FedRemoved,
    /// Pre-trained forecaster, nothing trainable in it.
    FedFrozen,
    /// Pre-trained forecaster, every weight trainable.
    FedFinetuning,
    Lora(AdapterTarget),
}

impl AblationMode {
    pub const ALL: [AblationMode; 7] = [
        AblationMode::FedRemoved,
        AblationMode::FedFrozen,
        AblationMode::FedFinetuning,
        AblationMode::Lora(AdapterTarget::Encoders),
        AblationMode::Lora(AdapterTarget::Decoder),
        AblationMode::Lora(AdapterTarget::FrequencyAttention),
        AblationMode::Lora(AdapterTarget::All),
    ];

    pub fn parts(&self) -> TrainableParts {
        TrainableParts {
            scorer: true,
            market: true,
            forecaster: !matches!(self, AblationMode::FedRemoved | AblationMode::FedFrozen),
        }
    }

    pub fn needs_forecaster(&self) -> bool {
        *self != AblationMode::FedRemoved
    }

    /// Forecaster stage for this mode. `base` is ignored for FED-Removed.
    pub fn stage(
        &self,
        base: Option<ForecastModel>,
        n_assets: usize,
        window: usize,
        rank: usize,
        alpha: f64,
        seed: u64,
    ) -> Result<ForecasterStage> {
        if *self == AblationMode::FedRemoved {
            return Ok(ForecasterStage::Removed { n_assets, window });
        }
        let base = base.ok_or_else(|| Error::InvalidConfig(format!("{self} needs a pre-trained forecaster")))?;
        Ok(match self {
            AblationMode::FedFrozen | AblationMode::FedFinetuning => ForecasterStage::Plain(base),
            AblationMode::Lora(t) => {
                ForecasterStage::Adapted(inject(base, InjectionPlan::new(*t), rank, alpha, seed, RankPolicy::Clamp)?)
            }
            AblationMode::FedRemoved => unreachable!(),
        })
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AblationMode::FedRemoved => f.write_str("fed-removed"),
            AblationMode::FedFrozen => f.write_str("fed-frozen"),
            AblationMode::FedFinetuning => f.write_str("fed-finetuning"),
            AblationMode::Lora(t) => write!(f, "fed-lora-{}", t.label()),
        }
    }
}

impl FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AblationMode::ALL
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown ablation mode `{s}`")))
    }
}

impl TryFrom<String> for AblationMode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<AblationMode> for String {
    fn from(m: AblationMode) -> String {
        m.to_string()
    }
}

/// Decision days of a series: window of the `w` days before `t`, and `δ_t`.
struct Days {
    windows: Vec<Array2<f64>>,
    deltas: Vec<Vec<f64>>,
    dates: Vec<NaiveDate>,
}

fn decision_days(series: &PriceSeries, w: usize, cap: Option<usize>) -> Result<Days> {
    let needed = w + 2;
    if series.n_days() < needed {
        return Err(Error::EpisodeTooShort {
            needed,
            available: series.n_days(),
        });
    }
    let p = series.prices();
    let last = match cap {
        Some(k) => (w + k).min(series.n_days()),
        None => series.n_days(),
    };
    let mut days = Days {
        windows: Vec::new(),
        deltas: Vec::new(),
        dates: Vec::new(),
    };
    for t in w..last {
        days.windows.push(p.slice(s![.., t - w..t]).to_owned());
        days.deltas.push((0..p.nrows()).map(|i| p[[i, t]] / p[[i, t - 1]] - 1.0).collect());
        days.dates.push(series.dates()[t]);
    }
    Ok(days)
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub policy: Policy,
    pub log: Vec<EpisodeRecord>,
    /// Mean logged objective per epoch.
    pub epoch_mean_j: Vec<f64>,
}

struct DayGrad {
    score: ParamStore,
    path: ParamStore,
    record: (f64, f64, f64, f64, f64),
}

fn day_gradient(
    policy: &Policy,
    window: &Array2<f64>,
    delta: &[f64],
    noise: f64,
    parts: TrainableParts,
    cfg: &RLConfig,
) -> Result<DayGrad> {
    let mut tape = Tape::new();
    let sg = step_graph(&mut tape, policy, window, delta, noise, parts, cfg, ObjectiveForm::Surrogate { advantage: Some(0.0), draw: None })?;
    let collect = |root: Var| {
        let grads = tape.backward(root);
        let mut out = ParamStore::new();
        for (name, var) in &sg.handles {
            let g = grads.get(*var).cloned().unwrap_or_else(|| Array2::zeros(tape.shape(*var)));
            out.insert(name.clone(), g);
        }
        out
    };
    let score = collect(sg.score_term.expect("surrogate form"));
    let path = collect(sg.pathwise_term.expect("surrogate form"));
    Ok(DayGrad {
        score,
        path,
        record: (sg.rho, sg.mu, sg.sigma, sg.r1, sg.r2),
    })
}

/// Gradient ascent on the mean per-day objective, one contiguous episode
/// per epoch, one update per batch of consecutive days.
pub fn finetune(policy: Policy, series: &PriceSeries, cfg: &RLConfig, parts: TrainableParts) -> Result<FinetuneOutcome> {
    cfg.validate()?;
    if series.n_assets() != policy.n_assets() {
        return Err(Error::ShapeMismatch(format!(
            "series has {} assets, policy expects {}",
            series.n_assets(),
            policy.n_assets()
        )));
    }
    let days = decision_days(series, policy.window(), cfg.episode_days)?;
    let mut policy = policy;
    let mut store = policy.trainable_store(parts);
    let mut opt = Adam::new(AdamConfig {
        learning_rate: cfg.learning_rate,
        clip_norm: Some(cfg.clip_norm),
        ..AdamConfig::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = Vec::with_capacity(cfg.epochs * days.dates.len());
    let mut epoch_mean_j = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let noise: Vec<f64> = (0..days.dates.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut j_sum = 0.0;
        let idx: Vec<usize> = (0..days.dates.len()).collect();
        for (step, batch) in idx.chunks(cfg.batch_days).enumerate() {
            let parts_out: Vec<DayGrad> = batch
                .par_iter()
                .map(|&d| day_gradient(&policy, &days.windows[d], &days.deltas[d], noise[d], parts, cfg))
                .collect::<Result<_>>()?;
            let k = batch.len() as f64;
            let baseline = parts_out.iter().map(|p| p.record.3).sum::<f64>() / k;
            let mut grad = ParamStore::new();
            for (dg, &d) in parts_out.iter().zip(batch) {
                let (rho, mu, sigma, r1, r2) = dg.record;
                // descent direction on the negated mean objective
                grad.add_scaled(&dg.score, -(r1 - baseline) / k);
                grad.add_scaled(&dg.path, -1.0 / k);
                let j = objective(rho, r1, r2, cfg);
                j_sum += j;
                log.push(EpisodeRecord {
                    epoch,
                    date: days.dates[d],
                    rho,
                    mu,
                    sigma,
                    r1,
                    r2,
                    j,
                });
            }
            if !grad.all_finite() {
                return Err(Error::DivergedLoss {
                    epoch,
                    step,
                    detail: format!("non-finite policy gradient (norm {})", grad.global_norm()),
                });
            }
            opt.step(&mut store, &grad);
            if !store.all_finite() {
                return Err(Error::DivergedLoss {
                    epoch,
                    step,
                    detail: "policy parameters became non-finite".into(),
                });
            }
            policy.apply_trainable(&store);
        }
        let mean_j = j_sum / days.dates.len() as f64;
        log::debug!("epoch {epoch}: mean J {mean_j:.3e}");
        epoch_mean_j.push(mean_j);
    }
    Ok(FinetuneOutcome {
        policy,
        log,
        epoch_mean_j,
    })
}

/// Test-mode pass over every decision day of `series`.
pub fn rollout(policy: &Policy, series: &PriceSeries, cfg: &RLConfig) -> Result<Vec<EpisodeRecord>> {
    let days = decision_days(series, policy.window(), None)?;
    (0..days.dates.len())
        .into_par_iter()
        .map(|d| {
            let dec = policy.decide(&days.windows[d], ScoreMode::Test, 0.0, Some(days.dates[d]))?;
            let r1 = reward_r1(&days.deltas[d], &dec.portfolio)?;
            let r2 = reward_r2(&days.deltas[d], &dec.v.v)?;
            Ok(EpisodeRecord {
                epoch: 0,
                date: days.dates[d],
                rho: dec.score.rho,
                mu: dec.score.mu,
                sigma: dec.score.sigma,
                r1,
                r2,
                j: objective(dec.score.rho, r1, r2, cfg),
            })
        })
        .collect()
}

/// r1 split into its long and short books at a given ρ.
pub fn r1_books(delta: &[f64], v: &[f64], long: &[usize], short: &[usize]) -> Result<(f64, f64)> {
    check_len("r1", delta.len(), v.len())?;
    let w = position_weights(v, long, short)?;
    let l = delta.iter().zip(&w.long_weights).map(|(d, w)| d * w).sum();
    let s = delta.iter().zip(&w.short_weights).map(|(d, w)| d * w).sum();
    Ok((l, s))
}
