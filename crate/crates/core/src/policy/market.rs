//! Market scoring and the assembled decision stack.

use chrono::NaiveDate;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    assemble_portfolio, clamp_rho, position_weights, select_positions, AssetScorer, ConfidenceVector, MarketScore,
    PortfolioVector, PositionWeights, SelectionConfig,
};
use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::forecast::{ForecastModel, WindowNorm};
use crate::lora::AdaptedModel;
use crate::params::{normal_init, Bindings, ParamStore};

const SIGMA_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreMode {
    /// ρ drawn as `clamp(μ + σ·noise)`.
    Train,
    /// ρ = `clamp(μ)`.
    Test,
}

/// Flatten `r × c` into `1 × (r·c)`, row by row.
pub fn flatten_rows(tape: &mut Tape, x: Var) -> Var {
    let (r, _) = tape.shape(x);
    let rows: Vec<Var> = (0..r).map(|i| tape.slice_rows(x, i, i + 1)).collect();
    tape.concat_cols(&rows)
}

/// What feeds the market scorer.
#[derive(Debug, Clone)]
pub enum ForecasterStage {
    /// No forecaster: the z-scored window itself.
    Removed { n_assets: usize, window: usize },
    Plain(ForecastModel),
    Adapted(AdaptedModel),
}

impl ForecasterStage {
    pub fn n_assets(&self) -> usize {
        match self {
            ForecasterStage::Removed { n_assets, .. } => *n_assets,
            ForecasterStage::Plain(m) => m.config().n_assets,
            ForecasterStage::Adapted(a) => a.base().config().n_assets,
        }
    }

    pub fn window(&self) -> usize {
        match self {
            ForecasterStage::Removed { window, .. } => *window,
            ForecasterStage::Plain(m) => m.config().window,
            ForecasterStage::Adapted(a) => a.base().config().window,
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            ForecasterStage::Removed { n_assets, window } => n_assets * window,
            ForecasterStage::Plain(m) => m.config().n_assets * m.config().horizon,
            ForecasterStage::Adapted(a) => a.base().config().n_assets * a.base().config().horizon,
        }
    }

    fn prefix(&self) -> &'static str {
        match self {
            ForecasterStage::Adapted(_) => "lora.",
            _ => "fc.",
        }
    }

    /// Parameters that become trainable when the forecaster is trained:
    /// adapter factors for an adapted model, every weight for a plain one.
    pub fn trainable_store(&self) -> ParamStore {
        match self {
            ForecasterStage::Removed { .. } => ParamStore::new(),
            ForecasterStage::Plain(m) => m.params().clone(),
            ForecasterStage::Adapted(a) => a.adapter_params().clone(),
        }
    }

    fn apply(&mut self, store: &ParamStore) {
        let target = match self {
            ForecasterStage::Removed { .. } => return,
            ForecasterStage::Plain(m) => m.params_mut(),
            ForecasterStage::Adapted(a) => a.adapter_params_mut(),
        };
        for (k, v) in store.iter() {
            if let Some(p) = target.get_mut(k) {
                p.assign(v);
            }
        }
    }

    /// Flattened `1 × D` features on the tape plus trainable handles.
    pub fn features_graph(&self, tape: &mut Tape, window: &Array2<f64>, trainable: bool) -> Result<(Var, Vec<(String, Var)>)> {
        let prefix = self.prefix();
        match self {
            ForecasterStage::Removed { n_assets, window: w } => {
                if window.dim() != (*n_assets, *w) {
                    return Err(Error::ShapeMismatch(format!(
                        "window {:?}, expected {:?}",
                        window.dim(),
                        (*n_assets, *w)
                    )));
                }
                let z = WindowNorm::from_window(window).normalize(window);
                let z = tape.constant(z);
                Ok((flatten_rows(tape, z), Vec::new()))
            }
            ForecasterStage::Plain(m) => {
                let b = m.bind(tape, |_| trainable);
                let (out, _) = m.forward_graph(tape, &b, window)?;
                let handles = if trainable {
                    m.params().names().map(|n| (format!("{prefix}{n}"), b.get(n))).collect()
                } else {
                    Vec::new()
                };
                Ok((flatten_rows(tape, out), handles))
            }
            ForecasterStage::Adapted(a) => {
                let b = a.bind(tape, trainable);
                let (out, _) = a.base().forward_graph(tape, &b, window)?;
                let handles = if trainable {
                    a.adapter_params().names().map(|n| (format!("{prefix}{n}"), b.get(n))).collect()
                } else {
                    Vec::new()
                };
                Ok((flatten_rows(tape, out), handles))
            }
        }
    }
}

/// Affine head from forecast features to `(μ, σ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketScorer {
    params: ParamStore,
}

impl MarketScorer {
    /// μ starts at 0.5 and σ near 0.1.
    pub fn init(input_dim: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::InvalidConfig("market scorer input must be nonempty".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        p.insert("head.weight", normal_init(&mut rng, 2, input_dim, 0.01 / (input_dim as f64).sqrt()));
        let sigma_bias = (0.1f64.exp() - 1.0).ln();
        p.insert("head.bias", Array2::from_shape_vec((1, 2), vec![0.0, sigma_bias]).expect("1×2"));
        Ok(Self { params: p })
    }

    pub fn from_parts(params: ParamStore) -> Result<Self> {
        let w = params.require("head.weight")?;
        let b = params.require("head.bias")?;
        if w.nrows() != 2 || b.dim() != (1, 2) || params.len() != 2 {
            return Err(Error::CheckpointMismatch("market scorer expects a 2-output affine head".into()));
        }
        Ok(Self { params })
    }

    pub fn input_dim(&self) -> usize {
        self.params.get("head.weight").map_or(0, |w| w.ncols())
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bindings {
        let mut b = Bindings::new();
        b.bind(tape, &self.params, "", |_| trainable);
        b
    }

    /// `(μ, σ)` as 1×1 nodes.
    pub fn head_graph(&self, tape: &mut Tape, b: &Bindings, features: Var) -> Result<(Var, Var)> {
        let (_, d) = tape.shape(features);
        if d != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "market scorer expects {} features, got {d}",
                self.input_dim()
            )));
        }
        let raw = tape.linear(features, b.get("head.weight"), Some(b.get("head.bias")));
        let mu_raw = tape.slice_cols(raw, 0, 1);
        let sigma_raw = tape.slice_cols(raw, 1, 2);
        let mu = tape.sigmoid(mu_raw);
        let sp = tape.softplus(sigma_raw);
        let sigma = tape.offset(sp, SIGMA_FLOOR);
        Ok((mu, sigma))
    }
}

fn rho_from(mu: f64, sigma: f64, mode: ScoreMode, noise: f64) -> f64 {
    match mode {
        ScoreMode::Train => clamp_rho(mu + sigma * noise),
        ScoreMode::Test => clamp_rho(mu),
    }
}

pub fn market_score(
    msm: &MarketScorer,
    stage: &ForecasterStage,
    window: &Array2<f64>,
    mode: ScoreMode,
    noise: f64,
) -> Result<MarketScore> {
    let mut tape = Tape::new();
    let (f, _) = stage.features_graph(&mut tape, window, false)?;
    let b = msm.bind(&mut tape, false);
    let (mu, sigma) = msm.head_graph(&mut tape, &b, f)?;
    let (mu, sigma) = (tape.scalar_value(mu), tape.scalar_value(sigma));
    Ok(MarketScore {
        mu,
        sigma,
        rho: rho_from(mu, sigma, mode, noise),
    })
}

/// Which policy components receive gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainableParts {
    pub scorer: bool,
    pub market: bool,
    pub forecaster: bool,
}

#[derive(Debug, Clone)]
pub struct Policy {
    pub stage: ForecasterStage,
    pub scorer: AssetScorer,
    pub msm: MarketScorer,
    pub selection: SelectionConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub v: ConfidenceVector,
    pub score: MarketScore,
    pub weights: PositionWeights,
    pub portfolio: PortfolioVector,
}

/// One day's decision as a flat record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub date: Option<NaiveDate>,
    pub v: Vec<f64>,
    pub mu: f64,
    pub sigma: f64,
    pub rho: f64,
    pub long_set: Vec<usize>,
    pub short_set: Vec<usize>,
    pub long_alloc: Vec<f64>,
    pub short_alloc: Vec<f64>,
}

impl From<&Decision> for DecisionRecord {
    fn from(d: &Decision) -> Self {
        Self {
            date: d.portfolio.date,
            v: d.v.v.clone(),
            mu: d.score.mu,
            sigma: d.score.sigma,
            rho: d.score.rho,
            long_set: d.weights.long_set.clone(),
            short_set: d.weights.short_set.clone(),
            long_alloc: d.portfolio.long_alloc.to_vec(),
            short_alloc: d.portfolio.short_alloc.to_vec(),
        }
    }
}

/// Tape nodes for one decision.
#[derive(Debug, Clone)]
pub struct PolicyGraph {
    /// `n × 1` confidences.
    pub v: Var,
    pub mu: Var,
    pub sigma: Var,
    /// Trainable parameter handles under their prefixed names.
    pub handles: Vec<(String, Var)>,
}

impl Policy {
    pub fn new(stage: ForecasterStage, scorer: AssetScorer, msm: MarketScorer, selection: SelectionConfig) -> Result<Self> {
        let n = stage.n_assets();
        if scorer.config().n_assets != n || scorer.config().window != stage.window() {
            return Err(Error::ShapeMismatch("scorer and forecaster disagree on universe or window".into()));
        }
        if msm.input_dim() != stage.feature_dim() {
            return Err(Error::ShapeMismatch(format!(
                "market scorer takes {} features, forecaster stage gives {}",
                msm.input_dim(),
                stage.feature_dim()
            )));
        }
        selection.validate(n)?;
        Ok(Self {
            stage,
            scorer,
            msm,
            selection,
        })
    }

    pub fn n_assets(&self) -> usize {
        self.stage.n_assets()
    }

    pub fn window(&self) -> usize {
        self.stage.window()
    }

    pub fn graph(&self, tape: &mut Tape, window: &Array2<f64>, parts: TrainableParts) -> Result<PolicyGraph> {
        let sb = self.scorer.bind(tape, parts.scorer);
        let v = self.scorer.score_graph(tape, &sb, window)?;
        let (f, mut handles) = self.stage.features_graph(tape, window, parts.forecaster)?;
        let mb = self.msm.bind(tape, parts.market);
        let (mu, sigma) = self.msm.head_graph(tape, &mb, f)?;
        if parts.scorer {
            handles.extend(self.scorer.params().names().map(|n| (format!("asm.{n}"), sb.get(n))));
        }
        if parts.market {
            handles.extend(self.msm.params().names().map(|n| (format!("msm.{n}"), mb.get(n))));
        }
        Ok(PolicyGraph { v, mu, sigma, handles })
    }

    /// Current values of the trainable parameters under prefixed names.
    pub fn trainable_store(&self, parts: TrainableParts) -> ParamStore {
        let mut s = ParamStore::new();
        if parts.scorer {
            s.extend_prefixed("asm.", self.scorer.params());
        }
        if parts.market {
            s.extend_prefixed("msm.", self.msm.params());
        }
        if parts.forecaster {
            s.extend_prefixed(self.stage.prefix(), &self.stage.trainable_store());
        }
        s
    }

    /// Write back values produced from [`trainable_store`].
    pub fn apply_trainable(&mut self, store: &ParamStore) {
        for (k, v) in store.strip_prefix("asm.").iter() {
            if let Some(p) = self.scorer.params_mut().get_mut(k) {
                p.assign(v);
            }
        }
        for (k, v) in store.strip_prefix("msm.").iter() {
            if let Some(p) = self.msm.params_mut().get_mut(k) {
                p.assign(v);
            }
        }
        let fc = store.strip_prefix(self.stage.prefix());
        self.stage.apply(&fc);
    }

    pub fn decide(&self, window: &Array2<f64>, mode: ScoreMode, noise: f64, date: Option<NaiveDate>) -> Result<Decision> {
        let mut v = self.scorer.score(window)?;
        v.date = date;
        let score = market_score(&self.msm, &self.stage, window, mode, noise)?;
        let (long, short) = select_positions(&v.v, self.selection)?;
        let weights = position_weights(&v.v, &long, &short)?;
        let portfolio = assemble_portfolio(score.rho, &weights, date);
        Ok(Decision {
            v,
            score,
            weights,
            portfolio,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{ScorerConfig, RHO_EPS};

    fn removed_policy() -> Policy {
        let stage = ForecasterStage::Removed { n_assets: 3, window: 5 };
        Policy::new(
            stage,
            AssetScorer::init(ScorerConfig::new(3, 5), 0).unwrap(),
            MarketScorer::init(15, 0).unwrap(),
            SelectionConfig { n_long: 1, n_short: 1 },
        )
        .unwrap()
    }

    fn window() -> Array2<f64> {
        Array2::from_shape_fn((3, 5), |(i, t)| 20.0 + i as f64 * 3.0 + (t as f64 * (1.0 + i as f64)).cos())
    }

    #[test]
    fn zero_head_gives_half() {
        let mut p = removed_policy();
        p.msm.params_mut().get_mut("head.weight").unwrap().fill(0.0);
        let s = market_score(&p.msm, &p.stage, &window(), ScoreMode::Test, 0.0).unwrap();
        assert_eq!(s.rho, 0.5);
        let t = market_score(&p.msm, &p.stage, &window(), ScoreMode::Train, 0.0).unwrap();
        assert_eq!(t.rho, clamp_rho(t.mu));
    }

    #[test]
    fn large_draw_clamps() {
        assert_eq!(rho_from(0.9, 0.5, ScoreMode::Train, 2.0), 1.0 - RHO_EPS);
        assert_eq!(rho_from(0.1, 0.5, ScoreMode::Train, -2.0), RHO_EPS);
    }

    #[test]
    fn decision_is_consistent() {
        let p = removed_policy();
        let d = p.decide(&window(), ScoreMode::Test, 0.0, None).unwrap();
        assert!((d.portfolio.long_alloc.sum() - d.score.rho).abs() < 1e-12);
        assert!((d.portfolio.short_alloc.sum() + 1.0 - d.score.rho).abs() < 1e-12);
        assert!(d.portfolio.gross_exposure() <= 1.0 + 1e-12);
        assert!(d.score.sigma > 0.0);
    }

    #[test]
    fn trainable_round_trip() {
        let mut p = removed_policy();
        let parts = TrainableParts {
            scorer: true,
            market: true,
            forecaster: true,
        };
        let mut s = p.trainable_store(parts);
        assert_eq!(s.len(), p.scorer.params().len() + 2);
        s.get_mut("msm.head.bias").unwrap().fill(1.5);
        p.apply_trainable(&s);
        assert_eq!(p.msm.params().get("head.bias").unwrap()[[0, 1]], 1.5);
    }

    #[test]
    fn mismatched_parts_rejected() {
        let stage = ForecasterStage::Removed { n_assets: 3, window: 5 };
        assert!(Policy::new(
            stage,
            AssetScorer::init(ScorerConfig::new(3, 5), 0).unwrap(),
            MarketScorer::init(10, 0).unwrap(),
            SelectionConfig { n_long: 1, n_short: 1 },
        )
        .is_err());
    }
}
