//! Portfolio decision stack: asset scores, long/short books, the market
//! score ρ and the final allocation.

mod market;
mod scorer;

use chrono::NaiveDate;
use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use market::{
    flatten_rows, market_score, Decision, DecisionRecord, ForecasterStage, MarketScorer, Policy, PolicyGraph,
    ScoreMode, TrainableParts,
};
pub use scorer::{asset_scores, correlation_adjacency, AssetScorer, ScorerConfig};

/// Clamp band for ρ.
pub const RHO_EPS: f64 = 1e-4;

pub fn clamp_rho(x: f64) -> f64 {
    x.clamp(RHO_EPS, 1.0 - RHO_EPS)
}

/// Per-asset confidence in `(0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceVector {
    pub v: Vec<f64>,
    pub date: Option<NaiveDate>,
}

impl ConfidenceVector {
    pub fn new(v: Vec<f64>, date: Option<NaiveDate>) -> Result<Self> {
        if let Some(x) = v.iter().find(|x| !(**x > 0.0 && **x < 1.0)) {
            return Err(Error::InvalidData(format!("confidence {x} outside (0, 1)")));
        }
        Ok(Self { v, date })
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionConfig {
    pub n_long: usize,
    pub n_short: usize,
}

impl SelectionConfig {
    /// `max(1, n/4)` on each side.
    pub fn quartile(n: usize) -> Self {
        let k = (n / 4).max(1);
        Self { n_long: k, n_short: k }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.n_long == 0 || self.n_short == 0 || self.n_long + self.n_short > n {
            return Err(Error::InvalidConfig(format!(
                "n_long={} and n_short={} must be ≥ 1 with a sum ≤ {n}",
                self.n_long, self.n_short
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionWeights {
    pub long_weights: Array1<f64>,
    pub short_weights: Array1<f64>,
    pub long_set: Vec<usize>,
    pub short_set: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketScore {
    pub mu: f64,
    pub sigma: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioVector {
    pub long_alloc: Array1<f64>,
    pub short_alloc: Array1<f64>,
    pub date: Option<NaiveDate>,
}

impl PortfolioVector {
    pub fn flat(n: usize, date: Option<NaiveDate>) -> Self {
        Self {
            long_alloc: Array1::zeros(n),
            short_alloc: Array1::zeros(n),
            date,
        }
    }

    pub fn n_assets(&self) -> usize {
        self.long_alloc.len()
    }

    /// Net allocation per asset.
    pub fn net(&self) -> Array1<f64> {
        &self.long_alloc + &self.short_alloc
    }

    pub fn gross_exposure(&self) -> f64 {
        self.long_alloc.iter().chain(self.short_alloc.iter()).map(|x| x.abs()).sum()
    }
}

/// Long book: the `n_long` highest scores. Short book: the `n_short` lowest
/// among the rest. Ties go to the lower index.
pub fn select_positions(scores: &[f64], cfg: SelectionConfig) -> Result<(Vec<usize>, Vec<usize>)> {
    cfg.validate(scores.len())?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidData("NaN score".into()));
    }
    let mut desc: Vec<usize> = (0..scores.len()).collect();
    desc.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut long: Vec<usize> = desc[..cfg.n_long].to_vec();

    let mut asc: Vec<usize> = (0..scores.len()).collect();
    asc.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let mut short: Vec<usize> = asc.into_iter().filter(|i| !long.contains(i)).take(cfg.n_short).collect();

    long.sort_unstable();
    short.sort_unstable();
    Ok((long, short))
}

fn softmax_over(values: &[f64]) -> Vec<f64> {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = values.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Softmax of `v` over the long set; negative softmax of `1 − v` over the
/// short set; zero elsewhere.
pub fn position_weights(v: &[f64], long_set: &[usize], short_set: &[usize]) -> Result<PositionWeights> {
    let n = v.len();
    if long_set.is_empty() || short_set.is_empty() {
        return Err(Error::InvalidData("long and short sets must be nonempty".into()));
    }
    if long_set.iter().chain(short_set).any(|&i| i >= n) {
        return Err(Error::InvalidData(format!("index out of range for {n} assets")));
    }
    if long_set.iter().any(|i| short_set.contains(i)) {
        return Err(Error::InvalidData("long and short sets overlap".into()));
    }
    let mut long_weights = Array1::zeros(n);
    let lw = softmax_over(&long_set.iter().map(|&i| v[i]).collect::<Vec<_>>());
    for (&i, w) in long_set.iter().zip(lw) {
        long_weights[i] = w;
    }
    let mut short_weights = Array1::zeros(n);
    let sw = softmax_over(&short_set.iter().map(|&i| 1.0 - v[i]).collect::<Vec<_>>());
    for (&i, w) in short_set.iter().zip(sw) {
        short_weights[i] = -w;
    }
    Ok(PositionWeights {
        long_weights,
        short_weights,
        long_set: long_set.to_vec(),
        short_set: short_set.to_vec(),
    })
}

pub fn assemble_portfolio(rho: f64, weights: &PositionWeights, date: Option<NaiveDate>) -> PortfolioVector {
    PortfolioVector {
        long_alloc: &weights.long_weights * rho,
        short_alloc: &weights.short_weights * (1.0 - rho),
        date,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selection_examples() {
        let one = SelectionConfig { n_long: 1, n_short: 1 };
        assert_eq!(select_positions(&[0.9, 0.5, 0.1], one).unwrap(), (vec![0], vec![2]));
        assert_eq!(select_positions(&[0.4, 0.4, 0.4], one).unwrap(), (vec![0], vec![1]));
        let two = SelectionConfig { n_long: 2, n_short: 1 };
        assert_eq!(select_positions(&[0.3, 0.8, 0.8, 0.1], two).unwrap(), (vec![1, 2], vec![3]));
        assert!(select_positions(&[0.5, 0.5], SelectionConfig { n_long: 2, n_short: 1 }).is_err());
    }

    #[test]
    fn overlap_goes_long() {
        // bottom-2 would be {0, 1}; 1 is already long
        let cfg = SelectionConfig { n_long: 2, n_short: 1 };
        assert_eq!(select_positions(&[0.2, 0.2, 0.2], cfg).unwrap(), (vec![0, 1], vec![2]));
    }

    #[test]
    fn weight_examples() {
        let w = position_weights(&[0.9, 0.1, 0.5], &[0, 1], &[2]).unwrap();
        assert!((w.long_weights[0] - 0.68997).abs() < 1e-5);
        assert!((w.long_weights[1] - 0.31003).abs() < 1e-5);
        assert_eq!(w.short_weights.to_vec(), vec![0.0, 0.0, -1.0]);

        let w = position_weights(&[0.2, 0.4, 0.9], &[2], &[0, 1]).unwrap();
        assert!((w.short_weights[0] + 0.54983).abs() < 1e-5);
        assert!((w.short_weights[1] + 0.45017).abs() < 1e-5);

        let w = position_weights(&[0.6, 0.6, 0.1], &[0, 1], &[2]).unwrap();
        assert_eq!(w.long_weights.to_vec(), vec![0.5, 0.5, 0.0]);
        assert!(position_weights(&[0.6, 0.6], &[0], &[0]).is_err());
    }

    #[test]
    fn assembly_examples() {
        let w = PositionWeights {
            long_weights: Array1::from(vec![0.7, 0.3, 0.0]),
            short_weights: Array1::from(vec![0.0, 0.0, -1.0]),
            long_set: vec![0, 1],
            short_set: vec![2],
        };
        let p = assemble_portfolio(0.5, &w, None);
        assert_eq!(p.long_alloc.to_vec(), vec![0.35, 0.15, 0.0]);
        assert_eq!(p.short_alloc.to_vec(), vec![0.0, 0.0, -0.5]);
        let p = assemble_portfolio(1.0 - RHO_EPS, &w, None);
        assert!(p.short_alloc.iter().all(|x| x.abs() <= RHO_EPS + 1e-18));
    }

    #[test]
    fn quartile_default() {
        assert_eq!(SelectionConfig::quartile(2), SelectionConfig { n_long: 1, n_short: 1 });
        assert_eq!(SelectionConfig::quartile(9), SelectionConfig { n_long: 2, n_short: 2 });
    }
}
