//! Asset scoring: temporal convolution, graph convolution over a
//! correlation adjacency, attention across assets, sigmoid head.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ConfidenceVector;
use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::forecast::WindowNorm;
use crate::params::{normal_init, Bindings, ParamStore};

const CONV_KERNEL: usize = 3;
/// z-score and relative log price.
const INPUT_CHANNELS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScorerConfig {
    pub n_assets: usize,
    pub window: usize,
    pub conv_channels: usize,
    pub hidden: usize,
}

impl ScorerConfig {
    pub fn new(n_assets: usize, window: usize) -> Self {
        Self {
            n_assets,
            window,
            conv_channels: 4,
            hidden: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_assets == 0 || self.conv_channels == 0 || self.hidden == 0 {
            return Err(Error::InvalidConfig("scorer sizes must be at least 1".into()));
        }
        if self.window < CONV_KERNEL {
            return Err(Error::ShapeMismatch(format!(
                "asset scorer needs a window of at least {CONV_KERNEL} days, got {}",
                self.window
            )));
        }
        Ok(())
    }

    fn positions(&self) -> usize {
        self.window - CONV_KERNEL + 1
    }
}

/// Row-normalized `|corr|` of window returns with unit self-loops.
/// Assets with a flat window get no neighbours.
pub fn correlation_adjacency(window: &Array2<f64>) -> Array2<f64> {
    let (n, w) = window.dim();
    let rets = Array2::from_shape_fn((n, w.saturating_sub(1)), |(i, t)| window[[i, t + 1]] / window[[i, t]] - 1.0);
    let k = rets.ncols() as f64;
    let centered: Vec<(Vec<f64>, f64)> = rets
        .rows()
        .into_iter()
        .map(|r| {
            let m = r.sum() / k.max(1.0);
            let c: Vec<f64> = r.iter().map(|x| x - m).collect();
            let s = c.iter().map(|x| x * x).sum::<f64>().sqrt();
            (c, s)
        })
        .collect();
    let mut a = Array2::eye(n);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let (ci, si) = &centered[i];
            let (cj, sj) = &centered[j];
            if *si > 1e-12 && *sj > 1e-12 {
                let dot: f64 = ci.iter().zip(cj).map(|(x, y)| x * y).sum();
                a[[i, j]] = (dot / (si * sj)).abs().min(1.0);
            }
        }
    }
    for mut row in a.rows_mut() {
        let s = row.sum();
        row.mapv_inplace(|x| x / s);
    }
    a
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssetScorer {
    config: ScorerConfig,
    params: ParamStore,
}

impl AssetScorer {
    /// Every weight is shared across assets, so any initialization treats
    /// assets symmetrically.
    pub fn init(config: ScorerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, d) = (config.conv_channels, config.hidden);
        let fan_conv = INPUT_CHANNELS * CONV_KERNEL;
        let mut p = ParamStore::new();
        p.insert("conv.weight", normal_init(&mut rng, c, fan_conv, (1.0 / fan_conv as f64).sqrt()));
        p.insert("conv.bias", Array2::zeros((1, c)));
        p.insert("graph.weight", normal_init(&mut rng, d, 2 * c, (1.0 / (2 * c) as f64).sqrt()));
        p.insert("graph.bias", Array2::zeros((1, d)));
        for k in ["q", "k", "v"] {
            p.insert(format!("attn.{k}.weight"), normal_init(&mut rng, d, d, (1.0 / d as f64).sqrt()));
        }
        p.insert("head.weight", normal_init(&mut rng, 1, d, 0.1 / (d as f64).sqrt()));
        p.insert("head.bias", Array2::zeros((1, 1)));
        Ok(Self { config, params: p })
    }

    pub fn from_parts(config: ScorerConfig, params: ParamStore) -> Result<Self> {
        let reference = Self::init(config, 0)?;
        let same = reference.params.len() == params.len()
            && reference
                .params
                .iter()
                .all(|(k, v)| params.get(k).is_some_and(|p| p.dim() == v.dim()));
        if !same {
            return Err(Error::CheckpointMismatch("scorer parameters do not match the configuration".into()));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ScorerConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn check(&self, window: &Array2<f64>) -> Result<()> {
        let expect = (self.config.n_assets, self.config.window);
        if window.dim() != expect {
            return Err(Error::ShapeMismatch(format!(
                "scorer window {:?}, expected {expect:?}",
                window.dim()
            )));
        }
        if window.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(Error::InvalidData("scorer window needs positive finite prices".into()));
        }
        Ok(())
    }

    /// `(n·positions) × (channels·kernel)` patches of the input features.
    fn patches(&self, window: &Array2<f64>) -> Array2<f64> {
        let (n, w) = window.dim();
        let z = WindowNorm::from_window(window).normalize(window);
        let rel = Array2::from_shape_fn((n, w), |(i, t)| 100.0 * (window[[i, t]] / window[[i, w - 1]]).ln());
        let pos = self.config.positions();
        Array2::from_shape_fn((n * pos, INPUT_CHANNELS * CONV_KERNEL), |(r, c)| {
            let (i, p) = (r / pos, r % pos);
            let (ch, k) = (c / CONV_KERNEL, c % CONV_KERNEL);
            if ch == 0 {
                z[[p + k, i]]
            } else {
                rel[[i, p + k]]
            }
        })
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bindings {
        let mut b = Bindings::new();
        b.bind(tape, &self.params, "", |_| trainable);
        b
    }

    /// Scores as an `n × 1` node.
    pub fn score_graph(&self, tape: &mut Tape, b: &Bindings, window: &Array2<f64>) -> Result<Var> {
        self.check(window)?;
        let n = self.config.n_assets;
        let pos = self.config.positions();
        let u = tape.constant(self.patches(window));
        let c = tape.linear(u, b.get("conv.weight"), Some(b.get("conv.bias")));
        let c = tape.gelu(c);
        let pool_mean = Array2::from_shape_fn((n, n * pos), |(i, r)| if r / pos == i { 1.0 / pos as f64 } else { 0.0 });
        let pool_last = Array2::from_shape_fn((n, n * pos), |(i, r)| if r == i * pos + pos - 1 { 1.0 } else { 0.0 });
        let pm = tape.constant(pool_mean);
        let pl = tape.constant(pool_last);
        let fm = tape.matmul(pm, c);
        let fl = tape.matmul(pl, c);
        let f = tape.concat_cols(&[fm, fl]);

        let adj = tape.constant(correlation_adjacency(window));
        let af = tape.matmul(adj, f);
        let g = tape.linear(af, b.get("graph.weight"), Some(b.get("graph.bias")));
        let g = tape.gelu(g);

        let q = tape.linear(g, b.get("attn.q.weight"), None);
        let k = tape.linear(g, b.get("attn.k.weight"), None);
        let v = tape.linear(g, b.get("attn.v.weight"), None);
        let s = tape.matmul_nt(q, k);
        let s = tape.scale(s, 1.0 / (self.config.hidden as f64).sqrt());
        let s = tape.softmax_rows(s);
        let mixed = tape.matmul(s, v);
        let z = tape.add(g, mixed);

        let logits = tape.linear(z, b.get("head.weight"), Some(b.get("head.bias")));
        Ok(tape.sigmoid(logits))
    }

    pub fn score(&self, window: &Array2<f64>) -> Result<ConfidenceVector> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false);
        let v = self.score_graph(&mut tape, &b, window)?;
        let v: Vec<f64> = tape.value(v).iter().map(|x| x.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON)).collect();
        ConfidenceVector::new(v, None)
    }
}

pub fn asset_scores(scorer: &AssetScorer, window: &Array2<f64>) -> Result<ConfidenceVector> {
    scorer.score(window)
}
