//! Encoder/decoder forecasters mapping an `n × w` price window to an `n × h`
//! price forecast.
//!
//! Both architectures share the same outer pipeline: per-asset z-scoring of
//! the window, a channel-mixing embedding, two encoder blocks, one decoder
//! block over `label_len + h` steps, a projection back to `n` channels, and
//! de-normalization of the last `h` rows.
//!
//! * frequency-enhanced: each block mixes along time with [`mix_modes`] and
//!   strips the moving-average trend after every residual update. The
//!   decoder accumulates the stripped trends and adds them back before the
//!   projection head.
//! * vanilla: single-head softmax attention with sinusoidal positions, no
//!   decomposition.

use chrono::NaiveDate;
use ndarray::{s, Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::decomp::moving_average_matrix;
use super::freq::{max_modes, mix_modes, DftBasis};
use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{normal_init, Bindings, ParamStore};

pub const ENCODER_BLOCKS: usize = 2;
pub const DECODER_BLOCKS: usize = 1;

/// Tag recorded in checkpoints for the input scaling applied by [`WindowNorm`].
pub const NORMALIZATION_TAG: &str = "per-window-zscore";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    FrequencyEnhanced,
    Vanilla,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForecasterConfig {
    pub architecture: Architecture,
    pub n_assets: usize,
    pub window: usize,
    pub horizon: usize,
    pub d_model: usize,
    pub d_ff: usize,
    /// Requested Fourier modes; each block keeps at most what its length allows.
    pub modes: usize,
    /// Moving-average width of the decomposition.
    pub kernel: usize,
}

impl ForecasterConfig {
    pub fn new(architecture: Architecture, n_assets: usize) -> Self {
        Self {
            architecture,
            n_assets,
            window: 5,
            horizon: 5,
            d_model: 32,
            d_ff: 64,
            modes: 8,
            kernel: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_assets == 0 {
            return bad("n_assets must be at least 1".into());
        }
        if self.window < 2 {
            return bad(format!("window {} too short, need at least 2", self.window));
        }
        if self.horizon == 0 || self.d_model == 0 || self.d_ff == 0 || self.modes == 0 {
            return bad("horizon, d_model, d_ff and modes must be at least 1".into());
        }
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return Err(Error::InvalidKernel(self.kernel));
        }
        Ok(())
    }

    /// Known steps fed to the decoder ahead of the horizon.
    pub fn label_len(&self) -> usize {
        (self.window / 2).max(1)
    }

    pub fn decoder_len(&self) -> usize {
        self.label_len() + self.horizon
    }

    pub fn encoder_modes(&self) -> usize {
        self.modes.min(max_modes(self.window))
    }

    pub fn decoder_modes(&self) -> usize {
        self.modes.min(max_modes(self.decoder_len()))
    }

    pub fn cross_modes(&self) -> usize {
        self.encoder_modes().min(self.decoder_modes())
    }
}

/// Per-asset mean and scale of an input window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowNorm {
    pub mean: Array1<f64>,
    pub scale: Array1<f64>,
}

impl WindowNorm {
    pub fn from_window(window: &Array2<f64>) -> Self {
        let mean = window.mean_axis(Axis(1)).expect("window has columns");
        let scale = window.var_axis(Axis(1), 0.0).mapv(|v| v.max(0.0).sqrt().max(1e-8));
        Self { mean, scale }
    }

    /// `w × n` z-scored window, time along rows.
    pub fn normalize(&self, window: &Array2<f64>) -> Array2<f64> {
        let mut x = window.t().to_owned();
        for (i, mut col) in x.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|p| (p - self.mean[i]) / self.scale[i]);
        }
        x
    }

    /// `h × n` normalized output back to an `n × h` price matrix.
    pub fn denormalize(&self, out: &Array2<f64>) -> Array2<f64> {
        let mut y = out.t().to_owned();
        for (i, mut row) in y.rows_mut().into_iter().enumerate() {
            row.mapv_inplace(|z| self.mean[i] + self.scale[i] * z);
        }
        y
    }
}

/// Horizon forecast in price units, `n × h`.
#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    pub values: Array2<f64>,
    pub anchor_date: Option<NaiveDate>,
}

/// Constant matrices derived from the configuration.
#[derive(Debug, Clone)]
struct Geometry {
    enc_ma: Array2<f64>,
    enc_season: Array2<f64>,
    dec_ma: Array2<f64>,
    dec_season: Array2<f64>,
    enc_basis: DftBasis,
    dec_basis: DftBasis,
    cross_basis: DftBasis,
    enc_pos: Array2<f64>,
    dec_pos: Array2<f64>,
}

fn positional(len: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((len, d), |(t, k)| {
        let rate = 1.0 / 10000f64.powf((2 * (k / 2)) as f64 / d as f64);
        if k % 2 == 0 {
            (t as f64 * rate).sin()
        } else {
            (t as f64 * rate).cos()
        }
    })
}

impl Geometry {
    fn new(cfg: &ForecasterConfig) -> Result<Self> {
        let (w, ld) = (cfg.window, cfg.decoder_len());
        let enc_ma = moving_average_matrix(w, cfg.kernel)?;
        let dec_ma = moving_average_matrix(ld, cfg.kernel)?;
        Ok(Self {
            enc_season: Array2::eye(w) - &enc_ma,
            dec_season: Array2::eye(ld) - &dec_ma,
            enc_ma,
            dec_ma,
            enc_basis: DftBasis::new(w, w, cfg.encoder_modes())?,
            dec_basis: DftBasis::new(ld, ld, cfg.decoder_modes())?,
            cross_basis: DftBasis::new(w, ld, cfg.cross_modes())?,
            enc_pos: positional(w, cfg.d_model),
            dec_pos: positional(ld, cfg.d_model),
        })
    }
}

#[derive(Debug, Clone)]
pub struct ForecastModel {
    config: ForecasterConfig,
    params: ParamStore,
    geometry: Geometry,
}

impl PartialEq for ForecastModel {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.params == other.params
    }
}

fn insert_linear(p: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, d_out: usize, d_in: usize, bias: bool) {
    p.insert(
        format!("{name}.weight"),
        normal_init(rng, d_out, d_in, 1.0 / (d_in as f64).sqrt()),
    );
    if bias {
        p.insert(format!("{name}.bias"), Array2::zeros((1, d_out)));
    }
}

fn insert_freq(p: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, modes: usize, d: usize) {
    let std = 1.0 / d as f64;
    for m in 0..modes {
        p.insert(format!("{name}.re.{m}"), normal_init(rng, d, d, std));
        p.insert(format!("{name}.im.{m}"), normal_init(rng, d, d, std));
    }
}

fn insert_ff(p: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, d: usize, f: usize) {
    insert_linear(p, rng, &format!("{prefix}ff1"), f, d, true);
    insert_linear(p, rng, &format!("{prefix}ff2"), d, f, true);
}

fn insert_attention(p: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, d: usize) {
    for proj in ["q", "k", "v", "o"] {
        insert_linear(p, rng, &format!("{name}.{proj}"), d, d, true);
    }
}

impl ForecastModel {
    /// Randomly initialized model.
    pub fn init(config: ForecasterConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = Self::build_params(&config, seed);
        let geometry = Geometry::new(&config)?;
        Ok(Self {
            config,
            params,
            geometry,
        })
    }

    fn build_params(config: &ForecasterConfig, seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, d, f) = (config.n_assets, config.d_model, config.d_ff);
        let mut p = ParamStore::new();
        insert_linear(&mut p, &mut rng, "enc_embed", d, n, true);
        insert_linear(&mut p, &mut rng, "dec_embed", d, n, true);
        match config.architecture {
            Architecture::FrequencyEnhanced => {
                insert_linear(&mut p, &mut rng, "trend_embed", d, n, false);
                for b in 0..ENCODER_BLOCKS {
                    insert_freq(&mut p, &mut rng, &format!("encoder.{b}.freq"), config.encoder_modes(), d);
                    insert_ff(&mut p, &mut rng, &format!("encoder.{b}."), d, f);
                }
                for b in 0..DECODER_BLOCKS {
                    insert_freq(&mut p, &mut rng, &format!("decoder.{b}.self_freq"), config.decoder_modes(), d);
                    insert_freq(&mut p, &mut rng, &format!("decoder.{b}.cross_freq"), config.cross_modes(), d);
                    insert_ff(&mut p, &mut rng, &format!("decoder.{b}."), d, f);
                }
            }
            Architecture::Vanilla => {
                for b in 0..ENCODER_BLOCKS {
                    insert_attention(&mut p, &mut rng, &format!("encoder.{b}.attn"), d);
                    insert_ff(&mut p, &mut rng, &format!("encoder.{b}."), d, f);
                }
                for b in 0..DECODER_BLOCKS {
                    insert_attention(&mut p, &mut rng, &format!("decoder.{b}.self_attn"), d);
                    insert_attention(&mut p, &mut rng, &format!("decoder.{b}.cross_attn"), d);
                    insert_ff(&mut p, &mut rng, &format!("decoder.{b}."), d, f);
                }
            }
        }
        insert_linear(&mut p, &mut rng, "head", n, d, true);
        p
    }

    /// Rebuild from stored parameters, checking the layout against the config.
    pub fn from_parts(config: ForecasterConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let layout = Self::build_params(&config, 0);
        {
            for (name, shape) in layout.iter().map(|(k, v)| (k, v.dim())) {
                match params.get(name) {
                    Some(a) if a.dim() == shape => {}
                    Some(a) => {
                        return Err(Error::CheckpointMismatch(format!(
                            "parameter `{name}` has shape {:?}, expected {shape:?}",
                            a.dim()
                        )))
                    }
                    None => return Err(Error::CheckpointMismatch(format!("missing parameter `{name}`"))),
                }
            }
            if params.len() != layout.len() {
                return Err(Error::CheckpointMismatch("unexpected extra parameters".into()));
            }
            if !params.all_finite() {
                return Err(Error::CheckpointMismatch("non-finite parameter".into()));
            }
        }
        let geometry = Geometry::new(&config)?;
        Ok(Self {
            config,
            params,
            geometry,
        })
    }

    pub fn config(&self) -> &ForecasterConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore {
        self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Names of the weight matrices inside encoder/decoder blocks.
    pub fn block_matrices(&self) -> Vec<String> {
        self.params
            .names()
            .filter(|n| (n.starts_with("encoder.") || n.starts_with("decoder.")) && !n.ends_with(".bias"))
            .cloned()
            .collect()
    }

    /// Zero the projection head: every forecast becomes the window mean.
    pub fn zero_head(&mut self) {
        for name in ["head.weight", "head.bias"] {
            if let Some(a) = self.params.get_mut(name) {
                a.fill(0.0);
            }
        }
    }

    /// Make every channel-facing map identical across assets, so the model
    /// treats assets symmetrically.
    pub fn symmetrize_channels(&mut self) {
        for name in ["enc_embed.weight", "dec_embed.weight", "trend_embed.weight"] {
            if let Some(a) = self.params.get_mut(name) {
                let first = a.column(0).to_owned();
                for mut c in a.columns_mut() {
                    c.assign(&first);
                }
            }
        }
        for name in ["head.weight", "head.bias"] {
            if let Some(a) = self.params.get_mut(name) {
                if name.ends_with("weight") {
                    let first = a.row(0).to_owned();
                    for mut r in a.rows_mut() {
                        r.assign(&first);
                    }
                } else {
                    let v = a[[0, 0]];
                    a.fill(v);
                }
            }
        }
    }

    fn check_window(&self, window: &Array2<f64>) -> Result<()> {
        let expect = (self.config.n_assets, self.config.window);
        if window.dim() != expect {
            return Err(Error::ShapeMismatch(format!(
                "window {:?}, model expects {expect:?}",
                window.dim()
            )));
        }
        if window.iter().any(|x| !x.is_finite()) {
            return Err(Error::ShapeMismatch("window contains non-finite values".into()));
        }
        Ok(())
    }

    /// Bind all parameters, trainable per `trainable`.
    pub fn bind(&self, tape: &mut Tape, trainable: impl Fn(&str) -> bool) -> Bindings {
        let mut b = Bindings::new();
        b.bind(tape, &self.params, "", trainable);
        b
    }

    /// Normalized-space forecast (`h × n`) on the tape, reading weights
    /// through `bindings`.
    pub fn forward_graph(&self, tape: &mut Tape, bindings: &Bindings, window: &Array2<f64>) -> Result<(Var, WindowNorm)> {
        self.check_window(window)?;
        let norm = WindowNorm::from_window(window);
        let xn = norm.normalize(window);
        let out = match self.config.architecture {
            Architecture::FrequencyEnhanced => self.fed_graph(tape, bindings, &xn),
            Architecture::Vanilla => self.vanilla_graph(tape, bindings, &xn),
        };
        Ok((out, norm))
    }

    /// Price forecast for one `n × w` window.
    pub fn forward(&self, window: &Array2<f64>) -> Result<Forecast> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, |_| false);
        let (out, norm) = self.forward_graph(&mut tape, &b, window)?;
        Ok(Forecast {
            values: norm.denormalize(tape.value(out)),
            anchor_date: None,
        })
    }

    fn ff(&self, tape: &mut Tape, b: &Bindings, x: Var, prefix: &str) -> Var {
        let h = tape.linear(x, b.get(&format!("{prefix}ff1.weight")), Some(b.get(&format!("{prefix}ff1.bias"))));
        let h = tape.gelu(h);
        tape.linear(h, b.get(&format!("{prefix}ff2.weight")), Some(b.get(&format!("{prefix}ff2.bias"))))
    }

    fn freq(&self, tape: &mut Tape, b: &Bindings, x: Var, basis: &DftBasis, name: &str) -> Var {
        let re: Vec<Var> = (0..basis.modes()).map(|m| b.get(&format!("{name}.re.{m}"))).collect();
        let im: Vec<Var> = (0..basis.modes()).map(|m| b.get(&format!("{name}.im.{m}"))).collect();
        mix_modes(tape, x, basis, &re, &im)
    }

    fn embed(&self, tape: &mut Tape, b: &Bindings, x: &Array2<f64>, name: &str) -> Var {
        let xv = tape.constant(x.clone());
        tape.linear(xv, b.get(&format!("{name}.weight")), b.try_get(&format!("{name}.bias")))
    }

    fn head(&self, tape: &mut Tape, b: &Bindings, x: Var) -> Var {
        let y = tape.linear(x, b.get("head.weight"), Some(b.get("head.bias")));
        let ld = self.config.decoder_len();
        tape.slice_rows(y, ld - self.config.horizon, ld)
    }

    /// Decoder inputs: label-length tail of the window's seasonal (or raw)
    /// part followed by zeros, and the trend tail followed by the window mean.
    fn decoder_inputs(&self, xn: &Array2<f64>) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let (w, n) = xn.dim();
        let (ll, h) = (self.config.label_len(), self.config.horizon);
        let trend = self.geometry.enc_ma.dot(xn);
        let seasonal = xn - &trend;
        let mean = xn.mean_axis(Axis(0)).expect("window has rows");
        let mut seas_init = Array2::zeros((ll + h, n));
        seas_init.slice_mut(s![..ll, ..]).assign(&seasonal.slice(s![w - ll.., ..]));
        let mut trend_init = Array2::zeros((ll + h, n));
        trend_init.slice_mut(s![..ll, ..]).assign(&trend.slice(s![w - ll.., ..]));
        for mut r in trend_init.slice_mut(s![ll.., ..]).rows_mut() {
            r.assign(&mean);
        }
        let mut raw_init = Array2::zeros((ll + h, n));
        raw_init.slice_mut(s![..ll, ..]).assign(&xn.slice(s![w - ll.., ..]));
        (seas_init, trend_init, raw_init)
    }

    fn fed_graph(&self, tape: &mut Tape, b: &Bindings, xn: &Array2<f64>) -> Var {
        let g = &self.geometry;
        let enc_season = tape.constant(g.enc_season.clone());
        let dec_season = tape.constant(g.dec_season.clone());
        let dec_ma = tape.constant(g.dec_ma.clone());

        let mut enc = self.embed(tape, b, xn, "enc_embed");
        for blk in 0..ENCODER_BLOCKS {
            let p = format!("encoder.{blk}.");
            let f = self.freq(tape, b, enc, &g.enc_basis, &format!("{p}freq"));
            enc = tape.add(enc, f);
            enc = tape.matmul(enc_season, enc);
            let f = self.ff(tape, b, enc, &p);
            enc = tape.add(enc, f);
            enc = tape.matmul(enc_season, enc);
        }

        let (seas_init, trend_init, _) = self.decoder_inputs(xn);
        let mut dec = self.embed(tape, b, &seas_init, "dec_embed");
        let mut trend = self.embed(tape, b, &trend_init, "trend_embed");
        for blk in 0..DECODER_BLOCKS {
            let p = format!("decoder.{blk}.");
            let updates = [
                self.freq(tape, b, dec, &g.dec_basis, &format!("{p}self_freq")),
                self.freq(tape, b, enc, &g.cross_basis, &format!("{p}cross_freq")),
            ];
            for u in updates {
                let x = tape.add(dec, u);
                let t = tape.matmul(dec_ma, x);
                trend = tape.add(trend, t);
                dec = tape.matmul(dec_season, x);
            }
            let f = self.ff(tape, b, dec, &p);
            let x = tape.add(dec, f);
            let t = tape.matmul(dec_ma, x);
            trend = tape.add(trend, t);
            dec = tape.matmul(dec_season, x);
        }
        let merged = tape.add(dec, trend);
        self.head(tape, b, merged)
    }

    fn attention(&self, tape: &mut Tape, b: &Bindings, q_src: Var, kv_src: Var, name: &str) -> Var {
        let proj = |tape: &mut Tape, x: Var, p: &str| {
            tape.linear(x, b.get(&format!("{name}.{p}.weight")), Some(b.get(&format!("{name}.{p}.bias"))))
        };
        let q = proj(tape, q_src, "q");
        let k = proj(tape, kv_src, "k");
        let v = proj(tape, kv_src, "v");
        let scores = tape.matmul_nt(q, k);
        let scores = tape.scale(scores, 1.0 / (self.config.d_model as f64).sqrt());
        let attn = tape.softmax_rows(scores);
        let o = tape.matmul(attn, v);
        proj(tape, o, "o")
    }

    fn vanilla_graph(&self, tape: &mut Tape, b: &Bindings, xn: &Array2<f64>) -> Var {
        let enc_pos = tape.constant(self.geometry.enc_pos.clone());
        let dec_pos = tape.constant(self.geometry.dec_pos.clone());
        let mut enc = self.embed(tape, b, xn, "enc_embed");
        enc = tape.add(enc, enc_pos);
        for blk in 0..ENCODER_BLOCKS {
            let p = format!("encoder.{blk}.");
            let a = self.attention(tape, b, enc, enc, &format!("{p}attn"));
            enc = tape.add(enc, a);
            let f = self.ff(tape, b, enc, &p);
            enc = tape.add(enc, f);
        }
        let (_, _, raw_init) = self.decoder_inputs(xn);
        let mut dec = self.embed(tape, b, &raw_init, "dec_embed");
        dec = tape.add(dec, dec_pos);
        for blk in 0..DECODER_BLOCKS {
            let p = format!("decoder.{blk}.");
            let a = self.attention(tape, b, dec, dec, &format!("{p}self_attn"));
            dec = tape.add(dec, a);
            let c = self.attention(tape, b, dec, enc, &format!("{p}cross_attn"));
            dec = tape.add(dec, c);
            let f = self.ff(tape, b, dec, &p);
            dec = tape.add(dec, f);
        }
        self.head(tape, b, dec)
    }
}

/// Forecast with the frequency-enhanced model (or whatever `model` is).
pub fn forward(model: &ForecastModel, window: &Array2<f64>) -> Result<Forecast> {
    model.forward(window)
}

/// Forecast with a vanilla attention model.
pub fn vanilla_forward(model: &ForecastModel, window: &Array2<f64>) -> Result<Forecast> {
    if model.config().architecture != Architecture::Vanilla {
        return Err(Error::InvalidConfig("vanilla_forward needs a vanilla-architecture model".into()));
    }
    model.forward(window)
}
