//! Experiment configuration: one TOML file, one section per pipeline stage.

use std::fs;
use std::path::{Path, PathBuf};

use folio_core::forecast::{Architecture, ForecasterConfig};
use folio_core::lora::{AdapterTarget, RankPolicy};
use folio_core::market_data::{load_prices, synth_market, AssetUniverse, CsvFormat, DataSplit, PriceSeries, SynthSpec};
use folio_core::policy::{ScorerConfig, SelectionConfig};
use folio_core::rl::{AblationMode, RLConfig};
use folio_core::train::TrainConfig;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub data: DataSection,
    #[serde(default)]
    pub forecaster: ForecasterSection,
    #[serde(default)]
    pub lora: LoraSection,
    #[serde(default)]
    pub policy: PolicySection,
    #[serde(default)]
    pub rl: RlSection,
    #[serde(default)]
    pub backtest: BacktestSection,
    #[serde(default)]
    pub ablate: AblateSection,
}

/// Either a price file or an inline synthetic market.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub path: Option<PathBuf>,
    #[serde(default = "default_format")]
    pub format: CsvFormat,
    pub synth: Option<SynthSpec>,
    /// Subset and order of assets; all loaded assets when absent.
    pub universe: Option<Vec<String>>,
    pub split: DataSplit,
}

fn default_format() -> CsvFormat {
    CsvFormat::CsvWide
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForecasterSection {
    pub architecture: Architecture,
    pub window: usize,
    pub horizon: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub modes: usize,
    pub kernel: usize,
    /// Also train the other architecture at a matched parameter budget.
    pub baseline: bool,
    pub stride: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub patience: usize,
}

impl Default for ForecasterSection {
    fn default() -> Self {
        let m = ForecasterConfig::new(Architecture::FrequencyEnhanced, 1);
        let t = TrainConfig::default();
        Self {
            architecture: m.architecture,
            window: m.window,
            horizon: m.horizon,
            d_model: 16,
            d_ff: 32,
            modes: m.modes,
            kernel: m.kernel,
            baseline: true,
            stride: 1,
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            clip_norm: t.clip_norm,
            patience: t.patience,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoraSection {
    pub target: AdapterTarget,
    pub rank: usize,
    pub alpha: f64,
    pub strict_rank: bool,
}

impl Default for LoraSection {
    fn default() -> Self {
        Self {
            target: AdapterTarget::Encoders,
            rank: 4,
            alpha: 8.0,
            strict_rank: false,
        }
    }
}

impl LoraSection {
    pub fn rank_policy(&self) -> RankPolicy {
        if self.strict_rank {
            RankPolicy::Strict
        } else {
            RankPolicy::Clamp
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicySection {
    /// Book sizes; both default to a quarter of the universe.
    pub n_long: Option<usize>,
    pub n_short: Option<usize>,
    /// How the forecaster enters the policy; defaults to adapters at `lora.target`.
    pub mode: Option<AblationMode>,
    pub conv_channels: Option<usize>,
    pub hidden: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RlSection {
    pub alpha: f64,
    pub beta: f64,
    pub epochs: usize,
    pub episode_days: Option<usize>,
    pub batch_days: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
}

impl Default for RlSection {
    fn default() -> Self {
        let r = RLConfig::default();
        Self {
            alpha: r.alpha,
            beta: r.beta,
            epochs: r.epochs,
            episode_days: r.episode_days,
            batch_days: r.batch_days,
            learning_rate: r.learning_rate,
            clip_norm: r.clip_norm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    Csm,
    Blsw,
    Benchmark,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BacktestSection {
    pub baselines: Vec<Baseline>,
    /// Trailing-return window of the momentum baselines.
    pub lookback: usize,
    pub trading_days: f64,
}

impl Default for BacktestSection {
    fn default() -> Self {
        Self {
            baselines: vec![Baseline::Csm, Baseline::Blsw, Baseline::Benchmark],
            lookback: 20,
            trading_days: folio_core::backtest::TRADING_DAYS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateSection {
    pub modes: Vec<AblationMode>,
}

impl Default for AblateSection {
    fn default() -> Self {
        Self {
            modes: AblationMode::ALL.to_vec(),
        }
    }
}

impl ExperimentConfig {
    /// Parse, resolve relative paths against `base_dir` and validate.
    pub fn from_toml(text: &str, base_dir: &Path) -> CliResult<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(p) = &cfg.data.path {
            if p.is_relative() {
                cfg.data.path = Some(base_dir.join(p));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config `{}`: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |field: &str, msg: String| Err(CliError::Config(format!("`{field}`: {msg}")));
        match (&self.data.path, &self.data.synth) {
            (Some(_), Some(_)) => return bad("data", "give either `path` or `synth`, not both".into()),
            (None, None) => return bad("data.path", "missing; give a price file or a `synth` table".into()),
            (Some(p), None) if !p.is_file() => return bad("data.path", format!("file `{}` not found", p.display())),
            _ => {}
        }
        if let Some(u) = &self.data.universe {
            if let Err(e) = AssetUniverse::new(u.clone()) {
                return bad("data.universe", e.to_string());
            }
        }
        if let Err(e) = self.forecaster_config(1).validate() {
            return bad("forecaster", e.to_string());
        }
        let f = &self.forecaster;
        if f.window < 3 {
            return bad("forecaster.window", "the asset scorer needs at least 3 days".into());
        }
        if f.stride == 0 {
            return bad("forecaster.stride", "must be at least 1".into());
        }
        if let Err(e) = self.train_config(0).validate() {
            return bad("forecaster", e.to_string());
        }
        if self.lora.rank == 0 {
            return bad("lora.rank", "must be at least 1".into());
        }
        if !(self.lora.alpha.is_finite() && self.lora.alpha > 0.0) {
            return bad("lora.alpha", "must be positive".into());
        }
        if let Err(e) = self.rl_config().validate() {
            return bad("rl", e.to_string());
        }
        if self.policy.n_long == Some(0) || self.policy.n_short == Some(0) {
            return bad("policy", "n_long and n_short must be at least 1".into());
        }
        if self.backtest.lookback == 0 {
            return bad("backtest.lookback", "must be at least 1".into());
        }
        if !(self.backtest.trading_days > 0.0) {
            return bad("backtest.trading_days", "must be positive".into());
        }
        if self.ablate.modes.is_empty() {
            return bad("ablate.modes", "list at least one mode".into());
        }
        Ok(())
    }

    pub fn forecaster_config(&self, n_assets: usize) -> ForecasterConfig {
        let f = &self.forecaster;
        ForecasterConfig {
            architecture: f.architecture,
            n_assets,
            window: f.window,
            horizon: f.horizon,
            d_model: f.d_model,
            d_ff: f.d_ff,
            modes: f.modes,
            kernel: f.kernel,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let f = &self.forecaster;
        TrainConfig {
            epochs: f.epochs,
            batch_size: f.batch_size,
            learning_rate: f.learning_rate,
            clip_norm: f.clip_norm,
            seed,
            patience: f.patience,
        }
    }

    pub fn rl_config(&self) -> RLConfig {
        let r = &self.rl;
        RLConfig {
            alpha: r.alpha,
            beta: r.beta,
            epochs: r.epochs,
            episode_days: r.episode_days,
            batch_days: r.batch_days,
            learning_rate: r.learning_rate,
            clip_norm: r.clip_norm,
            seed: self.seed,
        }
    }

    pub fn selection(&self, n_assets: usize) -> CliResult<SelectionConfig> {
        let q = SelectionConfig::quartile(n_assets);
        let s = SelectionConfig {
            n_long: self.policy.n_long.unwrap_or(q.n_long),
            n_short: self.policy.n_short.unwrap_or(q.n_short),
        };
        s.validate(n_assets)
            .map_err(|e| CliError::Config(format!("`policy`: {e}")))?;
        Ok(s)
    }

    pub fn scorer_config(&self, n_assets: usize) -> ScorerConfig {
        let mut c = ScorerConfig::new(n_assets, self.forecaster.window);
        if let Some(k) = self.policy.conv_channels {
            c.conv_channels = k;
        }
        if let Some(h) = self.policy.hidden {
            c.hidden = h;
        }
        c
    }

    pub fn mode(&self) -> AblationMode {
        self.policy.mode.unwrap_or(AblationMode::Lora(self.lora.target))
    }

    /// Load the configured prices, restricted to `data.universe` when given.
    pub fn load_series(&self) -> CliResult<PriceSeries> {
        let full = match (&self.data.path, &self.data.synth) {
            (Some(p), _) => load_prices(p, self.data.format)?,
            (None, Some(spec)) => synth_market(spec, self.seed)?,
            (None, None) => return Err(CliError::Config("`data.path`: missing".into())),
        };
        match &self.data.universe {
            None => Ok(full),
            Some(ids) => select_assets(&full, ids),
        }
    }
}

fn select_assets(series: &PriceSeries, ids: &[String]) -> CliResult<PriceSeries> {
    let known = series.universe().ids();
    let rows = ids
        .iter()
        .map(|id| {
            known
                .iter()
                .position(|k| k == id)
                .ok_or_else(|| CliError::Config(format!("`data.universe`: asset `{id}` not in the data")))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let p = series.prices();
    let prices = Array2::from_shape_fn((rows.len(), series.n_days()), |(i, t)| p[[rows[i], t]]);
    Ok(PriceSeries::new(AssetUniverse::new(ids.to_vec())?, series.dates().to_vec(), prices)?)
}
