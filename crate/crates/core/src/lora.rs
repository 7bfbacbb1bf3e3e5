//! Low-rank adapters over a frozen forecaster.
//!
//! Every adapted matrix `W` (`d_out × d_in`) gets factors `up` (`d_out × r`,
//! zero at injection) and `down` (`r × d_in`, small random), and the forward
//! pass reads `W + scale · up · down` in its place. The base parameters are
//! only ever read.
//!
//! Complex frequency-mode weights are stored as separate real and imaginary
//! matrices, so each half gets its own adapter.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Tape;
use crate::error::{Error, Result};
use crate::forecast::{Forecast, ForecastModel};
use crate::params::{normal_init, Bindings, ParamStore};

#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    /// `r × d_in`
    pub down: Array2<f64>,
    /// `d_out × r`
    pub up: Array2<f64>,
    pub scale: f64,
}

impl LoraAdapter {
    pub fn new(d_out: usize, d_in: usize, rank: usize, alpha: f64, rng: &mut ChaCha8Rng) -> Self {
        Self {
            down: normal_init(rng, rank, d_in, 1.0 / (d_in as f64).sqrt()),
            up: Array2::zeros((d_out, rank)),
            scale: alpha / rank as f64,
        }
    }

    pub fn rank(&self) -> usize {
        self.down.nrows()
    }

    pub fn trainable_count(&self) -> usize {
        self.down.len() + self.up.len()
    }
}

/// `base + scale · up · down`.
pub fn effective_weight(base: &Array2<f64>, adapter: &LoraAdapter) -> Result<Array2<f64>> {
    let (d_out, d_in) = base.dim();
    if adapter.up.nrows() != d_out || adapter.down.ncols() != d_in || adapter.up.ncols() != adapter.down.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "adapter up {:?} / down {:?} incompatible with base {:?}",
            adapter.up.dim(),
            adapter.down.dim(),
            base.dim()
        )));
    }
    let mut w = base.clone();
    w.scaled_add(adapter.scale, &adapter.up.dot(&adapter.down));
    Ok(w)
}

/// Which blocks receive adapters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdapterTarget {
    Encoders,
    Decoder,
    /// Frequency-mixing weights of every block, nothing else.
    FrequencyAttention,
    /// Every encoder and decoder block.
    All,
}

impl AdapterTarget {
    pub const ALL_PLACEMENTS: [AdapterTarget; 4] = [
        AdapterTarget::Encoders,
        AdapterTarget::Decoder,
        AdapterTarget::FrequencyAttention,
        AdapterTarget::All,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            AdapterTarget::Encoders => "encoder",
            AdapterTarget::Decoder => "decoder",
            AdapterTarget::FrequencyAttention => "fea",
            AdapterTarget::All => "all",
        }
    }
}

/// Matrix kinds eligible for adaptation inside the selected blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixKinds {
    pub frequency: bool,
    pub attention: bool,
    pub feed_forward: bool,
}

impl Default for MatrixKinds {
    fn default() -> Self {
        Self {
            frequency: true,
            attention: true,
            feed_forward: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectionPlan {
    pub target: AdapterTarget,
    #[serde(default)]
    pub kinds: MatrixKinds,
}

impl Default for InjectionPlan {
    fn default() -> Self {
        Self {
            target: AdapterTarget::Encoders,
            kinds: MatrixKinds::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Frequency,
    Attention,
    FeedForward,
}

fn kind_of(name: &str) -> Option<Kind> {
    if name.contains("freq.re.") || name.contains("freq.im.") {
        Some(Kind::Frequency)
    } else if name.contains("attn.") && name.ends_with(".weight") {
        Some(Kind::Attention)
    } else if (name.contains(".ff1.") || name.contains(".ff2.")) && name.ends_with(".weight") {
        Some(Kind::FeedForward)
    } else {
        None
    }
}

impl InjectionPlan {
    pub fn new(target: AdapterTarget) -> Self {
        Self {
            target,
            kinds: MatrixKinds::default(),
        }
    }

    /// Whether the parameter `name` is adapted under this plan.
    pub fn selects(&self, name: &str) -> bool {
        let in_block = match self.target {
            AdapterTarget::Encoders => name.starts_with("encoder."),
            AdapterTarget::Decoder => name.starts_with("decoder."),
            AdapterTarget::FrequencyAttention | AdapterTarget::All => {
                name.starts_with("encoder.") || name.starts_with("decoder.")
            }
        };
        let kind_ok = match kind_of(name) {
            Some(Kind::Frequency) => self.kinds.frequency,
            Some(Kind::Attention) => self.kinds.attention && self.target != AdapterTarget::FrequencyAttention,
            Some(Kind::FeedForward) => self.kinds.feed_forward && self.target != AdapterTarget::FrequencyAttention,
            None => false,
        };
        in_block && kind_ok
    }

    /// Names of the matrices this plan adapts in `model`.
    pub fn resolve(&self, model: &ForecastModel) -> Result<Vec<String>> {
        let names: Vec<String> = model.params().names().filter(|n| self.selects(n)).cloned().collect();
        if names.is_empty() {
            return Err(Error::UnknownTarget(format!(
                "{} (no matching matrices in a {:?} model)",
                self.target.label(),
                model.config().architecture
            )));
        }
        Ok(names)
    }
}

/// How to treat a rank larger than a target matrix can host.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankPolicy {
    /// Use `min(d_in, d_out)` and log a warning.
    #[default]
    Clamp,
    Strict,
}

/// A frozen forecaster plus its adapters.
#[derive(Debug, Clone)]
pub struct AdaptedModel {
    base: ForecastModel,
    plan: InjectionPlan,
    rank: usize,
    alpha: f64,
    /// `{target}.lora_down` / `{target}.lora_up` for every adapted matrix.
    adapters: ParamStore,
    scales: BTreeMap<String, f64>,
    /// Extra trainables registered by callers, name → scalar count.
    heads: BTreeMap<String, usize>,
}

pub const DOWN_SUFFIX: &str = ".lora_down";
pub const UP_SUFFIX: &str = ".lora_up";

pub fn inject(
    model: ForecastModel,
    plan: InjectionPlan,
    rank: usize,
    alpha: f64,
    seed: u64,
    policy: RankPolicy,
) -> Result<AdaptedModel> {
    if rank == 0 {
        return Err(Error::InvalidConfig("adapter rank must be at least 1".into()));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::InvalidConfig("adapter alpha must be positive".into()));
    }
    let targets = plan.resolve(&model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adapters = ParamStore::new();
    let mut scales = BTreeMap::new();
    for name in targets {
        let (d_out, d_in) = model.params().require(&name)?.dim();
        let max = d_out.min(d_in);
        let r = if rank > max {
            match policy {
                RankPolicy::Strict => {
                    return Err(Error::RankTooLarge {
                        target: name,
                        rank,
                        max,
                    })
                }
                RankPolicy::Clamp => {
                    log::warn!("rank {rank} exceeds {max} for `{name}`, using {max}");
                    max
                }
            }
        } else {
            rank
        };
        let a = LoraAdapter::new(d_out, d_in, r, alpha, &mut rng);
        scales.insert(name.clone(), a.scale);
        adapters.insert(format!("{name}{DOWN_SUFFIX}"), a.down);
        adapters.insert(format!("{name}{UP_SUFFIX}"), a.up);
    }
    Ok(AdaptedModel {
        base: model,
        plan,
        rank,
        alpha,
        adapters,
        scales,
        heads: BTreeMap::new(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainableListing {
    pub count: usize,
    pub entries: Vec<(String, usize)>,
}

impl AdaptedModel {
    /// Rebuild from stored adapter factors.
    pub fn from_parts(base: ForecastModel, plan: InjectionPlan, rank: usize, alpha: f64, adapters: ParamStore) -> Result<Self> {
        let targets = plan.resolve(&base)?;
        let mut scales = BTreeMap::new();
        for name in &targets {
            let (d_out, d_in) = base.params().require(name)?.dim();
            let down = adapters
                .get(&format!("{name}{DOWN_SUFFIX}"))
                .ok_or_else(|| Error::CheckpointMismatch(format!("no adapter for `{name}`")))?;
            let up = adapters
                .get(&format!("{name}{UP_SUFFIX}"))
                .ok_or_else(|| Error::CheckpointMismatch(format!("no adapter for `{name}`")))?;
            if down.ncols() != d_in || up.nrows() != d_out || up.ncols() != down.nrows() {
                return Err(Error::CheckpointMismatch(format!("adapter shapes do not fit `{name}`")));
            }
            scales.insert(name.clone(), alpha / down.nrows() as f64);
        }
        if adapters.len() != 2 * targets.len() {
            return Err(Error::CheckpointMismatch("adapter set does not match the plan".into()));
        }
        Ok(Self {
            base,
            plan,
            rank,
            alpha,
            adapters,
            scales,
            heads: BTreeMap::new(),
        })
    }

    pub fn base(&self) -> &ForecastModel {
        &self.base
    }

    pub fn plan(&self) -> InjectionPlan {
        self.plan
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn adapter_params(&self) -> &ParamStore {
        &self.adapters
    }

    pub fn adapter_params_mut(&mut self) -> &mut ParamStore {
        &mut self.adapters
    }

    pub fn targets(&self) -> impl Iterator<Item = &String> {
        self.scales.keys()
    }

    pub fn adapter(&self, target: &str) -> Option<LoraAdapter> {
        Some(LoraAdapter {
            down: self.adapters.get(&format!("{target}{DOWN_SUFFIX}"))?.clone(),
            up: self.adapters.get(&format!("{target}{UP_SUFFIX}"))?.clone(),
            scale: *self.scales.get(target)?,
        })
    }

    /// Record an extra trainable component (e.g. a policy head) so it shows
    /// up in [`trainable_parameters`].
    pub fn register_head(&mut self, name: impl Into<String>, scalars: usize) {
        self.heads.insert(name.into(), scalars);
    }

    /// Bind base weights as constants and adapter factors as trainable (when
    /// `train_adapters`), exposing each adapted matrix under its base name as
    /// `W + scale · up · down`.
    pub fn bind(&self, tape: &mut Tape, train_adapters: bool) -> Bindings {
        let mut b = self.base.bind(tape, |_| false);
        let mut ad = Bindings::new();
        ad.bind(tape, &self.adapters, "", |_| train_adapters);
        for (name, &scale) in &self.scales {
            let down = ad.get(&format!("{name}{DOWN_SUFFIX}"));
            let up = ad.get(&format!("{name}{UP_SUFFIX}"));
            b.insert(format!("{name}{DOWN_SUFFIX}"), down);
            b.insert(format!("{name}{UP_SUFFIX}"), up);
            let delta = tape.matmul(up, down);
            let delta = tape.scale(delta, scale);
            let w = tape.add(b.get(name), delta);
            b.insert(name.clone(), w);
        }
        b
    }

    pub fn forward(&self, window: &Array2<f64>) -> Result<Forecast> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false);
        let (out, norm) = self.base.forward_graph(&mut tape, &b, window)?;
        Ok(Forecast {
            values: norm.denormalize(tape.value(out)),
            anchor_date: None,
        })
    }

    /// Plain model with every effective weight materialized.
    pub fn merged(&self) -> Result<ForecastModel> {
        let mut params = self.base.params().clone();
        for name in self.scales.keys() {
            let a = self.adapter(name).expect("adapter exists for every scale entry");
            let w = effective_weight(params.require(name)?, &a)?;
            params.insert(name.clone(), w);
        }
        ForecastModel::from_parts(self.base.config().clone(), params)
    }
}

/// Adapter factors plus registered heads; the frozen base is excluded.
pub fn trainable_parameters(adapted: &AdaptedModel) -> TrainableListing {
    let mut entries: Vec<(String, usize)> = adapted.adapters.iter().map(|(k, v)| (k.clone(), v.len())).collect();
    entries.extend(adapted.heads.iter().map(|(k, &c)| (k.clone(), c)));
    TrainableListing {
        count: entries.iter().map(|(_, c)| c).sum(),
        entries,
    }
}
