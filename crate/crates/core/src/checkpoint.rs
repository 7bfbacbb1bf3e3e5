//! Versioned JSON checkpoints for forecasters, adapters and policy heads.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::{ForecastModel, ForecasterConfig, NORMALIZATION_TAG};
use crate::lora::{AdaptedModel, InjectionPlan};
use crate::params::ParamStore;
use crate::policy::{AssetScorer, MarketScorer, ScorerConfig, SelectionConfig};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForecasterCheckpoint {
    pub version: u32,
    pub config: ForecasterConfig,
    pub normalization: String,
    pub params_hash: String,
    pub params: ParamStore,
}

impl ForecasterCheckpoint {
    pub fn from_model(model: &ForecastModel) -> Self {
        Self {
            version: FORMAT_VERSION,
            config: model.config().clone(),
            normalization: NORMALIZATION_TAG.into(),
            params_hash: model.params().content_hash(),
            params: model.params().clone(),
        }
    }

    pub fn into_model(self) -> Result<ForecastModel> {
        check_header(self.version, &self.params, &self.params_hash)?;
        if self.normalization != NORMALIZATION_TAG {
            return Err(Error::CheckpointMismatch(format!(
                "normalization `{}` is not supported",
                self.normalization
            )));
        }
        ForecastModel::from_parts(self.config, self.params)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterCheckpoint {
    pub version: u32,
    /// Hash of the frozen base parameters the adapters belong to.
    pub base_hash: String,
    pub plan: InjectionPlan,
    pub rank: usize,
    pub alpha: f64,
    pub params_hash: String,
    pub params: ParamStore,
}

impl AdapterCheckpoint {
    pub fn from_adapted(adapted: &AdaptedModel) -> Self {
        Self {
            version: FORMAT_VERSION,
            base_hash: adapted.base().params().content_hash(),
            plan: adapted.plan(),
            rank: adapted.rank(),
            alpha: adapted.alpha(),
            params_hash: adapted.adapter_params().content_hash(),
            params: adapted.adapter_params().clone(),
        }
    }

    /// Reattach to `base`, which must be the model the adapters were trained on.
    pub fn attach(self, base: ForecastModel) -> Result<AdaptedModel> {
        check_header(self.version, &self.params, &self.params_hash)?;
        let h = base.params().content_hash();
        if h != self.base_hash {
            return Err(Error::CheckpointMismatch(format!(
                "adapters were trained on base {}, got {h}",
                self.base_hash
            )));
        }
        AdaptedModel::from_parts(base, self.plan, self.rank, self.alpha, self.params)
    }
}

/// Asset scorer, market head and book sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyCheckpoint {
    pub version: u32,
    pub scorer_config: ScorerConfig,
    pub scorer_hash: String,
    pub scorer: ParamStore,
    pub market_hash: String,
    pub market: ParamStore,
    pub selection: SelectionConfig,
}

impl PolicyCheckpoint {
    pub fn new(scorer: &AssetScorer, market: &MarketScorer, selection: SelectionConfig) -> Self {
        Self {
            version: FORMAT_VERSION,
            scorer_config: *scorer.config(),
            scorer_hash: scorer.params().content_hash(),
            scorer: scorer.params().clone(),
            market_hash: market.params().content_hash(),
            market: market.params().clone(),
            selection,
        }
    }

    pub fn into_parts(self) -> Result<(AssetScorer, MarketScorer, SelectionConfig)> {
        check_header(self.version, &self.scorer, &self.scorer_hash)?;
        check_header(self.version, &self.market, &self.market_hash)?;
        Ok((
            AssetScorer::from_parts(self.scorer_config, self.scorer)?,
            MarketScorer::from_parts(self.market)?,
            self.selection,
        ))
    }
}

fn check_header(version: u32, params: &ParamStore, hash: &str) -> Result<()> {
    if version != FORMAT_VERSION {
        return Err(Error::CheckpointMismatch(format!(
            "format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    if params.content_hash() != hash {
        return Err(Error::CheckpointMismatch("parameter hash does not match contents".into()));
    }
    Ok(())
}

pub fn save_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let s = serde_json::to_string(value)?;
    fs::write(path, s)?;
    Ok(())
}

pub fn load_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let s = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&s)?)
}
