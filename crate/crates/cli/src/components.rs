//! Everything a trained policy needs to be rebuilt, in one file.

use folio_core::checkpoint::{AdapterCheckpoint, ForecasterCheckpoint, PolicyCheckpoint};
use folio_core::policy::{ForecasterStage, Policy};
use folio_core::rl::AblationMode;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyComponents {
    pub mode: AblationMode,
    pub n_assets: usize,
    pub window: usize,
    /// Plain forecaster, or the frozen base under the adapters.
    pub forecaster: Option<ForecasterCheckpoint>,
    pub adapters: Option<AdapterCheckpoint>,
    pub heads: PolicyCheckpoint,
}

impl PolicyComponents {
    pub fn from_policy(mode: AblationMode, policy: &Policy) -> Self {
        let (forecaster, adapters) = match &policy.stage {
            ForecasterStage::Removed { .. } => (None, None),
            ForecasterStage::Plain(m) => (Some(ForecasterCheckpoint::from_model(m)), None),
            ForecasterStage::Adapted(a) => (
                Some(ForecasterCheckpoint::from_model(a.base())),
                Some(AdapterCheckpoint::from_adapted(a)),
            ),
        };
        Self {
            mode,
            n_assets: policy.n_assets(),
            window: policy.window(),
            forecaster,
            adapters,
            heads: PolicyCheckpoint::new(&policy.scorer, &policy.msm, policy.selection),
        }
    }

    pub fn into_policy(self) -> CliResult<Policy> {
        let stage = match (self.forecaster, self.adapters) {
            (None, None) => ForecasterStage::Removed {
                n_assets: self.n_assets,
                window: self.window,
            },
            (Some(f), None) => ForecasterStage::Plain(f.into_model()?),
            (Some(f), Some(a)) => ForecasterStage::Adapted(a.attach(f.into_model()?)?),
            (None, Some(_)) => {
                return Err(CliError::Config("adapters stored without their base forecaster".into()))
            }
        };
        let (scorer, msm, selection) = self.heads.into_parts()?;
        Ok(Policy::new(stage, scorer, msm, selection)?)
    }

    /// Component name to parameter hash, for manifests.
    pub fn hashes(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        if let Some(f) = &self.forecaster {
            out.push(("forecaster".to_string(), f.params_hash.clone()));
        }
        if let Some(a) = &self.adapters {
            out.push(("adapters".to_string(), a.params_hash.clone()));
        }
        out.push(("asset_scorer".to_string(), self.heads.scorer_hash.clone()));
        out.push(("market_scorer".to_string(), self.heads.market_hash.clone()));
        out
    }
}
