//! Run configuration: one JSON document with a section per module.

use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use tipnet::bargaining_engine::SimulationConfig;
use tipnet::data_ingest::ColumnMap;
use tipnet::econometrics::CointegrationConfig;
use tipnet::intrinsic_value::IntrinsicConfig;
use tipnet::tipping_analysis::{ForecastConfig, HysteresisConfig};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    pub columns: ColumnMap,
}

/// Effective settings of one invocation. Unknown keys are rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Master seed; every random stream derives from it.
    pub seed: u64,
    /// Worker threads; `None` lets the pool decide.
    pub jobs: Option<usize>,
    pub ingest: IngestSection,
    pub intrinsic: IntrinsicConfig,
    pub simulation: SimulationConfig,
    pub hysteresis: HysteresisConfig,
    pub cointegration: CointegrationConfig,
    pub forecast: ForecastConfig,
}

impl Config {
    pub fn load(path: &Path) -> anyhow::Result<Config> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    /// Applies overrides and checks every section.
    pub fn finalize(mut self, seed: Option<u64>, jobs: Option<usize>) -> anyhow::Result<Config> {
        if let Some(s) = seed {
            self.seed = s;
        }
        if jobs.is_some() {
            self.jobs = jobs;
        }
        if self.jobs == Some(0) {
            anyhow::bail!("jobs must be at least 1");
        }
        self.simulation.seed = self.seed;
        self.intrinsic.validate()?;
        self.simulation.validate()?;
        self.hysteresis.validate()?;
        self.forecast.validate()?;
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<Config>(r#"{"simulation": {"alpha": 0.3}}"#).is_ok());
        assert!(serde_json::from_str::<Config>(r#"{"simulaton": {}}"#).is_err());
        assert!(serde_json::from_str::<Config>(r#"{"simulation": {"alpah": 0.3}}"#).is_err());
        assert!(serde_json::from_str::<Config>(r#"{"forecast": {"horizon": 3}}"#).is_err());
    }

    #[test]
    fn seed_override_reaches_engine() {
        let c = Config::default().finalize(Some(9), Some(2)).unwrap();
        assert_eq!((c.seed, c.simulation.seed, c.jobs), (9, 9, Some(2)));
        assert!(Config::default().finalize(None, Some(0)).is_err());
    }

    #[test]
    fn defaults_round_trip() {
        let c = Config::default();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<Config>(&text).unwrap(), c);
    }
}
