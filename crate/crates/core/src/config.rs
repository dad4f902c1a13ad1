//! The JSON configuration document: one optional block per consuming stage.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bench::dataset::DatasetConfig;
use crate::bench::eval::EvalConfig;
use crate::error::{validation, Result};
use crate::evsim::ThresholdModel;
use crate::formation::{Exposure, FormationConfig};
use crate::io::read_to_string;
use crate::restore::RestoreConfig;
use crate::turbsim::TurbulenceParams;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub turbulence: TurbulenceParams,
    pub event_sim: ThresholdModel,
    pub formation: FormationConfig,
    pub restore: RestoreConfig,
    pub dataset: DatasetConfig,
    pub eval: EvalConfig,
}

impl Config {
    pub fn from_json(text: &str) -> Result<Config> {
        serde_json::from_str(text).map_err(|e| validation(format!("config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Config> {
        Config::from_json(&read_to_string(path)?)
    }

    /// Overrides every block-level seed.
    pub fn with_seed(mut self, seed: u64) -> Config {
        self.turbulence.seed = seed;
        self.event_sim.seed = seed;
        self
    }

    /// The exposure of one rendered long exposure starting at 0.
    pub fn default_exposure(&self) -> Result<Exposure> {
        let n = self.turbulence.n_latents as f64;
        Exposure::new(0, (n * 1e6 / self.turbulence.fps_latent).round() as i64)
    }

    pub fn validate(&self) -> Result<()> {
        self.turbulence.validate()?;
        self.event_sim.validate()?;
        self.restore.solver_params().validate()?;
        self.dataset.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let c = Config::from_json("{}").unwrap();
        assert_eq!(c, Config::default());
        assert_eq!(c.restore.m_latents, 16);
        assert_eq!(
            c.default_exposure().unwrap(),
            Exposure::new(0, 100_000).unwrap()
        );
    }

    #[test]
    fn partial_blocks_and_t_ref_forms() {
        let c = Config::from_json(
            r#"{"formation": {"t_ref": 1234, "accum_mode": "cumulative_product"},
                "restore": {"kappa": 0.0}}"#,
        )
        .unwrap();
        assert_eq!(c.formation.t_ref, crate::formation::TimeRef::Micros(1234));
        assert_eq!(
            c.formation.accum_mode,
            crate::formation::AccumMode::CumulativeProduct
        );
        assert_eq!(c.restore.kappa, 0.0);
        assert_eq!(c.restore.levels, 3);
        let mid = Config::from_json(r#"{"formation": {"t_ref": "mid"}}"#).unwrap();
        assert_eq!(mid.formation.t_ref, crate::formation::TimeRef::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(Config::from_json(r#"{"restore": {"kapa": 1}}"#).is_err());
        assert!(Config::from_json(r#"{"extra": {}}"#).is_err());
        let e = Config::from_json("[1").unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }
}
