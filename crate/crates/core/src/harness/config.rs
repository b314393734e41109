use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Activation, NetworkSpec};
use crate::optim::{Method, OptimizerConfig, PretrainConfig};
use crate::sequence::WorldConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub validation_fraction: f64,
    /// Hypotheses per lattice, reference included.
    pub lattice_beam: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            seeds: vec![1, 2, 3, 4, 5],
            out_dir: PathBuf::from("runs"),
            validation_fraction: 0.1,
            lattice_beam: 128,
        }
    }
}

/// Hidden layers only; input and output sizes follow the world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self { hidden_dims: vec![32], activation: Activation::Sigmoid }
    }
}

/// Shared optimizer settings plus per-method overrides, e.g.
///
/// ```toml
/// [optimizer]
/// kappa = 0.1
///
/// [optimizer.sgd]
/// learning_rate = 0.05
/// ```
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimizerSection {
    base: toml::Table,
    overrides: Vec<(Method, toml::Table)>,
}

impl OptimizerSection {
    fn from_table(mut table: toml::Table) -> Result<Self> {
        let mut overrides = Vec::new();
        for m in Method::ALL {
            if let Some(v) = table.remove(m.name()) {
                match v {
                    toml::Value::Table(t) => overrides.push((m, t)),
                    _ => return Err(Error::Config(format!("optimizer.{m} must be a table"))),
                }
            }
        }
        if table.contains_key("method") {
            return Err(Error::Config("optimizer.method is chosen per run, not in the config".into()));
        }
        let section = Self { base: table, overrides };
        for m in Method::ALL {
            section.for_method(m, 0)?;
        }
        Ok(section)
    }

    /// Settings for `method`: defaults, then the shared table, then the
    /// method's own table.
    pub fn for_method(&self, method: Method, seed: u64) -> Result<OptimizerConfig> {
        let mut merged = self.base.clone();
        if let Some((_, t)) = self.overrides.iter().find(|(m, _)| *m == method) {
            for (k, v) in t {
                merged.insert(k.clone(), v.clone());
            }
        }
        let mut cfg: OptimizerConfig =
            toml::Value::Table(merged).try_into().map_err(|e: toml::de::Error| Error::Config(format!("optimizer.{method}: {}", e.message())))?;
        cfg.method = method;
        cfg.seed = seed;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: toml::Value) {
        self.base.insert(key.to_string(), value);
    }

    pub fn set_for(&mut self, method: Method, key: &str, value: toml::Value) {
        match self.overrides.iter_mut().find(|(m, _)| *m == method) {
            Some((_, t)) => {
                t.insert(key.to_string(), value);
            }
            None => {
                let mut t = toml::Table::new();
                t.insert(key.to_string(), value);
                self.overrides.push((method, t));
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub world: WorldConfig,
    pub network: NetworkSection,
    pub pretrain: PretrainConfig,
    pub optimizer: OptimizerSection,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    experiment: ExperimentSection,
    #[serde(default)]
    world: WorldConfig,
    #[serde(default)]
    network: NetworkSection,
    #[serde(default)]
    pretrain: PretrainConfig,
    #[serde(default)]
    optimizer: toml::Table,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let cfg = Self {
            experiment: raw.experiment,
            world: raw.world,
            network: raw.network,
            pretrain: raw.pretrain,
            optimizer: OptimizerSection::from_table(raw.optimizer)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        if e.methods.is_empty() {
            return Err(Error::Config("experiment.methods is empty".into()));
        }
        let mut seeds = e.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.is_empty() || seeds.len() != e.seeds.len() {
            return Err(Error::Config("experiment.seeds must be non-empty and distinct".into()));
        }
        if !(e.validation_fraction > 0.0 && e.validation_fraction < 1.0) {
            return Err(Error::Config("experiment.validation_fraction must be in (0, 1)".into()));
        }
        if e.lattice_beam < 2 {
            return Err(Error::Config("experiment.lattice_beam must be ≥ 2".into()));
        }
        self.world.validate().map_err(|err| Error::Config(err.to_string()))?;
        self.network_spec()?;
        for &m in &e.methods {
            self.optimizer.for_method(m, 0)?.validate()?;
        }
        Ok(())
    }

    pub fn network_spec(&self) -> Result<NetworkSpec> {
        NetworkSpec::new(
            self.world.input_dim,
            self.network.hidden_dims.clone(),
            self.world.num_phones * self.world.states_per_phone,
            self.network.activation,
        )
        .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn optimizer_for(&self, method: Method, seed: u64) -> Result<OptimizerConfig> {
        self.optimizer.for_method(method, seed)
    }

    /// All method settings share κ, which also scales lattice generation.
    pub fn kappa(&self) -> Result<f64> {
        Ok(self.optimizer.for_method(Method::Nghf, 0)?.kappa)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_the_default() {
        let cfg = ExperimentConfig::from_toml_str("").unwrap();
        assert_eq!(cfg.experiment, ExperimentSection::default());
        assert_eq!(cfg.optimizer_for(Method::Hf, 3).unwrap(), OptimizerConfig { method: Method::Hf, seed: 3, ..Default::default() });
    }

    #[test]
    fn per_method_tables_override_shared_values() {
        let cfg = ExperimentConfig::from_toml_str(
            "[optimizer]\nkappa = 0.2\ndamping = 0.5\n[optimizer.sgd]\nlearning_rate = 0.3\n[optimizer.hf]\ndamping = 2.0\n",
        )
        .unwrap();
        let sgd = cfg.optimizer_for(Method::Sgd, 1).unwrap();
        let hf = cfg.optimizer_for(Method::Hf, 1).unwrap();
        let ng = cfg.optimizer_for(Method::Ng, 1).unwrap();
        assert_eq!((sgd.kappa, sgd.learning_rate, sgd.damping), (0.2, 0.3, 0.5));
        assert_eq!((hf.kappa, hf.damping), (0.2, 2.0));
        assert_eq!(ng.damping, 0.5);
    }

    #[test]
    fn unknown_keys_fail_fast() {
        for text in ["[world]\nnum_phone = 3\n", "[optimizer]\nkapa = 1.0\n", "[optimizer.nghf]\ncg_iters = 3\n", "[nonsense]\n", "[experiment]\nseed = 1\n"] {
            assert!(matches!(ExperimentConfig::from_toml_str(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for text in [
            "[experiment]\nseeds = [1, 1]\n",
            "[experiment]\nmethods = []\n",
            "[optimizer]\nmomentum = 1.5\n",
            "[world]\nnum_phones = 1\n",
            "[network]\nhidden_dims = [0]\n",
            "[experiment]\nmethods = [\"adam\"]\n",
        ] {
            assert!(matches!(ExperimentConfig::from_toml_str(text), Err(Error::Config(_))), "{text}");
        }
    }
}
