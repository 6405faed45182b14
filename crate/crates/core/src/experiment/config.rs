use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::armed::{Effect, TrainConfig, UnseenMode, ZpredConfig};
use crate::error::{Error, Result};
use crate::simdata::{generate, load_csv, ClusteredDataset, CsvSchema, GeneratorConfig};
use crate::uq::{Backend, DEFAULT_DRAWS, SWAG_EPOCHS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSource {
    Generate {
        #[serde(default)]
        generator: GeneratorConfig,
    },
    Csv {
        path: PathBuf,
        #[serde(default)]
        schema: Option<CsvSchema>,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Generate {
            generator: GeneratorConfig::default(),
        }
    }
}

impl DataSource {
    pub fn load(&self) -> Result<ClusteredDataset> {
        match self {
            DataSource::Generate { generator } => generate(generator),
            DataSource::Csv { path, schema } => {
                let schema = match schema {
                    Some(s) => s.clone(),
                    None => CsvSchema::for_file(path)?,
                };
                load_csv(path, &schema)
            }
        }
    }
}

/// Rows on which per-sample covariate gradients are averaged.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoefficientRows {
    #[default]
    Train,
    SeenTest,
}

/// Full description of one experiment.
///
/// `train.seed` and `zpred.seed` are replaced by seeds derived from `seed`
/// for every fold and model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    pub data: DataSource,
    pub folds: usize,
    pub backends: Vec<Backend>,
    pub draws: usize,
    pub train: TrainConfig,
    pub zpred: ZpredConfig,
    pub swag_epochs: usize,
    pub unseen_mode: UnseenMode,
    pub dropout_extends_to_zpred: bool,
    pub effects: Vec<Effect>,
    pub coefficient_rows: CoefficientRows,
    pub allow_custom: bool,
    pub parallel: bool,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: None,
            data: DataSource::default(),
            folds: 10,
            backends: Backend::grid(),
            draws: DEFAULT_DRAWS,
            train: TrainConfig::default(),
            zpred: ZpredConfig::default(),
            swag_epochs: SWAG_EPOCHS,
            unseen_mode: UnseenMode::default(),
            dropout_extends_to_zpred: false,
            effects: vec![Effect::Fixed],
            coefficient_rows: CoefficientRows::default(),
            allow_custom: false,
            parallel: false,
            out: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&s).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::Config("a seed is required (config `seed` or --seed)".into()))
    }

    pub fn validate(&self) -> Result<()> {
        self.seed()?;
        if self.folds < 2 {
            return Err(Error::Config(format!("need at least 2 folds, got {}", self.folds)));
        }
        if self.draws < 2 {
            return Err(Error::Config(format!("need at least 2 draws, got {}", self.draws)));
        }
        if self.swag_epochs < 2 {
            return Err(Error::Config("SWAG needs at least 2 collection epochs".into()));
        }
        if self.effects.is_empty() {
            return Err(Error::Config("no coefficient effects configured".into()));
        }
        self.train.validate()?;
        for (i, b) in self.backends.iter().enumerate() {
            b.check_domain()?;
            if !self.allow_custom {
                b.check_grid()?;
            }
            if self.backends[..i].contains(b) {
                return Err(Error::Config(format!("backend `{b}` listed twice")));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> Result<String> {
        let json = serde_json::to_string(self)?;
        let digest = Sha256::digest(json.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let cfg = ExperimentConfig {
            seed: Some(3),
            backends: vec!["bnn:all".parse().unwrap(), "ensemble-subsample:0.9".parse().unwrap()],
            ..ExperimentConfig::default()
        };
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn minimal_toml() {
        let cfg = ExperimentConfig::from_toml(
            "seed = 1\nbackends = [\"swag-diag:0.1\"]\n[data]\nsource = \"generate\"\n[data.generator]\nn_clusters = 30\n",
        )
        .unwrap();
        assert_eq!(cfg.folds, 10);
        cfg.validate().unwrap();
        assert!(ExperimentConfig::from_toml("sed = 1").is_err());
    }

    #[test]
    fn seed_is_mandatory_and_grid_enforced() {
        let cfg = ExperimentConfig::default();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = ExperimentConfig {
            seed: Some(1),
            backends: vec!["dropout:0.25".parse().unwrap()],
            ..ExperimentConfig::default()
        };
        assert!(cfg.validate().is_err());
        ExperimentConfig { allow_custom: true, ..cfg }.validate().unwrap();
    }

    #[test]
    fn hash_tracks_every_field() {
        let base = ExperimentConfig {
            seed: Some(1),
            ..ExperimentConfig::default()
        };
        let h = base.hash().unwrap();
        assert_eq!(h, base.clone().hash().unwrap());
        assert_eq!(h.len(), 64);
        let mutants: Vec<ExperimentConfig> = vec![
            ExperimentConfig { seed: Some(2), ..base.clone() },
            ExperimentConfig { folds: 5, ..base.clone() },
            ExperimentConfig { backends: vec![], ..base.clone() },
            ExperimentConfig { draws: 31, ..base.clone() },
            ExperimentConfig { train: TrainConfig { epochs: 61, ..base.train.clone() }, ..base.clone() },
            ExperimentConfig { zpred: ZpredConfig { lr: 0.02, ..base.zpred.clone() }, ..base.clone() },
            ExperimentConfig { swag_epochs: 20, ..base.clone() },
            ExperimentConfig { unseen_mode: UnseenMode::FixedOnly, ..base.clone() },
            ExperimentConfig { dropout_extends_to_zpred: true, ..base.clone() },
            ExperimentConfig { effects: vec![Effect::Mixed], ..base.clone() },
            ExperimentConfig { coefficient_rows: CoefficientRows::SeenTest, ..base.clone() },
            ExperimentConfig { allow_custom: true, ..base.clone() },
            ExperimentConfig { parallel: true, ..base.clone() },
            ExperimentConfig { out: Some("x".into()), ..base.clone() },
            ExperimentConfig {
                data: DataSource::Generate { generator: GeneratorConfig { seed: 9, ..GeneratorConfig::default() } },
                ..base.clone()
            },
        ];
        for m in mutants {
            assert_ne!(m.hash().unwrap(), h, "{m:?}");
        }
    }
}
