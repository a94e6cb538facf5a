use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sfm_core::dataset::{ColumnKind, ColumnSpec, FeatureSchema, SplitSpec};
use sfm_core::losses::LossConfig;
use sfm_core::metrics::DEFAULT_DRAWS;
use sfm_core::model::SfmConfig;
use sfm_core::synth::{CensoringScheme, Family, OracleSpec};
use sfm_core::train::TrainConfig;

use crate::error::CliError;

/// Environment variable that overrides `paths.out_dir`.
pub const OUT_DIR_ENV: &str = "SFM_OUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[default]
    Sfm,
    Lognormal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub data: PathBuf,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub n: usize,
    pub weights: Vec<f64>,
    pub family: Family,
    pub censoring: CensoringScheme,
    pub censoring_fraction: f64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            n: 4000,
            weights: vec![0.5, -0.4, 0.3, -0.2, 0.1],
            family: Family::Exponential,
            censoring: CensoringScheme::UniformAdministrative,
            censoring_fraction: 0.3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub draws: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { draws: DEFAULT_DRAWS }
    }
}

/// Everything one invocation needs. The single `seed` drives simulation,
/// splitting, initialisation, training and evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub model: ModelKind,
    pub paths: Paths,
    /// Inferred from the CSV header when absent: every column other than
    /// `time` and `event` is continuous.
    #[serde(default)]
    pub schema: Option<FeatureSchema>,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub sfm: SfmConfig,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub model: Option<ModelKind>,
    pub out: Option<PathBuf>,
    pub env_out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path, over: &Overrides) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.message())))?;
        // Relative paths are resolved against the config file's directory.
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.paths.data = base.join(&cfg.paths.data);
        cfg.paths.out_dir = base.join(&cfg.paths.out_dir);
        if let Some(c) = &cfg.paths.checkpoint {
            cfg.paths.checkpoint = Some(base.join(c));
        }
        cfg.apply(over);
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, over: &Overrides) {
        if let Some(s) = over.seed {
            self.seed = s;
        }
        if let Some(m) = over.model {
            self.model = m;
        }
        if let Some(o) = over.out.as_ref().or(over.env_out.as_ref()) {
            self.paths.out_dir = o.clone();
        }
        self.split.seed = self.seed;
        self.train.seed = self.seed;
    }

    fn validate(&self) -> Result<(), CliError> {
        let bad = |e: &dyn std::fmt::Display| CliError::Config(e.to_string());
        self.sfm.validate().map_err(|e| bad(&e))?;
        self.loss.validate().map_err(|e| bad(&e))?;
        self.train.validate().map_err(|e| bad(&e))?;
        if let Some(s) = &self.schema {
            s.validate().map_err(|e| bad(&e))?;
        }
        if self.eval.draws == 0 {
            return Err(CliError::Config("eval.draws must be positive".into()));
        }
        Ok(())
    }

    pub fn oracle_spec(&self) -> OracleSpec {
        let s = &self.simulate;
        OracleSpec {
            family: s.family,
            censoring: s.censoring,
            ..OracleSpec::exponential(s.weights.clone(), s.censoring_fraction, self.seed)
        }
    }

    /// Where `train` writes and other commands read the model.
    pub fn checkpoint_path(&self) -> PathBuf {
        self.paths
            .checkpoint
            .clone()
            .unwrap_or_else(|| self.paths.out_dir.join("checkpoint.json"))
    }

    pub fn schema(&self) -> Result<FeatureSchema, CliError> {
        if let Some(s) = &self.schema {
            return Ok(s.clone());
        }
        let mut reader = csv::Reader::from_path(&self.paths.data).map_err(|e| {
            CliError::Config(format!("cannot read {}: {e}", self.paths.data.display()))
        })?;
        let header = reader.headers().map_err(|e| CliError::Data(e.to_string()))?;
        Ok(FeatureSchema {
            columns: header
                .iter()
                .filter(|h| *h != "time" && *h != "event")
                .map(|h| ColumnSpec {
                    name: h.to_string(),
                    kind: ColumnKind::Continuous,
                })
                .collect(),
            time_column: "time".into(),
            event_column: "event".into(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_uses_defaults() {
        let cfg: RunConfig = toml::from_str("[paths]\ndata = \"d.csv\"\n").unwrap();
        assert_eq!(cfg.model, ModelKind::Sfm);
        assert_eq!(cfg.sfm, SfmConfig::default());
        assert_eq!(cfg.train.batch_size, 350);
        assert_eq!(cfg.paths.out_dir, PathBuf::from("out"));
    }

    #[test]
    fn unknown_key_is_rejected() {
        assert!(toml::from_str::<RunConfig>("[paths]\ndata = \"d\"\n[train]\nlr = 1.0\n").is_err());
    }

    #[test]
    fn flag_beats_environment() {
        let mut cfg: RunConfig = toml::from_str("seed = 1\n[paths]\ndata = \"d\"\n").unwrap();
        cfg.apply(&Overrides {
            seed: Some(9),
            out: Some("a".into()),
            env_out: Some("b".into()),
            ..Overrides::default()
        });
        assert_eq!(cfg.paths.out_dir, PathBuf::from("a"));
        assert_eq!((cfg.split.seed, cfg.train.seed), (9, 9));
    }

    #[test]
    fn nested_sections_parse() {
        let text = r#"
            model = "lognormal"
            [paths]
            data = "d.csv"
            [simulate]
            n = 100
            family = { kind = "weibull", shape = 2.0 }
            censoring = "exponential-independent"
            [train]
            tau_schedule = { kind = "geometric", rate = 0.99, floor = 0.1 }
        "#;
        let cfg: RunConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.model, ModelKind::Lognormal);
        assert_eq!(cfg.simulate.family, Family::Weibull { shape: 2.0 });
        assert_eq!(cfg.simulate.censoring, CensoringScheme::ExponentialIndependent);
    }
}
