//! Run configuration: one TOML file, overridable from the command line.

use std::path::{Path, PathBuf};

use hrnn::baselines::{ModelKind, ModelSpec};
use hrnn::eval::horizon::DEFAULT_HORIZONS;
use hrnn::eval::report::Grouping;
use hrnn::hrnn::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const RESOLVED_NAME: &str = "run_config_resolved";

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    data: Option<PathBuf>,
    exog: Option<PathBuf>,
    out: Option<PathBuf>,
    train_frac: Option<f64>,
    seed: Option<u64>,
    horizons: Option<Vec<usize>>,
    grouping: Option<Vec<Grouping>>,
    alpha: Option<f64>,
    learning_rate: Option<f64>,
    epochs: Option<usize>,
    validation_fraction: Option<f64>,
    gradient_clip: Option<f64>,
    batch_size: Option<usize>,
    patience: Option<usize>,
    #[serde(default)]
    model: Vec<ModelSpec>,
    retrain: Option<ModelSpec>,
}

/// Every setting of a run after defaults and command-line overrides.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exog: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub train_frac: f64,
    pub seed: u64,
    pub horizons: Vec<usize>,
    pub grouping: Vec<Grouping>,
    pub alpha: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub validation_fraction: f64,
    pub gradient_clip: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub model: Vec<ModelSpec>,
    pub retrain: ModelSpec,
}

#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub data: Option<PathBuf>,
    pub exog: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub train_frac: Option<f64>,
}

pub fn default_models() -> Vec<ModelSpec> {
    vec![
        ModelSpec::new(ModelKind::Ar, 1),
        ModelSpec::new(ModelKind::Hrnn, 4),
        ModelSpec::new(ModelKind::IGru, 4),
        ModelSpec::new(ModelKind::SGru, 4),
    ]
}

fn anchored(base: Option<&Path>, p: PathBuf) -> PathBuf {
    match base {
        Some(dir) if p.is_relative() => dir.join(p),
        _ => p,
    }
}

impl RunConfig {
    /// Reads `path` if given; relative paths inside it are taken from its directory.
    pub fn load(path: Option<&Path>, over: Overrides) -> Result<Self, CliError> {
        let (raw, base) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::User(format!("cannot read config {}: {e}", p.display())))?;
                let raw: RawConfig =
                    toml::from_str(&text).map_err(|e| CliError::User(format!("{}: {e}", p.display())))?;
                (raw, p.parent().map(Path::to_path_buf))
            }
            None => (RawConfig::default(), None),
        };
        let defaults = TrainConfig::default();
        let cfg = RunConfig {
            data: over.data.or_else(|| raw.data.map(|d| anchored(base.as_deref(), d))),
            exog: over.exog.or_else(|| raw.exog.map(|d| anchored(base.as_deref(), d))),
            out: over.out.or_else(|| raw.out.map(|d| anchored(base.as_deref(), d))),
            train_frac: over.train_frac.or(raw.train_frac).unwrap_or(0.7),
            seed: over.seed.or(raw.seed).unwrap_or(defaults.seed),
            horizons: raw.horizons.unwrap_or_else(|| DEFAULT_HORIZONS.to_vec()),
            grouping: raw.grouping.unwrap_or_else(|| vec![Grouping::All, Grouping::Level, Grouping::Sector]),
            alpha: raw.alpha.unwrap_or(defaults.alpha),
            learning_rate: raw.learning_rate.unwrap_or(defaults.learning_rate),
            epochs: raw.epochs.unwrap_or(defaults.epochs),
            validation_fraction: raw.validation_fraction.unwrap_or(defaults.validation_fraction),
            gradient_clip: raw.gradient_clip.unwrap_or(defaults.gradient_clip),
            batch_size: raw.batch_size.unwrap_or(defaults.batch_size),
            patience: raw.patience.unwrap_or(defaults.patience),
            model: if raw.model.is_empty() { default_models() } else { raw.model },
            retrain: raw.retrain.unwrap_or_else(|| ModelSpec::new(ModelKind::Hrnn, 4)),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return Err(CliError::User(format!("train_frac must lie in (0, 1), got {}", self.train_frac)));
        }
        if self.horizons.is_empty() {
            return Err(CliError::User("horizons must not be empty".into()));
        }
        self.base_training().validate().map_err(|e| CliError::User(e.to_string()))?;
        let mut names = Vec::new();
        for spec in self.model.iter().chain([&self.retrain]) {
            spec.validate().map_err(|e| CliError::User(e.to_string()))?;
            spec.train_config(&self.base_training())
                .validate()
                .map_err(|e| CliError::User(format!("{}: {e}", spec.name())))?;
        }
        for spec in &self.model {
            let name = spec.name();
            if names.contains(&name) {
                return Err(CliError::User(format!("model {name} is listed twice")));
            }
            names.push(name);
        }
        Ok(())
    }

    pub fn base_training(&self) -> TrainConfig {
        TrainConfig {
            alpha: self.alpha,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            validation_fraction: self.validation_fraction,
            gradient_clip: self.gradient_clip,
            batch_size: self.batch_size,
            patience: self.patience,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }

    pub fn data(&self) -> Result<&Path, CliError> {
        self.data
            .as_deref()
            .ok_or_else(|| CliError::User("no data file: pass --data or set `data` in the config".into()))
    }

    pub fn out(&self) -> Result<&Path, CliError> {
        self.out
            .as_deref()
            .ok_or_else(|| CliError::User("no output directory: pass --out or set `out` in the config".into()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serialises")
    }

    /// Creates the output directory and writes the resolved config into it.
    pub fn prepare_out(&self) -> Result<Option<&Path>, CliError> {
        let Some(out) = self.out.as_deref() else {
            return Ok(None);
        };
        std::fs::create_dir_all(out).map_err(|e| CliError::Internal(format!("cannot create {}: {e}", out.display())))?;
        let path = out.join(RESOLVED_NAME);
        std::fs::write(&path, self.to_toml())
            .map_err(|e| CliError::Internal(format!("cannot write {}: {e}", path.display())))?;
        Ok(Some(out))
    }
}

/// File-name form of a model name: `KNN-GRU(4,k=5)` becomes `knn-gru_4_k_5`.
pub fn slug(name: &str) -> String {
    let mut out = String::new();
    for ch in name.chars() {
        if ch.is_ascii_alphanumeric() || ch == '-' || ch == '.' {
            out.push(ch.to_ascii_lowercase());
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    out.trim_matches('_').to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig, CliError> {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, text).unwrap();
        RunConfig::load(Some(&p), Overrides::default())
    }

    #[test]
    fn defaults_without_a_file() {
        let cfg = RunConfig::load(None, Overrides::default()).unwrap();
        assert_eq!(cfg.train_frac, 0.7);
        assert_eq!(cfg.horizons, DEFAULT_HORIZONS.to_vec());
        assert_eq!(cfg.model.len(), 4);
        assert_eq!(cfg.retrain.name(), "HRNN(4)");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(parse("trian_frac = 0.5\n"), Err(CliError::User(_))));
        assert!(matches!(parse("[[model]]\nkind = \"ar\"\nrhoo = 2\n"), Err(CliError::User(_))));
        assert!(matches!(parse("[[model]]\nkind = \"ar\"\nalpha = 2.0\n"), Err(CliError::User(_))));
    }

    #[test]
    fn flags_override_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, "data = \"panel.csv\"\nseed = 3\ntrain_frac = 0.6\n").unwrap();
        let cfg = RunConfig::load(Some(&p), Overrides::default()).unwrap();
        assert_eq!(cfg.data.as_deref(), Some(dir.path().join("panel.csv").as_path()));
        assert_eq!((cfg.seed, cfg.train_frac), (3, 0.6));
        let over = Overrides {
            seed: Some(9),
            train_frac: Some(0.8),
            data: Some("other.csv".into()),
            ..Overrides::default()
        };
        let cfg = RunConfig::load(Some(&p), over).unwrap();
        assert_eq!((cfg.seed, cfg.train_frac), (9, 0.8));
        assert_eq!(cfg.data.as_deref(), Some(Path::new("other.csv")));
    }

    #[test]
    fn resolved_config_reparses_to_itself() {
        let cfg = parse(
            "seed = 4\nhorizons = [0, 2]\ngrouping = [\"level\"]\n[[model]]\nkind = \"knn-gru\"\nk = 3\n[[model]]\nkind = \"hrnn\"\nalpha = 2.5\n",
        )
        .unwrap();
        let again = parse(&cfg.to_toml()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn bad_values_are_user_errors() {
        assert!(matches!(parse("train_frac = 1.5\n"), Err(CliError::User(_))));
        assert!(matches!(parse("learning_rate = 0.0\n"), Err(CliError::User(_))));
        assert!(matches!(parse("[[model]]\nkind = \"ar\"\n[[model]]\nkind = \"ar\"\n"), Err(CliError::User(_))));
        assert!(matches!(parse("[[model]]\nkind = \"gbt\"\n"), Err(CliError::User(_))));
    }

    #[test]
    fn slugs() {
        assert_eq!(slug("KNN-GRU(4,k=5)"), "knn-gru_4_k_5");
        assert_eq!(slug("AR(1)"), "ar_1");
        assert_eq!(slug("LSTAR(4,2,0.3)"), "lstar_4_2_0.3");
    }
}
