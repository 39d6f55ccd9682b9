use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::FitConfig;
use crate::model::{Acceleration, Expression, Framework, ModelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Full,
    Reduced,
}

/// Everything a command needs. Read from an optional JSON file, then
/// overridden by command-line flags; the resolved value is written next to
/// every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub model: ModelKind,
    pub expression: Expression,
    pub framework: Framework,
    pub seed: u64,
    /// Retained replications per simulation condition.
    pub reps: usize,
    /// `all`, or condition indices such as `0,3,10-12`.
    pub conditions: String,
    pub out: PathBuf,
    /// Time grid for mean rates as `start:end:step`; defaults to the
    /// observed time range in steps of 0.1.
    pub grid: Option<String>,
    pub fit: FitConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            model: ModelKind::Full,
            expression: Expression::Midpoint,
            framework: Framework::Lcsm,
            seed: 20240101,
            reps: 100,
            conditions: "all".into(),
            out: PathBuf::from("jblcsm_out"),
            grid: None,
            fit: FitConfig::default(),
        }
    }
}

/// Flag values; `None` leaves the file or default value in place.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigOverrides {
    pub data: Option<PathBuf>,
    pub model: Option<ModelKind>,
    pub expression: Option<Expression>,
    pub framework: Option<Framework>,
    pub seed: Option<u64>,
    pub reps: Option<usize>,
    pub conditions: Option<String>,
    pub out: Option<PathBuf>,
    pub grid: Option<String>,
}

impl RunConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn resolve(file: Option<&Path>, flags: ConfigOverrides) -> Result<Self> {
        let mut c = match file {
            Some(p) => Self::from_json_file(p)?,
            None => Self::default(),
        };
        if let Some(v) = flags.data {
            c.data = Some(v);
        }
        if let Some(v) = flags.model {
            c.model = v;
        }
        if let Some(v) = flags.expression {
            c.expression = v;
        }
        if let Some(v) = flags.framework {
            c.framework = v;
        }
        if let Some(v) = flags.seed {
            c.seed = v;
        }
        if let Some(v) = flags.reps {
            c.reps = v;
        }
        if let Some(v) = flags.conditions {
            c.conditions = v;
        }
        if let Some(v) = flags.out {
            c.out = v;
        }
        if let Some(v) = flags.grid {
            c.grid = Some(v);
        }
        c.fit.seed = c.seed;
        c.spec().validate()?;
        Ok(c)
    }

    pub fn spec(&self) -> ModelSpec {
        ModelSpec::new(
            self.expression,
            match self.model {
                ModelKind::Full => Acceleration::Random,
                ModelKind::Reduced => Acceleration::Fixed,
            },
            self.framework,
        )
    }

    pub fn data_path(&self) -> Result<&Path> {
        self.data
            .as_deref()
            .ok_or_else(|| Error::Config("no data file given (use --data)".into()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_to(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("config.json");
        std::fs::write(&path, self.to_json()? + "\n")?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"model": "reduced", "seed": 5, "reps": 7, "fit": {"max_restarts": 2}}"#).unwrap();
        let c = RunConfig::resolve(
            Some(&p),
            ConfigOverrides {
                seed: Some(9),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!((c.model, c.seed, c.reps, c.fit.max_restarts, c.fit.seed), (ModelKind::Reduced, 9, 7, 2, 9));
        assert_eq!(c.fit.max_iterations, FitConfig::default().max_iterations);
        let back: RunConfig = serde_json::from_str(&c.to_json().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_specs() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"modle": "full"}"#).unwrap();
        assert!(RunConfig::resolve(Some(&p), ConfigOverrides::default()).is_err());
        let bad = ConfigOverrides {
            expression: Some(Expression::RightEndpoint),
            framework: Some(Framework::Lgc),
            ..Default::default()
        };
        assert!(RunConfig::resolve(None, bad).is_err());
    }
}
