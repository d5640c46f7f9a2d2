//! Experiment configuration files.
//!
//! TOML is the primary format; files ending in `.json` are read as JSON.
//! Unknown keys are rejected. A minimal traveling-wave config:
//!
//! ```toml
//! seed = 1
//!
//! [scenario]
//! n = 2
//! lambda = 0.5
//! K = 4.0
//! lower = [-0.875, -0.125]
//! upper = [0.875, 0.875]
//! h = 0.03125
//! t_start = -0.5
//! t_end = 0.0
//! store_dt = 0.015625
//! operator = { kind = "trace", K = 1.0 }
//! source = { kind = "constant", value = 0.0 }
//! initial = { kind = "traveling_wave", c = 0.5 }
//! top = { kind = "traveling_wave" }
//!
//! [analysis]
//! eta_sweep = [0.25, 0.125]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{Lemma31Options, TheoremOptions};
use crate::stefan::StefanScenario;

/// Everything an experiment needs; defaults are filled in on load and
/// written back by [`ScenarioConfig::to_toml`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Overrides the seeds of the analysis and lemma sections when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Overrides the grid spacing of the scenario and the lemma runs when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<f64>,
    /// Output directory used when the command line gives none.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<StefanScenario>,
    #[serde(default)]
    pub analysis: TheoremOptions,
    #[serde(default)]
    pub lemma31: Lemma31Options,
}

impl ScenarioConfig {
    pub fn new(scenario: StefanScenario) -> Self {
        Self {
            seed: None,
            resolution: None,
            out: None,
            scenario: Some(scenario),
            analysis: TheoremOptions::default(),
            lemma31: Lemma31Options::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads `path`, choosing the format by extension.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        let parsed = if path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"))
        {
            Self::from_json(&text)
        } else {
            Self::from_toml(&text)
        };
        parsed.map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Applies the top-level overrides and validates the scenario.
    pub fn resolved(&self) -> Result<Self> {
        let mut c = self.clone();
        if let Some(h) = c.resolution {
            if !(h > 0.0) {
                return Err(Error::Config(format!(
                    "resolution must be positive, got {h}"
                )));
            }
            if let Some(s) = c.scenario.as_mut() {
                s.h = h;
            }
            c.lemma31.h = h;
        }
        if let Some(seed) = c.seed {
            c.analysis.seed = seed;
            c.lemma31.seed = seed;
        }
        if let Some(s) = &c.scenario {
            s.validate()?;
        }
        Ok(c)
    }

    pub fn scenario(&self) -> Result<&StefanScenario> {
        self.scenario
            .as_ref()
            .ok_or_else(|| Error::Config("config has no [scenario] section".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc_example() -> &'static str {
        let doc = include_str!("config.rs");
        let start = doc.find("//! ```toml\n").unwrap() + 12;
        let end = start + doc[start..].find("//! ```").unwrap();
        Box::leak(
            doc[start..end]
                .lines()
                .map(|l| l.trim_start_matches("//!").trim_start())
                .collect::<Vec<_>>()
                .join("\n")
                .into_boxed_str(),
        )
    }

    #[test]
    fn documented_example_parses() {
        let c = ScenarioConfig::from_toml(doc_example())
            .unwrap()
            .resolved()
            .unwrap();
        let s = c.scenario().unwrap();
        assert_eq!(s, &{
            let mut w = StefanScenario::traveling_wave(2, 0.5, 0.5, 4.0, 1.0 / 32.0);
            w.store_dt = 1.0 / 64.0;
            w
        });
        assert_eq!(c.analysis.eta_sweep, vec![0.25, 0.125]);
        assert_eq!(c.analysis.seed, 1);
        assert_eq!(c.analysis.p0, TheoremOptions::default().p0);
    }

    #[test]
    fn echo_round_trips_with_defaults() {
        let c = ScenarioConfig::from_toml(doc_example()).unwrap();
        let echo = c.to_toml().unwrap();
        assert!(echo.contains("nondeg_radii"));
        assert_eq!(ScenarioConfig::from_toml(&echo).unwrap(), c);
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(ScenarioConfig::from_json(&json).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = format!("{}\nbogus = 3\n", doc_example());
        assert!(matches!(
            ScenarioConfig::from_toml(&bad),
            Err(Error::Config(_))
        ));
        let bad = doc_example().replace("[analysis]", "[analysis]\nfoo = 1");
        let e = ScenarioConfig::from_toml(&bad).unwrap_err().to_string();
        assert!(e.contains("foo"), "{e}");
    }

    #[test]
    fn missing_file_names_the_path() {
        let e = ScenarioConfig::load(Path::new("/nonexistent/tw.toml")).unwrap_err();
        assert!(e.to_string().contains("/nonexistent/tw.toml"));
    }

    #[test]
    fn resolution_override_applies() {
        let mut c = ScenarioConfig::from_toml(doc_example()).unwrap();
        c.resolution = Some(1.0 / 16.0);
        let r = c.resolved().unwrap();
        assert_eq!(r.scenario().unwrap().h, 1.0 / 16.0);
        assert_eq!(r.lemma31.h, 1.0 / 16.0);
        c.resolution = Some(-1.0);
        assert!(c.resolved().is_err());
    }
}
