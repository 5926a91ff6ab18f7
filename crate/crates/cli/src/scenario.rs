//! Scenario files: a system configuration plus optional experiment
//! settings. A bare configuration object is accepted too.

use std::path::Path;

use cbf::finite::RegionMode;
use cbf::SystemConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    #[default]
    Region,
    Cdf,
    Convergence,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub description: Option<String>,
    pub config: SystemConfig,
    #[serde(default)]
    pub experiment: Experiment,
    #[serde(default)]
    pub nt: Option<Vec<usize>>,
    #[serde(default)]
    pub users: Option<Vec<usize>>,
    #[serde(default)]
    pub alpha: Option<Vec<f64>>,
    #[serde(default)]
    pub alpha_points: Option<usize>,
    #[serde(default)]
    pub draws: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub mode: Option<RegionMode>,
}

impl Scenario {
    fn bare(config: SystemConfig) -> Scenario {
        Scenario {
            description: None,
            config,
            experiment: Experiment::default(),
            nt: None,
            users: None,
            alpha: None,
            alpha_points: None,
            draws: None,
            seed: None,
            mode: None,
        }
    }
}

/// Reads a scenario, returning it with the raw file bytes (hashed into the
/// run manifest).
pub fn load(path: &Path) -> Result<(Scenario, Vec<u8>), CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::Usage(format!("{}: not valid JSON: {e}", path.display())))?;
    let scenario = if value.get("config").is_some() {
        serde_json::from_value(value)
    } else {
        serde_json::from_value(value).map(Scenario::bare)
    }
    .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    Ok((scenario, bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bare_and_wrapped_configs() {
        let dir = tempfile::tempdir().unwrap();
        let cfg =
            r#"{"L":1,"beta":[0.5],"eps":[[1.0]],"gamma":[1.0],"sigma2":1.0,"p_budget":10.0}"#;
        let bare = dir.path().join("bare.json");
        std::fs::write(&bare, cfg).unwrap();
        let wrapped = dir.path().join("wrapped.json");
        std::fs::write(
            &wrapped,
            format!(r#"{{"config":{cfg},"experiment":"cdf","draws":3}}"#),
        )
        .unwrap();
        let (a, _) = load(&bare).unwrap();
        let (b, _) = load(&wrapped).unwrap();
        assert_eq!(a.config, b.config);
        assert_eq!(b.experiment, Experiment::Cdf);
        assert_eq!(b.draws, Some(3));
        assert!(load(&dir.path().join("missing.json")).is_err());
    }
}
