//! Named lever settings and the canonical six-scenario registry.

use serde::{Deserialize, Serialize};

use crate::engine::RunConfig;
use crate::error::{Error, Result};
use crate::model::LeverVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub levers: LeverVector,
    #[serde(default)]
    pub run: RunConfig,
}

impl ScenarioSpec {
    pub fn new(name: impl Into<String>, levers: LeverVector, run: RunConfig) -> Self {
        ScenarioSpec {
            name: name.into(),
            levers,
            run,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::param("name", "scenario name is empty"));
        }
        self.levers.validate()?;
        self.run.validate()
    }
}

/// Canonical scenario names in table order.
pub const CANONICAL: [&str; 6] = [
    "baseline",
    "dev_expertise",
    "org_memory",
    "process",
    "ecosystem",
    "full_klrm",
];

pub fn canonical_levers(name: &str) -> Option<LeverVector> {
    let lv = |p, m, pr, r| LeverVector {
        lambda_p: p,
        lambda_m: m,
        lambda_pr: pr,
        lambda_r: r,
    };
    Some(match name {
        "baseline" => lv(0.0, 0.0, 0.0, 0.0),
        "dev_expertise" => lv(0.6, 0.0, 0.0, 0.0),
        "org_memory" => lv(0.0, 0.6, 0.0, 0.0),
        "process" => lv(0.0, 0.0, 0.5, 0.0),
        "ecosystem" => lv(0.0, 0.0, 0.0, 0.5),
        "full_klrm" => lv(0.6, 0.6, 0.5, 0.5),
        _ => return None,
    })
}

/// Human-readable row label used in printed tables.
pub fn display_name(name: &str) -> &str {
    match name {
        "baseline" => "Baseline",
        "dev_expertise" => "Dev. Expertise Only",
        "org_memory" => "Org. Memory Only",
        "process" => "Process Only",
        "ecosystem" => "Ecosystem Rel.",
        "full_klrm" => "Full KLRM",
        other => other,
    }
}

pub fn canonical(name: &str, run: RunConfig) -> Result<ScenarioSpec> {
    canonical_levers(name)
        .map(|levers| ScenarioSpec::new(name, levers, run))
        .ok_or_else(|| Error::UnknownScenario {
            name: name.to_string(),
            known: CANONICAL.join(", "),
        })
}

/// All six canonical scenarios sharing one run configuration.
pub fn canonical_set(run: RunConfig) -> Vec<ScenarioSpec> {
    CANONICAL
        .iter()
        .map(|name| canonical(name, run).expect("registry entry"))
        .collect()
}

/// Scenario definitions loaded from a config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub scenarios: Vec<ScenarioSpec>,
}

impl ScenarioFile {
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for (i, s) in self.scenarios.iter().enumerate() {
            s.validate().map_err(|e| match e {
                Error::InvalidParam { field, reason } => Error::param(format!("scenarios[{i}].{field}"), reason),
                other => other,
            })?;
            if !seen.insert(s.name.as_str()) {
                return Err(Error::param(format!("scenarios[{i}].name"), format!("duplicate name `{}`", s.name)));
            }
        }
        if self.scenarios.is_empty() {
            return Err(Error::param("scenarios", "no scenarios defined"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_values_are_exact() {
        let full = canonical_levers("full_klrm").unwrap();
        assert_eq!((full.lambda_p, full.lambda_m, full.lambda_pr, full.lambda_r), (0.6, 0.6, 0.5, 0.5));
        assert_eq!(canonical_levers("baseline").unwrap(), LeverVector::default());
        assert_eq!(canonical_levers("process").unwrap().lambda_pr, 0.5);
        assert_eq!(canonical_levers("ecosystem").unwrap().lambda_r, 0.5);
        assert_eq!(canonical_levers("org_memory").unwrap().lambda_m, 0.6);
        assert_eq!(canonical_levers("dev_expertise").unwrap().lambda_p, 0.6);
        assert_eq!(canonical_set(RunConfig::default()).len(), 6);
    }

    #[test]
    fn unknown_name_lists_all_known() {
        let msg = canonical("nope", RunConfig::default()).unwrap_err().to_string();
        for name in CANONICAL {
            assert!(msg.contains(name), "{msg}");
        }
    }

    #[test]
    fn duplicate_names_rejected() {
        let s = canonical("baseline", RunConfig::default()).unwrap();
        let file = ScenarioFile {
            scenarios: vec![s.clone(), s],
        };
        assert!(file.validate().is_err());
    }
}
