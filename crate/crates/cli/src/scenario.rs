//! Loading and validating scenario files.

use std::path::Path;

use agora_core::harness::{ScenarioConfig, Violation};
use serde_json::Value;
use thiserror::Error;

pub const BUNDLED: [(&str, &str); 3] = [
    ("appendix-e", include_str!("../scenarios/appendix-e.json")),
    ("theorem1", include_str!("../scenarios/theorem1.json")),
    ("default-market", include_str!("../scenarios/default-market.json")),
];

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Unreadable { path: String, source: std::io::Error },
    #[error("{} problem(s) in scenario:\n{}", .0.len(), .0.iter().map(|v| format!("  {v}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Violation>),
}

/// Text of a bundled scenario by name.
pub fn bundled(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

/// Read `arg` as a file, or as a bundled scenario name if no such file exists.
pub fn read_source(arg: &Path) -> Result<String, ScenarioError> {
    match std::fs::read_to_string(arg) {
        Ok(s) => Ok(s),
        Err(e) => {
            let name = arg.to_string_lossy();
            let stem = name.trim_end_matches(".json");
            bundled(stem)
                .map(str::to_owned)
                .ok_or(ScenarioError::Unreadable { path: name.into_owned(), source: e })
        }
    }
}

const REQUIRED_TOP: [&str; 5] = ["schema_version", "pool", "n_tasks", "strategy", "seed"];
const REQUIRED_AGENT: [&str; 3] = ["id", "unit_cost", "expertise"];

fn violation(path: impl Into<String>, message: impl Into<String>) -> Violation {
    Violation { path: path.into(), message: message.into() }
}

/// Missing required fields, found without deserializing.
fn missing_fields(doc: &Value) -> Vec<Violation> {
    let Some(obj) = doc.as_object() else {
        return vec![violation("$", "scenario must be a JSON object")];
    };
    let mut out: Vec<Violation> = REQUIRED_TOP
        .iter()
        .filter(|f| !obj.contains_key(**f))
        .map(|f| violation(*f, "missing required field"))
        .collect();
    if let Some(pool) = obj.get("pool").and_then(Value::as_array) {
        for (i, agent) in pool.iter().enumerate() {
            for f in REQUIRED_AGENT {
                if agent.get(f).is_none() {
                    out.push(violation(format!("pool[{i}].{f}"), "missing required field"));
                }
            }
        }
    }
    if let Some(strategy) = obj.get("strategy") {
        if strategy.get("kind").is_none() {
            out.push(violation("strategy.kind", "missing required field"));
        }
    }
    out
}

/// Parse and fully check a scenario. Every missing field or invariant
/// violation is reported; a type error stops at the first offending field.
pub fn parse(text: &str) -> Result<ScenarioConfig, ScenarioError> {
    let doc: Value = serde_json::from_str(text)
        .map_err(|e| ScenarioError::Invalid(vec![violation("$", format!("malformed JSON: {e}"))]))?;
    let missing = missing_fields(&doc);
    if !missing.is_empty() {
        return Err(ScenarioError::Invalid(missing));
    }
    let config: ScenarioConfig = serde_path_to_error::deserialize(doc).map_err(|e| {
        let path = e.path().to_string();
        ScenarioError::Invalid(vec![violation(path, e.into_inner().to_string())])
    })?;
    let v = config.violations();
    if v.is_empty() {
        Ok(config)
    } else {
        Err(ScenarioError::Invalid(v))
    }
}

pub fn load(path: &Path) -> Result<ScenarioConfig, ScenarioError> {
    parse(&read_source(path)?)
}

/// Diagnostics for `path`; empty means valid.
pub fn validate(path: &Path) -> Result<Vec<Violation>, ScenarioError> {
    match load(path) {
        Ok(_) => Ok(Vec::new()),
        Err(ScenarioError::Invalid(v)) => Ok(v),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_scenarios_are_valid() {
        for (name, text) in BUNDLED {
            let c = parse(text).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(c.name, name);
        }
    }

    fn paths(text: &str) -> Vec<String> {
        match parse(text) {
            Err(ScenarioError::Invalid(v)) => v.into_iter().map(|v| v.path).collect(),
            other => panic!("expected diagnostics, got {other:?}"),
        }
    }

    #[test]
    fn missing_fields_are_all_listed() {
        let p = paths(r#"{"schema_version": 1, "pool": [{"id": "a"}], "strategy": {}}"#);
        for want in ["n_tasks", "seed", "pool[0].unit_cost", "pool[0].expertise", "strategy.kind"] {
            assert!(p.iter().any(|x| x == want), "missing {want} in {p:?}");
        }
    }

    #[test]
    fn invariant_violations_cite_the_rule() {
        let mut doc: Value = serde_json::from_str(bundled("default-market").unwrap()).unwrap();
        doc["weights"] = serde_json::json!({"w_perc": 0.5, "w_sem": 0.3, "w_inf": 0.3});
        doc["pool"][1]["unit_cost"] = serde_json::json!(-0.5);
        let Err(ScenarioError::Invalid(v)) = parse(&doc.to_string()) else { panic!("expected diagnostics") };
        assert!(v.iter().any(|x| x.path == "weights" && x.message.contains("DimensionWeights")));
        assert!(v.iter().any(|x| x.path == "pool[1].unit_cost" && x.message.contains("c > 0")));
    }

    #[test]
    fn type_errors_carry_a_path() {
        let mut doc: Value = serde_json::from_str(bundled("theorem1").unwrap()).unwrap();
        doc["pool"][0]["unit_cost"] = serde_json::json!("five");
        assert_eq!(paths(&doc.to_string()), vec!["pool[0].unit_cost".to_owned()]);
    }
}
