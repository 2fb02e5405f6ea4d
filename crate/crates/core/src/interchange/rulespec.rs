use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::composition::{Rule, RuleKind};
use crate::error::{Error, Result};
use crate::interchange::TextBank;

/// Interests and compositional rules configured for one category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSpec {
    pub category: String,
    pub interests: Vec<String>,
    #[serde(default)]
    pub rules: Vec<Rule>,
}

impl RuleSpec {
    pub fn validate(&self) -> Result<()> {
        for rule in &self.rules {
            rule.validate(&self.interests)?;
        }
        Ok(())
    }

    pub fn check_against(&self, bank: &TextBank) -> Result<()> {
        self.rules.iter().try_for_each(|r| r.check_against(bank))
    }
}

/// Parses a rule file, filling in `"<kind>#<index>"` for rules without an id.
pub fn parse_rulespec(text: &str) -> Result<RuleSpec, RuleSpecParseError> {
    let mut value: serde_json::Value =
        serde_json::from_str(text).map_err(RuleSpecParseError::Json)?;
    if let Some(rules) = value.get_mut("rules").and_then(|r| r.as_array_mut()) {
        for (index, rule) in rules.iter_mut().enumerate() {
            let kind = rule.get("kind").and_then(|k| k.as_str()).unwrap_or("");
            if !RuleKind::NAMES.contains(&kind) {
                return Err(RuleSpecParseError::UnknownKind {
                    index,
                    kind: kind.to_string(),
                });
            }
            let kind = kind.to_string();
            if let Some(obj) = rule.as_object_mut() {
                let missing_id = obj
                    .get("id")
                    .and_then(|v| v.as_str())
                    .is_none_or(str::is_empty);
                if missing_id {
                    obj.insert("id".into(), format!("{kind}#{index}").into());
                }
            }
        }
    }
    serde_json::from_value(value).map_err(RuleSpecParseError::Json)
}

#[derive(Debug)]
pub enum RuleSpecParseError {
    Json(serde_json::Error),
    UnknownKind { index: usize, kind: String },
}

pub fn load_rulespec(source: impl AsRef<Path>) -> Result<RuleSpec> {
    let source = source.as_ref();
    let text = std::fs::read_to_string(source).map_err(|e| Error::io(source, e))?;
    let spec = parse_rulespec(&text).map_err(|e| match e {
        RuleSpecParseError::Json(e) => Error::Json {
            path: source.to_path_buf(),
            source: e,
        },
        RuleSpecParseError::UnknownKind { index, kind } => Error::UnknownRuleKind { index, kind },
    })?;
    spec.validate()?;
    Ok(spec)
}

pub fn write_rulespec(spec: &RuleSpec, destination: impl AsRef<Path>) -> Result<()> {
    let destination = destination.as_ref();
    let text = serde_json::to_string_pretty(spec).expect("rule spec serializes");
    std::fs::write(destination, text).map_err(|e| Error::io(destination, e))
}
