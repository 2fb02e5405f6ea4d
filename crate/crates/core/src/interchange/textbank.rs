use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const NORM_TOLERANCE: f64 = 1e-5;

/// Prompt-averaged text embeddings keyed by label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextBank {
    pub dim: usize,
    pub embeddings: BTreeMap<String, Vec<f32>>,
}

impl TextBank {
    pub fn new(dim: usize, embeddings: BTreeMap<String, Vec<f32>>) -> Result<Self> {
        let bank = Self { dim, embeddings };
        bank.validate()?;
        Ok(bank)
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            embeddings: BTreeMap::new(),
        }
    }

    pub fn get(&self, label: &str) -> Result<&[f32]> {
        self.embeddings
            .get(label)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::LabelMissing(label.to_string()))
    }

    pub fn contains(&self, label: &str) -> bool {
        self.embeddings.contains_key(label)
    }

    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        for (label, v) in &self.embeddings {
            if v.len() != self.dim {
                errors.push(format!(
                    "label {label:?}: dimension {} differs from bank dimension {}",
                    v.len(),
                    self.dim
                ));
                continue;
            }
            let norm = v.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > NORM_TOLERANCE {
                errors.push(format!("label {label:?}: norm {norm} is not unit"));
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errors))
        }
    }
}

pub fn load_text_bank(source: impl AsRef<Path>) -> Result<TextBank> {
    let source = source.as_ref();
    let text = std::fs::read_to_string(source).map_err(|e| Error::io(source, e))?;
    let bank: TextBank = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: source.to_path_buf(),
        source: e,
    })?;
    bank.validate()?;
    Ok(bank)
}

pub fn write_text_bank(bank: &TextBank, destination: impl AsRef<Path>) -> Result<()> {
    let destination = destination.as_ref();
    let text = serde_json::to_string_pretty(bank).expect("text bank serializes");
    std::fs::write(destination, text).map_err(|e| Error::io(destination, e))
}
