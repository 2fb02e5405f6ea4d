use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::coreset::{coreset_budget, coreset_select};
use super::{FeatureStack, NORM_TOLERANCE};
use crate::error::{Error, Result};
use crate::interchange::{read_tensor, write_tensor, Tensor};
use crate::linalg::RowMatrix;
use crate::NUM_STAGES;

pub const SIDECAR_FILE: &str = "bank.json";

/// Bank rows of one stage with their precomputed norms.
#[derive(Debug, Clone, PartialEq)]
pub struct BankStage {
    features: RowMatrix,
    norms: Vec<f64>,
}

impl BankStage {
    pub fn new(features: RowMatrix) -> Self {
        let norms = features.row_norms();
        Self { features, norms }
    }

    pub fn features(&self) -> &RowMatrix {
        &self.features
    }

    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoresetInfo {
    pub ratio: f64,
    pub seed: u64,
    /// Per stage, the selected rows of the concatenated bank in selection
    /// order. Empty when no reduction was applied.
    pub selected_indices: Vec<Vec<usize>>,
}

/// Per-stage anomaly-free patch features. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    stages: Vec<BankStage>,
    pub source_image_ids: Vec<String>,
    pub coreset: CoresetInfo,
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    source_image_ids: Vec<String>,
    rows: Vec<usize>,
    dims: Vec<usize>,
    coreset: CoresetInfo,
}

impl MemoryBank {
    pub fn from_stages(stages: Vec<BankStage>) -> Result<Self> {
        if stages.len() != NUM_STAGES {
            return Err(Error::DimensionMismatch {
                context: "memory bank stages".into(),
                expected: NUM_STAGES,
                actual: stages.len(),
            });
        }
        for (k, s) in stages.iter().enumerate() {
            if s.is_empty() {
                return Err(Error::EmptyInput("memory bank stage"));
            }
            if let Some((i, &n)) = s
                .norms
                .iter()
                .enumerate()
                .find(|(_, n)| (*n - 1.0).abs() > NORM_TOLERANCE)
            {
                return Err(Error::NotNormalized {
                    context: format!("bank stage {} row {i}", k + 1),
                    norm: n,
                });
            }
        }
        Ok(Self {
            stages,
            source_image_ids: Vec::new(),
            coreset: CoresetInfo {
                ratio: 1.0,
                seed: 0,
                selected_indices: Vec::new(),
            },
        })
    }

    pub fn with_provenance(mut self, ids: Vec<String>) -> Self {
        self.source_image_ids = ids;
        self
    }

    pub fn stages(&self) -> &[BankStage] {
        &self.stages
    }

    pub fn rows_per_stage(&self) -> Vec<usize> {
        self.stages.iter().map(BankStage::len).collect()
    }
}

/// Concatenates the stage-k patches of every image, then reduces each stage
/// to `ceil(ratio * total)` rows by greedy coreset selection when `ratio < 1`.
pub fn build_bank(features: &[FeatureStack], coreset_ratio: f64, seed: u64) -> Result<MemoryBank> {
    let first = features.first().ok_or(Error::EmptyInput("bank features"))?;
    coreset_budget(coreset_ratio, 1)?;
    let dims = first.dims();
    let cells = first.height() * first.width();
    for stack in features {
        if stack.height() * stack.width() != cells {
            return Err(Error::DimensionMismatch {
                context: "bank image grid cells".into(),
                expected: cells,
                actual: stack.height() * stack.width(),
            });
        }
        for (k, (&d, &e)) in dims.iter().zip(&stack.dims()).enumerate() {
            if d != e {
                return Err(Error::DimensionMismatch {
                    context: format!("bank stage {} feature dim", k + 1),
                    expected: d,
                    actual: e,
                });
            }
        }
    }

    let mut stages = Vec::with_capacity(NUM_STAGES);
    let mut selected_indices = Vec::new();
    for (k, &d) in dims.iter().enumerate() {
        let mut data = Vec::with_capacity(features.len() * cells * d);
        for stack in features {
            data.extend_from_slice(stack.stage(k).features().data());
        }
        let all = RowMatrix::new(features.len() * cells, d, data);
        let rows = if coreset_ratio < 1.0 {
            let budget = coreset_budget(coreset_ratio, all.rows())?;
            let picked = coreset_select(&all, budget, seed)?;
            let reduced = all.select(&picked);
            selected_indices.push(picked);
            reduced
        } else {
            all
        };
        stages.push(BankStage::new(rows));
    }
    let mut bank = MemoryBank::from_stages(stages)?;
    bank.coreset = CoresetInfo {
        ratio: coreset_ratio,
        seed,
        selected_indices,
    };
    Ok(bank)
}

/// Writes `stage_1.lsad` .. `stage_4.lsad` and a `bank.json` sidecar.
pub fn save_bank(bank: &MemoryBank, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (k, stage) in bank.stages.iter().enumerate() {
        let m = stage.features();
        let t = Tensor::new(vec![m.rows(), m.cols()], m.data().to_vec())
            .expect("bank stage shape is valid");
        write_tensor(&t, dir.join(format!("stage_{}.lsad", k + 1)))?;
    }
    let sidecar = Sidecar {
        source_image_ids: bank.source_image_ids.clone(),
        rows: bank.rows_per_stage(),
        dims: bank.stages.iter().map(|s| s.features.cols()).collect(),
        coreset: bank.coreset.clone(),
    };
    let path = dir.join(SIDECAR_FILE);
    fs::write(
        &path,
        serde_json::to_string_pretty(&sidecar).expect("sidecar serializes"),
    )
    .map_err(|e| Error::io(&path, e))
}

pub fn load_bank(dir: impl AsRef<Path>) -> Result<MemoryBank> {
    let dir = dir.as_ref();
    let path = dir.join(SIDECAR_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let sidecar: Sidecar = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.clone(),
        source: e,
    })?;
    let mut stages = Vec::with_capacity(NUM_STAGES);
    for k in 0..NUM_STAGES {
        let t = read_tensor(dir.join(format!("stage_{}.lsad", k + 1)))?;
        let &[n, d] = t.dims() else {
            return Err(Error::DimensionMismatch {
                context: format!("bank stage {} tensor rank", k + 1),
                expected: 2,
                actual: t.ndim(),
            });
        };
        if sidecar.rows.get(k) != Some(&n) || sidecar.dims.get(k) != Some(&d) {
            return Err(Error::Validation(vec![format!(
                "bank stage {} shape [{n}, {d}] disagrees with {}",
                k + 1,
                path.display()
            )]));
        }
        let (_, data) = t.into_parts();
        stages.push(BankStage::new(RowMatrix::new(n, d, data)));
    }
    let mut bank = MemoryBank::from_stages(stages)?.with_provenance(sidecar.source_image_ids);
    bank.coreset = sidecar.coreset;
    Ok(bank)
}
