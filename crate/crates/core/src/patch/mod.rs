//! Patch-granularity detector: nearest-neighbor cosine distance of every
//! query patch to a memory bank of anomaly-free patches, per stage, with the
//! four stage maps averaged into one anomaly map. The image score is the
//! map's maximum.

mod bank;
mod coreset;

use std::path::Path;

pub use bank::{build_bank, load_bank, save_bank, BankStage, CoresetInfo, MemoryBank};
pub use coreset::{coreset_budget, coreset_select, coverage_radius, first_center};

use crate::error::{Error, Result};
use crate::interchange::{read_tensor, Tensor};
use crate::linalg::{dot_f32, norm_f32, RowMatrix};
use crate::NUM_STAGES;

pub const NORM_TOLERANCE: f64 = 1e-4;

/// One stage of hierarchical patch features: an `height x width` grid of
/// `dim`-dimensional unit vectors stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct StageGrid {
    height: usize,
    width: usize,
    features: RowMatrix,
}

impl StageGrid {
    pub fn new(height: usize, width: usize, features: RowMatrix) -> Result<Self> {
        if features.rows() != height * width {
            return Err(Error::DimensionMismatch {
                context: "stage grid cells".into(),
                expected: height * width,
                actual: features.rows(),
            });
        }
        Ok(Self {
            height,
            width,
            features,
        })
    }

    pub fn from_tensor(tensor: &Tensor) -> Result<Self> {
        let &[h, w, d] = tensor.dims() else {
            return Err(Error::DimensionMismatch {
                context: "stage tensor rank".into(),
                expected: 3,
                actual: tensor.ndim(),
            });
        };
        Self::new(h, w, RowMatrix::new(h * w, d, tensor.data().to_vec()))
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.height, self.width, self.dim()],
            self.features.data().to_vec(),
        )
        .expect("stage grid shape is valid")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &RowMatrix {
        &self.features
    }

    pub fn patch(&self, row: usize, col: usize) -> &[f32] {
        self.features.row(row * self.width + col)
    }
}

/// Four stage grids of one image sharing the same spatial size.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    stages: Vec<StageGrid>,
}

impl FeatureStack {
    pub fn new(stages: Vec<StageGrid>) -> Result<Self> {
        if stages.len() != NUM_STAGES {
            return Err(Error::DimensionMismatch {
                context: "feature stack stages".into(),
                expected: NUM_STAGES,
                actual: stages.len(),
            });
        }
        let (h, w) = (stages[0].height, stages[0].width);
        for (k, s) in stages.iter().enumerate() {
            if s.height != h || s.width != w {
                return Err(Error::DimensionMismatch {
                    context: format!("stage {} grid cells", k + 1),
                    expected: h * w,
                    actual: s.height * s.width,
                });
            }
            if s.dim() == 0 {
                return Err(Error::ZeroVector("stage features"));
            }
            for (i, row) in s.features.iter_rows().enumerate() {
                let n = norm_f32(row);
                if (n - 1.0).abs() > NORM_TOLERANCE {
                    return Err(Error::NotNormalized {
                        context: format!("stage {} patch {i}", k + 1),
                        norm: n,
                    });
                }
            }
        }
        Ok(Self { stages })
    }

    pub fn load<P: AsRef<Path>>(paths: &[P]) -> Result<Self> {
        let stages = paths
            .iter()
            .map(|p| StageGrid::from_tensor(&read_tensor(p)?))
            .collect::<Result<Vec<_>>>()?;
        Self::new(stages)
    }

    pub fn stages(&self) -> &[StageGrid] {
        &self.stages
    }

    pub fn stage(&self, k: usize) -> &StageGrid {
        &self.stages[k]
    }

    pub fn height(&self) -> usize {
        self.stages[0].height
    }

    pub fn width(&self) -> usize {
        self.stages[0].width
    }

    pub fn dims(&self) -> Vec<usize> {
        self.stages.iter().map(StageGrid::dim).collect()
    }
}

/// Grid of per-patch anomaly scores in `[0, 2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl AnomalyMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Self {
        assert_eq!(height * width, data.len(), "anomaly map shape mismatch");
        Self {
            height,
            width,
            data,
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Cosine distance of each query row to its nearest bank row, clamped to `[0, 2]`.
pub fn nearest_distances(query: &RowMatrix, bank: &BankStage) -> Result<Vec<f64>> {
    if query.cols() != bank.features().cols() {
        return Err(Error::DimensionMismatch {
            context: "query vs bank feature dim".into(),
            expected: bank.features().cols(),
            actual: query.cols(),
        });
    }
    let rows = bank.features();
    let norms = bank.norms();
    Ok(query
        .iter_rows()
        .map(|u| {
            let nu = norm_f32(u);
            let mut best = f64::INFINITY;
            for (j, v) in rows.iter_rows().enumerate() {
                let d = 1.0 - dot_f32(u, v) / (nu * norms[j]);
                if d < best {
                    best = d;
                }
            }
            best.clamp(0.0, 2.0)
        })
        .collect())
}

/// Patch score and stage-averaged anomaly map of one query image.
pub fn patch_score(query: &FeatureStack, bank: &MemoryBank) -> Result<(f64, AnomalyMap)> {
    let (h, w) = (query.height(), query.width());
    let mut acc = vec![0.0f64; h * w];
    for (k, (grid, stage)) in query.stages().iter().zip(bank.stages()).enumerate() {
        let dists = nearest_distances(grid.features(), stage).map_err(|e| match e {
            Error::DimensionMismatch {
                expected, actual, ..
            } => Error::DimensionMismatch {
                context: format!("stage {} query vs bank feature dim", k + 1),
                expected,
                actual,
            },
            other => other,
        })?;
        acc.iter_mut().zip(&dists).for_each(|(a, d)| *a += d);
    }
    let data: Vec<f64> = acc.into_iter().map(|s| s / NUM_STAGES as f64).collect();
    let map = AnomalyMap::new(h, w, data);
    Ok((map.max(), map))
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Bilinear resize to `side x side` with half-pixel centers (no corner alignment).
pub fn upsample_map(map: &AnomalyMap, side: usize) -> Result<AnomalyMap> {
    if side < map.height || side < map.width {
        return Err(Error::SideTooSmall {
            side,
            height: map.height,
            width: map.width,
        });
    }
    let axis = |src_len: usize| -> Vec<(usize, usize, f64)> {
        let scale = src_len as f64 / side as f64;
        (0..side)
            .map(|dst| {
                let src = ((dst as f64 + 0.5) * scale - 0.5).max(0.0);
                let i0 = (src.floor() as usize).min(src_len - 1);
                let i1 = (i0 + 1).min(src_len - 1);
                (i0, i1, src - i0 as f64)
            })
            .collect()
    };
    let ys = axis(map.height);
    let xs = axis(map.width);
    let mut data = Vec::with_capacity(side * side);
    for &(y0, y1, ly) in &ys {
        for &(x0, x1, lx) in &xs {
            let top = lerp(map.get(y0, x0), map.get(y0, x1), lx);
            let bottom = lerp(map.get(y1, x0), map.get(y1, x1), lx);
            data.push(lerp(top, bottom, ly));
        }
    }
    Ok(AnomalyMap::new(side, side, data))
}
