//! Interest-granularity detector.
//!
//! Masked patches of each interest instance are average-pooled into one unit
//! vector per stage. A query's interest set is compared with every reference
//! set by minimum-weight bipartite matching on cosine cost; the query scores
//! its distance to the nearest reference.

use std::path::Path;

use crate::composition::{SceneFacts, SceneInstance};
use crate::error::{Error, Result};
use crate::hungarian::{optimal_cost, CostMatrix};
use crate::interchange::{read_tensor, Tensor};
use crate::linalg::{cosine, normalize};
use crate::patch::FeatureStack;
use crate::NUM_STAGES;

/// Score assigned when the query has no interests but references do.
pub const MAX_INTEREST_COST: f64 = 2.0;

/// Binary mask on the feature grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMask {
    pub height: usize,
    pub width: usize,
    pub cells: Vec<bool>,
}

impl GridMask {
    pub fn from_tensor(tensor: &Tensor) -> Result<Self> {
        let &[height, width] = tensor.dims() else {
            return Err(Error::DimensionMismatch {
                context: "mask tensor rank".into(),
                expected: 2,
                actual: tensor.ndim(),
            });
        };
        Ok(Self {
            height,
            width,
            cells: tensor.data().iter().map(|&v| v > 0.5).collect(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_tensor(&read_tensor(path)?)
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.height, self.width],
            self.cells
                .iter()
                .map(|&c| if c { 1.0 } else { 0.0 })
                .collect(),
        )
        .expect("mask shape is valid")
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn area_fraction(&self) -> f64 {
        self.count() as f64 / self.cells.len() as f64
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.cells
            .iter()
            .enumerate()
            .filter_map(|(i, &c)| c.then_some(i))
    }

    /// Mean (row, col) of set cells, cell centers at +0.5.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let n = self.count();
        if n == 0 {
            return None;
        }
        let (mut r, mut c) = (0.0, 0.0);
        for i in self.indices() {
            r += (i / self.width) as f64 + 0.5;
            c += (i % self.width) as f64 + 0.5;
        }
        Some((r / n as f64, c / n as f64))
    }
}

/// An interest instance with its mask loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedInstance {
    pub class_name: String,
    pub mask: GridMask,
    pub area_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterestEntry {
    pub class_name: String,
    /// One unit vector per stage.
    pub stages: Vec<Vec<f64>>,
    pub area_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct InterestSet {
    pub entries: Vec<InterestEntry>,
}

impl InterestSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Mean of the masked patch vectors per stage, renormalized. Entries follow
/// instance order.
pub fn pool_interests(stack: &FeatureStack, instances: &[MaskedInstance]) -> Result<InterestSet> {
    let cells = stack.height() * stack.width();
    let mut entries = Vec::with_capacity(instances.len());
    for (idx, inst) in instances.iter().enumerate() {
        if inst.mask.height != stack.height() || inst.mask.width != stack.width() {
            return Err(Error::DimensionMismatch {
                context: format!("mask of instance {idx} ({})", inst.class_name),
                expected: cells,
                actual: inst.mask.height * inst.mask.width,
            });
        }
        let members: Vec<usize> = inst.mask.indices().collect();
        if members.is_empty() {
            return Err(Error::DegenerateMask(format!(
                "{idx} ({})",
                inst.class_name
            )));
        }
        let mut stages = Vec::with_capacity(NUM_STAGES);
        for grid in stack.stages() {
            let rows = grid.features();
            let mut acc = vec![0.0f64; grid.dim()];
            for &i in &members {
                for (a, &x) in acc.iter_mut().zip(rows.row(i)) {
                    *a += f64::from(x);
                }
            }
            acc.iter_mut().for_each(|a| *a /= members.len() as f64);
            if !normalize(&mut acc) {
                return Err(Error::ZeroVector("pooled interest feature"));
            }
            stages.push(acc);
        }
        entries.push(InterestEntry {
            class_name: inst.class_name.clone(),
            stages,
            area_fraction: inst.area_fraction,
        });
    }
    Ok(InterestSet { entries })
}

/// Per-image facts for the composition detector: final-stage pooled feature,
/// centroid and area of every instance.
pub fn scene_facts(set: &InterestSet, instances: &[MaskedInstance]) -> Result<SceneFacts> {
    let (h, w) = instances
        .first()
        .map_or((0, 0), |i| (i.mask.height, i.mask.width));
    let mut facts = SceneFacts::new(h, w);
    for (entry, inst) in set.entries.iter().zip(instances) {
        let centroid = inst
            .mask
            .centroid()
            .ok_or_else(|| Error::DegenerateMask(inst.class_name.clone()))?;
        facts.push(
            entry.class_name.clone(),
            SceneInstance {
                feature: entry.stages.last().expect("four stages").clone(),
                centroid,
                area_fraction: inst.area_fraction,
            },
        );
    }
    Ok(facts)
}

/// One minus cosine similarity, clamped to `[0, 2]`.
pub fn matching_cost(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            context: "matching cost".into(),
            expected: p.len(),
            actual: q.len(),
        });
    }
    let c = cosine(p, q).ok_or(Error::ZeroVector("matching cost operand"))?;
    Ok((1.0 - c).clamp(0.0, 2.0))
}

/// Matching cost averaged over stages.
pub fn entry_cost(p: &InterestEntry, q: &InterestEntry) -> Result<f64> {
    if p.stages.len() != q.stages.len() {
        return Err(Error::DimensionMismatch {
            context: "interest entry stages".into(),
            expected: p.stages.len(),
            actual: q.stages.len(),
        });
    }
    let mut sum = 0.0;
    for (a, b) in p.stages.iter().zip(&q.stages) {
        sum += matching_cost(a, b)?;
    }
    Ok(sum / p.stages.len() as f64)
}

pub fn cost_matrix(p: &InterestSet, q: &InterestSet) -> Result<CostMatrix> {
    let mut data = Vec::with_capacity(p.len() * q.len());
    for a in &p.entries {
        for b in &q.entries {
            data.push(entry_cost(a, b)?);
        }
    }
    CostMatrix::new(p.len(), q.len(), data)
}

/// Mean matched cost of the optimal matching between two sets. Two empty
/// sets cost 0; exactly one empty set costs [`MAX_INTEREST_COST`].
pub fn set_cost(p: &InterestSet, q: &InterestSet) -> Result<f64> {
    match (p.is_empty(), q.is_empty()) {
        (true, true) => Ok(0.0),
        (true, false) | (false, true) => Ok(MAX_INTEREST_COST),
        (false, false) => {
            let cost = cost_matrix(p, q)?;
            let n = p.len().min(q.len()) as f64;
            Ok((optimal_cost(&cost) / n).clamp(0.0, MAX_INTEREST_COST))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterestScore {
    pub value: f64,
    /// Index of the reference achieving the minimum.
    pub nearest_reference: usize,
    /// The query had no interests at all.
    pub no_interests: bool,
}

/// Cost to the nearest reference set.
pub fn interest_score(query: &InterestSet, references: &[InterestSet]) -> Result<InterestScore> {
    if references.is_empty() {
        return Err(Error::EmptyInput("interest references"));
    }
    let mut best = (f64::INFINITY, 0usize);
    for (k, reference) in references.iter().enumerate() {
        let c = set_cost(query, reference)?;
        if c < best.0 {
            best = (c, k);
        }
    }
    Ok(InterestScore {
        value: best.0,
        nearest_reference: best.1,
        no_interests: query.is_empty(),
    })
}
