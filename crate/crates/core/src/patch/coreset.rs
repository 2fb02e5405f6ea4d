//! Greedy k-center (farthest-point-first) coreset selection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{sq_dist_f32, RowMatrix};

const PARALLEL_MIN_POINTS: usize = 4096;

/// Index of the first center for a set of `n` points under `seed`.
pub fn first_center(n: usize, seed: u64) -> usize {
    assert!(n > 0, "first_center of an empty set");
    ChaCha8Rng::seed_from_u64(seed).random_range(0..n)
}

/// Number of rows kept for a coreset ratio: `ceil(ratio * total)`, at least one.
pub fn coreset_budget(ratio: f64, total: usize) -> Result<usize> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidRatio(ratio));
    }
    let exact = ratio * total as f64;
    // 0.1 * 12800 is 1280.0000000000002 in binary floating point
    let budget = (exact - 1e-9 * exact.max(1.0)).ceil().max(1.0) as usize;
    Ok(budget.min(total))
}

/// Selects `budget` rows by farthest-point-first traversal in squared
/// Euclidean distance. The first center comes from [`first_center`]; each
/// later pick maximizes the distance to the current selection, lowest index
/// winning ties. Returned in selection order.
pub fn coreset_select(points: &RowMatrix, budget: usize, seed: u64) -> Result<Vec<usize>> {
    let n = points.rows();
    if budget == 0 || budget > n {
        return Err(Error::BudgetOutOfRange { budget, points: n });
    }
    let mut selected = Vec::with_capacity(budget);
    let mut taken = vec![false; n];
    let mut min_dist = vec![f64::INFINITY; n];
    let mut next = first_center(n, seed);

    loop {
        selected.push(next);
        taken[next] = true;
        if selected.len() == budget {
            break;
        }
        let center = points.row(next);
        let update = |(i, d): (usize, &mut f64)| {
            let dist = sq_dist_f32(points.row(i), center);
            if dist < *d {
                *d = dist;
            }
        };
        if n >= PARALLEL_MIN_POINTS {
            min_dist.par_iter_mut().enumerate().for_each(update);
        } else {
            min_dist.iter_mut().enumerate().for_each(update);
        }
        let mut best: Option<(usize, f64)> = None;
        for (i, &d) in min_dist.iter().enumerate() {
            if taken[i] {
                continue;
            }
            if best.is_none_or(|(_, b)| d > b) {
                best = Some((i, d));
            }
        }
        next = best.expect("budget <= n leaves a candidate").0;
    }
    Ok(selected)
}

/// Largest distance from any point to its nearest selected center.
pub fn coverage_radius(points: &RowMatrix, selected: &[usize]) -> f64 {
    points
        .iter_rows()
        .map(|p| {
            selected
                .iter()
                .map(|&c| sq_dist_f32(p, points.row(c)))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
        .sqrt()
}
