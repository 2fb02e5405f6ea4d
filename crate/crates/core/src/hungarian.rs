//! Minimum-cost rectangular assignment (Kuhn-Munkres with potentials).
//!
//! For an `i x j` cost matrix, all `min(i, j)` elements of the smaller side
//! are matched to distinct elements of the larger side at minimum total
//! cost. Among optimal assignments the lexicographically smallest one is
//! returned: walking the smaller side in index order, each element takes the
//! lowest-indexed partner that still admits an optimal completion.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidCost("empty matrix".into()));
        }
        if data.len() != rows * cols {
            return Err(Error::InvalidCost(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some((k, v)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(Error::InvalidCost(format!(
                "entry ({}, {}) = {v} is not a finite non-negative cost",
                k / cols,
                k % cols
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidCost("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    fn oriented(&self) -> Dense {
        if self.rows <= self.cols {
            Dense {
                n: self.rows,
                m: self.cols,
                data: self.data.clone(),
            }
        } else {
            let mut data = Vec::with_capacity(self.data.len());
            for c in 0..self.cols {
                for r in 0..self.rows {
                    data.push(self.get(r, c));
                }
            }
            Dense {
                n: self.cols,
                m: self.rows,
                data,
            }
        }
    }
}

/// Matched pairs of an optimal assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `(row, col)` pairs sorted by row.
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: f64,
    /// Total divided by the number of matched pairs.
    pub mean_cost: f64,
}

/// Row-major matrix with `n <= m`.
struct Dense {
    n: usize,
    m: usize,
    data: Vec<f64>,
}

impl Dense {
    #[inline]
    fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.m + c]
    }

    fn submatrix(&self, rows: &[usize], cols: &[usize]) -> Dense {
        let mut data = Vec::with_capacity(rows.len() * cols.len());
        for &r in rows {
            for &c in cols {
                data.push(self.at(r, c));
            }
        }
        Dense {
            n: rows.len(),
            m: cols.len(),
            data,
        }
    }

    /// Column assigned to each row in an optimal assignment.
    fn solve(&self) -> Vec<usize> {
        let (n, m) = (self.n, self.m);
        debug_assert!(n <= m);
        // 1-based potentials; column 0 is a virtual source.
        let mut u = vec![0.0f64; n + 1];
        let mut v = vec![0.0f64; m + 1];
        let mut owner = vec![0usize; m + 1];
        let mut way = vec![0usize; m + 1];
        for i in 1..=n {
            owner[0] = i;
            let mut j0 = 0usize;
            let mut minv = vec![f64::INFINITY; m + 1];
            let mut used = vec![false; m + 1];
            loop {
                used[j0] = true;
                let i0 = owner[j0];
                let mut delta = f64::INFINITY;
                let mut j1 = 0usize;
                for j in 1..=m {
                    if used[j] {
                        continue;
                    }
                    let cur = self.at(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
                for j in 0..=m {
                    if used[j] {
                        u[owner[j]] += delta;
                        v[j] -= delta;
                    } else {
                        minv[j] -= delta;
                    }
                }
                j0 = j1;
                if owner[j0] == 0 {
                    break;
                }
            }
            loop {
                let j1 = way[j0];
                owner[j0] = owner[j1];
                j0 = j1;
                if j0 == 0 {
                    break;
                }
            }
        }
        let mut assigned = vec![usize::MAX; n];
        for j in 1..=m {
            if owner[j] != 0 {
                assigned[owner[j] - 1] = j - 1;
            }
        }
        assigned
    }

    fn total(&self, assigned: &[usize]) -> f64 {
        assigned
            .iter()
            .enumerate()
            .map(|(r, &c)| self.at(r, c))
            .sum()
    }
}

/// Minimum total cost over all assignments of the smaller side.
pub fn optimal_cost(cost: &CostMatrix) -> f64 {
    let dense = cost.oriented();
    let assigned = dense.solve();
    dense.total(&assigned)
}

/// Optimal assignment with lexicographic tie-breaking.
pub fn hungarian(cost: &CostMatrix) -> Assignment {
    let dense = cost.oriented();
    let first = dense.solve();
    let optimum = dense.total(&first);
    let tolerance = 1e-12 * optimum.max(1.0);

    let mut chosen = Vec::with_capacity(dense.n);
    let mut free_cols: Vec<usize> = (0..dense.m).collect();
    let mut fixed = 0.0f64;
    for r in 0..dense.n {
        let rest_rows: Vec<usize> = (r + 1..dense.n).collect();
        // column the optimal completion of rows r.. would give row r
        let anchor = {
            let rows: Vec<usize> = (r..dense.n).collect();
            free_cols[dense.submatrix(&rows, &free_cols).solve()[0]]
        };
        let mut pick = anchor;
        for &c in free_cols.iter().take_while(|&&c| c < anchor) {
            let cols: Vec<usize> = free_cols.iter().copied().filter(|&x| x != c).collect();
            let rest = if rest_rows.is_empty() {
                0.0
            } else {
                let sub = dense.submatrix(&rest_rows, &cols);
                sub.total(&sub.solve())
            };
            if fixed + dense.at(r, c) + rest <= optimum + tolerance {
                pick = c;
                break;
            }
        }
        fixed += dense.at(r, pick);
        free_cols.retain(|&x| x != pick);
        chosen.push(pick);
    }

    let total_cost = dense.total(&chosen);
    let mut pairs: Vec<(usize, usize)> = if cost.rows <= cost.cols {
        chosen.iter().enumerate().map(|(r, &c)| (r, c)).collect()
    } else {
        chosen.iter().enumerate().map(|(c, &r)| (r, c)).collect()
    };
    pairs.sort_unstable();
    Assignment {
        mean_cost: total_cost / pairs.len() as f64,
        pairs,
        total_cost,
    }
}
