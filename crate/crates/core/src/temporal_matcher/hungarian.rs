//! Rectangular linear assignment by shortest augmenting paths.
//!
//! Every column (ground-truth triplet) is assigned to a distinct row (query).
//! Runs in O(cols² · rows); potentials are kept per row and per column.

use crate::cost_matrix::CostMatrix;
use crate::error::{Error, Result};

/// Minimum-cost assignment of every column to a distinct row.
///
/// Returns `(row, col)` pairs sorted by column. Among equal-cost
/// alternatives the lowest row index is preferred when a column is placed.
pub fn hungarian(costs: &CostMatrix) -> Result<Vec<(usize, usize)>> {
    let (rows, cols) = (costs.rows(), costs.cols());
    if cols > rows {
        return Err(Error::Infeasible {
            context: "assignment".into(),
            gt: cols,
            queries: rows,
        });
    }
    if cols == 0 {
        return Ok(Vec::new());
    }

    // Augmenting paths run from columns ("workers", 1-based) to rows ("jobs",
    // 1-based); index 0 is the virtual source.
    let cost = |worker: usize, job: usize| costs.get(job - 1, worker - 1);
    let mut u = vec![0.0f64; cols + 1];
    let mut v = vec![0.0f64; rows + 1];
    // owner[job] = worker holding that job, 0 if free
    let mut owner = vec![0usize; rows + 1];
    let mut way = vec![0usize; rows + 1];
    let mut minv = vec![0.0f64; rows + 1];
    let mut used = vec![false; rows + 1];

    for worker in 1..=cols {
        owner[0] = worker;
        let mut j0 = 0usize;
        minv.fill(f64::INFINITY);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=rows {
                if used[j] {
                    continue;
                }
                let cur = cost(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=rows {
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

    let mut pairs: Vec<(usize, usize)> = (1..=rows)
        .filter(|&j| owner[j] != 0)
        .map(|j| (j - 1, owner[j] - 1))
        .collect();
    pairs.sort_by_key(|&(_, col)| col);
    Ok(pairs)
}

pub fn assignment_cost(costs: &CostMatrix, pairs: &[(usize, usize)]) -> f64 {
    pairs.iter().map(|&(r, c)| costs.get(r, c)).sum()
}
