//! Maximum-weight assignment with lexicographic tie-breaking.

use ndarray::Array2;

use super::DoublyStochasticMatrix;
use crate::augment::ShuffleMatrix;

/// Two assignment values closer than this are treated as tied.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Minimum-cost assignment over a square cost matrix (Hungarian method with
/// potentials, O(n³)). Returns `col_of_row`.
fn min_cost_assignment(cost: &Array2<f64>) -> Vec<usize> {
    let n = cost.nrows();
    if n == 0 {
        return Vec::new();
    }
    // 1-based arrays; index 0 is the virtual starting column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of_col = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of_col[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of_col[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of_col[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of_col[j0] = row_of_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of_row = vec![0; n];
    for j in 1..=n {
        col_of_row[row_of_col[j] - 1] = j - 1;
    }
    col_of_row
}

/// Best total weight for assigning `rows` to `cols` (equal lengths).
fn best_value(weights: &Array2<f64>, rows: &[usize], cols: &[usize]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let cost = Array2::from_shape_fn((rows.len(), cols.len()), |(a, b)| -weights[[rows[a], cols[b]]]);
    min_cost_assignment(&cost)
        .iter()
        .enumerate()
        .map(|(a, &b)| weights[[rows[a], cols[b]]])
        .sum()
}

/// The permutation σ maximizing `Σ_i w[i][σ(i)]`; among (near-)ties the
/// lexicographically smallest σ.
pub fn max_weight_assignment(weights: &Array2<f64>) -> Vec<usize> {
    let n = weights.nrows();
    let all: Vec<usize> = (0..n).collect();
    let optimum = best_value(weights, &all, &all);
    let tol = TIE_TOLERANCE * optimum.abs().max(1.0);

    let mut perm = Vec::with_capacity(n);
    let mut free_cols = all.clone();
    let mut prefix = 0.0;
    for i in 0..n {
        let rest_rows: Vec<usize> = (i + 1..n).collect();
        let chosen = free_cols
            .iter()
            .position(|&j| {
                let rest: Vec<usize> = free_cols.iter().copied().filter(|&c| c != j).collect();
                prefix + weights[[i, j]] + best_value(weights, &rest_rows, &rest) >= optimum - tol
            })
            .unwrap_or(0);
        let j = free_cols.remove(chosen);
        prefix += weights[[i, j]];
        perm.push(j);
    }
    perm
}

pub fn round_to_permutation(q: &DoublyStochasticMatrix) -> ShuffleMatrix {
    ShuffleMatrix::from_perm(max_weight_assignment(q.as_array()))
        .expect("assignment always yields a permutation")
}
