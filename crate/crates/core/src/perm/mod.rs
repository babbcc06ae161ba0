//! Permutation mathematics: Sinkhorn normalization and its unrolled
//! gradient, rounding a soft permutation to a hard one, the reordering loss,
//! and slot accuracy.

mod assignment;
mod sinkhorn;

use ndarray::Array2;

pub use assignment::{max_weight_assignment, round_to_permutation, TIE_TOLERANCE};
pub use sinkhorn::{
    col_normalize, row_normalize, sinkhorn, sinkhorn_backward, SinkhornConfig, DEFAULT_EVAL_ITERATIONS,
    DEFAULT_LOG_EPS, DEFAULT_TRAIN_ITERATIONS,
};

use crate::augment::ShuffleMatrix;
use crate::error::{Error, Result};

/// Square matrix of strictly positive, finite scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix(Array2<f64>);

impl ScoreMatrix {
    pub fn new(entries: Array2<f64>) -> Result<Self> {
        let (r, c) = entries.dim();
        if r != c {
            return Err(Error::Dimension(format!("score matrix is {r}x{c}")));
        }
        if let Some(v) = entries.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::NumericDomain(format!("score entry {v} is not finite and positive")));
        }
        Ok(Self(entries))
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

/// Output of Sinkhorn normalization. Columns sum to one (the last step is a
/// column normalization); rows converge to one as iterations grow.
#[derive(Debug, Clone, PartialEq)]
pub struct DoublyStochasticMatrix {
    entries: Array2<f64>,
    iterations_used: usize,
}

impl DoublyStochasticMatrix {
    pub(crate) fn new_unchecked(entries: Array2<f64>, iterations_used: usize) -> Self {
        Self {
            entries,
            iterations_used,
        }
    }

    /// Wraps a matrix known to be (approximately) doubly stochastic.
    pub fn from_array(entries: Array2<f64>) -> Result<Self> {
        let (r, c) = entries.dim();
        if r != c {
            return Err(Error::Dimension(format!("matrix is {r}x{c}")));
        }
        if entries.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::NumericDomain("entries must be finite and nonnegative".into()));
        }
        Ok(Self::new_unchecked(entries, 0))
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn iterations_used(&self) -> usize {
        self.iterations_used
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn max_row_deviation(&self) -> f64 {
        self.entries
            .rows()
            .into_iter()
            .map(|r| (r.sum() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_col_deviation(&self) -> f64 {
        self.entries
            .columns()
            .into_iter()
            .map(|c| (c.sum() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

fn check_dims(p: &ShuffleMatrix, n: usize) -> Result<()> {
    if p.n() != n {
        return Err(Error::Dimension(format!("permutation of size {} vs matrix of size {n}", p.n())));
    }
    Ok(())
}

/// Slot-wise negative log-likelihood of the true original index:
/// `−(1/n) Σ_i log(max(Q[i][σ(i)], eps))`.
pub fn reorder_loss(p: &ShuffleMatrix, q: &DoublyStochasticMatrix, eps: f64) -> Result<f64> {
    check_dims(p, q.n())?;
    let n = p.n() as f64;
    let q = q.as_array();
    Ok(-p
        .perm()
        .iter()
        .enumerate()
        .map(|(i, &j)| q[[i, j]].max(eps).ln())
        .sum::<f64>()
        / n)
}

/// Gradient of [`reorder_loss`] w.r.t. every entry of `q`. Entries clamped
/// at `eps` receive zero gradient.
pub fn reorder_loss_grad(p: &ShuffleMatrix, q: &DoublyStochasticMatrix, eps: f64) -> Result<Array2<f64>> {
    check_dims(p, q.n())?;
    let n = p.n();
    let qa = q.as_array();
    let mut g = Array2::zeros((n, n));
    for (i, &j) in p.perm().iter().enumerate() {
        if qa[[i, j]] > eps {
            g[[i, j]] = -1.0 / (n as f64 * qa[[i, j]]);
        }
    }
    Ok(g)
}

/// Fraction of slots whose predicted original index matches the target.
pub fn permutation_accuracy(predicted: &ShuffleMatrix, target: &ShuffleMatrix) -> Result<f64> {
    check_dims(predicted, target.n())?;
    let hits = predicted
        .perm()
        .iter()
        .zip(target.perm())
        .filter(|(a, b)| a == b)
        .count();
    Ok(hits as f64 / target.n() as f64)
}
