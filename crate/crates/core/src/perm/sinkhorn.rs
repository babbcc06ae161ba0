use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::{DoublyStochasticMatrix, ScoreMatrix};
use crate::error::{Error, Result};

pub const DEFAULT_TRAIN_ITERATIONS: usize = 10;
pub const DEFAULT_EVAL_ITERATIONS: usize = 50;
pub const DEFAULT_LOG_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornConfig {
    pub m: usize,
    pub eps: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            m: DEFAULT_TRAIN_ITERATIONS,
            eps: DEFAULT_LOG_EPS,
        }
    }
}

impl SinkhornConfig {
    pub fn with_iterations(m: usize) -> Self {
        Self { m, ..Self::default() }
    }

    /// `m = 0` is accepted as the identity map.
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("sinkhorn eps {} must be > 0", self.eps)));
        }
        Ok(())
    }
}

fn normalize(q: &Array2<f64>, axis: Axis) -> Result<(Array2<f64>, Vec<f64>)> {
    let sums: Vec<f64> = q.sum_axis(axis).to_vec();
    if let Some((i, s)) = sums.iter().enumerate().find(|(_, s)| !(**s > 0.0 && s.is_finite())) {
        let what = if axis == Axis(1) { "row" } else { "column" };
        return Err(Error::NumericDomain(format!("{what} {i} sums to {s}")));
    }
    let mut out = q.clone();
    for (idx, mut lane) in out.axis_iter_mut(Axis(1 - axis.index())).enumerate() {
        lane /= sums[idx];
    }
    Ok((out, sums))
}

/// `R(Q)[i][j] = Q[i][j] / Σ_k Q[i][k]`.
pub fn row_normalize(q: &Array2<f64>) -> Result<Array2<f64>> {
    normalize(q, Axis(1)).map(|(out, _)| out)
}

/// `C(Q)[i][j] = Q[i][j] / Σ_k Q[k][j]`.
pub fn col_normalize(q: &Array2<f64>) -> Result<Array2<f64>> {
    normalize(q, Axis(0)).map(|(out, _)| out)
}

/// `S⁰ = Q`, `Sᵐ = C(R(Sᵐ⁻¹))`.
pub fn sinkhorn(q: &ScoreMatrix, config: &SinkhornConfig) -> Result<DoublyStochasticMatrix> {
    let mut s = q.as_array().clone();
    for _ in 0..config.m {
        s = col_normalize(&row_normalize(&s)?)?;
    }
    Ok(DoublyStochasticMatrix::new_unchecked(s, config.m))
}

/// Backward pass of one normalization step along `axis`, given the step's
/// input `x`, its sums `z`, and the gradient `gy` w.r.t. its output:
/// `∂Δ/∂X[p][q] = Σ_j gY[p][j] ([j=q]/Z_p − X[p][j]/Z_p²)` for rows, and the
/// transposed form for columns.
fn normalize_backward(x: &Array2<f64>, z: &[f64], gy: &Array2<f64>, axis: Axis) -> Array2<f64> {
    let lane_axis = Axis(1 - axis.index());
    let mut gx = Array2::zeros(x.dim());
    for (p, ((x_lane, gy_lane), mut gx_lane)) in x
        .axis_iter(lane_axis)
        .zip(gy.axis_iter(lane_axis))
        .zip(gx.axis_iter_mut(lane_axis))
        .enumerate()
    {
        let zp = z[p];
        let dot: f64 = gy_lane.iter().zip(x_lane.iter()).map(|(g, v)| g * v).sum();
        let correction = dot / (zp * zp);
        for (gx, g) in gx_lane.iter_mut().zip(gy_lane.iter()) {
            *gx = g / zp - correction;
        }
    }
    gx
}

/// Gradient of `Σ upstream ⊙ sinkhorn(q)` w.r.t. `q`, backpropagated through
/// all `m` unrolled row and column steps.
pub fn sinkhorn_backward(
    q: &ScoreMatrix,
    config: &SinkhornConfig,
    upstream: &Array2<f64>,
) -> Result<Array2<f64>> {
    if upstream.dim() != q.as_array().dim() {
        return Err(Error::Dimension(format!(
            "upstream gradient {:?} vs matrix {:?}",
            upstream.dim(),
            q.as_array().dim()
        )));
    }
    // (input, sums, axis) per normalization step, in forward order.
    let mut tape: Vec<(Array2<f64>, Vec<f64>, Axis)> = Vec::with_capacity(2 * config.m);
    let mut s = q.as_array().clone();
    for _ in 0..config.m {
        for axis in [Axis(1), Axis(0)] {
            let (next, sums) = normalize(&s, axis)?;
            tape.push((s, sums, axis));
            s = next;
        }
    }
    let mut grad = upstream.clone();
    for (x, z, axis) in tape.iter().rev() {
        grad = normalize_backward(x, z, &grad, *axis);
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use ndarray::arr2;
    use rand::Rng;

    fn random_positive(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = rng_from_seed(seed);
        Array2::from_shape_fn((n, n), |_| rng.gen_range(0.1..10.0))
    }

    fn forward_value(q: &Array2<f64>, m: usize, upstream: &Array2<f64>) -> f64 {
        let s = sinkhorn(&ScoreMatrix::new(q.clone()).unwrap(), &SinkhornConfig::with_iterations(m)).unwrap();
        (s.as_array() * upstream).sum()
    }

    /// Central differences of `Σ upstream ⊙ sinkhorn(q)`.
    fn finite_difference(q: &Array2<f64>, m: usize, upstream: &Array2<f64>, h: f64) -> Array2<f64> {
        let mut g = Array2::zeros(q.dim());
        for idx in ndarray::indices(q.dim()) {
            let mut plus = q.clone();
            plus[idx] += h;
            let mut minus = q.clone();
            minus[idx] -= h;
            g[idx] = (forward_value(&plus, m, upstream) - forward_value(&minus, m, upstream)) / (2.0 * h);
        }
        g
    }

    fn max_rel_err(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-7))
            .fold(0.0, f64::max)
    }

    #[test]
    fn row_and_column_normalization_arithmetic() {
        let r = row_normalize(&arr2(&[[2.0, 2.0], [1.0, 3.0]])).unwrap();
        assert_eq!(r, arr2(&[[0.5, 0.5], [0.25, 0.75]]));
        let c = col_normalize(&arr2(&[[2.0, 1.0], [2.0, 3.0]])).unwrap();
        assert_eq!(c, arr2(&[[0.5, 0.25], [0.5, 0.75]]));
    }

    #[test]
    fn normalization_fixed_points() {
        let p = arr2(&[[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]);
        assert_eq!(row_normalize(&p).unwrap(), p);
        let ds = arr2(&[[0.25, 0.75], [0.75, 0.25]]);
        assert_eq!(col_normalize(&ds).unwrap(), ds);
    }

    #[test]
    fn zero_lanes_are_domain_errors() {
        assert!(matches!(
            row_normalize(&arr2(&[[0.0, 0.0], [1.0, 1.0]])),
            Err(Error::NumericDomain(_))
        ));
        assert!(matches!(
            col_normalize(&arr2(&[[0.0, 1.0], [0.0, 1.0]])),
            Err(Error::NumericDomain(_))
        ));
    }

    #[test]
    fn zero_iterations_is_identity() {
        let q = random_positive(4, 1);
        let s = sinkhorn(&ScoreMatrix::new(q.clone()).unwrap(), &SinkhornConfig::with_iterations(0)).unwrap();
        assert_eq!(s.as_array(), &q);
        assert_eq!(s.iterations_used(), 0);
    }

    #[test]
    fn one_iteration_hand_value() {
        // R: [[2/3, 1/3], [1/2, 1/2]]; column sums 7/6 and 5/6.
        let q = ScoreMatrix::new(arr2(&[[2.0, 1.0], [1.0, 1.0]])).unwrap();
        let s = sinkhorn(&q, &SinkhornConfig::with_iterations(1)).unwrap();
        let expected = arr2(&[[4.0 / 7.0, 2.0 / 5.0], [3.0 / 7.0, 3.0 / 5.0]]);
        for (a, b) in s.as_array().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn doubly_stochastic_input_is_fixed() {
        let ds = arr2(&[[0.2, 0.3, 0.5], [0.5, 0.2, 0.3], [0.3, 0.5, 0.2]]);
        for m in [1, 5, 50] {
            let s = sinkhorn(&ScoreMatrix::new(ds.clone()).unwrap(), &SinkhornConfig::with_iterations(m)).unwrap();
            for (a, b) in s.as_array().iter().zip(&ds) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_of_scalar_is_zero() {
        let q = ScoreMatrix::new(arr2(&[[3.7]])).unwrap();
        let s = sinkhorn(&q, &SinkhornConfig::with_iterations(4)).unwrap();
        assert_eq!(s.as_array()[[0, 0]], 1.0);
        let g = sinkhorn_backward(&q, &SinkhornConfig::with_iterations(4), &arr2(&[[1.3]])).unwrap();
        assert!(g[[0, 0]].abs() < 1e-15);
    }

    #[test]
    fn backward_matches_finite_differences_5x5() {
        let q = random_positive(5, 3);
        let mut rng = rng_from_seed(4);
        let upstream = Array2::from_shape_fn((5, 5), |_| rng.gen_range(-1.0..1.0));
        let cfg = SinkhornConfig::with_iterations(3);
        let g = sinkhorn_backward(&ScoreMatrix::new(q.clone()).unwrap(), &cfg, &upstream).unwrap();
        let fd = finite_difference(&q, 3, &upstream, 1e-6);
        let err = max_rel_err(&g, &fd);
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn backward_matches_finite_differences_various_m() {
        for (seed, m) in [(10u64, 1usize), (11, 3), (12, 10)] {
            let n = 2 + seed as usize % 5;
            let q = random_positive(n, seed);
            let mut rng = rng_from_seed(seed + 100);
            let upstream = Array2::from_shape_fn((n, n), |_| rng.gen_range(-1.0..1.0));
            let cfg = SinkhornConfig::with_iterations(m);
            let g = sinkhorn_backward(&ScoreMatrix::new(q.clone()).unwrap(), &cfg, &upstream).unwrap();
            let fd = finite_difference(&q, m, &upstream, 1e-6);
            let err = max_rel_err(&g, &fd);
            assert!(err < 1e-5, "m={m} relative error {err}");
        }
    }

    #[test]
    fn uniform_input_gives_symmetric_gradient() {
        let n = 4;
        let q = ScoreMatrix::new(Array2::from_elem((n, n), 2.0)).unwrap();
        let up = Array2::from_elem((n, n), 0.7);
        let g = sinkhorn_backward(&q, &SinkhornConfig::with_iterations(3), &up).unwrap();
        let first = g[[0, 0]];
        assert!(g.iter().all(|v| (v - first).abs() < 1e-15));
    }
}
