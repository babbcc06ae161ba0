//! Central finite-difference checks for the hand-written gradients.

use ndarray::Array2;
use rand::Rng as _;
use serde::Serialize;

use crate::augment::{make_pretrain_example, NoiseSpec, RAcutConfig};
use crate::corpus::{encode_protein, ResidueVocabulary, PROTEIN_VOCAB_SIZE};
use crate::encoder::{EncoderConfig, EncoderState};
use crate::error::Result;
use crate::perm::{sinkhorn, sinkhorn_backward, ScoreMatrix, SinkhornConfig};
use crate::rng::derived_rng;

pub const DEFAULT_STEP: f64 = 1e-6;
pub const SINKHORN_TOLERANCE: f64 = 1e-5;
pub const MODEL_TOLERANCE: f64 = 1e-4;
/// Denominator floor so that near-zero gradients are compared absolutely.
pub const RELATIVE_FLOOR: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Test hook: adds a constant to every analytic gradient entry before comparison.
#[derive(Debug, Clone, Copy, Default)]
pub struct Perturbation(pub f64);

#[derive(Debug, Clone, Serialize)]
pub struct ComponentReport {
    pub component: String,
    pub max_relative_error: f64,
    pub tolerance: f64,
    pub checked: usize,
    pub passed: bool,
}

fn report(component: String, errors: &[f64], tolerance: f64) -> ComponentReport {
    let max = errors.iter().copied().fold(0.0, f64::max);
    ComponentReport {
        component,
        max_relative_error: max,
        tolerance,
        checked: errors.len(),
        passed: max < tolerance,
    }
}

/// Compares `sinkhorn_backward` with central differences of
/// `Σ upstream ⊙ sinkhorn(q)` on a random strictly positive matrix.
pub fn check_sinkhorn(n: usize, m: usize, seed: u64, step: f64, perturb: Perturbation) -> Result<ComponentReport> {
    let mut rng = derived_rng(seed, &[n as u64, m as u64]);
    let q = Array2::from_shape_fn((n, n), |_| rng.gen_range(0.1..10.0));
    let upstream = Array2::from_shape_fn((n, n), |_| rng.gen_range(-1.0..1.0));
    let cfg = SinkhornConfig::with_iterations(m);
    let value = |q: &Array2<f64>| -> Result<f64> {
        Ok((sinkhorn(&ScoreMatrix::new(q.clone())?, &cfg)?.as_array() * &upstream).sum())
    };
    let analytic = sinkhorn_backward(&ScoreMatrix::new(q.clone())?, &cfg, &upstream)?;
    let mut errors = Vec::with_capacity(n * n);
    for idx in ndarray::indices((n, n)) {
        let mut plus = q.clone();
        plus[idx] += step;
        let mut minus = q.clone();
        minus[idx] -= step;
        let numeric = (value(&plus)? - value(&minus)?) / (2.0 * step);
        errors.push(relative_error(analytic[idx] + perturb.0, numeric));
    }
    Ok(report(format!("sinkhorn n={n} m={m}"), &errors, SINKHORN_TOLERANCE))
}

pub fn tiny_encoder_config() -> EncoderConfig {
    EncoderConfig {
        embed_dim: 8,
        layers: 1,
        heads: 2,
        ffn_dim: 16,
        n: 3,
        f_max: 4,
        vocab_size: PROTEIN_VOCAB_SIZE,
    }
}

/// Full-model check: reordering loss (encoder → Sinkhorn → NLL) gradient on
/// `coords` random parameter coordinates.
pub fn check_encoder(
    config: EncoderConfig,
    sk: SinkhornConfig,
    coords: usize,
    seed: u64,
    step: f64,
    perturb: Perturbation,
) -> Result<ComponentReport> {
    let state = EncoderState::init(config, seed)?;
    let racut = RAcutConfig {
        n: config.n,
        l_max: config.seq_len(),
        f_max: config.f_max,
    };
    let mut rng = derived_rng(seed, &[1]);
    let letters = b"ACDEFGHIKLMNPQRSTVWY";
    let len = rng.gen_range(config.n..=config.seq_len());
    let raw: String = (0..len).map(|_| letters[rng.gen_range(0..20)] as char).collect();
    let protein = encode_protein(&raw, &ResidueVocabulary::default(), config.seq_len())?;
    let example = make_pretrain_example(&protein, &racut, &NoiseSpec::default(), rng.gen())?;

    let mut grads = vec![0.0; state.param_count()];
    state.reorder_loss_and_grad(&example, &sk, &mut grads)?;

    let mut errors = Vec::with_capacity(coords);
    let mut probe = state.clone();
    for _ in 0..coords {
        let i = rng.gen_range(0..state.param_count());
        let original = probe.params()[i];
        probe.params_mut()[i] = original + step;
        let up = probe.reorder_loss(&example, &sk)?;
        probe.params_mut()[i] = original - step;
        let down = probe.reorder_loss(&example, &sk)?;
        probe.params_mut()[i] = original;
        let numeric = (up - down) / (2.0 * step);
        errors.push(relative_error(grads[i] + perturb.0, numeric));
    }
    Ok(report(
        format!(
            "encoder d={} layers={} n={} ({} coords)",
            config.embed_dim, config.layers, config.n, coords
        ),
        &errors,
        MODEL_TOLERANCE,
    ))
}

/// Runs the default battery: Sinkhorn at m ∈ {1, 3, 10} and the tiny full model.
pub fn run_default(seed: u64, perturb: Perturbation) -> Result<Vec<ComponentReport>> {
    let mut out = Vec::new();
    for (n, m) in [(5, 1), (5, 3), (5, 10), (4, 3)] {
        out.push(check_sinkhorn(n, m, seed, DEFAULT_STEP, perturb)?);
    }
    out.push(check_encoder(
        tiny_encoder_config(),
        SinkhornConfig::default(),
        20,
        seed,
        DEFAULT_STEP,
        perturb,
    )?);
    Ok(out)
}
