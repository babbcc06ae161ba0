//! Pretext-task example generation.
//!
//! A protein is cut into `n` contiguous blocks of random length (RAcut), each
//! block padded to `f_max`. The blocks are then permuted by a random shuffle
//! matrix and optionally noised with residue masking. The model input is the
//! shuffled, noised set; the label is the shuffle matrix.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{ProteinRecord, ResidueVocabulary, MASK_ID, PAD_ID};
use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, Rng};

pub const DEFAULT_N: usize = 24;
pub const DEFAULT_MASK_PROB: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RAcutConfig {
    pub n: usize,
    pub l_max: usize,
    pub f_max: usize,
}

impl RAcutConfig {
    /// Derives `f_max = ceil(l_max / n)` so that `n * f_max >= l_max`.
    pub fn new(n: usize, l_max: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("subsequence count n must be at least 1".into()));
        }
        if l_max == 0 {
            return Err(Error::Config("l_max must be positive".into()));
        }
        Ok(Self {
            n,
            l_max,
            f_max: l_max.div_ceil(n),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let expected = Self::new(self.n, self.l_max)?;
        if expected.f_max != self.f_max {
            return Err(Error::Config(format!(
                "f_max {} inconsistent with ceil(l_max/n) = {}",
                self.f_max, expected.f_max
            )));
        }
        Ok(())
    }

    /// Total token capacity `n * f_max`.
    pub fn capacity(&self) -> usize {
        self.n * self.f_max
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SubsequenceSet {
    pub f_max: usize,
    pub blocks: Vec<Vec<u8>>,
    pub true_lengths: Vec<usize>,
}

impl SubsequenceSet {
    pub fn n(&self) -> usize {
        self.blocks.len()
    }

    /// Blocks concatenated into one `n * f_max` token sequence.
    pub fn flat_tokens(&self) -> Vec<u8> {
        self.blocks.iter().flatten().copied().collect()
    }

    pub fn is_pad_position(&self, block: usize, pos: usize) -> bool {
        pos >= self.true_lengths[block]
    }

    pub fn total_length(&self) -> usize {
        self.true_lengths.iter().sum()
    }

    /// One line per block; pads render as `·` and masks as `#`.
    pub fn render(&self, vocab: &ResidueVocabulary) -> String {
        self.blocks
            .iter()
            .map(|b| vocab.decode(b))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// A permutation σ where shuffled slot `i` holds original block `perm[i]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ShuffleMatrix {
    perm: Vec<usize>,
}

impl ShuffleMatrix {
    pub fn from_perm(perm: Vec<usize>) -> Result<Self> {
        let n = perm.len();
        let mut seen = vec![false; n];
        for &p in &perm {
            if p >= n || seen[p] {
                return Err(Error::Validation(format!("{perm:?} is not a permutation")));
            }
            seen[p] = true;
        }
        Ok(Self { perm })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            perm: (0..n).collect(),
        }
    }

    /// Reads a 0/1 matrix; fails unless every row and column has exactly one 1.
    pub fn from_matrix(m: &Array2<f64>) -> Result<Self> {
        let (rows, cols) = m.dim();
        if rows != cols {
            return Err(Error::Dimension(format!("{rows}x{cols} is not square")));
        }
        let mut perm = Vec::with_capacity(rows);
        for row in m.rows() {
            let ones: Vec<usize> = row
                .iter()
                .enumerate()
                .filter(|(_, &v)| v != 0.0)
                .map(|(j, _)| j)
                .collect();
            if ones.len() != 1 || row[ones[0]] != 1.0 {
                return Err(Error::Validation("row is not a unit vector".into()));
            }
            perm.push(ones[0]);
        }
        Self::from_perm(perm)
    }

    pub fn n(&self) -> usize {
        self.perm.len()
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn to_matrix(&self) -> Array2<f64> {
        let n = self.n();
        let mut m = Array2::zeros((n, n));
        for (i, &j) in self.perm.iter().enumerate() {
            m[[i, j]] = 1.0;
        }
        m
    }

    /// The inverse permutation, i.e. the transposed matrix.
    pub fn transpose(&self) -> Self {
        let mut inv = vec![0; self.n()];
        for (i, &j) in self.perm.iter().enumerate() {
            inv[j] = i;
        }
        Self { perm: inv }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoiseKind {
    Identity,
    Mask,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub mask_prob: f64,
}

impl NoiseSpec {
    pub fn identity() -> Self {
        Self {
            kind: NoiseKind::Identity,
            mask_prob: 0.0,
        }
    }

    pub fn mask(mask_prob: f64) -> Self {
        Self {
            kind: NoiseKind::Mask,
            mask_prob,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mask_prob) {
            return Err(Error::Config(format!("mask_prob {} outside [0,1]", self.mask_prob)));
        }
        Ok(())
    }
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self::mask(DEFAULT_MASK_PROB)
    }
}

/// Random adaptive cut of `protein` into `config.n` padded blocks.
///
/// Lengths are drawn sequentially; block `i` is uniform over the range that
/// still leaves every later block a feasible length in `[1, f_max]`, and the
/// last block takes the remainder.
pub fn racut(protein: &ProteinRecord, config: &RAcutConfig, rng: &mut Rng) -> Result<SubsequenceSet> {
    let RAcutConfig { n, f_max, .. } = *config;
    let total = protein.tokens.len().min(config.capacity());
    if total < n {
        return Err(Error::Augment(format!(
            "protein of length {} is shorter than n = {n}",
            protein.tokens.len()
        )));
    }

    let mut lengths = Vec::with_capacity(n);
    let mut rem = total;
    for i in 0..n - 1 {
        let after = n - 1 - i;
        let lo = rem.saturating_sub(after * f_max).max(1);
        let hi = f_max.min(rem - after);
        let len = rng.gen_range(lo..=hi);
        lengths.push(len);
        rem -= len;
    }
    debug_assert!((1..=f_max).contains(&rem));
    lengths.push(rem);

    let mut blocks = Vec::with_capacity(n);
    let mut start = 0;
    for &len in &lengths {
        let mut block = protein.tokens[start..start + len].to_vec();
        block.resize(f_max, PAD_ID);
        blocks.push(block);
        start += len;
    }
    Ok(SubsequenceSet {
        f_max,
        blocks,
        true_lengths: lengths,
    })
}

/// Deterministic equal-split segmentation used at inference time: block `i`
/// holds tokens `[i * f_max, (i + 1) * f_max)` of the truncated sequence.
/// Trailing blocks may be empty (true length 0).
pub fn equal_split(protein: &ProteinRecord, config: &RAcutConfig) -> Result<SubsequenceSet> {
    let RAcutConfig { n, f_max, .. } = *config;
    if protein.tokens.len() < n {
        return Err(Error::Augment(format!(
            "protein of length {} is shorter than n = {n}",
            protein.tokens.len()
        )));
    }
    let total = protein.tokens.len().min(config.capacity());
    let mut blocks = Vec::with_capacity(n);
    let mut true_lengths = Vec::with_capacity(n);
    for i in 0..n {
        let start = (i * f_max).min(total);
        let end = ((i + 1) * f_max).min(total);
        let mut block = protein.tokens[start..end].to_vec();
        true_lengths.push(block.len());
        block.resize(f_max, PAD_ID);
        blocks.push(block);
    }
    Ok(SubsequenceSet {
        f_max,
        blocks,
        true_lengths,
    })
}

/// Uniform random permutation (Fisher–Yates).
pub fn sample_shuffle(n: usize, rng: &mut Rng) -> ShuffleMatrix {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    ShuffleMatrix { perm }
}

/// Output block `i` is input block `σ(i)`.
pub fn shuffle_apply(set: &SubsequenceSet, p: &ShuffleMatrix) -> Result<SubsequenceSet> {
    if p.n() != set.n() {
        return Err(Error::Dimension(format!(
            "shuffle matrix is {0}x{0} but set has {1} blocks",
            p.n(),
            set.n()
        )));
    }
    Ok(SubsequenceSet {
        f_max: set.f_max,
        blocks: p.perm.iter().map(|&j| set.blocks[j].clone()).collect(),
        true_lengths: p.perm.iter().map(|&j| set.true_lengths[j]).collect(),
    })
}

pub fn apply_noise(set: &SubsequenceSet, spec: &NoiseSpec, rng: &mut Rng) -> SubsequenceSet {
    let mut out = set.clone();
    if spec.kind == NoiseKind::Identity {
        return out;
    }
    for (block, &len) in out.blocks.iter_mut().zip(&set.true_lengths) {
        for tok in block.iter_mut().take(len) {
            if rng.gen_bool(spec.mask_prob) {
                *tok = MASK_ID;
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainExample {
    /// RAcut output in natural order, before shuffling and noise.
    pub original: SubsequenceSet,
    /// Model input: shuffled then noised.
    pub shuffled: SubsequenceSet,
    pub target: ShuffleMatrix,
    pub seed: u64,
}

/// racut → sample_shuffle → shuffle_apply → apply_noise, all driven by one seed.
pub fn make_pretrain_example(
    protein: &ProteinRecord,
    config: &RAcutConfig,
    spec: &NoiseSpec,
    seed: u64,
) -> Result<PretrainExample> {
    let mut rng = rng_from_seed(seed);
    let original = racut(protein, config, &mut rng)?;
    let target = sample_shuffle(config.n, &mut rng);
    let shuffled = shuffle_apply(&original, &target)?;
    let shuffled = apply_noise(&shuffled, spec, &mut rng);
    Ok(PretrainExample {
        original,
        shuffled,
        target,
        seed,
    })
}
