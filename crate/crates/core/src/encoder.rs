//! Protein encoder: shuffled subsequence set → slot embeddings → score matrix.
//!
//! The `n` padded blocks are concatenated into one `n * f_max` token sequence.
//! Each token embedding is the sum of a residue embedding, a within-block
//! position embedding and the embedding of the slot the block currently
//! occupies. There is deliberately no global position embedding: global
//! order is what the model has to infer. After the attention stack, each
//! block is mean-pooled over its non-pad tokens and a linear head maps every
//! slot vector to `n` logits, one per candidate original position. The score
//! matrix is `exp(clamp(logits, ±30))`; Sinkhorn turns it into Q.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::augment::{equal_split, PretrainExample, RAcutConfig, SubsequenceSet};
use crate::corpus::{ProteinRecord, PROTEIN_VOCAB_SIZE};
use crate::error::{Error, Result};
use crate::nn::{EncoderStack, Init, Linear, ParamLayout, StackCache, TensorRef};
use crate::perm::{
    reorder_loss, reorder_loss_grad, sinkhorn, sinkhorn_backward, DoublyStochasticMatrix, ScoreMatrix,
    SinkhornConfig,
};
use crate::rng::rng_from_seed;

pub const LOGIT_CLAMP: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub n: usize,
    pub f_max: usize,
    pub vocab_size: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            embed_dim: 256,
            layers: 8,
            heads: 8,
            ffn_dim: 1024,
            n: 24,
            f_max: 50,
            vocab_size: PROTEIN_VOCAB_SIZE,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.embed_dim == 0 || self.heads == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return bad(format!("embed_dim {} must be a positive multiple of heads {}", self.embed_dim, self.heads));
        }
        if self.layers == 0 {
            return bad("layers must be at least 1".into());
        }
        if self.ffn_dim == 0 || self.n == 0 || self.f_max == 0 {
            return bad("ffn_dim, n and f_max must be positive".into());
        }
        if self.vocab_size < PROTEIN_VOCAB_SIZE {
            return bad(format!("vocab_size {} < {PROTEIN_VOCAB_SIZE}", self.vocab_size));
        }
        Ok(())
    }

    pub fn seq_len(&self) -> usize {
        self.n * self.f_max
    }
}

#[derive(Debug, Clone)]
struct Architecture {
    layout: ParamLayout,
    token: TensorRef,
    position: TensorRef,
    slot: TensorRef,
    stack: EncoderStack,
    head: Linear,
}

impl Architecture {
    fn new(cfg: &EncoderConfig) -> Self {
        let d = cfg.embed_dim;
        let mut layout = ParamLayout::default();
        let emb = Init::Uniform { fan_in: d };
        let token = layout.add("embed.token", cfg.vocab_size, d, emb);
        let position = layout.add("embed.position", cfg.f_max, d, emb);
        let slot = layout.add("embed.slot", cfg.n, d, emb);
        let stack = EncoderStack::new(&mut layout, "encoder", cfg.layers, d, cfg.heads, cfg.ffn_dim);
        let head = Linear::new(&mut layout, "score_head", d, cfg.n);
        Self {
            layout,
            token,
            position,
            slot,
            stack,
            head,
        }
    }
}

/// Encoder parameters together with the layout derived from the config.
#[derive(Debug, Clone)]
pub struct EncoderState {
    config: EncoderConfig,
    arch: Architecture,
    params: Vec<f64>,
}

impl PartialEq for EncoderState {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.params == other.params
    }
}

/// One pooled vector per block (`n x embed_dim`).
#[derive(Debug, Clone, PartialEq)]
pub struct SubsequenceEmbeddings(pub Array2<f64>);

/// Mean of the non-empty block vectors; the protein representation used downstream.
#[derive(Debug, Clone, PartialEq)]
pub struct ProteinEmbedding(pub Array1<f64>);

pub struct ForwardCache {
    tokens: Vec<u8>,
    lengths: Vec<usize>,
    stack: StackCache,
    pooled: Array2<f64>,
    unclamped: Array2<bool>,
    scores: ScoreMatrix,
}

impl ForwardCache {
    pub fn scores(&self) -> &ScoreMatrix {
        &self.scores
    }

    pub fn embeddings(&self) -> SubsequenceEmbeddings {
        SubsequenceEmbeddings(self.pooled.clone())
    }
}

fn check_finite(a: &Array2<f64>, what: &str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} contains non-finite values")))
    }
}

impl EncoderState {
    pub fn init(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let arch = Architecture::new(&config);
        let params = arch.layout.initialize(&mut rng_from_seed(seed));
        Ok(Self { config, arch, params })
    }

    /// Rebuilds a state from a flat parameter vector (e.g. from a checkpoint).
    pub fn from_params(config: EncoderConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let arch = Architecture::new(&config);
        if params.len() != arch.layout.len() {
            return Err(Error::Shape(format!(
                "encoder config expects {} parameters, got {}",
                arch.layout.len(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("encoder parameters".into()));
        }
        Ok(Self { config, arch, params })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.arch.layout
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn check_input(&self, input: &SubsequenceSet) -> Result<()> {
        let cfg = &self.config;
        if input.n() != cfg.n || input.f_max != cfg.f_max || input.blocks.iter().any(|b| b.len() != cfg.f_max) {
            return Err(Error::Shape(format!(
                "input has n={} f_max={} but encoder expects n={} f_max={}",
                input.n(),
                input.f_max,
                cfg.n,
                cfg.f_max
            )));
        }
        if input.true_lengths.iter().all(|&l| l == 0) || input.true_lengths.iter().any(|&l| l > cfg.f_max) {
            return Err(Error::Shape("block lengths must lie in [0, f_max] with at least one non-empty block".into()));
        }
        if let Some(&t) = input.flat_tokens().iter().find(|&&t| t as usize >= cfg.vocab_size) {
            return Err(Error::Validation(format!("token id {t} outside vocabulary")));
        }
        Ok(())
    }

    pub fn forward_cached(&self, input: &SubsequenceSet) -> Result<ForwardCache> {
        self.check_input(input)?;
        let cfg = &self.config;
        let p = &self.params;
        let (n, f_max, d) = (cfg.n, cfg.f_max, cfg.embed_dim);
        let tokens = input.flat_tokens();
        let lengths = input.true_lengths.clone();

        let tok = self.arch.token.view(p);
        let pos = self.arch.position.view(p);
        let slot = self.arch.slot.view(p);
        let mut x = Array2::zeros((n * f_max, d));
        for (t, mut row) in x.rows_mut().into_iter().enumerate() {
            row.assign(&tok.row(tokens[t] as usize));
            row += &pos.row(t % f_max);
            row += &slot.row(t / f_max);
        }
        let key_mask: Vec<bool> = (0..n * f_max).map(|t| t % f_max < lengths[t / f_max]).collect();

        let (hidden, stack) = self.arch.stack.forward(p, x, &key_mask);
        check_finite(&hidden, "encoder activations")?;

        let mut pooled = Array2::zeros((n, d));
        for (i, mut row) in pooled.rows_mut().into_iter().enumerate() {
            let len = lengths[i];
            if len > 0 {
                let block = hidden.slice(ndarray::s![i * f_max..i * f_max + len, ..]);
                row.assign(&(block.sum_axis(Axis(0)) / len as f64));
            }
        }

        let logits = self.arch.head.forward(p, &pooled.view());
        let unclamped = logits.mapv(|l| l.abs() < LOGIT_CLAMP);
        let scores = logits.mapv(|l| l.clamp(-LOGIT_CLAMP, LOGIT_CLAMP).exp());
        check_finite(&scores, "score matrix")?;
        let scores = ScoreMatrix::new(scores)?;
        Ok(ForwardCache {
            tokens,
            lengths,
            stack,
            pooled,
            unclamped,
            scores,
        })
    }

    pub fn forward(&self, input: &SubsequenceSet) -> Result<(SubsequenceEmbeddings, ScoreMatrix)> {
        let cache = self.forward_cached(input)?;
        Ok((SubsequenceEmbeddings(cache.pooled), cache.scores))
    }

    pub fn predict_q(&self, input: &SubsequenceSet, sk: &SinkhornConfig) -> Result<DoublyStochasticMatrix> {
        let (_, scores) = self.forward(input)?;
        sinkhorn(&scores, sk)
    }

    /// Accumulates parameter gradients into `grads` given the gradient of the
    /// objective w.r.t. the score matrix.
    pub fn backward_scores(&self, cache: &ForwardCache, upstream: &Array2<f64>, grads: &mut [f64]) -> Result<()> {
        let cfg = &self.config;
        if grads.len() != self.params.len() {
            return Err(Error::Shape("gradient buffer does not match parameter count".into()));
        }
        if upstream.dim() != (cfg.n, cfg.n) {
            return Err(Error::Dimension(format!("upstream gradient {:?} is not {0}x{0}", cfg.n)));
        }
        check_finite(upstream, "upstream gradient")?;
        let p = &self.params;
        let (n, f_max, d) = (cfg.n, cfg.f_max, cfg.embed_dim);

        let mut g_logits = upstream * cache.scores.as_array();
        ndarray::Zip::from(&mut g_logits)
            .and(&cache.unclamped)
            .for_each(|g, &free| {
                if !free {
                    *g = 0.0;
                }
            });
        let g_pooled = self.arch.head.backward(p, grads, &cache.pooled.view(), &g_logits);

        let mut g_hidden = Array2::zeros((n * f_max, d));
        for i in 0..n {
            let len = cache.lengths[i];
            if len == 0 {
                continue;
            }
            let share = &g_pooled.row(i) / len as f64;
            for t in i * f_max..i * f_max + len {
                g_hidden.row_mut(t).assign(&share);
            }
        }
        let g_x = self.arch.stack.backward(p, grads, &cache.stack, &g_hidden);

        for (t, g_row) in g_x.rows().into_iter().enumerate() {
            let mut tok = self.arch.token.view_mut(grads);
            let mut r = tok.row_mut(cache.tokens[t] as usize);
            r += &g_row;
            let mut pos = self.arch.position.view_mut(grads);
            let mut r = pos.row_mut(t % f_max);
            r += &g_row;
            let mut slot = self.arch.slot.view_mut(grads);
            let mut r = slot.row_mut(t / f_max);
            r += &g_row;
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("parameter gradients".into()));
        }
        Ok(())
    }

    /// Reordering loss of one example and its gradient accumulated into `grads`.
    pub fn reorder_loss_and_grad(
        &self,
        example: &PretrainExample,
        sk: &SinkhornConfig,
        grads: &mut [f64],
    ) -> Result<(f64, DoublyStochasticMatrix)> {
        let cache = self.forward_cached(&example.shuffled)?;
        let q = sinkhorn(&cache.scores, sk)?;
        let loss = reorder_loss(&example.target, &q, sk.eps)?;
        let g_q = reorder_loss_grad(&example.target, &q, sk.eps)?;
        let g_scores = sinkhorn_backward(&cache.scores, sk, &g_q)?;
        self.backward_scores(&cache, &g_scores, grads)?;
        Ok((loss, q))
    }

    /// Loss only, for finite-difference checks and validation.
    pub fn reorder_loss(&self, example: &PretrainExample, sk: &SinkhornConfig) -> Result<f64> {
        let q = self.predict_q(&example.shuffled, sk)?;
        reorder_loss(&example.target, &q, sk.eps)
    }

    /// Frozen-encoder representation of an unshuffled protein: equal-split
    /// segmentation in natural order, no noise, mean over non-empty blocks.
    pub fn protein_embedding(&self, protein: &ProteinRecord, racut: &RAcutConfig) -> Result<ProteinEmbedding> {
        if racut.n != self.config.n || racut.f_max != self.config.f_max {
            return Err(Error::Shape(format!(
                "segmentation n={} f_max={} does not match encoder n={} f_max={}",
                racut.n, racut.f_max, self.config.n, self.config.f_max
            )));
        }
        let set = equal_split(protein, racut)?;
        let (SubsequenceEmbeddings(pooled), _) = self.forward(&set)?;
        let mut sum = Array1::zeros(self.config.embed_dim);
        let mut count = 0usize;
        for (row, &len) in pooled.rows().into_iter().zip(&set.true_lengths) {
            if len > 0 {
                sum += &row;
                count += 1;
            }
        }
        Ok(ProteinEmbedding(sum / count as f64))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::{make_pretrain_example, NoiseSpec};
    use crate::corpus::{encode_protein, ResidueVocabulary, PAD_ID};

    fn tiny() -> EncoderConfig {
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

    fn protein(raw: &str) -> ProteinRecord {
        encode_protein(raw, &ResidueVocabulary::default(), 1200).unwrap()
    }

    fn example(seed: u64) -> PretrainExample {
        let cfg = RAcutConfig { n: 3, l_max: 12, f_max: 4 };
        make_pretrain_example(&protein("MKVLAGHWYQ"), &cfg, &NoiseSpec::default(), seed).unwrap()
    }

    #[test]
    fn init_is_deterministic() {
        let a = EncoderState::init(tiny(), 1).unwrap();
        let b = EncoderState::init(tiny(), 1).unwrap();
        let c = EncoderState::init(tiny(), 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn invalid_config_rejected() {
        let mut cfg = tiny();
        cfg.heads = 3;
        assert!(EncoderState::init(cfg, 0).is_err());
        cfg = tiny();
        cfg.layers = 0;
        assert!(EncoderState::init(cfg, 0).is_err());
    }

    #[test]
    fn paper_scale_parameter_count() {
        // 25*256 + 50*256 + 24*256 embeddings; per layer 4*(256*256+256) + 2*2*256
        // + (256*1024+1024) + (1024*256+256); final LN 2*256; head 256*24+24.
        let per_layer = 4 * (256 * 256 + 256) + 4 * 256 + (256 * 1024 + 1024) + (1024 * 256 + 256);
        let expected = (25 + 50 + 24) * 256 + 8 * per_layer + 2 * 256 + 256 * 24 + 24;
        let cfg = EncoderConfig::default();
        let layout = Architecture::new(&cfg).layout;
        assert_eq!(layout.len(), expected);
        assert_eq!(expected, 6_350_104);
    }

    #[test]
    fn scores_are_positive_and_deterministic() {
        let state = EncoderState::init(tiny(), 3).unwrap();
        let ex = example(0);
        let (e1, s1) = state.forward(&ex.shuffled).unwrap();
        let (e2, s2) = state.forward(&ex.shuffled).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(e1, e2);
        assert_eq!(s1.as_array().dim(), (3, 3));
        assert!(s1.as_array().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn pad_token_values_are_ignored() {
        let state = EncoderState::init(tiny(), 3).unwrap();
        let ex = example(4);
        let mut other = ex.shuffled.clone();
        for (block, &len) in other.blocks.iter_mut().zip(&ex.shuffled.true_lengths) {
            for t in block.iter_mut().skip(len) {
                *t = 5;
            }
        }
        assert_ne!(other, ex.shuffled);
        assert_eq!(state.forward(&ex.shuffled).unwrap(), state.forward(&other).unwrap());
    }

    #[test]
    fn predict_q_column_sums_and_zero_iterations() {
        let state = EncoderState::init(tiny(), 5).unwrap();
        let ex = example(1);
        let q = state.predict_q(&ex.shuffled, &SinkhornConfig::with_iterations(10)).unwrap();
        assert!(q.max_col_deviation() < 1e-12);
        let raw = state.predict_q(&ex.shuffled, &SinkhornConfig::with_iterations(0)).unwrap();
        assert_eq!(raw.as_array(), state.forward(&ex.shuffled).unwrap().1.as_array());
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let state = EncoderState::init(tiny(), 5).unwrap();
        let cache = state.forward_cached(&example(2).shuffled).unwrap();
        let mut grads = vec![0.0; state.param_count()];
        state.backward_scores(&cache, &Array2::zeros((3, 3)), &mut grads).unwrap();
        assert!(grads.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn pad_embedding_receives_no_gradient() {
        let state = EncoderState::init(tiny(), 6).unwrap();
        let ex = example(3);
        assert!(ex.shuffled.true_lengths.iter().any(|&l| l < 4));
        let mut grads = vec![0.0; state.param_count()];
        state
            .reorder_loss_and_grad(&ex, &SinkhornConfig::default(), &mut grads)
            .unwrap();
        let tok = state.arch.token.view(&grads);
        assert!(tok.row(PAD_ID as usize).iter().all(|&g| g == 0.0));
        assert!(grads.iter().any(|&g| g != 0.0));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let state = EncoderState::init(tiny(), 0).unwrap();
        let bad = SubsequenceSet {
            f_max: 5,
            blocks: vec![vec![0; 5]; 3],
            true_lengths: vec![5; 3],
        };
        assert!(matches!(state.forward(&bad), Err(Error::Shape(_))));
        assert!(EncoderState::from_params(tiny(), vec![0.0; 3]).is_err());
    }

    #[test]
    fn protein_embedding_contract() {
        let state = EncoderState::init(tiny(), 7).unwrap();
        let cfg = RAcutConfig { n: 3, l_max: 12, f_max: 4 };
        let a = state.protein_embedding(&protein("MKVLAGHWYQEE"), &cfg).unwrap();
        let b = state.protein_embedding(&protein("MKVLAGHWYQEE"), &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.0.len(), 8);
        let c = state.protein_embedding(&protein("MKVLAGHWYQEEPPPP"), &cfg).unwrap();
        assert_eq!(a, c);
        // Short protein: trailing empty block is excluded, result still finite.
        let short = state.protein_embedding(&protein("MKVLA"), &cfg).unwrap();
        assert!(short.0.iter().all(|v| v.is_finite()));
        assert!(state.protein_embedding(&protein("MK"), &cfg).is_err());
    }
}
