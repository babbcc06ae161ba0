//! Compound-protein interaction model on top of a frozen protein encoder.
//!
//! Compound SMILES characters go through a small attention stack and are mean
//! pooled; the result is concatenated with the frozen protein embedding, passed
//! through a two-layer fusion MLP and decoded to a probability.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use log::info;
use ndarray::{concatenate, Array1, Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::RAcutConfig;
use crate::checkpoint::{Container, TAG_CPI};
use crate::corpus::{CompoundRecord, CompoundVocabulary, InteractionRecord, ProteinRecord, DEFAULT_MAX_ATOMS};
use crate::encoder::{EncoderConfig, EncoderState, ProteinEmbedding};
use crate::error::{Error, Result};
use crate::eval::auroc;
use crate::nn::{gelu, gelu_grad, EncoderStack, Init, Linear, ParamLayout, StackCache, TensorRef};
use crate::optim::{Adam, AdamConfig};
use crate::rng::{derive_seed, derived_rng, rng_from_seed};

/// Probability clamp used by the cross-entropy loss.
pub const PROB_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct CompoundEmbedding(pub Array1<f64>);

#[derive(Debug, Clone, PartialEq)]
pub struct JointEmbedding(pub Array1<f64>);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CpiConfig {
    pub compound_dim: usize,
    pub compound_layers: usize,
    pub compound_heads: usize,
    pub compound_ffn_dim: usize,
    pub max_atoms: usize,
    pub fusion_dim: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// L2 coefficient of the fine-tuning objective.
    pub lambda: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub global_seed: u64,
}

impl Default for CpiConfig {
    fn default() -> Self {
        Self {
            compound_dim: 256,
            compound_layers: 2,
            compound_heads: 8,
            compound_ffn_dim: 1024,
            max_atoms: DEFAULT_MAX_ATOMS,
            fusion_dim: 256,
            epochs: 100,
            lr: 5e-5,
            batch_size: 64,
            lambda: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            global_seed: 0,
        }
    }
}

impl CpiConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.compound_dim == 0 || self.fusion_dim == 0 || self.compound_ffn_dim == 0 || self.max_atoms == 0 {
            return bad("model dimensions must be positive".into());
        }
        if self.compound_heads == 0 || !self.compound_dim.is_multiple_of(self.compound_heads) {
            return bad(format!(
                "compound_heads = {} must divide compound_dim = {}",
                self.compound_heads, self.compound_dim
            ));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be at least 1".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(self.lambda >= 0.0) {
            return bad("lr and lambda must be finite and nonnegative".into());
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
struct CpiArchitecture {
    layout: ParamLayout,
    char_embed: TensorRef,
    position: TensorRef,
    stack: EncoderStack,
    fuse_in: Linear,
    fuse_out: Linear,
    decoder: Linear,
}

impl CpiArchitecture {
    fn new(cfg: &CpiConfig, protein_dim: usize) -> Self {
        let d = cfg.compound_dim;
        let mut layout = ParamLayout::default();
        let emb = Init::Uniform { fan_in: d };
        let char_embed = layout.add("compound.token", CompoundVocabulary::default().size(), d, emb);
        let position = layout.add("compound.position", cfg.max_atoms, d, emb);
        let stack = EncoderStack::new(&mut layout, "compound", cfg.compound_layers, d, cfg.compound_heads, cfg.compound_ffn_dim);
        let fuse_in = Linear::new(&mut layout, "fusion.in", d + protein_dim, cfg.fusion_dim);
        let fuse_out = Linear::new(&mut layout, "fusion.out", cfg.fusion_dim, cfg.fusion_dim);
        let decoder = Linear::new(&mut layout, "decoder", cfg.fusion_dim, 1);
        Self {
            layout,
            char_embed,
            position,
            stack,
            fuse_in,
            fuse_out,
            decoder,
        }
    }
}

/// Trainable compound encoder, fusion and decoder plus the frozen protein encoder.
#[derive(Debug, Clone)]
pub struct CpiModel {
    config: CpiConfig,
    arch: CpiArchitecture,
    params: Vec<f64>,
    frozen: EncoderState,
    racut: RAcutConfig,
}

struct PairCache {
    tokens: Vec<u16>,
    stack: StackCache,
    joint_in: Array2<f64>,
    hidden_pre: Array2<f64>,
    hidden: Array2<f64>,
    z_joint: Array2<f64>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl CpiModel {
    pub fn new(config: CpiConfig, frozen: EncoderState, racut: RAcutConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let enc = frozen.config();
        if racut.n != enc.n || racut.f_max != enc.f_max {
            return Err(Error::Config(format!(
                "segmentation n={} f_max={} does not match encoder n={} f_max={}",
                racut.n, racut.f_max, enc.n, enc.f_max
            )));
        }
        let arch = CpiArchitecture::new(&config, enc.embed_dim);
        let params = arch.layout.initialize(&mut rng_from_seed(seed));
        Ok(Self {
            config,
            arch,
            params,
            frozen,
            racut,
        })
    }

    pub fn config(&self) -> &CpiConfig {
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

    pub fn frozen(&self) -> &EncoderState {
        &self.frozen
    }

    pub fn racut(&self) -> &RAcutConfig {
        &self.racut
    }

    /// Decoder weight and bias locations, exposed for gradient checks.
    pub fn decoder(&self) -> &Linear {
        &self.arch.decoder
    }

    pub fn protein_embedding(&self, protein: &ProteinRecord) -> Result<ProteinEmbedding> {
        self.frozen.protein_embedding(protein, &self.racut)
    }

    fn compound_forward(&self, compound: &CompoundRecord) -> Result<(Vec<u16>, StackCache, Array2<f64>)> {
        if compound.tokens.is_empty() {
            return Err(Error::Validation(format!("compound {:?} has no tokens", compound.smiles)));
        }
        let vocab = CompoundVocabulary::default().size();
        if let Some(&t) = compound.tokens.iter().find(|&&t| t as usize >= vocab) {
            return Err(Error::Validation(format!("compound token id {t} outside vocabulary")));
        }
        let tokens: Vec<u16> = compound.tokens.iter().take(self.config.max_atoms).copied().collect();
        let p = &self.params;
        let emb = self.arch.char_embed.view(p);
        let pos = self.arch.position.view(p);
        let mut x = Array2::zeros((tokens.len(), self.config.compound_dim));
        for (j, mut row) in x.rows_mut().into_iter().enumerate() {
            row.assign(&emb.row(tokens[j] as usize));
            row += &pos.row(j);
        }
        let mask = vec![true; tokens.len()];
        let (hidden, cache) = self.arch.stack.forward(p, x, &mask);
        let pooled = hidden.mean_axis(Axis(0)).expect("nonempty").insert_axis(Axis(0));
        Ok((tokens, cache, pooled))
    }

    pub fn encode_compound(&self, compound: &CompoundRecord) -> Result<CompoundEmbedding> {
        let (_, _, pooled) = self.compound_forward(compound)?;
        Ok(CompoundEmbedding(pooled.row(0).to_owned()))
    }

    fn fuse_rows(&self, joint_in: &Array2<f64>) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let pre = self.arch.fuse_in.forward(&self.params, &joint_in.view());
        let hidden = pre.mapv(gelu);
        let out = self.arch.fuse_out.forward(&self.params, &hidden.view());
        (pre, hidden, out)
    }

    pub fn fuse(&self, z_comp: &CompoundEmbedding, z_prot: &ProteinEmbedding) -> Result<JointEmbedding> {
        let expected = (self.config.compound_dim, self.frozen.config().embed_dim);
        if (z_comp.0.len(), z_prot.0.len()) != expected {
            return Err(Error::Dimension(format!(
                "fusion expects compound {} and protein {} values, got {} and {}",
                expected.0,
                expected.1,
                z_comp.0.len(),
                z_prot.0.len()
            )));
        }
        let joint_in = concatenate![Axis(0), z_comp.0, z_prot.0].insert_axis(Axis(0));
        let (_, _, out) = self.fuse_rows(&joint_in);
        Ok(JointEmbedding(out.row(0).to_owned()))
    }

    fn logit(&self, z_joint: &Array2<f64>) -> f64 {
        self.arch.decoder.forward(&self.params, &z_joint.view())[[0, 0]]
    }

    pub fn predict(&self, z_joint: &JointEmbedding) -> f64 {
        sigmoid(self.logit(&z_joint.0.view().insert_axis(Axis(0)).to_owned()))
    }

    fn forward_pair(&self, compound: &CompoundRecord, z_prot: &ProteinEmbedding) -> Result<(f64, PairCache)> {
        let (tokens, stack, z_comp) = self.compound_forward(compound)?;
        if z_prot.0.len() != self.frozen.config().embed_dim {
            return Err(Error::Dimension("protein embedding dimension mismatch".into()));
        }
        let joint_in = concatenate![Axis(1), z_comp, z_prot.0.view().insert_axis(Axis(0))];
        let (hidden_pre, hidden, z_joint) = self.fuse_rows(&joint_in);
        let logit = self.logit(&z_joint);
        Ok((
            logit,
            PairCache {
                tokens,
                stack,
                joint_in,
                hidden_pre,
                hidden,
                z_joint,
            },
        ))
    }

    fn backward_pair(&self, cache: &PairCache, g_logit: f64, grads: &mut [f64]) {
        let p = &self.params;
        let g = Array2::from_elem((1, 1), g_logit);
        let g_joint = self.arch.decoder.backward(p, grads, &cache.z_joint.view(), &g);
        let g_hidden = self.arch.fuse_out.backward(p, grads, &cache.hidden.view(), &g_joint);
        let g_pre = &g_hidden * &cache.hidden_pre.mapv(gelu_grad);
        let g_in = self.arch.fuse_in.backward(p, grads, &cache.joint_in.view(), &g_pre);
        let d = self.config.compound_dim;
        let g_comp = g_in.slice(ndarray::s![.., ..d]).to_owned();
        let len = cache.tokens.len();
        let g_hidden_seq = Array2::from_shape_fn((len, d), |(_, k)| g_comp[[0, k]] / len as f64);
        let g_x = self.arch.stack.backward(p, grads, &cache.stack, &g_hidden_seq);
        for (j, g_row) in g_x.rows().into_iter().enumerate() {
            let mut emb = self.arch.char_embed.view_mut(grads);
            let mut r = emb.row_mut(cache.tokens[j] as usize);
            r += &g_row;
            let mut pos = self.arch.position.view_mut(grads);
            let mut r = pos.row_mut(j);
            r += &g_row;
        }
    }

    /// Interaction probability for one pair.
    pub fn predict_pair(&self, compound: &CompoundRecord, z_prot: &ProteinEmbedding) -> Result<f64> {
        Ok(sigmoid(self.forward_pair(compound, z_prot)?.0))
    }

    /// Summed cross-entropy over `batch` plus `(λ/2)·‖Θ‖²`, with the gradient
    /// of the same objective accumulated into `grads`.
    pub fn loss_and_grad(&self, batch: &[(&CompoundRecord, &ProteinEmbedding, u8)], grads: &mut [f64]) -> Result<f64> {
        if grads.len() != self.params.len() {
            return Err(Error::Shape("gradient buffer does not match parameter count".into()));
        }
        let mut loss = 0.0;
        for &(compound, z_prot, label) in batch {
            let (logit, cache) = self.forward_pair(compound, z_prot)?;
            let p = sigmoid(logit);
            let y = f64::from(label);
            let pc = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            loss -= y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
            let g_p = if p > PROB_EPS && p < 1.0 - PROB_EPS {
                -y / pc + (1.0 - y) / (1.0 - pc)
            } else {
                0.0
            };
            self.backward_pair(&cache, g_p * p * (1.0 - p), grads);
        }
        let lambda = self.config.lambda;
        loss += 0.5 * lambda * self.params.iter().map(|v| v * v).sum::<f64>();
        for (g, &v) in grads.iter_mut().zip(&self.params) {
            *g += lambda * v;
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("fine-tuning loss {loss}")));
        }
        Ok(loss)
    }

    pub fn loss(&self, batch: &[(&CompoundRecord, &ProteinEmbedding, u8)]) -> Result<f64> {
        let mut scratch = vec![0.0; self.params.len()];
        self.loss_and_grad(batch, &mut scratch)
    }
}

/// Summed binary cross-entropy with probabilities clamped to `[eps, 1-eps]`,
/// plus `(λ/2)·‖Θ‖²`.
pub fn cpi_loss(predictions: &[f64], labels: &[u8], params: &[f64], lambda: f64) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let data: f64 = predictions
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            let y = f64::from(y);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(data + 0.5 * lambda * params.iter().map(|v| v * v).sum::<f64>())
}

/// Frozen protein embeddings keyed by the canonical sequence string.
#[derive(Debug, Default, Clone)]
pub struct ProteinEmbeddingCache {
    map: HashMap<String, ProteinEmbedding>,
}

impl ProteinEmbeddingCache {
    pub fn get_or_compute(&mut self, model: &CpiModel, protein: &ProteinRecord) -> Result<&ProteinEmbedding> {
        let key = protein.key();
        if !self.map.contains_key(&key) {
            let z = model.protein_embedding(protein)?;
            self.map.insert(key.clone(), z);
        }
        Ok(&self.map[&key])
    }

    pub fn fill(&mut self, model: &CpiModel, records: &[InteractionRecord]) -> Result<()> {
        for r in records {
            self.get_or_compute(model, &r.protein)?;
        }
        Ok(())
    }

    pub fn get(&self, protein: &ProteinRecord) -> Option<&ProteinEmbedding> {
        self.map.get(&protein.key())
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Scores for `records`, filling `cache` as needed.
pub fn predict_records(model: &CpiModel, records: &[InteractionRecord], cache: &mut ProteinEmbeddingCache) -> Result<Vec<f64>> {
    cache.fill(model, records)?;
    records
        .iter()
        .map(|r| model.predict_pair(&r.compound, cache.get(&r.protein).expect("filled")))
        .collect()
}

/// Mean per-pair cross-entropy (no regularizer).
pub fn mean_bce(model: &CpiModel, records: &[InteractionRecord], cache: &mut ProteinEmbeddingCache) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Validation("no records".into()));
    }
    let preds = predict_records(model, records, cache)?;
    let labels: Vec<u8> = records.iter().map(|r| r.label).collect();
    Ok(cpi_loss(&preds, &labels, &[], 0.0)? / records.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinetuneRecord {
    pub epoch: usize,
    pub steps: usize,
    /// Sum of the minibatch objectives seen during the epoch.
    pub train_loss: f64,
    pub valid_auroc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FinetuneLog {
    pub records: Vec<FinetuneRecord>,
}

impl FinetuneLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,steps,train_loss,valid_auroc\n");
        for r in &self.records {
            let auc = r.valid_auroc.map(|a| a.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{auc}", r.epoch, r.steps, r.train_loss);
        }
        out
    }
}

/// Index of the record with the highest validation AUROC; later epochs win
/// ties. Falls back to the last record when no AUROC is defined.
pub fn select_best_epoch(log: &[FinetuneRecord]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in log.iter().enumerate() {
        if let Some(a) = r.valid_auroc {
            if best.is_none_or(|(_, b)| a >= b) {
                best = Some((i, a));
            }
        }
    }
    best.map(|(i, _)| i).or_else(|| log.len().checked_sub(1))
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub model: CpiModel,
    pub log: FinetuneLog,
    pub selected_epoch: usize,
    pub cache: ProteinEmbeddingCache,
}

const STREAM_INIT: u64 = 11;
const STREAM_ORDER: u64 = 12;

/// Trains the compound encoder, fusion and decoder; the protein encoder is
/// only read. Returns the model from the epoch with the best validation AUROC.
pub fn finetune_run(
    train: &[InteractionRecord],
    valid: &[InteractionRecord],
    frozen: &EncoderState,
    racut: &RAcutConfig,
    config: &CpiConfig,
) -> Result<FinetuneOutcome> {
    if train.is_empty() || valid.is_empty() {
        return Err(Error::Validation("fine-tuning needs nonempty train and validation splits".into()));
    }
    let seed = config.global_seed;
    let mut model = CpiModel::new(*config, frozen.clone(), *racut, derive_seed(seed, &[STREAM_INIT]))?;
    let mut cache = ProteinEmbeddingCache::default();
    cache.fill(&model, train)?;
    cache.fill(&model, valid)?;
    let valid_labels: Vec<u8> = valid.iter().map(|r| r.label).collect();

    let mut adam = Adam::new(config.adam(), model.params.len());
    let mut log = FinetuneLog::default();
    let mut snapshots: Vec<Vec<f64>> = Vec::new();
    let mut steps = 0;
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut derived_rng(seed, &[STREAM_ORDER, epoch as u64]));
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(&CompoundRecord, &ProteinEmbedding, u8)> = chunk
                .iter()
                .map(|&i| (&train[i].compound, cache.get(&train[i].protein).expect("filled"), train[i].label))
                .collect();
            let mut grads = vec![0.0; model.params.len()];
            epoch_loss += model.loss_and_grad(&batch, &mut grads)?;
            adam.step(&mut model.params, &grads);
            steps += 1;
        }
        let preds = predict_records(&model, valid, &mut cache)?;
        let valid_auroc = match auroc(&preds, &valid_labels) {
            Ok(a) => Some(a),
            Err(Error::UndefinedMetric(_)) => None,
            Err(e) => return Err(e),
        };
        info!("fine-tune epoch {epoch}: loss {epoch_loss:.4} validation AUROC {valid_auroc:?}");
        log.records.push(FinetuneRecord {
            epoch,
            steps,
            train_loss: epoch_loss,
            valid_auroc,
        });
        snapshots.push(model.params.clone());
    }
    let selected_epoch = select_best_epoch(&log.records).expect("epochs >= 1");
    model.params = snapshots.swap_remove(selected_epoch);
    Ok(FinetuneOutcome {
        model,
        log,
        selected_epoch,
        cache,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CpiHeader {
    cpi: CpiConfig,
    encoder: EncoderConfig,
    racut: RAcutConfig,
    global_seed: u64,
    selected_epoch: usize,
}

/// Saves the fine-tuned model (with its frozen encoder) in the checkpoint container.
pub fn save_cpi_model(model: &CpiModel, selected_epoch: usize, path: &Path) -> Result<()> {
    cpi_container(model, selected_epoch).save(path)
}

pub fn cpi_container(model: &CpiModel, selected_epoch: usize) -> Container {
    let header = CpiHeader {
        cpi: model.config,
        encoder: *model.frozen.config(),
        racut: model.racut,
        global_seed: model.config.global_seed,
        selected_epoch,
    };
    Container {
        tag: TAG_CPI,
        header: serde_json::to_string_pretty(&header).expect("header serializes"),
        sections: vec![
            ("cpi_params".into(), model.params.clone()),
            ("encoder_params".into(), model.frozen.params().to_vec()),
        ],
    }
}

/// Loads a model written by [`save_cpi_model`]; returns it with the selected epoch.
pub fn load_cpi_model(path: &Path) -> Result<(CpiModel, usize)> {
    let c = Container::load(path)?;
    if c.tag != TAG_CPI {
        return Err(Error::Checkpoint(format!("{} is not a CPI model checkpoint", path.display())));
    }
    let h: CpiHeader = serde_json::from_str(&c.header).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    let frozen = EncoderState::from_params(h.encoder, c.section("encoder_params")?.to_vec())?;
    let mut model = CpiModel::new(h.cpi, frozen, h.racut, 0)?;
    let params = c.section("cpi_params")?;
    if params.len() != model.params.len() {
        return Err(Error::Shape(format!(
            "checkpoint has {} CPI parameters, config implies {}",
            params.len(),
            model.params.len()
        )));
    }
    model.params.copy_from_slice(params);
    Ok((model, h.selected_epoch))
}
