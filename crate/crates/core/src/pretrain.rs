//! Self-supervised reordering pretraining: training step, epoch loop with
//! per-epoch re-augmentation, validation-based model selection, checkpoints.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::{make_pretrain_example, NoiseSpec, PretrainExample, RAcutConfig};
use crate::checkpoint::{Container, TAG_ENCODER};
use crate::corpus::{PretrainDataset, ProteinRecord};
use crate::encoder::{EncoderConfig, EncoderState};
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig};
use crate::perm::{permutation_accuracy, round_to_permutation, SinkhornConfig, DEFAULT_EVAL_ITERATIONS};
use crate::rng::{derive_seed, derived_rng};

/// Number of log records kept inside each checkpoint header.
pub const LOG_TAIL: usize = 50;

// Seed-derivation stream tags.
const STREAM_INIT: u64 = 1;
const STREAM_VALID_SPLIT: u64 = 2;
const STREAM_VALID_EXAMPLE: u64 = 3;
const STREAM_ORDER: u64 = 4;
const STREAM_EXAMPLE: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub sinkhorn: SinkhornConfig,
    pub eval_sinkhorn_iterations: usize,
    pub noise: NoiseSpec,
    pub global_seed: u64,
    pub validation_fraction: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 5e-5,
            batch_size: 64,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            sinkhorn: SinkhornConfig::default(),
            eval_sinkhorn_iterations: DEFAULT_EVAL_ITERATIONS,
            noise: NoiseSpec::default(),
            global_seed: 0,
            validation_fraction: 0.05,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be finite and nonnegative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be >= 0");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction must lie in [0, 1)");
        }
        self.sinkhorn.validate()?;
        self.noise.validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn eval_sinkhorn(&self) -> SinkhornConfig {
        SinkhornConfig {
            m: self.eval_sinkhorn_iterations,
            eps: self.sinkhorn.eps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub perm_acc: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<StepRecord>,
}

pub const LOG_CSV_HEADER: &str = "epoch,step,loss,perm_acc,wall_ms";

impl TrainLog {
    pub fn push(&mut self, record: StepRecord) {
        debug_assert!(self
            .records
            .last()
            .is_none_or(|r| (r.epoch, r.step) < (record.epoch, record.step)));
        self.records.push(record);
    }

    pub fn csv_row(r: &StepRecord) -> String {
        format!("{},{},{},{},{}", r.epoch, r.step, r.loss, r.perm_acc, r.wall_ms)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(LOG_CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(out, "{}", Self::csv_row(r));
        }
        out
    }
}

/// Log entry stored in checkpoints; wall time is left out so checkpoints
/// stay reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoggedStep {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub perm_acc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub global_seed: u64,
    pub epoch: usize,
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EncoderHeader {
    encoder: EncoderConfig,
    racut: RAcutConfig,
    pretrain: PretrainConfig,
    provenance: Provenance,
    optimizer_steps: u64,
    validation_accuracy: Option<f64>,
    log_tail: Vec<LoggedStep>,
}

/// A pretrained encoder together with optimizer state and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainCheckpoint {
    pub encoder: EncoderConfig,
    pub racut: RAcutConfig,
    pub pretrain: PretrainConfig,
    pub provenance: Provenance,
    pub validation_accuracy: Option<f64>,
    pub log_tail: Vec<LoggedStep>,
    pub params: Vec<f64>,
    pub optimizer: Adam,
}

impl PretrainCheckpoint {
    pub fn to_container(&self) -> Container {
        let header = EncoderHeader {
            encoder: self.encoder,
            racut: self.racut,
            pretrain: self.pretrain,
            provenance: self.provenance,
            optimizer_steps: self.optimizer.t,
            validation_accuracy: self.validation_accuracy,
            log_tail: self.log_tail.clone(),
        };
        Container {
            tag: TAG_ENCODER,
            header: serde_json::to_string_pretty(&header).expect("header serializes"),
            sections: vec![
                ("params".into(), self.params.clone()),
                ("adam_m".into(), self.optimizer.m.clone()),
                ("adam_v".into(), self.optimizer.v.clone()),
            ],
        }
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.tag != TAG_ENCODER {
            return Err(Error::Checkpoint(format!(
                "section tag {:?} is not an encoder checkpoint",
                String::from_utf8_lossy(&c.tag)
            )));
        }
        let h: EncoderHeader =
            serde_json::from_str(&c.header).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        let optimizer = Adam::from_state(
            h.pretrain.adam(),
            c.section("adam_m")?.to_vec(),
            c.section("adam_v")?.to_vec(),
            h.optimizer_steps,
        )?;
        Ok(Self {
            encoder: h.encoder,
            racut: h.racut,
            pretrain: h.pretrain,
            provenance: h.provenance,
            validation_accuracy: h.validation_accuracy,
            log_tail: h.log_tail,
            params: c.section("params")?.to_vec(),
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }

    pub fn encoder_state(&self) -> Result<EncoderState> {
        EncoderState::from_params(self.encoder, self.params.clone())
    }

    /// Encoder state, failing with a field-by-field diff if the stored
    /// config differs from `expected`.
    pub fn encoder_state_matching(&self, expected: &EncoderConfig) -> Result<EncoderState> {
        if &self.encoder != expected {
            return Err(Error::Shape(format!(
                "checkpoint encoder config differs: {}",
                config_diff(&self.encoder, expected)
            )));
        }
        self.encoder_state()
    }
}

fn config_diff(found: &EncoderConfig, expected: &EncoderConfig) -> String {
    let pairs = [
        ("embed_dim", found.embed_dim, expected.embed_dim),
        ("layers", found.layers, expected.layers),
        ("heads", found.heads, expected.heads),
        ("ffn_dim", found.ffn_dim, expected.ffn_dim),
        ("n", found.n, expected.n),
        ("f_max", found.f_max, expected.f_max),
        ("vocab_size", found.vocab_size, expected.vocab_size),
    ];
    pairs
        .iter()
        .filter(|(_, a, b)| a != b)
        .map(|(name, a, b)| format!("{name}: checkpoint {a} vs config {b}"))
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub perm_acc: f64,
}

/// One optimizer step on the mean reordering loss of `batch`.
///
/// The reported loss is the batch-mean NLL plus `(wd/2)·‖θ‖²`, evaluated
/// before the update; accuracy uses the rounded training-time Q.
pub fn pretrain_step(
    state: &mut EncoderState,
    optimizer: &mut Adam,
    batch: &[PretrainExample],
    config: &PretrainConfig,
) -> Result<StepStats> {
    let n = state.config().n;
    if batch.is_empty() {
        return Err(Error::Validation("empty batch".into()));
    }
    if let Some(bad) = batch.iter().find(|e| e.target.n() != n) {
        return Err(Error::Shape(format!("example with n={} in a batch for n={n}", bad.target.n())));
    }
    let mut grads = vec![0.0; state.param_count()];
    let mut loss_sum = 0.0;
    let mut acc_sum = 0.0;
    for ex in batch {
        let (loss, q) = state.reorder_loss_and_grad(ex, &config.sinkhorn, &mut grads)?;
        loss_sum += loss;
        acc_sum += permutation_accuracy(&round_to_permutation(&q), &ex.target)?;
    }
    let scale = 1.0 / batch.len() as f64;
    grads.iter_mut().for_each(|g| *g *= scale);
    let decay = 0.5 * config.weight_decay * state.params().iter().map(|p| p * p).sum::<f64>();
    let loss = loss_sum * scale + decay;
    if !loss.is_finite() {
        let seeds: Vec<u64> = batch.iter().map(|e| e.seed).collect();
        return Err(Error::NonFinite(format!(
            "training loss {loss} after {} optimizer steps; batch example seeds {seeds:?}",
            optimizer.t
        )));
    }
    optimizer.step(state.params_mut(), &grads);
    Ok(StepStats {
        loss,
        perm_acc: acc_sum * scale,
    })
}

/// Mean slot accuracy of rounded predictions over `examples`.
pub fn reordering_accuracy(state: &EncoderState, examples: &[PretrainExample], sk: &SinkhornConfig) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Validation("no examples to evaluate".into()));
    }
    let mut total = 0.0;
    for ex in examples {
        let q = state.predict_q(&ex.shuffled, sk)?;
        total += permutation_accuracy(&round_to_permutation(&q), &ex.target)?;
    }
    Ok(total / examples.len() as f64)
}

/// Fresh examples for `proteins`, one per protein, seeded by `(global_seed, stream, index)`.
pub fn generate_examples(
    proteins: &[&ProteinRecord],
    racut: &RAcutConfig,
    noise: &NoiseSpec,
    global_seed: u64,
    stream: &[u64],
) -> Result<Vec<PretrainExample>> {
    proteins
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut path = stream.to_vec();
            path.push(i as u64);
            make_pretrain_example(p, racut, noise, derive_seed(global_seed, &path))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub final_checkpoint: PretrainCheckpoint,
    pub best_checkpoint: PretrainCheckpoint,
    pub log: TrainLog,
    /// Held-out reordering accuracy after each epoch (empty without a validation slice).
    pub validation_history: Vec<f64>,
    pub skipped: usize,
}

pub struct PretrainSetup<'a> {
    pub racut: RAcutConfig,
    pub encoder: EncoderConfig,
    pub pretrain: PretrainConfig,
    /// Checkpoints and the CSV log are written here when set.
    pub out_dir: Option<&'a Path>,
}

fn checkpoint_of(
    state: &EncoderState,
    optimizer: &Adam,
    setup: &PretrainSetup,
    provenance: Provenance,
    validation_accuracy: Option<f64>,
    log: &TrainLog,
) -> PretrainCheckpoint {
    let tail_start = log.records.len().saturating_sub(LOG_TAIL);
    PretrainCheckpoint {
        encoder: setup.encoder,
        racut: setup.racut,
        pretrain: setup.pretrain,
        provenance,
        validation_accuracy,
        log_tail: log.records[tail_start..]
            .iter()
            .map(|r| LoggedStep {
                epoch: r.epoch,
                step: r.step,
                loss: r.loss,
                perm_acc: r.perm_acc,
            })
            .collect(),
        params: state.params().to_vec(),
        optimizer: optimizer.clone(),
    }
}

/// Full pretraining run over `dataset`.
pub fn pretrain_run(dataset: &PretrainDataset, setup: &PretrainSetup) -> Result<PretrainOutcome> {
    let cfg = &setup.pretrain;
    cfg.validate()?;
    setup.racut.validate()?;
    setup.encoder.validate()?;
    if setup.encoder.n != setup.racut.n || setup.encoder.f_max != setup.racut.f_max {
        return Err(Error::Config(format!(
            "encoder (n={}, f_max={}) and segmentation (n={}, f_max={}) disagree",
            setup.encoder.n, setup.encoder.f_max, setup.racut.n, setup.racut.f_max
        )));
    }

    let admissible: Vec<&ProteinRecord> = dataset.proteins.iter().filter(|p| p.len() >= setup.racut.n).collect();
    let skipped = dataset.len() - admissible.len();
    if skipped > 0 {
        warn!("skipping {skipped} proteins shorter than n = {}", setup.racut.n);
    }
    if admissible.is_empty() {
        return Err(Error::Validation("pretraining dataset is empty after admissibility filtering".into()));
    }

    let seed = cfg.global_seed;
    let mut order: Vec<usize> = (0..admissible.len()).collect();
    order.shuffle(&mut derived_rng(seed, &[STREAM_VALID_SPLIT]));
    let n_valid = if admissible.len() >= 2 && cfg.validation_fraction > 0.0 {
        ((admissible.len() as f64 * cfg.validation_fraction).round() as usize).clamp(1, admissible.len() - 1)
    } else {
        0
    };
    let (valid_idx, train_idx) = order.split_at(n_valid);
    let train: Vec<&ProteinRecord> = train_idx.iter().map(|&i| admissible[i]).collect();
    let valid: Vec<&ProteinRecord> = valid_idx.iter().map(|&i| admissible[i]).collect();
    let valid_examples = generate_examples(&valid, &setup.racut, &cfg.noise, seed, &[STREAM_VALID_EXAMPLE])?;

    let mut state = EncoderState::init(setup.encoder, derive_seed(seed, &[STREAM_INIT]))?;
    let mut optimizer = Adam::new(cfg.adam(), state.param_count());
    let mut log = TrainLog::default();
    let mut validation_history = Vec::new();

    let mut csv = match setup.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir.join("checkpoints")).map_err(|e| Error::io(dir, e))?;
            let path = dir.join("train_log.csv");
            let mut f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            writeln!(f, "{LOG_CSV_HEADER}").map_err(|e| Error::io(&path, e))?;
            Some((f, path))
        }
        None => None,
    };

    let started = Instant::now();
    let mut best: Option<(f64, PretrainCheckpoint)> = None;
    let mut step = 0usize;
    let mut last = None;
    for epoch in 0..cfg.epochs {
        let mut epoch_order: Vec<usize> = (0..train.len()).collect();
        epoch_order.shuffle(&mut derived_rng(seed, &[STREAM_ORDER, epoch as u64]));
        for chunk in epoch_order.chunks(cfg.batch_size) {
            let batch = chunk
                .iter()
                .map(|&i| {
                    let ex_seed = derive_seed(seed, &[STREAM_EXAMPLE, epoch as u64, i as u64]);
                    make_pretrain_example(train[i], &setup.racut, &cfg.noise, ex_seed)
                })
                .collect::<Result<Vec<_>>>()?;
            let stats = pretrain_step(&mut state, &mut optimizer, &batch, cfg)?;
            let record = StepRecord {
                epoch,
                step,
                loss: stats.loss,
                perm_acc: stats.perm_acc,
                wall_ms: started.elapsed().as_millis() as u64,
            };
            if let Some((f, path)) = csv.as_mut() {
                writeln!(f, "{}", TrainLog::csv_row(&record)).map_err(|e| Error::io(path.as_path(), e))?;
            }
            log.push(record);
            step += 1;
        }

        let val_acc = if valid_examples.is_empty() {
            None
        } else {
            Some(reordering_accuracy(&state, &valid_examples, &cfg.eval_sinkhorn())?)
        };
        if let Some(acc) = val_acc {
            validation_history.push(acc);
        }
        let provenance = Provenance {
            global_seed: seed,
            epoch,
            step,
        };
        let ckpt = checkpoint_of(&state, &optimizer, setup, provenance, val_acc, &log);
        let last_loss = log.records.last().map(|r| r.loss).unwrap_or(f64::NAN);
        info!("epoch {epoch}: loss {last_loss:.4} validation accuracy {val_acc:?}");
        if let Some(dir) = setup.out_dir {
            ckpt.save(&dir.join("checkpoints").join(format!("epoch_{epoch:04}.ckpt")))?;
        }
        let score = val_acc.unwrap_or(f64::NEG_INFINITY);
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            best = Some((score, ckpt.clone()));
        }
        last = Some(ckpt);
    }

    let final_checkpoint = last.expect("epochs >= 1");
    let best_checkpoint = match best {
        Some((s, c)) if s.is_finite() => c,
        _ => final_checkpoint.clone(),
    };
    if let Some(dir) = setup.out_dir {
        final_checkpoint.save(&dir.join("final.ckpt"))?;
        best_checkpoint.save(&dir.join("best.ckpt"))?;
    }
    Ok(PretrainOutcome {
        final_checkpoint,
        best_checkpoint,
        log,
        validation_history,
        skipped,
    })
}

/// Paths written by [`pretrain_run`] under an output directory.
pub fn checkpoint_paths(out_dir: &Path) -> (PathBuf, PathBuf) {
    (out_dir.join("final.ckpt"), out_dir.join("best.ckpt"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::PROTEIN_VOCAB_SIZE;
    use crate::synth::{motif_corpus, MotifCorpusConfig};

    fn tiny_encoder(n: usize, f_max: usize) -> EncoderConfig {
        EncoderConfig {
            embed_dim: 16,
            layers: 1,
            heads: 2,
            ffn_dim: 32,
            n,
            f_max,
            vocab_size: PROTEIN_VOCAB_SIZE,
        }
    }

    fn corpus(count: usize, seed: u64) -> (Vec<ProteinRecord>, RAcutConfig) {
        let cfg = MotifCorpusConfig {
            sequences: count,
            families: 4,
            l_max: 24,
            min_len_fraction: 0.9,
            noise_rate: 0.1,
        };
        (motif_corpus(&cfg, seed), RAcutConfig::new(4, 24).unwrap())
    }

    fn quick_config(seed: u64) -> PretrainConfig {
        PretrainConfig {
            epochs: 2,
            lr: 3e-3,
            batch_size: 8,
            global_seed: seed,
            validation_fraction: 0.1,
            ..Default::default()
        }
    }

    #[test]
    fn zero_lr_step_keeps_params() {
        let (proteins, racut) = corpus(4, 1);
        let refs: Vec<&ProteinRecord> = proteins.iter().collect();
        let batch = generate_examples(&refs, &racut, &NoiseSpec::default(), 0, &[9]).unwrap();
        let mut state = EncoderState::init(tiny_encoder(4, 6), 0).unwrap();
        let before = state.params().to_vec();
        let cfg = PretrainConfig { lr: 0.0, ..quick_config(0) };
        let mut opt = Adam::new(cfg.adam(), state.param_count());
        let stats = pretrain_step(&mut state, &mut opt, &batch, &cfg).unwrap();
        assert_eq!(state.params(), before.as_slice());
        assert!(stats.loss.is_finite() && stats.loss > 0.0);
    }

    #[test]
    fn repeated_steps_reduce_loss() {
        let (proteins, racut) = corpus(8, 2);
        let refs: Vec<&ProteinRecord> = proteins.iter().collect();
        let batch = generate_examples(&refs, &racut, &NoiseSpec::identity(), 0, &[9]).unwrap();
        let mut state = EncoderState::init(tiny_encoder(4, 6), 0).unwrap();
        let cfg = PretrainConfig { lr: 3e-3, ..quick_config(0) };
        let mut opt = Adam::new(cfg.adam(), state.param_count());
        let first = pretrain_step(&mut state, &mut opt, &batch, &cfg).unwrap().loss;
        let mut last = first;
        for _ in 0..49 {
            last = pretrain_step(&mut state, &mut opt, &batch, &cfg).unwrap().loss;
        }
        assert!(last < 0.5 * first, "first {first} last {last}");
    }

    #[test]
    fn step_is_deterministic() {
        let (proteins, racut) = corpus(4, 3);
        let refs: Vec<&ProteinRecord> = proteins.iter().collect();
        let batch = generate_examples(&refs, &racut, &NoiseSpec::default(), 0, &[9]).unwrap();
        let cfg = quick_config(0);
        let run = || {
            let mut state = EncoderState::init(tiny_encoder(4, 6), 5).unwrap();
            let mut opt = Adam::new(cfg.adam(), state.param_count());
            pretrain_step(&mut state, &mut opt, &batch, &cfg).unwrap();
            (state, opt)
        };
        let (a, oa) = run();
        let (b, ob) = run();
        assert_eq!(a.params(), b.params());
        assert_eq!(oa, ob);
    }

    #[test]
    fn empty_batch_and_bad_config_rejected() {
        let mut state = EncoderState::init(tiny_encoder(4, 6), 5).unwrap();
        let cfg = quick_config(0);
        let mut opt = Adam::new(cfg.adam(), state.param_count());
        assert!(pretrain_step(&mut state, &mut opt, &[], &cfg).is_err());
        assert!(PretrainConfig { epochs: 0, ..cfg }.validate().is_err());
        assert!(PretrainConfig { batch_size: 0, ..cfg }.validate().is_err());
    }

    #[test]
    fn run_is_reproducible_and_writes_files() {
        let (proteins, racut) = corpus(40, 4);
        let dataset = PretrainDataset { proteins };
        let dir = tempfile::tempdir().unwrap();
        let setup = PretrainSetup {
            racut,
            encoder: tiny_encoder(4, 6),
            pretrain: quick_config(11),
            out_dir: Some(dir.path()),
        };
        let a = pretrain_run(&dataset, &setup).unwrap();
        let b = pretrain_run(&dataset, &PretrainSetup { out_dir: None, ..setup }).unwrap();
        assert_eq!(a.final_checkpoint, b.final_checkpoint);
        assert_eq!(a.final_checkpoint.to_container().to_bytes(), b.final_checkpoint.to_container().to_bytes());
        assert_eq!(a.validation_history.len(), 2);

        let (final_path, best_path) = checkpoint_paths(dir.path());
        let loaded = PretrainCheckpoint::load(&final_path).unwrap();
        assert_eq!(loaded, a.final_checkpoint);
        assert_eq!(loaded.to_container().to_bytes(), std::fs::read(&final_path).unwrap());
        assert!(best_path.exists());
        assert!(dir.path().join("checkpoints/epoch_0001.ckpt").exists());

        let csv = std::fs::read_to_string(dir.path().join("train_log.csv")).unwrap();
        let rows: Vec<(usize, usize)> = csv
            .lines()
            .skip(1)
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                (f[0].parse().unwrap(), f[1].parse().unwrap())
            })
            .collect();
        assert_eq!(rows.len(), a.log.records.len());
        assert!(rows.windows(2).all(|w| w[0] < w[1]));
        assert!(a.log.records.iter().all(|r| r.loss.is_finite() && r.loss >= 0.0));
    }

    #[test]
    fn empty_dataset_rejected() {
        let setup = PretrainSetup {
            racut: RAcutConfig::new(4, 24).unwrap(),
            encoder: tiny_encoder(4, 6),
            pretrain: quick_config(0),
            out_dir: None,
        };
        assert!(pretrain_run(&PretrainDataset::default(), &setup).is_err());
    }

    #[test]
    fn mismatched_config_is_shape_error() {
        let (proteins, racut) = corpus(20, 4);
        let setup = PretrainSetup {
            racut,
            encoder: tiny_encoder(4, 6),
            pretrain: PretrainConfig { epochs: 1, ..quick_config(1) },
            out_dir: None,
        };
        let out = pretrain_run(&PretrainDataset { proteins }, &setup).unwrap();
        let mut other = tiny_encoder(4, 6);
        other.embed_dim = 8;
        let err = out.final_checkpoint.encoder_state_matching(&other).unwrap_err();
        assert!(err.to_string().contains("embed_dim: checkpoint 16 vs config 8"), "{err}");
    }
}
