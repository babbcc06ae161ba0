//! The run configuration document. Every field has a default, so an empty
//! file (or no file) reproduces the full-scale settings; tests override a few
//! keys.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use seqreorder::augment::{NoiseKind, NoiseSpec, RAcutConfig, DEFAULT_MASK_PROB, DEFAULT_N};
use seqreorder::corpus::{DatasetSchema, DEFAULT_L_MAX, DEFAULT_MAX_ATOMS, PROTEIN_VOCAB_SIZE};
use seqreorder::cpi::CpiConfig;
use seqreorder::encoder::EncoderConfig;
use seqreorder::eval::SplitRatios;
use seqreorder::perm::{SinkhornConfig, DEFAULT_EVAL_ITERATIONS, DEFAULT_TRAIN_ITERATIONS};
use seqreorder::pretrain::PretrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub dataset_name: String,
    pub data: DataSection,
    pub split: SplitSection,
    pub segmentation: SegmentationSection,
    pub noise: NoiseSection,
    pub encoder: EncoderSection,
    pub sinkhorn: SinkhornSection,
    pub pretrain: PretrainSection,
    pub finetune: FinetuneSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("runs"),
            dataset_name: "dataset".into(),
            data: Default::default(),
            split: Default::default(),
            segmentation: Default::default(),
            noise: Default::default(),
            encoder: Default::default(),
            sinkhorn: Default::default(),
            pretrain: Default::default(),
            finetune: Default::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub has_header: bool,
    pub smiles_col: usize,
    pub sequence_col: usize,
    pub label_col: usize,
    pub l_max: usize,
    pub max_atoms: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        let s = DatasetSchema::default();
        Self {
            has_header: s.has_header,
            smiles_col: s.smiles_col,
            sequence_col: s.sequence_col,
            label_col: s.label_col,
            l_max: DEFAULT_L_MAX,
            max_atoms: DEFAULT_MAX_ATOMS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        let r = SplitRatios::default();
        Self {
            train: r.train,
            valid: r.valid,
            test: r.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentationSection {
    pub n: usize,
}

impl Default for SegmentationSection {
    fn default() -> Self {
        Self { n: DEFAULT_N }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseName {
    Identity,
    Mask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    pub kind: NoiseName,
    pub mask_prob: f64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            kind: NoiseName::Mask,
            mask_prob: DEFAULT_MASK_PROB,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSection {
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
}

impl Default for EncoderSection {
    fn default() -> Self {
        let e = EncoderConfig::default();
        Self {
            embed_dim: e.embed_dim,
            layers: e.layers,
            heads: e.heads,
            ffn_dim: e.ffn_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SinkhornSection {
    pub train_iterations: usize,
    pub eval_iterations: usize,
    pub eps: f64,
}

impl Default for SinkhornSection {
    fn default() -> Self {
        Self {
            train_iterations: DEFAULT_TRAIN_ITERATIONS,
            eval_iterations: DEFAULT_EVAL_ITERATIONS,
            eps: SinkhornConfig::default().eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainSection {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub validation_fraction: f64,
}

impl Default for PretrainSection {
    fn default() -> Self {
        let p = PretrainConfig::default();
        Self {
            epochs: p.epochs,
            lr: p.lr,
            batch_size: p.batch_size,
            weight_decay: p.weight_decay,
            beta1: p.beta1,
            beta2: p.beta2,
            adam_eps: p.adam_eps,
            validation_fraction: p.validation_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneSection {
    pub compound_dim: usize,
    pub compound_layers: usize,
    pub compound_heads: usize,
    pub compound_ffn_dim: usize,
    pub fusion_dim: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub lambda: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        let c = CpiConfig::default();
        Self {
            compound_dim: c.compound_dim,
            compound_layers: c.compound_layers,
            compound_heads: c.compound_heads,
            compound_ffn_dim: c.compound_ffn_dim,
            fusion_dim: c.fusion_dim,
            epochs: c.epochs,
            lr: c.lr,
            batch_size: c.batch_size,
            lambda: c.lambda,
            beta1: c.beta1,
            beta2: c.beta2,
            adam_eps: c.adam_eps,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn schema(&self) -> DatasetSchema {
        DatasetSchema {
            smiles_col: self.data.smiles_col,
            sequence_col: self.data.sequence_col,
            label_col: self.data.label_col,
            has_header: self.data.has_header,
            l_max: self.data.l_max,
            max_atoms: self.data.max_atoms,
        }
    }

    pub fn ratios(&self) -> SplitRatios {
        SplitRatios {
            train: self.split.train,
            valid: self.split.valid,
            test: self.split.test,
        }
    }

    pub fn racut(&self) -> Result<RAcutConfig> {
        Ok(RAcutConfig::new(self.segmentation.n, self.data.l_max)?)
    }

    pub fn noise(&self) -> NoiseSpec {
        NoiseSpec {
            kind: match self.noise.kind {
                NoiseName::Identity => NoiseKind::Identity,
                NoiseName::Mask => NoiseKind::Mask,
            },
            mask_prob: self.noise.mask_prob,
        }
    }

    pub fn encoder(&self) -> Result<EncoderConfig> {
        let racut = self.racut()?;
        Ok(EncoderConfig {
            embed_dim: self.encoder.embed_dim,
            layers: self.encoder.layers,
            heads: self.encoder.heads,
            ffn_dim: self.encoder.ffn_dim,
            n: racut.n,
            f_max: racut.f_max,
            vocab_size: PROTEIN_VOCAB_SIZE,
        })
    }

    pub fn pretrain(&self) -> PretrainConfig {
        let p = &self.pretrain;
        PretrainConfig {
            epochs: p.epochs,
            lr: p.lr,
            batch_size: p.batch_size,
            weight_decay: p.weight_decay,
            beta1: p.beta1,
            beta2: p.beta2,
            adam_eps: p.adam_eps,
            sinkhorn: SinkhornConfig {
                m: self.sinkhorn.train_iterations,
                eps: self.sinkhorn.eps,
            },
            eval_sinkhorn_iterations: self.sinkhorn.eval_iterations,
            noise: self.noise(),
            global_seed: self.seed,
            validation_fraction: p.validation_fraction,
        }
    }

    pub fn finetune(&self) -> CpiConfig {
        let f = &self.finetune;
        CpiConfig {
            compound_dim: f.compound_dim,
            compound_layers: f.compound_layers,
            compound_heads: f.compound_heads,
            compound_ffn_dim: f.compound_ffn_dim,
            max_atoms: self.data.max_atoms,
            fusion_dim: f.fusion_dim,
            epochs: f.epochs,
            lr: f.lr,
            batch_size: f.batch_size,
            lambda: f.lambda,
            beta1: f.beta1,
            beta2: f.beta2,
            adam_eps: f.adam_eps,
            global_seed: self.seed,
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}
