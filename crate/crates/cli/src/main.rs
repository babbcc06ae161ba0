mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde_json::json;

use seqreorder::corpus::{
    encode_protein, parse_dataset, write_dataset_string, InteractionRecord, PretrainDataset, ResidueVocabulary,
};
use seqreorder::cpi::{finetune_run, predict_records, save_cpi_model, ProteinEmbeddingCache};
use seqreorder::encoder::EncoderState;
use seqreorder::eval::{
    emit_report, parse_predictions, split_scenarios, write_predictions, Prediction, Scenario, SeedPredictions,
};
use seqreorder::gradcheck::{run_default, Perturbation};
use seqreorder::pretrain::{pretrain_run, PretrainCheckpoint, PretrainSetup};
use seqreorder::rng::derive_seed;
use seqreorder::synth::{motif_corpus, synth_cpi, MotifCorpusConfig, SynthCpiConfig};

use crate::config::RunConfig;

#[derive(Parser)]
#[command(name = "seqreorder", version, about = "Subsequence-reordering pretraining and CPI evaluation")]
struct Cli {
    /// TOML run configuration; every key is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice; overrides the config value.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root; overrides the config value.
    #[arg(long, global = true, env = "SEQREORDER_OUT")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split an interaction TSV into train, valid and four test scenarios.
    Split {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Reordering pretraining on the proteins of a training split.
    Pretrain {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Train the CPI head on a frozen encoder and predict every test pair.
    Finetune {
        /// Directory written by `split`.
        #[arg(long)]
        split_dir: PathBuf,
        #[command(flatten)]
        encoder: EncoderSource,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Aggregate per-seed prediction files into a report.
    Evaluate {
        #[arg(long, num_args = 1.., required = true)]
        predictions: Vec<PathBuf>,
    },
    /// Finite-difference check of the hand-written gradients.
    Gradcheck {
        /// Added to every analytic gradient (sensitivity test hook).
        #[arg(long, default_value_t = 0.0)]
        perturb: f64,
    },
    /// Write one frozen-encoder embedding row per admissible protein.
    ExportEmbeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Lines of `id<TAB>sequence` (or bare sequences, numbered from 1).
        #[arg(long)]
        proteins: PathBuf,
    },
    /// Generate synthetic data with known structure.
    Synth {
        #[command(subcommand)]
        kind: SynthKind,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct EncoderSource {
    /// Pretrained encoder checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Use a randomly initialized frozen encoder instead.
    #[arg(long)]
    random_init: bool,
}

#[derive(Subcommand)]
enum SynthKind {
    /// Interaction TSV whose labels depend on motif co-occurrence.
    Cpi {
        #[arg(long, default_value_t = 400)]
        proteins: usize,
        #[arg(long, default_value_t = 400)]
        compounds: usize,
        #[arg(long, default_value_t = 2000)]
        pairs: usize,
        #[arg(long, default_value_t = 48)]
        l_max: usize,
        #[arg(long)]
        output: PathBuf,
    },
    /// Protein list (`id<TAB>sequence`) built from ordered residue families.
    Motif {
        #[arg(long, default_value_t = 2000)]
        sequences: usize,
        #[arg(long, default_value_t = 48)]
        l_max: usize,
        #[arg(long)]
        output: PathBuf,
    },
}

struct Context_ {
    config: RunConfig,
    out: PathBuf,
}

impl Context_ {
    fn dir(&self, name: &str) -> Result<PathBuf> {
        let d = self.out.join(name);
        std::fs::create_dir_all(&d).with_context(|| format!("creating {}", d.display()))?;
        Ok(d)
    }

    /// Records the command, seed and full config next to its outputs.
    fn write_run_record(&self, dir: &Path, command: &str) -> Result<()> {
        let record = json!({
            "command": command,
            "seed": self.config.seed,
            "config_fingerprint": self.config.fingerprint(),
            "config": self.config,
        });
        write(&dir.join("run.json"), &(serde_json::to_string_pretty(&record)? + "\n"))
    }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn read_split(path: &Path, ctx: &Context_) -> Result<Vec<InteractionRecord>> {
    Ok(parse_dataset(path, &ctx.config.schema())?)
}

fn cmd_split(ctx: &Context_, dataset: &Path) -> Result<()> {
    let records = read_split(dataset, ctx)?;
    let split = split_scenarios(&records, &ctx.config.ratios(), ctx.config.seed)?;
    let dir = ctx.dir("split")?;
    let mut files = serde_json::Map::new();
    let mut emit = |name: &str, part: &[InteractionRecord]| -> Result<()> {
        let file = format!("{name}.tsv");
        write(&dir.join(&file), &write_dataset_string(part))?;
        files.insert(name.to_string(), json!({ "file": file, "pairs": part.len() }));
        Ok(())
    };
    emit("train", &split.train)?;
    emit("valid", &split.valid)?;
    for s in Scenario::ALL {
        emit(s.name(), split.partition(s))?;
    }
    write(&dir.join("residue_vocab.tsv"), &ResidueVocabulary::default().table())?;
    let manifest = json!({
        "dataset": dataset.display().to_string(),
        "seed": ctx.config.seed,
        "config_fingerprint": ctx.config.fingerprint(),
        "ratios": ctx.config.split,
        "total_pairs": records.len(),
        "files": files,
    });
    write(&dir.join("manifest.json"), &(serde_json::to_string_pretty(&manifest)? + "\n"))?;
    ctx.write_run_record(&dir, "split")?;
    for s in Scenario::ALL {
        info!("{}: {} pairs", s.name(), split.partition(s).len());
    }
    println!("split {} pairs into {}", records.len(), dir.display());
    Ok(())
}

fn cmd_pretrain(ctx: &Context_, train: &Path) -> Result<()> {
    let records = read_split(train, ctx)?;
    let dataset = PretrainDataset::from_training_split(&records);
    let dir = ctx.dir("pretrain")?;
    let setup = PretrainSetup {
        racut: ctx.config.racut()?,
        encoder: ctx.config.encoder()?,
        pretrain: ctx.config.pretrain(),
        out_dir: Some(&dir),
    };
    ctx.write_run_record(&dir, "pretrain")?;
    let out = pretrain_run(&dataset, &setup)?;
    println!(
        "pretrained on {} proteins ({} skipped); best validation accuracy {:?}; checkpoints in {}",
        dataset.len() - out.skipped,
        out.skipped,
        out.best_checkpoint.validation_accuracy,
        dir.display()
    );
    Ok(())
}

const STREAM_RANDOM_ENCODER: u64 = 21;

fn cmd_finetune(ctx: &Context_, split_dir: &Path, source: &EncoderSource) -> Result<()> {
    let racut = ctx.config.racut()?;
    let expected = ctx.config.encoder()?;
    let (frozen, variant) = match &source.checkpoint {
        Some(path) => {
            let ckpt = PretrainCheckpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
            if ckpt.racut != racut {
                bail!(
                    "checkpoint segmentation (n={}, l_max={}) differs from config (n={}, l_max={})",
                    ckpt.racut.n,
                    ckpt.racut.l_max,
                    racut.n,
                    racut.l_max
                );
            }
            (ckpt.encoder_state_matching(&expected)?, "pretrained")
        }
        None => (
            EncoderState::init(expected, derive_seed(ctx.config.seed, &[STREAM_RANDOM_ENCODER]))?,
            "random",
        ),
    };
    let load = |name: &str| read_split(&split_dir.join(format!("{name}.tsv")), ctx);
    let train = load("train")?;
    let valid = load("valid")?;
    let out = finetune_run(&train, &valid, &frozen, &racut, &ctx.config.finetune())?;

    let dir = ctx.dir(&format!("finetune/{variant}"))?;
    let seed = ctx.config.seed;
    let mut cache: ProteinEmbeddingCache = out.cache.clone();
    let mut rows = Vec::new();
    for s in Scenario::ALL {
        let part = load(s.name())?;
        let scores = predict_records(&out.model, &part, &mut cache)?;
        rows.extend(scores.into_iter().zip(&part).enumerate().map(|(i, (score, r))| Prediction {
            pair_id: format!("{}:{i}", s.name()),
            score,
            label: r.label,
        }));
    }
    save_cpi_model(&out.model, out.selected_epoch, &dir.join(format!("model_seed{seed}.ckpt")))?;
    write(&dir.join(format!("predictions_seed{seed}.csv")), &write_predictions(seed, &rows))?;
    write(&dir.join(format!("finetune_log_seed{seed}.csv")), &out.log.to_csv())?;
    ctx.write_run_record(&dir, "finetune")?;
    println!(
        "fine-tuned with {variant} encoder, selected epoch {}; {} test predictions in {}",
        out.selected_epoch,
        rows.len(),
        dir.display()
    );
    Ok(())
}

fn cmd_evaluate(ctx: &Context_, paths: &[PathBuf]) -> Result<()> {
    if paths.is_empty() {
        bail!("no prediction files given");
    }
    let mut seeds = Vec::new();
    for (i, path) in paths.iter().enumerate() {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let (seed, rows) = parse_predictions(&text).with_context(|| format!("in {}", path.display()))?;
        seeds.push(SeedPredictions {
            seed: seed.unwrap_or(i as u64),
            rows,
        });
    }
    let dir = ctx.dir("evaluate")?;
    let report = emit_report(&ctx.config.dataset_name, &ctx.config.fingerprint(), &seeds, &dir)?;
    ctx.write_run_record(&dir, "evaluate")?;
    for (name, p) in &report.partitions {
        let fmt = |m: Option<f64>, s: Option<f64>| match (m, s) {
            (Some(m), Some(s)) => format!("{m:.4} +- {s:.4}"),
            _ => "undefined".into(),
        };
        println!(
            "{name:<12} n={:<6} AUROC {}  AUPRC {}",
            p.n_pairs,
            fmt(p.auroc_mean, p.auroc_std),
            fmt(p.auprc_mean, p.auprc_std)
        );
    }
    Ok(())
}

fn cmd_gradcheck(ctx: &Context_, perturb: f64) -> Result<()> {
    let reports = run_default(ctx.config.seed, Perturbation(perturb))?;
    for r in &reports {
        println!(
            "{:<40} max relative error {:.3e}  tolerance {:.0e}  {}",
            r.component,
            r.max_relative_error,
            r.tolerance,
            if r.passed { "ok" } else { "FAIL" }
        );
    }
    let dir = ctx.dir("gradcheck")?;
    let report = json!({ "seed": ctx.config.seed, "perturbation": perturb, "components": reports });
    write(&dir.join("report.json"), &(serde_json::to_string_pretty(&report)? + "\n"))?;
    if reports.iter().any(|r| !r.passed) {
        bail!("gradient check failed");
    }
    Ok(())
}

fn cmd_export_embeddings(ctx: &Context_, checkpoint: &Path, proteins: &Path) -> Result<()> {
    let ckpt = PretrainCheckpoint::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let state = ckpt.encoder_state()?;
    let text = std::fs::read_to_string(proteins).with_context(|| format!("reading {}", proteins.display()))?;
    let vocab = ResidueVocabulary::default();
    let mut table = String::new();
    let mut skipped = String::from("id\treason\n");
    let mut written = 0;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let (id, seq) = line.split_once('\t').unwrap_or(("", line));
        let id = if id.is_empty() { (i + 1).to_string() } else { id.to_string() };
        let embedding = encode_protein(seq.trim(), &vocab, ckpt.racut.l_max)
            .and_then(|p| state.protein_embedding(&p, &ckpt.racut));
        match embedding {
            Ok(z) => {
                table.push_str(&id);
                for v in z.0.iter() {
                    table.push('\t');
                    table.push_str(&v.to_string());
                }
                table.push('\n');
                written += 1;
            }
            Err(e) => {
                warn!("skipping protein {id}: {e}");
                skipped.push_str(&format!("{id}\t{e}\n"));
            }
        }
    }
    let dir = ctx.dir("embeddings")?;
    write(&dir.join("embeddings.tsv"), &table)?;
    write(&dir.join("skipped.tsv"), &skipped)?;
    ctx.write_run_record(&dir, "export-embeddings")?;
    println!("wrote {written} embeddings to {}", dir.join("embeddings.tsv").display());
    Ok(())
}

fn cmd_synth(ctx: &Context_, kind: &SynthKind) -> Result<()> {
    let seed = ctx.config.seed;
    let (path, contents) = match kind {
        SynthKind::Cpi {
            proteins,
            compounds,
            pairs,
            l_max,
            output,
        } => {
            let cfg = SynthCpiConfig {
                proteins: *proteins,
                compounds: *compounds,
                pairs: *pairs,
                corpus: MotifCorpusConfig {
                    l_max: *l_max,
                    ..Default::default()
                },
            };
            (output, write_dataset_string(&synth_cpi(&cfg, seed)?))
        }
        SynthKind::Motif { sequences, l_max, output } => {
            let cfg = MotifCorpusConfig {
                sequences: *sequences,
                l_max: *l_max,
                ..Default::default()
            };
            cfg.validate()?;
            let text: String = motif_corpus(&cfg, seed)
                .iter()
                .enumerate()
                .map(|(i, p)| format!("p{i}\t{}\n", p.raw))
                .collect();
            (output, text)
        }
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    write(path, &contents)?;
    println!("wrote {} (seed {seed})", path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    match &cli.command {
        Command::Pretrain { epochs: Some(e), .. } => config.pretrain.epochs = *e,
        Command::Finetune { epochs: Some(e), .. } => config.finetune.epochs = *e,
        _ => {}
    }
    let out = cli.out.clone().unwrap_or_else(|| config.out_dir.clone());
    let ctx = Context_ { config, out };
    match &cli.command {
        Command::Split { dataset } => cmd_split(&ctx, dataset),
        Command::Pretrain { train, .. } => cmd_pretrain(&ctx, train),
        Command::Finetune { split_dir, encoder, .. } => cmd_finetune(&ctx, split_dir, encoder),
        Command::Evaluate { predictions } => cmd_evaluate(&ctx, predictions),
        Command::Gradcheck { perturb } => cmd_gradcheck(&ctx, *perturb),
        Command::ExportEmbeddings { checkpoint, proteins } => cmd_export_embeddings(&ctx, checkpoint, proteins),
        Command::Synth { kind } => cmd_synth(&ctx, kind),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", anyhow!(e));
            ExitCode::FAILURE
        }
    }
}
