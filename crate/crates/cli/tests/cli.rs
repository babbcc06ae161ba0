use std::path::PathBuf;
use std::process::{Command, Output};

use tempfile::TempDir;

const TINY: &str = r#"
seed = 3
[data]
l_max = 48
max_atoms = 64
[split]
train = 0.5
valid = 0.1
test = 0.4
[segmentation]
n = 4
[encoder]
embed_dim = 16
layers = 1
heads = 2
ffn_dim = 32
[pretrain]
epochs = 2
lr = 0.002
batch_size = 32
[finetune]
compound_dim = 16
compound_layers = 1
compound_heads = 2
compound_ffn_dim = 32
fusion_dim = 16
epochs = 2
lr = 0.003
batch_size = 32
"#;

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
        Self { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_seqreorder"))
            .current_dir(self.dir.path())
            .env_remove("SEQREORDER_OUT")
            .args(["--config", "tiny.toml"])
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    fn fails(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
        String::from_utf8(out.stderr).unwrap()
    }

    fn read(&self, rel: &str) -> Vec<u8> {
        std::fs::read(self.path(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
    }

    fn synth_and_split(&self, out: &str) {
        self.ok(&["synth", "cpi", "--proteins", "80", "--compounds", "80", "--pairs", "300", "--output", "d.tsv"]);
        self.ok(&["--out", out, "split", "--dataset", "d.tsv"]);
    }
}

fn data_lines(bytes: &[u8]) -> usize {
    String::from_utf8_lossy(bytes).lines().filter(|l| !l.starts_with('#')).count() - 1
}

#[test]
fn split_is_deterministic_and_complete() {
    let ws = Workspace::new();
    ws.synth_and_split("a");
    ws.ok(&["--out", "b", "split", "--dataset", "d.tsv"]);
    let names = ["train", "valid", "seen_both", "unseen_comp", "unseen_prot", "unseen_both"];
    let mut total = 0;
    for name in names {
        let rel = format!("split/{name}.tsv");
        let a = ws.read(&format!("a/{rel}"));
        assert_eq!(a, ws.read(&format!("b/{rel}")), "{name} differs between runs");
        total += data_lines(&a);
    }
    assert_eq!(total, 300);
    assert_eq!(ws.read("a/split/manifest.json"), ws.read("b/split/manifest.json"));

    ws.ok(&["--out", "c", "--seed", "4", "split", "--dataset", "d.tsv"]);
    assert_ne!(ws.read("a/split/train.tsv"), ws.read("c/split/train.tsv"));
    let run: serde_json::Value = serde_json::from_slice(&ws.read("c/split/run.json")).unwrap();
    assert_eq!(run["seed"], 4);
}

#[test]
fn split_reports_missing_dataset() {
    let ws = Workspace::new();
    let err = ws.fails(&["--out", "o", "split", "--dataset", "missing.tsv"]);
    assert!(err.contains("missing.tsv"), "{err}");
}

#[test]
fn unknown_config_key_is_rejected() {
    let ws = Workspace::new();
    std::fs::write(ws.path("bad.toml"), "[pretrain]\nepoch = 3\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_seqreorder"))
        .current_dir(ws.dir.path())
        .args(["--config", "bad.toml", "gradcheck"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("epoch"));
}

#[test]
fn pretrain_rejects_zero_epochs() {
    let ws = Workspace::new();
    ws.synth_and_split("o");
    let err = ws.fails(&["--out", "o", "pretrain", "--train", "o/split/train.tsv", "--epochs", "0"]);
    assert!(err.contains("epochs"), "{err}");
}

fn pretrain(ws: &Workspace) {
    ws.synth_and_split("o");
    ws.ok(&["--out", "o", "pretrain", "--train", "o/split/train.tsv"]);
}

#[test]
fn pretrain_writes_checkpoints_and_ordered_log() {
    let ws = Workspace::new();
    pretrain(&ws);
    for f in ["final.ckpt", "best.ckpt", "checkpoints/epoch_0000.ckpt", "checkpoints/epoch_0001.ckpt", "run.json"] {
        assert!(ws.path(&format!("o/pretrain/{f}")).exists(), "{f} missing");
    }
    let log = String::from_utf8(ws.read("o/pretrain/train_log.csv")).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next(), Some("epoch,step,loss,perm_acc,wall_ms"));
    let mut prev = None;
    let mut rows = 0;
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f.len(), 5);
        let key: (usize, usize) = (f[0].parse().unwrap(), f[1].parse().unwrap());
        assert!(prev.is_none_or(|p| key > p), "rows out of order at {line}");
        assert!(f[2].parse::<f64>().unwrap().is_finite());
        prev = Some(key);
        rows += 1;
    }
    assert!(rows > 0);
}

#[test]
fn finetune_predicts_every_test_pair() {
    let ws = Workspace::new();
    pretrain(&ws);
    ws.ok(&["--out", "o", "finetune", "--split-dir", "o/split", "--checkpoint", "o/pretrain/best.ckpt"]);
    ws.ok(&["--out", "o", "finetune", "--split-dir", "o/split", "--random-init"]);
    let test_pairs: usize = ["seen_both", "unseen_comp", "unseen_prot", "unseen_both"]
        .iter()
        .map(|p| data_lines(&ws.read(&format!("o/split/{p}.tsv"))))
        .sum();
    for variant in ["pretrained", "random"] {
        let preds = ws.read(&format!("o/finetune/{variant}/predictions_seed3.csv"));
        assert_eq!(data_lines(&preds), test_pairs);
        assert!(ws.path(&format!("o/finetune/{variant}/model_seed3.ckpt")).exists());
    }
    assert_ne!(
        ws.read("o/finetune/pretrained/predictions_seed3.csv"),
        ws.read("o/finetune/random/predictions_seed3.csv")
    );
}

#[test]
fn finetune_rejects_mismatched_checkpoint() {
    let ws = Workspace::new();
    pretrain(&ws);
    std::fs::write(ws.path("wide.toml"), TINY.replace("embed_dim = 16", "embed_dim = 8")).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_seqreorder"))
        .current_dir(ws.dir.path())
        .args(["--config", "wide.toml", "--out", "o"])
        .args(["finetune", "--split-dir", "o/split", "--checkpoint", "o/pretrain/best.ckpt"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("embed_dim: checkpoint 16 vs config 8"), "{err}");
}

fn write_predictions(ws: &Workspace, seed: u64, shift: f64) -> PathBuf {
    let mut text = format!("# seed={seed}\npair_id,score,label\n");
    for i in 0..20 {
        let part = ["seen_both", "unseen_comp", "unseen_prot", "unseen_both"][i % 4];
        let label = (i / 4) % 2;
        let score = (0.5 + 0.1 * label as f64 - shift * (i % 3) as f64).clamp(0.0, 1.0);
        text.push_str(&format!("{part}:{i},{score},{label}\n"));
    }
    let path = ws.path(&format!("p{seed}.csv"));
    std::fs::write(&path, text).unwrap();
    path
}

fn report(ws: &Workspace, out: &str) -> serde_json::Value {
    serde_json::from_slice(&ws.read(&format!("{out}/evaluate/report.json"))).unwrap()
}

#[test]
fn evaluate_single_seed_has_zero_spread() {
    let ws = Workspace::new();
    let p = write_predictions(&ws, 0, 0.1);
    ws.ok(&["--out", "one", "evaluate", "--predictions", p.to_str().unwrap()]);
    let r = report(&ws, "one");
    assert_eq!(r["seed_count"], 1);
    for part in ["seen_both", "unseen_comp", "unseen_prot", "unseen_both"] {
        assert_eq!(r["partitions"][part]["auroc_std"], 0.0);
        assert_eq!(r["partitions"][part]["n_pairs"], 5);
    }
    assert!(ws.path("one/evaluate/curves/seen_both_seed0_roc.csv").exists());
}

#[test]
fn evaluate_five_seeds_reports_mean_and_spread() {
    let ws = Workspace::new();
    let paths: Vec<String> = (0..5)
        .map(|s| write_predictions(&ws, s, 0.05 * s as f64).display().to_string())
        .collect();
    let mut args = vec!["--out", "five", "evaluate", "--predictions"];
    args.extend(paths.iter().map(String::as_str));
    ws.ok(&args);
    let r = report(&ws, "five");
    assert_eq!(r["seed_count"], 5);
    let seen = &r["partitions"]["seen_both"];
    assert!(seen["auroc_mean"].as_f64().unwrap() > 0.5);
    assert!(seen["auroc_std"].as_f64().unwrap() > 0.0);
    for s in 0..5 {
        assert!(ws.path(&format!("five/evaluate/curves/unseen_both_seed{s}_pr.csv")).exists());
    }
}

#[test]
fn evaluate_names_malformed_row() {
    let ws = Workspace::new();
    std::fs::write(ws.path("bad.csv"), "pair_id,score,label\nseen_both:0,0.5,1\nseen_both:1,oops,0\n").unwrap();
    let err = ws.fails(&["--out", "o", "evaluate", "--predictions", "bad.csv"]);
    assert!(err.contains("line 3"), "{err}");
    assert!(err.contains("bad.csv"), "{err}");
}

#[test]
fn evaluate_requires_files() {
    let ws = Workspace::new();
    ws.fails(&["--out", "o", "evaluate"]);
}

#[test]
fn gradcheck_passes_and_detects_perturbation() {
    let ws = Workspace::new();
    let stdout = ws.ok(&["--out", "o", "gradcheck"]);
    assert!(stdout.lines().count() >= 3);
    assert!(!stdout.contains("FAIL"));
    let err = ws.fails(&["--out", "o", "gradcheck", "--perturb", "1e-3"]);
    assert!(err.contains("gradient check failed"));
}

fn embeddings(ws: &Workspace, out: &str) -> (String, String) {
    ws.ok(&["--out", out, "export-embeddings", "--checkpoint", "o/pretrain/best.ckpt", "--proteins", "p.txt"]);
    let read = |f: &str| String::from_utf8(ws.read(&format!("{out}/embeddings/{f}"))).unwrap();
    (read("embeddings.tsv"), read("skipped.tsv"))
}

#[test]
fn export_embeddings_is_deterministic_and_skips_short_proteins() {
    let ws = Workspace::new();
    pretrain(&ws);
    ws.ok(&["synth", "motif", "--sequences", "6", "--output", "p.txt"]);
    let mut proteins = std::fs::read_to_string(ws.path("p.txt")).unwrap();
    proteins.push_str("tiny\tMKV\n");
    std::fs::write(ws.path("p.txt"), proteins).unwrap();

    let (a, skipped) = embeddings(&ws, "e1");
    let (b, _) = embeddings(&ws, "e2");
    assert_eq!(a, b);
    let rows: Vec<&str> = a.lines().collect();
    assert_eq!(rows.len(), 6);
    for row in rows {
        let fields: Vec<&str> = row.split('\t').collect();
        assert_eq!(fields.len(), 1 + 16);
        assert!(fields[1..].iter().all(|v| v.parse::<f64>().unwrap().is_finite()));
    }
    assert!(!a.contains("tiny"));
    assert!(skipped.lines().any(|l| l.starts_with("tiny\t")), "{skipped}");
}
