//! Cold-start scenario splitting, ranking metrics and report files.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::InteractionRecord;
use crate::error::{Error, Result};
use crate::rng::derived_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    SeenBoth,
    UnseenComp,
    UnseenProt,
    UnseenBoth,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::SeenBoth, Scenario::UnseenComp, Scenario::UnseenProt, Scenario::UnseenBoth];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::SeenBoth => "seen_both",
            Scenario::UnseenComp => "unseen_comp",
            Scenario::UnseenProt => "unseen_prot",
            Scenario::UnseenBoth => "unseen_both",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.name() == name)
    }

    fn index(self) -> usize {
        self as usize
    }

    pub fn classify(compound_seen: bool, protein_seen: bool) -> Self {
        match (compound_seen, protein_seen) {
            (true, true) => Scenario::SeenBoth,
            (false, true) => Scenario::UnseenComp,
            (true, false) => Scenario::UnseenProt,
            (false, false) => Scenario::UnseenBoth,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.7,
            valid: 0.1,
            test: 0.2,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.valid, self.test];
        if parts.iter().any(|r| !(0.0..=1.0).contains(r)) || ((parts.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split ratios {}/{}/{} must be in [0,1] and sum to 1",
                self.train, self.valid, self.test
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSplit {
    pub train: Vec<InteractionRecord>,
    pub valid: Vec<InteractionRecord>,
    partitions: [Vec<InteractionRecord>; 4],
}

impl ScenarioSplit {
    pub fn partition(&self, s: Scenario) -> &[InteractionRecord] {
        &self.partitions[s.index()]
    }

    pub fn test_len(&self) -> usize {
        self.partitions.iter().map(Vec::len).sum()
    }

    /// Classifies `test` against the entities of `train`.
    pub fn from_parts(train: Vec<InteractionRecord>, valid: Vec<InteractionRecord>, test: Vec<InteractionRecord>) -> Self {
        let compounds: HashSet<&str> = train.iter().map(|r| r.compound.key()).collect();
        let proteins: HashSet<String> = train.iter().map(|r| r.protein.key()).collect();
        let mut partitions: [Vec<InteractionRecord>; 4] = Default::default();
        for r in test {
            let s = Scenario::classify(compounds.contains(r.compound.key()), proteins.contains(&r.protein.key()));
            partitions[s.index()].push(r);
        }
        Self {
            train,
            valid,
            partitions,
        }
    }
}

/// Seeded pair-level train/valid/test split followed by scenario classification.
pub fn split_scenarios(records: &[InteractionRecord], ratios: &SplitRatios, seed: u64) -> Result<ScenarioSplit> {
    if records.is_empty() {
        return Err(Error::Validation("cannot split an empty dataset".into()));
    }
    ratios.validate()?;
    let total = records.len();
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut derived_rng(seed, &[0x5911]));
    let n_train = ((total as f64 * ratios.train).round() as usize).min(total);
    let n_valid = ((total as f64 * ratios.valid).round() as usize).min(total - n_train);
    let pick = |idx: &[usize]| idx.iter().map(|&i| records[i].clone()).collect::<Vec<_>>();
    Ok(ScenarioSplit::from_parts(
        pick(&order[..n_train]),
        pick(&order[n_train..n_train + n_valid]),
        pick(&order[n_train + n_valid..]),
    ))
}

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("scores must be finite".into()));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Validation(format!("label {l} is not 0 or 1")));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    Ok((pos, labels.len() - pos))
}

/// Indices sorted by descending score; equal scores keep input order.
fn descending_order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// Probability that a random positive outscores a random negative, ties counting one half.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = check_inputs(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("AUROC needs both positive and negative labels".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Mann-Whitney count with tie groups: each positive beats the negatives
    // strictly below it and gets half credit against tied negatives.
    let mut wins2: u128 = 0;
    let mut negatives_below = 0u128;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            j += 1;
        }
        let group_pos = idx[i..j].iter().filter(|&&k| labels[k] == 1).count() as u128;
        let group_neg = (j - i) as u128 - group_pos;
        wins2 += group_pos * (2 * negatives_below + group_neg);
        negatives_below += group_neg;
        i = j;
    }
    Ok(wins2 as f64 / (2 * pos * neg) as f64)
}

/// Average precision over the descending-score ranking (ties broken by input index).
pub fn auprc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, _) = check_inputs(scores, labels)?;
    if pos == 0 {
        return Err(Error::UndefinedMetric("AUPRC needs at least one positive label".into()));
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in descending_order(scores).iter().enumerate() {
        if labels[i] == 1 {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / pos as f64)
}

/// `(fpr, tpr)` points at every distinct threshold, starting at the origin.
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<(f64, f64)>> {
    let (pos, neg) = check_inputs(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("ROC curve needs both classes".into()));
    }
    let order = descending_order(scores);
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    for (k, &i) in order.iter().enumerate() {
        if labels[i] == 1 {
            tp += 1;
        } else {
            fp += 1;
        }
        if order.get(k + 1).is_none_or(|&next| scores[next] != scores[i]) {
            points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
        }
    }
    Ok(points)
}

/// `(recall, precision)` after each rank of the descending ordering.
pub fn pr_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<(f64, f64)>> {
    let (pos, _) = check_inputs(scores, labels)?;
    if pos == 0 {
        return Err(Error::UndefinedMetric("PR curve needs a positive label".into()));
    }
    let mut tp = 0usize;
    Ok(descending_order(scores)
        .iter()
        .enumerate()
        .map(|(k, &i)| {
            tp += usize::from(labels[i] == 1);
            (tp as f64 / pos as f64, tp as f64 / (k + 1) as f64)
        })
        .collect())
}

/// Trapezoidal area under `(x, y)` points.
pub fn trapezoid_area(points: &[(f64, f64)]) -> f64 {
    points.windows(2).map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0).sum()
}

/// Right-step area under `(recall, precision)` points, recall starting at 0.
pub fn step_area(points: &[(f64, f64)]) -> f64 {
    let mut prev = 0.0;
    let mut area = 0.0;
    for &(r, p) in points {
        area += (r - prev) * p;
        prev = r;
    }
    area
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub pair_id: String,
    pub score: f64,
    pub label: u8,
}

impl Prediction {
    pub fn scenario(&self) -> Option<Scenario> {
        self.pair_id.split_once(':').and_then(|(p, _)| Scenario::from_name(p))
    }
}

pub const PREDICTIONS_HEADER: &str = "pair_id,score,label";

/// Prediction CSV preceded by a `# seed=` comment line.
pub fn write_predictions(seed: u64, rows: &[Prediction]) -> String {
    let mut out = format!("# seed={seed}\n{PREDICTIONS_HEADER}\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.pair_id, r.score, r.label);
    }
    out
}

/// Parses prediction CSV text; returns the echoed seed, if any, and the rows.
pub fn parse_predictions(text: &str) -> Result<(Option<u64>, Vec<Prediction>)> {
    let mut seed = None;
    let mut rows = Vec::new();
    let mut header_seen = false;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(v) = rest.trim().strip_prefix("seed=") {
                seed = Some(v.parse().map_err(|_| Error::Parse {
                    line: line_no,
                    message: format!("bad seed {v:?}"),
                })?);
            }
            continue;
        }
        if !header_seen {
            header_seen = true;
            if line == PREDICTIONS_HEADER {
                continue;
            }
        }
        let bad = |m: String| Error::Parse { line: line_no, message: m };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(bad(format!("expected 3 fields, found {}", fields.len())));
        }
        let score: f64 = fields[1].parse().map_err(|_| bad(format!("bad score {:?}", fields[1])))?;
        if !(0.0..=1.0).contains(&score) {
            return Err(bad(format!("score {score} outside [0, 1]")));
        }
        let label = match fields[2] {
            "0" => 0,
            "1" => 1,
            other => return Err(bad(format!("bad label {other:?}"))),
        };
        rows.push(Prediction {
            pair_id: fields[0].to_string(),
            score,
            label,
        });
    }
    Ok((seed, rows))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSummary {
    pub auroc_mean: Option<f64>,
    pub auroc_std: Option<f64>,
    pub auprc_mean: Option<f64>,
    pub auprc_std: Option<f64>,
    pub n_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dataset: String,
    pub seed_count: usize,
    pub seeds: Vec<u64>,
    pub config_fingerprint: String,
    pub partitions: BTreeMap<String, PartitionSummary>,
}

/// One seed's predictions, tagged with the seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedPredictions {
    pub seed: u64,
    pub rows: Vec<Prediction>,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Some((mean, std))
}

fn curve_csv(header: &str, points: &[(f64, f64)]) -> String {
    let mut out = format!("{header}\n");
    for (x, y) in points {
        let _ = writeln!(out, "{x},{y}");
    }
    out
}

/// Reads a two-column curve CSV back into points.
pub fn parse_curve(text: &str) -> Result<Vec<(f64, f64)>> {
    text.lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let bad = || Error::Parse {
                line: i + 1,
                message: format!("bad curve row {l:?}"),
            };
            let (x, y) = l.split_once(',').ok_or_else(bad)?;
            Ok((x.parse().map_err(|_| bad())?, y.parse().map_err(|_| bad())?))
        })
        .collect()
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Aggregates metrics across seeds per partition, writes `report.json` and
/// per-seed ROC/PR curve CSVs under `out_dir/curves/`.
pub fn emit_report(dataset: &str, config_fingerprint: &str, seeds: &[SeedPredictions], out_dir: &Path) -> Result<MetricsReport> {
    if seeds.is_empty() {
        return Err(Error::Validation("no seed results to report".into()));
    }
    let curves = out_dir.join("curves");
    std::fs::create_dir_all(&curves).map_err(|e| Error::io(&curves, e))?;

    let mut partitions = BTreeMap::new();
    for scenario in Scenario::ALL {
        let mut aurocs = Vec::new();
        let mut auprcs = Vec::new();
        let mut n_pairs = 0;
        for sp in seeds {
            let rows: Vec<&Prediction> = sp.rows.iter().filter(|r| r.scenario() == Some(scenario)).collect();
            n_pairs = n_pairs.max(rows.len());
            let scores: Vec<f64> = rows.iter().map(|r| r.score).collect();
            let labels: Vec<u8> = rows.iter().map(|r| r.label).collect();
            let stem = format!("{}_seed{}", scenario.name(), sp.seed);
            if let Ok(points) = roc_curve(&scores, &labels) {
                aurocs.push(auroc(&scores, &labels)?);
                write_file(&curves.join(format!("{stem}_roc.csv")), &curve_csv("fpr,tpr", &points))?;
            }
            if let Ok(points) = pr_curve(&scores, &labels) {
                auprcs.push(auprc(&scores, &labels)?);
                write_file(&curves.join(format!("{stem}_pr.csv")), &curve_csv("recall,precision", &points))?;
            }
        }
        let (auroc_mean, auroc_std) = mean_std(&aurocs).unzip();
        let (auprc_mean, auprc_std) = mean_std(&auprcs).unzip();
        partitions.insert(
            scenario.name().to_string(),
            PartitionSummary {
                auroc_mean,
                auroc_std,
                auprc_mean,
                auprc_std,
                n_pairs,
            },
        );
    }
    let report = MetricsReport {
        dataset: dataset.to_string(),
        seed_count: seeds.len(),
        seeds: seeds.iter().map(|s| s.seed).collect(),
        config_fingerprint: config_fingerprint.to_string(),
        partitions,
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write_file(&out_dir.join("report.json"), &(json + "\n"))?;
    Ok(report)
}
