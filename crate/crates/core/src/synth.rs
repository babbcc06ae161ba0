//! Synthetic corpora with known structure: motif-family proteins for the
//! reordering task and a toy interaction set whose labels depend on which
//! motifs co-occur in different parts of a protein.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{encode_protein, encode_smiles, InteractionRecord, ProteinRecord, ResidueVocabulary};
use crate::error::{Error, Result};
use crate::rng::{derived_rng, Rng};

/// Standard residues minus the two letters reserved for planted motifs.
const BACKGROUND_RESIDUES: &[u8] = b"ADEFGHIKLMNPQRSTVY";
const MOTIF_A: &str = "WWWW";
const MOTIF_B: &str = "CCCC";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotifCorpusConfig {
    pub sequences: usize,
    /// Number of consecutive regions, each drawing residues from its own subset.
    pub families: usize,
    pub l_max: usize,
    /// Shortest sequence as a fraction of `l_max`.
    pub min_len_fraction: f64,
    /// Probability that a residue is drawn from the full background set instead.
    pub noise_rate: f64,
}

impl Default for MotifCorpusConfig {
    fn default() -> Self {
        Self {
            sequences: 2000,
            families: 4,
            l_max: 48,
            min_len_fraction: 0.9,
            noise_rate: 0.1,
        }
    }
}

impl MotifCorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.families == 0 || self.families > BACKGROUND_RESIDUES.len() {
            return Err(Error::Config(format!(
                "families must lie in 1..={}",
                BACKGROUND_RESIDUES.len()
            )));
        }
        if self.l_max < self.families {
            return Err(Error::Config("l_max must be at least the number of families".into()));
        }
        if !(0.0..=1.0).contains(&self.min_len_fraction) || !(0.0..=1.0).contains(&self.noise_rate) {
            return Err(Error::Config("fractions must lie in [0, 1]".into()));
        }
        Ok(())
    }

    fn min_len(&self) -> usize {
        ((self.l_max as f64 * self.min_len_fraction).ceil() as usize).clamp(self.families, self.l_max)
    }
}

/// Residues available to region `family`.
pub fn family_letters(family: usize, families: usize) -> Vec<u8> {
    BACKGROUND_RESIDUES
        .iter()
        .enumerate()
        .filter(|(i, _)| i % families == family)
        .map(|(_, &c)| c)
        .collect()
}

fn background_sequence(cfg: &MotifCorpusConfig, rng: &mut Rng) -> Vec<u8> {
    let len = rng.gen_range(cfg.min_len()..=cfg.l_max);
    let subsets: Vec<Vec<u8>> = (0..cfg.families).map(|f| family_letters(f, cfg.families)).collect();
    (0..len)
        .map(|j| {
            if rng.gen_bool(cfg.noise_rate) {
                *BACKGROUND_RESIDUES.choose(rng).expect("nonempty")
            } else {
                *subsets[j * cfg.families / len].choose(rng).expect("nonempty")
            }
        })
        .collect()
}

fn to_record(raw: Vec<u8>, l_max: usize) -> ProteinRecord {
    let raw = String::from_utf8(raw).expect("ascii residues");
    encode_protein(&raw, &ResidueVocabulary::default(), l_max).expect("generated sequences are valid")
}

/// Proteins whose `k`-th region draws from the `k`-th residue family.
pub fn motif_corpus(cfg: &MotifCorpusConfig, seed: u64) -> Vec<ProteinRecord> {
    cfg.validate().expect("valid corpus config");
    let mut rng = derived_rng(seed, &[0x5eed]);
    (0..cfg.sequences)
        .map(|_| to_record(background_sequence(cfg, &mut rng), cfg.l_max))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthCpiConfig {
    pub proteins: usize,
    pub compounds: usize,
    pub pairs: usize,
    pub corpus: MotifCorpusConfig,
}

impl Default for SynthCpiConfig {
    fn default() -> Self {
        Self {
            proteins: 400,
            compounds: 400,
            pairs: 2000,
            corpus: MotifCorpusConfig::default(),
        }
    }
}

/// Writes `motif` into region `region` of `seq` at a random offset.
fn plant(seq: &mut [u8], motif: &str, region: usize, regions: usize, rng: &mut Rng) {
    let len = seq.len();
    let start = region * len / regions;
    let end = ((region + 1) * len / regions).max(start + motif.len()).min(len);
    let last = end.saturating_sub(motif.len()).max(start);
    let at = rng.gen_range(start..=last).min(len - motif.len());
    seq[at..at + motif.len()].copy_from_slice(motif.as_bytes());
}

/// Protein class 1 carries both motifs in two different regions; class 0
/// carries two copies of a single motif.
fn synth_protein(cfg: &MotifCorpusConfig, class: u8, rng: &mut Rng) -> ProteinRecord {
    let mut seq = background_sequence(cfg, rng);
    let mut regions: Vec<usize> = (0..cfg.families.max(2)).collect();
    regions.shuffle(rng);
    let (first, second) = if class == 1 {
        (MOTIF_A, MOTIF_B)
    } else if rng.gen_bool(0.5) {
        (MOTIF_A, MOTIF_A)
    } else {
        (MOTIF_B, MOTIF_B)
    };
    let regions_total = cfg.families.max(2);
    plant(&mut seq, first, regions[0], regions_total, rng);
    plant(&mut seq, second, regions[1], regions_total, rng);
    to_record(seq, cfg.l_max)
}

/// Class 0 compounds are aliphatic chains, class 1 carry aromatic rings.
fn synth_compound(class: u8, rng: &mut Rng) -> String {
    let mut s = String::from(if class == 0 { "C" } else { "c1ccccc1" });
    let pieces: &[&str] = if class == 0 {
        &["C", "CC", "O", "N", "C(C)", "C(=O)", "CO"]
    } else {
        &["c1ccccc1", "c1ccncc1", "Cl", "F", "C", "Br", "O"]
    };
    let count = rng.gen_range(3..=7);
    for _ in 0..count {
        s.push_str(pieces.choose(rng).expect("nonempty"));
    }
    s
}

/// A toy interaction set whose label is `compound class == protein class`.
/// Entities are distinct strings; pairs are sampled without repetition.
pub fn synth_cpi(cfg: &SynthCpiConfig, seed: u64) -> Result<Vec<InteractionRecord>> {
    cfg.corpus.validate()?;
    if cfg.pairs > cfg.proteins * cfg.compounds {
        return Err(Error::Config("more pairs requested than protein-compound combinations".into()));
    }
    let mut rng = derived_rng(seed, &[0xc91]);
    let mut proteins = Vec::with_capacity(cfg.proteins);
    let mut seen = std::collections::HashSet::new();
    while proteins.len() < cfg.proteins {
        let class = (proteins.len() % 2) as u8;
        let p = synth_protein(&cfg.corpus, class, &mut rng);
        if seen.insert(p.key()) {
            proteins.push((p, class));
        }
    }
    let mut compounds = Vec::with_capacity(cfg.compounds);
    let mut seen = std::collections::HashSet::new();
    let mut attempts = 0usize;
    while compounds.len() < cfg.compounds {
        attempts += 1;
        if attempts > cfg.compounds * 1000 {
            return Err(Error::Config("could not generate enough distinct compounds".into()));
        }
        let class = (compounds.len() % 2) as u8;
        let s = synth_compound(class, &mut rng);
        if seen.insert(s.clone()) {
            compounds.push((encode_smiles(&s, 290)?, class));
        }
    }
    let mut combos: Vec<(usize, usize)> =
        (0..cfg.proteins).flat_map(|p| (0..cfg.compounds).map(move |c| (p, c))).collect();
    combos.shuffle(&mut rng);
    combos.truncate(cfg.pairs);
    combos.sort_unstable();
    Ok(combos
        .into_iter()
        .map(|(p, c)| InteractionRecord {
            compound: compounds[c].0.clone(),
            protein: proteins[p].0.clone(),
            label: u8::from(compounds[c].1 == proteins[p].1),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::distinct_entities;

    #[test]
    fn family_letters_partition_background() {
        let mut all: Vec<u8> = (0..4).flat_map(|f| family_letters(f, 4)).collect();
        all.sort_unstable();
        let mut expected = BACKGROUND_RESIDUES.to_vec();
        expected.sort_unstable();
        assert_eq!(all, expected);
    }

    #[test]
    fn corpus_lengths_and_regions() {
        let cfg = MotifCorpusConfig {
            sequences: 50,
            noise_rate: 0.0,
            ..Default::default()
        };
        let corpus = motif_corpus(&cfg, 3);
        assert_eq!(corpus.len(), 50);
        for p in &corpus {
            assert!((cfg.min_len()..=cfg.l_max).contains(&p.len()));
            let first = family_letters(0, 4);
            assert!(first.contains(&p.raw.as_bytes()[0]));
            let last = family_letters(3, 4);
            assert!(last.contains(p.raw.as_bytes().last().unwrap()));
        }
        assert_eq!(corpus, motif_corpus(&cfg, 3));
        assert_ne!(corpus, motif_corpus(&cfg, 4));
    }

    #[test]
    fn cpi_labels_follow_classes() {
        let cfg = SynthCpiConfig {
            proteins: 20,
            compounds: 20,
            pairs: 100,
            ..Default::default()
        };
        let records = synth_cpi(&cfg, 1).unwrap();
        assert_eq!(records.len(), 100);
        assert!(distinct_entities(&records).0 <= 20);
        for r in &records {
            let both = r.protein.raw.contains(MOTIF_A) && r.protein.raw.contains(MOTIF_B);
            let aromatic = r.compound.smiles.contains('c');
            assert_eq!(r.label == 1, both == aromatic, "{} {}", r.protein.raw, r.compound.smiles);
        }
        let positives = records.iter().filter(|r| r.label == 1).count();
        assert!(positives > 20 && positives < 80);
    }

    #[test]
    fn too_many_pairs_rejected() {
        let cfg = SynthCpiConfig {
            proteins: 2,
            compounds: 2,
            pairs: 5,
            ..Default::default()
        };
        assert!(synth_cpi(&cfg, 0).is_err());
    }
}
