//! Dataset ingestion and tokenization.
//!
//! Proteins are tokenized over a fixed residue alphabet: 22 canonical letters
//! plus a single catch-all unknown class, giving 23 residue ids. Two extra ids
//! are reserved for padding and masking. Compounds are tokenized character by
//! character over a printable SMILES alphabet.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The 20 standard residues followed by selenocysteine (U) and pyrrolysine (O).
pub const CANONICAL_RESIDUES: &str = "ACDEFGHIKLMNPQRSTVWYUO";
/// Number of residue classes, including the unknown class.
pub const NUM_RESIDUE_CLASSES: usize = 23;
pub const UNKNOWN_RESIDUE_ID: u8 = 22;
pub const PAD_ID: u8 = 23;
pub const MASK_ID: u8 = 24;
/// Size of the token-id space seen by the protein encoder (residues + pad + mask).
pub const PROTEIN_VOCAB_SIZE: usize = 25;

pub const DEFAULT_L_MAX: usize = 1200;
pub const DEFAULT_MAX_ATOMS: usize = 290;

/// Printable characters that occur in SMILES strings.
pub const SMILES_ALPHABET: &str =
    "#%()*+-./0123456789:=@ABCDEFGHIKLMNOPRSTUVWXYZ[\\]abcdefghiklmnoprstuy$";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResidueVocabulary {
    residue_to_id: [u8; 128],
}

impl Default for ResidueVocabulary {
    fn default() -> Self {
        let mut residue_to_id = [UNKNOWN_RESIDUE_ID; 128];
        for (id, c) in CANONICAL_RESIDUES.bytes().enumerate() {
            residue_to_id[c as usize] = id as u8;
        }
        Self { residue_to_id }
    }
}

impl ResidueVocabulary {
    pub fn pad_id(&self) -> u8 {
        PAD_ID
    }

    pub fn mask_id(&self) -> u8 {
        MASK_ID
    }

    /// Id of `c` after uppercasing; anything non-canonical is the unknown class.
    pub fn id_of(&self, c: char) -> u8 {
        let c = c.to_ascii_uppercase();
        if c.is_ascii() {
            self.residue_to_id[c as usize]
        } else {
            UNKNOWN_RESIDUE_ID
        }
    }

    /// Inverse lookup. The unknown class renders as `X`, pad as `·`, mask as `#`.
    pub fn char_of(&self, id: u8) -> char {
        match id {
            PAD_ID => '·',
            MASK_ID => '#',
            UNKNOWN_RESIDUE_ID => 'X',
            id if (id as usize) < CANONICAL_RESIDUES.len() => {
                CANONICAL_RESIDUES.as_bytes()[id as usize] as char
            }
            _ => '?',
        }
    }

    pub fn decode(&self, tokens: &[u8]) -> String {
        tokens.iter().map(|&t| self.char_of(t)).collect()
    }

    /// Renders the table as `id<TAB>char` lines.
    pub fn table(&self) -> String {
        let mut out = String::new();
        for id in 0..PROTEIN_VOCAB_SIZE as u8 {
            let name = match id {
                PAD_ID => "<pad>".to_string(),
                MASK_ID => "<mask>".to_string(),
                UNKNOWN_RESIDUE_ID => "<unk>".to_string(),
                _ => self.char_of(id).to_string(),
            };
            let _ = writeln!(out, "{id}\t{name}");
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ProteinRecord {
    pub raw: String,
    pub tokens: Vec<u8>,
}

impl ProteinRecord {
    /// Identity key used for seen/unseen classification.
    pub fn key(&self) -> String {
        self.raw.to_ascii_uppercase()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

pub fn encode_protein(raw: &str, vocab: &ResidueVocabulary, l_max: usize) -> Result<ProteinRecord> {
    if raw.is_empty() {
        return Err(Error::Validation("empty protein sequence".into()));
    }
    if l_max == 0 {
        return Err(Error::Validation("l_max must be positive".into()));
    }
    let tokens = raw.chars().take(l_max).map(|c| vocab.id_of(c)).collect();
    Ok(ProteinRecord {
        raw: raw.to_string(),
        tokens,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompoundVocabulary {
    char_to_id: [u16; 128],
    unknown_id: u16,
}

impl Default for CompoundVocabulary {
    fn default() -> Self {
        let unknown_id = SMILES_ALPHABET.len() as u16;
        let mut char_to_id = [unknown_id; 128];
        for (id, c) in SMILES_ALPHABET.bytes().enumerate() {
            char_to_id[c as usize] = id as u16;
        }
        Self {
            char_to_id,
            unknown_id,
        }
    }
}

impl CompoundVocabulary {
    pub fn unknown_id(&self) -> u16 {
        self.unknown_id
    }

    /// Alphabet plus the unknown id.
    pub fn size(&self) -> usize {
        self.unknown_id as usize + 1
    }

    pub fn id_of(&self, c: char) -> u16 {
        if c.is_ascii() {
            self.char_to_id[c as usize]
        } else {
            self.unknown_id
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CompoundRecord {
    pub smiles: String,
    pub tokens: Vec<u16>,
}

impl CompoundRecord {
    pub fn key(&self) -> &str {
        &self.smiles
    }
}

pub fn encode_smiles(raw: &str, max_atoms: usize) -> Result<CompoundRecord> {
    if raw.is_empty() {
        return Err(Error::Validation("empty SMILES string".into()));
    }
    if max_atoms == 0 {
        return Err(Error::Validation("max_atoms must be positive".into()));
    }
    let vocab = CompoundVocabulary::default();
    let tokens = raw.chars().take(max_atoms).map(|c| vocab.id_of(c)).collect();
    Ok(CompoundRecord {
        smiles: raw.to_string(),
        tokens,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct InteractionRecord {
    pub compound: CompoundRecord,
    pub protein: ProteinRecord,
    pub label: u8,
}

/// Column layout and tokenization limits for a TSV interaction file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub smiles_col: usize,
    pub sequence_col: usize,
    pub label_col: usize,
    pub has_header: bool,
    pub l_max: usize,
    pub max_atoms: usize,
}

impl Default for DatasetSchema {
    fn default() -> Self {
        Self {
            smiles_col: 0,
            sequence_col: 1,
            label_col: 2,
            has_header: true,
            l_max: DEFAULT_L_MAX,
            max_atoms: DEFAULT_MAX_ATOMS,
        }
    }
}

pub const TSV_HEADER: &str = "smiles\tsequence\tlabel";

fn parse_label(field: &str, line: usize) -> Result<u8> {
    let value: f64 = field.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("label {field:?} is not a number"),
    })?;
    if value == 0.0 {
        Ok(0)
    } else if value == 1.0 {
        Ok(1)
    } else {
        Err(Error::Validation(format!(
            "line {line}: label {field:?} is not in {{0,1}}"
        )))
    }
}

/// Parses interaction records from TSV text. Line numbers in errors are 1-based.
pub fn parse_dataset_str(text: &str, schema: &DatasetSchema) -> Result<Vec<InteractionRecord>> {
    let vocab = ResidueVocabulary::default();
    let needed = schema
        .smiles_col
        .max(schema.sequence_col)
        .max(schema.label_col)
        + 1;
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if idx == 0 && schema.has_header {
            continue;
        }
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < needed {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected at least {needed} tab-separated columns, found {}", fields.len()),
            });
        }
        let label = parse_label(fields[schema.label_col], line_no)?;
        let wrap = |e: Error| match e {
            Error::Validation(msg) => Error::Validation(format!("line {line_no}: {msg}")),
            other => other,
        };
        let compound = encode_smiles(fields[schema.smiles_col].trim(), schema.max_atoms).map_err(wrap)?;
        let protein =
            encode_protein(fields[schema.sequence_col].trim(), &vocab, schema.l_max).map_err(wrap)?;
        records.push(InteractionRecord {
            compound,
            protein,
            label,
        });
    }
    Ok(records)
}

pub fn parse_dataset(path: &Path, schema: &DatasetSchema) -> Result<Vec<InteractionRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset_str(&text, schema)
}

/// Renders records in the canonical `smiles<TAB>sequence<TAB>label` layout with header.
pub fn write_dataset_string(records: &[InteractionRecord]) -> String {
    let mut out = String::with_capacity(records.len() * 64);
    out.push_str(TSV_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(out, "{}\t{}\t{}", r.compound.smiles, r.protein.raw, r.label);
    }
    out
}

/// Distinct compound and protein identity counts.
pub fn distinct_entities(records: &[InteractionRecord]) -> (usize, usize) {
    let compounds: HashSet<&str> = records.iter().map(|r| r.compound.key()).collect();
    let proteins: HashSet<String> = records.iter().map(|r| r.protein.key()).collect();
    (compounds.len(), proteins.len())
}

/// Proteins available for pretraining, taken from a CPI training split.
/// Duplicates are kept: a protein paired with k compounds appears k times.
#[derive(Debug, Clone, Default)]
pub struct PretrainDataset {
    pub proteins: Vec<ProteinRecord>,
}

impl PretrainDataset {
    pub fn from_training_split(train: &[InteractionRecord]) -> Self {
        Self {
            proteins: train.iter().map(|r| r.protein.clone()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.proteins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.proteins.is_empty()
    }
}
