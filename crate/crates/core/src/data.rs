//! Interaction datasets: ingestion, protein resolution, splits and the
//! planted-rule synthetic generator.

use std::collections::{HashMap, HashSet};
use std::ops::Range;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::featurize::{featurize_smiles, MolGraph};
use crate::graphnet::GraphBatch;
use crate::protein::StubEmbedder;
use crate::tensor::Tensor;

pub const HEADER: &str = "smiles\tprotein\tlabel";

/// Share of bad rows above which ingestion gives up.
pub const MAX_BAD_ROW_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Record {
    pub smiles: String,
    /// Embedding id or raw amino-acid sequence.
    pub protein: String,
    pub label: u8,
}

/// A raw sequence is a nonempty run of uppercase ASCII letters.
pub fn is_raw_sequence(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_uppercase())
}

/// Maps the protein column to a pooled vector: embedding ids first, then
/// the stub embedder for raw sequences.
#[derive(Debug, Clone, Default)]
pub struct ProteinResolver {
    pub embeddings: HashMap<String, Vec<f64>>,
    pub stub: StubEmbedder,
}

impl ProteinResolver {
    pub fn stub_only(stub: StubEmbedder) -> Self {
        Self {
            embeddings: HashMap::new(),
            stub,
        }
    }

    pub fn with_embeddings(embeddings: HashMap<String, Vec<f64>>, stub: StubEmbedder) -> Result<Self> {
        if let Some((id, v)) = embeddings.iter().find(|(_, v)| v.len() != stub.dim) {
            return Err(Error::Config(format!(
                "embedding {id:?} has width {} but the model expects {}",
                v.len(),
                stub.dim
            )));
        }
        Ok(Self { embeddings, stub })
    }

    pub fn dim(&self) -> usize {
        self.stub.dim
    }

    pub fn resolve(&self, key: &str) -> Result<Vec<f64>> {
        if let Some(v) = self.embeddings.get(key) {
            return Ok(v.clone());
        }
        if is_raw_sequence(key) {
            return self.stub.embed_vector(key);
        }
        Err(Error::Data(format!("unknown protein id {key:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RowError {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestReport {
    pub rows: usize,
    /// Dataset positions of the accepted rows.
    pub accepted: Range<usize>,
    pub errors: Vec<RowError>,
}

/// Records plus their featurized drugs and resolved protein vectors, each
/// distinct drug or protein stored once.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub records: Vec<Record>,
    pub drugs: Vec<MolGraph>,
    pub proteins: Vec<Vec<f64>>,
    record_drug: Vec<usize>,
    record_protein: Vec<usize>,
    drug_lookup: HashMap<String, usize>,
    protein_lookup: HashMap<String, usize>,
    resolver: ProteinResolver,
}

impl Dataset {
    pub fn new(resolver: ProteinResolver) -> Self {
        Self {
            records: Vec::new(),
            drugs: Vec::new(),
            proteins: Vec::new(),
            record_drug: Vec::new(),
            record_protein: Vec::new(),
            drug_lookup: HashMap::new(),
            protein_lookup: HashMap::new(),
            resolver,
        }
    }

    pub fn from_records(records: Vec<Record>, resolver: ProteinResolver) -> Result<Self> {
        let mut d = Self::new(resolver);
        for r in records {
            d.push(r)?;
        }
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn protein_dim(&self) -> usize {
        self.resolver.dim()
    }

    /// Validates and appends one record.
    pub fn push(&mut self, r: Record) -> Result<()> {
        if r.label > 1 {
            return Err(Error::Data(format!("label {} is not 0 or 1", r.label)));
        }
        let drug = match self.drug_lookup.get(&r.smiles) {
            Some(&i) => i,
            None => {
                let g = featurize_smiles(&r.smiles)?;
                self.drugs.push(g);
                self.drug_lookup.insert(r.smiles.clone(), self.drugs.len() - 1);
                self.drugs.len() - 1
            }
        };
        let protein = match self.protein_lookup.get(&r.protein) {
            Some(&i) => i,
            None => {
                let v = self.resolver.resolve(&r.protein)?;
                self.proteins.push(v);
                self.protein_lookup.insert(r.protein.clone(), self.proteins.len() - 1);
                self.proteins.len() - 1
            }
        };
        self.record_drug.push(drug);
        self.record_protein.push(protein);
        self.records.push(r);
        Ok(())
    }

    /// Parses a tab-separated table and appends its good rows. Fails when
    /// more than 1% of the data rows are bad.
    pub fn ingest_text(&mut self, text: &str) -> Result<IngestReport> {
        let start = self.len();
        let mut rows = 0;
        let mut errors = Vec::new();
        let mut saw_header = false;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let row = raw.trim_end_matches('\r');
            if row.trim().is_empty() {
                continue;
            }
            if !saw_header {
                if row.trim() != HEADER {
                    return Err(Error::Ingest {
                        line,
                        reason: format!("expected header {HEADER:?}, found {row:?}"),
                    });
                }
                saw_header = true;
                continue;
            }
            rows += 1;
            if let Err(e) = parse_row(row).and_then(|r| self.push(r)) {
                errors.push(RowError {
                    line,
                    reason: e.to_string(),
                });
            }
        }
        if !saw_header && !text.trim().is_empty() {
            return Err(Error::Ingest {
                line: 1,
                reason: "missing header".into(),
            });
        }
        if errors.len() as f64 > MAX_BAD_ROW_FRACTION * rows as f64 {
            let first = &errors[0];
            return Err(Error::Ingest {
                line: first.line,
                reason: format!(
                    "{} of {rows} rows failed, above the 1% limit; first failure: {}",
                    errors.len(),
                    first.reason
                ),
            });
        }
        Ok(IngestReport {
            rows,
            accepted: start..self.len(),
            errors,
        })
    }

    pub fn ingest_file(&mut self, path: &Path) -> Result<IngestReport> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.ingest_text(&text)
    }

    pub fn labels(&self, idx: &[usize]) -> Vec<u8> {
        idx.iter().map(|&i| self.records[i].label).collect()
    }

    pub fn drug_graph(&self, i: usize) -> &MolGraph {
        &self.drugs[self.record_drug[i]]
    }

    pub fn protein_vector(&self, i: usize) -> &[f64] {
        &self.proteins[self.record_protein[i]]
    }

    pub fn graph_batch(&self, idx: &[usize]) -> Result<GraphBatch> {
        let gs: Vec<&MolGraph> = idx.iter().map(|&i| self.drug_graph(i)).collect();
        GraphBatch::new(&gs)
    }

    /// `[idx.len() × d]` pooled protein vectors.
    pub fn protein_matrix(&self, idx: &[usize]) -> Result<Tensor> {
        let d = self.protein_dim();
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            data.extend_from_slice(self.protein_vector(i));
        }
        Tensor::new(vec![idx.len(), d], data)
    }

    pub fn protein_keys(&self, idx: &[usize]) -> HashSet<String> {
        idx.iter().map(|&i| self.records[i].protein.clone()).collect()
    }

    pub fn drug_keys(&self, idx: &[usize]) -> HashSet<String> {
        idx.iter().map(|&i| self.records[i].smiles.clone()).collect()
    }
}

fn parse_row(row: &str) -> Result<Record> {
    let cols: Vec<&str> = row.split('\t').collect();
    if cols.len() != 3 {
        return Err(Error::Data(format!("expected 3 columns, found {}", cols.len())));
    }
    let (smiles, protein) = (cols[0].trim(), cols[1].trim());
    if smiles.is_empty() || protein.is_empty() {
        return Err(Error::Data("empty smiles or protein column".into()));
    }
    let label = match cols[2].trim() {
        "0" => 0,
        "1" => 1,
        other => return Err(Error::Data(format!("label {other:?} is not 0 or 1"))),
    };
    Ok(Record {
        smiles: smiles.to_string(),
        protein: protein.to_string(),
        label,
    })
}

pub fn format_records(records: &[Record]) -> String {
    let mut out = String::from(HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!("{}\t{}\t{}\n", r.smiles, r.protein, r.label));
    }
    out
}

/// Train/validation/test positions into a [`Dataset`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

pub const MIN_RANDOM_SPLIT: usize = 10;

/// Seeded shuffle, then ⌊0.8n⌋ / ⌊0.1n⌋ / remainder.
pub fn random_split(n: usize, seed: u64) -> Result<Split> {
    if n < MIN_RANDOM_SPLIT {
        return Err(Error::Data(format!(
            "random split needs at least {MIN_RANDOM_SPLIT} records, got {n}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = n * 8 / 10;
    let n_valid = n / 10;
    let test = idx.split_off(n_train + n_valid);
    let valid = idx.split_off(n_train);
    Ok(Split {
        train: idx,
        valid,
        test,
    })
}

/// Split given by three separately ingested ranges.
pub fn presplit(train: Range<usize>, valid: Range<usize>, test: Range<usize>) -> Result<Split> {
    if train.is_empty() || valid.is_empty() || test.is_empty() {
        return Err(Error::Data("presplit files must each contain at least one record".into()));
    }
    Ok(Split {
        train: train.collect(),
        valid: valid.collect(),
        test: test.collect(),
    })
}

/// Planted-rule generator: two protein families built by mutating two
/// random base sequences, two drug scaffold classes, and
/// `label = (scaffold class == protein family)` flipped with probability
/// `label_noise`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyntheticConfig {
    pub pairs: usize,
    pub seed: u64,
    pub label_noise: f64,
    pub proteins_per_family: usize,
    pub min_length: usize,
    pub max_length: usize,
    /// Per-protein substitution rate is drawn uniformly from this range.
    pub mutation: (f64, f64),
    /// Per-protein share of residues copied from the other family's base.
    pub crossover: (f64, f64),
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            pairs: 2000,
            seed: 0,
            label_noise: 0.0,
            proteins_per_family: 50,
            min_length: 60,
            max_length: 100,
            mutation: (0.05, 0.4),
            crossover: (0.0, 0.5),
        }
    }
}

const AMINO: &[u8; 20] = b"ACDEFGHIKLMNPQRSTVWY";
const PREFIXES: [&str; 11] = ["", "C", "CC", "O", "N", "F", "Cl", "OC", "NC", "CCC", "OCC"];
const BRANCHES: [&str; 10] = ["", "(C)", "(O)", "(F)", "(Cl)", "(N)", "(C(=O)O)", "(OC)", "(C#N)", "(CC)"];

/// Drug of scaffold `class`: an aromatic benzene core (0) or a saturated
/// piperidine core (1), decorated with one prefix chain and one branch.
pub fn scaffold_smiles(class: u8, prefix: usize, branch: usize) -> String {
    let (p, b) = (PREFIXES[prefix % PREFIXES.len()], BRANCHES[branch % BRANCHES.len()]);
    match class {
        0 => format!("{p}c1cc{b}ccc1"),
        _ => format!("{p}C1CCN{b}CC1"),
    }
}

fn random_sequence<R: Rng>(len: usize, rng: &mut R) -> Vec<u8> {
    (0..len).map(|_| AMINO[rng.random_range(0..20)]).collect()
}

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Vec<Record>> {
    if !(0.0..=1.0).contains(&cfg.label_noise) {
        return Err(Error::Config(format!("label noise {} outside [0, 1]", cfg.label_noise)));
    }
    if cfg.proteins_per_family == 0 || cfg.min_length < 3 || cfg.min_length > cfg.max_length {
        return Err(Error::Config("invalid synthetic protein settings".into()));
    }
    for (lo, hi) in [cfg.mutation, cfg.crossover] {
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(Error::Config(format!("invalid rate range ({lo}, {hi})")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let len = rng.random_range(cfg.min_length..=cfg.max_length);
    let bases = [random_sequence(len, &mut rng), random_sequence(len, &mut rng)];
    let mut proteins: Vec<(String, u8)> = Vec::new();
    let mut seen = HashSet::new();
    for family in 0..2u8 {
        let mut made = 0;
        while made < cfg.proteins_per_family {
            let m = rng.random_range(cfg.mutation.0..=cfg.mutation.1);
            let x = rng.random_range(cfg.crossover.0..=cfg.crossover.1);
            let other = &bases[1 - family as usize];
            // a contiguous stretch from the other family's base
            let span = (x * len as f64).round() as usize;
            let at = rng.random_range(0..=len - span);
            let mut s = bases[family as usize].clone();
            s[at..at + span].copy_from_slice(&other[at..at + span]);
            for c in s.iter_mut() {
                if rng.random::<f64>() < m {
                    *c = AMINO[rng.random_range(0..20)];
                }
            }
            let s = String::from_utf8(s).expect("ascii residues");
            if seen.insert(s.clone()) {
                proteins.push((s, family));
                made += 1;
            }
        }
    }
    let mut out = Vec::with_capacity(cfg.pairs);
    for _ in 0..cfg.pairs {
        let (protein, family) = &proteins[rng.random_range(0..proteins.len())];
        let class: u8 = rng.random_range(0..2);
        let smiles = scaffold_smiles(
            class,
            rng.random_range(0..PREFIXES.len()),
            rng.random_range(0..BRANCHES.len()),
        );
        let mut label = u8::from(class == *family);
        if rng.random::<f64>() < cfg.label_noise {
            label = 1 - label;
        }
        out.push(Record {
            smiles,
            protein: protein.clone(),
            label,
        });
    }
    Ok(out)
}
