//! Embedding archives, label tables, trial lists, deterministic splits and
//! class-balanced subsampling.
//!
//! File formats:
//! - archive: ASCII header `EMBA v1 dim=<D> count=<N>\n`, then `N` records of
//!   `<id_len: u32 LE><id: UTF-8 bytes><D x f64 LE>`;
//! - label table: UTF-8 TSV, header `utt\t<factor>...`, one row per utterance;
//! - trial list: UTF-8 text, `<enroll_id> <test_id> target|nontarget` per line.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;

use crate::rng;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{path}: malformed header: {detail}")]
    MalformedHeader { path: String, detail: String },
    #[error("{path}: record {index}: {detail}")]
    BadRecord { path: String, index: usize, detail: String },
    #[error("duplicate utterance id {id:?}")]
    DuplicateId { id: String },
    #[error("vector for {id:?} has length {got}, expected {expected}")]
    DimensionMismatch { id: String, got: usize, expected: usize },
    #[error("non-finite component in vector for {id:?}")]
    NonFinite { id: String },
    #[error("factor {factor:?} not present in label table")]
    UnknownFactor { factor: String },
    #[error("utterance {id:?} has no label row")]
    UnlabeledUtterance { id: String },
    #[error("invalid split fractions: {0}")]
    BadFractions(String),
    #[error("{path}: line {line}: {detail}")]
    BadTrialLine { path: String, line: usize, detail: String },
    #[error("utterance {id:?} not found in archive")]
    MissingId { id: String },
}

// ---------------------------------------------------------------------------
// EmbeddingArchive

/// Ordered collection of fixed-dimension vectors keyed by utterance id.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingArchive {
    dim: usize,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f64>, // len = ids.len() * dim, row per utterance
}

impl EmbeddingArchive {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "archive dimension must be positive");
        EmbeddingArchive { dim, ids: Vec::new(), index: HashMap::new(), data: Vec::new() }
    }

    pub fn push(&mut self, id: &str, vector: &[f64]) -> Result<(), DataError> {
        if vector.len() != self.dim {
            return Err(DataError::DimensionMismatch {
                id: id.to_string(),
                got: vector.len(),
                expected: self.dim,
            });
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(DataError::NonFinite { id: id.to_string() });
        }
        if self.index.contains_key(id) {
            return Err(DataError::DuplicateId { id: id.to_string() });
        }
        self.index.insert(id.to_string(), self.ids.len());
        self.ids.push(id.to_string());
        self.data.extend_from_slice(vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.index.get(id).map(|&i| self.vector(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), self.vector(i)))
    }

    /// Raw payload view, used for fingerprinting.
    pub fn flat_data(&self) -> &[f64] {
        &self.data
    }

    /// Stack the vectors of `ids` into a row-per-utterance matrix.
    pub fn gather(&self, ids: &[String]) -> Result<crate::linalg::Mat, DataError> {
        let mut m = crate::linalg::Mat::zeros(ids.len(), self.dim);
        for (r, id) in ids.iter().enumerate() {
            let v = self
                .get(id)
                .ok_or_else(|| DataError::MissingId { id: id.clone() })?;
            m.row_mut(r).copy_from_slice(v);
        }
        Ok(m)
    }
}

pub fn save_archive(archive: &EmbeddingArchive, path: &Path) -> Result<(), DataError> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "EMBA v1 dim={} count={}\n", archive.dim(), archive.len())?;
    for (id, vec) in archive.iter() {
        let id_bytes = id.as_bytes();
        w.write_all(&(id_bytes.len() as u32).to_le_bytes())?;
        w.write_all(id_bytes)?;
        for v in vec {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_archive(path: &Path) -> Result<EmbeddingArchive, DataError> {
    let path_str = path.display().to_string();
    let mut r = BufReader::new(File::open(path)?);

    let mut header = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            return Err(DataError::MalformedHeader {
                path: path_str,
                detail: "missing newline-terminated header".into(),
            });
        }
        if byte[0] == b'\n' {
            break;
        }
        header.push(byte[0]);
        if header.len() > 256 {
            return Err(DataError::MalformedHeader {
                path: path_str,
                detail: "header longer than 256 bytes".into(),
            });
        }
    }
    let header = String::from_utf8(header).map_err(|_| DataError::MalformedHeader {
        path: path_str.clone(),
        detail: "header is not UTF-8".into(),
    })?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let bad = |detail: &str| DataError::MalformedHeader {
        path: path_str.clone(),
        detail: detail.to_string(),
    };
    if fields.len() != 4 || fields[0] != "EMBA" || fields[1] != "v1" {
        return Err(bad(&format!("expected `EMBA v1 dim=<D> count=<N>`, got {header:?}")));
    }
    let dim: usize = fields[2]
        .strip_prefix("dim=")
        .and_then(|s| s.parse().ok())
        .filter(|&d| d > 0)
        .ok_or_else(|| bad("bad dim field"))?;
    let count: usize = fields[3]
        .strip_prefix("count=")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad("bad count field"))?;

    let mut archive = EmbeddingArchive::new(dim);
    let mut vec_buf = vec![0u8; dim * 8];
    for index in 0..count {
        let rec_err = |detail: String| DataError::BadRecord {
            path: path_str.clone(),
            index,
            detail,
        };
        let mut len_buf = [0u8; 4];
        r.read_exact(&mut len_buf)
            .map_err(|e| rec_err(format!("truncated id length: {e}")))?;
        let id_len = u32::from_le_bytes(len_buf) as usize;
        if id_len == 0 || id_len > 4096 {
            return Err(rec_err(format!("implausible id length {id_len}")));
        }
        let mut id_buf = vec![0u8; id_len];
        r.read_exact(&mut id_buf)
            .map_err(|e| rec_err(format!("truncated id: {e}")))?;
        let id = String::from_utf8(id_buf).map_err(|_| rec_err("id is not UTF-8".into()))?;
        r.read_exact(&mut vec_buf)
            .map_err(|e| rec_err(format!("truncated vector: {e}")))?;
        let vector: Vec<f64> = vec_buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        archive.push(&id, &vector).map_err(|e| rec_err(e.to_string()))?;
    }
    if r.read(&mut byte)? != 0 {
        return Err(DataError::BadRecord {
            path: path_str,
            index: count,
            detail: "trailing bytes after last record".into(),
        });
    }
    Ok(archive)
}

// ---------------------------------------------------------------------------
// LabelTable

/// Per-utterance categorical labels; the factor `speaker` is always present.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelTable {
    factors: Vec<String>,
    ids: Vec<String>,
    rows: HashMap<String, Vec<String>>, // values aligned with `factors`
}

impl LabelTable {
    pub fn new(factors: &[String]) -> Result<Self, DataError> {
        if !factors.iter().any(|f| f == "speaker") {
            return Err(DataError::UnknownFactor { factor: "speaker".into() });
        }
        Ok(LabelTable { factors: factors.to_vec(), ids: Vec::new(), rows: HashMap::new() })
    }

    pub fn push_row(&mut self, id: &str, values: &[String]) -> Result<(), DataError> {
        if values.len() != self.factors.len() {
            return Err(DataError::BadRecord {
                path: "<labels>".into(),
                index: self.ids.len(),
                detail: format!("row has {} cells, expected {}", values.len(), self.factors.len()),
            });
        }
        if self.rows.contains_key(id) {
            return Err(DataError::DuplicateId { id: id.to_string() });
        }
        self.rows.insert(id.to_string(), values.to_vec());
        self.ids.push(id.to_string());
        Ok(())
    }

    pub fn factors(&self) -> &[String] {
        &self.factors
    }

    pub fn utterances(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn factor_index(&self, factor: &str) -> Result<usize, DataError> {
        self.factors
            .iter()
            .position(|f| f == factor)
            .ok_or_else(|| DataError::UnknownFactor { factor: factor.to_string() })
    }

    pub fn label(&self, id: &str, factor: &str) -> Result<&str, DataError> {
        let fi = self.factor_index(factor)?;
        let row = self
            .rows
            .get(id)
            .ok_or_else(|| DataError::UnlabeledUtterance { id: id.to_string() })?;
        Ok(&row[fi])
    }

    /// Sorted unique classes of `factor` over `ids` (or the whole table).
    pub fn classes(&self, factor: &str, ids: Option<&[String]>) -> Result<Vec<String>, DataError> {
        let fi = self.factor_index(factor)?;
        let mut seen: Vec<String> = match ids {
            Some(ids) => ids
                .iter()
                .map(|id| {
                    self.rows
                        .get(id)
                        .map(|r| r[fi].clone())
                        .ok_or_else(|| DataError::UnlabeledUtterance { id: id.clone() })
                })
                .collect::<Result<_, _>>()?,
            None => self.ids.iter().map(|id| self.rows[id][fi].clone()).collect(),
        };
        seen.sort();
        seen.dedup();
        Ok(seen)
    }
}

pub fn save_labels(table: &LabelTable, path: &Path) -> Result<(), DataError> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "utt")?;
    for f in table.factors() {
        write!(w, "\t{f}")?;
    }
    writeln!(w)?;
    for id in table.utterances() {
        write!(w, "{id}")?;
        for f in table.factors() {
            write!(w, "\t{}", table.label(id, f).expect("row complete"))?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_labels(path: &Path) -> Result<LabelTable, DataError> {
    let path_str = path.display().to_string();
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header = lines.next().transpose()?.ok_or_else(|| DataError::MalformedHeader {
        path: path_str.clone(),
        detail: "empty file".into(),
    })?;
    let mut cols = header.split('\t');
    if cols.next() != Some("utt") {
        return Err(DataError::MalformedHeader {
            path: path_str,
            detail: "first column must be `utt`".into(),
        });
    }
    let factors: Vec<String> = cols.map(str::to_string).collect();
    let mut table = LabelTable::new(&factors)?;
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let mut cells = line.split('\t');
        let id = cells.next().unwrap_or("").to_string();
        let values: Vec<String> = cells.map(str::to_string).collect();
        table.push_row(&id, &values).map_err(|e| DataError::BadRecord {
            path: path_str.clone(),
            index: i + 1,
            detail: e.to_string(),
        })?;
    }
    Ok(table)
}

// ---------------------------------------------------------------------------
// Splits

/// Disjoint train/val/test id sets; union equals the input id set.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitSpec {
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub seed: u64,
}

/// Split `ids` by `fractions = (train, val, test)`. With `group_by` set the
/// fractions are applied within each group (floor for val and test, remainder
/// to train); groups with fewer than 3 utterances go wholly to train and are
/// reported in the returned warnings.
pub fn make_splits(
    ids: &[String],
    fractions: (f64, f64, f64),
    group_by: Option<(&str, &LabelTable)>,
    seed: u64,
) -> Result<(SplitSpec, Vec<String>), DataError> {
    let (ft, fv, fe) = fractions;
    if !(ft > 0.0 && fv > 0.0 && fe > 0.0) {
        return Err(DataError::BadFractions(format!("fractions must be positive, got {fractions:?}")));
    }
    if (ft + fv + fe - 1.0).abs() > 1e-9 {
        return Err(DataError::BadFractions(format!(
            "fractions must sum to 1, got {}",
            ft + fv + fe
        )));
    }

    let mut groups: BTreeMap<String, Vec<String>> = BTreeMap::new();
    match group_by {
        Some((factor, table)) => {
            for id in ids {
                let label = table.label(id, factor)?;
                groups.entry(label.to_string()).or_default().push(id.clone());
            }
        }
        None => {
            groups.insert(String::new(), ids.to_vec());
        }
    }

    let mut split = SplitSpec {
        train_ids: Vec::new(),
        val_ids: Vec::new(),
        test_ids: Vec::new(),
        seed,
    };
    let mut warnings = Vec::new();
    for (label, mut members) in groups {
        let grouped = group_by.is_some();
        if grouped && members.len() < 3 {
            warnings.push(format!(
                "group {label:?} has {} utterance(s), cannot populate all splits; placed in train",
                members.len()
            ));
            split.train_ids.extend(members);
            continue;
        }
        let mut rng = rng::stream(seed, "split", rng::fnv1a64(label.as_bytes()));
        members.shuffle(&mut rng);
        let n = members.len();
        let n_val = (fv * n as f64).floor() as usize;
        let n_test = (fe * n as f64).floor() as usize;
        split.val_ids.extend_from_slice(&members[..n_val]);
        split.test_ids.extend_from_slice(&members[n_val..n_val + n_test]);
        split.train_ids.extend_from_slice(&members[n_val + n_test..]);
    }
    Ok((split, warnings))
}

/// Subsample `ids` so every class of `factor` appears exactly as often as the
/// smallest class; uniform without replacement, deterministic in `seed`.
/// Output preserves the input order of the retained ids.
pub fn subsample_balanced(
    ids: &[String],
    factor: &str,
    labels: &LabelTable,
    seed: u64,
) -> Result<Vec<String>, DataError> {
    let mut by_class: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, id) in ids.iter().enumerate() {
        let label = labels.label(id, factor)?;
        by_class.entry(label.to_string()).or_default().push(i);
    }
    let min_count = by_class.values().map(Vec::len).min().unwrap_or(0);
    let mut keep: HashSet<usize> = HashSet::new();
    for (class, mut members) in by_class {
        let mut rng = rng::stream(seed, "balance", rng::fnv1a64(class.as_bytes()));
        members.shuffle(&mut rng);
        keep.extend(&members[..min_count]);
    }
    Ok(ids
        .iter()
        .enumerate()
        .filter(|(i, _)| keep.contains(i))
        .map(|(_, id)| id.clone())
        .collect())
}

// ---------------------------------------------------------------------------
// Trials

#[derive(Clone, Debug, PartialEq)]
pub struct Trial {
    pub enroll: String,
    pub test: String,
    pub is_target: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrialList {
    pub trials: Vec<Trial>,
}

impl TrialList {
    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn n_target(&self) -> usize {
        self.trials.iter().filter(|t| t.is_target).count()
    }

    pub fn n_nontarget(&self) -> usize {
        self.trials.len() - self.n_target()
    }
}

pub fn save_trials(trials: &TrialList, path: &Path) -> Result<(), DataError> {
    let mut w = BufWriter::new(File::create(path)?);
    for t in &trials.trials {
        writeln!(
            w,
            "{} {} {}",
            t.enroll,
            t.test,
            if t.is_target { "target" } else { "nontarget" }
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_trials(path: &Path) -> Result<TrialList, DataError> {
    let path_str = path.display().to_string();
    let reader = BufReader::new(File::open(path)?);
    let mut list = TrialList::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let err = |detail: String| DataError::BadTrialLine {
            path: path_str.clone(),
            line: i + 1,
            detail,
        };
        if fields.len() != 3 {
            return Err(err(format!("expected 3 fields, got {}", fields.len())));
        }
        let is_target = match fields[2] {
            "target" => true,
            "nontarget" => false,
            other => return Err(err(format!("key must be target|nontarget, got {other:?}"))),
        };
        list.trials.push(Trial {
            enroll: fields[0].to_string(),
            test: fields[1].to_string(),
            is_target,
        });
    }
    Ok(list)
}
