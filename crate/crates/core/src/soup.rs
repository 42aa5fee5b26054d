//! Checkpoint weight arithmetic over a small portable tensor archive.
//!
//! Wire layout (all integers little-endian):
//!
//! ```text
//! "TARC"  u16 version  u32 entry_count
//! entry*: u16 name_len, name (UTF-8), u8 rank, u64 dim * rank, f32 * product(dims)
//! u32 metadata_count
//! meta*:  u16 key_len, key, u32 value_len, value
//! u32 crc32 of every preceding byte
//! ```
//!
//! Entries and metadata keys are written in sorted order, so equal archives
//! always serialize to equal bytes.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::Command;

pub const MAGIC: &[u8; 4] = b"TARC";
pub const VERSION: u16 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ArchiveError {
    #[error("bad magic {0:02x?}, not a tensor archive")]
    BadMagic([u8; 4]),
    #[error("unsupported archive version {0}")]
    UnsupportedVersion(u16),
    #[error("archive truncated while reading {0}")]
    Truncated(&'static str),
    #[error("tensor `{name}`: shape {shape:?} does not match {len} values")]
    ShapeMismatch { name: String, shape: Vec<u64>, len: usize },
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("invalid UTF-8 in {0}")]
    InvalidUtf8(&'static str),
    #[error("{kind} `{name}` is out of order or duplicated")]
    Unsorted { kind: &'static str, name: String },
    #[error("{0} trailing bytes after checksum")]
    TrailingBytes(usize),
    #[error("{kind} `{name}` is too long to encode")]
    TooLong { kind: &'static str, name: String },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        #[source]
        source: Box<ArchiveError>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<u64>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<u64>, data: Vec<f32>) -> Self {
        Self { shape, data }
    }

    fn element_count(shape: &[u64]) -> Option<u64> {
        shape.iter().try_fold(1u64, |acc, &d| acc.checked_mul(d))
    }

    fn is_consistent(&self) -> bool {
        Self::element_count(&self.shape) == Some(self.data.len() as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorArchive {
    pub entries: BTreeMap<String, Tensor>,
    pub metadata: BTreeMap<String, String>,
}

impl TensorArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<u64>, data: Vec<f32>) -> Result<(), ArchiveError> {
        let name = name.into();
        let tensor = Tensor::new(shape, data);
        if !tensor.is_consistent() {
            return Err(ArchiveError::ShapeMismatch {
                name,
                shape: tensor.shape,
                len: tensor.data.len(),
            });
        }
        self.entries.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, ArchiveError> {
        let mut buf = Vec::new();
        write_archive(self, &mut buf)?;
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ArchiveError> {
        decode(bytes)
    }

    /// Content id: SHA-256 of the canonical bytes, hex encoded.
    pub fn id(&self) -> Result<String, ArchiveError> {
        Ok(content_id(&self.to_bytes()?))
    }

    /// Same tensors (names, shapes and bit patterns), ignoring metadata.
    pub fn same_tensors(&self, other: &TensorArchive) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|((na, a), (nb, b))| {
                na == nb
                    && a.shape == b.shape
                    && a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

pub fn content_id(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn put_len<T: TryFrom<usize>>(kind: &'static str, name: &str, len: usize) -> Result<T, ArchiveError> {
    T::try_from(len).map_err(|_| ArchiveError::TooLong {
        kind,
        name: name.to_string(),
    })
}

pub fn write_archive<W: Write>(archive: &TensorArchive, mut w: W) -> Result<(), ArchiveError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&put_len::<u32>("archive", "entries", archive.entries.len())?.to_le_bytes());
    for (name, t) in &archive.entries {
        if !t.is_consistent() {
            return Err(ArchiveError::ShapeMismatch {
                name: name.clone(),
                shape: t.shape.clone(),
                len: t.data.len(),
            });
        }
        buf.extend_from_slice(&put_len::<u16>("tensor name", name, name.len())?.to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(put_len::<u8>("tensor rank of", name, t.shape.len())?);
        for d in &t.shape {
            buf.extend_from_slice(&d.to_le_bytes());
        }
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf.extend_from_slice(&put_len::<u32>("archive", "metadata", archive.metadata.len())?.to_le_bytes());
    for (k, v) in &archive.metadata {
        buf.extend_from_slice(&put_len::<u16>("metadata key", k, k.len())?.to_le_bytes());
        buf.extend_from_slice(k.as_bytes());
        buf.extend_from_slice(&put_len::<u32>("metadata value of", k, v.len())?.to_le_bytes());
        buf.extend_from_slice(v.as_bytes());
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_archive<R: Read>(mut r: R) -> Result<TensorArchive, ArchiveError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode(&bytes)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], ArchiveError> {
        if self.bytes.len() - self.pos < n {
            return Err(ArchiveError::Truncated(what));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self, what: &'static str) -> Result<[u8; N], ArchiveError> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, ArchiveError> {
        Ok(self.array::<1>(what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, ArchiveError> {
        Ok(u16::from_le_bytes(self.array(what)?))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, ArchiveError> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, ArchiveError> {
        Ok(u64::from_le_bytes(self.array(what)?))
    }

    fn string(&mut self, len: usize, what: &'static str) -> Result<String, ArchiveError> {
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| ArchiveError::InvalidUtf8(what))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

fn decode(bytes: &[u8]) -> Result<TensorArchive, ArchiveError> {
    let mut c = Cursor { bytes, pos: 0 };
    let magic: [u8; 4] = c.array("magic")?;
    if &magic != MAGIC {
        return Err(ArchiveError::BadMagic(magic));
    }
    let version = c.u16("version")?;
    if version != VERSION {
        return Err(ArchiveError::UnsupportedVersion(version));
    }
    let count = c.u32("entry count")?;
    let mut archive = TensorArchive::new();
    let mut last: Option<String> = None;
    for _ in 0..count {
        let name_len = c.u16("tensor name length")? as usize;
        let name = c.string(name_len, "tensor name")?;
        if last.as_ref().is_some_and(|l| *l >= name) {
            return Err(ArchiveError::Unsorted { kind: "tensor", name });
        }
        let rank = c.u8("tensor rank")? as usize;
        let shape = (0..rank).map(|_| c.u64("tensor dims")).collect::<Result<Vec<_>, _>>()?;
        let n = Tensor::element_count(&shape).ok_or_else(|| ArchiveError::ShapeMismatch {
            name: name.clone(),
            shape: shape.clone(),
            len: 0,
        })?;
        if n.checked_mul(4).is_none_or(|b| b > c.remaining() as u64) {
            return Err(ArchiveError::Truncated("tensor data"));
        }
        let raw = c.take(n as usize * 4, "tensor data")?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("chunk of 4")))
            .collect();
        archive.entries.insert(name.clone(), Tensor { shape, data });
        last = Some(name);
    }
    let meta_count = c.u32("metadata count")?;
    let mut last: Option<String> = None;
    for _ in 0..meta_count {
        let key_len = c.u16("metadata key length")? as usize;
        let key = c.string(key_len, "metadata key")?;
        if last.as_ref().is_some_and(|l| *l >= key) {
            return Err(ArchiveError::Unsorted {
                kind: "metadata key",
                name: key,
            });
        }
        let value_len = c.u32("metadata value length")? as usize;
        let value = c.string(value_len, "metadata value")?;
        archive.metadata.insert(key.clone(), value);
        last = Some(key);
    }
    let body_end = c.pos;
    let stored = c.u32("checksum")?;
    if c.remaining() != 0 {
        return Err(ArchiveError::TrailingBytes(c.remaining()));
    }
    let computed = crc32fast::hash(&bytes[..body_end]);
    if stored != computed {
        return Err(ArchiveError::Checksum { stored, computed });
    }
    Ok(archive)
}

fn with_file<T>(path: &Path, r: Result<T, ArchiveError>) -> Result<T, ArchiveError> {
    r.map_err(|e| ArchiveError::File {
        path: path.to_path_buf(),
        source: Box::new(e),
    })
}

pub fn read_archive_file(path: &Path) -> Result<TensorArchive, ArchiveError> {
    with_file(path, fs::read(path).map_err(ArchiveError::from).and_then(|b| decode(&b)))
}

/// Write via a temporary sibling and rename, so readers never see a
/// partially written archive. Returns the content id.
pub fn write_archive_file(path: &Path, archive: &TensorArchive) -> Result<String, ArchiveError> {
    let run = || -> Result<String, ArchiveError> {
        let bytes = archive.to_bytes()?;
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".partial");
        let tmp = PathBuf::from(tmp);
        fs::write(&tmp, &bytes)?;
        fs::rename(&tmp, path)?;
        Ok(content_id(&bytes))
    };
    with_file(path, run())
}

#[derive(Debug, thiserror::Error)]
pub enum SoupError {
    #[error("no ingredients")]
    Empty,
    #[error("archives are not soup-compatible: {0}")]
    Incompatible(String),
    #[error("decay must lie in [0, 1], got {0}")]
    InvalidDecay(f64),
    #[error("evaluating {ingredient}: {source}")]
    Evaluator {
        ingredient: String,
        #[source]
        source: EvalError,
    },
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error("candidate list {}: line {line}: {message}", path.display())]
    CandidateList { path: PathBuf, line: usize, message: String },
}

/// Check that `b` has exactly the names and shapes of `a`.
pub fn check_compatible(a: &TensorArchive, b: &TensorArchive) -> Result<(), SoupError> {
    for (name, ta) in &a.entries {
        match b.entries.get(name) {
            None => return Err(SoupError::Incompatible(format!("tensor `{name}` missing from second archive"))),
            Some(tb) if tb.shape != ta.shape => {
                return Err(SoupError::Incompatible(format!(
                    "tensor `{name}` has shape {:?} vs {:?}",
                    ta.shape, tb.shape
                )))
            }
            Some(_) => {}
        }
    }
    if let Some(extra) = b.entries.keys().find(|k| !a.entries.contains_key(*k)) {
        return Err(SoupError::Incompatible(format!("tensor `{extra}` missing from first archive")));
    }
    Ok(())
}

fn ids(archives: &[&TensorArchive]) -> Result<Vec<String>, SoupError> {
    archives.iter().map(|a| a.id().map_err(SoupError::from)).collect()
}

/// Elementwise mean. Per element the values are sorted before summing, so
/// the result does not depend on ingredient order.
pub fn uniform_soup(archives: &[&TensorArchive]) -> Result<TensorArchive, SoupError> {
    let first = *archives.first().ok_or(SoupError::Empty)?;
    for a in &archives[1..] {
        check_compatible(first, a)?;
    }
    let n = archives.len() as f64;
    let mut out = TensorArchive::new();
    let mut column = Vec::with_capacity(archives.len());
    for (name, t) in &first.entries {
        let tensors: Vec<&Tensor> = archives.iter().map(|a| &a.entries[name]).collect();
        let data = (0..t.data.len())
            .map(|i| {
                column.clear();
                column.extend(tensors.iter().map(|t| t.data[i]));
                column.sort_by(f32::total_cmp);
                (column.iter().map(|&v| v as f64).sum::<f64>() / n) as f32
            })
            .collect();
        out.entries.insert(name.clone(), Tensor::new(t.shape.clone(), data));
    }
    let mut lineage = ids(archives)?;
    lineage.sort();
    out.metadata.insert("soup.kind".into(), "uniform".into());
    out.metadata.insert("soup.ingredients".into(), lineage.join(","));
    Ok(out)
}

/// `decay * running + (1 - decay) * new`, elementwise.
pub fn ema_update(running: &TensorArchive, new: &TensorArchive, decay: f64) -> Result<TensorArchive, SoupError> {
    if !(0.0..=1.0).contains(&decay) {
        return Err(SoupError::InvalidDecay(decay));
    }
    check_compatible(running, new)?;
    let mut out = TensorArchive {
        entries: BTreeMap::new(),
        metadata: running.metadata.clone(),
    };
    for (name, r) in &running.entries {
        let n = &new.entries[name];
        let data = r
            .data
            .iter()
            .zip(&n.data)
            .map(|(&a, &b)| {
                if a.to_bits() == b.to_bits() {
                    a
                } else {
                    (decay * a as f64 + (1.0 - decay) * b as f64) as f32
                }
            })
            .collect();
        out.entries.insert(name.clone(), Tensor::new(r.shape.clone(), data));
    }
    out.metadata.insert("ema.decay".into(), decay.to_string());
    Ok(out)
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("could not run `{command}`: {source}")]
    Spawn {
        command: String,
        #[source]
        source: io::Error,
    },
    #[error("`{command}` exited with {status}: {stderr}")]
    Failed {
        command: String,
        status: String,
        stderr: String,
    },
    #[error("`{command}` printed {output:?}, expected a single number")]
    BadOutput { command: String, output: String },
    #[error("score is not finite: {0}")]
    NonFinite(f64),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error("{0}")]
    Other(String),
}

/// Scores an archive; higher is better. Must be deterministic.
pub trait Evaluator {
    fn score(&mut self, archive: &TensorArchive) -> Result<f64, EvalError>;
}

impl<F: FnMut(&TensorArchive) -> f64> Evaluator for F {
    fn score(&mut self, archive: &TensorArchive) -> Result<f64, EvalError> {
        Ok(self(archive))
    }
}

/// Runs `<command> <archive-path>` through `sh` and parses stdout as a number.
#[derive(Debug, Clone)]
pub struct CommandEvaluator {
    pub command: String,
    pub scratch_dir: PathBuf,
    trials: usize,
}

impl CommandEvaluator {
    pub fn new(command: impl Into<String>, scratch_dir: impl Into<PathBuf>) -> Self {
        Self {
            command: command.into(),
            scratch_dir: scratch_dir.into(),
            trials: 0,
        }
    }
}

impl Evaluator for CommandEvaluator {
    fn score(&mut self, archive: &TensorArchive) -> Result<f64, EvalError> {
        let path = self.scratch_dir.join(format!("trial_{:04}.tarc", self.trials));
        self.trials += 1;
        write_archive_file(&path, archive)?;
        let output = Command::new("sh")
            .arg("-c")
            .arg(format!("{} \"$1\"", self.command))
            .arg("adaptrack")
            .arg(&path)
            .output()
            .map_err(|source| EvalError::Spawn {
                command: self.command.clone(),
                source,
            })?;
        if !output.status.success() {
            return Err(EvalError::Failed {
                command: self.command.clone(),
                status: output.status.to_string(),
                stderr: String::from_utf8_lossy(&output.stderr).trim().to_string(),
            });
        }
        let text = String::from_utf8_lossy(&output.stdout).trim().to_string();
        let score: f64 = text.parse().map_err(|_| EvalError::BadOutput {
            command: self.command.clone(),
            output: text.clone(),
        })?;
        if !score.is_finite() {
            return Err(EvalError::NonFinite(score));
        }
        Ok(score)
    }
}

#[derive(Debug, Clone)]
pub struct Candidate {
    pub id: String,
    pub archive: TensorArchive,
    pub val_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngredientLog {
    pub id: String,
    pub val_score: f64,
    pub accepted: bool,
    /// Score of the running soup once this ingredient was decided.
    pub score_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoupLog {
    pub ingredients: Vec<IngredientLog>,
    pub final_score: f64,
    pub strict: bool,
}

#[derive(Debug, Clone)]
pub struct SoupResult {
    pub archive: TensorArchive,
    pub log: SoupLog,
}

/// Running uniform mean kept as exact per-element sums.
struct RunningSum {
    sums: BTreeMap<String, (Vec<u64>, Vec<f64>)>,
    count: usize,
}

impl RunningSum {
    fn new(a: &TensorArchive) -> Self {
        let sums = a
            .entries
            .iter()
            .map(|(n, t)| (n.clone(), (t.shape.clone(), t.data.iter().map(|&v| v as f64).collect())))
            .collect();
        Self { sums, count: 1 }
    }

    fn add(&mut self, a: &TensorArchive) {
        for (name, (_, s)) in self.sums.iter_mut() {
            for (x, &v) in s.iter_mut().zip(&a.entries[name].data) {
                *x += v as f64;
            }
        }
        self.count += 1;
    }

    fn mean_with(&self, extra: Option<&TensorArchive>) -> TensorArchive {
        let n = (self.count + extra.is_some() as usize) as f64;
        let mut out = TensorArchive::new();
        for (name, (shape, s)) in &self.sums {
            let data = match extra {
                Some(e) => s.iter().zip(&e.entries[name].data).map(|(&x, &v)| ((x + v as f64) / n) as f32).collect(),
                None => s.iter().map(|&x| (x / n) as f32).collect(),
            };
            out.entries.insert(name.clone(), Tensor::new(shape.clone(), data));
        }
        out
    }
}

/// Greedy soup: visit candidates by descending validation score and keep each
/// one whose addition to the running mean does not lower the evaluator score
/// (or strictly raises it when `strict`).
pub fn greedy_soup(
    mut candidates: Vec<Candidate>,
    evaluator: &mut dyn Evaluator,
    strict: bool,
) -> Result<SoupResult, SoupError> {
    if candidates.is_empty() {
        return Err(SoupError::Empty);
    }
    candidates.sort_by(|a, b| b.val_score.total_cmp(&a.val_score).then_with(|| a.id.cmp(&b.id)));
    for c in &candidates[1..] {
        check_compatible(&candidates[0].archive, &c.archive)?;
    }
    let eval = |e: &mut dyn Evaluator, a: &TensorArchive, id: &str| {
        e.score(a).map_err(|source| SoupError::Evaluator {
            ingredient: id.to_string(),
            source,
        })
    };

    let best = &candidates[0];
    let mut running = RunningSum::new(&best.archive);
    let mut best_score = eval(evaluator, &best.archive, &best.id)?;
    let mut accepted_ids = vec![best.id.clone()];
    let mut ingredients = vec![IngredientLog {
        id: best.id.clone(),
        val_score: best.val_score,
        accepted: true,
        score_after: best_score,
    }];
    for c in &candidates[1..] {
        let trial = running.mean_with(Some(&c.archive));
        let score = eval(evaluator, &trial, &c.id)?;
        let accepted = if strict { score > best_score } else { score >= best_score };
        if accepted {
            running.add(&c.archive);
            best_score = score;
            accepted_ids.push(c.id.clone());
        }
        ingredients.push(IngredientLog {
            id: c.id.clone(),
            val_score: c.val_score,
            accepted,
            score_after: best_score,
        });
    }
    // A lone ingredient is returned as is, metadata included.
    let archive = if accepted_ids.len() == 1 {
        candidates[0].archive.clone()
    } else {
        let mut mean = running.mean_with(None);
        mean.metadata.insert("soup.kind".into(), "greedy".into());
        mean.metadata.insert("soup.ingredients".into(), accepted_ids.join(","));
        mean
    };
    Ok(SoupResult {
        archive,
        log: SoupLog {
            ingredients,
            final_score: best_score,
            strict,
        },
    })
}

/// Parse a candidate list: one `<archive-path> <val-score>` per line; blank
/// lines and `#` comments are skipped. Relative paths resolve against the
/// list file's directory.
pub fn read_candidate_list(path: &Path) -> Result<Vec<(PathBuf, f64)>, SoupError> {
    let err = |line: usize, message: String| SoupError::CandidateList {
        path: path.to_path_buf(),
        line,
        message,
    };
    let text = fs::read_to_string(path).map_err(|e| err(0, e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.rsplitn(2, |c: char| c.is_whitespace() || c == ',');
        let (score, file) = match (parts.next(), parts.next()) {
            (Some(s), Some(f)) => (s, f.trim_end_matches([',', ' ', '\t'])),
            _ => return Err(err(i + 1, "expected `<path> <score>`".into())),
        };
        let score: f64 = score.parse().map_err(|_| err(i + 1, format!("bad score {score:?}")))?;
        out.push((base.join(file), score));
    }
    Ok(out)
}
