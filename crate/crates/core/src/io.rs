//! Embedding files, vocabulary alignment, anchor sampling and run artifacts.
//!
//! Text embedding format:
//!
//! ```text
//! N d
//! key v1 ... vd
//! ```
//!
//! The labeled variant puts an integer class label between the key and the
//! values. The binary format is `RELEMB01`, then `N` and `d` as u64 LE, then
//! `N` keys (u32 LE byte length + UTF-8), then `N·d` f32 LE values row-major.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::RetrievalReport;
use crate::optimizer::{OptimizationTrace, OptimizerConfig, StepRecord};
use crate::space::{AnchorSet, EmbeddingSpace, ParallelSeed};

const EMB_MAGIC: &[u8; 8] = b"RELEMB01";
const MAT_MAGIC: &[u8; 8] = b"RELMAT64";

pub const RUN_FORMAT: &str = "relanchor-run";
pub const RUN_VERSION: &str = "1.0";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingFormat {
    Text,
    Binary,
}

impl EmbeddingFormat {
    /// `.bin` means binary, anything else text.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") => EmbeddingFormat::Binary,
            _ => EmbeddingFormat::Text,
        }
    }
}

/// Parsed rows of an embedding file, before normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct RawEmbeddings {
    pub keys: Vec<String>,
    pub labels: Option<Vec<usize>>,
    pub vectors: Array2<f64>,
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::ParseError {
        line,
        msg: msg.into(),
    }
}

/// Parses the text format. With `labeled`, the second column is a class label.
pub fn read_text_embeddings<R: BufRead>(reader: R, labeled: bool) -> Result<RawEmbeddings> {
    let mut lines = reader.lines().enumerate();
    let (n, d) = loop {
        let (i, line) = lines.next().ok_or_else(|| parse_err(1, "missing header"))?;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let n: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err(i + 1, "header must be `N d`"))?;
        let d: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err(i + 1, "header must be `N d`"))?;
        if parts.next().is_some() {
            return Err(parse_err(i + 1, "header must be `N d`"));
        }
        break (n, d);
    };
    if d == 0 {
        return Err(parse_err(1, "dimension must be positive"));
    }
    let mut keys = Vec::with_capacity(n);
    let mut labels = Vec::new();
    let mut data = Vec::with_capacity(n * d);
    let mut seen = HashSet::with_capacity(n);
    for (i, line) in lines {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        if keys.len() == n {
            return Err(parse_err(lineno, format!("more than the {n} rows declared")));
        }
        let mut parts = line.split_whitespace();
        let key = parts.next().expect("non-empty line").to_string();
        if labeled {
            let label = parts
                .next()
                .and_then(|s| s.parse::<usize>().ok())
                .ok_or_else(|| parse_err(lineno, "missing or invalid label"))?;
            labels.push(label);
        }
        let before = data.len();
        for tok in parts {
            let v: f64 = tok
                .parse()
                .map_err(|_| parse_err(lineno, format!("invalid number `{tok}`")))?;
            data.push(v);
        }
        let found = data.len() - before;
        if found != d {
            return Err(Error::DimInconsistent {
                line: lineno,
                expected: d,
                found,
            });
        }
        if !seen.insert(key.clone()) {
            return Err(Error::DuplicateKey(key));
        }
        keys.push(key);
    }
    if keys.len() != n {
        return Err(parse_err(
            keys.len() + 2,
            format!("header declares {n} rows, found {}", keys.len()),
        ));
    }
    let vectors = Array2::from_shape_vec((n, d), data).expect("shape checked");
    Ok(RawEmbeddings {
        keys,
        labels: labeled.then_some(labels),
        vectors,
    })
}

pub fn write_text_embeddings<W: Write>(
    mut w: W,
    keys: &[String],
    labels: Option<&[usize]>,
    vectors: ndarray::ArrayView2<f64>,
) -> Result<()> {
    writeln!(w, "{} {}", vectors.nrows(), vectors.ncols())?;
    for (i, row) in vectors.rows().into_iter().enumerate() {
        write!(w, "{}", keys[i])?;
        if let Some(l) = labels {
            write!(w, " {}", l[i])?;
        }
        for v in row {
            write!(w, " {}", *v as f32)?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|_| parse_err(0, "truncated binary header"))?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_binary_embeddings<R: Read>(mut r: R) -> Result<RawEmbeddings> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| parse_err(0, "truncated binary header"))?;
    if &magic != EMB_MAGIC {
        return Err(parse_err(0, "not a binary embedding file"));
    }
    let n = read_u64(&mut r)? as usize;
    let d = read_u64(&mut r)? as usize;
    if d == 0 {
        return Err(parse_err(0, "dimension must be positive"));
    }
    let mut keys = Vec::with_capacity(n);
    let mut seen = HashSet::with_capacity(n);
    for i in 0..n {
        let mut len = [0u8; 4];
        r.read_exact(&mut len)
            .map_err(|_| parse_err(i + 1, "truncated key table"))?;
        let mut buf = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut buf)
            .map_err(|_| parse_err(i + 1, "truncated key table"))?;
        let key = String::from_utf8(buf).map_err(|_| parse_err(i + 1, "key is not UTF-8"))?;
        if !seen.insert(key.clone()) {
            return Err(Error::DuplicateKey(key));
        }
        keys.push(key);
    }
    let mut bytes = vec![0u8; n * d * 4];
    r.read_exact(&mut bytes)
        .map_err(|_| parse_err(n + 1, "truncated vector data"))?;
    let data: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(RawEmbeddings {
        keys,
        labels: None,
        vectors: Array2::from_shape_vec((n, d), data).expect("sized above"),
    })
}

pub fn write_binary_embeddings<W: Write>(
    mut w: W,
    keys: &[String],
    vectors: ndarray::ArrayView2<f64>,
) -> Result<()> {
    w.write_all(EMB_MAGIC)?;
    w.write_all(&(vectors.nrows() as u64).to_le_bytes())?;
    w.write_all(&(vectors.ncols() as u64).to_le_bytes())?;
    for k in keys {
        w.write_all(&(k.len() as u32).to_le_bytes())?;
        w.write_all(k.as_bytes())?;
    }
    for v in vectors.iter() {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Loads and row-normalizes an embedding file. The space id is the file stem.
pub fn load_word_embeddings(path: &Path, format: EmbeddingFormat) -> Result<EmbeddingSpace> {
    let raw = match format {
        EmbeddingFormat::Text => read_text_embeddings(BufReader::new(File::open(path)?), false)?,
        EmbeddingFormat::Binary => read_binary_embeddings(BufReader::new(File::open(path)?))?,
    };
    let id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("space")
        .to_string();
    EmbeddingSpace::new(id, raw.keys, raw.vectors)
}

pub fn save_word_embeddings(
    path: &Path,
    space: &EmbeddingSpace,
    format: EmbeddingFormat,
) -> Result<()> {
    let w = BufWriter::new(File::create(path)?);
    match format {
        EmbeddingFormat::Text => write_text_embeddings(w, space.keys(), None, space.vectors()),
        EmbeddingFormat::Binary => write_binary_embeddings(w, space.keys(), space.vectors()),
    }
}

/// Labeled text embeddings: space plus one label per row.
pub fn load_labeled_embeddings(path: &Path) -> Result<(EmbeddingSpace, Vec<usize>)> {
    let raw = read_text_embeddings(BufReader::new(File::open(path)?), true)?;
    let id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("space")
        .to_string();
    let labels = raw.labels.expect("labeled read");
    Ok((EmbeddingSpace::new(id, raw.keys, raw.vectors)?, labels))
}

pub fn save_labeled_embeddings(path: &Path, space: &EmbeddingSpace, labels: &[usize]) -> Result<()> {
    if labels.len() != space.len() {
        return Err(Error::LengthMismatch(labels.len(), space.len()));
    }
    let w = BufWriter::new(File::create(path)?);
    write_text_embeddings(w, space.keys(), Some(labels), space.vectors())
}

/// Shared keys of two spaces, sampled without replacement, in lexicographic
/// order, with both spaces restricted to them row-for-row.
pub fn intersect_and_subsample(
    space_a: &EmbeddingSpace,
    space_b: &EmbeddingSpace,
    n: usize,
    rng_seed: u64,
) -> Result<(Vec<String>, EmbeddingSpace, EmbeddingSpace)> {
    let mut shared: Vec<String> = space_a
        .keys()
        .iter()
        .filter(|k| space_b.index_of(k).is_some())
        .cloned()
        .collect();
    if shared.is_empty() {
        return Err(Error::EmptyIntersection);
    }
    shared.sort();
    let keys = if n >= shared.len() {
        shared
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let mut picked = sample(&mut rng, shared.len(), n).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(|i| shared[i].clone()).collect()
    };
    let ia: Vec<usize> = keys.iter().map(|k| space_a.index_of(k).unwrap()).collect();
    let ib: Vec<usize> = keys.iter().map(|k| space_b.index_of(k).unwrap()).collect();
    let a = space_a.subset(space_a.id(), &ia)?;
    let b = space_b.subset(space_b.id(), &ib)?;
    Ok((keys, a, b))
}

/// Seed pairs and the full source anchor list (seed first).
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorDraw {
    pub seed: ParallelSeed,
    pub anchors_x: AnchorSet,
    pub seed_keys: Vec<String>,
    pub extra_keys: Vec<String>,
}

impl AnchorDraw {
    pub fn anchor_keys(&self) -> Vec<String> {
        self.seed_keys.iter().chain(&self.extra_keys).cloned().collect()
    }

    /// Target anchors for the full key list, when the target knows every key.
    pub fn ground_truth_y(&self, space_y: &EmbeddingSpace) -> Result<AnchorSet> {
        let idx = self
            .anchor_keys()
            .iter()
            .map(|k| space_y.index_of(k).ok_or_else(|| Error::MissingKey(k.clone())))
            .collect::<Result<Vec<_>>>()?;
        AnchorSet::new(space_y, idx)
    }
}

/// Draws `n_total` distinct keys; the first `n_seed` become seed pairs
/// (indices on both sides), the rest are source-only anchors.
pub fn select_seed_and_candidates(
    aligned_keys: &[String],
    space_x: &EmbeddingSpace,
    space_y: &EmbeddingSpace,
    n_seed: usize,
    n_total: usize,
    rng_seed: u64,
) -> Result<AnchorDraw> {
    if n_seed > n_total {
        return Err(Error::SeedExceedsTotal {
            seed: n_seed,
            total: n_total,
        });
    }
    if n_total > aligned_keys.len() {
        return Err(Error::NotEnoughKeys {
            needed: n_total,
            available: aligned_keys.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let picked = sample(&mut rng, aligned_keys.len(), n_total).into_vec();
    let keys: Vec<String> = picked.iter().map(|&i| aligned_keys[i].clone()).collect();
    let lookup = |space: &EmbeddingSpace, ks: &[String]| -> Result<Vec<usize>> {
        ks.iter()
            .map(|k| space.index_of(k).ok_or_else(|| Error::MissingKey(k.clone())))
            .collect()
    };
    let seed_keys = keys[..n_seed].to_vec();
    let extra_keys = keys[n_seed..].to_vec();
    let seed = ParallelSeed::new(
        AnchorSet::new(space_x, lookup(space_x, &seed_keys)?)?,
        AnchorSet::new(space_y, lookup(space_y, &seed_keys)?)?,
    )?;
    let anchors_x = AnchorSet::new(space_x, lookup(space_x, &keys)?)?;
    Ok(AnchorDraw {
        seed,
        anchors_x,
        seed_keys,
        extra_keys,
    })
}

pub fn write_matrix<W: Write>(mut w: W, m: ndarray::ArrayView2<f64>) -> Result<()> {
    w.write_all(MAT_MAGIC)?;
    w.write_all(&(m.nrows() as u64).to_le_bytes())?;
    w.write_all(&(m.ncols() as u64).to_le_bytes())?;
    for v in m.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix<R: Read>(mut r: R) -> Result<Array2<f64>> {
    let corrupt = |what: &str| Error::CorruptArtifact(what.to_string());
    let mut head = [0u8; 24];
    r.read_exact(&mut head).map_err(|_| corrupt("matrix header truncated"))?;
    if &head[..8] != MAT_MAGIC {
        return Err(corrupt("bad matrix magic"));
    }
    let rows = u64::from_le_bytes(head[8..16].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(head[16..24].try_into().unwrap()) as usize;
    let len = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| corrupt("matrix size overflow"))?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != len {
        return Err(corrupt("matrix data truncated"));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Array2::from_shape_vec((rows, cols), data).expect("sized above"))
}

/// Everything needed to reproduce and re-evaluate one anchor run.
///
/// On disk: `run.json` (metadata, config, indices), `raw.bin` (optimized
/// raw anchor rows, f64), `trace.csv` and `report.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArtifact {
    pub format: String,
    pub version: String,
    /// `AO`, `GT` or `Seed`.
    pub method: String,
    pub source_path: String,
    pub target_path: String,
    pub source_id: String,
    pub target_id: String,
    /// Size of the shared-vocabulary sample the run worked on.
    pub n_words: usize,
    pub config: OptimizerConfig,
    pub seed_x: Vec<usize>,
    pub seed_y: Vec<usize>,
    pub anchors_x: Vec<usize>,
    pub anchors_y: Vec<usize>,
    pub anchor_keys_x: Vec<String>,
    pub anchor_keys_y: Vec<String>,
    pub collisions: usize,
    pub seed_count: usize,
    #[serde(skip)]
    pub raw: Option<Array2<f64>>,
    #[serde(skip)]
    pub trace: OptimizationTrace,
    pub reports: Vec<RetrievalReport>,
}

impl RunArtifact {
    pub fn anchors(
        &self,
        space_x: &EmbeddingSpace,
        space_y: &EmbeddingSpace,
    ) -> Result<(AnchorSet, AnchorSet)> {
        Ok((
            AnchorSet::new(space_x, self.anchors_x.clone())?,
            AnchorSet::new(space_y, self.anchors_y.clone())?,
        ))
    }
}

pub fn write_trace_csv<W: Write>(w: W, trace: &OptimizationTrace) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    for r in &trace.records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace_csv<R: Read>(r: R) -> Result<OptimizationTrace> {
    let mut rd = csv::Reader::from_reader(r);
    let records = rd
        .deserialize::<StepRecord>()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::CorruptArtifact(format!("trace.csv: {e}")))?;
    Ok(OptimizationTrace { records })
}

pub fn save_run(dir: &Path, run: &RunArtifact) -> Result<()> {
    fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(run)
        .map_err(|e| Error::CorruptArtifact(e.to_string()))?;
    fs::write(dir.join("run.json"), json + "\n")?;
    let raw_path = dir.join("raw.bin");
    match &run.raw {
        Some(raw) => write_matrix(BufWriter::new(File::create(raw_path)?), raw.view())?,
        None => {
            if raw_path.exists() {
                fs::remove_file(raw_path)?;
            }
        }
    }
    write_trace_csv(File::create(dir.join("trace.csv"))?, &run.trace)?;
    crate::eval::write_reports_csv(File::create(dir.join("report.csv"))?, &run.reports)?;
    Ok(())
}

fn major(version: &str) -> Option<u64> {
    version.split('.').next()?.parse().ok()
}

pub fn load_run(dir: &Path) -> Result<RunArtifact> {
    let text = fs::read_to_string(dir.join("run.json"))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::CorruptArtifact(format!("run.json: {e}")))?;
    let version = value
        .get("version")
        .and_then(|v| v.as_str())
        .ok_or_else(|| Error::CorruptArtifact("run.json: missing version".into()))?;
    if value.get("format").and_then(|v| v.as_str()) != Some(RUN_FORMAT) {
        return Err(Error::CorruptArtifact("run.json: unknown format".into()));
    }
    match (major(version), major(RUN_VERSION)) {
        (Some(found), Some(ours)) if found == ours => {}
        _ => {
            return Err(Error::VersionMismatch {
                found: version.to_string(),
                supported: RUN_VERSION.to_string(),
            })
        }
    }
    let mut run: RunArtifact = serde_json::from_value(value)
        .map_err(|e| Error::CorruptArtifact(format!("run.json: {e}")))?;
    let raw_path = dir.join("raw.bin");
    if raw_path.exists() {
        run.raw = Some(read_matrix(BufReader::new(File::open(raw_path)?))?);
    }
    let trace_path = dir.join("trace.csv");
    if trace_path.exists() {
        run.trace = read_trace_csv(File::open(trace_path)?)?;
    }
    Ok(run)
}
