//! On-disk formats.
//!
//! * Matrices and vectors: UTF-8 text. The first line is `rows cols` (or
//!   `K` for a vector), followed by one line of space-separated values per
//!   row. Values are written with 17 significant digits so they round-trip
//!   exactly.
//! * Consensus statistics: a `K` header line, then sections `c1` (one
//!   line), `c2` (K lines, one per shift `r`) and `c3` (K^2 lines, one per
//!   shift pair `(r, s)`).
//! * Datasets: `features.bin` holds two little-endian `u32` (N, d) followed
//!   by `N * d` little-endian `f32`; labels are text with one integer per
//!   line; a `key=value` manifest binds the files and records K.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::dataset::LabeledDataset;
use crate::error::{HocError, Result};
use crate::matrix::{PriorVector, TransitionMatrix};
use crate::solver::SolverResult;
use crate::stats::ConsensusStats;

pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

fn push_row(out: &mut String, values: &[f64]) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(' ');
        }
        first = false;
        out.push_str(&format_value(*v));
    }
    out.push('\n');
}

/// Renders a `rows x cols` row-major matrix.
pub fn render_dense(rows: usize, cols: usize, values: &[f64]) -> String {
    assert_eq!(values.len(), rows * cols, "values must be rows x cols");
    let mut out = format!("{rows} {cols}\n");
    for r in 0..rows {
        push_row(&mut out, &values[r * cols..(r + 1) * cols]);
    }
    out
}

pub fn render_matrix(t: &TransitionMatrix) -> String {
    render_dense(t.k(), t.k(), t.as_slice())
}

pub fn render_vector(values: &[f64]) -> String {
    let mut out = format!("{}\n", values.len());
    push_row(&mut out, values);
    out
}

pub fn render_stats(stats: &ConsensusStats) -> String {
    let k = stats.k();
    let mut out = format!("{k}\nc1\n");
    push_row(&mut out, stats.c1());
    out.push_str("c2\n");
    for row in stats.c2().chunks(k) {
        push_row(&mut out, row);
    }
    out.push_str("c3\n");
    for row in stats.c3().chunks(k) {
        push_row(&mut out, row);
    }
    out
}

/// Line-oriented reader that tracks positions for diagnostics.
struct Lines<'a> {
    path: &'a Path,
    iter: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn new(path: &'a Path, text: &'a str) -> Self {
        Lines {
            path,
            iter: text.lines().enumerate(),
        }
    }

    fn next_nonempty(&mut self) -> Result<(usize, &'a str)> {
        for (i, line) in self.iter.by_ref() {
            if !line.trim().is_empty() {
                return Ok((i + 1, line.trim()));
            }
        }
        Err(HocError::parse(self.path, 0, "unexpected end of file"))
    }

    fn values(&mut self, expected: usize) -> Result<Vec<f64>> {
        let (line_no, line) = self.next_nonempty()?;
        let values = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|_| HocError::parse(self.path, line_no, format!("`{tok}` is not a number")))
            })
            .collect::<Result<Vec<_>>>()?;
        if values.len() != expected {
            return Err(HocError::parse(
                self.path,
                line_no,
                format!("expected {expected} values, found {}", values.len()),
            ));
        }
        Ok(values)
    }

    fn header(&mut self, count: usize) -> Result<Vec<usize>> {
        let (line_no, line) = self.next_nonempty()?;
        let dims = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<usize>()
                    .map_err(|_| HocError::parse(self.path, line_no, format!("bad dimension `{tok}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        if dims.len() != count {
            return Err(HocError::parse(
                self.path,
                line_no,
                format!("expected {count} dimension(s) in header"),
            ));
        }
        Ok(dims)
    }

    fn expect(&mut self, word: &str) -> Result<()> {
        let (line_no, line) = self.next_nonempty()?;
        if line != word {
            return Err(HocError::parse(self.path, line_no, format!("expected section `{word}`")));
        }
        Ok(())
    }
}

/// Parses a dense matrix, returning `(rows, cols, values)`.
pub fn parse_dense(path: &Path, text: &str) -> Result<(usize, usize, Vec<f64>)> {
    let mut lines = Lines::new(path, text);
    let dims = lines.header(2)?;
    let (rows, cols) = (dims[0], dims[1]);
    let mut values = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        values.extend(lines.values(cols)?);
    }
    Ok((rows, cols, values))
}

pub fn parse_matrix(path: &Path, text: &str) -> Result<TransitionMatrix> {
    let (rows, cols, values) = parse_dense(path, text)?;
    if rows != cols {
        return Err(HocError::parse(path, 1, format!("transition matrix must be square, got {rows}x{cols}")));
    }
    TransitionMatrix::new(rows, values)
}

pub fn parse_vector(path: &Path, text: &str) -> Result<Vec<f64>> {
    let mut lines = Lines::new(path, text);
    let k = lines.header(1)?[0];
    lines.values(k)
}

pub fn parse_stats(path: &Path, text: &str) -> Result<ConsensusStats> {
    let mut lines = Lines::new(path, text);
    let k = lines.header(1)?[0];
    lines.expect("c1")?;
    let c1 = lines.values(k)?;
    lines.expect("c2")?;
    let mut c2 = Vec::with_capacity(k * k);
    for _ in 0..k {
        c2.extend(lines.values(k)?);
    }
    lines.expect("c3")?;
    let mut c3 = Vec::with_capacity(k * k * k);
    for _ in 0..k * k {
        c3.extend(lines.values(k)?);
    }
    ConsensusStats::new(k, c1, c2, c3)
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| HocError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| HocError::io(parent, e))?;
        }
    }
    fs::write(path, text).map_err(|e| HocError::io(path, e))
}

pub fn read_matrix(path: &Path) -> Result<TransitionMatrix> {
    parse_matrix(path, &read_text(path)?)
}

pub fn write_matrix(path: &Path, t: &TransitionMatrix) -> Result<()> {
    write_text(path, &render_matrix(t))
}

pub fn read_prior(path: &Path) -> Result<PriorVector> {
    PriorVector::new(parse_vector(path, &read_text(path)?)?)
}

pub fn read_stats(path: &Path) -> Result<ConsensusStats> {
    parse_stats(path, &read_text(path)?)
}

pub fn write_stats(path: &Path, stats: &ConsensusStats) -> Result<()> {
    write_text(path, &render_stats(stats))
}

/// Little-endian float table: `u32 rows`, `u32 cols`, then `f32` values.
pub fn encode_f32_table(rows: usize, cols: usize, values: &[f32]) -> Result<Vec<u8>> {
    if values.len() != rows * cols {
        return Err(HocError::arg("float table size mismatch"));
    }
    let to_u32 = |v: usize| u32::try_from(v).map_err(|_| HocError::arg("table dimension exceeds u32"));
    let mut out = Vec::with_capacity(8 + 4 * values.len());
    out.extend_from_slice(&to_u32(rows)?.to_le_bytes());
    out.extend_from_slice(&to_u32(cols)?.to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_f32_table(path: &Path, bytes: &[u8]) -> Result<(usize, usize, Vec<f32>)> {
    if bytes.len() < 8 {
        return Err(HocError::parse(path, 0, "float table shorter than its 8-byte header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
    let (rows, cols) = (word(0), word(4));
    let body = &bytes[8..];
    if body.len() != rows * cols * 4 {
        return Err(HocError::parse(
            path,
            0,
            format!("header says {rows}x{cols} floats but body has {} bytes", body.len()),
        ));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok((rows, cols, values))
}

pub fn write_f32_table(path: &Path, rows: usize, cols: usize, values: &[f32]) -> Result<()> {
    let bytes = encode_f32_table(rows, cols, values)?;
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| HocError::io(parent, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| HocError::io(path, e))
}

pub fn read_f32_table(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let bytes = fs::read(path).map_err(|e| HocError::io(path, e))?;
    decode_f32_table(path, &bytes)
}

pub fn render_labels(labels: &[usize]) -> String {
    let mut out = String::with_capacity(labels.len() * 2);
    for y in labels {
        writeln!(out, "{y}").expect("writing to a String");
    }
    out
}

pub fn parse_labels(path: &Path, text: &str) -> Result<Vec<usize>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse::<usize>()
                .map_err(|_| HocError::parse(path, i + 1, format!("`{}` is not a class index", l.trim())))
        })
        .collect()
}

/// Flat `key=value` text with `#` comments.
#[derive(Clone, Debug, Default)]
pub struct KeyValues {
    path: PathBuf,
    entries: BTreeMap<String, (String, usize)>,
}

impl KeyValues {
    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| HocError::parse(path, i + 1, format!("expected key=value, found `{line}`")))?;
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(HocError::parse(path, i + 1, "empty key"));
            }
            if entries.insert(key.clone(), (value.trim().to_string(), i + 1)).is_some() {
                return Err(HocError::parse(path, i + 1, format!("duplicate key `{key}`")));
            }
        }
        Ok(KeyValues {
            path: path.to_path_buf(),
            entries,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(path, &read_text(path)?)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(v, _)| v.as_str())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn line_of(&self, key: &str) -> usize {
        self.entries.get(key).map_or(0, |(_, l)| *l)
    }

    /// Parses `key` if present.
    pub fn parse_opt<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((v, line)) => v.parse::<T>().map(Some).map_err(|_| {
                HocError::parse(&self.path, *line, format!("invalid value `{v}` for `{key}`"))
            }),
        }
    }

    pub fn parse_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.parse_opt(key)?.unwrap_or(default))
    }

    /// Comma-separated list.
    pub fn parse_list<T: std::str::FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((v, line)) => v
                .split(',')
                .map(|tok| {
                    tok.trim().parse::<T>().map_err(|_| {
                        HocError::parse(&self.path, *line, format!("invalid list item `{}` for `{key}`", tok.trim()))
                    })
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
        }
    }

    /// Error naming the first key not in `allowed`.
    pub fn reject_unknown(&self, allowed: &[&str]) -> Result<()> {
        for (key, (_, line)) in &self.entries {
            if !allowed.contains(&key.as_str()) {
                return Err(HocError::parse(&self.path, *line, format!("unknown key `{key}`")));
            }
        }
        Ok(())
    }

    pub fn error(&self, key: &str, message: impl Into<String>) -> HocError {
        HocError::parse(&self.path, self.line_of(key), message)
    }
}

/// Renders `key=value` lines in the given order.
pub fn render_key_values(pairs: &[(&str, String)]) -> String {
    let mut out = String::new();
    for (k, v) in pairs {
        writeln!(out, "{k}={v}").expect("writing to a String");
    }
    out
}

/// Files written for a dataset, relative to its directory.
pub const FEATURES_FILE: &str = "features.bin";
pub const LABELS_FILE: &str = "labels.txt";
pub const CLEAN_LABELS_FILE: &str = "clean_labels.txt";
pub const MANIFEST_FILE: &str = "manifest.txt";

/// Writes features, labels, clean labels (when known) and the manifest into
/// `dir`. Returns the manifest path.
pub fn write_dataset(dir: &Path, dataset: &LabeledDataset) -> Result<PathBuf> {
    write_dataset_with(dir, dataset, &[])
}

/// [`write_dataset`] with extra manifest entries (sidecar bindings).
pub fn write_dataset_with(dir: &Path, dataset: &LabeledDataset, extra: &[(&str, String)]) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| HocError::io(dir, e))?;
    write_f32_table(&dir.join(FEATURES_FILE), dataset.n(), dataset.d(), dataset.features())?;
    write_text(&dir.join(LABELS_FILE), &render_labels(dataset.noisy_labels()))?;
    let mut pairs = vec![
        ("k", dataset.k().to_string()),
        ("n", dataset.n().to_string()),
        ("d", dataset.d().to_string()),
        ("features", FEATURES_FILE.to_string()),
        ("labels", LABELS_FILE.to_string()),
    ];
    if let Some(clean) = dataset.clean_labels() {
        write_text(&dir.join(CLEAN_LABELS_FILE), &render_labels(clean))?;
        pairs.push(("clean_labels", CLEAN_LABELS_FILE.to_string()));
    }
    pairs.extend(extra.iter().cloned());
    let manifest = dir.join(MANIFEST_FILE);
    write_text(&manifest, &render_key_values(&pairs))?;
    Ok(manifest)
}

/// The manifest of a dataset given either the manifest itself or its
/// directory.
pub fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

/// Loads a dataset from its manifest (or from a directory holding one).
pub fn read_dataset(path: &Path) -> Result<LabeledDataset> {
    let manifest = manifest_path(path);
    let kv = KeyValues::load(&manifest)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let k: usize = kv
        .parse_opt("k")?
        .ok_or_else(|| kv.error("k", "manifest is missing `k`"))?;
    let features_path = base.join(kv.get("features").unwrap_or(FEATURES_FILE));
    let labels_path = base.join(kv.get("labels").unwrap_or(LABELS_FILE));
    let (n, d, features) = read_f32_table(&features_path)?;
    let labels = parse_labels(&labels_path, &read_text(&labels_path)?)?;
    if labels.len() != n {
        return Err(HocError::data(format!(
            "{} has {} labels but {} has {n} rows",
            labels_path.display(),
            labels.len(),
            features_path.display()
        )));
    }
    let clean = match kv.get("clean_labels") {
        Some(file) => {
            let p = base.join(file);
            Some(parse_labels(&p, &read_text(&p)?)?)
        }
        None => None,
    };
    if let Some(expected) = kv.parse_opt::<usize>("n")? {
        if expected != n {
            return Err(kv.error("n", format!("manifest says n={expected}, features hold {n}")));
        }
    }
    LabeledDataset::new(k, d, features, labels, clean)
}

/// Writes `T.txt`, `p.txt` and `run.txt` (run metadata) into `dir`.
pub fn write_solver_result(dir: &Path, result: &SolverResult, extra: &[(&str, String)]) -> Result<()> {
    write_matrix(&dir.join("T.txt"), &result.t_hat)?;
    write_text(&dir.join("p.txt"), &render_vector(result.p_hat.as_slice()))?;
    let mut pairs: Vec<(&str, String)> = extra.to_vec();
    pairs.push(("iterations", result.iterations_used.to_string()));
    pairs.push(("final_objective", format_value(result.final_objective)));
    pairs.push(("converged", result.converged.to_string()));
    write_text(&dir.join("run.txt"), &render_key_values(&pairs))
}
