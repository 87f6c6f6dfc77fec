//! Synthetic generators, raw-file ingestion and the canonical dataset format.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocols::FrequencyTable;

pub const GAUSSIAN_MU: f64 = 50.0;
pub const GAUSSIAN_SIGMA: f64 = 7.0;
pub const DEFAULT_USERS: usize = 100_000;
pub const DEFAULT_DOMAIN: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    domain_size: usize,
    values: Vec<u32>,
    labels: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(domain_size: usize, values: Vec<u32>) -> Result<Self> {
        if domain_size == 0 || domain_size > u32::MAX as usize {
            return Err(Error::invalid(format!("domain size {domain_size} out of range")));
        }
        if values.is_empty() {
            return Err(Error::EmptyAfterFilter);
        }
        if let Some(v) = values.iter().find(|&&v| v as usize >= domain_size) {
            return Err(Error::invalid(format!("value {v} outside domain of size {domain_size}")));
        }
        Ok(Dataset { domain_size, values, labels: None })
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.domain_size {
            return Err(Error::LengthMismatch { left: labels.len(), right: self.domain_size });
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn domain_size(&self) -> usize {
        self.domain_size
    }

    pub fn n_users(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn summary(&self) -> DatasetSummary {
        DatasetSummary { n_users: self.n_users(), domain_size: self.domain_size }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub n_users: usize,
    pub domain_size: usize,
}

/// Rounds each normal sample to the nearest integer and clamps it into the domain.
pub fn gen_gaussian<R: Rng + ?Sized>(
    mu: f64,
    sigma: f64,
    n: usize,
    domain_size: usize,
    rng: &mut R,
) -> Result<Dataset> {
    if !(sigma >= 0.0 && sigma.is_finite()) || !mu.is_finite() {
        return Err(Error::invalid(format!("bad gaussian parameters mu={mu} sigma={sigma}")));
    }
    if domain_size == 0 {
        return Err(Error::invalid("domain size must be positive"));
    }
    let top = (domain_size - 1) as f64;
    let normal = Normal::new(mu, sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let values = (0..n)
        .map(|_| normal.sample(rng).round().clamp(0.0, top) as u32)
        .collect();
    Dataset::new(domain_size, values)
}

pub fn gen_uniform<R: Rng + ?Sized>(n: usize, domain_size: usize, rng: &mut R) -> Result<Dataset> {
    if domain_size == 0 || domain_size > u32::MAX as usize {
        return Err(Error::invalid("domain size must be positive"));
    }
    let values = (0..n).map(|_| rng.random_range(0..domain_size as u32)).collect();
    Dataset::new(domain_size, values)
}

pub fn true_frequencies(dataset: &Dataset) -> FrequencyTable {
    let mut counts = vec![0u64; dataset.domain_size];
    for &v in &dataset.values {
        counts[v as usize] += 1;
    }
    let n = dataset.n_users() as f64;
    FrequencyTable(counts.into_iter().map(|c| c as f64 / n).collect())
}

/// A column picked by zero-based position or by header name.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Column {
    Index(usize),
    Name(String),
}

impl From<usize> for Column {
    fn from(i: usize) -> Self {
        Column::Index(i)
    }
}

impl From<&str> for Column {
    fn from(s: &str) -> Self {
        match s.parse() {
            Ok(i) => Column::Index(i),
            Err(_) => Column::Name(s.to_string()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum IngestMode {
    /// One value per row; with `top_k`, users whose value falls outside the
    /// `top_k` most frequent are dropped.
    Categorical { column: Column, top_k: Option<usize> },
    /// Multiset rows. Without `user_column` every row is one user's items
    /// (all fields); with it, rows are `(user, item)` pairs grouped by user.
    Transactions {
        top_k: Option<usize>,
        user_column: Option<Column>,
        item_column: Option<Column>,
    },
    /// `index = a * |B| + b` over the sorted distinct values of two columns.
    CrossProduct { first: Column, second: Column },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestOptions {
    #[serde(flatten)]
    pub mode: IngestMode,
    #[serde(default)]
    pub has_header: bool,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    /// Leading lines ignored before parsing (e.g. a banner line).
    #[serde(default)]
    pub skip_lines: usize,
    /// Field values treated as missing, after trimming. Empty fields always are.
    #[serde(default = "default_missing")]
    pub missing: Vec<String>,
}

fn default_delimiter() -> char {
    ','
}

fn default_missing() -> Vec<String> {
    vec!["?".to_string()]
}

impl IngestOptions {
    pub fn new(mode: IngestMode) -> Self {
        IngestOptions {
            mode,
            has_header: false,
            delimiter: default_delimiter(),
            skip_lines: 0,
            missing: default_missing(),
        }
    }

    pub fn categorical(column: impl Into<Column>, top_k: Option<usize>) -> Self {
        Self::new(IngestMode::Categorical { column: column.into(), top_k })
    }

    pub fn transactions(top_k: Option<usize>) -> Self {
        Self::new(IngestMode::Transactions { top_k, user_column: None, item_column: None })
    }

    pub fn cross_product(first: impl Into<Column>, second: impl Into<Column>) -> Self {
        Self::new(IngestMode::CrossProduct { first: first.into(), second: second.into() })
    }

    pub fn with_header(mut self, has_header: bool) -> Self {
        self.has_header = has_header;
        self
    }

    pub fn with_delimiter(mut self, delimiter: char) -> Self {
        self.delimiter = delimiter;
        self
    }

    pub fn with_skip_lines(mut self, n: usize) -> Self {
        self.skip_lines = n;
        self
    }

    fn is_missing(&self, field: &str) -> bool {
        field.is_empty() || self.missing.iter().any(|m| m == field)
    }
}

/// A parsed row: trimmed fields plus its 1-based line number in the file.
struct Row {
    line: u64,
    fields: Vec<String>,
}

struct Table {
    header: Option<Vec<String>>,
    rows: Vec<Row>,
}

impl Table {
    fn resolve(&self, column: &Column) -> Result<usize> {
        match column {
            Column::Index(i) => Ok(*i),
            Column::Name(name) => self
                .header
                .as_ref()
                .and_then(|h| h.iter().position(|c| c == name))
                .ok_or_else(|| Error::Config(format!("column {name:?} not found in header"))),
        }
    }
}

fn field<'a>(row: &'a Row, idx: usize) -> Result<&'a str> {
    row.fields.get(idx).map(String::as_str).ok_or_else(|| Error::Parse {
        line: row.line,
        message: format!("expected at least {} fields, found {}", idx + 1, row.fields.len()),
    })
}

fn read_table(path: &Path, opts: &IngestOptions) -> Result<Table> {
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    let mut header = None;
    let mut rows = Vec::new();
    let whitespace = opts.delimiter == ' ' || opts.delimiter == '\t';
    for (i, raw) in text.lines().enumerate().skip(opts.skip_lines) {
        let line = i as u64 + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<String> = if whitespace {
            raw.split_whitespace().map(str::to_string).collect()
        } else {
            parse_delimited(raw, opts.delimiter, line)?
        };
        if opts.has_header && header.is_none() {
            header = Some(fields);
        } else {
            rows.push(Row { line, fields });
        }
    }
    Ok(Table { header, rows })
}

fn parse_delimited(raw: &str, delimiter: char, line: u64) -> Result<Vec<String>> {
    if !delimiter.is_ascii() {
        return Err(Error::Config(format!("delimiter {delimiter:?} must be ASCII")));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .delimiter(delimiter as u8)
        .from_reader(raw.as_bytes());
    let mut record = csv::StringRecord::new();
    match reader.read_record(&mut record) {
        Ok(_) => Ok(record.iter().map(|f| f.trim().to_string()).collect()),
        Err(e) => Err(Error::Parse { line, message: e.to_string() }),
    }
}

/// Items ranked by count descending, ties by first appearance; truncated to `top_k`.
fn rank_items<'a>(items: impl Iterator<Item = &'a str>, top_k: Option<usize>) -> Vec<String> {
    let mut stats: HashMap<&str, (u64, usize)> = HashMap::new();
    for (pos, item) in items.enumerate() {
        stats.entry(item).or_insert((0, pos)).0 += 1;
    }
    let mut ranked: Vec<(&str, (u64, usize))> = stats.into_iter().collect();
    ranked.sort_by(|a, b| b.1 .0.cmp(&a.1 .0).then(a.1 .1.cmp(&b.1 .1)));
    if let Some(k) = top_k {
        ranked.truncate(k);
    }
    ranked.into_iter().map(|(s, _)| s.to_string()).collect()
}

fn index_of(labels: &[String]) -> HashMap<&str, u32> {
    labels.iter().enumerate().map(|(i, s)| (s.as_str(), i as u32)).collect()
}

/// Sorted distinct values; numeric order when every value parses as a number.
fn sorted_distinct(values: &[&str]) -> Vec<String> {
    let mut distinct: Vec<&str> = values.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let numeric: Option<Vec<f64>> = distinct.iter().map(|s| s.parse::<f64>().ok()).collect();
    if let Some(nums) = numeric {
        let mut pairs: Vec<(f64, &str)> = nums.into_iter().zip(distinct).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(b.1)));
        pairs.into_iter().map(|(_, s)| s.to_string()).collect()
    } else {
        distinct.into_iter().map(str::to_string).collect()
    }
}

/// Reads a raw delimited file and canonicalizes it into a contiguous domain.
pub fn ingest_csv(path: impl AsRef<Path>, opts: &IngestOptions) -> Result<Dataset> {
    ingest_files(&[path.as_ref().to_path_buf()], opts)
}

/// Like `ingest_csv` over the concatenation of several files (e.g. a train/test split).
pub fn ingest_files(paths: &[PathBuf], opts: &IngestOptions) -> Result<Dataset> {
    let mut tables = Vec::with_capacity(paths.len());
    for p in paths {
        tables.push(read_table(p, opts)?);
    }
    let (labels, values) = match &opts.mode {
        IngestMode::Categorical { column, top_k } => categorical(&tables, column, *top_k, opts)?,
        IngestMode::Transactions { top_k, user_column, item_column } => {
            transactions(&tables, *top_k, user_column.as_ref(), item_column.as_ref(), opts)?
        }
        IngestMode::CrossProduct { first, second } => cross_product(&tables, first, second, opts)?,
    };
    if values.is_empty() {
        return Err(Error::EmptyAfterFilter);
    }
    Dataset::new(labels.len(), values)?.with_labels(labels)
}

type Canonical = (Vec<String>, Vec<u32>);

fn categorical(tables: &[Table], column: &Column, top_k: Option<usize>, opts: &IngestOptions) -> Result<Canonical> {
    let mut raw = Vec::new();
    for t in tables {
        let c = t.resolve(column)?;
        for row in &t.rows {
            let f = field(row, c)?;
            if !opts.is_missing(f) {
                raw.push(f);
            }
        }
    }
    let labels = rank_items(raw.iter().copied(), top_k);
    let index = index_of(&labels);
    let values = raw.iter().filter_map(|f| index.get(f).copied()).collect();
    Ok((labels, values))
}

fn transactions(
    tables: &[Table],
    top_k: Option<usize>,
    user_column: Option<&Column>,
    item_column: Option<&Column>,
    opts: &IngestOptions,
) -> Result<Canonical> {
    // Each user's items, users in order of first appearance.
    let mut baskets: Vec<Vec<&str>> = Vec::new();
    let mut in_file_order: Vec<&str> = Vec::new();
    match user_column {
        None => {
            for t in tables {
                for row in &t.rows {
                    let items: Vec<&str> = row.fields.iter().map(String::as_str).filter(|f| !opts.is_missing(f)).collect();
                    in_file_order.extend_from_slice(&items);
                    baskets.push(items);
                }
            }
        }
        Some(uc) => {
            let mut slot: HashMap<&str, usize> = HashMap::new();
            for t in tables {
                let u = t.resolve(uc)?;
                let i = t.resolve(item_column.unwrap_or(&Column::Index(1)))?;
                for row in &t.rows {
                    let (user, item) = (field(row, u)?, field(row, i)?);
                    if opts.is_missing(user) || opts.is_missing(item) {
                        continue;
                    }
                    let next = baskets.len();
                    let s = *slot.entry(user).or_insert(next);
                    if s == next {
                        baskets.push(Vec::new());
                    }
                    baskets[s].push(item);
                    in_file_order.push(item);
                }
            }
        }
    }

    let labels = rank_items(in_file_order.into_iter(), top_k);
    let index = index_of(&labels);
    let mut counts: HashMap<u32, u32> = HashMap::new();
    let mut values = Vec::with_capacity(baskets.len());
    for basket in &baskets {
        counts.clear();
        for item in basket {
            if let Some(&ix) = index.get(item) {
                *counts.entry(ix).or_insert(0) += 1;
            }
        }
        let best = counts.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)));
        if let Some((&ix, _)) = best {
            values.push(ix);
        }
    }
    Ok((labels, values))
}

fn cross_product(tables: &[Table], first: &Column, second: &Column, opts: &IngestOptions) -> Result<Canonical> {
    let mut pairs: Vec<(&str, &str)> = Vec::new();
    for t in tables {
        let (a, b) = (t.resolve(first)?, t.resolve(second)?);
        for row in &t.rows {
            let (fa, fb) = (field(row, a)?, field(row, b)?);
            if row.fields.iter().any(|f| opts.is_missing(f)) {
                continue;
            }
            pairs.push((fa, fb));
        }
    }
    let left = sorted_distinct(&pairs.iter().map(|p| p.0).collect::<Vec<_>>());
    let right = sorted_distinct(&pairs.iter().map(|p| p.1).collect::<Vec<_>>());
    let (li, ri) = (index_of(&left), index_of(&right));
    let width = right.len() as u32;
    let values = pairs.iter().map(|(a, b)| li[a] * width + ri[b]).collect();
    let labels = left
        .iter()
        .flat_map(|a| right.iter().map(move |b| format!("{a}|{b}")))
        .collect();
    Ok((labels, values))
}

/// Path of the `index,label` sidecar written next to a canonical file.
pub fn labels_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".labels.csv");
    PathBuf::from(name)
}

/// Writes the canonical file and, when labels exist, its sidecar.
pub fn write_canonical(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::file(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    writeln!(out, "# domain_size={}", dataset.domain_size)?;
    for v in &dataset.values {
        writeln!(out, "{v}")?;
    }
    out.flush()?;
    if let Some(labels) = &dataset.labels {
        let lp = labels_path(path);
        let mut w = csv::Writer::from_path(&lp)?;
        w.write_record(["index", "label"])?;
        for (i, l) in labels.iter().enumerate() {
            w.write_record([i.to_string().as_str(), l])?;
        }
        w.flush()?;
    }
    Ok(())
}

/// Reads a canonical file, picking up the labels sidecar if present.
pub fn read_canonical(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::file(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    let domain_size: usize = header
        .trim()
        .strip_prefix("# domain_size=")
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| Error::Parse { line: 1, message: format!("expected '# domain_size=<int>', found {header:?}") })?;
    let mut values = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let lineno = i as u64 + 2;
        let v: u32 = t
            .parse()
            .map_err(|_| Error::Parse { line: lineno, message: format!("not a value index: {t:?}") })?;
        if v as usize >= domain_size {
            return Err(Error::Parse { line: lineno, message: format!("value {v} outside domain of size {domain_size}") });
        }
        values.push(v);
    }
    let ds = Dataset::new(domain_size, values)?;
    let lp = labels_path(path);
    if !lp.exists() {
        return Ok(ds);
    }
    let mut labels = vec![String::new(); domain_size];
    let mut r = csv::Reader::from_path(&lp)?;
    for rec in r.deserialize::<(usize, String)>() {
        let (i, l) = rec?;
        let slot = labels
            .get_mut(i)
            .ok_or_else(|| Error::invalid(format!("label index {i} outside domain in {}", lp.display())))?;
        *slot = l;
    }
    ds.with_labels(labels)
}
