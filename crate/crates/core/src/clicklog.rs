//! Click-log data model and ingestion.
//!
//! One SERP per line, tab separated:
//!
//! ```text
//! session_id<TAB>query_token<TAB>doc_1:vert_1:click_1 doc_2:vert_2:click_2 ...
//! ```
//!
//! A dataset directory holds `train.tsv`, `valid.tsv`, `test.tsv` and an
//! optional `annotations.tsv` (`query_token<TAB>doc_token<TAB>grade`).
//! Vocabularies are built from the training split only; unseen tokens in the
//! other splits map to [`OOV_ID`].

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

/// Reserved id of the zero-vector padding slot.
pub const PAD_ID: u32 = 0;
/// Reserved id for tokens not seen during training.
pub const OOV_ID: u32 = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const OOV_TOKEN: &str = "<oov>";
pub const DEFAULT_LIST_LEN: usize = 10;
pub const DEFAULT_MAX_GRADE: u8 = 4;

/// Rows of the interaction embedding: padding, (unused) OOV, skip, click.
pub const CLICK_VOCAB: usize = 4;

/// Embedding row of an observed interaction.
#[inline]
pub fn click_token(click: u8) -> u32 {
    2 + click as u32
}

/// Dense token ids with reserved padding (0) and OOV (1) slots.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocab {
    pub fn new() -> Self {
        let mut v = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        v.intern(PAD_TOKEN);
        v.intern(OOV_TOKEN);
        v
    }

    pub fn intern(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    /// Id of `token`, or [`OOV_ID`] when it was never interned.
    pub fn lookup(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(OOV_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Table size including the reserved slots.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn tokens(&self) -> impl Iterator<Item = (u32, &str)> {
        self.tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (i as u32, t.as_str()))
    }
}

/// One SERP line with its original tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawSerp {
    pub session_id: String,
    pub query: String,
    pub docs: Vec<String>,
    pub verticals: Vec<String>,
    pub clicks: Vec<u8>,
}

impl RawSerp {
    pub fn parse(line: &str, list_len: usize) -> std::result::Result<Self, String> {
        let mut fields = line.split('\t');
        let session_id = fields.next().filter(|s| !s.is_empty()).ok_or("missing session id")?;
        let query = fields.next().filter(|s| !s.is_empty()).ok_or("missing query")?;
        let results = fields.next().ok_or("missing result list")?;
        if fields.next().is_some() {
            return Err("too many fields".into());
        }
        let mut docs = Vec::with_capacity(list_len);
        let mut verticals = Vec::with_capacity(list_len);
        let mut clicks = Vec::with_capacity(list_len);
        for item in results.split(' ') {
            let mut parts = item.rsplitn(3, ':');
            let click = parts.next().ok_or("empty result")?;
            let vert = parts.next().ok_or_else(|| format!("result {item:?} lacks a vertical"))?;
            let doc = parts.next().ok_or_else(|| format!("result {item:?} lacks a document"))?;
            if doc.is_empty() || vert.is_empty() {
                return Err(format!("empty token in {item:?}"));
            }
            let c = match click {
                "0" => 0,
                "1" => 1,
                other => return Err(format!("click must be 0 or 1, got {other:?}")),
            };
            docs.push(doc.to_string());
            verticals.push(vert.to_string());
            clicks.push(c);
        }
        if docs.len() != list_len {
            return Err(format!("expected {list_len} results, found {}", docs.len()));
        }
        let mut seen = HashSet::with_capacity(list_len);
        if let Some(dup) = docs.iter().find(|d| !seen.insert(d.as_str())) {
            return Err(format!("document {dup:?} repeated within the list"));
        }
        Ok(Self {
            session_id: session_id.to_string(),
            query: query.to_string(),
            docs,
            verticals,
            clicks,
        })
    }

    pub fn to_line(&self) -> String {
        let mut s = format!("{}\t{}\t", self.session_id, self.query);
        for (i, ((d, v), c)) in self
            .docs
            .iter()
            .zip(&self.verticals)
            .zip(&self.clicks)
            .enumerate()
        {
            if i > 0 {
                s.push(' ');
            }
            let _ = write!(s, "{d}:{v}:{c}");
        }
        s
    }

    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            session_id: self.session_id.clone(),
            query: self.query.clone(),
            docs: order.iter().map(|&i| self.docs[i].clone()).collect(),
            verticals: order.iter().map(|&i| self.verticals[i].clone()).collect(),
            clicks: vec![0; order.len()],
        }
    }
}

/// One query impression with dense ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SerpRecord {
    pub session_id: String,
    pub query: u32,
    pub docs: Vec<u32>,
    pub verticals: Vec<u32>,
    pub clicks: Vec<u8>,
}

impl SerpRecord {
    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn with_clicks(&self, clicks: Vec<u8>) -> Self {
        Self {
            clicks,
            ..self.clone()
        }
    }

    /// First `k` ranks of the record.
    pub fn truncated(&self, k: usize) -> Self {
        Self {
            session_id: self.session_id.clone(),
            query: self.query,
            docs: self.docs[..k].to_vec(),
            verticals: self.verticals[..k].to_vec(),
            clicks: self.clicks[..k].to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PermutationMode {
    None,
    Half,
    Full,
}

impl std::str::FromStr for PermutationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "half" => Ok(Self::Half),
            "full" => Ok(Self::Full),
            other => Err(Error::Config(format!("unknown permutation mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for PermutationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::Half => "half",
            Self::Full => "full",
        })
    }
}

/// Rank order for a list of length `len`. `Half` shuffles the first
/// `len / 2` ranks among themselves and the remainder among themselves.
pub fn permutation<R: Rng + ?Sized>(len: usize, mode: PermutationMode, rng: &mut R) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    match mode {
        PermutationMode::None => {}
        PermutationMode::Half => {
            let mid = len / 2;
            order[..mid].shuffle(rng);
            order[mid..].shuffle(rng);
        }
        PermutationMode::Full => order.shuffle(rng),
    }
    order
}

/// Reorders a record's documents (verticals follow). Permuted lists have no
/// observed clicks, so clicks are reset to zero unless `mode` is `None`.
pub fn permute_serp<R: Rng + ?Sized>(r: &SerpRecord, mode: PermutationMode, rng: &mut R) -> SerpRecord {
    if mode == PermutationMode::None {
        return r.clone();
    }
    let order = permutation(r.len(), mode, rng);
    apply_order(r, &order)
}

pub(crate) fn apply_order(r: &SerpRecord, order: &[usize]) -> SerpRecord {
    SerpRecord {
        session_id: r.session_id.clone(),
        query: r.query,
        docs: order.iter().map(|&i| r.docs[i]).collect(),
        verticals: order.iter().map(|&i| r.verticals[i]).collect(),
        clicks: vec![0; order.len()],
    }
}

/// Encoded records plus their original lines, index aligned.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Split {
    pub records: Vec<SerpRecord>,
    pub raw: Vec<RawSerp>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&SerpRecord, &RawSerp)> {
        self.records.iter().zip(&self.raw)
    }

    pub fn push(&mut self, record: SerpRecord, raw: RawSerp) {
        self.records.push(record);
        self.raw.push(raw);
    }

    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for r in &self.raw {
            out.push_str(&r.to_line());
            out.push('\n');
        }
        out
    }
}

/// Human relevance grades keyed by `(query token, doc token)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RelevanceAnnotations {
    grades: HashMap<(String, String), u8>,
    max_grade: u8,
}

impl RelevanceAnnotations {
    pub fn new(max_grade: u8) -> Self {
        Self {
            grades: HashMap::new(),
            max_grade,
        }
    }

    pub fn insert(&mut self, query: &str, doc: &str, grade: u8) -> Result<()> {
        if grade > self.max_grade {
            return Err(Error::Data(format!(
                "grade {grade} exceeds maximum {}",
                self.max_grade
            )));
        }
        self.grades.insert((query.to_string(), doc.to_string()), grade);
        Ok(())
    }

    pub fn grade(&self, query: &str, doc: &str) -> Option<u8> {
        self.grades.get(&(query.to_string(), doc.to_string())).copied()
    }

    pub fn has_query(&self, query: &str) -> bool {
        self.grades.keys().any(|(q, _)| q == query)
    }

    pub fn len(&self) -> usize {
        self.grades.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grades.is_empty()
    }

    pub fn max_grade(&self) -> u8 {
        self.max_grade
    }

    pub fn parse(text: &str, path: &str, max_grade: u8) -> Result<Self> {
        let mut a = Self::new(max_grade);
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: path.to_string(),
                line: i + 1,
                msg,
            };
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 3 {
                return Err(err(format!("expected 3 fields, found {}", f.len())));
            }
            let g: u8 = f[2]
                .parse()
                .map_err(|_| err(format!("bad grade {:?}", f[2])))?;
            a.insert(f[0], f[1], g).map_err(|e| err(e.to_string()))?;
        }
        Ok(a)
    }

    pub fn to_lines(&self) -> String {
        let mut rows: Vec<_> = self.grades.iter().collect();
        rows.sort();
        let mut out = String::new();
        for ((q, d), g) in rows {
            let _ = writeln!(out, "{q}\t{d}\t{g}");
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Split,
    pub valid: Split,
    pub test: Split,
    pub queries: Vocab,
    pub docs: Vocab,
    pub verticals: Vocab,
    pub list_len: usize,
    pub annotations: RelevanceAnnotations,
}

pub fn parse_lines(text: &str, path: &str, list_len: usize) -> Result<Vec<RawSerp>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            RawSerp::parse(l.trim_end_matches('\r'), list_len).map_err(|msg| Error::Parse {
                path: path.to_string(),
                line: i + 1,
                msg,
            })
        })
        .collect()
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

impl Dataset {
    /// Builds vocabularies from `train` and encodes all three splits.
    pub fn from_raw(
        train: Vec<RawSerp>,
        valid: Vec<RawSerp>,
        test: Vec<RawSerp>,
        list_len: usize,
    ) -> Result<Self> {
        let mut queries = Vocab::new();
        let mut docs = Vocab::new();
        let mut verticals = Vocab::new();
        for r in &train {
            queries.intern(&r.query);
            for d in &r.docs {
                docs.intern(d);
            }
            for v in &r.verticals {
                verticals.intern(v);
            }
        }
        let mut ds = Self {
            train: Split::default(),
            valid: Split::default(),
            test: Split::default(),
            queries,
            docs,
            verticals,
            list_len,
            annotations: RelevanceAnnotations::new(DEFAULT_MAX_GRADE),
        };
        ds.train = ds.encode_split(train)?;
        ds.valid = ds.encode_split(valid)?;
        ds.test = ds.encode_split(test)?;
        Ok(ds)
    }

    /// Reads `train.tsv`, `valid.tsv`, `test.tsv` and, when present,
    /// `annotations.tsv` from `dir`.
    pub fn load(dir: &Path, list_len: usize) -> Result<Self> {
        let split = |name: &str| -> Result<Vec<RawSerp>> {
            let p = dir.join(name);
            parse_lines(&read(&p)?, &p.display().to_string(), list_len)
        };
        let mut ds = Self::from_raw(split("train.tsv")?, split("valid.tsv")?, split("test.tsv")?, list_len)?;
        let ann = dir.join("annotations.tsv");
        if ann.exists() {
            ds.annotations =
                RelevanceAnnotations::parse(&read(&ann)?, &ann.display().to_string(), DEFAULT_MAX_GRADE)?;
        }
        Ok(ds)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let put = |name: &str, body: String| -> Result<()> {
            let p = dir.join(name);
            fs::write(&p, body).map_err(|e| Error::io(&p, e))
        };
        put("train.tsv", self.train.to_lines())?;
        put("valid.tsv", self.valid.to_lines())?;
        put("test.tsv", self.test.to_lines())?;
        if !self.annotations.is_empty() {
            put("annotations.tsv", self.annotations.to_lines())?;
        }
        Ok(())
    }

    pub fn encode(&self, r: &RawSerp) -> Result<SerpRecord> {
        if r.docs.len() != self.list_len {
            return Err(Error::Data(format!(
                "record {} has {} results, dataset list length is {}",
                r.session_id,
                r.docs.len(),
                self.list_len
            )));
        }
        Ok(SerpRecord {
            session_id: r.session_id.clone(),
            query: self.queries.lookup(&r.query),
            docs: r.docs.iter().map(|d| self.docs.lookup(d)).collect(),
            verticals: r.verticals.iter().map(|v| self.verticals.lookup(v)).collect(),
            clicks: r.clicks.clone(),
        })
    }

    pub fn encode_split(&self, raw: Vec<RawSerp>) -> Result<Split> {
        let records = raw.iter().map(|r| self.encode(r)).collect::<Result<Vec<_>>>()?;
        Ok(Split { records, raw })
    }

    /// Parses lines in the log format against this dataset's vocabularies.
    pub fn parse_split(&self, text: &str, path: &str) -> Result<Split> {
        self.encode_split(parse_lines(text, path, self.list_len)?)
    }

    pub fn load_split(&self, path: &Path) -> Result<Split> {
        self.parse_split(&read(path)?, &path.display().to_string())
    }

    /// A copy sharing vocabularies whose training split is replaced.
    pub fn with_train(&self, train: Split) -> Self {
        Self {
            train,
            ..self.clone()
        }
    }

    pub fn n_queries(&self) -> usize {
        self.queries.len()
    }

    pub fn n_docs(&self) -> usize {
        self.docs.len()
    }

    pub fn n_verticals(&self) -> usize {
        self.verticals.len()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SplitStats {
    pub sessions: usize,
    pub records: usize,
    pub unique_queries: usize,
    /// Query impressions per session.
    pub avg_session_length: f64,
    pub ctr_by_rank: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetStats {
    pub train: SplitStats,
    pub valid: SplitStats,
    pub test: SplitStats,
}

pub fn split_stats(split: &Split, list_len: usize) -> SplitStats {
    if split.is_empty() {
        return SplitStats {
            ctr_by_rank: vec![0.0; list_len],
            ..Default::default()
        };
    }
    let sessions: HashSet<&str> = split.raw.iter().map(|r| r.session_id.as_str()).collect();
    let queries: HashSet<&str> = split.raw.iter().map(|r| r.query.as_str()).collect();
    let mut clicks = vec![0usize; list_len];
    for r in &split.records {
        for (k, c) in r.clicks.iter().enumerate() {
            clicks[k] += *c as usize;
        }
    }
    let n = split.len();
    SplitStats {
        sessions: sessions.len(),
        records: n,
        unique_queries: queries.len(),
        avg_session_length: n as f64 / sessions.len() as f64,
        ctr_by_rank: clicks.iter().map(|c| *c as f64 / n as f64).collect(),
    }
}

pub fn dataset_stats(d: &Dataset) -> DatasetStats {
    DatasetStats {
        train: split_stats(&d.train, d.list_len),
        valid: split_stats(&d.valid, d.list_len),
        test: split_stats(&d.test, d.list_len),
    }
}

impl DatasetStats {
    /// TSV with one row per split.
    pub fn to_tsv(&self) -> String {
        let t = self.train.ctr_by_rank.len();
        let mut out = String::from("split\tsessions\trecords\tunique_queries\tavg_session_length");
        for k in 1..=t {
            let _ = write!(out, "\tctr@{k}");
        }
        out.push('\n');
        for (name, s) in [("train", &self.train), ("valid", &self.valid), ("test", &self.test)] {
            let _ = write!(
                out,
                "{name}\t{}\t{}\t{}\t{:.4}",
                s.sessions, s.records, s.unique_queries, s.avg_session_length
            );
            for c in &s.ctr_by_rank {
                let _ = write!(out, "\t{c:.6}");
            }
            out.push('\n');
        }
        out
    }
}
