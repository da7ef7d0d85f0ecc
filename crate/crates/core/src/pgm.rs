//! Probabilistic graphical click models used as baselines and surrogates.
//!
//! * PBM: `P(C_r = 1) = exam[r] · attr(q, d)`, fitted by EM.
//! * UBM: examination indexed by rank and rank of the previous click, fitted by EM.
//! * DCM: cascade scan with per-rank continuation after a click, counting fit.
//! * SDBN: cascade scan that stops on satisfaction after a click, counting fit.
//!
//! All fitted probabilities are clamped to `[PROB_FLOOR, 1 - PROB_FLOOR]`.
//! Unseen `(query, doc)` pairs back off to the mean fitted attractiveness.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::{Rng, RngCore};

use crate::clicklog::SerpRecord;
use crate::error::{Error, Result};
use crate::model::ClickModel;

pub const PROB_FLOOR: f64 = 1e-6;

#[inline]
fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgmKind {
    Pbm,
    Ubm,
    Dcm,
    Sdbn,
}

impl FromStr for PgmKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pbm" => Ok(Self::Pbm),
            "ubm" => Ok(Self::Ubm),
            "dcm" => Ok(Self::Dcm),
            "sdbn" => Ok(Self::Sdbn),
            other => Err(Error::Config(format!("unknown click model {other:?}"))),
        }
    }
}

impl std::fmt::Display for PgmKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Pbm => "pbm",
            Self::Ubm => "ubm",
            Self::Dcm => "dcm",
            Self::Sdbn => "sdbn",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgmConfig {
    pub max_iter: usize,
    /// EM stops once no parameter moves by more than this.
    pub tol: f64,
}

impl Default for PgmConfig {
    fn default() -> Self {
        Self {
            max_iter: 50,
            tol: 1e-4,
        }
    }
}

/// Per `(query, doc)` probabilities with a global-mean fallback.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AttrTable {
    values: BTreeMap<(u32, u32), f64>,
    mean: f64,
}

impl AttrTable {
    pub fn new(values: BTreeMap<(u32, u32), f64>) -> Self {
        let mean = if values.is_empty() {
            0.5
        } else {
            values.values().sum::<f64>() / values.len() as f64
        };
        Self { values, mean }
    }

    /// A table holding only the fallback value.
    pub fn constant(p: f64) -> Self {
        Self {
            values: BTreeMap::new(),
            mean: p,
        }
    }

    #[inline]
    pub fn get(&self, q: u32, d: u32) -> f64 {
        self.values.get(&(q, d)).copied().unwrap_or(self.mean)
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(u32, u32), &f64)> {
        self.values.iter()
    }

    pub fn insert(&mut self, q: u32, d: u32, p: f64) {
        self.values.insert((q, d), p);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PbmParams {
    pub exam: Vec<f64>,
    pub attr: AttrTable,
}

impl PbmParams {
    /// Examination divided by `exam[0]` (identifiability for recovery checks).
    pub fn normalized_exam(&self) -> Vec<f64> {
        let e0 = self.exam[0];
        self.exam.iter().map(|e| e / e0).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UbmParams {
    /// `exam[r][k]`: rank `r` (0-based) given the last click at 1-based rank
    /// `k`, `k = 0` meaning no earlier click; row `r` has `r + 1` entries.
    pub exam: Vec<Vec<f64>>,
    pub attr: AttrTable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DcmParams {
    /// Probability of continuing past rank `r` after clicking there.
    pub cont: Vec<f64>,
    pub attr: AttrTable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdbnParams {
    pub attr: AttrTable,
    pub sat: AttrTable,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PgmModel {
    Pbm(PbmParams),
    Ubm(UbmParams),
    Dcm(DcmParams),
    Sdbn(SdbnParams),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitReport {
    pub iterations: usize,
    /// Mean per-impression training log-likelihood before each EM iteration
    /// and after the last one.
    pub ll_trace: Vec<f64>,
    pub converged: bool,
}

impl FitReport {
    /// No EM iteration lowered the training log-likelihood by more than `tol`.
    pub fn is_monotone(&self, tol: f64) -> bool {
        self.ll_trace.windows(2).all(|w| w[1] >= w[0] - tol)
    }
}

/// Dense indexing of the `(query, doc)` pairs that occur in the data.
struct PairIndex {
    keys: Vec<(u32, u32)>,
    per_record: Vec<Vec<usize>>,
}

impl PairIndex {
    fn build(records: &[SerpRecord]) -> Self {
        let mut map: BTreeMap<(u32, u32), usize> = BTreeMap::new();
        let mut keys = Vec::new();
        let per_record = records
            .iter()
            .map(|r| {
                r.docs
                    .iter()
                    .map(|&d| {
                        *map.entry((r.query, d)).or_insert_with(|| {
                            keys.push((r.query, d));
                            keys.len() - 1
                        })
                    })
                    .collect()
            })
            .collect();
        Self { keys, per_record }
    }

    fn table(&self, values: &[f64]) -> AttrTable {
        AttrTable::new(self.keys.iter().copied().zip(values.iter().copied()).collect())
    }
}

fn check_records(records: &[SerpRecord]) -> Result<usize> {
    let first = records
        .first()
        .ok_or_else(|| Error::Data("cannot fit a click model on an empty split".into()))?;
    let t = first.len();
    if records.iter().any(|r| r.len() != t || r.clicks.len() != t) {
        return Err(Error::Data("records differ in list length".into()));
    }
    Ok(t)
}

/// Examination slot of every impression, for the two EM models.
fn exam_slots(records: &[SerpRecord], kind: PgmKind) -> (Vec<Vec<usize>>, usize) {
    let t = records[0].len();
    match kind {
        PgmKind::Pbm => ((0..records.len()).map(|_| (0..t).collect()).collect(), t),
        _ => {
            // slot(r, k) = r(r+1)/2 + k
            let slots = records
                .iter()
                .map(|rec| {
                    let mut last = 0usize;
                    (0..t)
                        .map(|r| {
                            let s = r * (r + 1) / 2 + last;
                            if rec.clicks[r] == 1 {
                                last = r + 1;
                            }
                            s
                        })
                        .collect()
                })
                .collect();
            (slots, t * (t + 1) / 2)
        }
    }
}

fn fit_em(
    records: &[SerpRecord],
    kind: PgmKind,
    cfg: &PgmConfig,
) -> (Vec<f64>, PairIndex, Vec<f64>, FitReport) {
    let pairs = PairIndex::build(records);
    let (slots, n_slots) = exam_slots(records, kind);
    let mut exam = vec![0.5; n_slots];
    let mut attr = vec![0.5; pairs.keys.len()];
    let mut report = FitReport::default();
    let n_impr = records.iter().map(|r| r.len()).sum::<usize>() as f64;

    let log_lik = |exam: &[f64], attr: &[f64]| -> f64 {
        let mut ll = 0.0;
        for ((rec, sl), pr) in records.iter().zip(&slots).zip(&pairs.per_record) {
            for k in 0..rec.len() {
                let p = exam[sl[k]] * attr[pr[k]];
                ll += if rec.clicks[k] == 1 { p.ln() } else { (1.0 - p).ln() };
            }
        }
        ll / n_impr
    };

    for _ in 0..cfg.max_iter {
        report.ll_trace.push(log_lik(&exam, &attr));
        let mut e_num = vec![0.0; n_slots];
        let mut e_den = vec![0.0; n_slots];
        let mut a_num = vec![0.0; attr.len()];
        let mut a_den = vec![0.0; attr.len()];
        for ((rec, sl), pr) in records.iter().zip(&slots).zip(&pairs.per_record) {
            for k in 0..rec.len() {
                let (e, a) = (exam[sl[k]], attr[pr[k]]);
                let (pe, pa) = if rec.clicks[k] == 1 {
                    (1.0, 1.0)
                } else {
                    let denom = 1.0 - e * a;
                    (e * (1.0 - a) / denom, a * (1.0 - e) / denom)
                };
                e_num[sl[k]] += pe;
                e_den[sl[k]] += 1.0;
                a_num[pr[k]] += pa;
                a_den[pr[k]] += 1.0;
            }
        }
        let mut max_change: f64 = 0.0;
        for i in 0..n_slots {
            // slots never observed keep their prior value
            if e_den[i] > 0.0 {
                let v = clamp_prob(e_num[i] / e_den[i]);
                max_change = max_change.max((v - exam[i]).abs());
                exam[i] = v;
            }
        }
        for i in 0..attr.len() {
            let v = clamp_prob(a_num[i] / a_den[i]);
            max_change = max_change.max((v - attr[i]).abs());
            attr[i] = v;
        }
        report.iterations += 1;
        if max_change < cfg.tol {
            report.converged = true;
            break;
        }
    }
    report.ll_trace.push(log_lik(&exam, &attr));
    (exam, pairs, attr, report)
}

/// Last clicked rank (0-based), if any.
fn last_click(r: &SerpRecord) -> Option<usize> {
    r.clicks.iter().rposition(|c| *c == 1)
}

/// Add-one smoothed click ratio over examined impressions; an impression is
/// examined when it lies at or above the last click (all ranks if none).
fn cascade_attr(records: &[SerpRecord]) -> AttrTable {
    let mut counts: BTreeMap<(u32, u32), (f64, f64)> = BTreeMap::new();
    for r in records {
        let examined = last_click(r).map_or(r.len(), |l| l + 1);
        for k in 0..examined {
            let e = counts.entry((r.query, r.docs[k])).or_default();
            e.0 += r.clicks[k] as f64;
            e.1 += 1.0;
        }
    }
    AttrTable::new(
        counts
            .into_iter()
            .map(|(k, (c, n))| (k, clamp_prob((c + 1.0) / (n + 2.0))))
            .collect(),
    )
}

pub fn fit(kind: PgmKind, records: &[SerpRecord], cfg: &PgmConfig) -> Result<(PgmModel, FitReport)> {
    let t = check_records(records)?;
    Ok(match kind {
        PgmKind::Pbm => {
            let (exam, pairs, attr, report) = fit_em(records, kind, cfg);
            (
                PgmModel::Pbm(PbmParams {
                    exam,
                    attr: pairs.table(&attr),
                }),
                report,
            )
        }
        PgmKind::Ubm => {
            let (flat, pairs, attr, report) = fit_em(records, kind, cfg);
            let exam = (0..t)
                .map(|r| flat[r * (r + 1) / 2..r * (r + 1) / 2 + r + 1].to_vec())
                .collect();
            (
                PgmModel::Ubm(UbmParams {
                    exam,
                    attr: pairs.table(&attr),
                }),
                report,
            )
        }
        PgmKind::Dcm => {
            let mut clicked = vec![0.0; t];
            let mut continued = vec![0.0; t];
            for r in records {
                let last = last_click(r);
                for k in 0..t {
                    if r.clicks[k] == 1 {
                        clicked[k] += 1.0;
                        if Some(k) != last {
                            continued[k] += 1.0;
                        }
                    }
                }
            }
            let cont = (0..t)
                .map(|k| clamp_prob((continued[k] + 1.0) / (clicked[k] + 2.0)))
                .collect();
            (
                PgmModel::Dcm(DcmParams {
                    cont,
                    attr: cascade_attr(records),
                }),
                FitReport {
                    converged: true,
                    ..Default::default()
                },
            )
        }
        PgmKind::Sdbn => {
            let mut counts: BTreeMap<(u32, u32), (f64, f64)> = BTreeMap::new();
            for r in records {
                if let Some(l) = last_click(r) {
                    for k in 0..=l {
                        if r.clicks[k] == 1 {
                            let e = counts.entry((r.query, r.docs[k])).or_default();
                            e.0 += (k == l) as u8 as f64;
                            e.1 += 1.0;
                        }
                    }
                }
            }
            let sat = AttrTable::new(
                counts
                    .into_iter()
                    .map(|(k, (s, n))| (k, clamp_prob((s + 1.0) / (n + 2.0))))
                    .collect(),
            );
            (
                PgmModel::Sdbn(SdbnParams {
                    attr: cascade_attr(records),
                    sat,
                }),
                FitReport {
                    converged: true,
                    ..Default::default()
                },
            )
        }
    })
}

impl PgmModel {
    pub fn kind(&self) -> PgmKind {
        match self {
            Self::Pbm(_) => PgmKind::Pbm,
            Self::Ubm(_) => PgmKind::Ubm,
            Self::Dcm(_) => PgmKind::Dcm,
            Self::Sdbn(_) => PgmKind::Sdbn,
        }
    }

    /// Ranks covered by the positional parameters; `None` for SDBN, which
    /// has none and applies to lists of any length.
    pub fn list_len(&self) -> Option<usize> {
        match self {
            Self::Pbm(p) => Some(p.exam.len()),
            Self::Ubm(p) => Some(p.exam.len()),
            Self::Dcm(p) => Some(p.cont.len()),
            Self::Sdbn(_) => None,
        }
    }

    pub fn attr(&self) -> &AttrTable {
        match self {
            Self::Pbm(p) => &p.attr,
            Self::Ubm(p) => &p.attr,
            Self::Dcm(p) => &p.attr,
            Self::Sdbn(p) => &p.attr,
        }
    }

    /// Walks the list top-down. `choose(rank, p)` returns the interaction to
    /// condition on at that rank; the per-rank probabilities are returned.
    fn walk<F: FnMut(usize, f64) -> u8>(&self, query: u32, docs: &[u32], mut choose: F) -> Vec<f64> {
        let mut probs = Vec::with_capacity(docs.len());
        match self {
            Self::Pbm(m) => {
                for (k, &d) in docs.iter().enumerate() {
                    let p = m.exam[k] * m.attr.get(query, d);
                    probs.push(p);
                    choose(k, p);
                }
            }
            Self::Ubm(m) => {
                let mut last = 0usize;
                for (k, &d) in docs.iter().enumerate() {
                    let p = m.exam[k][last] * m.attr.get(query, d);
                    probs.push(p);
                    if choose(k, p) == 1 {
                        last = k + 1;
                    }
                }
            }
            Self::Dcm(_) | Self::Sdbn(_) => {
                // e = P(examined at this rank | interactions above)
                let mut e = 1.0;
                for (k, &d) in docs.iter().enumerate() {
                    let a = self.attr().get(query, d);
                    let p = e * a;
                    probs.push(p);
                    e = if choose(k, p) == 1 {
                        match self {
                            Self::Dcm(m) => m.cont[k],
                            Self::Sdbn(m) => 1.0 - m.sat.get(query, d),
                            _ => unreachable!(),
                        }
                    } else if p < 1.0 {
                        e * (1.0 - a) / (1.0 - p)
                    } else {
                        0.0
                    };
                }
            }
        }
        probs
    }

    /// Conditional click probabilities given the record's observed clicks.
    pub fn predict(&self, r: &SerpRecord) -> Vec<f64> {
        self.walk(r.query, &r.docs, |k, _| r.clicks[k])
    }

    pub fn sample<R: Rng + ?Sized>(&self, query: u32, docs: &[u32], rng: &mut R) -> Vec<u8> {
        let mut clicks = Vec::with_capacity(docs.len());
        self.walk(query, docs, |_, p| {
            let c = (rng.gen::<f64>() < p) as u8;
            clicks.push(c);
            c
        });
        clicks
    }

    /// Mean per-impression log-likelihood of `records` under this model.
    pub fn log_likelihood(&self, records: &[SerpRecord]) -> f64 {
        let mut ll = 0.0;
        let mut n = 0usize;
        for r in records {
            for (p, c) in self.predict(r).into_iter().zip(&r.clicks) {
                let p = clamp_prob(p);
                ll += if *c == 1 { p.ln() } else { (1.0 - p).ln() };
                n += 1;
            }
        }
        ll / n.max(1) as f64
    }

    /// Text dump, one parameter per line: `name<TAB>index...<TAB>value`.
    pub fn to_text(&self) -> String {
        let mut out = format!("kind\t{}\n", self.kind());
        let attr = |out: &mut String, name: &str, t: &AttrTable| {
            let _ = writeln!(out, "{name}_mean\t{:?}", t.mean());
            for ((q, d), v) in t.iter() {
                let _ = writeln!(out, "{name}\t{q}\t{d}\t{v:?}");
            }
        };
        match self {
            Self::Pbm(m) => {
                for (r, v) in m.exam.iter().enumerate() {
                    let _ = writeln!(out, "exam\t{r}\t{v:?}");
                }
                attr(&mut out, "attr", &m.attr);
            }
            Self::Ubm(m) => {
                for (r, row) in m.exam.iter().enumerate() {
                    for (k, v) in row.iter().enumerate() {
                        let _ = writeln!(out, "exam\t{r}\t{k}\t{v:?}");
                    }
                }
                attr(&mut out, "attr", &m.attr);
            }
            Self::Dcm(m) => {
                for (r, v) in m.cont.iter().enumerate() {
                    let _ = writeln!(out, "cont\t{r}\t{v:?}");
                }
                attr(&mut out, "attr", &m.attr);
            }
            Self::Sdbn(m) => {
                attr(&mut out, "attr", &m.attr);
                attr(&mut out, "sat", &m.sat);
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Parse {
            path: "pgm model".into(),
            line,
            msg: msg.to_string(),
        };
        let mut kind = None;
        let mut exam_flat: Vec<(usize, Option<usize>, f64)> = Vec::new();
        let mut cont: Vec<(usize, f64)> = Vec::new();
        let mut tables: BTreeMap<String, (Option<f64>, BTreeMap<(u32, u32), f64>)> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let f: Vec<&str> = line.split('\t').collect();
            let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| bad(i + 1, "bad number")) };
            let idx = |s: &str| -> Result<usize> { s.parse().map_err(|_| bad(i + 1, "bad index")) };
            match (f[0], f.len()) {
                ("kind", 2) => kind = Some(f[1].parse::<PgmKind>()?),
                ("exam", 3) => exam_flat.push((idx(f[1])?, None, num(f[2])?)),
                ("exam", 4) => exam_flat.push((idx(f[1])?, Some(idx(f[2])?), num(f[3])?)),
                ("cont", 3) => cont.push((idx(f[1])?, num(f[2])?)),
                (name, 2) if name.ends_with("_mean") => {
                    tables.entry(name.trim_end_matches("_mean").to_string()).or_default().0 = Some(num(f[1])?);
                }
                (name @ ("attr" | "sat"), 4) => {
                    tables
                        .entry(name.to_string())
                        .or_default()
                        .1
                        .insert((idx(f[1])? as u32, idx(f[2])? as u32), num(f[3])?);
                }
                _ => return Err(bad(i + 1, "unrecognised parameter line")),
            }
        }
        let mut table = |name: &str| -> Result<AttrTable> {
            let (mean, values) = tables
                .remove(name)
                .ok_or_else(|| Error::Model(format!("missing {name} table")))?;
            let mut t = AttrTable::new(values);
            if let Some(m) = mean {
                t.mean = m;
            }
            Ok(t)
        };
        Ok(match kind.ok_or_else(|| Error::Model("missing kind line".into()))? {
            PgmKind::Pbm => {
                let mut exam = vec![0.0; exam_flat.len()];
                for (r, _, v) in exam_flat {
                    *exam.get_mut(r).ok_or_else(|| Error::Model("exam rank out of range".into()))? = v;
                }
                Self::Pbm(PbmParams {
                    exam,
                    attr: table("attr")?,
                })
            }
            PgmKind::Ubm => {
                let t = exam_flat.iter().map(|e| e.0 + 1).max().unwrap_or(0);
                let mut exam: Vec<Vec<f64>> = (0..t).map(|r| vec![0.0; r + 1]).collect();
                for (r, k, v) in exam_flat {
                    let k = k.ok_or_else(|| Error::Model("ubm exam needs two indices".into()))?;
                    *exam[r]
                        .get_mut(k)
                        .ok_or_else(|| Error::Model("ubm exam index out of range".into()))? = v;
                }
                Self::Ubm(UbmParams {
                    exam,
                    attr: table("attr")?,
                })
            }
            PgmKind::Dcm => {
                let mut c = vec![0.0; cont.len()];
                for (r, v) in cont {
                    *c.get_mut(r).ok_or_else(|| Error::Model("cont rank out of range".into()))? = v;
                }
                Self::Dcm(DcmParams {
                    cont: c,
                    attr: table("attr")?,
                })
            }
            PgmKind::Sdbn => Self::Sdbn(SdbnParams {
                attr: table("attr")?,
                sat: table("sat")?,
            }),
        })
    }
}

impl ClickModel for PgmModel {
    fn click_probs(&self, record: &SerpRecord) -> Vec<f64> {
        self.predict(record)
    }

    fn sample_clicks(&self, record: &SerpRecord, rng: &mut dyn RngCore) -> Vec<u8> {
        self.sample(record.query, &record.docs, rng)
    }

    fn relevance(&self, query: u32, doc: u32, _vertical: u32) -> f64 {
        self.attr().get(query, doc)
    }
}
