//! Click-prediction and ranking metrics.
//!
//! LL uses natural logs; PPL@t uses base 2 so that an uninformed predictor
//! (p ≡ 0.5) scores exactly 2. Probabilities are clamped to
//! `[PROB_FLOOR, 1 - PROB_FLOOR]` before any log.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::clicklog::{apply_order, permutation, PermutationMode, RelevanceAnnotations, SerpRecord, Split};
use crate::error::{Error, Result};
use crate::model::ClickModel;
use crate::pgm::{self, PgmConfig, PgmKind, PROB_FLOOR};
use crate::policy::Generator;
use crate::seqnet::NetDims;
use crate::train::{train_mle_fixed, TrainConfig};

fn checked(p: f64) -> Result<f64> {
    if p.is_nan() {
        return Err(Error::Data("click probability is NaN".into()));
    }
    Ok(p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR))
}

fn check_shapes(preds: &[Vec<f64>], records: &[SerpRecord]) -> Result<()> {
    if preds.len() != records.len() {
        return Err(Error::Data(format!(
            "{} predictions for {} records",
            preds.len(),
            records.len()
        )));
    }
    if let Some((p, r)) = preds.iter().zip(records).find(|(p, r)| p.len() != r.clicks.len()) {
        return Err(Error::Data(format!(
            "record {}: {} predictions for {} ranks",
            r.session_id,
            p.len(),
            r.clicks.len()
        )));
    }
    Ok(())
}

/// Mean over all positions of `c ln p + (1 - c) ln(1 - p)`.
pub fn log_likelihood(preds: &[Vec<f64>], records: &[SerpRecord]) -> Result<f64> {
    check_shapes(preds, records)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (p, r) in preds.iter().zip(records) {
        for (&p, &c) in p.iter().zip(&r.clicks) {
            let p = checked(p)?;
            sum += if c == 1 { p.ln() } else { (1.0 - p).ln() };
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Data("no positions to evaluate".into()));
    }
    Ok(sum / n as f64)
}

/// Per-rank perplexity and its arithmetic mean over ranks.
pub fn perplexity(preds: &[Vec<f64>], records: &[SerpRecord]) -> Result<(Vec<f64>, f64)> {
    check_shapes(preds, records)?;
    let t_len = records
        .first()
        .map(|r| r.len())
        .ok_or_else(|| Error::Data("no records to evaluate".into()))?;
    let mut sums = vec![0.0; t_len];
    let mut counts = vec![0usize; t_len];
    for (p, r) in preds.iter().zip(records) {
        for (t, (&p, &c)) in p.iter().zip(&r.clicks).enumerate().take(t_len) {
            let p = checked(p)?;
            sums[t] += if c == 1 { p.log2() } else { (1.0 - p).log2() };
            counts[t] += 1;
        }
    }
    let at: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(s, n)| 2f64.powf(-s / (*n).max(1) as f64))
        .collect();
    let overall = at.iter().sum::<f64>() / at.len() as f64;
    Ok((at, overall))
}

/// Teacher-forced predictions of `model` over `records`.
pub fn predict_all<M: ClickModel + ?Sized>(model: &M, records: &[SerpRecord]) -> Vec<Vec<f64>> {
    records.iter().map(|r| model.click_probs(r)).collect()
}

/// NDCG@k of one list: `scores` and `grades` are index-aligned in the
/// original order, which also breaks score ties. `None` when the ideal DCG
/// is zero.
pub fn ndcg_of_list(scores: &[f64], grades: &[u8], k: usize) -> Option<f64> {
    let dcg = |order: &[usize]| -> f64 {
        order
            .iter()
            .take(k)
            .enumerate()
            .map(|(i, &j)| (2f64.powi(grades[j] as i32) - 1.0) / ((i + 2) as f64).log2())
            .sum()
    };
    let mut by_score: Vec<usize> = (0..scores.len()).collect();
    by_score.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut ideal: Vec<usize> = (0..grades.len()).collect();
    ideal.sort_by(|&a, &b| grades[b].cmp(&grades[a]));
    let idcg = dcg(&ideal);
    (idcg > 0.0).then(|| dcg(&by_score) / idcg)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NdcgSummary {
    pub mean: f64,
    pub queries: usize,
    /// Annotated queries whose ideal DCG is zero.
    pub skipped: usize,
}

/// Candidate documents per annotated query: the distinct documents shown
/// for that query in `split`, in order of first appearance, that carry a
/// relevance grade. Returns `(query id, [(doc id, vertical id, grade)])`.
pub fn annotated_candidates(split: &Split, ann: &RelevanceAnnotations) -> Vec<(u32, Vec<(u32, u32, u8)>)> {
    let mut order: Vec<String> = Vec::new();
    let mut per_query: HashMap<String, (u32, Vec<(u32, u32, u8)>, Vec<String>)> = HashMap::new();
    for (rec, raw) in split.iter() {
        if !ann.has_query(&raw.query) {
            continue;
        }
        let entry = per_query.entry(raw.query.clone()).or_insert_with(|| {
            order.push(raw.query.clone());
            (rec.query, Vec::new(), Vec::new())
        });
        for (i, d) in raw.docs.iter().enumerate() {
            if entry.2.contains(d) {
                continue;
            }
            if let Some(g) = ann.grade(&raw.query, d) {
                entry.2.push(d.clone());
                entry.1.push((rec.docs[i], rec.verticals[i], g));
            }
        }
    }
    order
        .into_iter()
        .map(|q| {
            let (id, docs, _) = per_query.remove(&q).expect("query recorded in order");
            (id, docs)
        })
        .collect()
}

/// Mean NDCG@k for each `k`, ranking candidates by the model's relevance.
pub fn ndcg_at<M: ClickModel + ?Sized>(
    model: &M,
    split: &Split,
    ann: &RelevanceAnnotations,
    ks: &[usize],
) -> BTreeMap<usize, NdcgSummary> {
    let cands = annotated_candidates(split, ann);
    let scored: Vec<(Vec<f64>, Vec<u8>)> = cands
        .iter()
        .map(|(q, docs)| {
            (
                docs.iter().map(|&(d, v, _)| model.relevance(*q, d, v)).collect(),
                docs.iter().map(|&(_, _, g)| g).collect(),
            )
        })
        .collect();
    ks.iter()
        .map(|&k| {
            let vals: Vec<Option<f64>> = scored.iter().map(|(s, g)| ndcg_of_list(s, g, k)).collect();
            let kept: Vec<f64> = vals.iter().flatten().copied().collect();
            let mean = if kept.is_empty() {
                0.0
            } else {
                kept.iter().sum::<f64>() / kept.len() as f64
            };
            (
                k,
                NdcgSummary {
                    mean,
                    queries: kept.len(),
                    skipped: vals.len() - kept.len(),
                },
            )
        })
        .collect()
}

/// `repeats` sampled click sequences for every record of `split`, each on an
/// independently permuted copy of the list when `mode` asks for it.
pub fn generate_synthetic<M: ClickModel + ?Sized, R: Rng>(
    model: &M,
    split: &Split,
    repeats: usize,
    mode: PermutationMode,
    rng: &mut R,
) -> Split {
    let mut out = Split::default();
    for (rec, raw) in split.iter() {
        for k in 0..repeats {
            let order = permutation(rec.len(), mode, rng);
            let base = apply_order(rec, &order);
            let clicks = model.sample_clicks(&base, rng as &mut dyn RngCore);
            let mut new_raw = raw.permuted(&order);
            new_raw.session_id = format!("{}#{k}", raw.session_id);
            new_raw.clicks = clicks.clone();
            let mut new_rec = base.with_clicks(clicks);
            new_rec.session_id = new_raw.session_id.clone();
            out.push(new_rec, new_raw);
        }
    }
    out
}

/// Model family fitted in each direction of the coverage measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Surrogate {
    Ubm,
    Neural,
}

impl std::str::FromStr for Surrogate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ubm" => Ok(Self::Ubm),
            "neural" => Ok(Self::Neural),
            other => Err(Error::Config(format!("surrogate must be ubm or neural, got {other:?}"))),
        }
    }
}

impl std::fmt::Display for Surrogate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Ubm => "ubm",
            Self::Neural => "neural",
        })
    }
}

/// PPL on `eval` of a fresh surrogate fitted to `fit`. The neural surrogate
/// trains `cfg.surrogate_epochs` epochs from a seed derived from `cfg.seed`
/// only, so both directions get the same budget and initialisation.
pub fn surrogate_ppl(kind: Surrogate, fit: &Split, eval: &Split, dims: NetDims, cfg: &TrainConfig) -> Result<f64> {
    if fit.is_empty() || eval.is_empty() {
        return Err(Error::Data("coverage needs non-empty datasets".into()));
    }
    match kind {
        Surrogate::Ubm => {
            let (m, _) = pgm::fit(PgmKind::Ubm, &fit.records, &PgmConfig::default())?;
            Ok(perplexity(&predict_all(&m, &eval.records), &eval.records)?.1)
        }
        Surrogate::Neural => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut g = Generator::<f64>::random(dims, cfg.init_scale, &mut rng)?;
            train_mle_fixed(&mut g, fit, cfg.surrogate_epochs, cfg, &mut rng)?;
            Ok(perplexity(&predict_all(&g, &eval.records), &eval.records)?.1)
        }
    }
}

/// `(reverse, forward)`: reverse fits on `synth` and scores `real`,
/// forward fits on `real` and scores `synth`.
pub fn reverse_forward_ppl(
    synth: &Split,
    real: &Split,
    kind: Surrogate,
    dims: NetDims,
    cfg: &TrainConfig,
) -> Result<(f64, f64)> {
    Ok((
        surrogate_ppl(kind, synth, real, dims, cfg)?,
        surrogate_ppl(kind, real, synth, dims, cfg)?,
    ))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    pub ll: Option<f64>,
    pub ppl_overall: Option<f64>,
    pub ppl_at: Option<Vec<f64>>,
    pub ndcg_at: BTreeMap<usize, f64>,
    pub reverse_ppl: Option<f64>,
    pub forward_ppl: Option<f64>,
}

impl MetricReport {
    /// LL and PPL of `model` on `records`.
    pub fn prediction<M: ClickModel + ?Sized>(model: &M, records: &[SerpRecord]) -> Result<Self> {
        let preds = predict_all(model, records);
        let (at, overall) = perplexity(&preds, records)?;
        Ok(Self {
            ll: Some(log_likelihood(&preds, records)?),
            ppl_overall: Some(overall),
            ppl_at: Some(at),
            ..Default::default()
        })
    }

    fn entries(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        if let Some(v) = self.ll {
            out.push(("ll".to_string(), v));
        }
        if let Some(v) = self.ppl_overall {
            out.push(("ppl".to_string(), v));
        }
        if let Some(at) = &self.ppl_at {
            out.extend(at.iter().enumerate().map(|(t, v)| (format!("ppl@{}", t + 1), *v)));
        }
        out.extend(self.ndcg_at.iter().map(|(k, v)| (format!("ndcg@{k}"), *v)));
        if let Some(v) = self.reverse_ppl {
            out.push(("reverse_ppl".to_string(), v));
        }
        if let Some(v) = self.forward_ppl {
            out.push(("forward_ppl".to_string(), v));
        }
        out
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("metric\tvalue\n");
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k}\t{v:.10}");
        }
        s
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v:.10}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn recs(clicks: &[&[u8]]) -> Vec<SerpRecord> {
        clicks
            .iter()
            .map(|c| SerpRecord {
                session_id: "s".into(),
                query: 2,
                docs: (0..c.len() as u32).map(|d| d + 2).collect(),
                verticals: vec![2; c.len()],
                clicks: c.to_vec(),
            })
            .collect()
    }

    #[test]
    fn uninformed_predictor() {
        let r = recs(&[&[1, 0, 1], &[0, 0, 0]]);
        let p = vec![vec![0.5; 3]; 2];
        assert!((log_likelihood(&p, &r).unwrap() - 0.5f64.ln()).abs() < 1e-12);
        let (at, overall) = perplexity(&p, &r).unwrap();
        assert!(at.iter().all(|v| (v - 2.0).abs() < 1e-12));
        assert!((overall - 2.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictor() {
        let r = recs(&[&[1, 0, 1], &[0, 1, 0]]);
        let p: Vec<Vec<f64>> = r.iter().map(|r| r.clicks.iter().map(|c| *c as f64).collect()).collect();
        assert!(log_likelihood(&p, &r).unwrap().abs() < 1e-5);
        let (at, _) = perplexity(&p, &r).unwrap();
        assert!(at.iter().all(|v| *v >= 1.0 && (v - 1.0) < 1e-5));
    }

    #[test]
    fn nan_rejected_and_shapes_checked() {
        let r = recs(&[&[1, 0]]);
        assert!(log_likelihood(&[vec![f64::NAN, 0.5]], &r).is_err());
        assert!(perplexity(&[vec![0.5]], &r).is_err());
    }

    #[test]
    fn ndcg_worked_example() {
        let v = ndcg_of_list(&[0.1, 0.5, 0.9], &[2, 1, 0], 3).unwrap();
        let dcg = 1.0 / 3f64.log2() + 3.0 / 2.0;
        let idcg = 3.0 + 1.0 / 3f64.log2();
        assert!((v - dcg / idcg).abs() < 1e-12);
        assert!((v - 0.5869).abs() < 1e-4);
    }

    #[test]
    fn ndcg_ideal_and_ties() {
        assert_eq!(ndcg_of_list(&[3.0, 2.0, 1.0], &[3, 1, 0], 2), Some(1.0));
        // equal scores keep original order
        assert_eq!(ndcg_of_list(&[0.5, 0.5, 0.5], &[2, 1, 0], 3), Some(1.0));
        assert!(ndcg_of_list(&[0.5, 0.5, 0.5], &[0, 1, 2], 3).unwrap() < 1.0);
        assert_eq!(ndcg_of_list(&[0.3, 0.2], &[0, 0], 2), None);
    }

    #[test]
    fn ndcg_invariant_under_monotone_transform() {
        let s = [0.2, 0.9, 0.4, 0.7];
        let g = [1, 3, 0, 2];
        let t: Vec<f64> = s.iter().map(|x: &f64| x.powi(3) * 5.0 - 1.0).collect();
        assert_eq!(ndcg_of_list(&s, &g, 3), ndcg_of_list(&t, &g, 3));
    }

    #[test]
    fn better_predictions_lower_perplexity() {
        let r = recs(&[&[1, 0], &[1, 1]]);
        let a = vec![vec![0.6, 0.4], vec![0.6, 0.6]];
        let b = vec![vec![0.7, 0.3], vec![0.7, 0.7]];
        let (pa, _) = perplexity(&a, &r).unwrap();
        let (pb, _) = perplexity(&b, &r).unwrap();
        assert!(pb.iter().zip(&pa).all(|(x, y)| x < y));
    }

    #[test]
    fn report_formats() {
        let m = MetricReport {
            ll: Some(-0.5),
            ppl_overall: Some(1.5),
            ppl_at: Some(vec![1.4, 1.6]),
            ndcg_at: [(1, 0.75)].into_iter().collect(),
            reverse_ppl: None,
            forward_ppl: Some(1.2),
        };
        let tsv = m.to_tsv();
        assert!(tsv.starts_with("metric\tvalue\nll\t-0.5000000000\nppl\t1.5"));
        assert!(tsv.contains("ppl@2\t1.6"));
        assert!(m.to_kv().contains("ndcg@1 = 0.75"));
        assert!(!tsv.contains("reverse_ppl"));
    }
}
