//! Ground-truth simulators for desk-scale checks.
//!
//! [`OracleSpec`] is a known click model (PBM or SDBN) that generates logs
//! in the clicklog format, so fitted models can be compared against the true
//! parameters and the true likelihood floor.
//!
//! [`TinyMdp`] is a small, fully enumerable click MDP used to check the
//! imitation bounds exactly:
//!
//! * behaviour cloning: `|J(π) - J(π_E)| ≤ 2T(T+1) R_max √ε_bc`, with
//!   `ε_bc = max KL(π_E(·|s) ‖ π(·|s))` over expert-visited states;
//! * adversarial imitation: `|J(π) - J(π_E)| ≤ 2√2 R_max (T+1) √ε_ga`, with
//!   `ε_ga = JS(ρ_π, ρ_E)` between normalised discounted occupancy measures.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::Rng;

use crate::clicklog::{Dataset, RawSerp, RelevanceAnnotations, SerpRecord, DEFAULT_MAX_GRADE};
use crate::error::{Error, Result};
use crate::metrics::perplexity;

#[derive(Debug, Clone, PartialEq)]
pub enum OracleFamily {
    /// `P(C_r) = exam[r] · attr(q, d)`.
    Pbm { exam: Vec<f64> },
    /// Cascade: stop after a click with probability `sat(q, d)`.
    Sdbn { sat: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSpec {
    pub family: OracleFamily,
    pub list_len: usize,
    /// `attr[q][j]` for document `j` of query `q`.
    pub attr: Vec<Vec<f64>>,
    /// Vertical index of every document.
    pub vertical: Vec<Vec<usize>>,
    pub n_verticals: usize,
}

impl OracleSpec {
    /// PBM oracle with uniform random attractiveness and verticals.
    pub fn random_pbm<R: Rng + ?Sized>(
        exam: Vec<f64>,
        n_queries: usize,
        docs_per_query: usize,
        n_verticals: usize,
        rng: &mut R,
    ) -> Self {
        let list_len = exam.len();
        let (attr, vertical) = Self::random_tables(n_queries, docs_per_query, n_verticals, rng);
        Self {
            family: OracleFamily::Pbm { exam },
            list_len,
            attr,
            vertical,
            n_verticals,
        }
    }

    /// SDBN oracle with uniform random attractiveness and satisfaction.
    pub fn random_sdbn<R: Rng + ?Sized>(
        list_len: usize,
        n_queries: usize,
        docs_per_query: usize,
        n_verticals: usize,
        rng: &mut R,
    ) -> Self {
        let (attr, vertical) = Self::random_tables(n_queries, docs_per_query, n_verticals, rng);
        let sat = (0..n_queries)
            .map(|_| (0..docs_per_query).map(|_| rng.gen::<f64>()).collect())
            .collect();
        Self {
            family: OracleFamily::Sdbn { sat },
            list_len,
            attr,
            vertical,
            n_verticals,
        }
    }

    fn random_tables<R: Rng + ?Sized>(
        n_queries: usize,
        docs_per_query: usize,
        n_verticals: usize,
        rng: &mut R,
    ) -> (Vec<Vec<f64>>, Vec<Vec<usize>>) {
        let attr = (0..n_queries)
            .map(|_| (0..docs_per_query).map(|_| rng.gen::<f64>()).collect())
            .collect();
        let vertical = (0..n_queries)
            .map(|_| (0..docs_per_query).map(|_| rng.gen_range(0..n_verticals.max(1))).collect())
            .collect();
        (attr, vertical)
    }

    pub fn n_queries(&self) -> usize {
        self.attr.len()
    }

    pub fn docs_per_query(&self) -> usize {
        self.attr.first().map_or(0, |a| a.len())
    }

    pub fn query_token(q: usize) -> String {
        format!("q{q}")
    }

    pub fn doc_token(q: usize, j: usize) -> String {
        format!("q{q}-d{j}")
    }

    fn parse_doc(token: &str) -> Option<(usize, usize)> {
        let (q, d) = token.strip_prefix('q')?.split_once("-d")?;
        Some((q.parse().ok()?, d.parse().ok()?))
    }

    /// Walks the list top-down; `choose(rank, p)` gives the click to condition on.
    fn walk<F: FnMut(usize, f64) -> u8>(&self, q: usize, docs: &[usize], mut choose: F) -> Vec<f64> {
        let mut probs = Vec::with_capacity(docs.len());
        let mut examined = 1.0;
        for (r, &j) in docs.iter().enumerate() {
            let a = self.attr[q][j];
            let p = match &self.family {
                OracleFamily::Pbm { exam } => exam[r] * a,
                OracleFamily::Sdbn { .. } => examined * a,
            };
            probs.push(p);
            let c = choose(r, p);
            if let OracleFamily::Sdbn { sat } = &self.family {
                examined = if c == 1 {
                    1.0 - sat[q][j]
                } else if p < 1.0 {
                    examined * (1.0 - a) / (1.0 - p)
                } else {
                    0.0
                };
            }
        }
        probs
    }

    /// True click probabilities of a logged list given its earlier clicks.
    pub fn click_probs(&self, r: &RawSerp) -> Result<Vec<f64>> {
        let mut q_idx = None;
        let docs = r
            .docs
            .iter()
            .map(|d| {
                let (q, j) = Self::parse_doc(d)
                    .filter(|(q, j)| *q < self.n_queries() && *j < self.docs_per_query())
                    .ok_or_else(|| Error::Data(format!("document {d:?} is not an oracle document")))?;
                q_idx = Some(q);
                Ok(j)
            })
            .collect::<Result<Vec<_>>>()?;
        let q = q_idx.ok_or_else(|| Error::Data("empty list".into()))?;
        Ok(self.walk(q, &docs, |t, _| r.clicks[t]))
    }

    /// Sessions with a uniform query and `list_len` distinct documents drawn
    /// without replacement, clicks sampled from the oracle.
    pub fn generate<R: Rng + ?Sized>(&self, n_sessions: usize, prefix: &str, rng: &mut R) -> Result<Vec<RawSerp>> {
        if self.docs_per_query() < self.list_len {
            return Err(Error::Data(format!(
                "{} documents per query cannot fill lists of {}",
                self.docs_per_query(),
                self.list_len
            )));
        }
        if let OracleFamily::Pbm { exam } = &self.family {
            if exam.len() != self.list_len {
                return Err(Error::Data("examination vector length differs from list length".into()));
            }
        }
        Ok((0..n_sessions)
            .map(|i| {
                let q = rng.gen_range(0..self.n_queries());
                let docs: Vec<usize> = sample(rng, self.docs_per_query(), self.list_len).into_vec();
                let clicks: Vec<u8> = {
                    let mut out = Vec::with_capacity(self.list_len);
                    self.walk(q, &docs, |_, p| {
                        let c = (rng.gen::<f64>() < p) as u8;
                        out.push(c);
                        c
                    });
                    out
                };
                RawSerp {
                    session_id: format!("{prefix}{i}"),
                    query: Self::query_token(q),
                    docs: docs.iter().map(|&j| Self::doc_token(q, j)).collect(),
                    verticals: docs.iter().map(|&j| format!("v{}", self.vertical[q][j])).collect(),
                    clicks,
                }
            })
            .collect())
    }

    /// Graded relevance derived from attractiveness, `⌊attr · (G + 1)⌋`.
    pub fn annotations(&self) -> RelevanceAnnotations {
        let mut ann = RelevanceAnnotations::new(DEFAULT_MAX_GRADE);
        let g = DEFAULT_MAX_GRADE as f64;
        for (q, row) in self.attr.iter().enumerate() {
            for (j, a) in row.iter().enumerate() {
                let grade = ((a * (g + 1.0)).floor()).min(g) as u8;
                ann.insert(&Self::query_token(q), &Self::doc_token(q, j), grade)
                    .expect("grade within range");
            }
        }
        ann
    }

    /// Train/valid/test dataset sampled from the oracle, with annotations.
    pub fn dataset<R: Rng + ?Sized>(&self, n_train: usize, n_valid: usize, n_test: usize, rng: &mut R) -> Result<Dataset> {
        let train = self.generate(n_train, "train-", rng)?;
        let valid = self.generate(n_valid, "valid-", rng)?;
        let test = self.generate(n_test, "test-", rng)?;
        let mut ds = Dataset::from_raw(train, valid, test, self.list_len)?;
        ds.annotations = self.annotations();
        Ok(ds)
    }

    /// Per-rank and overall PPL of the oracle's own conditional predictions.
    pub fn ppl(&self, raw: &[RawSerp]) -> Result<(Vec<f64>, f64)> {
        let preds = raw.iter().map(|r| self.click_probs(r)).collect::<Result<Vec<_>>>()?;
        let records: Vec<SerpRecord> = raw
            .iter()
            .map(|r| SerpRecord {
                session_id: r.session_id.clone(),
                query: 0,
                docs: vec![0; r.docs.len()],
                verticals: vec![0; r.docs.len()],
                clicks: r.clicks.clone(),
            })
            .collect();
        perplexity(&preds, &records)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        match &self.family {
            OracleFamily::Pbm { exam } => {
                s.push_str("family\tpbm\n");
                for (r, e) in exam.iter().enumerate() {
                    let _ = writeln!(s, "exam\t{r}\t{e:?}");
                }
            }
            OracleFamily::Sdbn { .. } => s.push_str("family\tsdbn\n"),
        }
        let _ = writeln!(s, "list_len\t{}", self.list_len);
        for (q, row) in self.attr.iter().enumerate() {
            for (j, a) in row.iter().enumerate() {
                let _ = writeln!(s, "attr\t{}\t{}\t{a:?}", Self::query_token(q), Self::doc_token(q, j));
                if let OracleFamily::Sdbn { sat } = &self.family {
                    let _ = writeln!(s, "sat\t{}\t{}\t{:?}", Self::query_token(q), Self::doc_token(q, j), sat[q][j]);
                }
            }
        }
        s
    }
}

/// Convenience: mean empirical CTR per rank of raw sessions.
pub fn ctr_by_rank(raw: &[RawSerp], list_len: usize) -> Vec<f64> {
    let mut c = vec![0.0; list_len];
    for r in raw {
        for (t, k) in r.clicks.iter().enumerate() {
            c[t] += *k as f64;
        }
    }
    c.iter().map(|v| v / raw.len().max(1) as f64).collect()
}

// ---------------------------------------------------------------------------
// Enumerable click MDP

/// Upper limit on enumerated states.
pub const MAX_STATES: usize = 1_000_000;

/// Decisions at ranks `0..T`; the state is `(query, rank, click prefix)` and
/// the document at each rank is fixed per query, so a query contributes
/// `2^T - 1` states.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyMdp {
    pub horizon: usize,
    pub gamma: f64,
    /// Probability of each query starting an episode.
    pub query_prior: Vec<f64>,
    /// Document shown at each rank, per query.
    pub schedule: Vec<Vec<u32>>,
    /// `reward[s][a]`.
    pub reward: Vec<[f64; 2]>,
    pub r_max: f64,
}

/// Tabular policy: click probability in every state.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    pub p_click: Vec<f64>,
}

impl TabularPolicy {
    pub fn probs(&self, s: usize) -> [f64; 2] {
        [1.0 - self.p_click[s], self.p_click[s]]
    }
}

/// Normalised discounted visitation of `(state, action)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyMeasure {
    pub mass: Vec<[f64; 2]>,
}

impl OccupancyMeasure {
    pub fn total(&self) -> f64 {
        self.mass.iter().map(|m| m[0] + m[1]).sum()
    }

    fn flat(&self) -> impl Iterator<Item = f64> + '_ {
        self.mass.iter().flat_map(|m| m.iter().copied())
    }
}

impl TinyMdp {
    pub fn states_per_query(&self) -> usize {
        (1usize << self.horizon) - 1
    }

    pub fn n_states(&self) -> usize {
        self.query_prior.len() * self.states_per_query()
    }

    /// State id of `(query, rank, prefix)` where bit `k` of `prefix` is the
    /// click at rank `k`.
    pub fn state(&self, q: usize, t: usize, prefix: usize) -> usize {
        q * self.states_per_query() + (1usize << t) - 1 + prefix
    }

    /// `(query, rank, prefix)` of a state id.
    pub fn decode(&self, s: usize) -> (usize, usize, usize) {
        let per = self.states_per_query();
        let (q, local) = (s / per, s % per);
        let t = (usize::BITS - (local + 1).leading_zeros() - 1) as usize;
        (q, t, local + 1 - (1 << t))
    }

    /// Sum of the discount weights, `Σ_{t<T} γ^t`.
    pub fn discount_mass(&self) -> f64 {
        (0..self.horizon).map(|t| self.gamma.powi(t as i32)).sum()
    }

    fn check(&self) -> Result<()> {
        if self.horizon == 0 || self.horizon >= usize::BITS as usize - 1 {
            return Err(Error::Model("horizon must be at least 1".into()));
        }
        let per = 1usize
            .checked_shl(self.horizon as u32)
            .ok_or_else(|| Error::Model("horizon too large to enumerate".into()))?;
        if self.query_prior.len().saturating_mul(per) > MAX_STATES {
            return Err(Error::Model(format!(
                "{} queries at horizon {} exceed {MAX_STATES} states",
                self.query_prior.len(),
                self.horizon
            )));
        }
        if self.reward.len() != self.n_states() {
            return Err(Error::Model("reward table does not cover the state space".into()));
        }
        Ok(())
    }

    /// Probability of reaching every state.
    pub fn visitation(&self, pi: &TabularPolicy) -> Result<Vec<f64>> {
        self.check()?;
        let mut reach = vec![0.0; self.n_states()];
        for (q, &p0) in self.query_prior.iter().enumerate() {
            reach[self.state(q, 0, 0)] = p0;
            for t in 0..self.horizon - 1 {
                for prefix in 0..(1 << t) {
                    let s = self.state(q, t, prefix);
                    let pr = pi.probs(s);
                    reach[self.state(q, t + 1, prefix)] += reach[s] * pr[0];
                    reach[self.state(q, t + 1, prefix | (1 << t))] += reach[s] * pr[1];
                }
            }
        }
        Ok(reach)
    }

    pub fn occupancy(&self, pi: &TabularPolicy) -> Result<OccupancyMeasure> {
        let reach = self.visitation(pi)?;
        let z = self.discount_mass();
        let mass = reach
            .iter()
            .enumerate()
            .map(|(s, &r)| {
                let (_, t, _) = self.decode(s);
                let w = self.gamma.powi(t as i32) / z;
                let p = pi.probs(s);
                [w * r * p[0], w * r * p[1]]
            })
            .collect();
        Ok(OccupancyMeasure { mass })
    }

    /// Expected discounted `T`-step utility.
    pub fn utility(&self, pi: &TabularPolicy) -> Result<f64> {
        let occ = self.occupancy(pi)?;
        let z = self.discount_mass();
        Ok(z * occ
            .mass
            .iter()
            .zip(&self.reward)
            .map(|(m, r)| m[0] * r[0] + m[1] * r[1])
            .sum::<f64>())
    }

    pub fn utility_gap(&self, pi: &TabularPolicy, expert: &TabularPolicy) -> Result<f64> {
        Ok((self.utility(pi)? - self.utility(expert)?).abs())
    }

    /// Monte-Carlo utility estimate and its standard error.
    pub fn sample_utility<R: Rng + ?Sized>(&self, pi: &TabularPolicy, n: usize, rng: &mut R) -> Result<(f64, f64)> {
        self.check()?;
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..n {
            let mut u = rng.gen::<f64>();
            let mut q = self.query_prior.len() - 1;
            for (i, p) in self.query_prior.iter().enumerate() {
                if u < *p {
                    q = i;
                    break;
                }
                u -= p;
            }
            let mut prefix = 0;
            let mut ret = 0.0;
            for t in 0..self.horizon {
                let s = self.state(q, t, prefix);
                let a = (rng.gen::<f64>() < pi.p_click[s]) as usize;
                ret += self.gamma.powi(t as i32) * self.reward[s][a];
                prefix |= a << t;
            }
            sum += ret;
            sq += ret * ret;
        }
        let mean = sum / n as f64;
        let var = (sq / n as f64 - mean * mean).max(0.0);
        Ok((mean, (var / n as f64).sqrt()))
    }
}

fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * (x / y).ln()
    }
}

/// `KL(p ‖ q)` in nats.
pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| xlogy(*a, *b)).sum()
}

/// Jensen–Shannon divergence in nats, `½ KL(p‖m) + ½ KL(q‖m)`, in `[0, ln 2]`.
pub fn js(p: &[f64], q: &[f64]) -> f64 {
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    (0.5 * kl(p, &m) + 0.5 * kl(q, &m)).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheck {
    pub gap: f64,
    pub eps: f64,
    pub bound: f64,
    pub holds: bool,
}

impl BoundCheck {
    pub fn margin(&self) -> f64 {
        self.bound - self.gap
    }
}

/// Cloning bound. Also returns the tighter `√2 T(T+1) R_max √ε` value.
pub fn check_bc_bound(pi: &TabularPolicy, expert: &TabularPolicy, mdp: &TinyMdp) -> Result<(BoundCheck, f64)> {
    let gap = mdp.utility_gap(pi, expert)?;
    let reach = mdp.visitation(expert)?;
    let eps = reach
        .iter()
        .enumerate()
        .filter(|(_, r)| **r > 0.0)
        .map(|(s, _)| kl(&expert.probs(s), &pi.probs(s)))
        .fold(0.0, f64::max);
    let t = mdp.horizon as f64;
    let bound = 2.0 * t * (t + 1.0) * mdp.r_max * eps.sqrt();
    let tight = 2f64.sqrt() * t * (t + 1.0) * mdp.r_max * eps.sqrt();
    Ok((
        BoundCheck {
            gap,
            eps,
            bound,
            holds: gap <= bound + 1e-12,
        },
        tight,
    ))
}

/// Adversarial-imitation bound from the occupancy JS divergence.
pub fn check_gail_bound(pi: &TabularPolicy, expert: &TabularPolicy, mdp: &TinyMdp) -> Result<BoundCheck> {
    let gap = mdp.utility_gap(pi, expert)?;
    let a: Vec<f64> = mdp.occupancy(pi)?.flat().collect();
    let b: Vec<f64> = mdp.occupancy(expert)?.flat().collect();
    let eps = js(&a, &b);
    let t = mdp.horizon as f64;
    let bound = 2.0 * 2f64.sqrt() * mdp.r_max * (t + 1.0) * eps.sqrt();
    Ok(BoundCheck {
        gap,
        eps,
        bound,
        holds: gap <= bound + 1e-12,
    })
}

/// A random instance: 1–2 queries, documents from a vocabulary of 3, rewards
/// uniform in `[-1, 1]`, policies with click probabilities in `(0.02, 0.98)`.
/// Half of the learner policies are small perturbations of the expert so the
/// audit covers the small-divergence regime.
pub fn random_instance<R: Rng + ?Sized>(horizon: usize, rng: &mut R) -> (TinyMdp, TabularPolicy, TabularPolicy) {
    let n_q = rng.gen_range(1..=2);
    let mut prior: Vec<f64> = (0..n_q).map(|_| rng.gen_range(0.1..1.0)).collect();
    let z: f64 = prior.iter().sum();
    prior.iter_mut().for_each(|p| *p /= z);
    let schedule = (0..n_q)
        .map(|_| (0..horizon).map(|_| rng.gen_range(0..3)).collect())
        .collect();
    let mut mdp = TinyMdp {
        horizon,
        gamma: rng.gen_range(0.0..=1.0),
        query_prior: prior,
        schedule,
        reward: Vec::new(),
        r_max: 1.0,
    };
    mdp.reward = (0..mdp.n_states())
        .map(|_| [rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0)])
        .collect();
    let expert = TabularPolicy {
        p_click: (0..mdp.n_states()).map(|_| rng.gen_range(0.02..0.98)).collect(),
    };
    let pi = if rng.gen_bool(0.5) {
        let scale = 10f64.powf(rng.gen_range(-3.0..-0.5));
        TabularPolicy {
            p_click: expert
                .p_click
                .iter()
                .map(|p| (p + scale * rng.gen_range(-1.0..1.0)).clamp(0.02, 0.98))
                .collect(),
        }
    } else {
        TabularPolicy {
            p_click: (0..mdp.n_states()).map(|_| rng.gen_range(0.02..0.98)).collect(),
        }
    };
    (mdp, pi, expert)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditRow {
    pub instance: usize,
    pub horizon: usize,
    pub bc: BoundCheck,
    pub bc_tight: f64,
    pub gail: BoundCheck,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AuditReport {
    pub rows: Vec<AuditRow>,
}

impl AuditReport {
    pub fn bc_holds(&self) -> usize {
        self.rows.iter().filter(|r| r.bc.holds).count()
    }

    pub fn gail_holds(&self) -> usize {
        self.rows.iter().filter(|r| r.gail.holds).count()
    }

    pub fn all_hold(&self) -> bool {
        self.rows.iter().all(|r| r.bc.holds && r.gail.holds)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from(
            "instance\thorizon\tgap\teps_bc\tbound_bc\tbound_bc_tight\tmargin_bc\tholds_bc\teps_ga\tbound_ga\tmargin_ga\tholds_ga\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{}\t{}\t{:.12e}\t{:.12e}\t{:.12e}\t{:.12e}\t{:.12e}\t{}\t{:.12e}\t{:.12e}\t{:.12e}\t{}",
                r.instance,
                r.horizon,
                r.bc.gap,
                r.bc.eps,
                r.bc.bound,
                r.bc_tight,
                r.bc.margin(),
                r.bc.holds as u8,
                r.gail.eps,
                r.gail.bound,
                r.gail.margin(),
                r.gail.holds as u8
            );
        }
        s
    }
}

/// Checks both bounds on `instances` seeded random instances of `horizon`.
pub fn audit<R: Rng + ?Sized>(instances: usize, horizon: usize, rng: &mut R) -> Result<AuditReport> {
    let mut report = AuditReport::default();
    for i in 0..instances {
        let (mdp, pi, expert) = random_instance(horizon, rng);
        let (bc, bc_tight) = check_bc_bound(&pi, &expert, &mdp)?;
        let gail = check_gail_bound(&pi, &expert, &mdp)?;
        report.rows.push(AuditRow {
            instance: i,
            horizon,
            bc,
            bc_tight,
            gail,
        });
    }
    Ok(report)
}

/// The error-compounding family: the expert never clicks; the learner clicks
/// with probability `delta` while still on the expert's path; a reward of +1
/// is paid only for skipping before any click, -1 otherwise. `γ = 1`.
pub fn compounding_instance(horizon: usize, delta: f64) -> (TinyMdp, TabularPolicy, TabularPolicy) {
    let mut mdp = TinyMdp {
        horizon,
        gamma: 1.0,
        query_prior: vec![1.0],
        schedule: vec![(0..horizon as u32).collect()],
        reward: Vec::new(),
        r_max: 1.0,
    };
    mdp.reward = (0..mdp.n_states())
        .map(|s| {
            let (_, _, prefix) = mdp.decode(s);
            if prefix == 0 {
                [1.0, -1.0]
            } else {
                [-1.0, -1.0]
            }
        })
        .collect();
    let expert = TabularPolicy {
        p_click: vec![0.0; mdp.n_states()],
    };
    let pi = TabularPolicy {
        p_click: (0..mdp.n_states())
            .map(|s| if mdp.decode(s).2 == 0 { delta } else { 0.5 })
            .collect(),
    };
    (mdp, pi, expert)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingRow {
    pub horizon: usize,
    /// `max_δ gap / (R_max √ε_bc)`.
    pub bc_normalized: f64,
    pub bc_delta: f64,
    /// `max_δ gap / (R_max √ε_ga)`.
    pub gail_normalized: f64,
    /// `2√2 (T+1)`, the linear coefficient of the adversarial bound.
    pub gail_coefficient: f64,
}

/// Worst-case normalised gaps over a grid of `delta` per horizon.
pub fn scaling_audit(horizons: &[usize]) -> Result<Vec<ScalingRow>> {
    let grid: Vec<f64> = (1..=60).map(|i| 10f64.powf(-4.0 + 4.0 * i as f64 / 60.0) * 0.999).collect();
    horizons
        .iter()
        .map(|&t| {
            let mut row = ScalingRow {
                horizon: t,
                bc_normalized: 0.0,
                bc_delta: 0.0,
                gail_normalized: 0.0,
                gail_coefficient: 2.0 * 2f64.sqrt() * (t as f64 + 1.0),
            };
            for &d in &grid {
                let (mdp, pi, expert) = compounding_instance(t, d);
                let (bc, _) = check_bc_bound(&pi, &expert, &mdp)?;
                let ga = check_gail_bound(&pi, &expert, &mdp)?;
                let nb = bc.gap / (mdp.r_max * bc.eps.sqrt());
                if nb > row.bc_normalized {
                    row.bc_normalized = nb;
                    row.bc_delta = d;
                }
                row.gail_normalized = row.gail_normalized.max(ga.gap / (mdp.r_max * ga.eps.sqrt()));
            }
            Ok(row)
        })
        .collect()
}

/// Lookup from oracle document token to `(query, doc)` indices, for tests
/// that relate fitted parameters to the truth.
pub fn doc_index(token: &str) -> Option<(usize, usize)> {
    OracleSpec::parse_doc(token)
}

/// True attractiveness keyed by dataset ids.
pub fn attr_by_id(spec: &OracleSpec, ds: &Dataset) -> HashMap<(u32, u32), f64> {
    let mut out = HashMap::new();
    for (q, row) in spec.attr.iter().enumerate() {
        let qid = ds.queries.lookup(&OracleSpec::query_token(q));
        for (j, a) in row.iter().enumerate() {
            let tok = OracleSpec::doc_token(q, j);
            if ds.docs.contains(&tok) {
                out.insert((qid, ds.docs.lookup(&tok)), *a);
            }
        }
    }
    out
}
