//! The click policy: a GRU user-state tracker with a two-way softmax head.
//!
//! At rank `t` the input is `v_q ⊕ v_d ⊕ v_v ⊕ v_c` where `v_c` embeds the
//! interaction at rank `t - 1` (padding at the first rank). Actions are
//! `0 = skip`, `1 = click`.

use rand::{Rng, RngCore};

use crate::clicklog::{click_token, SerpRecord, PAD_ID};
use crate::error::{Error, Result};
use crate::model::ClickModel;
use crate::numkernel::{log_softmax, softmax, ParamStore};
use crate::scalar::Scalar;
use crate::seqnet::{NetDims, SeqNet, StepInput, Unroll};

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyState<S> {
    pub query: u32,
    pub h: Vec<S>,
    /// Interaction id fed at the next step.
    pub prev: u32,
    pub rank: usize,
    pub horizon: usize,
}

impl<S> PolicyState<S> {
    /// Records the action taken at the step that produced this state.
    pub fn commit(&mut self, action: u8) {
        self.prev = click_token(action);
    }
}

/// One sampled rollout over a record's documents.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<S> {
    pub record: SerpRecord,
    pub actions: Vec<u8>,
    pub logp: Vec<S>,
    pub rewards: Vec<S>,
    pub returns: Vec<S>,
}

#[derive(Debug, Clone)]
pub struct Generator<S> {
    net: SeqNet<S>,
}

/// Interaction ids fed at each rank when `clicks` is the history.
pub(crate) fn shifted_inputs(r: &SerpRecord, clicks: &[u8]) -> Vec<StepInput> {
    (0..r.len())
        .map(|t| StepInput {
            doc: r.docs[t],
            vertical: r.verticals[t],
            click: if t == 0 { PAD_ID } else { click_token(clicks[t - 1]) },
        })
        .collect()
}

impl<S: Scalar> Generator<S> {
    pub fn zeros(dims: NetDims) -> Result<Self> {
        Ok(Self {
            net: SeqNet::zeros(dims, 2)?,
        })
    }

    pub fn random<R: Rng + ?Sized>(dims: NetDims, scale: f64, rng: &mut R) -> Result<Self> {
        Ok(Self {
            net: SeqNet::random(dims, 2, scale, rng)?,
        })
    }

    pub fn from_net(net: SeqNet<S>) -> Result<Self> {
        if net.out_size() != 2 {
            return Err(Error::Model("generator head must be two-way".into()));
        }
        Ok(Self { net })
    }

    pub fn net(&self) -> &SeqNet<S> {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut SeqNet<S> {
        &mut self.net
    }

    pub fn store(&self) -> &ParamStore<S> {
        self.net.store()
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<S> {
        self.net.store_mut()
    }

    pub fn dims(&self) -> NetDims {
        self.net.dims()
    }

    pub fn init_state(&self, query: u32, horizon: usize) -> Result<PolicyState<S>> {
        let (h, _) = self.net.start(query)?;
        Ok(PolicyState {
            query,
            h,
            prev: PAD_ID,
            rank: 0,
            horizon,
        })
    }

    /// `[p_skip, p_click]` at the state's rank and the successor state; the
    /// caller commits the chosen action into the successor.
    pub fn step(&self, s: &PolicyState<S>, doc: u32, vertical: u32) -> Result<([S; 2], PolicyState<S>)> {
        if s.rank >= s.horizon {
            return Err(Error::Model(format!("cannot step past rank {}", s.horizon)));
        }
        let (h, _) = self.net.advance(
            s.query,
            &s.h,
            StepInput {
                doc,
                vertical,
                click: s.prev,
            },
        )?;
        let p = softmax(&self.net.head(&h));
        Ok((
            [p[0], p[1]],
            PolicyState {
                query: s.query,
                h,
                prev: PAD_ID,
                rank: s.rank + 1,
                horizon: s.horizon,
            },
        ))
    }

    /// Rolls out the policy on its own actions.
    pub fn sample_sequence<R: Rng + ?Sized>(&self, r: &SerpRecord, rng: &mut R) -> Result<Trajectory<S>> {
        let t_len = r.len();
        let mut s = self.init_state(r.query, t_len)?;
        let mut actions = Vec::with_capacity(t_len);
        let mut logp = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let (h, _) = self.net.advance(
                s.query,
                &s.h,
                StepInput {
                    doc: r.docs[t],
                    vertical: r.verticals[t],
                    click: s.prev,
                },
            )?;
            let lp = log_softmax(&self.net.head(&h));
            let a = (rng.gen::<f64>() < lp[1].exp().as_f64()) as u8;
            actions.push(a);
            logp.push(lp[a as usize]);
            s = PolicyState {
                query: s.query,
                h,
                prev: click_token(a),
                rank: t + 1,
                horizon: t_len,
            };
        }
        Ok(Trajectory {
            record: r.clone(),
            actions,
            logp,
            rewards: Vec::new(),
            returns: Vec::new(),
        })
    }

    /// Forward pass conditioned on `clicks` as the interaction history.
    pub fn unroll<R: Rng + ?Sized>(
        &self,
        r: &SerpRecord,
        clicks: &[u8],
        dropout: Option<(f64, &mut R)>,
    ) -> Result<Unroll<S>> {
        if clicks.len() != r.len() {
            return Err(Error::Model("click history length differs from the list".into()));
        }
        self.net.unroll(r.query, &shifted_inputs(r, clicks), dropout)
    }

    /// Click probabilities with `clicks` fed as history.
    pub fn probs_given(&self, r: &SerpRecord, clicks: &[u8]) -> Result<Vec<S>> {
        let u = self.unroll(r, clicks, None::<(f64, &mut dyn RngCore)>)?;
        Ok(u.logits.iter().map(|z| softmax(z)[1]).collect())
    }

    pub fn teacher_forced_probs(&self, r: &SerpRecord) -> Result<Vec<S>> {
        self.probs_given(r, &r.clicks)
    }

    /// Click probability of the document shown first with no history.
    pub fn relevance_score(&self, query: u32, doc: u32, vertical: u32) -> Result<S> {
        let s = self.init_state(query, 1)?;
        Ok(self.step(&s, doc, vertical)?.0[1])
    }

    /// Mean per-position teacher-forced cross-entropy of `batch`; its gradient
    /// is accumulated into the store.
    pub fn mle_loss_grad<R: Rng + ?Sized>(&mut self, batch: &[&SerpRecord], dropout: f64, rng: &mut R) -> Result<S> {
        let n: usize = batch.iter().map(|r| r.len()).sum();
        if n == 0 {
            return Err(Error::Data("empty training batch".into()));
        }
        let inv = S::lit(1.0 / n as f64);
        let mut loss = S::zero();
        for r in batch {
            let u = self.unroll(r, &r.clicks, Some((dropout, &mut *rng)))?;
            let dlogits: Vec<Vec<S>> = u
                .logits
                .iter()
                .zip(&r.clicks)
                .map(|(z, &c)| {
                    let lp = log_softmax(z);
                    loss -= lp[c as usize];
                    let mut g: Vec<S> = lp.iter().map(|l| l.exp() * inv).collect();
                    g[c as usize] -= inv;
                    g
                })
                .collect();
            self.net.backward(&u, &dlogits)?;
        }
        Ok(loss * inv)
    }
}

impl<S: Scalar> ClickModel for Generator<S> {
    fn click_probs(&self, record: &SerpRecord) -> Vec<f64> {
        self.teacher_forced_probs(record)
            .expect("record ids lie inside the model vocabulary")
            .into_iter()
            .map(|p| p.as_f64())
            .collect()
    }

    fn sample_clicks(&self, record: &SerpRecord, rng: &mut dyn RngCore) -> Vec<u8> {
        self.sample_sequence(record, rng)
            .expect("record ids lie inside the model vocabulary")
            .actions
    }

    fn relevance(&self, query: u32, doc: u32, vertical: u32) -> f64 {
        self.relevance_score(query, doc, vertical)
            .map(|p| p.as_f64())
            .unwrap_or(0.5)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::{grad_check, AdamConfig, AdamState, Matrix};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dims() -> NetDims {
        NetDims {
            n_queries: 5,
            n_docs: 9,
            n_verticals: 4,
            n_clicks: 4,
            l_q: 3,
            l_d: 4,
            l_v: 2,
            l_c: 2,
            l_h: 5,
        }
    }

    fn record(clicks: &[u8]) -> SerpRecord {
        SerpRecord {
            session_id: "s".into(),
            query: 3,
            docs: vec![2, 5, 7, 8][..clicks.len()].to_vec(),
            verticals: vec![2, 3, 2, 3][..clicks.len()].to_vec(),
            clicks: clicks.to_vec(),
        }
    }

    fn seeded(seed: u64) -> Generator<f64> {
        Generator::random(dims(), 0.5, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    /// Independent straight-line evaluation of the policy in plain loops.
    fn reference_probs(g: &Generator<f64>, r: &SerpRecord) -> Vec<f64> {
        let st = g.store();
        let m = |name: &str| st.value(st.id(name).unwrap()).clone();
        let (eq, ed, ev, ec) = (m("emb_q"), m("emb_d"), m("emb_v"), m("emb_c"));
        let (wz, wr, wh, uz, ur, uh) = (m("gru.w_z"), m("gru.w_r"), m("gru.w_h"), m("gru.u_z"), m("gru.u_r"), m("gru.u_h"));
        let (bz, br, bh, hw, hb) = (m("gru.b_z"), m("gru.b_r"), m("gru.b_h"), m("head.w"), m("head.b"));
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let lin = |w: &Matrix<f64>, x: &[f64], i: usize| -> f64 { (0..x.len()).map(|j| w.get(i, j) * x[j]).sum() };
        let cell = |x: &[f64], h: &[f64]| -> Vec<f64> {
            let n = h.len();
            let z: Vec<f64> = (0..n).map(|i| sig(lin(&wz, x, i) + lin(&uz, h, i) + bz.get(i, 0))).collect();
            let rr: Vec<f64> = (0..n).map(|i| sig(lin(&wr, x, i) + lin(&ur, h, i) + br.get(i, 0))).collect();
            let rh: Vec<f64> = (0..n).map(|i| rr[i] * h[i]).collect();
            (0..n)
                .map(|i| {
                    let c = (lin(&wh, x, i) + lin(&uh, &rh, i) + bh.get(i, 0)).tanh();
                    (1.0 - z[i]) * h[i] + z[i] * c
                })
                .collect()
        };
        let mut x0 = eq.row(r.query as usize).to_vec();
        x0.resize(11, 0.0);
        let mut h = cell(&x0, &[0.0; 5]);
        let mut out = Vec::new();
        for t in 0..r.len() {
            let c = if t == 0 { 0 } else { 2 + r.clicks[t - 1] as usize };
            let mut x = eq.row(r.query as usize).to_vec();
            x.extend_from_slice(ed.row(r.docs[t] as usize));
            x.extend_from_slice(ev.row(r.verticals[t] as usize));
            x.extend_from_slice(ec.row(c));
            h = cell(&x, &h);
            let z0 = lin(&hw, &h, 0) + hb.get(0, 0);
            let z1 = lin(&hw, &h, 1) + hb.get(1, 0);
            out.push(1.0 / (1.0 + (z0 - z1).exp()));
        }
        out
    }

    #[test]
    fn zero_weights_give_half() {
        let g = Generator::<f64>::zeros(dims()).unwrap();
        let s = g.init_state(3, 4).unwrap();
        assert!(s.h.iter().all(|v| *v == 0.0));
        let (p, _) = g.step(&s, 5, 2).unwrap();
        assert_eq!(p, [0.5, 0.5]);
        assert_eq!(g.teacher_forced_probs(&record(&[1, 0, 1, 0])).unwrap(), vec![0.5; 4]);
        assert_eq!(g.relevance_score(3, 7, 2).unwrap(), 0.5);
    }

    #[test]
    fn padding_query_yields_zero_input() {
        let g = seeded(1);
        let (h_pad, cache) = g.net().start(0).unwrap();
        assert!(cache.input().iter().all(|v| *v == 0.0));
        let (h_ref, _) = Generator::<f64>::zeros(dims()).unwrap().net().start(0).unwrap();
        assert_eq!(h_ref, vec![0.0; 5]);
        assert_eq!(h_pad.len(), 5);
    }

    #[test]
    fn queries_differ_in_initial_state() {
        let g = seeded(2);
        assert_ne!(g.init_state(2, 3).unwrap().h, g.init_state(3, 3).unwrap().h);
    }

    #[test]
    fn stepping_past_horizon_fails() {
        let g = seeded(3);
        let s = g.init_state(3, 1).unwrap();
        let (_, s1) = g.step(&s, 2, 2).unwrap();
        assert!(g.step(&s1, 5, 2).is_err());
    }

    #[test]
    fn matches_scalar_reference() {
        let g = seeded(4);
        for clicks in [[0, 0, 0, 0], [1, 0, 1, 1], [0, 1, 1, 0]] {
            let r = record(&clicks);
            let got = g.teacher_forced_probs(&r).unwrap();
            for (a, b) in got.iter().zip(reference_probs(&g, &r)) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn history_changes_later_probabilities() {
        let g = seeded(5);
        let a = g.teacher_forced_probs(&record(&[0, 0, 0, 0])).unwrap();
        let b = g.teacher_forced_probs(&record(&[1, 0, 0, 0])).unwrap();
        assert_eq!(a[0], b[0]);
        assert!((1..4).all(|t| a[t] != b[t]));
    }

    #[test]
    fn step_api_agrees_with_teacher_forcing() {
        let g = seeded(6);
        let r = record(&[1, 1, 0, 1]);
        let tf = g.teacher_forced_probs(&r).unwrap();
        let mut s = g.init_state(r.query, 4).unwrap();
        for t in 0..4 {
            let (p, mut next) = g.step(&s, r.docs[t], r.verticals[t]).unwrap();
            assert_eq!(p[1], tf[t]);
            next.commit(r.clicks[t]);
            s = next;
        }
    }

    #[test]
    fn sampled_log_probs_match_replayed_probabilities() {
        let g = seeded(7);
        let r = record(&[0, 0, 0, 0]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let traj = g.sample_sequence(&r, &mut rng).unwrap();
            let p = g.probs_given(&r, &traj.actions).unwrap();
            for t in 0..4 {
                let pa = if traj.actions[t] == 1 { p[t] } else { 1.0 - p[t] };
                assert!((traj.logp[t].exp() - pa).abs() < 1e-12);
                assert!(traj.logp[t] <= 0.0);
            }
        }
    }

    #[test]
    fn sampling_replays_with_seed() {
        let g = seeded(8);
        let r = record(&[0, 0, 0, 0]);
        let a = g.sample_sequence(&r, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = g.sample_sequence(&r, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
    }

    fn biased(p_click: f64) -> Generator<f64> {
        let mut g = Generator::<f64>::zeros(dims()).unwrap();
        let logit = if p_click >= 1.0 { 1000.0 } else { (p_click / (1.0 - p_click)).ln() };
        g.store_mut().set_value("head.b", Matrix::from_vec(2, 1, vec![0.0, logit]).unwrap()).unwrap();
        g
    }

    #[test]
    fn degenerate_head_clicks_everything() {
        let g = biased(1.0);
        let traj = g.sample_sequence(&record(&[0, 0, 0, 0]), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(traj.actions, vec![1; 4]);
        assert!(traj.logp.iter().all(|l| *l == 0.0));
    }

    #[test]
    fn expected_click_count_matches_binomial_mean() {
        let g = biased(0.3);
        let mut r = record(&[0, 0, 0, 0]);
        r.docs = (0..10).map(|i| 2 + (i % 7)).collect();
        r.verticals = vec![2; 10];
        r.clicks = vec![0; 10];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10_000;
        let total: usize = (0..n)
            .map(|_| g.sample_sequence(&r, &mut rng).unwrap().actions.iter().filter(|a| **a == 1).count())
            .sum();
        let mean = total as f64 / n as f64;
        assert!((mean - 3.0).abs() < 0.1, "{mean}");
    }

    #[test]
    fn truncation_reproduces_prefix() {
        let g = seeded(10);
        let r = record(&[1, 0, 1, 1]);
        let full = g.teacher_forced_probs(&r).unwrap();
        for k in 1..=4 {
            assert_eq!(g.teacher_forced_probs(&r.truncated(k)).unwrap(), full[..k].to_vec());
        }
    }

    #[test]
    fn nll_gradient_matches_finite_differences() {
        let mut g = seeded(12);
        let batch = [record(&[1, 0, 1, 1]), record(&[0, 0, 1, 0])];
        let refs: Vec<&SerpRecord> = batch.iter().collect();
        let mut gen2 = g.clone();
        let report = grad_check(
            g.store_mut(),
            |store| {
                gen2.store_mut().copy_values_from(store).unwrap();
                gen2.store_mut().zero_grad();
                let loss = gen2.mle_loss_grad(&refs, 0.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
                for p in gen2.store().iter() {
                    let id = store.id(p.name()).unwrap();
                    store.grad_mut(id).as_mut_slice().copy_from_slice(p.grad().as_slice());
                }
                loss
            },
            usize::MAX,
            1e-6,
            &mut ChaCha8Rng::seed_from_u64(1),
        );
        assert!(report.passed(1e-4), "{:?}", report.worst());
    }

    #[test]
    fn pinned_rows_survive_training() {
        let mut g = seeded(13);
        let mut opt = AdamState::new(g.store());
        let mut r = record(&[1, 0, 1, 1]);
        r.docs[1] = 1; // out-of-vocabulary slot
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..25 {
            g.store_mut().zero_grad();
            g.mle_loss_grad(&[&r], 0.5, &mut rng).unwrap();
            opt.step(g.store_mut(), &AdamConfig::new(1e-2, 1e-5));
        }
        for p in g.store().iter() {
            for &row in p.pinned_rows() {
                assert!(p.value().row(row).iter().all(|v| *v == 0.0), "{}", p.name());
            }
        }
    }

    #[test]
    fn overfits_one_record() {
        let mut g = seeded(14);
        let mut opt = AdamState::new(g.store());
        let r = record(&[1, 0, 1, 1]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut last = f64::INFINITY;
        for _ in 0..10 {
            g.store_mut().zero_grad();
            let loss = g.mle_loss_grad(&[&r], 0.0, &mut rng).unwrap();
            assert!(loss < last);
            last = loss;
            opt.step(g.store_mut(), &AdamConfig::new(1e-2, 0.0));
        }
    }

    #[test]
    fn single_precision_tracks_double() {
        let g = seeded(15);
        let mut g32 = Generator::<f32>::zeros(dims()).unwrap();
        for p in g.store().iter() {
            g32.store_mut().set_value(p.name(), p.value().cast()).unwrap();
        }
        let r = record(&[0, 1, 1, 0]);
        let a = g.teacher_forced_probs(&r).unwrap();
        let b = g32.teacher_forced_probs(&r).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - *y as f64).abs() < 1e-5);
        }
    }
}
