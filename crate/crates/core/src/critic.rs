//! Discriminator over state-action pairs. Same unrolled shape as the policy,
//! but rank `t` is fed the interaction *at* `t`, so the hidden state carries
//! both the state and the action; a sigmoid head scores it. Trained towards
//! 1 on generated pairs and 0 on logged (expert) pairs.

use rand::{Rng, RngCore};

use crate::clicklog::{click_token, SerpRecord};
use crate::error::{Error, Result};
use crate::numkernel::{sigmoid, softplus, ParamStore};
use crate::scalar::Scalar;
use crate::seqnet::{NetDims, SeqNet, StepInput, Unroll};

#[derive(Debug, Clone)]
pub struct Discriminator<S> {
    net: SeqNet<S>,
}

/// A record paired with the clicks to score on it.
pub type Pair<'a> = (&'a SerpRecord, &'a [u8]);

fn current_inputs(r: &SerpRecord, clicks: &[u8]) -> Vec<StepInput> {
    (0..r.len())
        .map(|t| StepInput {
            doc: r.docs[t],
            vertical: r.verticals[t],
            click: click_token(clicks[t]),
        })
        .collect()
}

impl<S: Scalar> Discriminator<S> {
    pub fn zeros(dims: NetDims) -> Result<Self> {
        Ok(Self {
            net: SeqNet::zeros(dims, 1)?,
        })
    }

    pub fn random<R: Rng + ?Sized>(dims: NetDims, scale: f64, rng: &mut R) -> Result<Self> {
        Ok(Self {
            net: SeqNet::random(dims, 1, scale, rng)?,
        })
    }

    pub fn from_net(net: SeqNet<S>) -> Result<Self> {
        if net.out_size() != 1 {
            return Err(Error::Model("discriminator head must be scalar".into()));
        }
        Ok(Self { net })
    }

    pub fn net(&self) -> &SeqNet<S> {
        &self.net
    }

    pub fn store(&self) -> &ParamStore<S> {
        self.net.store()
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<S> {
        self.net.store_mut()
    }

    fn unroll<R: Rng + ?Sized>(&self, r: &SerpRecord, clicks: &[u8], dropout: Option<(f64, &mut R)>) -> Result<Unroll<S>> {
        if clicks.len() != r.len() {
            return Err(Error::Model(format!(
                "scoring {} clicks against a list of {}",
                clicks.len(),
                r.len()
            )));
        }
        self.net.unroll(r.query, &current_inputs(r, clicks), dropout)
    }

    /// `D_t ∈ (0, 1)` for every rank.
    pub fn score_sequence(&self, r: &SerpRecord, clicks: &[u8]) -> Result<Vec<S>> {
        let u = self.unroll(r, clicks, None::<(f64, &mut dyn RngCore)>)?;
        Ok(u.logits.iter().map(|z| sigmoid(z[0])).collect())
    }

    /// `ln D_t` computed from the logits, finite even where `D_t` rounds to 0.
    pub fn log_scores(&self, r: &SerpRecord, clicks: &[u8]) -> Result<Vec<S>> {
        let u = self.unroll(r, clicks, None::<(f64, &mut dyn RngCore)>)?;
        Ok(u.logits.iter().map(|z| -softplus(-z[0])).collect())
    }

    /// Accumulates the gradient of
    /// `-(mean_fake log D + mean_real log(1 - D))`, each mean taken over
    /// positions, and returns that loss.
    pub fn disc_grads<R: Rng + ?Sized>(
        &mut self,
        real: &[Pair<'_>],
        fake: &[Pair<'_>],
        dropout: f64,
        rng: &mut R,
    ) -> Result<S> {
        let positions = |b: &[Pair<'_>]| b.iter().map(|(r, _)| r.len()).sum::<usize>();
        let (n_real, n_fake) = (positions(real), positions(fake));
        if n_real == 0 || n_fake == 0 {
            return Err(Error::Data("discriminator needs non-empty real and fake batches".into()));
        }
        let mut loss = S::zero();
        for (batch, is_fake, n) in [(fake, true, n_fake), (real, false, n_real)] {
            let inv = S::lit(1.0 / n as f64);
            for (r, clicks) in batch {
                let u = self.unroll(r, clicks, Some((dropout, &mut *rng)))?;
                let dlogits: Vec<Vec<S>> = u
                    .logits
                    .iter()
                    .map(|z| {
                        let d = sigmoid(z[0]);
                        // -log σ(z) = softplus(-z), -log(1-σ(z)) = softplus(z)
                        if is_fake {
                            loss += softplus(-z[0]) * inv;
                            vec![(d - S::one()) * inv]
                        } else {
                            loss += softplus(z[0]) * inv;
                            vec![d * inv]
                        }
                    })
                    .collect();
                self.net.backward(&u, &dlogits)?;
            }
        }
        Ok(loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::{grad_check, AdamConfig, AdamState};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dims() -> NetDims {
        NetDims::uniform(5, 9, 4, 3, 4)
    }

    fn record(q: u32) -> SerpRecord {
        SerpRecord {
            session_id: "s".into(),
            query: q,
            docs: vec![2, 5, 7],
            verticals: vec![2, 3, 2],
            clicks: vec![0, 1, 0],
        }
    }

    fn seeded(seed: u64) -> Discriminator<f64> {
        Discriminator::random(dims(), 0.5, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn zero_weights_score_half() {
        let d = Discriminator::<f64>::zeros(dims()).unwrap();
        assert_eq!(d.score_sequence(&record(2), &[1, 0, 1]).unwrap(), vec![0.5; 3]);
    }

    #[test]
    fn length_mismatch_rejected() {
        assert!(seeded(0).score_sequence(&record(2), &[1, 0]).is_err());
    }

    #[test]
    fn current_click_enters_its_own_rank() {
        let d = seeded(1);
        let a = d.score_sequence(&record(2), &[0, 0, 0]).unwrap();
        let b = d.score_sequence(&record(2), &[1, 0, 0]).unwrap();
        assert_ne!(a[0], b[0]);
        let c = d.score_sequence(&record(2), &[0, 0, 1]).unwrap();
        assert_eq!(a[..2], c[..2]);
        assert_ne!(a[2], c[2]);
    }

    #[test]
    fn truncation_reproduces_prefix() {
        let d = seeded(2);
        let r = record(3);
        let full = d.score_sequence(&r, &[1, 1, 0]).unwrap();
        let short = d.score_sequence(&r.truncated(2), &[1, 1]).unwrap();
        assert_eq!(short, full[..2].to_vec());
    }

    #[test]
    fn symmetric_batches_cancel_at_zero_weights() {
        let mut d = Discriminator::<f64>::zeros(dims()).unwrap();
        let r = record(2);
        let batch: Vec<Pair> = vec![(&r, &[1, 0, 1][..]), (&r, &[0, 0, 0][..])];
        d.store_mut().zero_grad();
        let loss = d.disc_grads(&batch, &batch, 0.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!((loss - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!(d.store().grad_norm_sq() < 1e-30);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut d = seeded(3);
        let (r1, r2) = (record(2), record(3));
        let real: Vec<Pair> = vec![(&r1, &[0, 1, 0][..]), (&r2, &[0, 0, 0][..])];
        let fake: Vec<Pair> = vec![(&r1, &[1, 1, 1][..])];
        let mut probe = d.clone();
        let report = grad_check(
            d.store_mut(),
            |store| {
                probe.store_mut().copy_values_from(store).unwrap();
                probe.store_mut().zero_grad();
                let loss = probe.disc_grads(&real, &fake, 0.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
                for p in probe.store().iter() {
                    let id = store.id(p.name()).unwrap();
                    store.grad_mut(id).as_mut_slice().copy_from_slice(p.grad().as_slice());
                }
                loss
            },
            usize::MAX,
            1e-5,
            &mut ChaCha8Rng::seed_from_u64(1),
        );
        assert!(report.passed(1e-4), "{:?}", report.worst());
    }

    fn train(d: &mut Discriminator<f64>, real: &[Pair], fake: &[Pair], steps: usize) {
        let mut opt = AdamState::new(d.store());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..steps {
            d.store_mut().zero_grad();
            d.disc_grads(real, fake, 0.0, &mut rng).unwrap();
            opt.step(d.store_mut(), &AdamConfig::new(1e-2, 0.0));
        }
    }

    fn mean_score(d: &Discriminator<f64>, b: &[Pair]) -> f64 {
        let s: Vec<f64> = b.iter().flat_map(|(r, c)| d.score_sequence(r, c).unwrap()).collect();
        s.iter().sum::<f64>() / s.len() as f64
    }

    #[test]
    fn separates_trivially_separable_batches() {
        let recs: Vec<SerpRecord> = (2..5).map(record).collect();
        let real: Vec<Pair> = recs.iter().map(|r| (r, &[0u8, 0, 0][..])).collect();
        let fake: Vec<Pair> = recs.iter().map(|r| (r, &[1u8, 1, 1][..])).collect();
        let mut d = seeded(5);
        train(&mut d, &real, &fake, 200);
        assert!(mean_score(&d, &fake) > 0.9);
        assert!(mean_score(&d, &real) < 0.1);
    }

    #[test]
    fn swapping_batches_reverses_direction() {
        let r = record(2);
        let a: Vec<Pair> = vec![(&r, &[0, 0, 1][..])];
        let b: Vec<Pair> = vec![(&r, &[1, 1, 0][..])];
        let base = seeded(6);
        let gap = |d: &Discriminator<f64>| mean_score(d, &b) - mean_score(d, &a);
        let sgd = |real: &[Pair], fake: &[Pair]| {
            let mut d = base.clone();
            d.store_mut().zero_grad();
            d.disc_grads(real, fake, 0.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
            let ids: Vec<_> = d.store().iter().map(|p| d.store().id(p.name()).unwrap()).collect();
            for id in ids {
                let g = d.store().grad(id).clone();
                for (v, g) in d.store_mut().value_mut(id).as_mut_slice().iter_mut().zip(g.as_slice()) {
                    *v -= 1e-2 * g;
                }
            }
            d
        };
        // b labelled generated: its scores rise relative to a
        assert!(gap(&sgd(&a, &b)) > gap(&base));
        assert!(gap(&sgd(&b, &a)) < gap(&base));
    }
}
