use rand::Rng;

use crate::scalar::Scalar;

use super::ParamStore;

/// Relative errors below this magnitude are measured against it instead,
/// so entries whose true gradient is ~0 are compared absolutely.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct Probe {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub probes: Vec<Probe>,
    pub max_rel_err: f64,
}

impl GradCheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }

    pub fn worst(&self) -> Option<&Probe> {
        self.probes
            .iter()
            .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares analytic gradients against central differences.
///
/// `loss_fn` must zero the gradients, evaluate the loss and accumulate the
/// analytic gradient into `store`; it is called once for the analytic pass
/// and twice per probe. When `n_probes` covers every non-pinned entry all of
/// them are checked in order, otherwise entries are drawn at random.
pub fn grad_check<S, F, R>(
    store: &mut ParamStore<S>,
    mut loss_fn: F,
    n_probes: usize,
    step: f64,
    rng: &mut R,
) -> GradCheckReport
where
    S: Scalar,
    F: FnMut(&mut ParamStore<S>) -> S,
    R: Rng + ?Sized,
{
    loss_fn(store);
    let analytic: Vec<Vec<f64>> = store
        .iter()
        .map(|p| p.grad().as_slice().iter().map(|g| g.as_f64()).collect())
        .collect();

    let candidates: Vec<(usize, usize)> = store
        .iter()
        .enumerate()
        .flat_map(|(pi, p)| {
            (0..p.value().len())
                .filter(move |&k| !p.is_pinned(k))
                .map(move |k| (pi, k))
        })
        .collect();
    let chosen: Vec<(usize, usize)> = if n_probes >= candidates.len() {
        candidates
    } else {
        (0..n_probes)
            .map(|_| candidates[rng.gen_range(0..candidates.len())])
            .collect()
    };

    let h = S::lit(step);
    let mut probes = Vec::with_capacity(chosen.len());
    let mut max_rel_err: f64 = 0.0;
    for (pi, k) in chosen {
        let id = super::ParamId(pi);
        let orig = store.value(id).as_slice()[k];
        store.value_mut(id).as_mut_slice()[k] = orig + h;
        let up = loss_fn(store).as_f64();
        store.value_mut(id).as_mut_slice()[k] = orig - h;
        let down = loss_fn(store).as_f64();
        store.value_mut(id).as_mut_slice()[k] = orig;
        let numeric = (up - down) / (2.0 * step);
        let a = analytic[pi][k];
        let rel_err = relative_error(a, numeric);
        max_rel_err = max_rel_err.max(rel_err);
        probes.push(Probe {
            param: store.param(id).name().to_string(),
            index: k,
            analytic: a,
            numeric,
            rel_err,
        });
    }
    // leave the store holding the analytic gradients at the original point
    loss_fn(store);
    GradCheckReport {
        probes,
        max_rel_err,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::Matrix;
    use rand::SeedableRng;

    #[test]
    fn quadratic_loss_gradient_is_theta() {
        let mut store = ParamStore::<f64>::new();
        let id = store
            .add("theta", Matrix::from_vec(2, 3, vec![0.5, -1.0, 2.0, 0.1, 3.0, -0.7]).unwrap(), vec![])
            .unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let report = grad_check(
            &mut store,
            |s| {
                s.zero_grad();
                let v = s.value(id).clone();
                s.grad_mut(id).as_mut_slice().copy_from_slice(v.as_slice());
                0.5 * v.as_slice().iter().map(|x| x * x).sum::<f64>()
            },
            usize::MAX,
            1e-5,
            &mut rng,
        );
        assert_eq!(report.probes.len(), 6);
        assert!(report.max_rel_err < 1e-9, "{}", report.max_rel_err);
    }

    #[test]
    fn reports_wrong_gradient_without_panicking() {
        let mut store = ParamStore::<f64>::new();
        let id = store
            .add("theta", Matrix::from_vec(1, 2, vec![1.0, 2.0]).unwrap(), vec![])
            .unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let report = grad_check(
            &mut store,
            |s| {
                s.zero_grad();
                s.grad_mut(id).fill(0.0);
                s.value(id).as_slice().iter().map(|x| x * x).sum::<f64>()
            },
            1,
            1e-5,
            &mut rng,
        );
        assert!(!report.passed(1e-4));
        assert_eq!(report.probes.len(), 1);
    }
}
