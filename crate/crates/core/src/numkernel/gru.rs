//! Gated recurrent unit with hand-written reverse mode.
//!
//! Convention (frozen): `h' = (1 - z) ⊙ h + z ⊙ h̃` with
//! `z = σ(W_z x + U_z h + b_z)`, `r = σ(W_r x + U_r h + b_r)` and
//! `h̃ = tanh(W_h x + U_h (r ⊙ h) + b_h)`.

use crate::scalar::Scalar;

use super::activation::sigmoid;
use super::{KernelError, Matrix, ParamId, ParamStore};

/// Handles to the nine tensors of one GRU cell inside a [`ParamStore`].
#[derive(Debug, Clone, Copy)]
pub struct GruCell {
    pub w_z: ParamId,
    pub w_r: ParamId,
    pub w_h: ParamId,
    pub u_z: ParamId,
    pub u_r: ParamId,
    pub u_h: ParamId,
    pub b_z: ParamId,
    pub b_r: ParamId,
    pub b_h: ParamId,
    input_size: usize,
    hidden_size: usize,
}

/// Everything the backward pass needs from one forward call.
#[derive(Debug, Clone)]
pub struct GruCache<S> {
    cell_tag: usize,
    x: Vec<S>,
    h_prev: Vec<S>,
    z: Vec<S>,
    r: Vec<S>,
    h_cand: Vec<S>,
    rh: Vec<S>,
}

impl<S> GruCache<S> {
    pub fn input(&self) -> &[S] {
        &self.x
    }
}

impl GruCell {
    /// Registers zero-initialised cell tensors under `prefix`.
    pub fn register<S: Scalar>(
        store: &mut ParamStore<S>,
        prefix: &str,
        input_size: usize,
        hidden_size: usize,
    ) -> Result<Self, KernelError> {
        let mut add = |suffix: &str, rows: usize, cols: usize| {
            store.add(format!("{prefix}.{suffix}"), Matrix::zeros(rows, cols), vec![])
        };
        Ok(Self {
            w_z: add("w_z", hidden_size, input_size)?,
            w_r: add("w_r", hidden_size, input_size)?,
            w_h: add("w_h", hidden_size, input_size)?,
            u_z: add("u_z", hidden_size, hidden_size)?,
            u_r: add("u_r", hidden_size, hidden_size)?,
            u_h: add("u_h", hidden_size, hidden_size)?,
            b_z: add("b_z", hidden_size, 1)?,
            b_r: add("b_r", hidden_size, 1)?,
            b_h: add("b_h", hidden_size, 1)?,
            input_size,
            hidden_size,
        })
    }

    /// Re-binds to an existing cell registered under `prefix`.
    pub fn lookup<S: Scalar>(store: &ParamStore<S>, prefix: &str) -> Result<Self, KernelError> {
        let get = |suffix: &str| {
            let name = format!("{prefix}.{suffix}");
            store.id(&name).ok_or(KernelError::UnknownParam(name))
        };
        let w_z = get("w_z")?;
        let (hidden_size, input_size) = store.value(w_z).shape();
        Ok(Self {
            w_z,
            w_r: get("w_r")?,
            w_h: get("w_h")?,
            u_z: get("u_z")?,
            u_r: get("u_r")?,
            u_h: get("u_h")?,
            b_z: get("b_z")?,
            b_r: get("b_r")?,
            b_h: get("b_h")?,
            input_size,
            hidden_size,
        })
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden_size
    }

    pub fn forward<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        x: &[S],
        h_prev: &[S],
    ) -> Result<(Vec<S>, GruCache<S>), KernelError> {
        if x.len() != self.input_size || h_prev.len() != self.hidden_size {
            return Err(KernelError::shape(
                "gru_forward",
                format!(
                    "cell ({}, {}), x has {}, h has {}",
                    self.input_size,
                    self.hidden_size,
                    x.len(),
                    h_prev.len()
                ),
            ));
        }
        let gate = |w: ParamId, u: ParamId, b: ParamId, h: &[S]| -> Result<Vec<S>, KernelError> {
            let mut a = store.value(b).as_slice().to_vec();
            store.value(w).matvec_acc(x, &mut a)?;
            store.value(u).matvec_acc(h, &mut a)?;
            Ok(a)
        };
        let z: Vec<S> = gate(self.w_z, self.u_z, self.b_z, h_prev)?
            .into_iter()
            .map(sigmoid)
            .collect();
        let r: Vec<S> = gate(self.w_r, self.u_r, self.b_r, h_prev)?
            .into_iter()
            .map(sigmoid)
            .collect();
        let rh: Vec<S> = r.iter().zip(h_prev).map(|(a, b)| *a * *b).collect();
        let h_cand: Vec<S> = gate(self.w_h, self.u_h, self.b_h, &rh)?
            .into_iter()
            .map(|a| a.tanh())
            .collect();
        let h_new = (0..self.hidden_size)
            .map(|i| (S::one() - z[i]) * h_prev[i] + z[i] * h_cand[i])
            .collect();
        Ok((
            h_new,
            GruCache {
                cell_tag: self.w_z.0,
                x: x.to_vec(),
                h_prev: h_prev.to_vec(),
                z,
                r,
                h_cand,
                rh,
            },
        ))
    }

    /// Reverse pass for one step. Parameter gradients are accumulated into
    /// `store`; returns `(dx, dh_prev)`.
    pub fn backward<S: Scalar>(
        &self,
        store: &mut ParamStore<S>,
        cache: &GruCache<S>,
        dh_new: &[S],
    ) -> Result<(Vec<S>, Vec<S>), KernelError> {
        if cache.cell_tag != self.w_z.0
            || cache.x.len() != self.input_size
            || cache.h_prev.len() != self.hidden_size
        {
            return Err(KernelError::StaleCache("gru_backward"));
        }
        if dh_new.len() != self.hidden_size {
            return Err(KernelError::shape("gru_backward", "cotangent length"));
        }
        let n = self.hidden_size;
        let one = S::one();
        let mut dx = vec![S::zero(); self.input_size];
        let mut dh_prev: Vec<S> = (0..n).map(|i| dh_new[i] * (one - cache.z[i])).collect();

        // candidate branch
        let da_h: Vec<S> = (0..n)
            .map(|i| {
                let t = cache.h_cand[i];
                dh_new[i] * cache.z[i] * (one - t * t)
            })
            .collect();
        let mut drh = vec![S::zero(); n];
        self.accumulate_gate(store, self.w_h, self.u_h, self.b_h, &da_h, &cache.x, &cache.rh, &mut dx, &mut drh)?;
        let da_r: Vec<S> = (0..n)
            .map(|i| {
                dh_prev[i] += drh[i] * cache.r[i];
                let r = cache.r[i];
                drh[i] * cache.h_prev[i] * r * (one - r)
            })
            .collect();
        self.accumulate_gate(store, self.w_r, self.u_r, self.b_r, &da_r, &cache.x, &cache.h_prev, &mut dx, &mut dh_prev)?;

        let da_z: Vec<S> = (0..n)
            .map(|i| {
                let z = cache.z[i];
                dh_new[i] * (cache.h_cand[i] - cache.h_prev[i]) * z * (one - z)
            })
            .collect();
        self.accumulate_gate(store, self.w_z, self.u_z, self.b_z, &da_z, &cache.x, &cache.h_prev, &mut dx, &mut dh_prev)?;

        Ok((dx, dh_prev))
    }

    #[allow(clippy::too_many_arguments)]
    fn accumulate_gate<S: Scalar>(
        &self,
        store: &mut ParamStore<S>,
        w: ParamId,
        u: ParamId,
        b: ParamId,
        da: &[S],
        x: &[S],
        h: &[S],
        dx: &mut [S],
        dh: &mut [S],
    ) -> Result<(), KernelError> {
        {
            let (wv, wg) = store.value_and_grad_mut(w);
            wg.add_outer(da, x)?;
            wv.matvec_t_acc(da, dx)?;
        }
        {
            let (uv, ug) = store.value_and_grad_mut(u);
            ug.add_outer(da, h)?;
            uv.matvec_t_acc(da, dh)?;
        }
        let bg = store.grad_mut(b).as_mut_slice();
        for (g, d) in bg.iter_mut().zip(da) {
            *g += *d;
        }
        Ok(())
    }
}
