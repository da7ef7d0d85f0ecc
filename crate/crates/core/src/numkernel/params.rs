use std::collections::BTreeMap;

use rand::Rng;

use crate::scalar::Scalar;

use super::{KernelError, Matrix};

/// Handle into a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// A named tensor paired with its gradient buffer.
#[derive(Debug, Clone)]
pub struct Param<S> {
    name: String,
    value: Matrix<S>,
    grad: Matrix<S>,
    /// Rows held at exactly zero (embedding padding slots).
    pinned_rows: Vec<usize>,
}

impl<S: Scalar> Param<S> {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Matrix<S> {
        &self.value
    }

    pub fn grad(&self) -> &Matrix<S> {
        &self.grad
    }

    pub fn pinned_rows(&self) -> &[usize] {
        &self.pinned_rows
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut Matrix<S>, &Matrix<S>, &[usize]) {
        (&mut self.value, &self.grad, &self.pinned_rows)
    }

    pub fn is_pinned(&self, flat: usize) -> bool {
        let cols = self.value.cols().max(1);
        self.pinned_rows.contains(&(flat / cols))
    }
}

/// Ordered collection of named parameters.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<S> {
    params: Vec<Param<S>>,
    by_name: BTreeMap<String, usize>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            by_name: BTreeMap::new(),
        }
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        value: Matrix<S>,
        pinned_rows: Vec<usize>,
    ) -> Result<ParamId, KernelError> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(KernelError::DuplicateParam(name));
        }
        if let Some(r) = pinned_rows.iter().find(|r| **r >= value.rows()) {
            return Err(KernelError::shape(
                "ParamStore::add",
                format!("pinned row {r} outside {} rows of {name}", value.rows()),
            ));
        }
        let (rows, cols) = value.shape();
        let id = self.params.len();
        self.by_name.insert(name.clone(), id);
        let mut p = Param {
            name,
            value,
            grad: Matrix::zeros(rows, cols),
            pinned_rows,
        };
        for &r in &p.pinned_rows {
            p.value.row_mut(r).fill(S::zero());
        }
        self.params.push(p);
        Ok(ParamId(id))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar entries across all parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<S>> {
        self.params.iter()
    }

    pub fn param(&self, id: ParamId) -> &Param<S> {
        &self.params[id.0]
    }

    #[inline]
    pub fn value(&self, id: ParamId) -> &Matrix<S> {
        &self.params[id.0].value
    }

    #[inline]
    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix<S> {
        &mut self.params[id.0].value
    }

    #[inline]
    pub fn grad(&self, id: ParamId) -> &Matrix<S> {
        &self.params[id.0].grad
    }

    #[inline]
    pub fn grad_mut(&mut self, id: ParamId) -> &mut Matrix<S> {
        &mut self.params[id.0].grad
    }

    /// Simultaneous access to a parameter's value and its gradient.
    #[inline]
    pub fn value_and_grad_mut(&mut self, id: ParamId) -> (&Matrix<S>, &mut Matrix<S>) {
        let p = &mut self.params[id.0];
        (&p.value, &mut p.grad)
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Param<S>] {
        &mut self.params
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(S::zero());
        }
    }

    /// Zeroes gradient rows of pinned slots so they never leak into updates.
    pub fn clear_pinned_grads(&mut self) {
        for p in &mut self.params {
            for &r in &p.pinned_rows {
                p.grad.row_mut(r).fill(S::zero());
            }
        }
    }

    /// Uniform initialisation in `[-scale, scale]`, pinned rows stay zero.
    pub fn init_uniform<R: Rng + ?Sized>(&mut self, rng: &mut R, scale: f64) {
        for p in &mut self.params {
            for v in p.value.as_mut_slice() {
                *v = S::lit(rng.gen_range(-scale..=scale));
            }
            for &r in &p.pinned_rows {
                p.value.row_mut(r).fill(S::zero());
            }
        }
    }

    pub fn fill_values(&mut self, v: S) {
        for p in &mut self.params {
            p.value.fill(v);
            for &r in &p.pinned_rows {
                p.value.row_mut(r).fill(S::zero());
            }
        }
    }

    /// Copies values from another store with identical layout.
    pub fn copy_values_from(&mut self, other: &ParamStore<S>) -> Result<(), KernelError> {
        if other.params.len() != self.params.len() {
            return Err(KernelError::shape("copy_values_from", "parameter count"));
        }
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            if dst.name != src.name || dst.value.shape() != src.value.shape() {
                return Err(KernelError::shape(
                    "copy_values_from",
                    format!("{} vs {}", dst.name, src.name),
                ));
            }
            dst.value
                .as_mut_slice()
                .copy_from_slice(src.value.as_slice());
        }
        Ok(())
    }

    /// Replaces the value of a named parameter (checkpoint loading).
    pub fn set_value(&mut self, name: &str, value: Matrix<S>) -> Result<(), KernelError> {
        let id = self
            .id(name)
            .ok_or_else(|| KernelError::UnknownParam(name.to_string()))?;
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(KernelError::shape(
                "set_value",
                format!(
                    "{name}: stored {:?}, given {:?}",
                    p.value.shape(),
                    value.shape()
                ),
            ));
        }
        p.value = value;
        for &r in &p.pinned_rows {
            p.value.row_mut(r).fill(S::zero());
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.all_finite())
    }

    /// Sum of squared gradient entries, for logging.
    pub fn grad_norm_sq(&self) -> S {
        self.params
            .iter()
            .flat_map(|p| p.grad.as_slice())
            .fold(S::zero(), |a, g| a + *g * *g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_leaves_values() {
        let mut store = ParamStore::<f64>::new();
        let id = store
            .add("w", Matrix::from_vec(1, 2, vec![1.0, 2.0]).unwrap(), vec![])
            .unwrap();
        store.grad_mut(id).fill(3.0);
        store.zero_grad();
        assert_eq!(store.value(id).as_slice(), &[1.0, 2.0]);
        assert_eq!(store.grad(id).as_slice(), &[0.0, 0.0]);
        assert_eq!(store.grad(id).shape(), store.value(id).shape());
    }

    #[test]
    fn pinned_rows_start_and_stay_zero_under_init() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("emb", Matrix::zeros(3, 2), vec![0]).unwrap();
        let mut rng = rand::thread_rng();
        store.init_uniform(&mut rng, 0.1);
        assert_eq!(store.value(id).row(0), &[0.0, 0.0]);
        assert!(store.value(id).row(1).iter().any(|v| *v != 0.0));
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut store = ParamStore::<f64>::new();
        store.add("w", Matrix::zeros(1, 1), vec![]).unwrap();
        assert!(store.add("w", Matrix::zeros(1, 1), vec![]).is_err());
    }
}
