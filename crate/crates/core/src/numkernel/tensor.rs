use crate::scalar::Scalar;

use super::KernelError;

/// Dense row-major matrix. Vectors are plain slices / `Vec<S>`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> Matrix<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = S::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Result<Self, KernelError> {
        if data.len() != rows * cols {
            return Err(KernelError::shape(
                "Matrix::from_vec",
                format!("{} entries for {rows}x{cols}", data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[S]]) -> Result<Self, KernelError> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(KernelError::shape("Matrix::from_rows", "ragged rows"));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [S] {
        &mut self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[S] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [S] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> S {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: S) {
        self.data[i * self.cols + j] = v;
    }

    pub fn fill(&mut self, v: S) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// `y = W x`.
    pub fn matvec(&self, x: &[S]) -> Result<Vec<S>, KernelError> {
        let mut y = vec![S::zero(); self.rows];
        self.matvec_acc(x, &mut y)?;
        Ok(y)
    }

    /// `y += W x`.
    pub fn matvec_acc(&self, x: &[S], y: &mut [S]) -> Result<(), KernelError> {
        if x.len() != self.cols || y.len() != self.rows {
            return Err(KernelError::shape(
                "matvec",
                format!(
                    "W is {}x{}, x has {}, y has {}",
                    self.rows,
                    self.cols,
                    x.len(),
                    y.len()
                ),
            ));
        }
        for (yi, row) in y.iter_mut().zip(self.data.chunks_exact(self.cols.max(1))) {
            *yi += dot(row, x);
        }
        Ok(())
    }

    /// `out += Wᵀ g`.
    pub fn matvec_t_acc(&self, g: &[S], out: &mut [S]) -> Result<(), KernelError> {
        if g.len() != self.rows || out.len() != self.cols {
            return Err(KernelError::shape(
                "matvec_t",
                format!(
                    "W is {}x{}, g has {}, out has {}",
                    self.rows,
                    self.cols,
                    g.len(),
                    out.len()
                ),
            ));
        }
        for (gi, row) in g.iter().zip(self.data.chunks_exact(self.cols.max(1))) {
            axpy(*gi, row, out);
        }
        Ok(())
    }

    /// `W += g xᵀ`.
    pub fn add_outer(&mut self, g: &[S], x: &[S]) -> Result<(), KernelError> {
        if g.len() != self.rows || x.len() != self.cols {
            return Err(KernelError::shape(
                "add_outer",
                format!(
                    "W is {}x{}, g has {}, x has {}",
                    self.rows,
                    self.cols,
                    g.len(),
                    x.len()
                ),
            ));
        }
        let cols = self.cols.max(1);
        for (gi, row) in g.iter().zip(self.data.chunks_exact_mut(cols)) {
            if !gi.is_zero() {
                axpy(*gi, x, row);
            }
        }
        Ok(())
    }

    /// Converts every entry into another scalar type.
    pub fn cast<T: Scalar>(&self) -> Matrix<T> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| T::lit(v.as_f64())).collect(),
        }
    }
}

#[inline]
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).fold(S::zero(), |acc, (x, y)| acc + *x * *y)
}

/// `y += alpha * x`.
#[inline]
pub fn axpy<S: Scalar>(alpha: S, x: &[S], y: &mut [S]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}

/// Inputs retained by [`affine`] for the backward pass.
#[derive(Debug, Clone)]
pub struct AffineCache<S> {
    pub input: Vec<S>,
}

/// `W x + b`, returning the output and the cached input.
pub fn affine<S: Scalar>(
    w: &Matrix<S>,
    x: &[S],
    b: &[S],
) -> Result<(Vec<S>, AffineCache<S>), KernelError> {
    if b.len() != w.rows() {
        return Err(KernelError::shape(
            "affine",
            format!("bias has {}, W has {} rows", b.len(), w.rows()),
        ));
    }
    let mut y = b.to_vec();
    w.matvec_acc(x, &mut y)?;
    Ok((y, AffineCache { input: x.to_vec() }))
}

/// Backward of [`affine`]: accumulates `dW += dy xᵀ`, `db += dy` and returns `dx = Wᵀ dy`.
pub fn affine_backward<S: Scalar>(
    w: &Matrix<S>,
    cache: &AffineCache<S>,
    dy: &[S],
    dw: &mut Matrix<S>,
    db: &mut [S],
) -> Result<Vec<S>, KernelError> {
    if cache.input.len() != w.cols() || dw.shape() != w.shape() || db.len() != w.rows() {
        return Err(KernelError::StaleCache("affine"));
    }
    dw.add_outer(dy, &cache.input)?;
    axpy(S::one(), dy, db);
    let mut dx = vec![S::zero(); w.cols()];
    w.matvec_t_acc(dy, &mut dx)?;
    Ok(dx)
}
