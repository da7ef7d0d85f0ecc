use crate::scalar::Scalar;

#[inline]
pub fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

#[inline]
pub fn tanh<S: Scalar>(x: S) -> S {
    x.tanh()
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus<S: Scalar>(x: S) -> S {
    if x > S::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax<S: Scalar>(v: &[S]) -> Vec<S> {
    let max = v.iter().copied().fold(S::neg_infinity(), S::max);
    let mut out: Vec<S> = v.iter().map(|x| (*x - max).exp()).collect();
    let sum = out.iter().copied().fold(S::zero(), |a, b| a + b);
    out.iter_mut().for_each(|p| *p /= sum);
    out
}

/// Log-softmax computed with the log-sum-exp trick.
pub fn log_softmax<S: Scalar>(v: &[S]) -> Vec<S> {
    let max = v.iter().copied().fold(S::neg_infinity(), S::max);
    let lse = v
        .iter()
        .map(|x| (*x - max).exp())
        .fold(S::zero(), |a, b| a + b)
        .ln()
        + max;
    v.iter().map(|x| *x - lse).collect()
}
