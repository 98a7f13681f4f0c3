//! Loss kernels returning the value and the gradient with respect to the logits.

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;

pub(crate) fn cross_entropy<T: Scalar>(
    logits: &[T],
    classes: usize,
    targets: &[usize],
    smoothing: f64,
    weights: Option<&[T]>,
) -> Result<(T, Vec<T>)> {
    if !(0.0..1.0).contains(&smoothing) {
        return Err(TensorError::invalid(
            "cross_entropy",
            format!("label smoothing {smoothing}"),
        ));
    }
    if let Some(w) = weights {
        if w.len() != classes {
            return Err(TensorError::shape("cross_entropy", &[classes], &[w.len()]));
        }
    }
    if let Some(&bad) = targets.iter().find(|&&y| y >= classes) {
        return Err(TensorError::invalid(
            "cross_entropy",
            format!("target {bad} >= {classes} classes"),
        ));
    }
    let w = |c: usize| weights.map_or(T::one(), |w| w[c]);
    let eps = T::from_f64_lossy(smoothing);
    let keep = T::one() - eps;
    let per_class = eps / T::from_usize(classes).unwrap();
    let weight_total: T = (0..classes).map(w).sum();
    let norm: T = targets.iter().map(|&y| w(y)).sum();
    if norm <= T::zero() {
        return Err(TensorError::invalid(
            "cross_entropy",
            "total target weight is zero",
        ));
    }
    let mut loss = T::zero();
    let mut grad = vec![T::zero(); logits.len()];
    for (n, &y) in targets.iter().enumerate() {
        let row = &logits[n * classes..(n + 1) * classes];
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = row.iter().map(|&x| (x - max).exp()).sum::<T>().ln() + max;
        let mut smooth_term = T::zero();
        for (c, &x) in row.iter().enumerate() {
            smooth_term += w(c) * (lse - x);
        }
        loss += keep * w(y) * (lse - row[y]) + per_class * smooth_term;
        for (c, &x) in row.iter().enumerate() {
            let p = (x - lse).exp();
            let hard = if c == y { p - T::one() } else { p };
            grad[n * classes + c] = keep * w(y) * hard + per_class * (weight_total * p - w(c));
        }
    }
    grad.iter_mut().for_each(|g| *g /= norm);
    Ok((loss / norm, grad))
}

pub(crate) fn bce_with_logits<T: Scalar>(
    logits: &[T],
    targets: &[T],
    weights: &[T],
) -> (T, Vec<T>) {
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(logits.len());
    for ((&x, &y), &w) in logits.iter().zip(targets).zip(weights) {
        // max(x, 0) - x y + log(1 + exp(-|x|))
        loss += w * (x.max(T::zero()) - x * y + (-x.abs()).exp().ln_1p());
        let sig = T::one() / (T::one() + (-x).exp());
        grad.push(w * (sig - y));
    }
    (loss, grad)
}
