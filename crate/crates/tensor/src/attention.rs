//! Fused scaled dot-product attention kernels.
//!
//! Inputs are `[batch, len, width]` row-major; head `h` owns columns
//! `h * dh .. (h + 1) * dh`. Each (batch, head) pair is an independent
//! strided gemm problem, so results for one sequence never depend on the
//! rest of the batch.

use crate::scalar::{gemm, MatView, Scalar};

/// Score added to ignored keys before the softmax.
pub const MASK_PENALTY: f64 = -1e9;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Dims {
    pub batch: usize,
    pub len: usize,
    pub width: usize,
    pub heads: usize,
}

impl Dims {
    fn head_width(&self) -> usize {
        self.width / self.heads
    }

    fn view(&self, b: usize, h: usize) -> MatView {
        MatView::with_stride(
            b * self.len * self.width + h * self.head_width(),
            self.len,
            self.head_width(),
            self.width,
        )
    }
}

/// Returns the attended values and the attention probabilities
/// (`[batch, heads, len, len]`) needed for the backward pass.
pub(crate) fn forward<T: Scalar>(
    dims: Dims,
    q: &[T],
    k: &[T],
    v: &[T],
    key_mask: Option<&[bool]>,
) -> (Vec<T>, Vec<T>) {
    let l = dims.len;
    let scale = T::one() / T::from_usize(dims.head_width()).unwrap().sqrt();
    let penalty = T::from_f64_lossy(MASK_PENALTY);
    let mut out = vec![T::zero(); q.len()];
    let mut probs = vec![T::zero(); dims.batch * dims.heads * l * l];
    for b in 0..dims.batch {
        for h in 0..dims.heads {
            let pv = MatView::row_major((b * dims.heads + h) * l * l, l, l);
            let hv = dims.view(b, h);
            gemm(scale, q, hv, k, hv.t(), T::zero(), &mut probs, pv);
            let block = &mut probs[pv.offset..pv.offset + l * l];
            for row in block.chunks_mut(l) {
                if let Some(mask) = key_mask {
                    for (s, &keep) in row.iter_mut().zip(&mask[b * l..(b + 1) * l]) {
                        if !keep {
                            *s += penalty;
                        }
                    }
                }
                let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for s in row.iter_mut() {
                    *s = (*s - max).exp();
                    total += *s;
                }
                for s in row.iter_mut() {
                    *s /= total;
                }
            }
            gemm(T::one(), &probs, pv, v, hv, T::zero(), &mut out, hv);
        }
    }
    (out, probs)
}

/// Gradients with respect to `q`, `k`, `v` given the output gradient.
pub(crate) fn backward<T: Scalar>(
    dims: Dims,
    q: &[T],
    k: &[T],
    v: &[T],
    probs: &[T],
    dout: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let l = dims.len;
    let scale = T::one() / T::from_usize(dims.head_width()).unwrap().sqrt();
    let mut dq = vec![T::zero(); q.len()];
    let mut dk = vec![T::zero(); k.len()];
    let mut dv = vec![T::zero(); v.len()];
    let mut dscore = vec![T::zero(); l * l];
    let sv = MatView::row_major(0, l, l);
    for b in 0..dims.batch {
        for h in 0..dims.heads {
            let pv = MatView::row_major((b * dims.heads + h) * l * l, l, l);
            let hv = dims.view(b, h);
            // dP = dO V^T ; dV = P^T dO
            gemm(T::one(), dout, hv, v, hv.t(), T::zero(), &mut dscore, sv);
            gemm(T::one(), probs, pv.t(), dout, hv, T::zero(), &mut dv, hv);
            let p = &probs[pv.offset..pv.offset + l * l];
            for (ds_row, p_row) in dscore.chunks_mut(l).zip(p.chunks(l)) {
                let dot: T = ds_row.iter().zip(p_row).map(|(&a, &b)| a * b).sum();
                for (ds, &pr) in ds_row.iter_mut().zip(p_row) {
                    *ds = pr * (*ds - dot);
                }
            }
            // dQ = scale dS K ; dK = scale dS^T Q
            gemm(scale, &dscore, sv, k, hv, T::zero(), &mut dq, hv);
            gemm(scale, &dscore, sv.t(), q, hv, T::zero(), &mut dk, hv);
        }
    }
    (dq, dk, dv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_key_returns_its_value() {
        let dims = Dims {
            batch: 1,
            len: 1,
            width: 4,
            heads: 2,
        };
        let (q, k, v) = (
            [0.3, -1.0, 2.0, 0.5],
            [1.0, 2.0, 3.0, 4.0],
            [9.0, 8.0, 7.0, 6.0],
        );
        let (out, probs) = forward::<f64>(dims, &q, &k, &v, None);
        assert_eq!(out, v.to_vec());
        assert_eq!(probs, vec![1.0, 1.0]);
    }

    #[test]
    fn equal_scores_average_unmasked_values() {
        // zero queries give uniform weights over attended keys
        let dims = Dims {
            batch: 1,
            len: 3,
            width: 2,
            heads: 1,
        };
        let q = [0.0; 6];
        let k = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let v = [1.0, 10.0, 3.0, 20.0, 100.0, 100.0];
        let (out, _) = forward::<f64>(dims, &q, &k, &v, Some(&[true, true, false]));
        for row in out.chunks(2) {
            assert!((row[0] - 2.0).abs() < 1e-12 && (row[1] - 15.0).abs() < 1e-12);
        }
    }
}
