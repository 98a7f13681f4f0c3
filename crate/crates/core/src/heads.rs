//! Training objectives for the two prediction heads.

use pathe_tensor::{Scalar, Tape, Var};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    CrossEntropy,
    BinaryCrossEntropy,
}

/// Cross entropy of relation scores `[z, |R|]` against the true relations.
pub fn rp_loss<T: Scalar>(
    tape: &mut Tape<T>,
    logits: Var,
    relations: &[usize],
    label_smoothing: f64,
) -> Result<Var> {
    Ok(tape.cross_entropy(logits, relations, label_smoothing, None)?)
}

/// Link-prediction loss over `logits` laid out per positive as
/// `[positive, 2n negatives]` (length `z (2n + 1)`).
///
/// BCE: `bce(pos, 1) + sum(bce(neg, 0)) / 2n`, averaged over positives.
/// CE: a `(2n + 1)`-way softmax with the positive as target.
pub fn lp_loss<T: Scalar>(
    tape: &mut Tape<T>,
    logits: Var,
    n: usize,
    kind: LossKind,
    label_smoothing: f64,
) -> Result<Var> {
    let group = 2 * n + 1;
    let total = tape.value(logits).len();
    let z = total / group;
    match kind {
        LossKind::CrossEntropy => {
            let grid = tape.reshape(logits, &[z, group])?;
            Ok(tape.cross_entropy(grid, &vec![0; z], label_smoothing, None)?)
        }
        LossKind::BinaryCrossEntropy => {
            let (mut targets, mut weights) = (Vec::with_capacity(total), Vec::with_capacity(total));
            let pos_w = T::one() / T::from_usize(z).unwrap();
            let neg_w = pos_w / T::from_usize(2 * n).unwrap();
            for i in 0..total {
                let positive = i % group == 0;
                targets.push(if positive { T::one() } else { T::zero() });
                weights.push(if positive { pos_w } else { neg_w });
            }
            Ok(tape.bce_with_logits(logits, &targets, &weights)?)
        }
    }
}
