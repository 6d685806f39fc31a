//! Training losses: proposal-head loss and the total multi-task objective.

use crate::error::Result;
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Per-component loss values for one training step. `l_rpn_reg` carries its
/// balance weight, so `l_total` is the plain sum of the four components.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub l_rpn_cls: f64,
    pub l_rpn_reg: f64,
    pub l_tamper: f64,
    pub l_bbox: f64,
    pub l_total: f64,
    pub lambda: f64,
}

impl LossBreakdown {
    fn assemble(l_rpn_cls: f64, l_rpn_reg: f64, l_tamper: f64, l_bbox: f64, lambda: f64) -> Self {
        LossBreakdown {
            l_rpn_cls,
            l_rpn_reg,
            l_tamper,
            l_bbox,
            l_total: l_rpn_cls + l_rpn_reg + l_tamper + l_bbox,
            lambda,
        }
    }
}

/// Scalar loss nodes mirrored by a [`LossBreakdown`] of their values.
pub struct LossNodes {
    pub l_rpn_cls: Var,
    pub l_rpn_reg: Var,
    pub l_tamper: Var,
    pub l_bbox: Var,
    pub total: Var,
    pub breakdown: LossBreakdown,
}

/// Proposal-head loss: mean cross entropy over the sampled anchors plus the
/// balance-weighted smooth-L1 regression over positive anchors, normalized
/// by the total anchor count.
///
/// `cls_rows` is the `n×2` gathered logit matrix with `labels` 0/1;
/// `regression` pairs the gathered positive-anchor deltas with their constant
/// targets, absent when the image has no positive anchors.
pub fn rpn_loss<T: Scalar>(
    tape: &mut Tape<T>,
    cls_rows: Var,
    labels: &[usize],
    regression: Option<(Var, Var)>,
    lambda: f64,
    n_reg: usize,
) -> Result<(Var, Var, Var)> {
    let l_cls = tape.softmax_cross_entropy(cls_rows, labels)?;
    let l_reg = match regression {
        Some((pred, target)) => {
            let raw = tape.smooth_l1(pred, target)?;
            tape.scale(raw, T::from_f64(lambda / n_reg as f64))
        }
        None => tape.leaf(Tensor::scalar(T::zero())),
    };
    let combined = tape.add(l_cls, l_reg)?;
    Ok((l_cls, l_reg, combined))
}

/// Total objective: proposal loss components plus the fused-feature
/// classification loss and the foreground box-regression loss.
pub fn total_loss<T: Scalar>(
    tape: &mut Tape<T>,
    l_rpn_cls: Var,
    l_rpn_reg: Var,
    l_tamper: Var,
    l_bbox: Option<Var>,
    lambda: f64,
) -> Result<LossNodes> {
    let l_bbox = l_bbox.unwrap_or_else(|| tape.leaf(Tensor::scalar(T::zero())));
    let rpn = tape.add(l_rpn_cls, l_rpn_reg)?;
    let with_tamper = tape.add(rpn, l_tamper)?;
    let total = tape.add(with_tamper, l_bbox)?;
    let breakdown = LossBreakdown::assemble(
        tape.value(l_rpn_cls).item().to_f64(),
        tape.value(l_rpn_reg).item().to_f64(),
        tape.value(l_tamper).item().to_f64(),
        tape.value(l_bbox).item().to_f64(),
        lambda,
    );
    Ok(LossNodes {
        l_rpn_cls,
        l_rpn_reg,
        l_tamper,
        l_bbox,
        total,
        breakdown,
    })
}
