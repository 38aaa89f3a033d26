//! Training losses for the three reconstruction stages.
//!
//! All image tensors are planar `[C, H, W]`. Inverse shading is `[1, H, W]`,
//! albedo and HDR images are `[3, H, W]`.

use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::intrinsic::DIV_EPS;

pub const DEFAULT_GAMMA: f64 = 0.1;
pub const DEFAULT_SCALES: usize = 4;

/// Weighting of the multi-scale gradient terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub gamma: f64,
    /// Pyramid levels used by [`msg`].
    pub scales: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            gamma: DEFAULT_GAMMA,
            scales: DEFAULT_SCALES,
        }
    }
}

impl LossWeights {
    pub fn new(gamma: f64, scales: usize) -> Result<Self> {
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!("gamma must be >= 0, got {gamma}")));
        }
        if scales == 0 {
            return Err(Error::InvalidParameter("msg needs at least one scale".into()));
        }
        Ok(Self { gamma, scales })
    }

    /// Default weights with the scale count capped so every level is at
    /// least 1 pixel for an `h x w` image.
    pub fn for_dims(h: usize, w: usize) -> Self {
        let levels = (usize::BITS - h.min(w).max(1).leading_zeros()) as usize;
        Self {
            gamma: DEFAULT_GAMMA,
            scales: DEFAULT_SCALES.min(levels),
        }
    }
}

fn same_shape(tape: &Tape, a: Var, b: Var, what: &str) -> Result<()> {
    if tape.shape(a) == tape.shape(b) {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(format!(
            "{what}: {:?} vs {:?}",
            tape.shape(a),
            tape.shape(b)
        )))
    }
}

/// Mean of `(pred - target)^2` over all elements.
pub fn mse(tape: &mut Tape, pred: Var, target: Var) -> Result<Var> {
    same_shape(tape, pred, target, "mse")?;
    let d = tape.sub(pred, target)?;
    let sq = tape.mul(d, d)?;
    Ok(tape.mean(sq))
}

/// Multi-scale gradient loss: summed absolute differences of forward-difference
/// gradients over `scales` 2x-average-pooled levels, divided by the total
/// number of gradient elements visited.
pub fn msg(tape: &mut Tape, pred: Var, target: Var, scales: usize) -> Result<Var> {
    same_shape(tape, pred, target, "msg")?;
    let shape = tape.shape(pred).to_vec();
    let [_, h, w] = shape[..] else {
        return Err(Error::ShapeMismatch(format!("msg expects [C, H, W], got {shape:?}")));
    };
    if scales == 0 {
        return Err(Error::InvalidParameter("msg needs at least one scale".into()));
    }
    let need = 1usize << (scales - 1);
    if h < need || w < need {
        return Err(Error::ImageTooSmall(format!(
            "{h}x{w} is too small for {scales} msg scales (need {need})"
        )));
    }
    let (mut p, mut t) = (pred, target);
    let mut total: Option<Var> = None;
    let mut count = 0usize;
    for m in 0..scales {
        if m > 0 {
            p = tape.avg_pool2(p)?;
            t = tape.avg_pool2(t)?;
        }
        for diff in [Tape::diff_x, Tape::diff_y] {
            let gp = diff(tape, p)?;
            let gt = diff(tape, t)?;
            let d = tape.sub(gp, gt)?;
            let a = tape.abs(d);
            count += tape.value(a).len();
            let s = tape.sum(a);
            total = Some(match total {
                Some(acc) => tape.add(acc, s)?,
                None => s,
            });
        }
    }
    let total = total.expect("at least one scale");
    tape.scale(total, 1.0 / count as f64)
}

/// `mse + gamma * msg`.
pub fn mse_msg(tape: &mut Tape, pred: Var, target: Var, w: &LossWeights) -> Result<Var> {
    let l = mse(tape, pred, target)?;
    if w.gamma == 0.0 {
        return Ok(l);
    }
    let g = msg(tape, pred, target, w.scales)?;
    let g = tape.scale(g, w.gamma)?;
    tape.add(l, g)
}

/// Implied albedo `I / max((1 - D) / D, eps)` recorded on the tape.
pub fn implied_albedo(tape: &mut Tape, image: Var, inv_shading: Var) -> Result<Var> {
    let one_minus = tape.rsub_scalar(1.0, inv_shading)?;
    let s = tape.div(one_minus, inv_shading)?;
    let s = tape.clamp_min(s, DIV_EPS);
    tape.div(image, s)
}

/// Implied inverse shading: channel mean of `A / (I + A + eps)`.
pub fn implied_inverse_shading(tape: &mut Tape, albedo: Var, image: Var) -> Result<Var> {
    let denom = tape.add(image, albedo)?;
    let denom = tape.add_scalar(denom, DIV_EPS)?;
    let ratio = tape.div(albedo, denom)?;
    tape.channel_mean(ratio)
}

/// Shading-stage loss: inverse-shading terms plus implied-albedo terms.
pub fn loss_shading(
    tape: &mut Tape,
    d_pred: Var,
    d_gt: Var,
    image_gt: Var,
    albedo_gt: Var,
    w: &LossWeights,
) -> Result<Var> {
    same_shape(tape, image_gt, albedo_gt, "loss_shading image/albedo")?;
    let direct = mse_msg(tape, d_pred, d_gt, w)?;
    let implied = implied_albedo(tape, image_gt, d_pred)?;
    same_shape(tape, implied, albedo_gt, "loss_shading implied albedo")?;
    let through = mse_msg(tape, implied, albedo_gt, w)?;
    tape.add(direct, through)
}

/// Albedo-stage loss: albedo terms plus implied-inverse-shading terms.
pub fn loss_albedo(
    tape: &mut Tape,
    a_pred: Var,
    a_gt: Var,
    image_gt: Var,
    d_gt: Var,
    w: &LossWeights,
) -> Result<Var> {
    same_shape(tape, a_pred, image_gt, "loss_albedo albedo/image")?;
    let direct = mse_msg(tape, a_pred, a_gt, w)?;
    let implied = implied_inverse_shading(tape, a_pred, image_gt)?;
    let through = mse_msg(tape, implied, d_gt, w)?;
    tape.add(direct, through)
}

/// Refinement-stage loss on inverse HDR images.
pub fn loss_refine(tape: &mut Tape, j_pred: Var, j_gt: Var, w: &LossWeights) -> Result<Var> {
    mse_msg(tape, j_pred, j_gt, w)
}
