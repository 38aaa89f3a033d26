//! Central finite-difference verification of reverse-mode gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::losses::{self, LossWeights};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Step used by [`run_suite`].
pub const DEFAULT_STEP: f64 = 1e-5;
/// Largest accepted relative error.
pub const TOLERANCE: f64 = 1e-5;
/// Floor of the relative-error denominator. Coordinates whose true gradient
/// is zero see only finite-difference roundoff (about `eps |f| / h`), which
/// this keeps well under [`TOLERANCE`].
pub const DENOM_FLOOR: f64 = 1e-4;

fn eval<F>(f: &F, x: &[f64], shape: &[usize]) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let v = tape.var(shape, x.to_vec())?;
    let out = f(&mut tape, v)?;
    let y = tape.item(out);
    if y.is_finite() {
        Ok(y)
    } else {
        Err(Error::NonFinite(format!("gradient check evaluated to {y}")))
    }
}

/// Largest relative error between the reverse-mode gradient of `f` at `x`
/// and its central finite-difference estimate with step `h`.
///
/// Relative error per coordinate is `|fd - ad| / max(|fd|, |ad|, DENOM_FLOOR)`.
pub fn grad_check<F>(f: F, x: &[f64], shape: &[usize], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidParameter(format!("step must be positive, got {h}")));
    }
    let mut tape = Tape::new();
    let v = tape.var(shape, x.to_vec())?;
    let out = f(&mut tape, v)?;
    if tape.value(out).len() != 1 {
        return Err(Error::ShapeMismatch("gradient check needs a scalar function".into()));
    }
    if !tape.item(out).is_finite() {
        return Err(Error::NonFinite(format!("gradient check evaluated to {}", tape.item(out))));
    }
    let ad = tape.backward(out)?.get_or_zeros(v, x.len());

    let mut probe = x.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let fp = eval(&f, &probe, shape)?;
        probe[i] = x[i] - h;
        let fm = eval(&f, &probe, shape)?;
        probe[i] = x[i];
        let fd = (fp - fm) / (2.0 * h);
        let rel = (fd - ad[i]).abs() / fd.abs().max(ad[i].abs()).max(DENOM_FLOOR);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Result of one entry of the gradient suite.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_error: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Values in `[lo, hi)` with a random sign.
fn signed(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v = rng.random_range(lo..hi);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect()
}

/// Reduces a tensor to a scalar through a fixed random weighting so every
/// element receives a distinct upstream gradient.
fn project(tape: &mut Tape, v: Var, weights: &[f64]) -> Result<Var> {
    let shape = tape.shape(v).to_vec();
    let r = tape.constant(&shape, weights.to_vec())?;
    let p = tape.mul(v, r)?;
    Ok(tape.sum(p))
}

/// Checks one losses-only instance per loss on random `4..=8` square-ish
/// images drawn from `seed`.
pub fn loss_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = rng.random_range(4..=8usize);
    let w = rng.random_range(4..=8usize);
    let plane = h * w;
    let wts = LossWeights::for_dims(h, w);
    let s1 = [1, h, w];
    let s3 = [3, h, w];

    let d_gt = uniform(&mut rng, plane, 0.05, 0.95);
    let a_gt = uniform(&mut rng, 3 * plane, 0.05, 0.95);
    let i_gt = uniform(&mut rng, 3 * plane, 0.1, 3.0);
    let j_gt = uniform(&mut rng, 3 * plane, 0.05, 0.95);
    let d_x = uniform(&mut rng, plane, 0.05, 0.95);
    let a_x = uniform(&mut rng, 3 * plane, 0.05, 0.95);
    let j_x = uniform(&mut rng, 3 * plane, 0.05, 0.95);

    let mut out = Vec::new();
    let mut push = |name: &str, err: f64| {
        out.push(CheckResult {
            name: format!("{name} {h}x{w} seed {seed}"),
            max_rel_error: err,
        })
    };

    let e = grad_check(
        |t, x| {
            let g = t.constant(&s3, j_gt.clone())?;
            losses::mse(t, x, g)
        },
        &j_x,
        &s3,
        DEFAULT_STEP,
    )?;
    push("mse", e);

    let e = grad_check(
        |t, x| {
            let g = t.constant(&s3, j_gt.clone())?;
            losses::msg(t, x, g, wts.scales)
        },
        &j_x,
        &s3,
        DEFAULT_STEP,
    )?;
    push("msg", e);

    let e = grad_check(
        |t, x| {
            let dg = t.constant(&s1, d_gt.clone())?;
            let ig = t.constant(&s3, i_gt.clone())?;
            let ag = t.constant(&s3, a_gt.clone())?;
            losses::loss_shading(t, x, dg, ig, ag, &wts)
        },
        &d_x,
        &s1,
        DEFAULT_STEP,
    )?;
    push("loss_shading", e);

    let e = grad_check(
        |t, x| {
            let ag = t.constant(&s3, a_gt.clone())?;
            let ig = t.constant(&s3, i_gt.clone())?;
            let dg = t.constant(&s1, d_gt.clone())?;
            losses::loss_albedo(t, x, ag, ig, dg, &wts)
        },
        &a_x,
        &s3,
        DEFAULT_STEP,
    )?;
    push("loss_albedo", e);

    let e = grad_check(
        |t, x| {
            let g = t.constant(&s3, j_gt.clone())?;
            losses::loss_refine(t, x, g, &wts)
        },
        &j_x,
        &s3,
        DEFAULT_STEP,
    )?;
    push("loss_refine", e);

    Ok(out)
}

/// Checks every tape op on random inputs bounded away from kinks and guards.
pub fn op_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6f70_7375_6974_6521);
    let (c, h, w) = (3usize, 4usize, 6usize);
    let n = c * h * w;
    let s = [c, h, w];
    let s1 = [1, h, w];
    let pos = uniform(&mut rng, n, 0.2, 2.0);
    let other = uniform(&mut rng, n, 0.2, 2.0);
    let away = signed(&mut rng, n, 0.1, 2.0);
    let plane1 = uniform(&mut rng, h * w, 0.2, 2.0);
    let r = signed(&mut rng, n, 0.5, 1.5);
    let r_half = signed(&mut rng, c * (h / 2) * (w / 2), 0.5, 1.5);
    let r_double = signed(&mut rng, 4 * n, 0.5, 1.5);
    let r_plane = signed(&mut rng, h * w, 0.5, 1.5);
    let r_cat = signed(&mut rng, 2 * n, 0.5, 1.5);
    let cout = 2;
    let kernel = signed(&mut rng, cout * c * 9, 0.1, 1.0);
    let bias = signed(&mut rng, cout, 0.1, 1.0);
    let r_conv = signed(&mut rng, cout * h * w, 0.5, 1.5);

    let mut out = Vec::new();
    let mut check = |name: &str, f: &dyn Fn(&mut Tape, Var) -> Result<Var>, x: &[f64], shape: &[usize]| {
        let e = grad_check(f, x, shape, DEFAULT_STEP)?;
        out.push(CheckResult {
            name: format!("op {name} seed {seed}"),
            max_rel_error: e,
        });
        Ok::<(), Error>(())
    };

    let bin = |kind: u8, lhs: bool, bshape: &'static str| {
        let other = other.clone();
        let plane1 = plane1.clone();
        let r = r.clone();
        move |t: &mut Tape, x: Var| -> Result<Var> {
            let o = match bshape {
                "plane" => t.constant(&[1, h, w], plane1.clone())?,
                "scalar" => t.scalar(0.75),
                _ => t.constant(&[c, h, w], other.clone())?,
            };
            let (a, b) = if lhs { (x, o) } else { (o, x) };
            let y = match kind {
                0 => t.add(a, b)?,
                1 => t.sub(a, b)?,
                2 => t.mul(a, b)?,
                _ => t.div(a, b)?,
            };
            project(t, y, &r)
        }
    };
    for (kind, name) in ["add", "sub", "mul", "div"].iter().enumerate() {
        check(&format!("{name} lhs"), &bin(kind as u8, true, "full"), &pos, &s)?;
        check(&format!("{name} rhs"), &bin(kind as u8, false, "full"), &pos, &s)?;
        check(&format!("{name} plane-broadcast"), &bin(kind as u8, true, "plane"), &pos, &s)?;
        check(&format!("{name} scalar-broadcast"), &bin(kind as u8, true, "scalar"), &pos, &s)?;
        // gradient reduces back onto the broadcast operand
        let full = other.clone();
        let rr = r.clone();
        let onto_plane = move |t: &mut Tape, x: Var| -> Result<Var> {
            let o = t.constant(&[c, h, w], full.clone())?;
            let y = match kind {
                0 => t.add(o, x)?,
                1 => t.sub(o, x)?,
                2 => t.mul(o, x)?,
                _ => t.div(o, x)?,
            };
            project(t, y, &rr)
        };
        check(&format!("{name} into plane"), &onto_plane, &plane1, &s1)?;
    }
    let rr = r.clone();
    check("pow", &move |t, x| {
        let y = t.pow(x, 2.5);
        project(t, y, &rr)
    }, &pos, &s)?;
    let rr = r.clone();
    check("pow negative exponent", &move |t, x| {
        let y = t.pow(x, -1.5);
        project(t, y, &rr)
    }, &pos, &s)?;
    let rr = r.clone();
    check("clamp_min", &move |t, x| {
        let y = t.clamp_min(x, 0.0);
        project(t, y, &rr)
    }, &away, &s)?;
    let rr = r.clone();
    check("abs", &move |t, x| {
        let y = t.abs(x);
        project(t, y, &rr)
    }, &away, &s)?;
    let rr = r.clone();
    check("sigmoid", &move |t, x| {
        let y = t.sigmoid(x);
        project(t, y, &rr)
    }, &away, &s)?;
    check("mean", &|t, x| {
        let y = t.pow(x, 2.0);
        Ok(t.mean(y))
    }, &away, &s)?;
    check("sum", &|t, x| {
        let y = t.pow(x, 3.0);
        Ok(t.sum(y))
    }, &pos, &s)?;
    let rp = r_plane.clone();
    check("channel_mean", &move |t, x| {
        let y = t.channel_mean(x)?;
        project(t, y, &rp)
    }, &away, &s)?;
    let rr = r.clone();
    check("diff_x", &move |t, x| {
        let y = t.diff_x(x)?;
        project(t, y, &rr)
    }, &away, &s)?;
    let rr = r.clone();
    check("diff_y", &move |t, x| {
        let y = t.diff_y(x)?;
        project(t, y, &rr)
    }, &away, &s)?;
    let rh = r_half.clone();
    check("avg_pool2", &move |t, x| {
        let y = t.avg_pool2(x)?;
        project(t, y, &rh)
    }, &away, &s)?;
    let rd = r_double.clone();
    check("upsample2", &move |t, x| {
        let y = t.upsample2(x)?;
        project(t, y, &rd)
    }, &away, &s)?;
    let (o2, rc) = (other.clone(), r_cat.clone());
    check("concat", &move |t, x| {
        let o = t.constant(&[c, h, w], o2.clone())?;
        let y = t.concat(&[o, x])?;
        project(t, y, &rc)
    }, &away, &s)?;

    let (k1, b1, rc1) = (kernel.clone(), bias.clone(), r_conv.clone());
    check("conv2d input", &move |t, x| {
        let k = t.constant(&[cout, c, 3, 3], k1.clone())?;
        let b = t.constant(&[cout], b1.clone())?;
        let y = t.conv2d(x, k, Some(b))?;
        project(t, y, &rc1)
    }, &away, &s)?;
    let (a2, b2, rc2) = (away.clone(), bias.clone(), r_conv.clone());
    check("conv2d weight", &move |t, k| {
        let x = t.constant(&[c, h, w], a2.clone())?;
        let b = t.constant(&[cout], b2.clone())?;
        let y = t.conv2d(x, k, Some(b))?;
        project(t, y, &rc2)
    }, &kernel, &[cout, c, 3, 3])?;
    let (a3, k3, rc3) = (away.clone(), kernel.clone(), r_conv.clone());
    check("conv2d bias", &move |t, b| {
        let x = t.constant(&[c, h, w], a3.clone())?;
        let k = t.constant(&[cout, c, 3, 3], k3.clone())?;
        let y = t.conv2d(x, k, Some(b))?;
        project(t, y, &rc3)
    }, &bias, &[cout])?;

    Ok(out)
}

/// Runs the op suite and the loss suite for one seed.
pub fn run_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut all = op_suite(seed)?;
    all.extend(loss_suite(seed)?);
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let mut t = Tape::new();
        let x = t.var(&[1], vec![3.0]).unwrap();
        let y = t.mul(x, x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap()[0], 6.0);
        let e = grad_check(|t, x| t.mul(x, x), &[3.0], &[1], 1e-4).unwrap();
        assert!(e < 1e-9, "{e}");
    }

    #[test]
    fn constant_function() {
        let e = grad_check(
            |t, x| {
                let z = t.scale(x, 0.0)?;
                let z = t.add_scalar(z, 4.0)?;
                Ok(t.sum(z))
            },
            &[1.0, 2.0],
            &[2],
            1e-4,
        )
        .unwrap();
        assert_eq!(e, 0.0);
    }

    #[test]
    fn non_finite_is_an_error() {
        let r = grad_check(
            |t, x| {
                let y = t.pow(x, 0.5);
                Ok(t.sum(y))
            },
            &[-1.0],
            &[1],
            1e-4,
        );
        assert!(matches!(r, Err(Error::NonFinite(_))));
        assert!(grad_check(|t, x| Ok(t.sum(x)), &[1.0], &[1], 0.0).is_err());
    }

    #[test]
    fn suite_passes_one_seed() {
        for c in run_suite(7).unwrap() {
            assert!(c.passed(), "{} {}", c.name, c.max_rel_error);
        }
    }
}
