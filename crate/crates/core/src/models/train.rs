//! Training examples, the per-role objective and the optimization loop.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::net::{Role, ToyNet};
use super::optim::{cosine_lr, RAdam};
use crate::autodiff::losses::{self, LossWeights};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::image::LinearImage;
use crate::intrinsic::{self, SOFT_MASK_LAMBDA};
use crate::isp::{self, IspParams, SyntheticScene};

pub const DEFAULT_LEARNING_RATE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: DEFAULT_LEARNING_RATE,
            steps: 500,
            batch: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch == 0 {
            return Err(Error::InvalidParameter("batch must be at least 1".into()));
        }
        Ok(())
    }
}

/// Concatenates images of equal size into one planar `[C, H, W]` buffer.
pub fn stack_planar(parts: &[&LinearImage]) -> Result<Vec<f64>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::ShapeMismatch("nothing to stack".into()))?;
    let mut out = Vec::new();
    for p in parts {
        p.ensure_same_dims(first, "input stack")?;
        out.extend(p.to_planar());
    }
    Ok(out)
}

/// LDR-side inputs of the refinement stage produced by the first two stages.
#[derive(Debug, Clone, PartialEq)]
pub struct StageOutputs {
    /// `[1, H, W]`
    pub d_h: Vec<f64>,
    /// `[3, H, W]`
    pub a_h: Vec<f64>,
}

/// One training scene with every input and target in planar layout.
///
/// Targets live in the exposed domain: `S* = 2^t S`, `I* = 2^t I`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub height: usize,
    pub width: usize,
    /// Linearized LDR image `I_L`, `[3, H, W]`.
    pub i_l: Vec<f64>,
    /// Inverse LDR shading `D_L`, `[1, H, W]`.
    pub d_l: Vec<f64>,
    /// LDR albedo `A_L`, `[3, H, W]`.
    pub a_l: Vec<f64>,
    /// Soft highlight mask collapsed to its per-pixel channel maximum, `[1, H, W]`.
    pub alpha: Vec<f64>,
    pub d_gt: Vec<f64>,
    pub a_gt: Vec<f64>,
    pub i_gt: Vec<f64>,
    pub j_gt: Vec<f64>,
    pub stages: Option<StageOutputs>,
}

impl TrainExample {
    /// Simulates the LDR capture of `scene` and decomposes it with the oracle.
    pub fn from_scene(scene: &SyntheticScene, params: &IspParams) -> Result<Self> {
        let (_, i_l) = isp::simulate_ldr(scene, params)?;
        let (a_l, s_l) = isp::oracle_ldr_decomposition(scene, params, &i_l)?;
        let d_l = intrinsic::shading_to_inverse(&s_l)?;
        let alpha = intrinsic::soft_mask(&i_l, SOFT_MASK_LAMBDA)?;
        let gain = params.exposure_multiplier();
        let s_star = scene.shading_gt.as_image().map(|s| gain * s)?;
        let i_star = scene.hdr_gt.map(|v| gain * v)?;
        let d_gt = s_star.map(intrinsic::to_inverse)?;
        let j_gt = i_star.map(intrinsic::to_inverse)?;
        Ok(Self {
            height: scene.height(),
            width: scene.width(),
            i_l: i_l.to_planar(),
            d_l: d_l.as_image().to_planar(),
            a_l: a_l.as_image().to_planar(),
            alpha: mask_plane(alpha.as_image()),
            d_gt: d_gt.to_planar(),
            a_gt: scene.albedo_gt.as_image().to_planar(),
            i_gt: i_star.to_planar(),
            j_gt: j_gt.to_planar(),
            stages: None,
        })
    }

    fn plane(&self) -> usize {
        self.height * self.width
    }

    /// Network input for `role`, or an error if the refinement inputs are missing.
    pub fn input(&self, role: Role) -> Result<Vec<f64>> {
        let parts: Vec<&[f64]> = match role {
            Role::Shading => vec![&self.i_l, &self.d_l],
            Role::Albedo => vec![&self.i_l, &self.a_l, &self.alpha],
            Role::Refinement => {
                let st = self.stages.as_ref().ok_or_else(|| {
                    Error::InvalidParameter("refinement example lacks shading/albedo stage outputs".into())
                })?;
                return Ok(refinement_input(&self.i_l, &st.d_h, &st.a_h, self.plane()));
            }
        };
        Ok(parts.concat())
    }

    /// Runs trained shading and albedo networks to fill in the refinement inputs.
    pub fn attach_stages(&mut self, shading: &ToyNet, albedo: &ToyNet) -> Result<()> {
        let d_h = shading.predict(&self.input(Role::Shading)?, self.height, self.width)?;
        let a_h = albedo.predict(&self.input(Role::Albedo)?, self.height, self.width)?;
        self.stages = Some(StageOutputs { d_h, a_h });
        Ok(())
    }
}

/// Per-pixel maximum over the channels of a soft mask.
pub fn mask_plane(mask: &LinearImage) -> Vec<f64> {
    (0..mask.height() * mask.width())
        .map(|i| mask.pixel(i / mask.width(), i % mask.width()).iter().fold(0.0, |m: f64, &v| m.max(v)))
        .collect()
}

/// `I_L + J_hat + D_H + A_H` where `J_hat` is the inverse of `A_H (1 - D_H) / D_H`.
pub(crate) fn refinement_input(i_l: &[f64], d_h: &[f64], a_h: &[f64], plane: usize) -> Vec<f64> {
    let j_hat = (0..3 * plane).map(|k| {
        let d = d_h[k % plane];
        let i_hat = a_h[k] * intrinsic::from_inverse(d);
        intrinsic::to_inverse(i_hat)
    });
    let mut out = Vec::with_capacity(10 * plane);
    out.extend_from_slice(i_l);
    out.extend(j_hat);
    out.extend_from_slice(d_h);
    out.extend_from_slice(a_h);
    out
}

/// Builds training examples for scenes `first_seed .. first_seed + count`,
/// each captured at its seed-derived exposure.
pub fn synthetic_dataset(
    first_seed: u64,
    count: usize,
    size: usize,
    crf_gamma: f64,
    bit_depth: u32,
) -> Result<Vec<TrainExample>> {
    (0..count as u64)
        .map(|k| {
            let seed = first_seed + k;
            let scene = isp::generate_scene(seed, size, size)?;
            let params = IspParams::new(isp::exposure_for_seed(seed), crf_gamma, bit_depth)?;
            TrainExample::from_scene(&scene, &params)
        })
        .collect()
}

/// Records the role's loss for `pred` against `ex` on `tape`.
pub fn role_loss(tape: &mut Tape, role: Role, pred: Var, ex: &TrainExample) -> Result<Var> {
    let (h, w) = (ex.height, ex.width);
    let weights = LossWeights::for_dims(h, w);
    let s1 = [1, h, w];
    let s3 = [3, h, w];
    match role {
        Role::Shading => {
            let d = tape.constant(&s1, ex.d_gt.clone())?;
            let i = tape.constant(&s3, ex.i_gt.clone())?;
            let a = tape.constant(&s3, ex.a_gt.clone())?;
            losses::loss_shading(tape, pred, d, i, a, &weights)
        }
        Role::Albedo => {
            let a = tape.constant(&s3, ex.a_gt.clone())?;
            let i = tape.constant(&s3, ex.i_gt.clone())?;
            let d = tape.constant(&s1, ex.d_gt.clone())?;
            losses::loss_albedo(tape, pred, a, i, d, &weights)
        }
        Role::Refinement => {
            let j = tape.constant(&s3, ex.j_gt.clone())?;
            losses::loss_refine(tape, pred, j, &weights)
        }
    }
}

/// Loss of `net` on a single example, without gradients.
pub fn example_loss(net: &ToyNet, ex: &TrainExample) -> Result<f64> {
    let role = net.role();
    let mut tape = Tape::new();
    let params = net.register(&mut tape, false)?;
    let x = tape.constant(&[role.in_channels(), ex.height, ex.width], ex.input(role)?)?;
    let y = net.forward(&mut tape, &params, x)?;
    let l = role_loss(&mut tape, role, y, ex)?;
    Ok(tape.item(l))
}

/// Mean loss of `net` over `data`.
pub fn dataset_loss(net: &ToyNet, data: &[TrainExample]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut total = 0.0;
    for ex in data {
        total += example_loss(net, ex)?;
    }
    Ok(total / data.len() as f64)
}

/// Runs `cfg.steps` RAdam steps on the role's loss; returns the per-step
/// batch loss measured before each update.
pub fn train(net: &mut ToyNet, data: &[TrainExample], cfg: &TrainConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptySample);
    }
    let role = net.role();
    let lengths: Vec<usize> = net.tensors().iter().map(|t| t.len()).collect();
    let mut opt = RAdam::new(&lengths);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut curve = Vec::with_capacity(cfg.steps);
    for step in 1..=cfg.steps {
        let mut tape = Tape::new();
        let params = net.register(&mut tape, true)?;
        let mut total: Option<Var> = None;
        for _ in 0..cfg.batch {
            let ex = &data[rng.random_range(0..data.len())];
            let x = tape.constant(&[role.in_channels(), ex.height, ex.width], ex.input(role)?)?;
            let y = net.forward(&mut tape, &params, x)?;
            let l = role_loss(&mut tape, role, y, ex)?;
            total = Some(match total {
                Some(t) => tape.add(t, l)?,
                None => l,
            });
        }
        let loss = tape.scale(total.expect("batch >= 1"), 1.0 / cfg.batch as f64)?;
        let value = tape.item(loss);
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("{role} training loss is {value} at step {step}")));
        }
        let grads = tape.backward(loss)?;
        let grad_vecs: Vec<Vec<f64>> = params
            .layers()
            .iter()
            .zip(net.layers())
            .flat_map(|(&(w, b), l)| [grads.get_or_zeros(w, l.weight.len()), grads.get_or_zeros(b, l.bias.len())])
            .collect();
        if grad_vecs.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("{role} gradient is non-finite at step {step}")));
        }
        let grad_refs: Vec<&[f64]> = grad_vecs.iter().map(Vec::as_slice).collect();
        let lr = cosine_lr(cfg.learning_rate, step, cfg.steps);
        opt.step(&mut net.tensors_mut(), &grad_refs, lr)?;
        curve.push(value);
    }
    Ok(curve)
}
