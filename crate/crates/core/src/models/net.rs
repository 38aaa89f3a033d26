use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

/// Number of 2x pooling stages; spatial dims must be multiples of `2^POOL_STAGES`.
pub const POOL_STAGES: u32 = 2;
/// Channel widths of the three encoder levels.
pub const WIDTHS: [usize; 3] = [16, 32, 64];
/// The head's He-initialized weights are multiplied by this, so training
/// starts close to the pass-through while every layer still receives gradient.
pub const HEAD_INIT_GAIN: f64 = 1e-3;
/// Pass-through inputs are clamped to `[SKIP_CLAMP, 1 - SKIP_CLAMP]` before the logit.
pub const SKIP_CLAMP: f64 = 1e-4;

/// Which stage of the reconstruction pipeline a network serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    /// `I_L (3) + D_L (1)` to `D_H (1)`.
    Shading,
    /// `I_L (3) + A_L (3) + alpha (1)` to `A_H (3)`.
    Albedo,
    /// `I_L (3) + J_hat (3) + D_H (1) + A_H (3)` to `J_H (3)`.
    Refinement,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Shading, Role::Albedo, Role::Refinement];

    /// Channel count of each input block, in concatenation order.
    pub fn input_blocks(self) -> &'static [usize] {
        match self {
            Role::Shading => &[3, 1],
            Role::Albedo => &[3, 3, 1],
            Role::Refinement => &[3, 3, 1, 3],
        }
    }

    pub fn in_channels(self) -> usize {
        self.input_blocks().iter().sum()
    }

    pub fn out_channels(self) -> usize {
        match self {
            Role::Shading => 1,
            Role::Albedo | Role::Refinement => 3,
        }
    }

    pub fn tag(self) -> u32 {
        match self {
            Role::Shading => 0,
            Role::Albedo => 1,
            Role::Refinement => 2,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        Role::ALL.into_iter().find(|r| r.tag() == tag)
    }

    /// First input channel of the block the network refines: `D_L`, `A_L`
    /// or `J_hat`. It spans `out_channels` channels.
    pub fn skip_offset(self) -> usize {
        3
    }

    pub fn name(self) -> &'static str {
        match self {
            Role::Shading => "shading",
            Role::Albedo => "albedo",
            Role::Refinement => "refinement",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Role::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown role {s:?}")))
    }
}

/// A convolution with its bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    /// `[cout, cin, kernel, kernel]`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    fn he_init(cin: usize, cout: usize, kernel: usize, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = (cin * kernel * kernel) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
        let weight = (0..cout * cin * kernel * kernel).map(|_| normal.sample(rng)).collect();
        Self {
            cin,
            cout,
            kernel,
            weight,
            bias: vec![0.0; cout],
        }
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.cout, self.cin, self.kernel, self.kernel]
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn scaled(mut self, gain: f64) -> Self {
        self.weight.iter_mut().for_each(|v| *v *= gain);
        self
    }

    fn identity(channels: usize) -> Self {
        let mut weight = vec![0.0; channels * channels];
        for c in 0..channels {
            weight[c * channels + c] = 1.0;
        }
        Self {
            cin: channels,
            cout: channels,
            kernel: 1,
            weight,
            bias: vec![0.0; channels],
        }
    }
}

/// Layer handles registered on a tape for one forward/backward pass.
#[derive(Debug, Clone)]
pub struct ParamVars {
    layers: Vec<(Var, Var)>,
}

impl ParamVars {
    /// `(weight, bias)` handles in layer order.
    pub fn layers(&self) -> &[(Var, Var)] {
        &self.layers
    }
}

/// Small U-shaped encoder-decoder with skip connections and a sigmoid head.
///
/// Layers: `enc1` (full res), `enc2` (1/2), `enc3` (1/4), `dec2` (1/2, skip
/// from `enc2`), `dec1` (full, skip from `enc1`), then a 1x1 `head`. A 1x1
/// `skip` layer adds the logit of the role's pass-through input block to the
/// head logits. The skip starts as the identity and the head near zero, so an
/// untrained network approximately reproduces that block.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyNet {
    role: Role,
    layers: Vec<ConvLayer>,
}

pub const LAYER_NAMES: [&str; 7] = ["enc1", "enc2", "enc3", "dec2", "dec1", "head", "skip"];

impl ToyNet {
    /// He-initialized network for `role`; identical seeds give identical weights.
    pub fn build(role: Role, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (u64::from(role.tag()) << 56));
        let [w1, w2, w3] = WIDTHS;
        let layers = vec![
            ConvLayer::he_init(role.in_channels(), w1, 3, &mut rng),
            ConvLayer::he_init(w1, w2, 3, &mut rng),
            ConvLayer::he_init(w2, w3, 3, &mut rng),
            ConvLayer::he_init(w3 + w2, w2, 3, &mut rng),
            ConvLayer::he_init(w2 + w1, w1, 3, &mut rng),
            ConvLayer::he_init(w1, role.out_channels(), 1, &mut rng).scaled(HEAD_INIT_GAIN),
            ConvLayer::identity(role.out_channels()),
        ];
        Self { role, layers }
    }

    /// Rebuilds a network from explicit layers, checking them against the role.
    pub fn from_layers(role: Role, layers: Vec<ConvLayer>) -> Result<Self> {
        let reference = Self::build(role, 0);
        if layers.len() != reference.layers.len() {
            return Err(Error::ShapeMismatch(format!(
                "{role} network has {} layers, got {}",
                reference.layers.len(),
                layers.len()
            )));
        }
        for (i, (l, r)) in layers.iter().zip(&reference.layers).enumerate() {
            if l.weight_shape() != r.weight_shape()
                || l.weight.len() != r.weight.len()
                || l.bias.len() != r.bias.len()
            {
                return Err(Error::ShapeMismatch(format!(
                    "{role} layer {} expects weight {:?}, got {:?}",
                    LAYER_NAMES[i],
                    r.weight_shape(),
                    l.weight_shape()
                )));
            }
            if l.weight.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("{role} layer {} has non-finite weights", LAYER_NAMES[i])));
            }
        }
        Ok(Self { role, layers })
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(ConvLayer::param_count).sum()
    }

    /// Zeroes the head and skip layers so the output is exactly 0.5 everywhere.
    pub fn zero_head(&mut self) {
        for l in &mut self.layers[5..] {
            l.weight.fill(0.0);
            l.bias.fill(0.0);
        }
    }

    /// Flat views of every parameter tensor (weight then bias, per layer).
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    /// Registers the parameters on `tape`, as trainable variables or constants.
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> Result<ParamVars> {
        let mut layers = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let (w, b) = if trainable {
                (tape.var(&l.weight_shape(), l.weight.clone())?, tape.var(&[l.cout], l.bias.clone())?)
            } else {
                (
                    tape.constant(&l.weight_shape(), l.weight.clone())?,
                    tape.constant(&[l.cout], l.bias.clone())?,
                )
            };
            layers.push((w, b));
        }
        Ok(ParamVars { layers })
    }

    /// Checks that a `[C, H, W]` input fits this network.
    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        let [c, h, w] = *shape else {
            return Err(Error::ShapeMismatch(format!("network input must be [C, H, W], got {shape:?}")));
        };
        if c != self.role.in_channels() {
            return Err(Error::ShapeMismatch(format!(
                "{} network takes {} input channels, got {c}",
                self.role,
                self.role.in_channels()
            )));
        }
        let m = 1usize << POOL_STAGES;
        if h == 0 || w == 0 || h % m != 0 || w % m != 0 {
            return Err(Error::DimensionMismatch(format!(
                "network input {h}x{w} must be a positive multiple of {m} in each axis"
            )));
        }
        Ok(())
    }

    /// Records a forward pass of `input` (`[C, H, W]`) using registered parameters.
    pub fn forward(&self, tape: &mut Tape, params: &ParamVars, input: Var) -> Result<Var> {
        self.check_input(tape.shape(input))?;
        let p = params.layers();
        let conv_relu = |tape: &mut Tape, x: Var, (w, b): (Var, Var)| -> Result<Var> {
            let y = tape.conv2d(x, w, Some(b))?;
            Ok(tape.relu(y))
        };
        let e1 = conv_relu(tape, input, p[0])?;
        let x = tape.avg_pool2(e1)?;
        let e2 = conv_relu(tape, x, p[1])?;
        let x = tape.avg_pool2(e2)?;
        let e3 = conv_relu(tape, x, p[2])?;
        let x = tape.upsample2(e3)?;
        let x = tape.concat(&[x, e2])?;
        let d2 = conv_relu(tape, x, p[3])?;
        let x = tape.upsample2(d2)?;
        let x = tape.concat(&[x, e1])?;
        let d1 = conv_relu(tape, x, p[4])?;
        let (hw, hb) = p[5];
        let logits = tape.conv2d(d1, hw, Some(hb))?;
        let pass = skip_logits(tape, input, self.role)?;
        let (sw, sb) = p[6];
        let skip = tape.conv2d(pass, sw, Some(sb))?;
        let logits = tape.add(logits, skip)?;
        Ok(tape.sigmoid(logits))
    }

    /// Inference on a planar `[C, H, W]` input; returns the planar output.
    pub fn predict(&self, input: &[f64], height: usize, width: usize) -> Result<Vec<f64>> {
        let c = self.role.in_channels();
        if input.len() != c * height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} network expects {c}x{height}x{width} = {} values, got {}",
                self.role,
                c * height * width,
                input.len()
            )));
        }
        let mut tape = Tape::new();
        let params = self.register(&mut tape, false)?;
        let x = tape.constant(&[c, height, width], input.to_vec())?;
        let y = self.forward(&mut tape, &params, x)?;
        Ok(tape.value(y).to_vec())
    }
}

/// Clamped logit of the pass-through block, recorded as a constant.
fn skip_logits(tape: &mut Tape, input: Var, role: Role) -> Result<Var> {
    let (h, w) = match *tape.shape(input) {
        [_, h, w] => (h, w),
        _ => unreachable!("checked by check_input"),
    };
    let c = role.out_channels();
    let plane = h * w;
    let values = tape.value(input)[role.skip_offset() * plane..][..c * plane]
        .iter()
        .map(|&v| {
            let p = v.clamp(SKIP_CLAMP, 1.0 - SKIP_CLAMP);
            (p / (1.0 - p)).ln()
        })
        .collect();
    tape.constant(&[c, h, w], values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize) -> Vec<f64> {
        (0..n).map(|i| ((i * 37) % 101) as f64 / 50.0 - 0.5).collect()
    }

    #[test]
    fn channel_contracts() {
        assert_eq!(Role::Shading.in_channels(), 4);
        assert_eq!(Role::Albedo.in_channels(), 7);
        assert_eq!(Role::Refinement.in_channels(), 10);
        assert_eq!(Role::Shading.out_channels(), 1);
        assert_eq!(Role::Refinement.input_blocks(), &[3, 3, 1, 3]);
    }

    #[test]
    fn param_budget() {
        for role in Role::ALL {
            let n = ToyNet::build(role, 0).param_count();
            assert!(n <= 100_000, "{role}: {n}");
        }
    }

    #[test]
    fn deterministic_build() {
        let a = ToyNet::build(Role::Albedo, 5);
        let b = ToyNet::build(Role::Albedo, 5);
        assert_eq!(a, b);
        let bits = |n: &ToyNet| n.tensors().concat().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(a, ToyNet::build(Role::Albedo, 6));
    }

    #[test]
    fn output_bounds_and_dims() {
        for role in Role::ALL {
            let net = ToyNet::build(role, 1);
            let (h, w) = (8, 12);
            let x = ramp(role.in_channels() * h * w);
            let y = net.predict(&x, h, w).unwrap();
            assert_eq!(y.len(), role.out_channels() * h * w);
            assert!(y.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn zero_head_outputs_half() {
        let mut net = ToyNet::build(Role::Shading, 3);
        net.zero_head();
        let y = net.predict(&ramp(4 * 16), 4, 4).unwrap();
        assert!(y.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn rejects_wrong_input() {
        let net = ToyNet::build(Role::Shading, 0);
        assert!(net.check_input(&[4, 8, 8]).is_ok());
        assert!(matches!(net.check_input(&[7, 8, 8]), Err(Error::ShapeMismatch(_))));
        assert!(matches!(net.check_input(&[4, 6, 8]), Err(Error::DimensionMismatch(_))));
        assert!(net.predict(&[0.0; 10], 4, 4).is_err());
    }

    #[test]
    fn role_names_roundtrip() {
        for role in Role::ALL {
            assert_eq!(role.name().parse::<Role>().unwrap(), role);
            assert_eq!(Role::from_tag(role.tag()), Some(role));
        }
        assert!("depth".parse::<Role>().is_err());
        assert_eq!(Role::from_tag(9), None);
    }

    #[test]
    fn from_layers_validates() {
        let net = ToyNet::build(Role::Refinement, 2);
        let again = ToyNet::from_layers(Role::Refinement, net.layers().to_vec()).unwrap();
        assert_eq!(again, net);
        assert!(ToyNet::from_layers(Role::Shading, net.layers().to_vec()).is_err());
        let mut bad = net.layers().to_vec();
        bad[2].bias[0] = f64::NAN;
        assert!(ToyNet::from_layers(Role::Refinement, bad).is_err());
    }
}
