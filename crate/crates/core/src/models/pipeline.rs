//! Three-stage inference: shading, albedo, then refinement in the inverse domain.

use super::net::{Role, ToyNet, POOL_STAGES};
use super::train::{mask_plane, refinement_input};
use crate::error::{Error, Result};
use crate::image::{luminance, LinearImage};
use crate::intrinsic::{
    self, AlbedoMap, InverseHdrImage, InverseShadingMap, ShadingMap, SoftMask, DIV_EPS, SOFT_MASK_LAMBDA,
};
use crate::isp::{self, IspParams, SyntheticScene};

/// Floor applied to stage outputs so a saturated sigmoid never yields an
/// inverse value of exactly zero.
pub const STAGE_FLOOR: f64 = 1e-9;

/// Anything that maps a planar `[C, H, W]` input to a planar prediction for a role.
pub trait StageModel {
    fn role(&self) -> Role;
    fn predict(&self, input: &[f64], height: usize, width: usize) -> Result<Vec<f64>>;
}

impl StageModel for ToyNet {
    fn role(&self) -> Role {
        ToyNet::role(self)
    }

    fn predict(&self, input: &[f64], height: usize, width: usize) -> Result<Vec<f64>> {
        ToyNet::predict(self, input, height, width)
    }
}

/// LDR image with its intrinsic decomposition and highlight mask.
#[derive(Debug, Clone, PartialEq)]
pub struct LdrInputs {
    pub image: LinearImage,
    pub inv_shading: InverseShadingMap,
    pub albedo: AlbedoMap,
    pub mask: SoftMask,
}

impl LdrInputs {
    pub fn new(image: LinearImage, inv_shading: InverseShadingMap, albedo: AlbedoMap) -> Result<Self> {
        image.ensure_channels(3, "LDR image")?;
        image.ensure_same_dims(inv_shading.as_image(), "LDR inverse shading")?;
        image.ensure_same_dims(albedo.as_image(), "LDR albedo")?;
        inv_shading.as_image().ensure_channels(1, "LDR inverse shading")?;
        albedo.as_image().ensure_channels(3, "LDR albedo")?;
        let mask = intrinsic::soft_mask(&image, SOFT_MASK_LAMBDA)?;
        Ok(Self {
            image,
            inv_shading,
            albedo,
            mask,
        })
    }

    /// Simulated capture of `scene` with the oracle decomposition.
    pub fn from_scene(scene: &SyntheticScene, params: &IspParams) -> Result<Self> {
        let (_, image) = isp::simulate_ldr(scene, params)?;
        let (albedo, shading) = isp::oracle_ldr_decomposition(scene, params, &image)?;
        Self::new(image, intrinsic::shading_to_inverse(&shading)?, albedo)
    }

    /// Decomposition for an LDR image without known intrinsics: luminance
    /// as shading and the clamped ratio as albedo.
    pub fn from_image(image: LinearImage) -> Result<Self> {
        let lum = luminance(&image)?;
        let shading = lum.map(|v| v.clamp(0.0, 1.0))?;
        let albedo = LinearImage::from_fn(image.height(), image.width(), 3, |y, x, c| {
            (image.get(y, x, c) / shading.get(y, x, 0).max(DIV_EPS)).clamp(0.0, 1.0)
        })?;
        let inv = intrinsic::shading_to_inverse(&ShadingMap::new(shading)?)?;
        Self::new(image, inv, AlbedoMap::bounded(albedo)?)
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }

    pub fn width(&self) -> usize {
        self.image.width()
    }
}

/// Every intermediate and final output of [`reconstruct`].
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub d_h: InverseShadingMap,
    pub a_h: AlbedoMap,
    /// Initial estimate `A_H (1 - D_H) / D_H`.
    pub i_hat: LinearImage,
    pub j_h: InverseHdrImage,
    /// Final HDR image, the inverse of `J_H`.
    pub hdr: LinearImage,
}

/// Edge-replicates a planar buffer from `h x w` to `ph x pw`.
fn pad_planar(data: &[f64], c: usize, h: usize, w: usize, ph: usize, pw: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(c * ph * pw);
    for ch in 0..c {
        for y in 0..ph {
            let row = &data[(ch * h + y.min(h - 1)) * w..][..w];
            out.extend((0..pw).map(|x| row[x.min(w - 1)]));
        }
    }
    out
}

fn crop_planar(data: &[f64], c: usize, ph: usize, pw: usize, h: usize, w: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for y in 0..h {
            out.extend_from_slice(&data[(ch * ph + y) * pw..][..w]);
        }
    }
    out
}

fn padded(n: usize) -> usize {
    let m = 1usize << POOL_STAGES;
    n.div_ceil(m) * m
}

fn run_stage(
    model: &dyn StageModel,
    want: Role,
    input: &[f64],
    dims: (usize, usize, usize, usize),
    floor: f64,
) -> Result<Vec<f64>> {
    if model.role() != want {
        return Err(Error::InvalidParameter(format!(
            "expected a {want} model, got {}",
            model.role()
        )));
    }
    let (h, w, ph, pw) = dims;
    let c = want.in_channels();
    if input.len() != c * h * w {
        return Err(Error::ShapeMismatch(format!("{want} stage input has {} values", input.len())));
    }
    let x = pad_planar(input, c, h, w, ph, pw);
    let y = model.predict(&x, ph, pw)?;
    let oc = want.out_channels();
    if y.len() != oc * ph * pw {
        return Err(Error::ShapeMismatch(format!("{want} stage returned {} values", y.len())));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{want} stage output")));
    }
    Ok(crop_planar(&y, oc, ph, pw, h, w).into_iter().map(|v| v.clamp(floor, 1.0)).collect())
}

/// Runs the three stages. Inputs of any size are edge-padded to the
/// networks' size multiple and the outputs cropped back.
pub fn reconstruct(
    inputs: &LdrInputs,
    shading: &dyn StageModel,
    albedo: &dyn StageModel,
    refine: &dyn StageModel,
) -> Result<Reconstruction> {
    let (h, w) = (inputs.height(), inputs.width());
    let dims = (h, w, padded(h), padded(w));
    let i_l = inputs.image.to_planar();

    let x = [i_l.as_slice(), &inputs.inv_shading.as_image().to_planar()].concat();
    let d_h = run_stage(shading, Role::Shading, &x, dims, STAGE_FLOOR)?;

    let x = [i_l.as_slice(), &inputs.albedo.as_image().to_planar(), &mask_plane(inputs.mask.as_image())].concat();
    let a_h = run_stage(albedo, Role::Albedo, &x, dims, 0.0)?;

    let x = refinement_input(&i_l, &d_h, &a_h, h * w);
    let j_h = run_stage(refine, Role::Refinement, &x, dims, STAGE_FLOOR)?;

    let d_h = InverseShadingMap::new(LinearImage::from_planar(h, w, 1, &d_h)?)?;
    let a_h = AlbedoMap::bounded(LinearImage::from_planar(h, w, 3, &a_h)?)?;
    let i_hat = intrinsic::combine_intrinsics(&a_h, &d_h)?;
    let j_h = InverseHdrImage::new(LinearImage::from_planar(h, w, 3, &j_h)?)?;
    let hdr = intrinsic::inverse_to_image(&j_h)?;
    Ok(Reconstruction {
        d_h,
        a_h,
        i_hat,
        j_h,
        hdr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Copies a channel range of the input, standing in for a trained network.
    struct Passthrough {
        role: Role,
        first: usize,
    }

    impl StageModel for Passthrough {
        fn role(&self) -> Role {
            self.role
        }

        fn predict(&self, input: &[f64], h: usize, w: usize) -> Result<Vec<f64>> {
            assert_eq!(input.len(), self.role.in_channels() * h * w);
            assert!(h % 4 == 0 && w % 4 == 0);
            let n = self.role.out_channels() * h * w;
            Ok(input[self.first * h * w..][..n].to_vec())
        }
    }

    fn stubs() -> [Passthrough; 3] {
        [
            // D_H := D_L, A_H := A_L, J_H := J_hat
            Passthrough { role: Role::Shading, first: 3 },
            Passthrough { role: Role::Albedo, first: 3 },
            Passthrough { role: Role::Refinement, first: 3 },
        ]
    }

    #[test]
    fn identity_stubs_reproduce_unclipped_ldr() {
        let scene = isp::generate_scene(11, 18, 22).unwrap();
        // dark enough that nothing clips
        let params = IspParams::new(-6.0, 2.2, 8).unwrap();
        let inputs = LdrInputs::from_scene(&scene, &params).unwrap();
        let [s, a, r] = stubs();
        let out = reconstruct(&inputs, &s, &a, &r).unwrap();
        assert_eq!(out.hdr.height(), 18);
        assert_eq!(out.hdr.width(), 22);
        for (got, want) in out.hdr.data().iter().zip(inputs.image.data()) {
            assert!((got - want).abs() <= 1e-9 * want.max(1e-3), "{got} vs {want}");
        }
        // and agrees with the exposed HDR up to 8-bit quantization
        let gain = params.exposure_multiplier();
        for (got, hdr) in out.hdr.data().iter().zip(scene.hdr_gt.data()) {
            let exposed = gain * hdr;
            let code_step = (exposed.powf(1.0 / 2.2) + 0.5 / 255.0).powf(2.2) - exposed;
            assert!((got - exposed).abs() <= code_step.abs() + 1e-9);
        }
    }

    #[test]
    fn inverse_maps_stay_in_unit_interval() {
        let scene = isp::generate_scene(3, 16, 16).unwrap();
        let inputs = LdrInputs::from_scene(&scene, &IspParams::new(2.0, 2.2, 8).unwrap()).unwrap();
        let nets = Role::ALL.map(|r| ToyNet::build(r, 0));
        let out = reconstruct(&inputs, &nets[0], &nets[1], &nets[2]).unwrap();
        for v in out.d_h.as_image().data().iter().chain(out.j_h.as_image().data()) {
            assert!(*v > 0.0 && *v <= 1.0);
        }
        assert!(out.a_h.as_image().data().iter().all(|&v| v > 0.0 && v <= 1.0));
    }

    #[test]
    fn wrong_role_is_rejected() {
        let scene = isp::generate_scene(3, 16, 16).unwrap();
        let inputs = LdrInputs::from_scene(&scene, &IspParams::default()).unwrap();
        let nets = Role::ALL.map(|r| ToyNet::build(r, 0));
        assert!(reconstruct(&inputs, &nets[1], &nets[0], &nets[2]).is_err());
    }

    #[test]
    fn fallback_decomposition_is_consistent() {
        let img = LinearImage::from_fn(5, 7, 3, |y, x, c| ((y * 7 + x) as f64 / 40.0 + 0.1 * c as f64).min(1.0)).unwrap();
        let inputs = LdrInputs::from_image(img.clone()).unwrap();
        let s = intrinsic::inverse_to_shading(&inputs.inv_shading).unwrap();
        let back = intrinsic::compose(&inputs.albedo, &s).unwrap();
        for (b, i) in back.data().iter().zip(img.data()) {
            assert!(b <= &(i + 1e-12));
        }
    }

    #[test]
    fn padding_roundtrip() {
        let data: Vec<f64> = (0..2 * 3 * 5).map(f64::from).collect();
        let p = pad_planar(&data, 2, 3, 5, 4, 8);
        assert_eq!(p.len(), 64);
        assert_eq!(p[7], 4.0);
        assert_eq!(p[3 * 8], 10.0);
        assert_eq!(crop_planar(&p, 2, 4, 8, 3, 5), data);
    }
}
