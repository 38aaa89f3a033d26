//! LDR image formation (exposure, clipping, gamma CRF, quantization), its
//! known-parameter inverse, and procedural intrinsic scenes.
//!
//! All randomness flows from a single `u64` seed through `ChaCha8Rng`, which
//! produces the same stream on every platform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{LdrImage, LinearImage};
use crate::intrinsic::{compose, AlbedoMap, ShadingMap, DIV_EPS};

pub const EXPOSURE_RANGE: (f64, f64) = (-3.0, 3.0);

/// Camera parameters for one simulated capture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IspParams {
    /// Exposure in photographic stops; the scene is scaled by `2^t`.
    pub exposure_stops: f64,
    pub crf_gamma: f64,
    pub bit_depth: u32,
}

impl Default for IspParams {
    fn default() -> Self {
        Self {
            exposure_stops: 0.0,
            crf_gamma: 2.2,
            bit_depth: 8,
        }
    }
}

impl IspParams {
    pub fn new(exposure_stops: f64, crf_gamma: f64, bit_depth: u32) -> Result<Self> {
        let p = Self {
            exposure_stops,
            crf_gamma,
            bit_depth,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.crf_gamma > 0.0 && self.crf_gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!("crf_gamma must be > 0, got {}", self.crf_gamma)));
        }
        if !(1..=16).contains(&self.bit_depth) {
            return Err(Error::InvalidParameter(format!(
                "bit_depth must be in [1, 16], got {}",
                self.bit_depth
            )));
        }
        if !self.exposure_stops.is_finite() {
            return Err(Error::InvalidParameter("exposure must be finite".into()));
        }
        Ok(())
    }

    pub fn exposure_multiplier(&self) -> f64 {
        self.exposure_stops.exp2()
    }

    pub fn max_code(&self) -> f64 {
        f64::from((1u32 << self.bit_depth) - 1)
    }
}

/// Ground-truth intrinsic scene; `hdr_gt` is exactly `albedo_gt * shading_gt`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub albedo_gt: AlbedoMap,
    pub shading_gt: ShadingMap,
    pub hdr_gt: LinearImage,
    pub seed: u64,
}

impl SyntheticScene {
    pub fn height(&self) -> usize {
        self.hdr_gt.height()
    }

    pub fn width(&self) -> usize {
        self.hdr_gt.width()
    }
}

/// Quantizes the exposed, clipped, gamma-encoded scene and returns the codes
/// together with their known-CRF linearization.
pub fn simulate_ldr(scene: &SyntheticScene, params: &IspParams) -> Result<(LdrImage, LinearImage)> {
    params.validate()?;
    let gain = params.exposure_multiplier();
    let max_code = params.max_code();
    let inv_gamma = 1.0 / params.crf_gamma;
    let hdr = &scene.hdr_gt;
    let codes: Vec<u16> = hdr
        .data()
        .iter()
        .map(|&v| {
            let clipped = (gain * v).min(1.0);
            (clipped.powf(inv_gamma) * max_code).round() as u16
        })
        .collect();
    let linear = codes
        .iter()
        .map(|&q| (f64::from(q) / max_code).powf(params.crf_gamma))
        .collect();
    let ldr = LdrImage::new(hdr.height(), hdr.width(), params.bit_depth, codes)?;
    let linear = LinearImage::new(hdr.height(), hdr.width(), 3, linear)?;
    Ok((ldr, linear))
}

/// Decomposes the linearized LDR image using the scene's known shading.
///
/// Shading is clipped at 1 so every clipping residue lands in the albedo,
/// which desaturates toward white in over-exposed regions.
pub fn oracle_ldr_decomposition(
    scene: &SyntheticScene,
    params: &IspParams,
    linear_ldr: &LinearImage,
) -> Result<(AlbedoMap, ShadingMap)> {
    linear_ldr.ensure_same_dims(&scene.hdr_gt, "oracle decomposition")?;
    let gain = params.exposure_multiplier();
    let shading = scene.shading_gt.as_image().map(|s| (gain * s).min(1.0))?;
    let albedo = LinearImage::from_fn(linear_ldr.height(), linear_ldr.width(), 3, |y, x, c| {
        (linear_ldr.get(y, x, c) / shading.get(y, x, 0).max(DIV_EPS)).clamp(0.0, 1.0)
    })?;
    Ok((AlbedoMap::new(albedo)?, ShadingMap::new(shading)?))
}

/// Uniform exposure in stops on `[-3, 3]`.
pub fn sample_exposure<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random_range(EXPOSURE_RANGE.0..=EXPOSURE_RANGE.1)
}

/// Exposure assigned to a dataset sample, derived from its seed alone.
pub fn exposure_for_seed(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ EXPOSURE_SALT);
    sample_exposure(&mut rng)
}

const EXPOSURE_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Like [`exposure_for_seed`], drawing uniformly from `[lo, hi]` instead.
/// The default range reproduces [`exposure_for_seed`] exactly.
pub fn exposure_for_seed_in(seed: u64, (lo, hi): (f64, f64)) -> Result<f64> {
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(Error::InvalidParameter(format!("bad exposure range [{lo}, {hi}]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ EXPOSURE_SALT);
    Ok(rng.random_range(lo..=hi))
}

/// Fraction of pixels with at least one channel clipped at exposure `t`.
pub fn clipped_fraction(scene: &SyntheticScene, t: f64) -> f64 {
    let gain = t.exp2();
    let clipped = scene
        .hdr_gt
        .data()
        .chunks_exact(3)
        .filter(|px| px.iter().any(|&v| gain * v >= 1.0))
        .count();
    clipped as f64 / scene.hdr_gt.pixel_count() as f64
}

const MIN_SCENE_DIM: usize = 16;
const REGIONS: (usize, usize) = (5, 20);
const ALBEDO_RANGE: (f64, f64) = (0.05, 0.95);
const FIELD_FLOOR: f64 = 0.1;
const FIELD_SPAN: f64 = 1.4;
const FIELD_WAVES: usize = 3;
const BLOBS: (usize, usize) = (1, 5);
const BLOB_PEAK: (f64, f64) = (2.0, 50.0);
const BLOB_SIGMA: (f64, f64) = (0.02, 0.06);

/// Procedural scene: Voronoi albedo with 5–20 flat regions, and shading made
/// of a smooth field in `[0.1, 1.5]` plus 1–5 Gaussian light blobs with
/// log-uniform peaks in `[2, 50]`.
pub fn generate_scene(seed: u64, height: usize, width: usize) -> Result<SyntheticScene> {
    if height < MIN_SCENE_DIM || width < MIN_SCENE_DIM {
        return Err(Error::ImageTooSmall(format!(
            "scenes need at least {MIN_SCENE_DIM}x{MIN_SCENE_DIM}, got {height}x{width}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (height as f64, width as f64);

    let n_regions = rng.random_range(REGIONS.0..=REGIONS.1);
    let sites: Vec<([f64; 2], [f64; 3])> = (0..n_regions)
        .map(|_| {
            let pos = [rng.random_range(0.0..h), rng.random_range(0.0..w)];
            let color = [(); 3].map(|_| rng.random_range(ALBEDO_RANGE.0..=ALBEDO_RANGE.1));
            (pos, color)
        })
        .collect();

    // (fy, fx, phase) in cycles per image
    let waves: Vec<[f64; 3]> = (0..FIELD_WAVES)
        .map(|_| {
            [
                rng.random_range(-1.5..1.5),
                rng.random_range(-1.5..1.5),
                rng.random_range(0.0..std::f64::consts::TAU),
            ]
        })
        .collect();

    let n_blobs = rng.random_range(BLOBS.0..=BLOBS.1);
    let min_dim = h.min(w);
    let blobs: Vec<[f64; 4]> = (0..n_blobs)
        .map(|_| {
            let cy = rng.random_range(0..height) as f64;
            let cx = rng.random_range(0..width) as f64;
            let sigma = rng.random_range(BLOB_SIGMA.0..=BLOB_SIGMA.1) * min_dim;
            let peak = rng.random_range(BLOB_PEAK.0.ln()..=BLOB_PEAK.1.ln()).exp();
            [cy, cx, sigma, peak]
        })
        .collect();

    let albedo = LinearImage::from_fn(height, width, 3, |y, x, c| {
        let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
        let mut best = (f64::INFINITY, 0);
        for (i, (pos, _)) in sites.iter().enumerate() {
            let d = (pos[0] - py).powi(2) + (pos[1] - px).powi(2);
            if d < best.0 {
                best = (d, i);
            }
        }
        sites[best.1].1[c]
    })?;

    let shading = LinearImage::from_fn(height, width, 1, |y, x, _| {
        let (yf, xf) = (y as f64, x as f64);
        let wave: f64 = waves
            .iter()
            .map(|[fy, fx, phase]| (std::f64::consts::TAU * (fy * yf / h + fx * xf / w) + phase).cos())
            .sum();
        let u = 0.5 + wave / (2.0 * FIELD_WAVES as f64);
        let field = FIELD_FLOOR + FIELD_SPAN * u * u;
        let light: f64 = blobs
            .iter()
            .map(|[cy, cx, sigma, peak]| {
                let r2 = (yf - cy).powi(2) + (xf - cx).powi(2);
                peak * (-r2 / (2.0 * sigma * sigma)).exp()
            })
            .sum();
        field + light
    })?;

    let albedo_gt = AlbedoMap::bounded(albedo)?;
    let shading_gt = ShadingMap::new(shading)?;
    let hdr_gt = compose(&albedo_gt, &shading_gt)?;
    Ok(SyntheticScene {
        albedo_gt,
        shading_gt,
        hdr_gt,
        seed,
    })
}
