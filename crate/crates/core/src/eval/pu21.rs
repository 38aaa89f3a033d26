//! PU21 perceptually uniform encoding, `banding_glare` variant.
//!
//! Coefficients are transcribed verbatim from the PU21 reference
//! implementation (Mantiuk and Azimi, "PU21: A novel perceptually uniform
//! encoding for adapting existing quality metrics for HDR", PCS 2021;
//! `pu21_encoder.m` in the authors' MATLAB release, and the `PU` class of
//! the `cvvdp` Python package, version 0.5.7, which carries the same values).

use crate::image::LinearImage;

/// `[p0 .. p6]` of `V = p6 * (((p0 + p1 Y^p3) / (1 + p2 Y^p3))^p4 - p5)`.
pub const BANDING_GLARE: [f64; 7] = [
    0.353487901,
    0.3734658629,
    8.277049286e-05,
    0.9062562627,
    0.09150303166,
    0.9099517204,
    596.3148142,
];

/// Valid absolute luminance range in cd/m^2.
pub const L_MIN: f64 = 0.005;
pub const L_MAX: f64 = 10000.0;

/// Luminance used as the PSNR peak, in cd/m^2.
pub const PEAK_LUMINANCE: f64 = 100.0;

/// Encoding variants published with PU21; only one is implemented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Variant {
    #[default]
    BandingGlare,
}

/// Encodes one luminance value, clamping it into the valid domain first.
pub fn encode(y: f64) -> f64 {
    let p = &BANDING_GLARE;
    let y = y.clamp(L_MIN, L_MAX);
    let yp = y.powf(p[3]);
    p[6] * (((p[0] + p[1] * yp) / (1.0 + p[2] * yp)).powf(p[4]) - p[5])
}

/// `encode(PEAK_LUMINANCE)`.
pub fn peak() -> f64 {
    encode(PEAK_LUMINANCE)
}

/// Whether `y` lies outside the encoding's valid domain.
pub fn out_of_domain(y: f64) -> bool {
    !(L_MIN..=L_MAX).contains(&y)
}

/// Per-value encoding of an image together with the count of clamped values.
pub fn encode_image(img: &LinearImage, variant: Variant) -> (Vec<f64>, usize) {
    let Variant::BandingGlare = variant;
    let clamped = img.data().iter().filter(|&&v| out_of_domain(v)).count();
    (img.data().iter().map(|&v| encode(v)).collect(), clamped)
}
