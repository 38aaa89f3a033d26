use nalgebra::{DMatrix, DVector};

use super::pu21::{self, Variant};
use crate::error::{Error, Result};
use crate::image::{luminance, percentile, LinearImage};

/// Upper end of the mapped ground-truth range.
pub const RANGE_MAX: f64 = 1000.0;
/// Lower clamp of the mapped ground-truth range.
pub const RANGE_MIN: f64 = 1.0;
/// Percentile window, on ground-truth luminance, used for scale alignment.
pub const WINDOW_PERCENTILES: (f64, f64) = (10.0, 90.0);
/// Floor applied before taking logs in the CRF fit.
pub const LOG_FLOOR: f64 = 1e-6;
/// PU21 mean squared errors at or below this report an infinite PSNR.
pub const PSNR_MSE_FLOOR: f64 = 1e-12;

/// Polynomial coefficients `a_0 .. a_3` per RGB channel, in log space.
pub type CrfCoeffs = [[f64; 4]; 3];

pub const IDENTITY_CRF: CrfCoeffs = [[0.0, 1.0, 0.0, 0.0]; 3];

/// Scales `gt` so its maximum is 1000, then clamps below at 1.
pub fn map_to_range(gt: &LinearImage) -> Result<LinearImage> {
    let max = gt.max_value();
    if max <= 0.0 {
        return Err(Error::InvalidValue("ground truth has no positive value".into()));
    }
    let k = RANGE_MAX / max;
    gt.map(|v| (v * k).max(RANGE_MIN))
}

fn window_luminance(img: &LinearImage) -> Result<Vec<f64>> {
    match img.channels() {
        1 => Ok(img.data().to_vec()),
        _ => Ok(luminance(img)?.into_data()),
    }
}

/// Pixel indices whose ground-truth luminance lies within the 10th..90th
/// percentile band, inclusive.
pub fn alignment_window(gt: &LinearImage) -> Result<Vec<usize>> {
    let lum = window_luminance(gt)?;
    let lo = percentile(&lum, WINDOW_PERCENTILES.0)?;
    let hi = percentile(&lum, WINDOW_PERCENTILES.1)?;
    Ok((0..lum.len()).filter(|&i| lum[i] >= lo && lum[i] <= hi).collect())
}

/// [`alignment_window`] of a range-mapped ground truth without the pixels
/// held at the `RANGE_MIN` floor, whose values no longer scale with the
/// scene. Falls back to the full window when every pixel in it is clamped.
pub fn mapped_alignment_window(gt_mapped: &LinearImage) -> Result<Vec<usize>> {
    let window = alignment_window(gt_mapped)?;
    let c = gt_mapped.channels();
    let d = gt_mapped.data();
    let unclamped: Vec<usize> = window
        .iter()
        .copied()
        .filter(|&i| d[i * c..(i + 1) * c].iter().all(|&v| v > RANGE_MIN))
        .collect();
    Ok(if unclamped.is_empty() { window } else { unclamped })
}

/// Least-squares scale `s` minimizing `sum (s pred - gt)^2` over the window.
pub fn align_scale(pred: &LinearImage, gt: &LinearImage) -> Result<f64> {
    pred.ensure_same_dims(gt, "align_scale")?;
    align_scale_over(pred, gt, &alignment_window(gt)?)
}

/// [`align_scale`] restricted to the pixel indices in `window`.
pub fn align_scale_over(pred: &LinearImage, gt: &LinearImage, window: &[usize]) -> Result<f64> {
    pred.ensure_same_dims(gt, "align_scale")?;
    if window.is_empty() {
        return Err(Error::EmptyWindow);
    }
    let c = gt.channels();
    let (p, g) = (pred.data(), gt.data());
    let (mut num, mut den) = (0.0, 0.0);
    for &i in window {
        for k in i * c..(i + 1) * c {
            num += p[k] * g[k];
            den += p[k] * p[k];
        }
    }
    if den <= 0.0 {
        return Err(Error::InvalidValue("prediction is zero inside the alignment window".into()));
    }
    let s = num / den;
    if !(s.is_finite() && s > 0.0) {
        return Err(Error::NonFinite(format!("alignment scale {s}")));
    }
    Ok(s)
}

/// Squared error of `s * pred` against `gt` over the alignment window.
pub fn windowed_error(pred: &LinearImage, gt: &LinearImage, s: f64) -> Result<f64> {
    pred.ensure_same_dims(gt, "windowed_error")?;
    let c = gt.channels();
    Ok(alignment_window(gt)?
        .iter()
        .flat_map(|&i| i * c..(i + 1) * c)
        .map(|k| (s * pred.data()[k] - gt.data()[k]).powi(2))
        .sum())
}

fn log_floor(v: f64) -> f64 {
    v.max(LOG_FLOOR).ln()
}

fn poly(a: &[f64; 4], x: f64) -> f64 {
    a[0] + x * (a[1] + x * (a[2] + x * a[3]))
}

/// Per-channel cubic fit of `ln gt` against `ln pred`.
pub fn fit_crf_correction(pred: &LinearImage, gt: &LinearImage) -> Result<CrfCoeffs> {
    pred.ensure_same_dims(gt, "fit_crf_correction")?;
    pred.ensure_channels(3, "fit_crf_correction")?;
    let n = pred.pixel_count();
    let mut out = IDENTITY_CRF;
    for (c, coeffs) in out.iter_mut().enumerate() {
        let xs: Vec<f64> = (0..n).map(|i| log_floor(pred.data()[3 * i + c])).collect();
        let ys: Vec<f64> = (0..n).map(|i| log_floor(gt.data()[3 * i + c])).collect();
        *coeffs = fit_cubic(&xs, &ys).map_err(|e| match e {
            Error::DegenerateFit(m) => Error::DegenerateFit(format!("channel {c}: {m}")),
            other => other,
        })?;
    }
    Ok(out)
}

/// Least-squares cubic through `(x, y)` via SVD of the Vandermonde matrix.
pub fn fit_cubic(xs: &[f64], ys: &[f64]) -> Result<[f64; 4]> {
    if xs.len() != ys.len() {
        return Err(Error::ShapeMismatch(format!("{} abscissae, {} ordinates", xs.len(), ys.len())));
    }
    if xs.len() < 4 {
        return Err(Error::DegenerateFit(format!("{} samples for 4 coefficients", xs.len())));
    }
    // an exact identity relation has the identity as its unique minimizer
    if xs == ys && distinct_at_least(xs, 4) {
        return Ok([0.0, 1.0, 0.0, 0.0]);
    }
    let a = DMatrix::from_fn(xs.len(), 4, |i, k| xs[i].powi(k as i32));
    let b = DVector::from_column_slice(ys);
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * 1e-10;
    if !(smax > 0.0) || svd.rank(tol) < 4 {
        return Err(Error::DegenerateFit("rank-deficient design matrix".into()));
    }
    let sol = svd.solve(&b, tol).map_err(|e| Error::DegenerateFit(e.to_string()))?;
    let coeffs = [sol[0], sol[1], sol[2], sol[3]];
    if coeffs.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateFit("non-finite coefficients".into()));
    }
    Ok(coeffs)
}

fn distinct_at_least(xs: &[f64], k: usize) -> bool {
    let mut seen: Vec<f64> = Vec::with_capacity(k);
    for &x in xs {
        if !seen.contains(&x) {
            seen.push(x);
            if seen.len() >= k {
                return true;
            }
        }
    }
    false
}

/// Maps `pred` through the fitted log-space polynomials.
pub fn apply_crf_correction(pred: &LinearImage, coeffs: &CrfCoeffs) -> Result<LinearImage> {
    pred.ensure_channels(3, "apply_crf_correction")?;
    if coeffs.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("CRF coefficients".into()));
    }
    let data: Vec<f64> = pred
        .data()
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            let a = &coeffs[k % 3];
            if *a == IDENTITY_CRF[0] {
                v.max(LOG_FLOOR)
            } else {
                poly(a, log_floor(v)).exp()
            }
        })
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("CRF-corrected prediction overflowed".into()));
    }
    LinearImage::new(pred.height(), pred.width(), 3, data)
}

/// Metrics of one prediction under the full protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub scale: f64,
    pub crf_coeffs: CrfCoeffs,
    pub pu21_psnr: f64,
    pub rmse_linear: f64,
    /// Values clamped into the PU21 domain, prediction and ground truth combined.
    pub out_of_domain: usize,
}

/// PSNR of PU21-encoded `pred` against `gt`; infinite for a (near) exact match.
pub fn pu21_psnr(pred: &LinearImage, gt: &LinearImage) -> Result<(f64, usize)> {
    pred.ensure_same_dims(gt, "pu21_psnr")?;
    let (ep, cp) = pu21::encode_image(pred, Variant::BandingGlare);
    let (eg, cg) = pu21::encode_image(gt, Variant::BandingGlare);
    let mse = ep.iter().zip(&eg).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / ep.len() as f64;
    let psnr = if mse <= PSNR_MSE_FLOOR {
        f64::INFINITY
    } else {
        10.0 * (pu21::peak().powi(2) / mse).log10()
    };
    Ok((psnr, cp + cg))
}

/// Root mean squared difference over all values.
pub fn rmse(pred: &LinearImage, gt: &LinearImage) -> Result<f64> {
    pred.ensure_same_dims(gt, "rmse")?;
    let n = pred.data().len() as f64;
    Ok((pred.data().iter().zip(gt.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n).sqrt())
}

/// Range mapping, windowed scale alignment, CRF correction, then PU21-PSNR
/// and linear RMSE against the mapped ground truth.
///
/// The aligned prediction is clamped below at 1 like the mapped ground truth.
pub fn evaluate(pred: &LinearImage, gt: &LinearImage) -> Result<Metrics> {
    pred.ensure_same_dims(gt, "evaluate")?;
    pred.ensure_channels(3, "evaluate")?;
    let gt_m = map_to_range(gt)?;
    let scale = align_scale_over(pred, &gt_m, &mapped_alignment_window(&gt_m)?)?;
    let aligned = pred.map(|v| (scale * v).max(RANGE_MIN))?;
    let crf_coeffs = fit_crf_correction(&aligned, &gt_m)?;
    let corrected = apply_crf_correction(&aligned, &crf_coeffs)?;
    let (pu21_psnr, out_of_domain) = pu21_psnr(&corrected, &gt_m)?;
    let rmse_linear = rmse(&corrected, &gt_m)?;
    Ok(Metrics {
        scale,
        crf_coeffs,
        pu21_psnr,
        rmse_linear,
        out_of_domain,
    })
}
