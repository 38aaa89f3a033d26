//! Image containers and pixel-level utilities.
//!
//! Storage is row-major with channels interleaved (`[y][x][c]`). All
//! reference-path arithmetic runs at double precision.

use crate::error::{Error, Result};

/// Rec. 709 luminance weights for linear RGB.
pub const REC709_WEIGHTS: [f64; 3] = [0.2126, 0.7152, 0.0722];

/// A linear (relative-luminance) image with 1 or 3 channels.
///
/// Every value is finite and non-negative; there is no upper bound.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearImage {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl LinearImage {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidParameter(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidParameter(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::DimensionMismatch(format!(
                "expected {} values for {height}x{width}x{channels}, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if let Some((i, v)) = data.iter().enumerate().find(|(_, v)| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidValue(format!(
                "value {v} at index {i} is not finite and non-negative"
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Image filled with a constant value.
    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    /// Builds an image by evaluating `f(y, x, c)` at every sample.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    /// Builds an image from channel-planar (`[c][y][x]`) data.
    pub fn from_planar(height: usize, width: usize, channels: usize, planar: &[f64]) -> Result<Self> {
        if planar.len() != height * width * channels {
            return Err(Error::DimensionMismatch(format!(
                "planar buffer has {} values, expected {}",
                planar.len(),
                height * width * channels
            )));
        }
        let plane = height * width;
        Self::from_fn(height, width, channels, |y, x, c| planar[c * plane + y * width + x])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// The channels of pixel `(y, x)`.
    pub fn pixel(&self, y: usize, x: usize) -> &[f64] {
        let start = (y * self.width + x) * self.channels;
        &self.data[start..start + self.channels]
    }

    /// Channel-planar copy (`[c][y][x]`), the layout the autodiff tape uses.
    pub fn to_planar(&self) -> Vec<f64> {
        let plane = self.pixel_count();
        let mut out = vec![0.0; self.data.len()];
        for (i, px) in self.data.chunks_exact(self.channels).enumerate() {
            for (c, v) in px.iter().enumerate() {
                out[c * plane + i] = *v;
            }
        }
        out
    }

    /// Applies `f` to every value; the result is re-validated.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(
            self.height,
            self.width,
            self.channels,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    /// Extracts one channel as a single-channel image.
    pub fn channel(&self, c: usize) -> Result<Self> {
        if c >= self.channels {
            return Err(Error::InvalidParameter(format!(
                "channel {c} out of range for {}-channel image",
                self.channels
            )));
        }
        Self::new(
            self.height,
            self.width,
            1,
            self.data.iter().skip(c).step_by(self.channels).copied().collect(),
        )
    }

    pub fn same_dims(&self, other: &Self) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub(crate) fn ensure_same_dims(&self, other: &Self, what: &str) -> Result<()> {
        if self.same_dims(other) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "{what}: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )))
        }
    }

    pub(crate) fn ensure_channels(&self, channels: usize, what: &str) -> Result<()> {
        if self.channels == channels {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "{what}: expected {channels} channels, got {}",
                self.channels
            )))
        }
    }

    /// Largest value over all samples.
    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

/// A quantized display-referred image with 3 channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LdrImage {
    height: usize,
    width: usize,
    bit_depth: u32,
    data: Vec<u16>,
}

impl LdrImage {
    pub fn new(height: usize, width: usize, bit_depth: u32, data: Vec<u16>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidParameter(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        if !(1..=16).contains(&bit_depth) {
            return Err(Error::InvalidParameter(format!(
                "bit depth must be in [1, 16], got {bit_depth}"
            )));
        }
        if data.len() != height * width * 3 {
            return Err(Error::DimensionMismatch(format!(
                "expected {} codes, got {}",
                height * width * 3,
                data.len()
            )));
        }
        let max_code = Self::max_code_for(bit_depth);
        if let Some(&v) = data.iter().find(|&&v| u32::from(v) > max_code) {
            return Err(Error::InvalidValue(format!(
                "code {v} exceeds {max_code} for {bit_depth}-bit image"
            )));
        }
        Ok(Self {
            height,
            width,
            bit_depth,
            data,
        })
    }

    fn max_code_for(bit_depth: u32) -> u32 {
        (1u32 << bit_depth) - 1
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bit_depth(&self) -> u32 {
        self.bit_depth
    }

    pub fn max_code(&self) -> u32 {
        Self::max_code_for(self.bit_depth)
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    /// Code values normalized to `[0, 1]`.
    pub fn normalized(&self) -> LinearImage {
        let max = f64::from(self.max_code());
        LinearImage {
            height: self.height,
            width: self.width,
            channels: 3,
            data: self.data.iter().map(|&v| f64::from(v) / max).collect(),
        }
    }
}

/// Forward-difference gradients of an image, same layout as the source.
///
/// Values may be negative, so this is a plain buffer rather than a [`LinearImage`].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGradient {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
}

/// Nearest-rank percentile: the element at index `ceil(p/100 * n) - 1` of
/// the sorted sample, clamped to the valid range.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptySample);
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::InvalidParameter(format!("percentile {p} outside [0, 100]")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("percentile sample".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[nearest_rank_index(sorted.len(), p)])
}

pub(crate) fn nearest_rank_index(n: usize, p: f64) -> usize {
    let rank = (p / 100.0 * n as f64).ceil() as isize - 1;
    rank.clamp(0, n as isize - 1) as usize
}

/// Averages each 2x2 block. Odd trailing rows and columns are dropped.
pub fn downsample_half(img: &LinearImage) -> Result<LinearImage> {
    if img.height < 2 || img.width < 2 {
        return Err(Error::ImageTooSmall(format!(
            "{}x{} cannot be halved",
            img.height, img.width
        )));
    }
    let (h, w) = (img.height / 2, img.width / 2);
    LinearImage::from_fn(h, w, img.channels, |y, x, c| {
        let (sy, sx) = (2 * y, 2 * x);
        (img.get(sy, sx, c) + img.get(sy, sx + 1, c) + img.get(sy + 1, sx, c) + img.get(sy + 1, sx + 1, c))
            * 0.25
    })
}

/// Forward differences; the last column of `gx` and last row of `gy` are zero.
pub fn spatial_gradient(img: &LinearImage) -> ImageGradient {
    let (h, w, ch) = (img.height, img.width, img.channels);
    let mut gx = vec![0.0; img.data.len()];
    let mut gy = vec![0.0; img.data.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let i = (y * w + x) * ch + c;
                if x + 1 < w {
                    gx[i] = img.get(y, x + 1, c) - img.get(y, x, c);
                }
                if y + 1 < h {
                    gy[i] = img.get(y + 1, x, c) - img.get(y, x, c);
                }
            }
        }
    }
    ImageGradient {
        height: h,
        width: w,
        channels: ch,
        gx,
        gy,
    }
}

/// Rec. 709 luminance of a 3-channel image.
pub fn luminance(img: &LinearImage) -> Result<LinearImage> {
    img.ensure_channels(3, "luminance")?;
    let data = img
        .data
        .chunks_exact(3)
        .map(|px| REC709_WEIGHTS[0] * px[0] + REC709_WEIGHTS[1] * px[1] + REC709_WEIGHTS[2] * px[2])
        .collect();
    LinearImage::new(img.height, img.width, 1, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gray(h: usize, w: usize, data: &[f64]) -> LinearImage {
        LinearImage::new(h, w, 1, data.to_vec()).unwrap()
    }

    /// Sorts and indexes by hand, independent of `nearest_rank_index`.
    fn brute_nearest_rank(values: &[f64], p: f64) -> f64 {
        let mut v = values.to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        // smallest element such that at least p% of the sample is <= it
        for (i, x) in v.iter().enumerate() {
            if (i + 1) as f64 * 100.0 >= p * v.len() as f64 {
                return *x;
            }
        }
        *v.last().unwrap()
    }

    #[test]
    fn percentile_examples() {
        assert_eq!(percentile(&[5.0], 50.0).unwrap(), 5.0);
        let ten: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(percentile(&ten, 10.0).unwrap(), brute_nearest_rank(&ten, 10.0));
        assert_eq!(percentile(&ten, 10.0).unwrap(), 1.0);
        assert_eq!(percentile(&[3.0, 1.0, 2.0], 100.0).unwrap(), 3.0);
        assert_eq!(percentile(&[3.0, 1.0, 2.0], 0.0).unwrap(), 1.0);
    }

    #[test]
    fn percentile_rejects_empty() {
        let err = percentile(&[], 50.0).unwrap_err();
        assert_eq!(err.to_string(), "empty sample");
    }

    #[test]
    fn downsample_examples() {
        let out = downsample_half(&gray(2, 2, &[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!((out.height(), out.width()), (1, 1));
        assert_eq!(out.data(), &[2.5]);

        let c = LinearImage::filled(6, 4, 3, 0.7).unwrap();
        let out = downsample_half(&c).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.7).abs() < 1e-15));

        let odd = gray(3, 3, &[1.0, 2.0, 100.0, 3.0, 4.0, 100.0, 100.0, 100.0, 100.0]);
        assert_eq!(downsample_half(&odd).unwrap().data(), &[2.5]);
    }

    #[test]
    fn downsample_too_small() {
        let err = downsample_half(&gray(1, 4, &[1.0; 4])).unwrap_err();
        assert!(err.to_string().starts_with("image too small"));
    }

    #[test]
    fn gradient_examples() {
        let g = spatial_gradient(&LinearImage::filled(3, 3, 3, 2.0).unwrap());
        assert!(g.gx.iter().chain(&g.gy).all(|&v| v == 0.0));

        let g = spatial_gradient(&gray(1, 2, &[0.0, 3.0]));
        assert_eq!(g.gx, vec![3.0, 0.0]);
        assert_eq!(g.gy, vec![0.0, 0.0]);

        let g = spatial_gradient(&gray(2, 2, &[0.0, 1.0, 2.0, 3.0]));
        assert_eq!(g.gx, vec![1.0, 0.0, 1.0, 0.0]);
        assert_eq!(g.gy, vec![2.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn luminance_examples() {
        let img = LinearImage::new(1, 3, 3, vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let y = luminance(&img).unwrap();
        assert!((y.data()[0] - 1.0).abs() < 1e-15);
        assert_eq!(y.data()[1], 0.0);
        assert_eq!(y.data()[2], 0.2126);
        assert!(luminance(&gray(1, 1, &[1.0])).is_err());
    }

    #[test]
    fn rejects_negative_and_nan() {
        assert!(LinearImage::new(1, 1, 1, vec![-1.0]).is_err());
        assert!(LinearImage::new(1, 1, 1, vec![f64::NAN]).is_err());
        assert!(LinearImage::new(1, 1, 2, vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn planar_roundtrip() {
        let img = LinearImage::from_fn(2, 3, 3, |y, x, c| (y * 9 + x * 3 + c) as f64).unwrap();
        let back = LinearImage::from_planar(2, 3, 3, &img.to_planar()).unwrap();
        assert_eq!(img, back);
    }

    proptest! {
        #[test]
        fn downsample_preserves_mean(h in 1usize..8, w in 1usize..8, seed in 0u64..1000) {
            let (h, w) = (2 * h, 2 * w);
            let img = LinearImage::from_fn(h, w, 3, |y, x, c| {
                ((seed as usize * 31 + y * 17 + x * 7 + c * 3) % 97) as f64 / 13.0
            }).unwrap();
            let out = downsample_half(&img).unwrap();
            prop_assert!((out.mean() - img.mean()).abs() < 1e-12);
        }

        #[test]
        fn percentile_monotone_in_p(values in prop::collection::vec(0.0f64..100.0, 1..50), p in 0.0f64..=100.0) {
            let lo = percentile(&values, 0.0).unwrap();
            let hi = percentile(&values, 100.0).unwrap();
            let mid = percentile(&values, p).unwrap();
            prop_assert!(lo <= mid && mid <= hi);
            prop_assert_eq!(mid, brute_nearest_rank(&values, p));
        }

        #[test]
        fn constant_gradient_is_zero(h in 1usize..6, w in 1usize..6, v in 0.0f64..10.0) {
            let g = spatial_gradient(&LinearImage::filled(h, w, 1, v).unwrap());
            prop_assert!(g.gx.iter().chain(&g.gy).all(|&d| d == 0.0));
        }
    }
}
