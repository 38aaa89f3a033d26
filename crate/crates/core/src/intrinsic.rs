//! Closed-form transforms of the intrinsic model `I = A * S` and the bounded
//! inverse representations `x -> 1/(x+1)` used for shading and HDR images.

use crate::error::{Error, Result};
use crate::image::LinearImage;

/// Division guard for implied components.
pub const DIV_EPS: f64 = 1e-6;

/// Default soft-mask threshold.
pub const SOFT_MASK_LAMBDA: f64 = 0.8;

macro_rules! image_newtype {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name(LinearImage);

        impl $name {
            pub fn as_image(&self) -> &LinearImage {
                &self.0
            }

            pub fn into_image(self) -> LinearImage {
                self.0
            }
        }

        impl AsRef<LinearImage> for $name {
            fn as_ref(&self) -> &LinearImage {
                &self.0
            }
        }
    };
}

image_newtype!(
    /// Single-channel non-negative shading.
    ShadingMap
);
image_newtype!(
    /// Three-channel reflectance. Estimated and ground-truth albedo lie in
    /// `[0, 1]`; implied albedo is only guaranteed non-negative.
    AlbedoMap
);
image_newtype!(
    /// Single-channel shading in the inverse domain, values in `(0, 1]`.
    InverseShadingMap
);
image_newtype!(
    /// Three-channel HDR image in the inverse domain, values in `(0, 1]`.
    InverseHdrImage
);
image_newtype!(
    /// Per-channel near-saturation indicator in `[0, 1]`.
    SoftMask
);

impl ShadingMap {
    pub fn new(img: LinearImage) -> Result<Self> {
        img.ensure_channels(1, "shading map")?;
        Ok(Self(img))
    }
}

impl AlbedoMap {
    pub fn new(img: LinearImage) -> Result<Self> {
        img.ensure_channels(3, "albedo map")?;
        Ok(Self(img))
    }

    /// Like [`AlbedoMap::new`] but also requires every value in `[0, 1]`.
    pub fn bounded(img: LinearImage) -> Result<Self> {
        if let Some(v) = img.data().iter().find(|&&v| v > 1.0) {
            return Err(Error::InvalidValue(format!("albedo value {v} exceeds 1")));
        }
        Self::new(img)
    }
}

fn check_inverse_domain(img: &LinearImage) -> Result<()> {
    for (i, &v) in img.data().iter().enumerate() {
        if v == 0.0 {
            return Err(Error::DegenerateInverse(i));
        }
        if v > 1.0 {
            return Err(Error::InvalidValue(format!(
                "inverse-domain value {v} at index {i} exceeds 1"
            )));
        }
    }
    Ok(())
}

impl InverseShadingMap {
    pub fn new(img: LinearImage) -> Result<Self> {
        img.ensure_channels(1, "inverse shading")?;
        check_inverse_domain(&img)?;
        Ok(Self(img))
    }
}

impl InverseHdrImage {
    pub fn new(img: LinearImage) -> Result<Self> {
        img.ensure_channels(3, "inverse HDR image")?;
        check_inverse_domain(&img)?;
        Ok(Self(img))
    }
}

impl SoftMask {
    pub fn new(img: LinearImage) -> Result<Self> {
        img.ensure_channels(3, "soft mask")?;
        if let Some(v) = img.data().iter().find(|&&v| v > 1.0) {
            return Err(Error::InvalidValue(format!("mask value {v} exceeds 1")));
        }
        Ok(Self(img))
    }
}

#[inline]
pub fn to_inverse(x: f64) -> f64 {
    1.0 / (x + 1.0)
}

#[inline]
pub fn from_inverse(d: f64) -> f64 {
    (1.0 - d) / d
}

/// `I_c = A_c * S` at every pixel.
pub fn compose(albedo: &AlbedoMap, shading: &ShadingMap) -> Result<LinearImage> {
    let (a, s) = (albedo.as_image(), shading.as_image());
    a.ensure_same_dims(s, "compose")?;
    LinearImage::from_fn(a.height(), a.width(), 3, |y, x, c| a.get(y, x, c) * s.get(y, x, 0))
}

pub fn shading_to_inverse(shading: &ShadingMap) -> Result<InverseShadingMap> {
    InverseShadingMap::new(shading.as_image().map(to_inverse)?)
}

pub fn inverse_to_shading(inv: &InverseShadingMap) -> Result<ShadingMap> {
    ShadingMap::new(inv.as_image().map(from_inverse)?)
}

pub fn image_to_inverse(img: &LinearImage) -> Result<InverseHdrImage> {
    InverseHdrImage::new(img.map(to_inverse)?)
}

pub fn inverse_to_image(inv: &InverseHdrImage) -> Result<LinearImage> {
    inv.as_image().map(from_inverse)
}

/// Albedo forced by a ground-truth image and an inverse shading:
/// `A_c = I_c / max(S, eps)` with `S = (1 - D) / D`.
pub fn implied_albedo(image: &LinearImage, inv: &InverseShadingMap) -> Result<AlbedoMap> {
    let d = inv.as_image();
    image.ensure_channels(3, "implied albedo")?;
    image.ensure_same_dims(d, "implied albedo")?;
    let img = LinearImage::from_fn(image.height(), image.width(), 3, |y, x, c| {
        image.get(y, x, c) / from_inverse(d.get(y, x, 0)).max(DIV_EPS)
    })?;
    AlbedoMap::new(img)
}

/// Inverse shading forced by an albedo and a ground-truth image:
/// the channel mean of `A_c / (I_c + A_c + eps)`.
pub fn implied_inverse_shading(albedo: &AlbedoMap, image: &LinearImage) -> Result<InverseShadingMap> {
    let a = albedo.as_image();
    image.ensure_channels(3, "implied inverse shading")?;
    a.ensure_same_dims(image, "implied inverse shading")?;
    let img = LinearImage::from_fn(a.height(), a.width(), 1, |y, x, _| {
        (0..3)
            .map(|c| {
                let av = a.get(y, x, c);
                av / (image.get(y, x, c) + av + DIV_EPS)
            })
            .sum::<f64>()
            / 3.0
    })?;
    // a fully black albedo yields D = 0, which has no shading preimage
    InverseShadingMap::new(img)
}

/// `alpha = max(0, I_L - lambda) / (1 - lambda)` per channel.
pub fn soft_mask(linear_ldr: &LinearImage, lambda: f64) -> Result<SoftMask> {
    if !(0.0..1.0).contains(&lambda) {
        return Err(Error::InvalidParameter(format!("lambda must lie in [0, 1), got {lambda}")));
    }
    linear_ldr.ensure_channels(3, "soft mask")?;
    let img = linear_ldr.map(|v| ((v - lambda).max(0.0) / (1.0 - lambda)).min(1.0))?;
    SoftMask::new(img)
}

/// Initial HDR estimate `A_H * (1 - D_H) / D_H`.
pub fn combine_intrinsics(albedo: &AlbedoMap, inv: &InverseShadingMap) -> Result<LinearImage> {
    compose(albedo, &inverse_to_shading(inv)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rgb(px: [f64; 3]) -> LinearImage {
        LinearImage::new(1, 1, 3, px.to_vec()).unwrap()
    }

    fn gray(v: f64) -> LinearImage {
        LinearImage::new(1, 1, 1, vec![v]).unwrap()
    }

    fn albedo(px: [f64; 3]) -> AlbedoMap {
        AlbedoMap::new(rgb(px)).unwrap()
    }

    fn shading(v: f64) -> ShadingMap {
        ShadingMap::new(gray(v)).unwrap()
    }

    fn inv(v: f64) -> InverseShadingMap {
        InverseShadingMap::new(gray(v)).unwrap()
    }

    #[test]
    fn compose_examples() {
        assert_eq!(compose(&albedo([0.5; 3]), &shading(2.0)).unwrap().data(), &[1.0; 3]);
        let a = albedo([0.3, 0.6, 0.9]);
        assert_eq!(compose(&a, &shading(1.0)).unwrap(), *a.as_image());
        assert_eq!(compose(&albedo([1.0, 0.0, 0.25]), &shading(4.0)).unwrap().data(), &[4.0, 0.0, 1.0]);
    }

    #[test]
    fn compose_dim_mismatch() {
        let s = ShadingMap::new(LinearImage::filled(2, 1, 1, 1.0).unwrap()).unwrap();
        assert!(matches!(compose(&albedo([0.5; 3]), &s), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn shading_inverse_examples() {
        assert_eq!(shading_to_inverse(&shading(0.0)).unwrap().as_image().data(), &[1.0]);
        assert_eq!(shading_to_inverse(&shading(1.0)).unwrap().as_image().data(), &[0.5]);
        assert_eq!(inverse_to_shading(&inv(0.5)).unwrap().as_image().data(), &[1.0]);
        assert_eq!(shading_to_inverse(&shading(9.0)).unwrap().as_image().data(), &[0.1]);
    }

    #[test]
    fn zero_inverse_is_degenerate() {
        let err = InverseShadingMap::new(gray(0.0)).unwrap_err();
        assert!(err.to_string().starts_with("degenerate inverse shading"));
        assert!(InverseHdrImage::new(rgb([0.5, 0.0, 0.5])).is_err());
    }

    #[test]
    fn image_inverse_examples() {
        assert_eq!(image_to_inverse(&rgb([0.0; 3])).unwrap().as_image().data(), &[1.0; 3]);
        assert_eq!(image_to_inverse(&rgb([3.0; 3])).unwrap().as_image().data(), &[0.25; 3]);
    }

    #[test]
    fn implied_albedo_examples() {
        let a = implied_albedo(&rgb([2.0; 3]), &inv(0.25)).unwrap();
        for v in a.as_image().data() {
            assert!((v - 2.0 / 3.0).abs() < 1e-15);
        }
        let a = implied_albedo(&rgb([0.0, 1.0, 0.0]), &inv(0.25)).unwrap();
        assert_eq!(a.as_image().data()[0], 0.0);
        assert_eq!(a.as_image().data()[2], 0.0);
    }

    #[test]
    fn implied_inverse_shading_examples() {
        let d = implied_inverse_shading(&albedo([0.4, 0.7, 0.2]), &rgb([0.4, 0.7, 0.2])).unwrap();
        assert!((d.as_image().data()[0] - 0.5).abs() < 1e-5);
        let d = implied_inverse_shading(&albedo([0.5; 3]), &rgb([0.0; 3])).unwrap();
        assert!((d.as_image().data()[0] - 1.0).abs() < 1e-5);
        let d = implied_inverse_shading(&albedo([0.5; 3]), &rgb([1.0; 3])).unwrap();
        assert!((d.as_image().data()[0] - 1.0 / 3.0).abs() < 1e-5);
    }

    #[test]
    fn soft_mask_examples() {
        let m = soft_mask(&rgb([0.8, 1.0, 0.9]), SOFT_MASK_LAMBDA).unwrap();
        let d = m.as_image().data();
        assert_eq!(d[0], 0.0);
        assert_eq!(d[1], 1.0);
        assert!((d[2] - 0.5).abs() < 1e-12);
        assert!(soft_mask(&rgb([0.5; 3]), 1.0).is_err());
    }

    #[test]
    fn combine_examples() {
        assert_eq!(combine_intrinsics(&albedo([0.5; 3]), &inv(0.5)).unwrap().data(), &[0.5; 3]);
        let i = combine_intrinsics(&albedo([1.0; 3]), &inv(0.1)).unwrap();
        for v in i.data() {
            assert!((v - 9.0).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn bijection(s in 0.0f64..1e4, d in 1e-6f64..=1.0) {
            let back = from_inverse(to_inverse(s));
            prop_assert!((back - s).abs() <= 1e-10 * s.max(1e-6));
            let back = to_inverse(from_inverse(d));
            prop_assert!((back - d).abs() <= 1e-10 * d);
        }

        #[test]
        fn inverse_strictly_decreasing(a in 0.0f64..1e3, delta in 1e-3f64..1e3) {
            prop_assert!(to_inverse(a + delta) < to_inverse(a));
        }

        #[test]
        fn implied_albedo_consistency(
            a in prop::array::uniform3(1e-3f64..=1.0),
            s in 1e-6f64..1e4,
        ) {
            let i = compose(&albedo(a), &shading(s)).unwrap();
            let d = shading_to_inverse(&shading(s)).unwrap();
            let back = implied_albedo(&i, &d).unwrap();
            for (got, want) in back.as_image().data().iter().zip(a) {
                prop_assert!((got - want).abs() <= 1e-6 * want);
            }
            let recombined = combine_intrinsics(&back, &d).unwrap();
            for (got, want) in recombined.data().iter().zip(i.data()) {
                prop_assert!((got - want).abs() <= 1e-9 * want.max(1e-12));
            }
        }

        #[test]
        fn soft_mask_bounds(v in prop::array::uniform3(0.0f64..=1.0), lambda in 0.0f64..0.99) {
            let m = soft_mask(&rgb(v), lambda).unwrap();
            for (mv, iv) in m.as_image().data().iter().zip(v) {
                prop_assert!((0.0..=1.0).contains(mv));
                if iv <= lambda { prop_assert_eq!(*mv, 0.0); }
                if iv == 1.0 { prop_assert_eq!(*mv, 1.0); }
            }
        }
    }
}
