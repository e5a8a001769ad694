//! Virtual long-exposure images synthesized from a single dark frame.
//!
//! Well-exposed pixels (every channel at or above `xi_low`) go through the
//! intensity mapping function channel by channel. Pixels with any
//! under-exposed channel take the base layer amplified by a single gain
//! fitted against the mapping function, plus the unamplified detail layer,
//! so noise in the detail layer is not boosted.

use crate::crf::{compute_imf, Crf, Imf};
use crate::edgefilter::{wgif_decompose, BaseDetail, WgifParams};
use crate::error::{Error, Result};
use crate::imgcore::ImageF;

#[derive(Clone, Debug, PartialEq)]
pub struct VirtGenConfig {
    /// Codes below this are unreliable under the mapping function.
    pub xi_low: f64,
    /// Codes at or above this get the full reliability weight.
    pub xi_high: f64,
    pub ratios: Vec<f64>,
}

impl Default for VirtGenConfig {
    fn default() -> Self {
        Self {
            xi_low: 5.0,
            xi_high: 60.0,
            ratios: vec![4.0, 16.0],
        }
    }
}

impl VirtGenConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.xi_low && self.xi_low < self.xi_high && self.xi_high <= 255.0) {
            return Err(Error::InvalidArgument(format!(
                "need 0 <= xi_low < xi_high <= 255, got {} and {}",
                self.xi_low, self.xi_high
            )));
        }
        if self.ratios.iter().any(|r| !(*r > 1.0 && r.is_finite()))
            || self.ratios.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(Error::InvalidArgument(format!(
                "ratios must be strictly increasing and > 1, got {:?}",
                self.ratios
            )));
        }
        Ok(())
    }
}

/// Reliability of a code for fitting the base-layer gain: 0 below
/// `xi_low`, a cubic ramp up to `xi_high`, 128 above.
pub fn reliability_weight(z: f64, cfg: &VirtGenConfig) -> f64 {
    if z < cfg.xi_low {
        0.0
    } else if z < cfg.xi_high {
        let h = (cfg.xi_high - z) / (cfg.xi_high - cfg.xi_low);
        128.0 - 3.0 * h * h + 2.0 * h * h * h
    } else {
        128.0
    }
}

/// Per-pixel flag, `true` when some channel code is below `xi_low`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CaseMask {
    width: usize,
    height: usize,
    mask: Vec<bool>,
}

impl CaseMask {
    pub fn from_image(z1: &ImageF, xi_low: f64) -> Result<Self> {
        if z1.channels() != 3 {
            return Err(Error::ChannelMismatch {
                expected: 3,
                actual: z1.channels(),
            });
        }
        let mask = (0..z1.len())
            .map(|p| (0..3).any(|c| (z1.plane(c)[p] as f64) * 255.0 < xi_low))
            .collect();
        Ok(Self {
            width: z1.width(),
            height: z1.height(),
            mask,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn is_case2(&self, p: usize) -> bool {
        self.mask[p]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.mask
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}

/// Weighted least-squares gain mapping the base layer of every case-2
/// pixel onto its mapped code, in 0-255 code units, clamped to `[1, 255]`.
pub fn solve_gamma(
    z1: &ImageF,
    bd: &BaseDetail,
    imf: &Imf,
    mask: &CaseMask,
    cfg: &VirtGenConfig,
) -> Result<f64> {
    if !z1.same_shape(&bd.base) || !z1.same_shape(&bd.detail) {
        return Err(Error::DimensionMismatch(
            "image and base/detail layers differ".into(),
        ));
    }
    if mask.width != z1.width() || mask.height != z1.height() {
        return Err(Error::DimensionMismatch("mask size differs".into()));
    }
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for c in 0..3 {
        let (src, base, detail) = (z1.plane(c), bd.base.plane(c), bd.detail.plane(c));
        for p in (0..z1.len()).filter(|&p| mask.mask[p]) {
            let z = src[p] as f64 * 255.0;
            let w = reliability_weight(z, cfg);
            if w == 0.0 {
                continue;
            }
            let mapped = imf.map_code(c, z);
            let b = base[p] as f64 * 255.0;
            let e = detail[p] as f64 * 255.0;
            num += w * b * (mapped - e);
            den += w * b * b;
        }
    }
    if den <= 1e-12 || !num.is_finite() {
        return Err(Error::EmptyCase2);
    }
    Ok((num / den).clamp(1.0, 255.0))
}

/// Assembles a virtual image from its two per-case rules for a given gain.
pub fn synthesize(
    z1: &ImageF,
    bd: &BaseDetail,
    imf: &Imf,
    mask: &CaseMask,
    gamma: f64,
) -> ImageF {
    let mut out = ImageF::zeros(z1.width(), z1.height(), 3);
    for c in 0..3 {
        let (src, base, detail) = (z1.plane(c), bd.base.plane(c), bd.detail.plane(c));
        let dst = out.plane_mut(c);
        for p in 0..src.len() {
            let v = if mask.mask[p] {
                gamma * base[p] as f64 + detail[p] as f64
            } else {
                imf.map_code(c, src[p] as f64 * 255.0) / 255.0
            };
            dst[p] = v.clamp(0.0, 1.0) as f32;
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct VirtualImage {
    pub image: ImageF,
    pub ratio: f64,
    /// Gain applied to case-2 base layers.
    pub gamma: f64,
    /// True when no case-2 pixel carried weight and `gamma = ratio`.
    pub gamma_fallback: bool,
}

fn virtual_from_parts(
    z1: &ImageF,
    bd: &BaseDetail,
    mask: &CaseMask,
    crf: &Crf,
    ratio: f64,
    cfg: &VirtGenConfig,
) -> Result<VirtualImage> {
    let imf = compute_imf(crf, ratio)?;
    let (gamma, gamma_fallback) = match solve_gamma(z1, bd, &imf, mask, cfg) {
        Ok(g) => (g, false),
        Err(Error::EmptyCase2) => (ratio, true),
        Err(e) => return Err(e),
    };
    Ok(VirtualImage {
        image: synthesize(z1, bd, &imf, mask, gamma),
        ratio,
        gamma,
        gamma_fallback,
    })
}

/// One virtual image at `ratio` times the exposure of `z1`.
pub fn generate_virtual(
    z1: &ImageF,
    crf: &Crf,
    ratio: f64,
    cfg: &VirtGenConfig,
    wgif: WgifParams,
) -> Result<ImageF> {
    Ok(generate_virtual_detailed(z1, crf, ratio, cfg, wgif)?.image)
}

pub fn generate_virtual_detailed(
    z1: &ImageF,
    crf: &Crf,
    ratio: f64,
    cfg: &VirtGenConfig,
    wgif: WgifParams,
) -> Result<VirtualImage> {
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(Error::InvalidArgument(format!("bad ratio {ratio}")));
    }
    let mask = CaseMask::from_image(z1, cfg.xi_low)?;
    let bd = wgif_decompose(z1, wgif.radius, wgif.lambda)?;
    virtual_from_parts(z1, &bd, &mask, crf, ratio, cfg)
}

/// All virtual images of `cfg.ratios`, sharing one decomposition.
pub fn generate_virtuals(
    z1: &ImageF,
    crf: &Crf,
    cfg: &VirtGenConfig,
    wgif: WgifParams,
) -> Result<Vec<VirtualImage>> {
    cfg.validate()?;
    let mask = CaseMask::from_image(z1, cfg.xi_low)?;
    let bd = wgif_decompose(z1, wgif.radius, wgif.lambda)?;
    cfg.ratios
        .iter()
        .map(|&r| virtual_from_parts(z1, &bd, &mask, crf, r, cfg))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crf::CODES;
    use crate::imgcore::quantize;

    fn cfg() -> VirtGenConfig {
        VirtGenConfig::default()
    }

    #[test]
    fn weight_values() {
        let c = cfg();
        assert_eq!(reliability_weight(4.0, &c), 0.0);
        assert_eq!(reliability_weight(60.0, &c), 128.0);
        assert_eq!(reliability_weight(32.5, &c), 127.5);
        assert_eq!(reliability_weight(5.0, &c), 127.0);
        assert_eq!(reliability_weight(200.0, &c), 128.0);
        // the middle branch tends to 128 at xi_high
        assert!((reliability_weight(59.999999, &c) - 128.0).abs() < 1e-6);
    }

    #[test]
    fn config_validation() {
        assert!(cfg().validate().is_ok());
        let mut bad = cfg();
        bad.xi_low = 70.0;
        assert!(bad.validate().is_err());
        let mut bad = cfg();
        bad.ratios = vec![16.0, 4.0];
        assert!(bad.validate().is_err());
        let mut bad = cfg();
        bad.ratios = vec![1.0];
        assert!(bad.validate().is_err());
    }

    fn one_pixel(codes: [f64; 3], base: [f64; 3], detail: [f64; 3]) -> (ImageF, BaseDetail) {
        let img = |v: [f64; 3]| {
            ImageF::from_planar(1, 1, 3, v.iter().map(|x| (x / 255.0) as f32).collect()).unwrap()
        };
        (
            img(codes),
            BaseDetail {
                base: img(base),
                detail: img(detail),
            },
        )
    }

    #[test]
    fn closed_form_single_term() {
        // only green carries weight: w=128, b=20, e=10, mapped=80
        let (z1, bd) = one_pixel([2.0, 100.0, 3.0], [2.0, 20.0, 3.0], [0.0, 10.0, 0.0]);
        let lut: [f64; CODES] = std::array::from_fn(|z| (z as f64).min(80.0));
        let imf = Imf::from_lut([lut; 3], 4.0).unwrap();
        let mask = CaseMask::from_image(&z1, 5.0).unwrap();
        assert!(mask.is_case2(0));
        let g = solve_gamma(&z1, &bd, &imf, &mask, &cfg()).unwrap();
        assert!((g - 3.5).abs() < 1e-4, "{g}");
    }

    #[test]
    fn zero_weights_fall_back() {
        let (z1, bd) = one_pixel([1.0, 2.0, 3.0], [1.0, 2.0, 3.0], [0.0; 3]);
        let mask = CaseMask::from_image(&z1, 5.0).unwrap();
        assert!(matches!(
            solve_gamma(&z1, &bd, &Imf::identity(), &mask, &cfg()),
            Err(Error::EmptyCase2)
        ));
    }

    #[test]
    fn duplicated_pixels_give_same_gain() {
        let lut: [f64; CODES] = std::array::from_fn(|z| (z as f64 * 2.0).min(255.0));
        let imf = Imf::from_lut([lut; 3], 2.0).unwrap();
        let (z1, bd) = one_pixel([2.0, 90.0, 40.0], [2.0, 80.0, 30.0], [0.0, 10.0, 10.0]);
        let mask = CaseMask::from_image(&z1, 5.0).unwrap();
        let single = solve_gamma(&z1, &bd, &imf, &mask, &cfg()).unwrap();
        let dup = |img: &ImageF| ImageF::from_fn(2, 1, 3, |_, _, c| img.get(0, 0, c));
        let z2 = dup(&z1);
        let bd2 = BaseDetail {
            base: dup(&bd.base),
            detail: dup(&bd.detail),
        };
        let mask2 = CaseMask::from_image(&z2, 5.0).unwrap();
        let double = solve_gamma(&z2, &bd2, &imf, &mask2, &cfg()).unwrap();
        assert!((single - double).abs() < 1e-12);
    }

    fn bright_gradient() -> ImageF {
        ImageF::from_fn(24, 16, 3, |x, y, c| (10 + x * 4 + y * 3 + c * 7) as f32 / 255.0)
    }

    #[test]
    fn identity_ratio_without_case2_is_identity() {
        let z1 = bright_gradient();
        let out = generate_virtual(&z1, &Crf::gamma(2.2), 1.0, &cfg(), WgifParams::default()).unwrap();
        assert_eq!(out, z1);
    }

    #[test]
    fn linear_crf_quadruples() {
        let z1 = ImageF::from_fn(16, 16, 3, |x, y, c| (6 + x + y + c) as f32 / 255.0);
        let out = generate_virtual(&z1, &Crf::linear(), 4.0, &cfg(), WgifParams::default()).unwrap();
        for (a, b) in z1.data().iter().zip(out.data()) {
            let want = (4.0 * quantize(*a) as f64 + 1.5).min(255.0);
            assert!((quantize(*b) as f64 - want).abs() <= 1.0, "{a} -> {b}");
        }
    }

    #[test]
    fn black_stays_black() {
        let z1 = ImageF::zeros(12, 12, 3);
        let v = generate_virtual_detailed(&z1, &Crf::gamma(2.2), 16.0, &cfg(), WgifParams::default())
            .unwrap();
        assert!(v.gamma_fallback);
        assert_eq!(v.gamma, 16.0);
        assert!(v.image.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn output_is_bounded_and_finite() {
        let z1 = ImageF::from_fn(20, 20, 3, |x, y, c| ((x * 37 + y * 11 + c * 5) % 256) as f32 / 255.0);
        for ratio in [4.0, 16.0] {
            let out = generate_virtual(&z1, &Crf::gamma(2.2), ratio, &cfg(), WgifParams { radius: 3, lambda: 0.01 }).unwrap();
            assert!(out.data().iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn case1_is_monotone() {
        let z1 = ImageF::from_fn(32, 1, 3, |x, _, c| (8 + 7 * x + c) as f32 / 255.0);
        let out = generate_virtual(&z1, &Crf::gamma(2.2), 4.0, &cfg(), WgifParams::default()).unwrap();
        for c in 0..3 {
            assert!(out.plane(c).windows(2).all(|w| w[1] >= w[0]));
        }
    }
}
