//! Fusion weights for the input and its virtual exposures, and the
//! Laplacian-pyramid exposure fusion that consumes them.

use crate::border::reflect101;
use crate::error::{Error, Result};
use crate::imgcore::{luminance, ImageF};
use crate::pyramid::{build_gaussian, build_laplacian, collapse, max_levels, Pyramid, PyramidKind};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FusionConfig {
    /// Boost the input image's weight in its own highlights.
    pub psi1_enabled: bool,
    /// Spread of the well-exposedness Gaussian around 0.5.
    pub sigma_e: f64,
    /// Added to every raw weight so normalization is always defined.
    pub eps_norm: f64,
    /// Pyramid depth; `None` picks `floor(log2(min(w, h))) - 2`.
    pub levels: Option<usize>,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            psi1_enabled: true,
            sigma_e: 0.2,
            eps_norm: 1e-12,
            levels: None,
        }
    }
}

impl FusionConfig {
    fn validate(&self) -> Result<()> {
        if self.sigma_e.is_nan() || self.sigma_e <= 0.0 {
            return Err(Error::InvalidArgument("sigma_e must be positive".into()));
        }
        if self.eps_norm.is_nan() || self.eps_norm <= 0.0 {
            return Err(Error::InvalidArgument("eps_norm must be positive".into()));
        }
        if self.levels == Some(0) {
            return Err(Error::InvalidArgument("levels must be at least 1".into()));
        }
        Ok(())
    }
}

/// Highlight amplification of the input's weight, `y` in code units:
/// 1 up to 128, a smooth cubic step to 2 at 160, 2 above.
pub fn psi1(y: f64) -> f64 {
    if y > 160.0 {
        2.0
    } else if y > 128.0 {
        let h = (y - 128.0) / 32.0;
        1.0 + h * h * (3.0 - 2.0 * h)
    } else {
        1.0
    }
}

/// Population standard deviation of the three channels.
pub fn saturation(rgb: [f64; 3]) -> f64 {
    let mean = (rgb[0] + rgb[1] + rgb[2]) / 3.0;
    (rgb.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0).sqrt()
}

/// Product over channels of a Gaussian centered on mid-gray.
pub fn well_exposedness(rgb: [f64; 3], sigma_e: f64) -> f64 {
    let denom = 2.0 * sigma_e * sigma_e;
    rgb.iter().map(|v| (-(v - 0.5).powi(2) / denom).exp()).product()
}

/// Contrast x saturation x well-exposedness, plus `eps_norm`.
pub fn psi2(img: &ImageF, cfg: &FusionConfig) -> Result<ImageF> {
    let y = luminance(img)?;
    let (w, h) = (img.width(), img.height());
    let yp = y.plane(0);
    let mut out = ImageF::zeros(w, h, 1);
    let dst = out.plane_mut(0);
    for py in 0..h {
        for px in 0..w {
            let p = py * w + px;
            let at = |dx: isize, dy: isize| -> f64 {
                let x = reflect101(px as isize + dx, w);
                let y = reflect101(py as isize + dy, h);
                yp[y * w + x] as f64
            };
            let contrast =
                (at(-1, 0) + at(1, 0) + at(0, -1) + at(0, 1) - 4.0 * yp[p] as f64).abs();
            let rgb = [0, 1, 2].map(|c| img.plane(c)[p] as f64);
            let weight = contrast * saturation(rgb) * well_exposedness(rgb, cfg.sigma_e);
            dst[p] = (weight + cfg.eps_norm) as f32;
        }
    }
    Ok(out)
}

/// Per-image, per-pixel fusion weights.
#[derive(Clone, Debug)]
pub struct WeightMaps {
    pub maps: Vec<ImageF>,
    pub normalized: bool,
}

impl WeightMaps {
    /// Divides by the per-pixel sum (floored at `eps`).
    pub fn normalize(mut self, eps: f64) -> Self {
        let n = self.maps[0].len();
        for p in 0..n {
            let sum: f64 = self.maps.iter().map(|m| m.data()[p] as f64).sum::<f64>().max(eps);
            for m in &mut self.maps {
                let v = m.data()[p] as f64;
                m.data_mut()[p] = (v / sum) as f32;
            }
        }
        self.normalized = true;
        self
    }
}

fn check_same_size(images: &[&ImageF]) -> Result<()> {
    let first = images[0];
    for img in &images[1..] {
        if img.width() != first.width() || img.height() != first.height() {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                first.width(),
                first.height(),
                img.width(),
                img.height()
            )));
        }
    }
    Ok(())
}

/// Weights for `[z1, z2, z3]`: the input gets `psi1(Y1) * psi2`, the
/// virtual images `psi2` alone; normalized to sum to one per pixel.
pub fn build_weights(z1: &ImageF, z2: &ImageF, z3: &ImageF, cfg: &FusionConfig) -> Result<WeightMaps> {
    cfg.validate()?;
    check_same_size(&[z1, z2, z3])?;
    let mut w1 = psi2(z1, cfg)?;
    if cfg.psi1_enabled {
        let y1 = luminance(z1)?;
        for (w, &y) in w1.data_mut().iter_mut().zip(y1.data()) {
            *w = (*w as f64 * psi1(y as f64 * 255.0)) as f32;
        }
    }
    let maps = vec![w1, psi2(z2, cfg)?, psi2(z3, cfg)?];
    Ok(WeightMaps {
        maps,
        normalized: false,
    }
    .normalize(cfg.eps_norm))
}

pub fn default_levels(width: usize, height: usize) -> usize {
    let m = width.min(height).max(1);
    let log2 = (usize::BITS - 1 - m.leading_zeros()) as usize;
    log2.saturating_sub(2).max(1)
}

/// Blends the Laplacian pyramids of the images with the Gaussian pyramids
/// of their weights and collapses the result.
pub fn fuse(stack: &[ImageF], weights: &WeightMaps, cfg: &FusionConfig) -> Result<ImageF> {
    cfg.validate()?;
    if stack.is_empty() || stack.len() != weights.maps.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} images but {} weight maps",
            stack.len(),
            weights.maps.len()
        )));
    }
    if !weights.normalized {
        return Err(Error::InvalidArgument("weights must be normalized".into()));
    }
    let refs: Vec<&ImageF> = stack.iter().chain(&weights.maps).collect();
    check_same_size(&refs)?;
    let (w, h) = (stack[0].width(), stack[0].height());
    let levels = cfg
        .levels
        .unwrap_or_else(|| default_levels(w, h))
        .min(max_levels(w, h));

    let mut blended: Option<Vec<ImageF>> = None;
    for (img, weight) in stack.iter().zip(&weights.maps) {
        let lap = build_laplacian(img, levels)?;
        let gauss = build_gaussian(weight, levels)?;
        let contrib: Vec<ImageF> = lap
            .levels
            .iter()
            .zip(&gauss.levels)
            .map(|(l, g)| {
                let n = l.len();
                let mut out = l.clone();
                for c in 0..l.channels() {
                    for (v, &wt) in out.plane_mut(c).iter_mut().zip(g.plane(0)) {
                        *v *= wt;
                    }
                }
                debug_assert_eq!(n, g.len());
                out
            })
            .collect();
        blended = Some(match blended {
            None => contrib,
            Some(acc) => acc
                .iter()
                .zip(&contrib)
                .map(|(a, b)| a.zip_map(b, |x, y| x + y))
                .collect::<Result<_>>()?,
        });
    }
    let pyr = Pyramid {
        levels: blended.expect("stack is not empty"),
        kind: PyramidKind::Laplacian,
    };
    Ok(collapse(&pyr)?.clamp01())
}

/// Convenience: weights plus fusion for an input and two virtual images.
pub fn fuse_triplet(z1: &ImageF, z2: &ImageF, z3: &ImageF, cfg: &FusionConfig) -> Result<ImageF> {
    let weights = build_weights(z1, z2, z3, cfg)?;
    fuse(&[z1.clone(), z2.clone(), z3.clone()], &weights, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(w: usize, h: usize, seed: u64) -> ImageF {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageF::from_fn(w, h, 3, |_, _, _| rng.random::<f32>())
    }

    #[test]
    fn psi1_values() {
        assert_eq!(psi1(100.0), 1.0);
        assert_eq!(psi1(128.0), 1.0);
        assert_eq!(psi1(144.0), 1.5);
        assert_eq!(psi1(160.0), 2.0);
        assert_eq!(psi1(200.0), 2.0);
        // continuity on [128, 255]
        let mut prev = psi1(128.0);
        for k in 1..=1270 {
            let v = psi1(128.0 + k as f64 * 0.1);
            assert!((v - prev).abs() < 0.01);
            prev = v;
        }
    }

    #[test]
    fn psi2_values() {
        let cfg = FusionConfig::default();
        let gray = ImageF::filled(5, 5, 3, 0.5);
        let p = psi2(&gray, &cfg).unwrap();
        assert!(p.data().iter().all(|&v| v == cfg.eps_norm as f32));

        // a red pixel in a flat red field: zero contrast, std{1,0,0} saturation
        let red = ImageF::from_fn(3, 3, 3, |_, _, c| if c == 0 { 1.0 } else { 0.0 });
        assert!((saturation([1.0, 0.0, 0.0]) - 0.4714).abs() < 1e-4);
        assert_eq!(well_exposedness([0.5; 3], 0.2), 1.0);
        let p = psi2(&red, &cfg).unwrap();
        assert!((p.data()[4] as f64 - cfg.eps_norm).abs() < 1e-15);

        // contrast alone is zero on a flat field, so use a checkerboard
        let checker = ImageF::from_fn(4, 4, 3, |x, y, c| {
            let on = (x + y) % 2 == 0;
            [[0.7, 0.4, 0.3], [0.3, 0.5, 0.6]][on as usize][c]
        });
        let p = psi2(&checker, &cfg).unwrap();
        assert!(p.data().iter().all(|&v| v > 1e-3));
    }

    #[test]
    fn identical_images_get_equal_weights() {
        let img = random(16, 16, 1);
        let cfg = FusionConfig {
            psi1_enabled: false,
            ..Default::default()
        };
        let wm = build_weights(&img, &img, &img, &cfg).unwrap();
        for m in &wm.maps {
            assert!(m.data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-6));
        }
    }

    #[test]
    fn flat_gray_stack_uses_floor() {
        let img = ImageF::filled(8, 8, 3, 0.5);
        let wm = build_weights(&img, &img, &img, &FusionConfig::default()).unwrap();
        for m in &wm.maps {
            assert!(m.data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-6));
        }
    }

    #[test]
    fn highlight_weight_doubles() {
        // equal psi2 everywhere, Y1 above 160 codes
        let img = ImageF::from_fn(6, 6, 3, |x, y, c| {
            let on = (x + y) % 2 == 0;
            [[0.95, 0.8, 0.7], [0.75, 0.7, 0.9]][on as usize][c]
        });
        let wm = build_weights(&img, &img, &img, &FusionConfig::default()).unwrap();
        assert!(wm.maps[0].data().iter().all(|&v| (v - 0.5).abs() < 1e-6));
        assert!(wm.maps[1].data().iter().all(|&v| (v - 0.25).abs() < 1e-6));
    }

    #[test]
    fn weights_sum_to_one_and_psi1_helps_input() {
        let (a, b, c) = (random(20, 14, 1), random(20, 14, 2), random(20, 14, 3));
        let on = build_weights(&a, &b, &c, &FusionConfig::default()).unwrap();
        let off = build_weights(
            &a,
            &b,
            &c,
            &FusionConfig {
                psi1_enabled: false,
                ..Default::default()
            },
        )
        .unwrap();
        for p in 0..a.len() {
            let sum: f32 = on.maps.iter().map(|m| m.data()[p]).sum();
            assert!((sum - 1.0).abs() < 1e-6);
            assert!(on.maps[0].data()[p] >= off.maps[0].data()[p] - 1e-7);
        }
    }

    #[test]
    fn degenerate_weights_reproduce_input() {
        let (a, b, c) = (random(33, 27, 4), random(33, 27, 5), random(33, 27, 6));
        let one = ImageF::filled(33, 27, 1, 1.0);
        let zero = ImageF::zeros(33, 27, 1);
        let wm = WeightMaps {
            maps: vec![one, zero.clone(), zero],
            normalized: true,
        };
        let out = fuse(&[a.clone(), b, c], &wm, &FusionConfig::default()).unwrap();
        assert!(out.max_abs_diff(&a) <= 1.5 / 255.0);
    }

    #[test]
    fn identical_stack_is_idempotent() {
        let img = random(40, 32, 7);
        let out = fuse_triplet(&img, &img, &img, &FusionConfig::default()).unwrap();
        assert!(out.max_abs_diff(&img) <= 1.5 / 255.0);
    }

    #[test]
    fn level_defaults() {
        assert_eq!(default_levels(64, 64), 4);
        assert_eq!(default_levels(5, 100), 1);
        assert_eq!(default_levels(1000, 700), 7);
    }

    #[test]
    fn size_mismatch() {
        let a = random(8, 8, 1);
        let b = random(9, 8, 1);
        assert!(matches!(
            build_weights(&a, &a, &b, &FusionConfig::default()),
            Err(Error::DimensionMismatch(_))
        ));
    }
}
