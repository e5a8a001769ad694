//! Structural-fidelity score of a fused image against its exposure stack.
//!
//! For every patch the stack yields a desired patch: the strongest contrast
//! among the exposures, with the strength-weighted mean structure. The fused
//! patch is compared against it with an SSIM-style ratio on mean-removed
//! signals, and the local scores are averaged.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imgcore::{luminance, ImageF};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MefSsimConfig {
    pub patch_size: usize,
    pub stride: usize,
    /// Stabilizer in squared code units.
    pub c: f64,
}

impl Default for MefSsimConfig {
    fn default() -> Self {
        Self {
            patch_size: 8,
            stride: 1,
            c: (0.03f64 * 255.0).powi(2),
        }
    }
}

const ZERO_NORM: f64 = 1e-9;

fn to_codes(img: &ImageF) -> Result<Vec<f64>> {
    let y = match img.channels() {
        3 => luminance(img)?,
        _ => img.clone(),
    };
    Ok(y.data().iter().map(|&v| v as f64 * 255.0).collect())
}

/// Mean-removed patch at `(x0, y0)` and its norm.
fn centered_patch(plane: &[f64], w: usize, x0: usize, y0: usize, p: usize, out: &mut [f64]) -> f64 {
    let mut mean = 0.0;
    for dy in 0..p {
        let row = &plane[(y0 + dy) * w + x0..(y0 + dy) * w + x0 + p];
        out[dy * p..(dy + 1) * p].copy_from_slice(row);
        mean += row.iter().sum::<f64>();
    }
    mean /= (p * p) as f64;
    let mut sq = 0.0;
    for v in out.iter_mut() {
        *v -= mean;
        sq += *v * *v;
    }
    sq.sqrt()
}

/// Local score of one patch location.
fn patch_score(sources: &[Vec<f64>], fused: &[f64], w: usize, x0: usize, y0: usize, cfg: &MefSsimConfig) -> f64 {
    let p = cfg.patch_size;
    let n = p * p;
    let mut patches = vec![0.0; sources.len() * n];
    let mut norms = Vec::with_capacity(sources.len());
    for (k, src) in sources.iter().enumerate() {
        norms.push(centered_patch(src, w, x0, y0, p, &mut patches[k * n..(k + 1) * n]));
    }
    let mut fused_patch = vec![0.0; n];
    let fused_norm = centered_patch(fused, w, x0, y0, p, &mut fused_patch);

    let strength = norms.iter().cloned().fold(0.0, f64::max);
    if strength < ZERO_NORM {
        if fused_norm < ZERO_NORM {
            return 1.0;
        }
        return cfg.c / (fused_norm * fused_norm / n as f64 + cfg.c);
    }

    // strength-weighted unit structures reduce to the plain sum of the
    // non-flat centered patches; summing sorted values keeps the result
    // independent of stack order
    let mut structure = vec![0.0; n];
    let mut vals = Vec::with_capacity(sources.len());
    for (i, s) in structure.iter_mut().enumerate() {
        vals.clear();
        vals.extend(
            (0..sources.len())
                .filter(|&k| norms[k] >= ZERO_NORM)
                .map(|k| patches[k * n + i]),
        );
        vals.sort_by(f64::total_cmp);
        *s = vals.iter().sum();
    }
    let s_norm = structure.iter().map(|v| v * v).sum::<f64>().sqrt();
    let (desired_sq, cross) = if s_norm < ZERO_NORM {
        (0.0, 0.0)
    } else {
        let scale = strength / s_norm;
        let cross: f64 = structure
            .iter()
            .zip(&fused_patch)
            .map(|(s, y)| scale * s * y)
            .sum();
        (strength * strength, cross)
    };
    let nf = n as f64;
    (2.0 * cross / nf + cfg.c) / ((desired_sq + fused_norm * fused_norm) / nf + cfg.c)
}

/// Mean local score over all patch locations.
pub fn mef_ssim(stack: &[ImageF], fused: &ImageF, cfg: &MefSsimConfig) -> Result<f64> {
    if stack.len() < 2 {
        return Err(Error::InsufficientImages {
            needed: 2,
            got: stack.len(),
        });
    }
    if cfg.patch_size < 2 || cfg.stride < 1 {
        return Err(Error::InvalidArgument(format!(
            "patch size {} / stride {}",
            cfg.patch_size, cfg.stride
        )));
    }
    let (w, h) = (fused.width(), fused.height());
    if stack.iter().any(|s| s.width() != w || s.height() != h) {
        return Err(Error::DimensionMismatch(
            "stack and fused image differ in size".into(),
        ));
    }
    if w < cfg.patch_size || h < cfg.patch_size {
        return Err(Error::DimensionMismatch(format!(
            "{w}x{h} image is smaller than the {0}x{0} patch",
            cfg.patch_size
        )));
    }
    let sources = stack.iter().map(to_codes).collect::<Result<Vec<_>>>()?;
    let fused = to_codes(fused)?;
    let ys: Vec<usize> = (0..=h - cfg.patch_size).step_by(cfg.stride).collect();
    let xs: Vec<usize> = (0..=w - cfg.patch_size).step_by(cfg.stride).collect();
    let row_sums: Vec<f64> = ys
        .par_iter()
        .map(|&y0| {
            xs.iter()
                .map(|&x0| patch_score(&sources, &fused, w, x0, y0, cfg))
                .sum()
        })
        .collect();
    Ok(row_sums.iter().sum::<f64>() / (xs.len() * ys.len()) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn random(w: usize, h: usize, seed: u64) -> ImageF {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageF::from_fn(w, h, 3, |_, _, _| rng.random_range(0.2..0.8))
    }

    fn noisy(img: &ImageF, sigma: f64, seed: u64) -> ImageF {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, sigma).unwrap();
        let mut out = img.clone();
        for v in out.data_mut() {
            *v += n.sample(&mut rng) as f32;
        }
        out
    }

    #[test]
    fn self_score_is_one() {
        let img = random(24, 20, 1);
        let s = mef_ssim(&[img.clone(), img.clone()], &img, &MefSsimConfig::default()).unwrap();
        assert!((0.99..=1.0 + 1e-12).contains(&s), "{s}");
    }

    #[test]
    fn constant_shift_is_ignored() {
        let img = random(24, 20, 2);
        let cfg = MefSsimConfig::default();
        let base = mef_ssim(&[img.clone(), img.clone()], &img, &cfg).unwrap();
        let shifted = mef_ssim(&[img.clone(), img.clone()], &img.map(|v| v + 0.1), &cfg).unwrap();
        assert!((base - shifted).abs() < 1e-9);
    }

    #[test]
    fn noise_lowers_score() {
        let img = random(24, 24, 3);
        let cfg = MefSsimConfig::default();
        let stack = [img.clone(), img.map(|v| v * 0.5)];
        let clean = mef_ssim(&stack, &img, &cfg).unwrap();
        let mut prev = clean;
        for sigma in [5.0, 10.0, 20.0] {
            let s = mef_ssim(&stack, &noisy(&img, sigma / 255.0, 9), &cfg).unwrap();
            assert!(s < prev, "{s} !< {prev}");
            prev = s;
        }
    }

    #[test]
    fn flat_everything_is_perfect() {
        let img = ImageF::filled(10, 10, 3, 0.3);
        let s = mef_ssim(&[img.clone(), img.map(|v| v * 2.0)], &img, &MefSsimConfig::default()).unwrap();
        assert_eq!(s, 1.0);
    }

    #[test]
    fn errors() {
        let img = random(10, 10, 1);
        let cfg = MefSsimConfig::default();
        assert!(matches!(
            mef_ssim(std::slice::from_ref(&img), &img, &cfg),
            Err(Error::InsufficientImages { .. })
        ));
        assert!(matches!(
            mef_ssim(&[img.clone(), random(11, 10, 1)], &img, &cfg),
            Err(Error::DimensionMismatch(_))
        ));
    }
}
