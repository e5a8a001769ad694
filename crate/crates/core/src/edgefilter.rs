//! Weighted guided image filter and the base/detail split built on it.

use rayon::prelude::*;

use crate::border::reflect101;
use crate::error::{Error, Result};
use crate::imgcore::{luminance, ImageF};

pub const DEFAULT_RADIUS: usize = 16;
pub const DEFAULT_LAMBDA: f64 = 1.0 / 128.0;
/// Regularizer of the edge-aware weight, in intensity^2 units.
pub const EDGE_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WgifParams {
    pub radius: usize,
    pub lambda: f64,
}

impl Default for WgifParams {
    fn default() -> Self {
        Self {
            radius: DEFAULT_RADIUS,
            lambda: DEFAULT_LAMBDA,
        }
    }
}

/// `base + detail` reconstructs the source; `detail` is defined as
/// `source - base`.
#[derive(Clone, Debug)]
pub struct BaseDetail {
    pub base: ImageF,
    pub detail: ImageF,
}

/// Windowed mean over `(2r+1)^2` with reflect-101 borders, via running sums.
pub fn box_mean_f64(src: &[f64], w: usize, h: usize, r: usize) -> Vec<f64> {
    let win = (2 * r + 1) as f64;
    let mut rows = vec![0.0f64; w * h];
    rows.par_chunks_mut(w).enumerate().for_each(|(y, out)| {
        let row = &src[y * w..(y + 1) * w];
        let mut prefix = Vec::with_capacity(w + 2 * r + 1);
        prefix.push(0.0);
        let mut acc = 0.0;
        for i in 0..w + 2 * r {
            acc += row[reflect101(i as isize - r as isize, w)];
            prefix.push(acc);
        }
        for (x, o) in out.iter_mut().enumerate() {
            *o = (prefix[x + 2 * r + 1] - prefix[x]) / win;
        }
    });
    let mut out = vec![0.0f64; w * h];
    let cols: Vec<Vec<f64>> = (0..w)
        .into_par_iter()
        .map(|x| {
            let mut prefix = Vec::with_capacity(h + 2 * r + 1);
            prefix.push(0.0);
            let mut acc = 0.0;
            for i in 0..h + 2 * r {
                acc += rows[reflect101(i as isize - r as isize, h) * w + x];
                prefix.push(acc);
            }
            (0..h)
                .map(|y| (prefix[y + 2 * r + 1] - prefix[y]) / win)
                .collect()
        })
        .collect();
    for (x, col) in cols.into_iter().enumerate() {
        for (y, v) in col.into_iter().enumerate() {
            out[y * w + x] = v;
        }
    }
    out
}

/// Sliding-window mean of every channel.
pub fn box_mean(img: &ImageF, radius: usize) -> Result<ImageF> {
    if radius < 1 {
        return Err(Error::InvalidRadius(radius));
    }
    let (w, h) = (img.width(), img.height());
    let mut out = ImageF::zeros(w, h, img.channels());
    for c in 0..img.channels() {
        let src: Vec<f64> = img.plane(c).iter().map(|&v| v as f64).collect();
        let mean = box_mean_f64(&src, w, h, radius);
        for (d, m) in out.plane_mut(c).iter_mut().zip(mean) {
            *d = m as f32;
        }
    }
    Ok(out)
}

/// Edge-aware weight of every pixel: its local guide variance relative to
/// all others, `(var(p)+eps) * mean_q 1/(var(q)+eps)`.
pub fn edge_aware_weights(guide: &ImageF, radius: usize) -> Result<Vec<f64>> {
    if radius < 1 {
        return Err(Error::InvalidRadius(radius));
    }
    let (w, h) = (guide.width(), guide.height());
    let g: Vec<f64> = guide.plane(0).iter().map(|&v| v as f64).collect();
    let var = local_variance(&g, w, h, radius).1;
    Ok(edge_weights_from_variance(&var))
}

fn local_variance(g: &[f64], w: usize, h: usize, r: usize) -> (Vec<f64>, Vec<f64>) {
    let mean = box_mean_f64(g, w, h, r);
    let sq: Vec<f64> = g.iter().map(|v| v * v).collect();
    let mean_sq = box_mean_f64(&sq, w, h, r);
    let var = mean
        .iter()
        .zip(&mean_sq)
        .map(|(m, s)| (s - m * m).max(0.0))
        .collect();
    (mean, var)
}

fn edge_weights_from_variance(var: &[f64]) -> Vec<f64> {
    let inv_mean = var.iter().map(|v| 1.0 / (v + EDGE_EPS)).sum::<f64>() / var.len() as f64;
    var.iter().map(|v| (v + EDGE_EPS) * inv_mean).collect()
}

/// Splits `img` into an edge-preserving base layer and a detail layer,
/// using the image luminance as shared guidance for all channels.
pub fn wgif_decompose(img: &ImageF, radius: usize, lambda_reg: f64) -> Result<BaseDetail> {
    if radius < 1 {
        return Err(Error::InvalidRadius(radius));
    }
    if !(lambda_reg > 0.0 && lambda_reg.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "lambda must be positive, got {lambda_reg}"
        )));
    }
    let guide = luminance(img)?;
    let (w, h) = (img.width(), img.height());
    let g: Vec<f64> = guide.data().iter().map(|&v| v as f64).collect();
    let (mean_g, var_g) = local_variance(&g, w, h, radius);
    let gamma = edge_weights_from_variance(&var_g);

    let mut base = ImageF::zeros(w, h, 3);
    for c in 0..3 {
        let src: Vec<f64> = img.plane(c).iter().map(|&v| v as f64).collect();
        let mean_i = box_mean_f64(&src, w, h, radius);
        let gi: Vec<f64> = g.iter().zip(&src).map(|(a, b)| a * b).collect();
        let mean_gi = box_mean_f64(&gi, w, h, radius);
        let mut a = vec![0.0; w * h];
        let mut b = vec![0.0; w * h];
        for p in 0..w * h {
            let cov = mean_gi[p] - mean_g[p] * mean_i[p];
            a[p] = cov / (var_g[p] + lambda_reg / gamma[p]);
            b[p] = mean_i[p] - a[p] * mean_g[p];
        }
        let mean_a = box_mean_f64(&a, w, h, radius);
        let mean_b = box_mean_f64(&b, w, h, radius);
        for (p, d) in base.plane_mut(c).iter_mut().enumerate() {
            *d = (mean_a[p] * g[p] + mean_b[p]) as f32;
        }
    }
    let detail = img.zip_map(&base, |s, b| s - b)?;
    Ok(BaseDetail { base, detail })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_mean(img: &ImageF, r: usize) -> ImageF {
        let (w, h) = (img.width(), img.height());
        ImageF::from_fn(w, h, img.channels(), |x, y, c| {
            let mut acc = 0.0f64;
            for dy in -(r as isize)..=r as isize {
                for dx in -(r as isize)..=r as isize {
                    let xx = reflect101(x as isize + dx, w);
                    let yy = reflect101(y as isize + dy, h);
                    acc += img.get(xx, yy, c) as f64;
                }
            }
            (acc / ((2 * r + 1) * (2 * r + 1)) as f64) as f32
        })
    }

    fn random(w: usize, h: usize, seed: u64) -> ImageF {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageF::from_fn(w, h, 3, |_, _, _| rng.random::<f32>())
    }

    #[test]
    fn box_mean_matches_naive() {
        for (w, h, r, seed) in [(13, 9, 1, 1), (20, 17, 3, 2), (6, 5, 8, 3)] {
            let img = random(w, h, seed);
            let fast = box_mean(&img, r).unwrap();
            let slow = naive_mean(&img, r);
            assert!(fast.max_abs_diff(&slow) <= 1e-6);
            let plane: Vec<f64> = img.plane(0).iter().map(|&v| v as f64).collect();
            let fast64 = box_mean_f64(&plane, w, h, r);
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for dy in -(r as isize)..=r as isize {
                        for dx in -(r as isize)..=r as isize {
                            acc += plane[reflect101(y as isize + dy, h) * w + reflect101(x as isize + dx, w)];
                        }
                    }
                    let naive = acc / ((2 * r + 1) * (2 * r + 1)) as f64;
                    assert!((fast64[y * w + x] - naive).abs() <= 1e-10);
                }
            }
        }
    }

    #[test]
    fn box_mean_cases() {
        let c = ImageF::filled(7, 5, 3, 0.25);
        assert!(box_mean(&c, 2).unwrap().max_abs_diff(&c) < 1e-7);
        let one = ImageF::filled(1, 1, 1, 0.8);
        assert_eq!(box_mean(&one, 5).unwrap().data()[0], 0.8);
        let ramp = ImageF::from_fn(5, 5, 1, |x, y, _| (y * 5 + x) as f32);
        // neighbors of the center: 6,7,8,11,12,13,16,17,18
        assert!((box_mean(&ramp, 1).unwrap().get(2, 2, 0) - 12.0).abs() < 1e-6);
        assert!(matches!(box_mean(&ramp, 0), Err(Error::InvalidRadius(0))));
    }

    #[test]
    fn constant_image_has_no_detail() {
        let img = ImageF::filled(24, 20, 3, 0.42);
        let bd = wgif_decompose(&img, 8, DEFAULT_LAMBDA).unwrap();
        let max = bd.detail.data().iter().fold(0.0f32, |m, v| m.max(v.abs()));
        assert!(max < 1e-6, "{max}");
    }

    #[test]
    fn detail_is_source_minus_base() {
        let img = random(32, 32, 5);
        let bd = wgif_decompose(&img, 4, DEFAULT_LAMBDA).unwrap();
        for i in 0..img.data().len() {
            let (s, b, d) = (img.data()[i], bd.base.data()[i], bd.detail.data()[i]);
            assert_eq!(d, s - b);
            assert!((b + d - s).abs() <= f32::EPSILON * s.abs().max(b.abs()));
        }
    }

    #[test]
    fn edge_weights_have_unit_harmonic_mean() {
        let guide = random(40, 30, 9).channel(1);
        let gamma = edge_aware_weights(&guide, 3).unwrap();
        let mean_inv = gamma.iter().map(|g| 1.0 / g).sum::<f64>() / gamma.len() as f64;
        assert!((mean_inv - 1.0).abs() < 1e-9);
        assert!(gamma.iter().all(|g| *g > 0.0));
    }

    #[test]
    fn base_has_less_variation() {
        let tv = |img: &ImageF| -> f64 {
            let mut acc = 0.0;
            for c in 0..3 {
                for y in 0..img.height() {
                    for x in 0..img.width() {
                        if x + 1 < img.width() {
                            acc += (img.get(x + 1, y, c) - img.get(x, y, c)).abs() as f64;
                        }
                        if y + 1 < img.height() {
                            acc += (img.get(x, y + 1, c) - img.get(x, y, c)).abs() as f64;
                        }
                    }
                }
            }
            acc
        };
        for seed in 0..4 {
            let img = random(32, 32, seed);
            let bd = wgif_decompose(&img, 4, DEFAULT_LAMBDA).unwrap();
            assert!(tv(&bd.base) <= tv(&img));
        }
    }

    #[test]
    fn rejects_bad_params() {
        let img = ImageF::zeros(4, 4, 3);
        assert!(matches!(wgif_decompose(&img, 0, 0.1), Err(Error::InvalidRadius(0))));
        assert!(wgif_decompose(&img, 1, 0.0).is_err());
        assert!(matches!(
            wgif_decompose(&ImageF::zeros(4, 4, 1), 1, 0.1),
            Err(Error::ChannelMismatch { .. })
        ));
    }
}
