//! Gaussian and Laplacian pyramids with a 5-tap binomial kernel.

use crate::border::reflect101;
use crate::error::{Error, Result};
use crate::imgcore::ImageF;

const KERNEL: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PyramidKind {
    Gaussian,
    Laplacian,
}

#[derive(Clone, Debug)]
pub struct Pyramid {
    pub levels: Vec<ImageF>,
    pub kind: PyramidKind,
}

impl Pyramid {
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

/// Largest level count accepted for a `width x height` image.
pub fn max_levels(width: usize, height: usize) -> usize {
    let m = width.min(height).max(1);
    (usize::BITS - m.leading_zeros()) as usize
}

fn check_levels(img: &ImageF, levels: usize) -> Result<()> {
    if levels == 0 || levels > max_levels(img.width(), img.height()) || img.is_empty() {
        return Err(Error::InvalidLevelCount {
            levels,
            width: img.width(),
            height: img.height(),
        });
    }
    Ok(())
}

/// Blur then keep every other sample; output is `ceil(w/2) x ceil(h/2)`.
pub fn downsample(img: &ImageF) -> ImageF {
    let (w, h) = (img.width(), img.height());
    let (dw, dh) = (w.div_ceil(2), h.div_ceil(2));
    let mut out = ImageF::zeros(dw, dh, img.channels());
    let mut tmp = vec![0.0f64; dw * h];
    for c in 0..img.channels() {
        let src = img.plane(c);
        for y in 0..h {
            let row = &src[y * w..(y + 1) * w];
            for dx in 0..dw {
                let x = (2 * dx) as isize;
                let mut acc = 0.0;
                for (k, kv) in KERNEL.iter().enumerate() {
                    acc += kv * row[reflect101(x + k as isize - 2, w)] as f64;
                }
                tmp[y * dw + dx] = acc;
            }
        }
        let dst = out.plane_mut(c);
        for dy in 0..dh {
            let y = (2 * dy) as isize;
            for dx in 0..dw {
                let mut acc = 0.0;
                for (k, kv) in KERNEL.iter().enumerate() {
                    acc += kv * tmp[reflect101(y + k as isize - 2, h) * dw + dx];
                }
                dst[dy * dw + dx] = acc as f32;
            }
        }
    }
    out
}

/// Zero-insert to `width x height`, then blur with the kernel scaled by 4.
pub fn upsample(img: &ImageF, width: usize, height: usize) -> ImageF {
    let (cw, ch) = (img.width(), img.height());
    assert_eq!(cw, width.div_ceil(2), "coarse width does not match target");
    assert_eq!(ch, height.div_ceil(2), "coarse height does not match target");
    let mut out = ImageF::zeros(width, height, img.channels());
    let mut tmp = vec![0.0f64; width * ch];
    for c in 0..img.channels() {
        let src = img.plane(c);
        for y in 0..ch {
            let row = &src[y * cw..(y + 1) * cw];
            for x in 0..width {
                let mut acc = 0.0;
                for (k, kv) in KERNEL.iter().enumerate() {
                    let j = reflect101(x as isize + k as isize - 2, width);
                    if j.is_multiple_of(2) {
                        acc += kv * row[j / 2] as f64;
                    }
                }
                tmp[y * width + x] = 2.0 * acc;
            }
        }
        let dst = out.plane_mut(c);
        for y in 0..height {
            for x in 0..width {
                let mut acc = 0.0;
                for (k, kv) in KERNEL.iter().enumerate() {
                    let j = reflect101(y as isize + k as isize - 2, height);
                    if j.is_multiple_of(2) {
                        acc += kv * tmp[(j / 2) * width + x];
                    }
                }
                dst[y * width + x] = (2.0 * acc) as f32;
            }
        }
    }
    out
}

pub fn build_gaussian(img: &ImageF, levels: usize) -> Result<Pyramid> {
    check_levels(img, levels)?;
    let mut out = Vec::with_capacity(levels);
    out.push(img.clone());
    for k in 1..levels {
        let next = downsample(&out[k - 1]);
        out.push(next);
    }
    Ok(Pyramid {
        levels: out,
        kind: PyramidKind::Gaussian,
    })
}

pub fn build_laplacian(img: &ImageF, levels: usize) -> Result<Pyramid> {
    let gauss = build_gaussian(img, levels)?;
    let mut out = Vec::with_capacity(levels);
    for k in 0..levels - 1 {
        let fine = &gauss.levels[k];
        let up = upsample(&gauss.levels[k + 1], fine.width(), fine.height());
        out.push(fine.zip_map(&up, |a, b| a - b)?);
    }
    out.push(gauss.levels[levels - 1].clone());
    Ok(Pyramid {
        levels: out,
        kind: PyramidKind::Laplacian,
    })
}

/// Reconstructs the image from a Laplacian pyramid.
pub fn collapse(pyr: &Pyramid) -> Result<ImageF> {
    if pyr.kind != PyramidKind::Laplacian {
        return Err(Error::WrongKind);
    }
    let mut levels = pyr.levels.iter().rev();
    let mut acc = levels
        .next()
        .ok_or_else(|| Error::InvalidArgument("empty pyramid".into()))?
        .clone();
    for detail in levels {
        let up = upsample(&acc, detail.width(), detail.height());
        acc = up.zip_map(detail, |a, b| a + b)?;
    }
    Ok(acc)
}
