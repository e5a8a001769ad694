//! Camera response functions and the intensity mapping functions derived
//! from them.
//!
//! A [`Crf`] stores, per channel, the relative log-irradiance `ln E` that
//! produces each of the 256 codes. The same table gives the inverse
//! response directly and the forward response by monotone inversion.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::{quantize, ImageF};
use crate::stack::ExposureStack;

pub const CODES: usize = 256;

/// Default smoothness weight for [`estimate_crf`].
pub const DEFAULT_LAMBDA_SMOOTH: f64 = 50.0;
/// Default number of sampled pixels per channel for [`estimate_crf`].
pub const DEFAULT_SAMPLES: usize = 200;

#[derive(Clone, Debug, PartialEq)]
pub struct Crf {
    tables: [[f64; CODES]; 3],
}

impl Crf {
    /// Validates and wraps three log-irradiance tables (R, G, B).
    pub fn new(tables: [[f64; CODES]; 3]) -> Result<Self> {
        for (channel, t) in tables.iter().enumerate() {
            if let Some(code) = t.iter().position(|v| !v.is_finite()) {
                return Err(Error::Schema(format!(
                    "channel {channel} code {code} is not finite"
                )));
            }
            if let Some(code) = (1..CODES).find(|&z| t[z] <= t[z - 1]) {
                return Err(Error::Monotonicity { channel, code });
            }
        }
        Ok(Self { tables })
    }

    /// Linear sensor, `f(E) = 255 * min(E, 1)` with code-center convention.
    pub fn linear() -> Self {
        Self::gamma(1.0)
    }

    /// Power-law response `f(E) = 255 * E^(1/gamma)`, code-centered.
    pub fn gamma(gamma: f64) -> Self {
        let mut t = [0.0; CODES];
        for (z, v) in t.iter_mut().enumerate() {
            *v = gamma * ((z as f64 + 0.5) / CODES as f64).ln();
        }
        Self { tables: [t; 3] }
    }

    pub fn tables(&self) -> &[[f64; CODES]; 3] {
        &self.tables
    }

    pub fn table(&self, channel: usize) -> &[f64; CODES] {
        &self.tables[channel]
    }

    /// Inverse response at a (possibly fractional) code, as `ln E`.
    pub fn log_irradiance(&self, channel: usize, code: f64) -> f64 {
        let t = &self.tables[channel];
        let s = code.clamp(0.0, 255.0);
        let i = (s.floor() as usize).min(CODES - 2);
        let frac = s - i as f64;
        t[i] + frac * (t[i + 1] - t[i])
    }

    /// Forward response: the continuous code produced by `ln E`, clamped
    /// to `[0, 255]`.
    pub fn code_for(&self, channel: usize, log_e: f64) -> f64 {
        let t = &self.tables[channel];
        if log_e <= t[0] {
            return 0.0;
        }
        if log_e >= t[CODES - 1] {
            return 255.0;
        }
        // first index with t[i] > log_e; t[0] <= log_e < t[255] so 1 <= hi <= 255
        let hi = t.partition_point(|&v| v <= log_e);
        let lo = hi - 1;
        let frac = (log_e - t[lo]) / (t[hi] - t[lo]);
        (lo as f64 + frac).clamp(0.0, 255.0)
    }

    /// Renders a linear irradiance (times exposure) into an 8-bit code.
    pub fn render_code(&self, channel: usize, exposure: f64) -> u8 {
        if exposure <= 0.0 {
            return 0;
        }
        let code = self.code_for(channel, exposure.ln());
        code.round() as u8
    }
}

#[derive(Serialize, Deserialize)]
struct CrfFile {
    version: u32,
    channels: Vec<Vec<f64>>,
}

pub fn load_crf(path: impl AsRef<Path>) -> Result<Crf> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_crf(&text)
}

pub fn parse_crf(text: &str) -> Result<Crf> {
    let file: CrfFile =
        serde_json::from_str(text).map_err(|e| Error::Schema(format!("crf json: {e}")))?;
    if file.version != 1 {
        return Err(Error::Schema(format!(
            "unsupported crf version {}",
            file.version
        )));
    }
    if file.channels.len() != 3 {
        return Err(Error::Schema(format!(
            "expected 3 channels, got {}",
            file.channels.len()
        )));
    }
    let mut tables = [[0.0; CODES]; 3];
    for (dst, src) in tables.iter_mut().zip(&file.channels) {
        if src.len() != CODES {
            return Err(Error::Schema(format!(
                "expected {CODES} entries per channel, got {}",
                src.len()
            )));
        }
        dst.copy_from_slice(src);
    }
    Crf::new(tables)
}

pub fn crf_to_json(crf: &Crf) -> String {
    // serde_json emits the shortest representation that round-trips exactly
    let file = CrfFile {
        version: 1,
        channels: crf.tables.iter().map(|t| t.to_vec()).collect(),
    };
    serde_json::to_string(&file).expect("plain numeric data serializes")
}

pub fn save_crf(crf: &Crf, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, crf_to_json(crf)).map_err(|e| Error::io(path, e))
}

/// Per-channel code-to-code lookup between two exposures.
#[derive(Clone, Debug, PartialEq)]
pub struct Imf {
    lut: [[f64; CODES]; 3],
    ratio: f64,
}

impl Imf {
    pub fn identity() -> Self {
        let mut t = [0.0; CODES];
        for (z, v) in t.iter_mut().enumerate() {
            *v = z as f64;
        }
        Self {
            lut: [t; 3],
            ratio: 1.0,
        }
    }

    /// Wraps a precomputed lut; entries must be non-decreasing and in `[0,255]`.
    pub fn from_lut(lut: [[f64; CODES]; 3], ratio: f64) -> Result<Self> {
        for t in &lut {
            if t.iter().any(|v| !(0.0..=255.0).contains(v))
                || t.windows(2).any(|w| w[1] < w[0])
            {
                return Err(Error::InvalidArgument(
                    "imf lut must be non-decreasing within [0, 255]".into(),
                ));
            }
        }
        Ok(Self { lut, ratio })
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    pub fn lut(&self, channel: usize) -> &[f64; CODES] {
        &self.lut[channel]
    }

    /// Maps a (possibly fractional) code through the lut.
    pub fn map_code(&self, channel: usize, code: f64) -> f64 {
        let t = &self.lut[channel];
        let s = code.clamp(0.0, 255.0);
        let nearest = s.round();
        if (s - nearest).abs() < 1e-4 {
            return t[nearest as usize];
        }
        let i = (s.floor() as usize).min(CODES - 2);
        let frac = s - i as f64;
        t[i] + frac * (t[i + 1] - t[i])
    }
}

/// Intensity mapping for an exposure ratio: `f(f^-1(z) * ratio)`.
pub fn compute_imf(crf: &Crf, ratio: f64) -> Result<Imf> {
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "exposure ratio must be positive, got {ratio}"
        )));
    }
    let shift = ratio.ln();
    let mut lut = [[0.0; CODES]; 3];
    for (c, dst) in lut.iter_mut().enumerate() {
        let t = crf.table(c);
        for z in 0..CODES {
            dst[z] = crf.code_for(c, t[z] + shift);
        }
    }
    Ok(Imf { lut, ratio })
}

/// Applies the per-channel lut to a 3-channel image in `[0,1]`.
pub fn apply_imf(imf: &Imf, img: &ImageF) -> Result<ImageF> {
    if img.channels() != 3 {
        return Err(Error::ChannelMismatch {
            expected: 3,
            actual: img.channels(),
        });
    }
    let mut out = img.clone();
    for c in 0..3 {
        for v in out.plane_mut(c) {
            *v = (imf.map_code(c, *v as f64 * 255.0) / 255.0) as f32;
        }
    }
    Ok(out)
}

fn hat(z: usize) -> f64 {
    z.min(255 - z) as f64
}

/// Picks sample pixels for one channel: one pixel per evenly spaced target
/// code in the reference exposure, topped up from a regular grid.
fn sample_pixels(reference: &[u8], width: usize, samples: usize) -> Vec<usize> {
    let n = reference.len();
    let mut first_at = [usize::MAX; CODES];
    for (i, &z) in reference.iter().enumerate() {
        if first_at[z as usize] == usize::MAX {
            first_at[z as usize] = i;
        }
    }
    let mut chosen = Vec::with_capacity(samples);
    let mut taken = vec![false; n];
    for k in 0..samples {
        let target = (k as f64 * 255.0 / (samples - 1) as f64).round() as usize;
        // nearest available code to the target
        let hit = (0..CODES)
            .flat_map(|d| [target.checked_sub(d), Some(target + d)])
            .flatten()
            .filter(|&z| z < CODES)
            .map(|z| first_at[z])
            .find(|&i| i != usize::MAX && !taken[i]);
        if let Some(i) = hit {
            taken[i] = true;
            chosen.push(i);
        }
    }
    if chosen.len() < samples {
        let stride = ((n as f64 / samples as f64).sqrt().floor() as usize).max(1);
        let height = n / width.max(1);
        'grid: for y in (stride / 2..height).step_by(stride) {
            for x in (stride / 2..width).step_by(stride) {
                let i = y * width + x;
                if !taken[i] {
                    taken[i] = true;
                    chosen.push(i);
                    if chosen.len() == samples {
                        break 'grid;
                    }
                }
            }
        }
    }
    chosen
}

/// Pool-adjacent-violators projection onto non-decreasing sequences.
fn isotonic(values: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(values.len());
    for &v in values {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (m2, n2) = blocks[blocks.len() - 1];
            let (m1, n1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.pop();
            let n = n1 + n2;
            *blocks.last_mut().unwrap() = ((m1 * n1 as f64 + m2 * n2 as f64) / n as f64, n);
        }
    }
    blocks
        .into_iter()
        .flat_map(|(m, n)| std::iter::repeat_n(m, n))
        .collect()
}

fn solve_channel(
    codes: &[Vec<u8>],
    log_times: &[f64],
    width: usize,
    lambda_smooth: f64,
    samples: usize,
) -> Result<[f64; CODES]> {
    let reference = &codes[codes.len() / 2];
    let pixels: Vec<usize> = sample_pixels(reference, width, samples)
        .into_iter()
        .filter(|&i| codes.iter().any(|img| hat(img[i] as usize) > 0.0))
        .collect();
    if pixels.len() < 2 {
        return Err(Error::SingularSystem(
            "too few unsaturated sample pixels".into(),
        ));
    }

    // unknowns: g(z) for z != 128, then ln E for each sample; g(128) = 0
    const ANCHOR: usize = 128;
    let g_index = |z: usize| -> Option<usize> {
        match z.cmp(&ANCHOR) {
            std::cmp::Ordering::Less => Some(z),
            std::cmp::Ordering::Equal => None,
            std::cmp::Ordering::Greater => Some(z - 1),
        }
    };
    let n_g = CODES - 1;
    let dim = n_g + pixels.len();
    let mut normal = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);

    // accumulate w * (sum_k coef_k x_k - b)^2 into the normal equations
    let mut add_row = |terms: &[(Option<usize>, f64)], b: f64, w: f64| {
        for &(ia, ca) in terms {
            let Some(ia) = ia else { continue };
            rhs[ia] += w * ca * b;
            for &(ib, cb) in terms {
                if let Some(ib) = ib {
                    normal[(ia, ib)] += w * ca * cb;
                }
            }
        }
    };

    for (s, &p) in pixels.iter().enumerate() {
        for (img, &lt) in codes.iter().zip(log_times) {
            let z = img[p] as usize;
            let w = hat(z);
            if w > 0.0 {
                add_row(&[(g_index(z), 1.0), (Some(n_g + s), -1.0)], lt, w);
            }
        }
    }
    for z in 1..CODES - 1 {
        let w = lambda_smooth * hat(z);
        add_row(
            &[
                (g_index(z - 1), 1.0),
                (g_index(z), -2.0),
                (g_index(z + 1), 1.0),
            ],
            0.0,
            w,
        );
    }

    let chol = normal
        .cholesky()
        .ok_or_else(|| Error::SingularSystem("normal equations not positive definite".into()))?;
    let x = chol.solve(&rhs);
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem("non-finite solution".into()));
    }

    let raw: Vec<f64> = (0..CODES)
        .map(|z| g_index(z).map_or(0.0, |i| x[i]))
        .collect();
    let mut g = isotonic(&raw);
    const MIN_STEP: f64 = 1e-6;
    for z in 1..CODES {
        if g[z] < g[z - 1] + MIN_STEP {
            g[z] = g[z - 1] + MIN_STEP;
        }
    }
    let offset = g[ANCHOR];
    let mut table = [0.0; CODES];
    for (dst, v) in table.iter_mut().zip(&g) {
        *dst = v - offset;
    }
    Ok(table)
}

/// Recovers a relative CRF from a multi-exposure stack by log-domain least
/// squares with hat weighting and a second-difference smoothness prior,
/// anchored at `g(128) = 0`.
pub fn estimate_crf(stack: &ExposureStack, lambda_smooth: f64, samples: usize) -> Result<Crf> {
    let images = stack.images();
    if images.len() < 2 {
        return Err(Error::InsufficientImages {
            needed: 2,
            got: images.len(),
        });
    }
    if samples < 50 {
        return Err(Error::InvalidArgument(format!(
            "need at least 50 samples, got {samples}"
        )));
    }
    if !(lambda_smooth >= 0.0 && lambda_smooth.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "lambda_smooth must be non-negative, got {lambda_smooth}"
        )));
    }
    let times = stack.exposure_times();
    let first = times[0];
    if times.iter().all(|&t| t == first) {
        return Err(Error::SingularSystem(
            "all exposure times are identical".into(),
        ));
    }
    let log_times: Vec<f64> = times.iter().map(|t| t.ln()).collect();
    let width = images[0].width();

    let mut tables = [[0.0; CODES]; 3];
    for (c, table) in tables.iter_mut().enumerate() {
        let codes: Vec<Vec<u8>> = images.iter().map(|img| channel_codes(img, c)).collect();
        *table = solve_channel(&codes, &log_times, width, lambda_smooth, samples)?;
    }
    Crf::new(tables)
}

fn channel_codes(img: &ImageF, c: usize) -> Vec<u8> {
    img.plane(c).iter().map(|&v| quantize(v)).collect()
}
