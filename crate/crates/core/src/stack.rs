//! Exposure stacks: container, exposure sidecar, validation and synthesis.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::crf::Crf;
use crate::error::{Error, Result};
use crate::imgcore::{load_image, to_float, ImageF};

/// Conventional exposure ratios of the synthesized triplet (2 EV apart).
pub const TRIPLET_RATIOS: [f64; 3] = [1.0, 4.0, 16.0];

/// Sidecar file name written next to a synthesized triplet.
pub const SIDECAR_NAME: &str = "exposure.json";

/// Equally sized images with their exposure times, shortest first.
#[derive(Clone, Debug)]
pub struct ExposureStack {
    images: Vec<ImageF>,
    exposure_times: Vec<f64>,
}

impl ExposureStack {
    pub fn new(images: Vec<ImageF>, exposure_times: Vec<f64>) -> Result<Self> {
        if images.len() != exposure_times.len() {
            return Err(Error::Schema(format!(
                "{} images but {} exposure times",
                images.len(),
                exposure_times.len()
            )));
        }
        if let Some(first) = images.first() {
            if images.iter().any(|img| !img.same_shape(first)) {
                return Err(Error::Schema("stack images differ in size".into()));
            }
        }
        if exposure_times.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(Error::Schema("exposure times must be positive".into()));
        }
        Ok(Self {
            images,
            exposure_times,
        })
    }

    pub fn images(&self) -> &[ImageF] {
        &self.images
    }

    pub fn exposure_times(&self) -> &[f64] {
        &self.exposure_times
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn into_images(self) -> Vec<ImageF> {
        self.images
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub exposure_times: Vec<f64>,
}

impl Sidecar {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Schema(format!("exposure sidecar: {e}")))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).expect("plain numeric data serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Loads images and checks sizes plus exposure metadata consistency.
/// Exposure times must be positive and strictly increasing.
pub fn load_stack(paths: &[PathBuf], sidecar: &Sidecar) -> Result<ExposureStack> {
    let times = &sidecar.exposure_times;
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Schema(
            "exposure times must be strictly increasing".into(),
        ));
    }
    let images = paths
        .iter()
        .map(|p| load_image(p).map(|img| to_float(&img)))
        .collect::<Result<Vec<_>>>()?;
    ExposureStack::new(images, times.clone())
}

/// Additive sensor noise applied to the shortest exposure, in linear
/// full-scale units: `sigma^2 = read^2 + shot_gain * signal`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseModel {
    pub read_sigma: f64,
    pub shot_gain: f64,
    pub seed: u64,
}

/// Renders a linear radiance map through `crf` at each exposure time.
/// Results are 8-bit-quantized, like a real capture.
pub fn synth_stack(
    radiance: &ImageF,
    crf: &Crf,
    exposure_times: &[f64],
    noise: Option<NoiseModel>,
) -> Result<ExposureStack> {
    if radiance.channels() != 3 {
        return Err(Error::ChannelMismatch {
            expected: 3,
            actual: radiance.channels(),
        });
    }
    if exposure_times.is_empty() {
        return Err(Error::InvalidArgument("no exposure times".into()));
    }
    let shortest = exposure_times
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();
    let mut images = Vec::with_capacity(exposure_times.len());
    for (k, &t) in exposure_times.iter().enumerate() {
        let mut rng = noise.map(|n| ChaCha8Rng::seed_from_u64(n.seed));
        let mut img = ImageF::zeros(radiance.width(), radiance.height(), 3);
        for c in 0..3 {
            let src = radiance.plane(c);
            let dst = img.plane_mut(c);
            for (d, &e) in dst.iter_mut().zip(src) {
                let mut signal = e as f64 * t;
                if let (Some(n), Some(rng)) = (noise.as_ref(), rng.as_mut()) {
                    if k == shortest {
                        let sigma = (n.read_sigma.powi(2) + n.shot_gain * signal.max(0.0)).sqrt();
                        if sigma > 0.0 {
                            signal += Normal::new(0.0, sigma).unwrap().sample(rng);
                        }
                    }
                }
                *d = crf.render_code(c, signal) as f32 / 255.0;
            }
        }
        images.push(img);
    }
    ExposureStack::new(images, exposure_times.to_vec())
}

/// Deterministic synthetic high-dynamic-range radiance map.
///
/// Dim colored background with textured objects, a smooth gradient and a
/// few bright emitters, so that a 1x exposure through a gamma response is
/// mostly dark with a handful of highlight regions.
pub fn procedural_radiance(width: usize, height: usize, seed: u64) -> ImageF {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (width as f64, height as f64);

    let base_tint: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.6..1.0));
    let grad_angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let base_log = rng.random_range(-7.0..-5.5);

    struct Blob {
        cx: f64,
        cy: f64,
        r: f64,
        log_level: f64,
        tint: [f64; 3],
        freq: f64,
        phase: f64,
        texture: f64,
    }
    let n_blobs = rng.random_range(4..8);
    let mut blobs: Vec<Blob> = (0..n_blobs)
        .map(|_| Blob {
            cx: rng.random_range(0.0..w),
            cy: rng.random_range(0.0..h),
            r: rng.random_range(0.08..0.25) * w.min(h),
            log_level: rng.random_range(-5.0..-2.5),
            tint: std::array::from_fn(|_| rng.random_range(0.3..1.0)),
            freq: rng.random_range(0.15..0.6),
            phase: rng.random_range(0.0..std::f64::consts::TAU),
            texture: rng.random_range(0.2..0.6),
        })
        .collect();
    // bright emitters that stay bright even in the shortest exposure
    for _ in 0..rng.random_range(1..3) {
        blobs.push(Blob {
            cx: rng.random_range(0.0..w),
            cy: rng.random_range(0.0..h),
            r: rng.random_range(0.06..0.14) * w.min(h),
            log_level: rng.random_range(-1.0..-0.3),
            tint: std::array::from_fn(|_| rng.random_range(0.5..1.0)),
            freq: rng.random_range(0.2..0.5),
            phase: rng.random_range(0.0..std::f64::consts::TAU),
            texture: rng.random_range(0.1..0.3),
        });
    }

    ImageF::from_fn(width, height, 3, |x, y, c| {
        let (xf, yf) = (x as f64, y as f64);
        let t = (xf * grad_angle.cos() + yf * grad_angle.sin()) / w.max(h);
        let mut log_e = base_log + 1.5 * t;
        let mut tint = base_tint[c];
        for b in &blobs {
            let d = ((xf - b.cx).powi(2) + (yf - b.cy).powi(2)).sqrt();
            // soft-edged disk
            let m = 1.0 / (1.0 + ((d - b.r) / 1.5).exp());
            if m > 1e-3 {
                let tex = b.texture * ((xf * b.freq + b.phase).sin() * (yf * b.freq * 0.7).cos());
                log_e = log_e * (1.0 - m) + (b.log_level + tex) * m;
                tint = tint * (1.0 - m) + b.tint[c] * m;
            }
        }
        (log_e.exp() * tint) as f32
    })
}

const RAW_MAGIC: &[u8; 4] = b"LFX1";

/// Reads a raw float dump: `LFX1`, u32 height, u32 width, u32 channels,
/// then little-endian f32 samples in height-width-channel order.
pub fn load_raw_float(path: impl AsRef<Path>) -> Result<ImageF> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_raw_float(&bytes)
}

pub fn decode_raw_float(bytes: &[u8]) -> Result<ImageF> {
    if bytes.len() < 16 {
        return Err(Error::Schema("raw float header truncated".into()));
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if &magic != RAW_MAGIC {
        return Err(Error::MagicMismatch(magic));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (h, w, ch) = (word(0), word(1), word(2));
    let count = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(ch))
        .ok_or_else(|| Error::Schema("raw float dimensions overflow".into()))?;
    if bytes.len() != 16 + 4 * count {
        return Err(Error::Schema(format!(
            "raw float payload is {} bytes, expected {}",
            bytes.len() - 16,
            4 * count
        )));
    }
    let mut planar = vec![0.0f32; count];
    for (i, chunk) in bytes[16..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        let (pixel, c) = (i / ch, i % ch);
        planar[c * h * w + pixel] = v;
    }
    ImageF::from_planar(w, h, ch, planar)
}

pub fn encode_raw_float(img: &ImageF) -> Vec<u8> {
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let mut out = Vec::with_capacity(16 + 4 * w * h * ch);
    out.extend_from_slice(RAW_MAGIC);
    for v in [h, w, ch] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for pixel in 0..w * h {
        for c in 0..ch {
            out.extend_from_slice(&img.plane(c)[pixel].to_le_bytes());
        }
    }
    out
}

pub fn save_raw_float(img: &ImageF, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&encode_raw_float(img)))
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgcore::quantize;

    #[test]
    fn constant_radiance_linear_triplet() {
        let radiance = ImageF::filled(8, 8, 3, 0.05);
        let stack = synth_stack(&radiance, &Crf::linear(), &TRIPLET_RATIOS, None).unwrap();
        let means: Vec<f64> = stack
            .images()
            .iter()
            .map(|img| img.data().iter().map(|&v| quantize(v) as f64).sum::<f64>() / img.data().len() as f64)
            .collect();
        // 0.05 * 255 * {1, 4, 16}, clamped, within a code of the code-center convention
        for (m, want) in means.iter().zip([12.75, 51.0, 204.0]) {
            assert!((m - want).abs() <= 1.0, "{m} vs {want}");
        }
    }

    #[test]
    fn noise_only_touches_shortest() {
        let radiance = ImageF::filled(8, 8, 3, 0.05);
        let noise = NoiseModel {
            read_sigma: 0.01,
            shot_gain: 0.0,
            seed: 3,
        };
        let clean = synth_stack(&radiance, &Crf::linear(), &TRIPLET_RATIOS, None).unwrap();
        let noisy = synth_stack(&radiance, &Crf::linear(), &TRIPLET_RATIOS, Some(noise)).unwrap();
        assert_ne!(clean.images()[0], noisy.images()[0]);
        assert_eq!(clean.images()[1], noisy.images()[1]);
        assert_eq!(clean.images()[2], noisy.images()[2]);
        let again = synth_stack(&radiance, &Crf::linear(), &TRIPLET_RATIOS, Some(noise)).unwrap();
        assert_eq!(again.images()[0], noisy.images()[0]);
    }

    #[test]
    fn mismatched_sizes_are_schema_errors() {
        let err = ExposureStack::new(
            vec![ImageF::zeros(4, 4, 3), ImageF::zeros(5, 4, 3)],
            vec![1.0, 4.0],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
        let err = ExposureStack::new(vec![ImageF::zeros(4, 4, 3)], vec![1.0, 4.0]).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn raw_float_round_trip() {
        let img = ImageF::from_fn(3, 2, 3, |x, y, c| (x + 10 * y + 100 * c) as f32);
        let bytes = encode_raw_float(&img);
        assert_eq!(&bytes[..4], b"LFX1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 2);
        // first pixel's channels are interleaved
        assert_eq!(f32::from_le_bytes(bytes[20..24].try_into().unwrap()), 100.0);
        assert_eq!(decode_raw_float(&bytes).unwrap(), img);
        assert!(matches!(
            decode_raw_float(b"NOPE000000000000"),
            Err(Error::MagicMismatch(_))
        ));
    }

    #[test]
    fn procedural_scene_is_deterministic_and_hdr() {
        let a = procedural_radiance(48, 40, 11);
        assert_eq!(a, procedural_radiance(48, 40, 11));
        assert_ne!(a, procedural_radiance(48, 40, 12));
        let max = a.data().iter().cloned().fold(0.0, f32::max);
        let min = a.data().iter().cloned().fold(f32::MAX, f32::min);
        assert!(min > 0.0 && max / min > 100.0);
    }
}
