//! Inference for the residual enhancement network.
//!
//! The network is a plain stack of 3x3 convolutions with per-channel PReLU
//! between layers and a linear final layer. It maps the dark input to a
//! residual that is added to a virtual image. Batch normalization is folded
//! into the kernels by the exporter, so inference only sees conv + bias.
//!
//! Weight file layout (little-endian, no padding):
//!
//! ```text
//! "LFW1" | u32 version=1 | u8 tag_len | tag (utf-8) | u32 layer_count
//! per layer: u32 out_ch | u32 in_ch | u32 kh | u32 kw | u8 has_prelu
//!            f32 kernel[out][in][kh][kw] | f32 bias[out] | f32 slopes[out] if has_prelu
//! ```

use std::path::Path;

use rayon::prelude::*;

use crate::border::reflect101;
use crate::error::{Error, Result};
use crate::imgcore::ImageF;

pub const MAGIC: &[u8; 4] = b"LFW1";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub out_ch: usize,
    pub in_ch: usize,
    pub kh: usize,
    pub kw: usize,
    /// Row-major `[out][in][kh][kw]`.
    pub kernel: Vec<f32>,
    pub bias: Vec<f32>,
    pub prelu: Option<Vec<f32>>,
}

impl ConvLayer {
    #[inline]
    fn weight(&self, o: usize, i: usize, ky: usize, kx: usize) -> f32 {
        self.kernel[((o * self.in_ch + i) * self.kh + ky) * self.kw + kx]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetWeights {
    pub exposure_tag: String,
    pub layers: Vec<ConvLayer>,
}

impl NetWeights {
    /// Checks the layer chain: 3 channels in, 3 out, 3x3 kernels, PReLU on
    /// every layer but the last.
    pub fn validate(&self) -> Result<()> {
        let chain = |msg: String| Err(Error::ShapeChain(msg));
        if self.layers.is_empty() {
            return chain("no layers".into());
        }
        if self.layers[0].in_ch != 3 {
            return chain(format!("first layer takes {} channels", self.layers[0].in_ch));
        }
        let last = self.layers.len() - 1;
        for (k, l) in self.layers.iter().enumerate() {
            if l.kh != 3 || l.kw != 3 {
                return chain(format!("layer {k} kernel is {}x{}", l.kh, l.kw));
            }
            if l.kernel.len() != l.out_ch * l.in_ch * l.kh * l.kw || l.bias.len() != l.out_ch {
                return chain(format!("layer {k} parameter count"));
            }
            if k > 0 && l.in_ch != self.layers[k - 1].out_ch {
                return chain(format!(
                    "layer {k} takes {} channels but layer {} gives {}",
                    l.in_ch,
                    k - 1,
                    self.layers[k - 1].out_ch
                ));
            }
            match (&l.prelu, k == last) {
                (Some(_), true) => return chain("final layer has an activation".into()),
                (None, false) => return chain(format!("layer {k} lacks PReLU slopes")),
                (Some(s), false) if s.len() != l.out_ch => {
                    return chain(format!("layer {k} slope count"))
                }
                _ => {}
            }
            let params = l.kernel.iter().chain(&l.bias).chain(l.prelu.iter().flatten());
            if params.into_iter().any(|v| !v.is_finite()) {
                return chain(format!("layer {k} has non-finite parameters"));
            }
        }
        if self.layers[last].out_ch != 3 {
            return chain(format!("final layer gives {} channels", self.layers[last].out_ch));
        }
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Radius of the receptive field in pixels.
    pub fn halo(&self) -> usize {
        self.layers.len()
    }

    /// Single linear layer whose output equals its input.
    pub fn identity(tag: &str) -> Self {
        let mut kernel = vec![0.0; 3 * 3 * 9];
        for c in 0..3 {
            kernel[(c * 3 + c) * 9 + 4] = 1.0;
        }
        Self {
            exposure_tag: tag.to_string(),
            layers: vec![ConvLayer {
                out_ch: 3,
                in_ch: 3,
                kh: 3,
                kw: 3,
                kernel,
                bias: vec![0.0; 3],
                prelu: None,
            }],
        }
    }

    /// All-zero network of the given depth and hidden width.
    pub fn zeros(tag: &str, depth: usize, width: usize) -> Self {
        assert!(depth >= 1);
        let layers = (0..depth)
            .map(|k| {
                let in_ch = if k == 0 { 3 } else { width };
                let out_ch = if k + 1 == depth { 3 } else { width };
                ConvLayer {
                    out_ch,
                    in_ch,
                    kh: 3,
                    kw: 3,
                    kernel: vec![0.0; out_ch * in_ch * 9],
                    bias: vec![0.0; out_ch],
                    prelu: (k + 1 < depth).then(|| vec![0.25; out_ch]),
                }
            })
            .collect();
        Self {
            exposure_tag: tag.to_string(),
            layers,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.exposure_tag.len() as u8);
        out.extend_from_slice(self.exposure_tag.as_bytes());
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for l in &self.layers {
            for v in [l.out_ch, l.in_ch, l.kh, l.kw] {
                out.extend_from_slice(&(v as u32).to_le_bytes());
            }
            out.push(l.prelu.is_some() as u8);
            for v in l.kernel.iter().chain(&l.bias).chain(l.prelu.iter().flatten()) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
        if &magic != MAGIC {
            return Err(Error::MagicMismatch(magic));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::VersionUnsupported(version));
        }
        let tag_len = r.take(1)?[0] as usize;
        let exposure_tag = std::str::from_utf8(r.take(tag_len)?)
            .map_err(|_| Error::Schema("exposure tag is not utf-8".into()))?
            .to_string();
        let count = r.u32()? as usize;
        let mut layers = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let (out_ch, in_ch, kh, kw) = (r.dim()?, r.dim()?, r.dim()?, r.dim()?);
            let has_prelu = match r.take(1)?[0] {
                0 => false,
                1 => true,
                other => return Err(Error::Schema(format!("has_prelu byte {other}"))),
            };
            let n = out_ch
                .checked_mul(in_ch)
                .and_then(|n| n.checked_mul(kh))
                .and_then(|n| n.checked_mul(kw))
                .ok_or_else(|| Error::Schema("layer size overflow".into()))?;
            let kernel = r.floats(n)?;
            let bias = r.floats(out_ch)?;
            let prelu = if has_prelu {
                Some(r.floats(out_ch)?)
            } else {
                None
            };
            layers.push(ConvLayer {
                out_ch,
                in_ch,
                kh,
                kw,
                kernel,
                bias,
                prelu,
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::Schema(format!(
                "{} trailing bytes after the last layer",
                bytes.len() - r.pos
            )));
        }
        let net = Self {
            exposure_tag,
            layers,
        };
        net.validate()?;
        Ok(net)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Schema("weight file truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn dim(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f32>> {
        let len = n
            .checked_mul(4)
            .ok_or_else(|| Error::Schema("layer size overflow".into()))?;
        Ok(self
            .take(len)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<NetWeights> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    NetWeights::from_bytes(&bytes)
}

pub fn save_weights(weights: &NetWeights, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, weights.to_bytes()).map_err(|e| Error::io(path, e))
}

/// One 3x3 same-size convolution with reflect-101 padding, plus the
/// optional activation.
fn conv_layer(layer: &ConvLayer, input: &[Vec<f32>], w: usize, h: usize) -> Vec<Vec<f32>> {
    let (pw, ph) = (w + 2, h + 2);
    let padded: Vec<Vec<f32>> = input
        .par_iter()
        .map(|plane| {
            let mut p = vec![0.0f32; pw * ph];
            for y in 0..ph {
                let sy = reflect101(y as isize - 1, h);
                for x in 0..pw {
                    p[y * pw + x] = plane[sy * w + reflect101(x as isize - 1, w)];
                }
            }
            p
        })
        .collect();

    (0..layer.out_ch)
        .into_par_iter()
        .map(|o| {
            let mut acc = vec![layer.bias[o]; w * h];
            for (i, src) in padded.iter().enumerate() {
                for ky in 0..3 {
                    for kx in 0..3 {
                        let k = layer.weight(o, i, ky, kx);
                        if k == 0.0 {
                            continue;
                        }
                        for y in 0..h {
                            let row = &src[(y + ky) * pw + kx..(y + ky) * pw + kx + w];
                            let dst = &mut acc[y * w..(y + 1) * w];
                            for (d, s) in dst.iter_mut().zip(row) {
                                *d += k * s;
                            }
                        }
                    }
                }
            }
            if let Some(slopes) = &layer.prelu {
                let a = slopes[o];
                for v in &mut acc {
                    if *v < 0.0 {
                        *v *= a;
                    }
                }
            }
            acc
        })
        .collect()
}

/// Raw residual predicted from the dark input (not clamped).
pub fn forward(weights: &NetWeights, z1: &ImageF) -> Result<ImageF> {
    if z1.channels() != 3 {
        return Err(Error::ChannelMismatch {
            expected: 3,
            actual: z1.channels(),
        });
    }
    let (w, h) = (z1.width(), z1.height());
    let mut planes: Vec<Vec<f32>> = (0..3).map(|c| z1.plane(c).to_vec()).collect();
    for layer in &weights.layers {
        planes = conv_layer(layer, &planes, w, h);
    }
    ImageF::from_planar(w, h, 3, planes.concat())
}

/// Same result as [`forward`], computed tile by tile with a halo equal to
/// the receptive-field radius.
pub fn forward_tiled(weights: &NetWeights, z1: &ImageF, tile: usize) -> Result<ImageF> {
    if tile == 0 {
        return Err(Error::InvalidArgument("tile size must be positive".into()));
    }
    let (w, h) = (z1.width(), z1.height());
    let halo = weights.halo();
    let mut out = ImageF::zeros(w, h, 3);
    for ty in (0..h).step_by(tile) {
        for tx in (0..w).step_by(tile) {
            let (x0, y0) = (tx.saturating_sub(halo), ty.saturating_sub(halo));
            let x1 = (tx + tile + halo).min(w);
            let y1 = (ty + tile + halo).min(h);
            let res = forward(weights, &z1.crop(x0, y0, x1 - x0, y1 - y0))?;
            for c in 0..3 {
                for y in ty..(ty + tile).min(h) {
                    for x in tx..(tx + tile).min(w) {
                        out.set(x, y, c, res.get(x - x0, y - y0, c));
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct ResidualOutput {
    /// Network output clamped to `[-1, 1]`.
    pub residual: ImageF,
    /// `clamp(z_i + residual, 0, 1)`.
    pub enhanced: ImageF,
}

/// Adds the predicted residual to a virtual image.
pub fn enhance(weights: &NetWeights, z1: &ImageF, z_i: &ImageF) -> Result<ResidualOutput> {
    if !z1.same_shape(z_i) || z1.channels() != 3 {
        return Err(Error::DimensionMismatch(format!(
            "input {}x{}x{} vs virtual {}x{}x{}",
            z1.width(),
            z1.height(),
            z1.channels(),
            z_i.width(),
            z_i.height(),
            z_i.channels()
        )));
    }
    let residual = forward(weights, z1)?.map(|v| v.clamp(-1.0, 1.0));
    let enhanced = z_i.zip_map(&residual, |a, r| (a + r).clamp(0.0, 1.0))?;
    Ok(ResidualOutput { residual, enhanced })
}
