//! End-to-end brightening: virtual exposures, optional residual
//! enhancement, weighting and multi-scale fusion.

use crate::crf::Crf;
use crate::edgefilter::WgifParams;
use crate::error::{Error, Result};
use crate::imgcore::{to_float, to_u8, ImageF};
use crate::meffuse::{build_weights, fuse, FusionConfig, WeightMaps};
use crate::residnet::{enhance, NetWeights};
use crate::virtgen::{generate_virtuals, VirtGenConfig, VirtualImage};

#[derive(Clone, Debug, Default)]
pub struct PipelineConfig {
    pub virt: VirtGenConfig,
    pub wgif: WgifParams,
    pub fusion: FusionConfig,
}

/// Tag a weight file must carry to enhance the virtual image at `ratio`.
pub fn exposure_tag(ratio: f64) -> String {
    format!("x{ratio}")
}

#[derive(Clone, Debug)]
pub struct BrightenOutput {
    pub fused: ImageF,
    pub virtuals: Vec<VirtualImage>,
    /// CNN-enhanced virtual images, when weights were supplied.
    pub enhanced: Vec<Option<ImageF>>,
    /// The three 8-bit-quantized images that were fused, input first.
    pub fusion_inputs: [ImageF; 3],
    pub weights: WeightMaps,
}

/// Brightens `z1`. `nets[i]`, when present, enhances the virtual image at
/// `cfg.virt.ratios[i]` and must carry the matching exposure tag.
pub fn brighten(
    z1: &ImageF,
    crf: &Crf,
    nets: &[Option<NetWeights>],
    cfg: &PipelineConfig,
) -> Result<BrightenOutput> {
    if cfg.virt.ratios.len() != 2 {
        return Err(Error::InvalidArgument(format!(
            "fusion takes exactly two virtual exposures, got {} ratios",
            cfg.virt.ratios.len()
        )));
    }
    if nets.len() > cfg.virt.ratios.len() {
        return Err(Error::InvalidArgument("more weight sets than ratios".into()));
    }
    for (net, &ratio) in nets.iter().zip(&cfg.virt.ratios) {
        if let Some(net) = net {
            let expected = exposure_tag(ratio);
            if net.exposure_tag != expected {
                return Err(Error::TagMismatch {
                    expected,
                    found: net.exposure_tag.clone(),
                });
            }
        }
    }

    let virtuals = generate_virtuals(z1, crf, &cfg.virt, cfg.wgif)?;
    let mut enhanced = Vec::with_capacity(virtuals.len());
    for (i, v) in virtuals.iter().enumerate() {
        enhanced.push(match nets.get(i).and_then(Option::as_ref) {
            Some(net) => Some(enhance(net, z1, &v.image)?.enhanced),
            None => None,
        });
    }

    // fuse 8-bit renditions so written intermediates reproduce the result
    let requant = |img: &ImageF| to_float(&to_u8(img));
    let pick = |i: usize| enhanced[i].as_ref().unwrap_or(&virtuals[i].image);
    let fusion_inputs = [requant(z1), requant(pick(0)), requant(pick(1))];
    let weights = build_weights(
        &fusion_inputs[0],
        &fusion_inputs[1],
        &fusion_inputs[2],
        &cfg.fusion,
    )?;
    let fused = fuse(&fusion_inputs, &weights, &cfg.fusion)?;
    Ok(BrightenOutput {
        fused,
        virtuals,
        enhanced,
        fusion_inputs,
        weights,
    })
}
