//! Single-image brightening.
//!
//! A dark 8-bit frame is turned into two virtual longer exposures through
//! intensity mapping functions of the camera response, optionally refined
//! by a residual network, and fused back with the input by weighted
//! Laplacian-pyramid exposure fusion. [`mefssim`] scores results against an
//! exposure stack.

mod border;
pub mod crf;
pub mod edgefilter;
pub mod error;
pub mod imgcore;
pub mod meffuse;
pub mod mefssim;
pub mod pipeline;
pub mod pyramid;
pub mod residnet;
pub mod stack;
pub mod virtgen;

pub use crf::{apply_imf, compute_imf, estimate_crf, load_crf, save_crf, Crf, Imf};
pub use edgefilter::{box_mean, wgif_decompose, BaseDetail, WgifParams};
pub use error::{Error, Result};
pub use imgcore::{load_image, luminance, save_png, to_float, to_u8, ImageF, ImageU8};
pub use meffuse::{build_weights, fuse, psi1, psi2, FusionConfig, WeightMaps};
pub use mefssim::{mef_ssim, MefSsimConfig};
pub use pipeline::{brighten, BrightenOutput, PipelineConfig};
pub use pyramid::{build_gaussian, build_laplacian, collapse, Pyramid, PyramidKind};
pub use residnet::{enhance, forward, load_weights, NetWeights, ResidualOutput};
pub use stack::{ExposureStack, Sidecar};
pub use virtgen::{
    generate_virtual, reliability_weight, solve_gamma, CaseMask, VirtGenConfig, VirtualImage,
};
