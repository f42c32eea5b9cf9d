//! The image-correction contract.
//!
//! A corrector stands in for the generative refinement step: given an image,
//! a mask, a depth conditioning map, a prompt and a noise level λ ∈ [0,1], it
//! returns a corrected image (and possibly a segmentation of the generated
//! object). The generative model itself lives behind this interface — what
//! the pipeline relies on is the contract:
//!
//! - λ = 0 is the identity for every implementation;
//! - pixels outside the mask come back unchanged;
//! - a fixed `rng_seed` makes the output deterministic.
//!
//! [`contract::run_contract_suite`] checks exactly these properties and runs
//! against every implementation in the test suite.

pub mod codec;
pub mod contract;
pub mod remote;

pub use codec::{Codec, LatentCode, PoolingCodec};
pub use remote::RemoteCorrector;

use crate::error::CorrectorError;
use ndarray::{Array2, Array3};

/// A correction request. `noise_level` is the fraction of the denoising
/// horizon re-run by the corrector: 0 leaves the image untouched, 1 is a
/// full re-generation of the masked region.
#[derive(Debug, Clone)]
pub struct CorrectorRequest {
    pub image: Array3<f64>,
    pub mask: Array2<bool>,
    /// Depth conditioning (current field render for this view).
    pub depth: Array2<f64>,
    pub prompt: String,
    pub noise_level: f64,
    pub rng_seed: u64,
    pub view_id: u32,
    pub frame: usize,
}

impl CorrectorRequest {
    pub fn validate(&self) -> Result<(), CorrectorError> {
        if !(0.0..=1.0).contains(&self.noise_level) {
            return Err(CorrectorError::BadRequest(format!(
                "noise_level must be in [0,1], got {}",
                self.noise_level
            )));
        }
        let (h, w, c) = self.image.dim();
        if c != 3 {
            return Err(CorrectorError::BadRequest(format!(
                "image must be H×W×3, got {h}×{w}×{c}"
            )));
        }
        if self.mask.dim() != (h, w) {
            return Err(CorrectorError::BadRequest(format!(
                "mask {:?} does not match image {h}×{w}",
                self.mask.dim()
            )));
        }
        if self.depth.dim() != (h, w) {
            return Err(CorrectorError::BadRequest(format!(
                "depth {:?} does not match image {h}×{w}",
                self.depth.dim()
            )));
        }
        Ok(())
    }
}

/// A corrector's answer: the corrected image, plus the segmented object mask
/// when the implementation can provide one.
#[derive(Debug, Clone)]
pub struct Correction {
    pub image: Array3<f64>,
    pub object_mask: Option<Array2<bool>>,
}

/// The correction contract. Implementations must be safe to call from
/// multiple threads at once.
pub trait Corrector: Send + Sync {
    fn correct(&self, request: &CorrectorRequest) -> Result<Correction, CorrectorError>;

    /// Short identifier for logs and run metadata.
    fn name(&self) -> &str;
}

/// Identity corrector: returns the input unchanged at every noise level.
#[derive(Debug, Default)]
pub struct IdentityCorrector;

impl Corrector for IdentityCorrector {
    fn correct(&self, request: &CorrectorRequest) -> Result<Correction, CorrectorError> {
        request.validate()?;
        Ok(Correction { image: request.image.clone(), object_mask: None })
    }

    fn name(&self) -> &str {
        "identity"
    }
}

/// Replace pixels outside `mask` with `original`'s. Corrector callers apply
/// this regardless of what an implementation returned, which is what makes
/// background immutability hold end to end.
pub fn composite_outside_mask(
    corrected: &Array3<f64>,
    original: &Array3<f64>,
    mask: &Array2<bool>,
) -> Array3<f64> {
    let mut out = original.clone();
    for ((y, x), m) in mask.indexed_iter() {
        if *m {
            for ch in 0..3 {
                out[(y, x, ch)] = corrected[(y, x, ch)];
            }
        }
    }
    out
}
