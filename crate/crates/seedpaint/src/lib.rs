//! Seed-propagated generative inpainting of 3D/4D voxel radiance fields.
//!
//! Given a calibrated multi-view capture, a per-view mask over the region to
//! replace, and a text prompt, this crate rebuilds the scene around new
//! content: one *seed view* is inpainted by a pluggable image corrector, the
//! result is propagated to every other view through a planar depth proxy,
//! and a differentiable voxel radiance field is then optimized with warmup
//! training followed by iterative dataset refreshes until the views agree.
//!
//! The moving parts, bottom to top:
//!
//! - [`scene`] — pinhole cameras, view datasets, neighbor selection and
//!   inverse-distance view weights.
//! - [`field`] — a trainable voxel-grid radiance field (optionally
//!   time-conditioned) with emission-absorption rendering of color and depth,
//!   plus analytic gradients for every grid parameter.
//! - [`depth`] — two-layer depth proxies: harmonically filled background
//!   depth plus a planar constant for the generated object.
//! - [`propagate`] — forward warping between views, weighted blending in
//!   image or latent space, and corrector-based refinement.
//! - [`corrector`] — the image-correction contract, a linear test codec,
//!   deterministic test correctors, and an HTTP client for a remote service.
//! - [`train`] — losses, warmup training, and the iterative dataset update
//!   loop with a decaying noise-level schedule.
//! - [`motion`] — keypoint tracks, 2D rigid/similarity estimation, and seed
//!   video construction for dynamic scenes.
//! - [`fixtures`] — deterministic synthetic scenes with analytic ground
//!   truth, used by the test suite and the `synth` pipeline stage.
//! - [`pipeline`] — the stage orchestrator behind the CLI: synth, fit,
//!   preprocess, train, render, eval, ablate.
//!
//! The book under `book/` walks through the same material chapter by
//! chapter; its code snippets are compiled as doc-tests via [`guide`].

pub mod config;
pub mod corrector;
pub mod depth;
pub mod error;
pub mod field;
pub mod fixtures;
pub mod guide;
pub mod imgio;
pub mod motion;
pub mod pipeline;
pub mod propagate;
pub mod rng;
pub mod scene;
pub mod train;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T, E = Error> = std::result::Result<T, E>;
