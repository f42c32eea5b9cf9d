//! Two-layer depth proxies.
//!
//! Per view we build a supervision depth from two layers: the background
//! layer erases the masked region by solving the discrete Laplace equation
//! with the surrounding depth as Dirichlet boundary, and the object layer is
//! a single planar constant taken as the median of the original depth inside
//! the user mask. The composite is the plane inside the object mask and the
//! filled background elsewhere.

use crate::{Error, Result};
use ndarray::Array2;

/// Planar object depth plus harmonically filled background depth.
#[derive(Debug, Clone)]
pub struct TwoLayerDepth {
    pub background_depth: Array2<f64>,
    pub object_plane_depth: f64,
    pub object_mask: Array2<bool>,
    pub composite: Array2<f64>,
}

impl TwoLayerDepth {
    /// Assemble from layers; materializes the piecewise composite.
    pub fn new(
        background_depth: Array2<f64>,
        object_plane_depth: f64,
        object_mask: Array2<bool>,
    ) -> Result<Self> {
        if background_depth.dim() != object_mask.dim() {
            return Err(Error::InvalidArgument(format!(
                "two-layer depth: background {:?} vs mask {:?}",
                background_depth.dim(),
                object_mask.dim()
            )));
        }
        if object_plane_depth <= 0.0 || !object_plane_depth.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "object plane depth must be finite and positive, got {object_plane_depth}"
            )));
        }
        if background_depth.iter().any(|d| !d.is_finite() || *d <= 0.0) {
            return Err(Error::InvalidArgument(
                "background depth must be finite and positive everywhere".into(),
            ));
        }
        let mut composite = background_depth.clone();
        for ((y, x), m) in object_mask.indexed_iter() {
            if *m {
                composite[(y, x)] = object_plane_depth;
            }
        }
        Ok(Self { background_depth, object_plane_depth, object_mask, composite })
    }
}

/// Solve the discrete Laplace equation inside `mask`, treating values outside
/// as Dirichlet boundary. Pixels outside the mask are returned unchanged.
///
/// Red-black SOR; converges to max residual < 1e-6 (relative to the boundary
/// magnitude).
pub fn inpaint_background_depth(depth: &Array2<f64>, mask: &Array2<bool>) -> Result<Array2<f64>> {
    let (h, w) = depth.dim();
    if mask.dim() != (h, w) {
        return Err(Error::InvalidArgument(format!(
            "inpaint_background_depth: depth {:?} vs mask {:?}",
            depth.dim(),
            mask.dim()
        )));
    }
    if mask.iter().all(|m| *m) {
        return Err(Error::InvalidArgument(
            "inpaint_background_depth: mask covers the whole image, no boundary values".into(),
        ));
    }
    if !mask.iter().any(|m| *m) {
        return Ok(depth.clone());
    }

    let mut out = depth.clone();
    // Scale for the convergence test: magnitude of the boundary data.
    let mut scale: f64 = 0.0;
    for ((y, x), m) in mask.indexed_iter() {
        if !*m {
            scale = scale.max(out[(y, x)].abs());
        }
    }
    let tol = 1e-6 * scale.max(1.0);

    // Initialize interior with the boundary mean for faster convergence.
    let mut boundary_sum = 0.0;
    let mut boundary_n = 0usize;
    for ((y, x), m) in mask.indexed_iter() {
        if *m {
            for (ny, nx) in neighbors4(y, x, h, w) {
                if !mask[(ny, nx)] {
                    boundary_sum += out[(ny, nx)];
                    boundary_n += 1;
                }
            }
        }
    }
    let init = if boundary_n > 0 { boundary_sum / boundary_n as f64 } else { 1.0 };
    for ((y, x), m) in mask.indexed_iter() {
        if *m {
            out[(y, x)] = init;
        }
    }

    let interior: Vec<(usize, usize)> = mask
        .indexed_iter()
        .filter(|(_, m)| **m)
        .map(|((y, x), _)| (y, x))
        .collect();

    let omega = 1.9;
    let max_iters = 100_000;
    for _ in 0..max_iters {
        let mut max_residual: f64 = 0.0;
        for parity in 0..2 {
            for &(y, x) in &interior {
                if (y + x) % 2 != parity {
                    continue;
                }
                let mut sum = 0.0;
                let mut n = 0usize;
                for (ny, nx) in neighbors4(y, x, h, w) {
                    sum += out[(ny, nx)];
                    n += 1;
                }
                // Border-adjacent mask pixels use their available neighbors.
                let avg = sum / n as f64;
                let residual = avg - out[(y, x)];
                max_residual = max_residual.max(residual.abs());
                out[(y, x)] += omega * residual;
            }
        }
        if max_residual < tol {
            return Ok(out);
        }
    }
    Err(Error::Diverged(format!(
        "harmonic fill did not reach residual {tol:.1e} in {max_iters} iterations"
    )))
}

fn neighbors4(y: usize, x: usize, h: usize, w: usize) -> impl Iterator<Item = (usize, usize)> {
    let mut v: [(usize, usize); 4] = [(usize::MAX, usize::MAX); 4];
    let mut n = 0;
    if y > 0 {
        v[n] = (y - 1, x);
        n += 1;
    }
    if y + 1 < h {
        v[n] = (y + 1, x);
        n += 1;
    }
    if x > 0 {
        v[n] = (y, x - 1);
        n += 1;
    }
    if x + 1 < w {
        v[n] = (y, x + 1);
        n += 1;
    }
    v.into_iter().take(n)
}

/// Median of the original depth over the user mask — the plane constant for
/// the generated object. The original object's location indicates where the
/// new object sits.
pub fn planar_object_depth(original_depth: &Array2<f64>, user_mask: &Array2<bool>) -> Result<f64> {
    if original_depth.dim() != user_mask.dim() {
        return Err(Error::InvalidArgument(format!(
            "planar_object_depth: depth {:?} vs mask {:?}",
            original_depth.dim(),
            user_mask.dim()
        )));
    }
    let mut vals: Vec<f64> = original_depth
        .iter()
        .zip(user_mask.iter())
        .filter(|(_, m)| **m)
        .map(|(d, _)| *d)
        .collect();
    if vals.is_empty() {
        return Err(Error::InvalidArgument("planar_object_depth: empty mask".into()));
    }
    if vals.iter().any(|d| !d.is_finite()) {
        return Err(Error::InvalidArgument(
            "planar_object_depth: non-finite depth inside mask".into(),
        ));
    }
    vals.sort_by(|a, b| a.total_cmp(b));
    let n = vals.len();
    Ok(if n % 2 == 1 {
        vals[n / 2]
    } else {
        0.5 * (vals[n / 2 - 1] + vals[n / 2])
    })
}

/// Build the two-layer proxy for a view: fill the background depth across the
/// user mask, take the plane constant from the original depth, and composite
/// with the object mask.
///
/// `rendered_depth` is the current field's depth render for this view with
/// background-flagged pixels already substituted (see
/// [`crate::propagate::proxy_depth_map`]).
pub fn build_two_layer_depth(
    view: &crate::scene::TrainingView,
    rendered_depth: &Array2<f64>,
) -> Result<TwoLayerDepth> {
    let object_mask = view
        .object_mask
        .clone()
        .ok_or(Error::MissingObjectMask(view.camera_id))?;
    if !view.user_mask.iter().any(|m| *m) {
        return Err(Error::InvalidArgument(format!(
            "view {}: user mask is empty",
            view.camera_id
        )));
    }
    let background = inpaint_background_depth(rendered_depth, &view.user_mask)?;
    let plane = planar_object_depth(rendered_depth, &view.user_mask)?;
    TwoLayerDepth::new(background, plane, object_mask)
}
