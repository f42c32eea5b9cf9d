//! The corrector contract suite.
//!
//! Every corrector implementation — deterministic test doubles and the
//! remote client alike — must satisfy the same three properties. The suite
//! lives in the library (not the test tree) so integration tests, the
//! acceptance suite, and downstream service authors can all run it against
//! their implementation.

use super::{Corrector, CorrectorRequest};
use ndarray::{Array2, Array3};

/// Outcome of one contract check.
#[derive(Debug)]
pub struct ContractReport {
    pub corrector: String,
    pub checks: Vec<(String, Result<(), String>)>,
}

impl ContractReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|(_, r)| r.is_ok())
    }

    pub fn failures(&self) -> Vec<String> {
        self.checks
            .iter()
            .filter_map(|(name, r)| r.as_ref().err().map(|e| format!("{name}: {e}")))
            .collect()
    }
}

/// Test image: a u8-exact gradient so PNG round trips (remote correctors)
/// are lossless.
pub fn contract_image(h: usize, w: usize) -> Array3<f64> {
    Array3::from_shape_fn((h, w, 3), |(y, x, c)| {
        (((y * 31 + x * 7 + c * 83) % 256) as f64) / 255.0
    })
}

/// Centered rectangular mask covering roughly a quarter of the image.
pub fn contract_mask(h: usize, w: usize) -> Array2<bool> {
    let mut m = Array2::from_elem((h, w), false);
    for y in h / 4..3 * h / 4 {
        for x in w / 4..3 * w / 4 {
            m[(y, x)] = true;
        }
    }
    m
}

fn request(h: usize, w: usize, lambda: f64, seed: u64, view: u32) -> CorrectorRequest {
    CorrectorRequest {
        image: contract_image(h, w),
        mask: contract_mask(h, w),
        depth: Array2::from_elem((h, w), 2.0),
        prompt: "contract probe".into(),
        noise_level: lambda,
        rng_seed: seed,
        view_id: view,
        frame: 0,
    }
}

/// Run the contract checks: λ=0 identity, outside-mask immutability, and
/// determinism under a fixed `rng_seed`.
pub fn run_contract_suite(corrector: &dyn Corrector) -> ContractReport {
    let (h, w) = (16, 16);
    let mut checks = Vec::new();

    // 1. λ = 0 must be the identity, bit for bit.
    let req0 = request(h, w, 0.0, 11, 0);
    checks.push((
        "lambda-zero identity".to_string(),
        match corrector.correct(&req0) {
            Err(e) => Err(format!("correct() failed: {e}")),
            Ok(out) => {
                if out.image == req0.image {
                    Ok(())
                } else {
                    let max_err = out
                        .image
                        .iter()
                        .zip(req0.image.iter())
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max);
                    Err(format!("λ=0 output differs from input (max abs {max_err:.3e})"))
                }
            }
        },
    ));

    // 2. Pixels outside the mask are untouched at every λ.
    let req = request(h, w, 0.7, 11, 1);
    checks.push((
        "outside-mask immutability".to_string(),
        match corrector.correct(&req) {
            Err(e) => Err(format!("correct() failed: {e}")),
            Ok(out) => {
                let mut bad = 0usize;
                for ((y, x), m) in req.mask.indexed_iter() {
                    if !*m {
                        for c in 0..3 {
                            if out.image[(y, x, c)] != req.image[(y, x, c)] {
                                bad += 1;
                            }
                        }
                    }
                }
                if bad == 0 {
                    Ok(())
                } else {
                    Err(format!("{bad} channel values changed outside the mask"))
                }
            }
        },
    ));

    // 3. Determinism: identical requests produce identical outputs.
    let req_a = request(h, w, 0.6, 99, 2);
    let req_b = request(h, w, 0.6, 99, 2);
    checks.push((
        "seeded determinism".to_string(),
        match (corrector.correct(&req_a), corrector.correct(&req_b)) {
            (Ok(a), Ok(b)) => {
                if a.image == b.image && a.object_mask == b.object_mask {
                    Ok(())
                } else {
                    Err("identical requests produced different outputs".into())
                }
            }
            (Err(e), _) | (_, Err(e)) => Err(format!("correct() failed: {e}")),
        },
    ));

    ContractReport { corrector: corrector.name().to_string(), checks }
}
