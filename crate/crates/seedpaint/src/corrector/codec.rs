//! Latent codecs.
//!
//! Projection blending can run in a latent space instead of image space. The
//! codec abstracts the encoder/decoder pair; [`PoolingCodec`] is the built-in
//! stand-in: a linear two-band pyramid (4× average pool plus the 2× pooled
//! residual). Linearity makes latent blending provably equal to image
//! blending, which the propagation tests exploit, and the round trip is exact
//! on images that are constant over 2×2 blocks.

use crate::{Error, Result};
use ndarray::Array3;

/// Opaque latent representation: a coarse band and a residual band.
#[derive(Debug, Clone)]
pub struct LatentCode {
    pub coarse: Array3<f64>,
    pub residual: Array3<f64>,
    /// Decoded image shape `(h, w)`.
    pub shape: (usize, usize),
}

impl LatentCode {
    /// Convex combination of codes (shapes must agree).
    pub fn weighted_sum(codes: &[LatentCode], weights: &[f64]) -> Result<LatentCode> {
        if codes.is_empty() || codes.len() != weights.len() {
            return Err(Error::InvalidArgument(
                "weighted_sum: need equally many codes and weights (≥ 1)".into(),
            ));
        }
        let shape = codes[0].shape;
        let mut coarse = Array3::zeros(codes[0].coarse.dim());
        let mut residual = Array3::zeros(codes[0].residual.dim());
        for (code, w) in codes.iter().zip(weights) {
            if code.shape != shape {
                return Err(Error::InvalidArgument("weighted_sum: code shape mismatch".into()));
            }
            coarse.scaled_add(*w, &code.coarse);
            residual.scaled_add(*w, &code.residual);
        }
        Ok(LatentCode { coarse, residual, shape })
    }
}

/// Encoder/decoder pair used for latent-space blending.
pub trait Codec: Send + Sync {
    fn encode(&self, image: &Array3<f64>) -> Result<LatentCode>;
    fn decode(&self, code: &LatentCode) -> Result<Array3<f64>>;
    /// Declared `decode(encode(x))` max-abs error on band-limited inputs.
    fn round_trip_tolerance(&self) -> f64;
}

/// Linear two-band codec: coarse = 4× average pool, residual = 2× average
/// pool of what the coarse band misses. Exact on 2×2-block-constant images.
#[derive(Debug, Default)]
pub struct PoolingCodec;

impl PoolingCodec {
    fn check_dims(image: &Array3<f64>) -> Result<(usize, usize)> {
        let (h, w, c) = image.dim();
        if c != 3 {
            return Err(Error::InvalidArgument(format!("codec expects H×W×3, got {h}×{w}×{c}")));
        }
        if h % 4 != 0 || w % 4 != 0 || h == 0 || w == 0 {
            return Err(Error::InvalidArgument(format!(
                "codec needs dimensions divisible by 4, got {h}×{w}"
            )));
        }
        Ok((h, w))
    }
}

impl Codec for PoolingCodec {
    fn encode(&self, image: &Array3<f64>) -> Result<LatentCode> {
        let (h, w) = Self::check_dims(image)?;
        let coarse = avg_pool(image, 4);
        let upsampled = upsample_nearest(&coarse, 4, (h, w));
        let mut diff = image.clone();
        diff -= &upsampled;
        let residual = avg_pool(&diff, 2);
        Ok(LatentCode { coarse, residual, shape: (h, w) })
    }

    fn decode(&self, code: &LatentCode) -> Result<Array3<f64>> {
        let (h, w) = code.shape;
        let mut out = upsample_nearest(&code.coarse, 4, (h, w));
        out += &upsample_nearest(&code.residual, 2, (h, w));
        Ok(out)
    }

    fn round_trip_tolerance(&self) -> f64 {
        1e-6
    }
}

fn avg_pool(image: &Array3<f64>, k: usize) -> Array3<f64> {
    let (h, w, c) = image.dim();
    let (ph, pw) = (h / k, w / k);
    let mut out = Array3::zeros((ph, pw, c));
    let norm = 1.0 / (k * k) as f64;
    for y in 0..ph {
        for x in 0..pw {
            for ch in 0..c {
                let mut s = 0.0;
                for dy in 0..k {
                    for dx in 0..k {
                        s += image[(y * k + dy, x * k + dx, ch)];
                    }
                }
                out[(y, x, ch)] = s * norm;
            }
        }
    }
    out
}

fn upsample_nearest(image: &Array3<f64>, k: usize, target: (usize, usize)) -> Array3<f64> {
    let (h, w) = target;
    let c = image.dim().2;
    let mut out = Array3::zeros((h, w, c));
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                out[(y, x, ch)] = image[(y / k, x / k, ch)];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;
    use rand::Rng;

    /// Band-limited fixture: constant over 2×2 blocks.
    fn block2_image(rng: &mut impl Rng, h: usize, w: usize) -> Array3<f64> {
        let mut img = Array3::zeros((h, w, 3));
        for by in 0..h / 2 {
            for bx in 0..w / 2 {
                let v = [
                    rng.random_range(0.0..1.0),
                    rng.random_range(0.0..1.0),
                    rng.random_range(0.0..1.0),
                ];
                for dy in 0..2 {
                    for dx in 0..2 {
                        for c in 0..3 {
                            img[(by * 2 + dy, bx * 2 + dx, c)] = v[c];
                        }
                    }
                }
            }
        }
        img
    }

    #[test]
    fn constant_image_round_trips_exactly() {
        let codec = PoolingCodec;
        let img = Array3::from_elem((8, 8, 3), 0.37);
        let code = codec.encode(&img).unwrap();
        let back = codec.decode(&code).unwrap();
        for (a, b) in img.iter().zip(back.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn band_limited_round_trip_below_tolerance() {
        let codec = PoolingCodec;
        let mut rng = derive_rng(31, &["codec", "bandlimited"]);
        for _ in 0..10 {
            let img = block2_image(&mut rng, 16, 24);
            let back = codec.decode(&codec.encode(&img).unwrap()).unwrap();
            let max_err = img
                .iter()
                .zip(back.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(max_err < codec.round_trip_tolerance(), "max err {max_err}");
        }
    }

    #[test]
    fn encode_is_linear() {
        let codec = PoolingCodec;
        let mut rng = derive_rng(37, &["codec", "linear"]);
        let x = Array3::from_shape_fn((8, 12, 3), |_| rng.random_range(0.0..1.0));
        let y = Array3::from_shape_fn((8, 12, 3), |_| rng.random_range(0.0..1.0));
        let (a, b) = (0.3, 1.7);
        let mut combo = x.clone();
        combo *= a;
        combo.scaled_add(b, &y);
        let code_combo = codec.encode(&combo).unwrap();
        let code_x = codec.encode(&x).unwrap();
        let code_y = codec.encode(&y).unwrap();
        let lin = LatentCode::weighted_sum(&[code_x, code_y], &[a, b]).unwrap();
        let max_err = code_combo
            .coarse
            .iter()
            .zip(lin.coarse.iter())
            .chain(code_combo.residual.iter().zip(lin.residual.iter()))
            .map(|(p, q)| (p - q).abs())
            .fold(0.0, f64::max);
        assert!(max_err < 1e-9, "linearity violated: {max_err}");
    }

    #[test]
    fn bad_shapes_rejected() {
        let codec = PoolingCodec;
        assert!(codec.encode(&Array3::zeros((6, 8, 3))).is_err()); // h not /4
        assert!(codec.encode(&Array3::zeros((8, 8, 2))).is_err());
    }
}
