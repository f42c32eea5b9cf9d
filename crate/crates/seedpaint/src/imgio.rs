//! Image and array file I/O.
//!
//! Images travel as 8-bit PNG (RGB for color, grayscale 0/255 for masks).
//! Depth maps are stored as NumPy `.npy` files restricted to little-endian
//! `f32`, C-order, 2-D — the same layout the corrector wire protocol uses for
//! its `depth_npyish_b64` field, so a service written in any language can
//! decode them with one line.

use crate::{Error, Result};
use ndarray::{Array2, Array3};
use std::io::Cursor;
use std::path::Path;

/// Load an 8-bit RGB PNG as an `H×W×3` array in `[0,1]`.
pub fn load_rgb_png(path: &Path) -> Result<Array3<f64>> {
    let bytes = std::fs::read(path)?;
    decode_rgb_png(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Save an `H×W×3` array in `[0,1]` as an 8-bit RGB PNG.
pub fn save_rgb_png(path: &Path, img: &Array3<f64>) -> Result<()> {
    std::fs::write(path, encode_rgb_png(img)?)?;
    Ok(())
}

/// Decode an 8-bit RGB PNG from memory.
pub fn decode_rgb_png(bytes: &[u8]) -> Result<Array3<f64>> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| Error::Format(format!("png decode: {e}")))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = Array3::zeros((h, w, 3));
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            out[(y as usize, x as usize, c)] = px.0[c] as f64 / 255.0;
        }
    }
    Ok(out)
}

/// Encode an `H×W×3` array in `[0,1]` as 8-bit RGB PNG bytes.
pub fn encode_rgb_png(img: &Array3<f64>) -> Result<Vec<u8>> {
    let (h, w, c) = img.dim();
    if c != 3 {
        return Err(Error::InvalidArgument(format!(
            "expected H×W×3 image, got {h}×{w}×{c}"
        )));
    }
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = [
                quantize(img[(y, x, 0)]),
                quantize(img[(y, x, 1)]),
                quantize(img[(y, x, 2)]),
            ];
            buf.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    let mut bytes = Cursor::new(Vec::new());
    buf.write_to(&mut bytes, image::ImageFormat::Png)
        .map_err(|e| Error::Format(format!("png encode: {e}")))?;
    Ok(bytes.into_inner())
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Load a grayscale PNG as a boolean mask (luma ≥ 128 is true).
pub fn load_mask_png(path: &Path) -> Result<Array2<bool>> {
    let bytes = std::fs::read(path)?;
    decode_mask_png(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Save a boolean mask as a grayscale 0/255 PNG.
pub fn save_mask_png(path: &Path, mask: &Array2<bool>) -> Result<()> {
    std::fs::write(path, encode_mask_png(mask)?)?;
    Ok(())
}

/// Decode a grayscale PNG mask from memory.
pub fn decode_mask_png(bytes: &[u8]) -> Result<Array2<bool>> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| Error::Format(format!("png decode: {e}")))?
        .to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = Array2::from_elem((h, w), false);
    for (x, y, px) in img.enumerate_pixels() {
        out[(y as usize, x as usize)] = px.0[0] >= 128;
    }
    Ok(out)
}

/// Encode a boolean mask as grayscale 0/255 PNG bytes.
pub fn encode_mask_png(mask: &Array2<bool>) -> Result<Vec<u8>> {
    let (h, w) = mask.dim();
    let mut buf = image::GrayImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            buf.put_pixel(x as u32, y as u32, image::Luma([if mask[(y, x)] { 255 } else { 0 }]));
        }
    }
    let mut bytes = Cursor::new(Vec::new());
    buf.write_to(&mut bytes, image::ImageFormat::Png)
        .map_err(|e| Error::Format(format!("png encode: {e}")))?;
    Ok(bytes.into_inner())
}

/// Write a 2-D map as `.npy` (little-endian f32, C-order).
pub fn save_f32_npy(path: &Path, map: &Array2<f64>) -> Result<()> {
    std::fs::write(path, encode_f32_npy(map))?;
    Ok(())
}

/// Read a 2-D `.npy` written by [`save_f32_npy`] (or NumPy itself).
pub fn load_f32_npy(path: &Path) -> Result<Array2<f64>> {
    let bytes = std::fs::read(path)?;
    decode_f32_npy(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Encode a 2-D map as `.npy` v1.0 bytes (`<f4`, C-order).
pub fn encode_f32_npy(map: &Array2<f64>) -> Vec<u8> {
    let (h, w) = map.dim();
    let mut header = format!("{{'descr': '<f4', 'fortran_order': False, 'shape': ({h}, {w}), }}");
    // Pad so that magic + version + header-len + header is a multiple of 64.
    let unpadded = 6 + 2 + 2 + header.len() + 1;
    let pad = (64 - unpadded % 64) % 64;
    header.push_str(&" ".repeat(pad));
    header.push('\n');

    let mut out = Vec::with_capacity(10 + header.len() + h * w * 4);
    out.extend_from_slice(b"\x93NUMPY");
    out.extend_from_slice(&[1u8, 0u8]);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for v in map.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

/// Decode `.npy` bytes produced by [`encode_f32_npy`] or `numpy.save`
/// (restricted to 2-D little-endian f32, C-order).
pub fn decode_f32_npy(bytes: &[u8]) -> Result<Array2<f64>> {
    if bytes.len() < 10 || &bytes[..6] != b"\x93NUMPY" {
        return Err(Error::Format("not an npy file".into()));
    }
    if bytes[6] != 1 {
        return Err(Error::Format(format!("unsupported npy version {}", bytes[6])));
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let data_start = 10 + header_len;
    if bytes.len() < data_start {
        return Err(Error::Format("truncated npy header".into()));
    }
    let header = std::str::from_utf8(&bytes[10..data_start])
        .map_err(|_| Error::Format("npy header not utf-8".into()))?;
    if !header.contains("'<f4'") {
        return Err(Error::Format("npy dtype must be <f4".into()));
    }
    if header.contains("'fortran_order': True") {
        return Err(Error::Format("npy must be C-order".into()));
    }
    let shape = parse_npy_shape(header)?;
    let (h, w) = shape;
    let expected = h * w * 4;
    let data = &bytes[data_start..];
    if data.len() < expected {
        return Err(Error::Format(format!(
            "npy payload too short: {} < {expected}",
            data.len()
        )));
    }
    let mut out = Array2::zeros((h, w));
    for (i, v) in out.iter_mut().enumerate() {
        let b = &data[i * 4..i * 4 + 4];
        *v = f32::from_le_bytes(b.try_into().unwrap()) as f64;
    }
    Ok(out)
}

fn parse_npy_shape(header: &str) -> Result<(usize, usize)> {
    let start = header
        .find("'shape':")
        .ok_or_else(|| Error::Format("npy header missing shape".into()))?;
    let rest = &header[start..];
    let open = rest
        .find('(')
        .ok_or_else(|| Error::Format("npy shape missing paren".into()))?;
    let close = rest
        .find(')')
        .ok_or_else(|| Error::Format("npy shape missing paren".into()))?;
    let dims: Vec<usize> = rest[open + 1..close]
        .split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| Error::Format(format!("bad npy dim {s:?}")))
        })
        .collect::<Result<_>>()?;
    if dims.len() != 2 {
        return Err(Error::Format(format!("npy must be 2-D, got {} dims", dims.len())));
    }
    Ok((dims[0], dims[1]))
}

/// Peak signal-to-noise ratio in dB between two images in `[0,1]`.
/// Identical images return `f64::INFINITY`.
pub fn psnr(a: &Array3<f64>, b: &Array3<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim(), "psnr shape mismatch");
    let mse = a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

/// Mean absolute difference over an optional mask (all pixels when `None`).
pub fn masked_l1(a: &Array3<f64>, b: &Array3<f64>, mask: Option<&Array2<bool>>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    let (h, w, c) = a.dim();
    let mut sum = 0.0;
    let mut n = 0usize;
    for y in 0..h {
        for x in 0..w {
            if mask.map_or(true, |m| m[(y, x)]) {
                for ch in 0..c {
                    sum += (a[(y, x, ch)] - b[(y, x, ch)]).abs();
                    n += 1;
                }
            }
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn npy_round_trip() {
        let mut map = Array2::zeros((5, 7));
        for (i, v) in map.iter_mut().enumerate() {
            *v = i as f64 * 0.125;
        }
        let bytes = encode_f32_npy(&map);
        let back = decode_f32_npy(&bytes).unwrap();
        assert_eq!(back.dim(), (5, 7));
        for (a, b) in map.iter().zip(back.iter()) {
            assert_eq!(*a, *b); // values exactly representable in f32
        }
    }

    #[test]
    fn npy_header_is_64_byte_aligned() {
        let map = Array2::<f64>::zeros((3, 3));
        let bytes = encode_f32_npy(&map);
        let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
        assert_eq!((10 + header_len) % 64, 0);
    }

    #[test]
    fn png_round_trip_quantized() {
        let mut img = Array3::zeros((4, 6, 3));
        for (i, v) in img.iter_mut().enumerate() {
            *v = (i % 256) as f64 / 255.0;
        }
        let bytes = encode_rgb_png(&img).unwrap();
        let back = decode_rgb_png(&bytes).unwrap();
        for (a, b) in img.iter().zip(back.iter()) {
            assert!((a - b).abs() < 1e-12, "u8-exact values must survive");
        }
    }

    #[test]
    fn mask_round_trip() {
        let mut mask = Array2::from_elem((5, 5), false);
        mask[(2, 3)] = true;
        mask[(0, 0)] = true;
        let bytes = encode_mask_png(&mask).unwrap();
        assert_eq!(decode_mask_png(&bytes).unwrap(), mask);
    }

    #[test]
    fn psnr_of_identical_is_infinite() {
        let img = Array3::from_elem((2, 2, 3), 0.25);
        assert!(psnr(&img, &img).is_infinite());
    }
}
