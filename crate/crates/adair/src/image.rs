//! Binary PPM (P6, 8-bit) images as `3×H×W` tensors in `[0, 1]`.

use std::fs;
use std::path::Path;

use adair_core::Tensor;

use crate::error::{io, Error, Result};

/// Parse a P6 file with maxval 255. Comments (`#` to end of line) are allowed
/// between header fields.
pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor<f64>> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        if start == pos {
            return Err(Error::MalformedHeader("header ends early".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P6" {
        return Err(Error::MalformedHeader(format!("magic {:?}, expected P6", fields[0])));
    }
    let number = |i: usize, what: &str| -> Result<usize> {
        fields[i]
            .parse()
            .map_err(|_| Error::MalformedHeader(format!("{what} {:?}", fields[i])))
    };
    let (w, h, max) = (number(1, "width")?, number(2, "height")?, number(3, "maxval")?);
    if max != 255 {
        return Err(Error::MalformedHeader(format!("maxval {max}, only 8-bit is supported")));
    }
    if w == 0 || h == 0 {
        return Err(Error::MalformedHeader(format!("empty image {w}x{h}")));
    }
    // exactly one whitespace byte separates the header from the payload
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::TruncatedPayload {
            expected: 3 * w * h,
            found: 0,
        });
    }
    let payload = &bytes[pos + 1..];
    if payload.len() < 3 * w * h {
        return Err(Error::TruncatedPayload {
            expected: 3 * w * h,
            found: payload.len(),
        });
    }
    let mut data = vec![0.0; 3 * h * w];
    for (i, px) in payload[..3 * w * h].chunks_exact(3).enumerate() {
        for (c, &v) in px.iter().enumerate() {
            data[c * h * w + i] = v as f64 / 255.0;
        }
    }
    Ok(Tensor::new(&[3, h, w], data)?)
}

/// Encode a `3×H×W` image, rounding to the nearest 8-bit level after clamping.
pub fn encode_ppm(img: &Tensor<f64>) -> Result<Vec<u8>> {
    let (h, w) = match *img.shape() {
        [3, h, w] | [1, 3, h, w] => (h, w),
        _ => {
            return Err(adair_core::Error::ShapeMismatch(format!("expected 3×H×W image, got {:?}", img.shape())).into())
        }
    };
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * h * w);
    for i in 0..h * w {
        for c in 0..3 {
            let v = img.data()[c * h * w + i].clamp(0.0, 1.0);
            out.push((v * 255.0).round() as u8);
        }
    }
    Ok(out)
}

fn check_extension(path: &Path) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("ppm") => Ok(()),
        _ => Err(Error::UnsupportedFormat(path.to_path_buf())),
    }
}

pub fn read_image(path: &Path) -> Result<Tensor<f64>> {
    check_extension(path)?;
    decode_ppm(&fs::read(path).map_err(io(path))?)
}

pub fn write_image(path: &Path, img: &Tensor<f64>) -> Result<()> {
    check_extension(path)?;
    fs::write(path, encode_ppm(img)?).map_err(io(path))
}
