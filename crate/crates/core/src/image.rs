//! Binary PPM (P6) images and PGM (P5) label maps.

use crate::error::DecodeError;
use crate::model::SegMap;
use crate::tensor::Tensor;

struct Header {
    width: usize,
    height: usize,
    maxval: usize,
    data_start: usize,
}

fn parse_header(bytes: &[u8], magic: &[u8; 2]) -> Result<Header, DecodeError> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        let mut found = [0u8; 4];
        for (d, s) in found.iter_mut().zip(bytes) {
            *d = *s;
        }
        let mut expected = [b' '; 4];
        expected[..2].copy_from_slice(magic);
        return Err(DecodeError::BadMagic { expected, found });
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (slot, field) in fields.iter_mut().zip(["width", "height", "maxval"]) {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(DecodeError::Truncated { field }),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *slot = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| DecodeError::Invalid {
                field,
                reason: "expected a decimal number".into(),
            })?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(DecodeError::Truncated { field: "header" });
    }
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 65535 {
        return Err(DecodeError::Invalid {
            field: "maxval",
            reason: format!("{maxval} outside 1..=65535"),
        });
    }
    Ok(Header {
        width,
        height,
        maxval,
        data_start: pos + 1,
    })
}

fn samples(bytes: &[u8], h: &Header, count: usize) -> Result<Vec<u32>, DecodeError> {
    let per = if h.maxval > 255 { 2 } else { 1 };
    let need = count
        .checked_mul(per)
        .ok_or(DecodeError::Truncated { field: "pixels" })?;
    let data = &bytes[h.data_start..];
    if data.len() != need {
        return Err(DecodeError::Length {
            field: "pixels",
            declared: need,
            actual: data.len(),
        });
    }
    Ok(if per == 2 {
        data.chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as u32)
            .collect()
    } else {
        data.iter().map(|&b| b as u32).collect()
    })
}

/// Decodes a P6 image into a `3 x H x W` tensor scaled to `[0, 1]`.
pub fn read_ppm(bytes: &[u8]) -> Result<Tensor, DecodeError> {
    let h = parse_header(bytes, b"P6")?;
    let plane = h.width * h.height;
    let raw = samples(bytes, &h, plane * 3)?;
    let scale = 1.0 / h.maxval as f32;
    let mut data = vec![0f32; plane * 3];
    for (i, px) in raw.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px[c] as f32 * scale;
        }
    }
    Ok(Tensor::new(vec![3, h.height, h.width], data).expect("volume matches"))
}

/// Encodes a `3 x H x W` tensor in `[0, 1]` as 8-bit P6.
pub fn write_ppm(image: &Tensor) -> Result<Vec<u8>, crate::error::TensorError> {
    let (c, h, w) = image.chw()?;
    if c != 3 {
        return Err(crate::error::TensorError::Axis {
            op: "write_ppm",
            axis: "channels",
            expected: 3,
            actual: c,
        });
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    let d = image.data();
    for i in 0..plane {
        for ch in 0..3 {
            out.push((d[ch * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(out)
}

/// Decodes a P5 label map. Pixel values are class labels; `classes` bounds
/// them (use the ignore label's value if it exceeds the class count).
pub fn read_pgm_labels(bytes: &[u8], classes: usize) -> Result<SegMap, DecodeError> {
    let h = parse_header(bytes, b"P5")?;
    let raw = samples(bytes, &h, h.width * h.height)?;
    SegMap::new(
        h.height,
        h.width,
        classes,
        raw.into_iter().map(|v| v as u16).collect(),
    )
}

/// Writes labels as P5 (8-bit when every label fits, 16-bit otherwise).
pub fn write_pgm_labels(map: &SegMap) -> Vec<u8> {
    let wide = map.classes() > 255;
    let maxval = if wide { 65535 } else { 255 };
    let mut out = format!("P5\n{} {}\n{maxval}\n", map.width(), map.height()).into_bytes();
    for &l in map.labels() {
        if wide {
            out.extend_from_slice(&l.to_be_bytes());
        } else {
            out.push(l as u8);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip_with_comment() {
        let img = Tensor::from_fn(&[3, 2, 3], |i| (i % 5) as f32 / 4.0);
        let bytes = write_ppm(&img).unwrap();
        assert!(read_ppm(&bytes).unwrap().max_abs_diff(&img).unwrap() < 1.0 / 255.0);
        let mut commented = b"P6 # made by hand\n3 2\n255\n".to_vec();
        commented.extend_from_slice(&bytes[bytes.len() - 18..]);
        assert_eq!(read_ppm(&commented).unwrap(), read_ppm(&bytes).unwrap());
    }

    #[test]
    fn rejects_bad_headers_and_lengths() {
        assert!(read_ppm(b"P5\n1 1\n255\n\x00").is_err());
        assert!(read_ppm(b"P6\n1 1\n255\n\x00\x00").is_err());
        assert!(read_ppm(b"P6\n1 x\n255\n").is_err());
        assert!(read_ppm(b"P6\n1 1\n0\n\x00\x00\x00").is_err());
    }

    #[test]
    fn pgm_labels_round_trip() {
        let m = SegMap::new(2, 2, 19, vec![1, 19, 5, 2]).unwrap();
        assert_eq!(read_pgm_labels(&write_pgm_labels(&m), 19).unwrap(), m);
        assert!(read_pgm_labels(&write_pgm_labels(&m), 4).is_err());
    }
}
