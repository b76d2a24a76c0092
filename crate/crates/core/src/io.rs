//! PFM, PPM and PGM readers and writers.
//!
//! PFM files are written little-endian (scale `-1.0`) with rows stored
//! bottom to top; both byte orders are accepted on read. `Pf` holds one
//! channel, `PF` three interleaved channels.

use std::fs;
use std::path::Path;

use crate::engine::{ScalarField, VectorField3};
use crate::frame::Frame;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Format { path: String, reason: String },
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, IoError> {
    fs::read(path).map_err(|source| IoError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    fs::write(path, bytes).map_err(|source| IoError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn format_err(path: &Path, reason: impl Into<String>) -> IoError {
    IoError::Format {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

/// Splits `count` whitespace-separated header tokens off the front; the
/// payload starts after the single whitespace byte following the last one.
fn header<'a>(bytes: &'a [u8], count: usize) -> Option<(Vec<&'a str>, &'a [u8])> {
    let mut tokens = Vec::with_capacity(count);
    let mut i = 0;
    while tokens.len() < count {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return None;
        }
        tokens.push(std::str::from_utf8(&bytes[start..i]).ok()?);
    }
    if i >= bytes.len() {
        return None;
    }
    Some((tokens, &bytes[i + 1..]))
}

fn dims(tokens: &[&str], path: &Path) -> Result<(usize, usize), IoError> {
    let w: usize = tokens[1].parse().map_err(|_| format_err(path, "bad width"))?;
    let h: usize = tokens[2].parse().map_err(|_| format_err(path, "bad height"))?;
    if w < 2 || h < 2 {
        return Err(format_err(path, "image must be at least 2x2"));
    }
    Ok((w, h))
}

fn encode_pfm(channels: &[&ScalarField]) -> Vec<u8> {
    let (h, w) = channels[0].dims();
    let tag = if channels.len() == 1 { "Pf" } else { "PF" };
    let mut out = format!("{tag}\n{w} {h}\n-1.0\n").into_bytes();
    for r in (0..h).rev() {
        for c in 0..w {
            for ch in channels {
                out.extend_from_slice(&(ch.get(r, c) as f32).to_le_bytes());
            }
        }
    }
    out
}

fn decode_pfm(bytes: &[u8], path: &Path) -> Result<Vec<ScalarField>, IoError> {
    let (tokens, payload) = header(bytes, 4).ok_or_else(|| format_err(path, "truncated header"))?;
    let n = match tokens[0] {
        "Pf" => 1,
        "PF" => 3,
        _ => return Err(format_err(path, "not a PFM file")),
    };
    let (w, h) = dims(&tokens, path)?;
    let scale: f64 = tokens[3].parse().map_err(|_| format_err(path, "bad scale"))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(format_err(path, "bad scale"));
    }
    let little = scale < 0.0;
    if payload.len() != 4 * n * w * h {
        return Err(format_err(path, "payload size does not match header"));
    }
    let mut out = vec![ScalarField::zeros(h, w); n];
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        let pixel = i / n;
        let (r, c) = (h - 1 - pixel / w, pixel % w);
        out[i % n].set(r, c, v as f64);
    }
    Ok(out)
}

pub fn write_pfm(path: &Path, field: &ScalarField) -> Result<(), IoError> {
    write_bytes(path, &encode_pfm(&[field]))
}

pub fn write_pfm3(path: &Path, field: &VectorField3) -> Result<(), IoError> {
    write_bytes(path, &encode_pfm(&[&field.x, &field.y, &field.z]))
}

pub fn read_pfm(path: &Path) -> Result<ScalarField, IoError> {
    let mut fields = decode_pfm(&read_bytes(path)?, path)?;
    if fields.len() != 1 {
        return Err(format_err(path, "expected a single-channel PFM"));
    }
    Ok(fields.remove(0))
}

pub fn read_pfm3(path: &Path) -> Result<VectorField3, IoError> {
    let fields = decode_pfm(&read_bytes(path)?, path)?;
    let [x, y, z]: [ScalarField; 3] = fields
        .try_into()
        .map_err(|_| format_err(path, "expected a three-channel PFM"))?;
    Ok(VectorField3::new(x, y, z).expect("same dims"))
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// 8-bit binary RGB; values are clamped to `[0, 1]`.
pub fn write_ppm(path: &Path, frame: &Frame) -> Result<(), IoError> {
    let (h, w) = frame.dims();
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for r in 0..h {
        for c in 0..w {
            out.extend(frame.get(r, c).map(to_byte));
        }
    }
    write_bytes(path, &out)
}

pub fn read_ppm(path: &Path) -> Result<Frame, IoError> {
    let bytes = read_bytes(path)?;
    let (tokens, payload) = header(&bytes, 4).ok_or_else(|| format_err(path, "truncated header"))?;
    if tokens[0] != "P6" || tokens[3] != "255" {
        return Err(format_err(path, "expected an 8-bit P6 file"));
    }
    let (w, h) = dims(&tokens, path)?;
    if payload.len() != 3 * w * h {
        return Err(format_err(path, "payload size does not match header"));
    }
    Ok(Frame::from_fn(h, w, |r, c| {
        let i = 3 * (r * w + c);
        [0, 1, 2].map(|k| payload[i + k] as f64 / 255.0)
    }))
}

pub fn write_pgm(path: &Path, width: usize, height: usize, data: &[u8]) -> Result<(), IoError> {
    assert_eq!(data.len(), width * height, "pgm payload size");
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(data);
    write_bytes(path, &out)
}

/// Returns `(width, height, data)`.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>), IoError> {
    let bytes = read_bytes(path)?;
    let (tokens, payload) = header(&bytes, 4).ok_or_else(|| format_err(path, "truncated header"))?;
    if tokens[0] != "P5" || tokens[3] != "255" {
        return Err(format_err(path, "expected an 8-bit P5 file"));
    }
    let (w, h) = dims(&tokens, path)?;
    if payload.len() != w * h {
        return Err(format_err(path, "payload size does not match header"));
    }
    Ok((w, h, payload.to_vec()))
}

/// 0/1 mask stored as 0/255.
pub fn write_mask(path: &Path, mask: &ScalarField) -> Result<(), IoError> {
    let (h, w) = mask.dims();
    let data: Vec<u8> = mask.values().iter().map(|&v| if v > 0.5 { 255 } else { 0 }).collect();
    write_pgm(path, w, h, &data)
}

pub fn read_mask(path: &Path) -> Result<ScalarField, IoError> {
    let (w, h, data) = read_pgm(path)?;
    Ok(ScalarField::new(h, w, data.iter().map(|&b| (b > 127) as u8 as f64).collect()).expect("dims"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pfm_layout_is_bottom_up_little_endian() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.pfm");
        let f = ScalarField::from_fn(2, 3, |r, c| (r * 3 + c) as f64);
        write_pfm(&p, &f).unwrap();
        let bytes = fs::read(&p).unwrap();
        let head = b"Pf\n3 2\n-1.0\n";
        assert_eq!(&bytes[..head.len()], head);
        let first = f32::from_le_bytes(bytes[head.len()..head.len() + 4].try_into().unwrap());
        // first stored row is the bottom one
        assert_eq!(first, 3.0);
        assert_eq!(read_pfm(&p).unwrap(), f);
    }

    #[test]
    fn big_endian_pfm_is_read() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("be.pfm");
        let mut bytes = b"Pf\n2 2\n1.0\n".to_vec();
        for v in [1.0f32, 2.0, 3.0, 4.0] {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        fs::write(&p, bytes).unwrap();
        assert_eq!(read_pfm(&p).unwrap().values(), &[3.0, 4.0, 1.0, 2.0]);
    }

    #[test]
    fn vector_pfm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.pfm");
        let v = VectorField3::new(
            ScalarField::from_fn(3, 2, |r, c| r as f64 - 0.25 * c as f64),
            ScalarField::filled(3, 2, 0.5),
            ScalarField::from_fn(3, 2, |r, _| -(r as f64)),
        )
        .unwrap();
        write_pfm3(&p, &v).unwrap();
        assert_eq!(read_pfm3(&p).unwrap(), v);
        assert!(read_pfm(&p).is_err());
    }

    #[test]
    fn ppm_and_pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let f = Frame::from_fn(4, 5, |r, c| [r as f64 / 3.0, c as f64 / 4.0, 1.0]);
        let p = dir.path().join("f.ppm");
        write_ppm(&p, &f).unwrap();
        let back = read_ppm(&p).unwrap();
        for r in 0..4 {
            for c in 0..5 {
                for (a, b) in back.get(r, c).iter().zip(f.get(r, c)) {
                    assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
                }
            }
        }
        let m = ScalarField::from_fn(3, 4, |r, c| ((r + c) % 2) as f64);
        let q = dir.path().join("m.pgm");
        write_mask(&q, &m).unwrap();
        assert_eq!(read_mask(&q).unwrap(), m);
    }

    #[test]
    fn malformed_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.pfm");
        fs::write(&p, b"Pf\n4 4\n-1.0\n\0\0").unwrap();
        assert!(matches!(read_pfm(&p), Err(IoError::Format { .. })));
        assert!(matches!(read_pfm(&dir.path().join("missing.pfm")), Err(IoError::Io { .. })));
    }
}
