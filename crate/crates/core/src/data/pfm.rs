//! Portable float map (grayscale `Pf` variant).

use std::path::Path;

use super::DisparityMap;
use crate::error::{Error, FormatError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Pfm {
    /// Top-to-bottom rows.
    pub map: DisparityMap,
    /// Scale line as stored; a negative value marks a little-endian payload.
    pub scale: f32,
}

fn header(msg: impl Into<String>) -> FormatError {
    FormatError::PfmHeader(msg.into())
}

/// Reads the next whitespace-delimited ASCII token; `pos` ends on the delimiter.
fn token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str, FormatError> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(header("unexpected end of header"));
    }
    std::str::from_utf8(&bytes[start..*pos]).map_err(|_| header("header is not ASCII"))
}

pub fn parse_pfm(bytes: &[u8]) -> Result<Pfm, FormatError> {
    let mut pos = 0;
    match token(bytes, &mut pos)? {
        "Pf" => {}
        "PF" => return Err(FormatError::PfmColor),
        other => return Err(header(format!("bad magic {other:?}"))),
    }
    let width: usize = token(bytes, &mut pos)?
        .parse()
        .map_err(|_| header("width is not an integer"))?;
    let height: usize = token(bytes, &mut pos)?
        .parse()
        .map_err(|_| header("height is not an integer"))?;
    let scale: f32 = token(bytes, &mut pos)?
        .parse()
        .map_err(|_| header("scale is not a number"))?;
    if width == 0 || height == 0 {
        return Err(header(format!("degenerate size {width}x{height}")));
    }
    if scale == 0.0 || !scale.is_finite() {
        return Err(header(format!("scale {scale} has no endianness sign")));
    }
    // Exactly one whitespace byte separates the header from the payload.
    if pos >= bytes.len() {
        return Err(FormatError::PfmTruncated {
            expected: width * height * 4,
            found: 0,
        });
    }
    pos += 1;

    let expected = width * height * 4;
    let payload = &bytes[pos..];
    if payload.len() < expected {
        return Err(FormatError::PfmTruncated {
            expected,
            found: payload.len(),
        });
    }
    let little = scale < 0.0;
    let mut data = vec![0.0f32; width * height];
    for (i, chunk) in payload[..expected].chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        let (file_row, x) = (i / width, i % width);
        data[(height - 1 - file_row) * width + x] = v;
    }
    Ok(Pfm {
        map: DisparityMap { height, width, data },
        scale,
    })
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<Pfm> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_pfm(&bytes)?)
}

/// Little-endian encoding with scale `-1.0`.
pub fn encode_pfm(map: &DisparityMap) -> Vec<u8> {
    let mut out = format!("Pf\n{} {}\n-1.0\n", map.width, map.height).into_bytes();
    out.reserve(map.data.len() * 4);
    for y in (0..map.height).rev() {
        for &v in &map.data[y * map.width..(y + 1) * map.width] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_pfm(path: impl AsRef<Path>, map: &DisparityMap) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_pfm(map)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_pixel_little_endian() {
        let mut bytes = b"Pf\n1 1\n-1.0\n".to_vec();
        bytes.extend_from_slice(&2.5f32.to_le_bytes());
        let pfm = parse_pfm(&bytes).unwrap();
        assert_eq!(pfm.map.data, vec![2.5]);
        assert_eq!(pfm.scale, -1.0);
    }

    #[test]
    fn two_by_one_big_endian() {
        // width 2, height 1, positive scale => big-endian payload.
        let mut bytes = b"Pf\n2 1\n1.0\n".to_vec();
        bytes.extend_from_slice(&[0x40, 0x20, 0x00, 0x00]); // 2.5
        bytes.extend_from_slice(&[0xC1, 0x10, 0x00, 0x00]); // -9.0
        let pfm = parse_pfm(&bytes).unwrap();
        assert_eq!(pfm.map.data, vec![2.5, -9.0]);
    }

    #[test]
    fn rows_are_flipped() {
        let mut bytes = b"Pf\n1 2\n-1.0\n".to_vec();
        bytes.extend_from_slice(&1.0f32.to_le_bytes()); // bottom row
        bytes.extend_from_slice(&2.0f32.to_le_bytes()); // top row
        let pfm = parse_pfm(&bytes).unwrap();
        assert_eq!(pfm.map.data, vec![2.0, 1.0]);
    }

    #[test]
    fn error_kinds_are_distinct() {
        let mut color = b"PF\n1 1\n-1.0\n".to_vec();
        color.extend_from_slice(&[0; 12]);
        assert!(matches!(parse_pfm(&color), Err(FormatError::PfmColor)));
        assert!(matches!(parse_pfm(b"P6\n1 1\n-1.0\n"), Err(FormatError::PfmHeader(_))));
        assert!(matches!(parse_pfm(b"Pf\n1 x\n-1.0\n"), Err(FormatError::PfmHeader(_))));
        assert!(matches!(
            parse_pfm(b"Pf\n2 2\n-1.0\n\0\0\0\0"),
            Err(FormatError::PfmTruncated { expected: 16, found: 4 })
        ));
    }
}
