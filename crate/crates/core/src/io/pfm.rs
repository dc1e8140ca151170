//! Portable float maps. Written little-endian (negative scale) with rows
//! stored bottom to top, as the format requires.

use std::path::Path;

use crate::{Error, Result};

/// Image in top-to-bottom row order, `channels` interleaved values per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct FloatMap {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl FloatMap {
    pub fn from_f64(width: usize, height: usize, channels: usize, data: &[f64]) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::ShapeMismatch(format!(
                "PFM needs 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {width}x{height}x{channels} map",
                data.len()
            )));
        }
        Ok(FloatMap {
            width,
            height,
            channels,
            data: data.iter().map(|&v| v as f32).collect(),
        })
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }
}

pub fn write_pfm(path: &Path, map: &FloatMap) -> Result<()> {
    let tag = if map.channels == 3 { "PF" } else { "Pf" };
    let mut out = format!("{tag}\n{} {}\n-1.0\n", map.width, map.height).into_bytes();
    let row = map.width * map.channels;
    for y in (0..map.height).rev() {
        for v in &map.data[y * row..(y + 1) * row] {
            out.extend(v.to_le_bytes());
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_pfm(path: &Path) -> Result<FloatMap> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let fail = |reason: &str| Error::format("PFM", path, reason);
    // three whitespace-terminated header tokens: tag, "w h", scale
    let mut fields = Vec::new();
    let mut at = 0;
    while fields.len() < 4 {
        while at < bytes.len() && bytes[at].is_ascii_whitespace() {
            at += 1;
        }
        let start = at;
        while at < bytes.len() && !bytes[at].is_ascii_whitespace() {
            at += 1;
        }
        if start == at {
            return Err(fail("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..at]).map_err(|_| fail("non-ASCII header"))?);
    }
    at += 1; // the single whitespace byte ending the scale
    let channels = match fields[0] {
        "PF" => 3,
        "Pf" => 1,
        _ => return Err(fail("missing PF/Pf tag")),
    };
    let width: usize = fields[1].parse().map_err(|_| fail("bad width"))?;
    let height: usize = fields[2].parse().map_err(|_| fail("bad height"))?;
    let scale: f64 = fields[3].parse().map_err(|_| fail("bad scale"))?;
    let little = scale < 0.0;
    let n = width * height * channels;
    let body = bytes
        .get(at..at + 4 * n)
        .ok_or_else(|| fail("truncated pixel data"))?;
    let row = width * channels;
    let mut data = vec![0f32; n];
    for (i, chunk) in body.chunks_exact(4).enumerate() {
        let b: [u8; 4] = chunk.try_into().unwrap();
        let v = if little {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        };
        let (y, x) = (i / row, i % row);
        data[(height - 1 - y) * row + x] = v;
    }
    Ok(FloatMap {
        width,
        height,
        channels,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.pfm");
        let map = FloatMap::from_f64(3, 2, 1, &[1.0, 2.0, 3.0, 4.0, 5.0, -1.0]).unwrap();
        write_pfm(&p, &map).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        let header = b"Pf\n3 2\n-1.0\n";
        assert_eq!(&bytes[..header.len()], header);
        // bottom row first
        assert_eq!(
            f32::from_le_bytes(bytes[header.len()..header.len() + 4].try_into().unwrap()),
            4.0
        );
        assert_eq!(read_pfm(&p).unwrap(), map);

        let rgb = FloatMap::from_f64(1, 2, 3, &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        write_pfm(&p, &rgb).unwrap();
        assert_eq!(read_pfm(&p).unwrap(), rgb);
    }

    #[test]
    fn big_endian_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("be.pfm");
        let mut bytes = b"Pf\n1 1\n1.0\n".to_vec();
        bytes.extend(2.5f32.to_be_bytes());
        std::fs::write(&p, bytes).unwrap();
        assert_eq!(read_pfm(&p).unwrap().data, vec![2.5]);
        std::fs::write(&p, b"Pf\n2 2\n-1.0\n\0\0").unwrap();
        assert!(read_pfm(&p).unwrap_err().to_string().contains("truncated"));
        assert!(FloatMap::from_f64(2, 2, 2, &[0.0; 8]).is_err());
    }
}
