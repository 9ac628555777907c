//! Portable float maps: `PF` (RGB) or `Pf` (gray), little-endian (negative
//! scale), rows stored bottom to top.

use std::path::Path;

use crate::error::Result;
use crate::image::Image;
use crate::io::{parse_err, read_file, write_file, Bytes, LoadError};
use crate::real::{cast, Real};
use crate::scene::EnvironmentMap;

pub fn write_pfm<T: Real>(img: &Image<T>) -> Vec<u8> {
    assert!(img.channels == 1 || img.channels == 3, "PFM holds 1 or 3 channels");
    let tag = if img.channels == 3 { "PF" } else { "Pf" };
    let mut buf = format!("{tag}\n{} {}\n-1.0\n", img.width, img.height).into_bytes();
    let row = img.width * img.channels;
    for y in (0..img.height).rev() {
        for &v in &img.data[y * row..(y + 1) * row] {
            buf.extend_from_slice(&cast::<T, f32>(v).to_le_bytes());
        }
    }
    buf
}

/// Reads the next whitespace-delimited header token.
fn token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str, LoadError> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(super::truncated("PFM header"));
    }
    std::str::from_utf8(&bytes[start..*pos]).map_err(|_| parse_err("PFM header is not ASCII"))
}

pub fn read_pfm(bytes: &[u8]) -> Result<Image<f32>, LoadError> {
    let mut pos = 0;
    let tag = token(bytes, &mut pos)?;
    let channels = match tag {
        "PF" => 3,
        "Pf" => 1,
        other => {
            return Err(LoadError::BadMagic {
                path: super::stream_path(),
                expected: "PF or Pf".into(),
                found: other.into(),
            })
        }
    };
    let mut num = |what: &str| -> Result<f64, LoadError> {
        let t = token(bytes, &mut pos)?;
        t.parse::<f64>().map_err(|_| parse_err(format!("bad PFM {what} {t:?}")))
    };
    let width = num("width")?;
    let height = num("height")?;
    let scale = num("scale")?;
    if width < 1.0 || height < 1.0 || width.fract() != 0.0 || height.fract() != 0.0 {
        return Err(parse_err("PFM dimensions must be positive integers"));
    }
    if !(scale < 0.0) {
        return Err(LoadError::UnsupportedVersion {
            path: super::stream_path(),
            found: "big-endian PFM".into(),
        });
    }
    // Exactly one whitespace byte separates the header from the data.
    pos += 1;
    let (w, h) = (width as usize, height as usize);
    let mut r = Bytes::new(bytes.get(pos..).unwrap_or(&[]));
    let row = w * channels;
    let mut data = vec![0f32; row * h];
    for y in (0..h).rev() {
        for v in &mut data[y * row..(y + 1) * row] {
            *v = r.f32("pixel data")?;
        }
    }
    if r.remaining() != 0 {
        return Err(parse_err(format!("{} bytes after PFM data", r.remaining())));
    }
    Image::from_vec(w, h, channels, data).map_err(|e| parse_err(e.to_string()))
}

pub fn save_pfm<T: Real>(path: &Path, img: &Image<T>) -> Result<()> {
    write_file(path, &write_pfm(img))
}

pub fn load_pfm(path: &Path) -> Result<Image<f32>, LoadError> {
    read_pfm(&read_file(path)?).map_err(|e| e.at(path))
}

pub fn save_pfm_env<T: Real>(path: &Path, env: &EnvironmentMap<T>) -> Result<()> {
    save_pfm(path, &Image::from_rgb(env.width, env.height, &env.pixels))
}

pub fn load_pfm_env(path: &Path) -> Result<EnvironmentMap<f32>, LoadError> {
    let img = load_pfm(path)?;
    if img.channels != 3 {
        return Err(LoadError::PropertyMismatch {
            path: path.to_path_buf(),
            detail: "environment map must be RGB".into(),
        });
    }
    EnvironmentMap::from_pixels(img.width, img.height, img.to_rgb()).map_err(|e| LoadError::Parse {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_keeps_row_order() {
        let img = Image::from_vec(3, 2, 3, (0..18).map(|v| v as f32 * 1.25 - 4.0).collect()).unwrap();
        let bytes = write_pfm(&img);
        assert!(bytes.starts_with(b"PF\n3 2\n-1.0\n"));
        // Bottom row first.
        let first = f32::from_le_bytes(bytes[12..16].try_into().unwrap());
        assert_eq!(first, img.at(0, 1, 0));
        assert_eq!(read_pfm(&bytes).unwrap(), img);
        let gray = Image::from_vec(2, 2, 1, vec![0.5f32, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(read_pfm(&write_pfm(&gray)).unwrap(), gray);
        assert!(matches!(read_pfm(&bytes[..bytes.len() - 3]), Err(LoadError::Truncated { .. })));
        assert!(matches!(read_pfm(b"P6\n1 1\n255\n"), Err(LoadError::BadMagic { .. })));
    }
}
