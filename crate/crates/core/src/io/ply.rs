//! Splats as binary little-endian PLY.
//!
//! One `vertex` element per splat with float properties
//! `x y z tu_x tu_y tu_z tv_x tv_y tv_z su sv opacity sh_0 … sh_{3K-1}`,
//! where `K = (L+1)²` and `sh_{3k+c}` is channel `c` of coefficient `k`.

use std::io::Write;
use std::path::Path;

use crate::error::Result;
use crate::io::{parse_err, read_file, truncated, write_file, Bytes, LoadError};
use crate::math::Vec3;
use crate::real::{cast, Real};
use crate::scene::{sh, Splat};

const FIXED: [&str; 12] = [
    "x", "y", "z", "tu_x", "tu_y", "tu_z", "tv_x", "tv_y", "tv_z", "su", "sv", "opacity",
];

fn property_names(sh_degree: usize) -> Vec<String> {
    let mut names: Vec<String> = FIXED.iter().map(|s| s.to_string()).collect();
    names.extend((0..3 * sh::coeff_count(sh_degree)).map(|i| format!("sh_{i}")));
    names
}

pub fn write_ply<W: Write, T: Real>(w: &mut W, splats: &[Splat<T>], sh_degree: usize) -> std::io::Result<()> {
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    header += &format!("element vertex {}\n", splats.len());
    for name in property_names(sh_degree) {
        header += &format!("property float {name}\n");
    }
    header += "end_header\n";
    w.write_all(header.as_bytes())?;
    let k = sh::coeff_count(sh_degree);
    let mut buf = Vec::with_capacity(splats.len() * (12 + 3 * k) * 4);
    for s in splats {
        let mut put = |v: T| buf.extend_from_slice(&cast::<T, f32>(v).to_le_bytes());
        for v in [s.center, s.tangent_u, s.tangent_v] {
            put(v.x);
            put(v.y);
            put(v.z);
        }
        put(s.scale_u);
        put(s.scale_v);
        put(s.opacity);
        for c in 0..k {
            let coeff = s.sh.get(c).copied().unwrap_or(Vec3::zero());
            put(coeff.x);
            put(coeff.y);
            put(coeff.z);
        }
    }
    w.write_all(&buf)
}

/// Parses a splat PLY; returns the splats and their SH degree.
pub fn read_ply(bytes: &[u8]) -> Result<(Vec<Splat<f32>>, usize), LoadError> {
    const END: &[u8] = b"end_header\n";
    if !bytes.starts_with(b"ply\n") {
        let found = String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned();
        return Err(LoadError::BadMagic {
            path: super::stream_path(),
            expected: "ply".into(),
            found,
        });
    }
    let header_len = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| truncated("header has no end_header line"))?
        + END.len();
    let header = std::str::from_utf8(&bytes[..header_len]).map_err(|_| parse_err("header is not UTF-8"))?;

    let mut count = None;
    let mut names = Vec::new();
    for line in header.lines().skip(1) {
        let parts: Vec<&str> = line.split_whitespace().collect();
        match parts.as_slice() {
            ["format", "binary_little_endian", "1.0"] => {}
            ["format", other, ver] => {
                return Err(LoadError::UnsupportedVersion {
                    path: super::stream_path(),
                    found: format!("{other} {ver}"),
                })
            }
            ["comment", ..] | ["end_header"] => {}
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|_| parse_err(format!("bad vertex count {n:?}")))?);
            }
            ["element", other, ..] => {
                return Err(LoadError::PropertyMismatch {
                    path: super::stream_path(),
                    detail: format!("unexpected element {other:?}"),
                })
            }
            ["property", ty, name] => {
                if *ty != "float" {
                    return Err(LoadError::PropertyMismatch {
                        path: super::stream_path(),
                        detail: format!("property {name} has type {ty}, expected float"),
                    });
                }
                names.push(name.to_string());
            }
            _ => return Err(parse_err(format!("unrecognized header line {line:?}"))),
        }
    }
    let count = count.ok_or_else(|| parse_err("header declares no vertex element"))?;
    let sh_values = names.len().saturating_sub(FIXED.len());
    let degree = (sh_values % 3 == 0)
        .then(|| sh::degree_for_count(sh_values / 3))
        .flatten()
        .ok_or_else(|| LoadError::PropertyMismatch {
            path: super::stream_path(),
            detail: format!("{sh_values} SH values do not form a complete band set"),
        })?;
    if names != property_names(degree) {
        return Err(LoadError::PropertyMismatch {
            path: super::stream_path(),
            detail: format!("properties {names:?} differ from the splat layout"),
        });
    }

    let mut r = Bytes::new(&bytes[header_len..]);
    let k = sh::coeff_count(degree);
    let need = count * names.len() * 4;
    if r.remaining() < need {
        return Err(truncated(format!("{} of {need} body bytes", r.remaining())));
    }
    let mut splats = Vec::with_capacity(count);
    for _ in 0..count {
        let v3 = |r: &mut Bytes| -> Result<Vec3<f32>, LoadError> {
            Ok(Vec3::new(r.f32("x")?, r.f32("y")?, r.f32("z")?))
        };
        let center = v3(&mut r)?;
        let tangent_u = v3(&mut r)?;
        let tangent_v = v3(&mut r)?;
        let scale_u = r.f32("su")?;
        let scale_v = r.f32("sv")?;
        let opacity = r.f32("opacity")?;
        let sh = (0..k).map(|_| v3(&mut r)).collect::<Result<_, _>>()?;
        splats.push(Splat {
            center,
            tangent_u,
            tangent_v,
            scale_u,
            scale_v,
            opacity,
            sh,
        });
    }
    if r.remaining() != 0 {
        return Err(parse_err(format!("{} bytes after the last splat", r.remaining())));
    }
    Ok((splats, degree))
}

pub fn save_ply<T: Real>(path: &Path, splats: &[Splat<T>], sh_degree: usize) -> Result<()> {
    let mut buf = Vec::new();
    write_ply(&mut buf, splats, sh_degree).expect("writing to memory");
    write_file(path, &buf)
}

pub fn load_ply(path: &Path) -> Result<(Vec<Splat<f32>>, usize), LoadError> {
    read_ply(&read_file(path)?).map_err(|e| e.at(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn splat(i: usize, degree: usize) -> Splat<f32> {
        let f = i as f32;
        Splat {
            center: Vec3::new(f, -f * 0.5, 1.0 / (f + 1.0)),
            tangent_u: Vec3::unit_x(),
            tangent_v: Vec3::unit_y(),
            scale_u: 0.1 + f,
            scale_v: 0.2,
            opacity: 0.3,
            sh: (0..sh::coeff_count(degree)).map(|k| Vec3::splat(k as f32 * 0.01 + f)).collect(),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for degree in [0, 2] {
            let splats: Vec<_> = (0..17).map(|i| splat(i, degree)).collect();
            let mut buf = Vec::new();
            write_ply(&mut buf, &splats, degree).unwrap();
            let (back, d) = read_ply(&buf).unwrap();
            assert_eq!(d, degree);
            assert_eq!(back, splats);
            let header = String::from_utf8_lossy(&buf[..200]);
            assert!(header.contains("element vertex 17\n"));
        }
    }

    #[test]
    fn errors_are_distinct() {
        let splats: Vec<_> = (0..3).map(|i| splat(i, 0)).collect();
        let mut buf = Vec::new();
        write_ply(&mut buf, &splats, 0).unwrap();
        assert!(matches!(read_ply(&buf[..buf.len() - 2]), Err(LoadError::Truncated { .. })));
        assert!(matches!(read_ply(b"plx\n"), Err(LoadError::BadMagic { .. })));
        let text = String::from_utf8_lossy(&buf).replace("property float sv", "property float sq");
        assert!(matches!(read_ply(text.as_bytes()), Err(LoadError::PropertyMismatch { .. })));
        let text = String::from_utf8_lossy(&buf).replace("binary_little_endian", "binary_big_endian");
        assert!(matches!(read_ply(text.as_bytes()), Err(LoadError::UnsupportedVersion { .. })));
    }
}
