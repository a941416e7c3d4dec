//! PCF binary point clouds and ASCII XYZ import.
//!
//! PCF layout, little-endian:
//!
//! ```text
//! "PCF1" | u32 flags | u32 N | N×3 f32 coords | [N×3 f32 extras] | u32 CRC32
//! ```
//!
//! Flag bit 0 marks extras as present; bit 1 marks them as colors rather than
//! normals. The CRC covers every preceding byte.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{ExtrasKind, PointCloud};
use crate::numerics::Scalar;

const MAGIC: &[u8; 4] = b"PCF1";
const FLAG_EXTRAS: u32 = 1;
const FLAG_COLORS: u32 = 2;

pub fn encode_pcf<T: Scalar>(cloud: &PointCloud<T>) -> Result<Vec<u8>> {
    cloud.validate()?;
    let n = u32::try_from(cloud.len()).map_err(|_| Error::Config("too many points for PCF".into()))?;
    let mut flags = 0;
    if let Some((kind, _)) = &cloud.extras {
        flags |= FLAG_EXTRAS;
        if *kind == ExtrasKind::Colors {
            flags |= FLAG_COLORS;
        }
    }
    let mut out = Vec::with_capacity(16 + 24 * cloud.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&flags.to_le_bytes());
    out.extend_from_slice(&n.to_le_bytes());
    let mut put = |pts: &[[T; 3]]| {
        for p in pts {
            for c in p {
                out.extend_from_slice(&(c.as_f64() as f32).to_le_bytes());
            }
        }
    };
    put(&cloud.points);
    if let Some((_, extras)) = &cloud.extras {
        put(extras);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

pub fn decode_pcf<T: Scalar>(bytes: &[u8]) -> Result<PointCloud<T>> {
    if bytes.len() < 12 {
        return Err(Error::format(bytes.len() as u64, "truncated header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::format(0, "bad magic, expected PCF1"));
    }
    let flags = read_u32(bytes, 4);
    if flags & !(FLAG_EXTRAS | FLAG_COLORS) != 0 {
        return Err(Error::format(4, format!("unknown flag bits {flags:#x}")));
    }
    let n = read_u32(bytes, 8) as usize;
    if n == 0 {
        return Err(Error::format(8, "point count is zero"));
    }
    let blocks = if flags & FLAG_EXTRAS != 0 { 2 } else { 1 };
    let payload_end = 12 + blocks * n * 12;
    let expected = payload_end + 4;
    if bytes.len() < expected {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated: header declares {n} points, file needs {expected} bytes"),
        ));
    }
    if bytes.len() > expected {
        return Err(Error::format(expected as u64, "trailing bytes after checksum"));
    }
    let stored = read_u32(bytes, payload_end);
    let actual = crc32fast::hash(&bytes[..payload_end]);
    if stored != actual {
        return Err(Error::format(
            payload_end as u64,
            format!("checksum mismatch: stored {stored:#010x}, computed {actual:#010x}"),
        ));
    }
    let read_block = |start: usize| -> Result<Vec<[T; 3]>> {
        (0..n)
            .map(|i| {
                let mut p = [T::zero(); 3];
                for (a, c) in p.iter_mut().enumerate() {
                    let at = start + (3 * i + a) * 4;
                    let v = f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
                    if !v.is_finite() {
                        return Err(Error::format(at as u64, "non-finite coordinate"));
                    }
                    *c = T::lit(v as f64);
                }
                Ok(p)
            })
            .collect()
    };
    let mut cloud = PointCloud::new(read_block(12)?)?;
    if blocks == 2 {
        let kind = if flags & FLAG_COLORS != 0 {
            ExtrasKind::Colors
        } else {
            ExtrasKind::Normals
        };
        cloud = cloud.with_extras(kind, read_block(12 + n * 12)?)?;
    }
    Ok(cloud)
}

pub fn save_pcf<T: Scalar>(cloud: &PointCloud<T>, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_pcf(cloud)?;
    fs::write(path.as_ref(), bytes).map_err(|e| Error::io(path, e))
}

pub fn load_pcf<T: Scalar>(path: impl AsRef<Path>) -> Result<PointCloud<T>> {
    let bytes = fs::read(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
    let id = path.as_ref().file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(decode_pcf(&bytes)?.with_id(id))
}

/// One `x y z` triple per line (optionally followed by three extra
/// channels, taken as normals); `#` starts a comment.
pub fn parse_xyz<T: Scalar>(text: &str, file: &str) -> Result<PointCloud<T>> {
    let mut points = Vec::new();
    let mut extras = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            file: file.to_string(),
            line: lineno + 1,
            msg,
        };
        let vals = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().map_err(|_| err(format!("not a number: `{s}`"))))
            .collect::<Result<Vec<_>>>()?;
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(err("non-finite value".into()));
        }
        match vals.len() {
            3 | 6 => {}
            n => return Err(err(format!("expected 3 or 6 values, got {n}"))),
        }
        if !points.is_empty() && (vals.len() == 6) != !extras.is_empty() {
            return Err(err("inconsistent column count".into()));
        }
        points.push([T::lit(vals[0]), T::lit(vals[1]), T::lit(vals[2])]);
        if vals.len() == 6 {
            extras.push([T::lit(vals[3]), T::lit(vals[4]), T::lit(vals[5])]);
        }
    }
    if points.is_empty() {
        return Err(Error::Empty(format!("no points in {file}")));
    }
    let cloud = PointCloud::new(points)?;
    if extras.is_empty() {
        Ok(cloud)
    } else {
        cloud.with_extras(ExtrasKind::Normals, extras)
    }
}

/// Loads `.pcf` as binary and anything else as ASCII XYZ.
pub fn load_cloud<T: Scalar>(path: impl AsRef<Path>) -> Result<PointCloud<T>> {
    let path = path.as_ref();
    let is_pcf = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pcf"));
    if is_pcf {
        return load_pcf(path);
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(parse_xyz(&text, &path.display().to_string())?.with_id(id))
}
