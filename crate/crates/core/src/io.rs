//! On-disk formats for views and masks.
//!
//! | data     | format                                                        |
//! |----------|---------------------------------------------------------------|
//! | RGB      | binary PPM (`P6`, 8-bit)                                      |
//! | labels   | binary PGM (`P5`, 8-bit)                                      |
//! | masks    | binary PBM (`P4`, 1 bit per pixel, MSB first, rows padded)    |
//! | depth    | `DPTH`, u16 width, u16 height, then f32 LE values row-major   |
//! | logits   | `LGTS`, u16 width, u16 height, u16 channels, then f32 LE      |

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{DepthMap, LabelMap, LogitMap, Map, Mask, RgbImage};

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), reason: reason.into() }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingArtifact(path.to_path_buf())
        } else {
            e.into()
        }
    })
}

fn to_u8(x: f64) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn dim_u16(path: &Path, n: usize) -> Result<u16> {
    u16::try_from(n).map_err(|_| format_err(path, format!("dimension {n} exceeds u16")))
}

/// Parses a netpbm header, returning (magic, width, height, maxval, offset of
/// raster data). `maxval` is `None` for PBM.
fn netpbm_header(path: &Path, bytes: &[u8]) -> Result<(String, usize, usize, Option<usize>, usize)> {
    let mut pos = 0;
    let mut tokens = Vec::new();
    let want = |magic: &str| if magic == "P4" { 3 } else { 4 };
    while tokens.len() < 4 {
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
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(format_err(path, "truncated netpbm header"));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        if tokens.len() == want(&tokens[0]) {
            break;
        }
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let parse = |s: &str| s.parse::<usize>().map_err(|_| format_err(path, format!("bad header field {s:?}")));
    let width = parse(&tokens[1])?;
    let height = parse(&tokens[2])?;
    let maxval = if tokens.len() == 4 { Some(parse(&tokens[3])?) } else { None };
    Ok((tokens[0].clone(), width, height, maxval, pos))
}

pub fn write_ppm(path: &Path, img: &RgbImage) -> Result<()> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    for px in &img.data {
        out.extend(px.iter().map(|&c| to_u8(c)));
    }
    write_atomic(path, &out)
}

pub fn read_ppm(path: &Path) -> Result<RgbImage> {
    let bytes = read(path)?;
    let (magic, w, h, maxval, off) = netpbm_header(path, &bytes)?;
    if magic != "P6" || maxval != Some(255) {
        return Err(format_err(path, "expected 8-bit P6"));
    }
    let raster = bytes.get(off..off + w * h * 3).ok_or_else(|| format_err(path, "truncated raster"))?;
    let data = raster
        .chunks_exact(3)
        .map(|c| [c[0] as f64 / 255.0, c[1] as f64 / 255.0, c[2] as f64 / 255.0])
        .collect();
    Map::from_vec(w, h, data)
}

pub fn write_pgm(path: &Path, labels: &LabelMap) -> Result<()> {
    let mut out = format!("P5\n{} {}\n255\n", labels.width, labels.height).into_bytes();
    out.extend_from_slice(&labels.data);
    write_atomic(path, &out)
}

pub fn read_pgm(path: &Path) -> Result<LabelMap> {
    let bytes = read(path)?;
    let (magic, w, h, maxval, off) = netpbm_header(path, &bytes)?;
    if magic != "P5" || maxval != Some(255) {
        return Err(format_err(path, "expected 8-bit P5"));
    }
    let raster = bytes.get(off..off + w * h).ok_or_else(|| format_err(path, "truncated raster"))?;
    Map::from_vec(w, h, raster.to_vec())
}

pub fn write_pbm(path: &Path, mask: &Mask) -> Result<()> {
    let mut out = format!("P4\n{} {}\n", mask.width, mask.height).into_bytes();
    let row_bytes = mask.width.div_ceil(8);
    for y in 0..mask.height {
        let mut row = vec![0u8; row_bytes];
        for x in 0..mask.width {
            // PBM: 1 is black; we store "set" as 1
            if *mask.get(x, y) {
                row[x / 8] |= 0x80 >> (x % 8);
            }
        }
        out.extend_from_slice(&row);
    }
    write_atomic(path, &out)
}

pub fn read_pbm(path: &Path) -> Result<Mask> {
    let bytes = read(path)?;
    let (magic, w, h, _, off) = netpbm_header(path, &bytes)?;
    if magic != "P4" {
        return Err(format_err(path, "expected P4"));
    }
    let row_bytes = w.div_ceil(8);
    let raster = bytes.get(off..off + row_bytes * h).ok_or_else(|| format_err(path, "truncated raster"))?;
    Ok(Map::from_fn(w, h, |x, y| raster[y * row_bytes + x / 8] & (0x80 >> (x % 8)) != 0))
}

pub fn write_depth(path: &Path, depth: &DepthMap) -> Result<()> {
    let mut out = Vec::with_capacity(8 + depth.len() * 4);
    out.extend_from_slice(b"DPTH");
    out.extend_from_slice(&dim_u16(path, depth.width)?.to_le_bytes());
    out.extend_from_slice(&dim_u16(path, depth.height)?.to_le_bytes());
    for &d in &depth.data {
        out.extend_from_slice(&(d as f32).to_le_bytes());
    }
    write_atomic(path, &out)
}

pub fn read_depth(path: &Path) -> Result<DepthMap> {
    let bytes = read(path)?;
    if bytes.len() < 8 || &bytes[..4] != b"DPTH" {
        return Err(format_err(path, "missing DPTH magic"));
    }
    let w = u16::from_le_bytes([bytes[4], bytes[5]]) as usize;
    let h = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let body = bytes.get(8..8 + w * h * 4).ok_or_else(|| format_err(path, "truncated depth data"))?;
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Map::from_vec(w, h, data)
}

pub fn write_logits(path: &Path, logits: &LogitMap) -> Result<()> {
    let mut out = Vec::with_capacity(10 + logits.data.len() * 4);
    out.extend_from_slice(b"LGTS");
    out.extend_from_slice(&dim_u16(path, logits.width)?.to_le_bytes());
    out.extend_from_slice(&dim_u16(path, logits.height)?.to_le_bytes());
    out.extend_from_slice(&dim_u16(path, logits.channels)?.to_le_bytes());
    for &v in &logits.data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    write_atomic(path, &out)
}

pub fn read_logits(path: &Path) -> Result<LogitMap> {
    let bytes = read(path)?;
    if bytes.len() < 10 || &bytes[..4] != b"LGTS" {
        return Err(format_err(path, "missing LGTS magic"));
    }
    let w = u16::from_le_bytes([bytes[4], bytes[5]]) as usize;
    let h = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let c = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let body = bytes.get(10..10 + w * h * c * 4).ok_or_else(|| format_err(path, "truncated logits"))?;
    let data = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    Ok(LogitMap { width: w, height: h, channels: c, data })
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic(path, bytes)
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    read(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn netpbm_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let img = Map::from_fn(5, 3, |x, y| [x as f64 / 4.0, y as f64 / 2.0, 1.0]);
        write_ppm(&dir.path().join("a.ppm"), &img).unwrap();
        let back = read_ppm(&dir.path().join("a.ppm")).unwrap();
        for (a, b) in img.data.iter().zip(&back.data) {
            for c in 0..3 {
                assert!((a[c] - b[c]).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }

        let labels = Map::from_fn(9, 2, |x, y| (x * 3 + y) as u8);
        write_pgm(&dir.path().join("l.pgm"), &labels).unwrap();
        assert_eq!(read_pgm(&dir.path().join("l.pgm")).unwrap(), labels);

        let mask = Map::from_fn(11, 3, |x, y| (x + y) % 3 == 0);
        write_pbm(&dir.path().join("m.pbm"), &mask).unwrap();
        assert_eq!(read_pbm(&dir.path().join("m.pbm")).unwrap(), mask);
    }

    #[test]
    fn binary_headers() {
        let dir = tempfile::tempdir().unwrap();
        let depth = Map::from_fn(4, 2, |x, y| 0.25 * (x + 4 * y) as f64);
        let p = dir.path().join("d.bin");
        write_depth(&p, &depth).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(&bytes[..8], &[b'D', b'P', b'T', b'H', 4, 0, 2, 0]);
        assert_eq!(bytes.len(), 8 + 8 * 4);
        assert_eq!(read_depth(&p).unwrap(), depth);

        let mut logits = LogitMap::zeros(3, 2, 5);
        logits.data.iter_mut().enumerate().for_each(|(i, v)| *v = i as f64 - 7.5);
        let p = dir.path().join("g.bin");
        write_logits(&p, &logits).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(&bytes[..10], &[b'L', b'G', b'T', b'S', 3, 0, 2, 0, 5, 0]);
        assert_eq!(read_logits(&p).unwrap(), logits);
    }

    #[test]
    fn missing_file_is_reported() {
        let err = read_depth(Path::new("/nonexistent/depth.bin")).unwrap_err();
        assert!(matches!(err, Error::MissingArtifact(_)));
    }

    #[test]
    fn header_with_comment() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.pgm");
        fs::write(&p, b"P5\n# made by hand\n2 1\n255\n\x01\x02").unwrap();
        assert_eq!(read_pgm(&p).unwrap().data, vec![1, 2]);
    }
}
