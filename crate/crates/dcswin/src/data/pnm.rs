//! Binary PPM (P6) and PGM (P5) reading and writing. These two headers are
//! the whole on-disk image story: RGB images are P6, label maps are P5 with
//! the class id stored directly in each byte.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

fn bad(path: &Path, what: impl Into<String>) -> Error {
    Error::Data(format!("{}: {}", path.display(), what.into()))
}

/// Pull the next whitespace-delimited ASCII token, skipping `#` comments.
fn next_token(bytes: &[u8], pos: &mut usize) -> Option<String> {
    while *pos < bytes.len() {
        let b = bytes[*pos];
        if b == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else if b.is_ascii_whitespace() {
            *pos += 1;
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() && bytes[*pos] != b'#' {
        *pos += 1;
    }
    (*pos > start).then(|| String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

fn read_header(path: &Path, bytes: &[u8], magic: &str) -> Result<(usize, usize, usize)> {
    let mut pos = 0usize;
    let found = next_token(bytes, &mut pos).ok_or_else(|| bad(path, "empty file"))?;
    if found != magic {
        return Err(bad(path, format!("expected {} header, found '{}'", magic, found)));
    }
    let mut dims = [0usize; 3];
    for slot in &mut dims {
        let tok = next_token(bytes, &mut pos).ok_or_else(|| bad(path, "truncated header"))?;
        *slot = tok
            .parse()
            .map_err(|_| bad(path, format!("bad header number '{}'", tok)))?;
    }
    let (w, h, maxval) = (dims[0], dims[1], dims[2]);
    if w == 0 || h == 0 {
        return Err(bad(path, "zero image dimension"));
    }
    if maxval != 255 {
        return Err(bad(path, format!("only maxval 255 supported, got {}", maxval)));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(bad(path, "missing raster separator"));
    }
    Ok((w, h, pos + 1))
}

fn read_raster(path: &Path, channels: usize) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = fs::read(path)?;
    let magic = if channels == 3 { "P6" } else { "P5" };
    let (w, h, start) = read_header(path, &bytes, magic)?;
    let need = w * h * channels;
    if bytes.len() < start + need {
        return Err(bad(
            path,
            format!("raster truncated: need {} bytes, have {}", need, bytes.len() - start),
        ));
    }
    Ok((w, h, bytes[start..start + need].to_vec()))
}

/// Read a P6 image; returns `(width, height, interleaved RGB bytes)`.
pub fn read_ppm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    read_raster(path, 3)
}

/// Read a P5 map; returns `(width, height, bytes)`.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    read_raster(path, 1)
}

fn write_raster(path: &Path, magic: &str, w: usize, h: usize, data: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    write!(f, "{}\n{} {}\n255\n", magic, w, h)?;
    f.write_all(data)?;
    Ok(())
}

/// Write interleaved RGB bytes as P6.
pub fn write_ppm(path: &Path, w: usize, h: usize, rgb: &[u8]) -> Result<()> {
    assert_eq!(rgb.len(), 3 * w * h, "rgb buffer must be 3*w*h");
    write_raster(path, "P6", w, h, rgb)
}

/// Write one byte per pixel as P5.
pub fn write_pgm(path: &Path, w: usize, h: usize, gray: &[u8]) -> Result<()> {
    assert_eq!(gray.len(), w * h, "gray buffer must be w*h");
    write_raster(path, "P5", w, h, gray)
}
