//! Binary cube formats and 8-bit PGM images.
//!
//! `HSC1`: magic `b"HSC1"`, then `K, H, W` as little-endian `u32`, then
//! `K·H·W` pairs of little-endian `f64` `(re, im)` in `(k, row, col)` order.
//!
//! `HSR1`: magic `b"HSR1"`, then `N, H, W` as little-endian `u32`, then
//! `N·H·W` little-endian `f64` values in `(n, row, col)` order. A single
//! image is stored with `N = 1`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::hscube::{ComplexCube, RealImage};

const HSC1: &[u8; 4] = b"HSC1";
const HSR1: &[u8; 4] = b"HSR1";

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn write_header(w: &mut impl Write, magic: &[u8; 4], dims: [usize; 3]) -> std::io::Result<()> {
    w.write_all(magic)?;
    for d in dims {
        let d = u32::try_from(d).map_err(|_| {
            std::io::Error::new(std::io::ErrorKind::InvalidInput, "dimension exceeds u32")
        })?;
        w.write_all(&d.to_le_bytes())?;
    }
    Ok(())
}

fn read_header(r: &mut impl Read, magic: &[u8; 4], path: &Path) -> Result<[usize; 3]> {
    let mut head = [0u8; 16];
    r.read_exact(&mut head)
        .map_err(|_| format_err(path, "truncated header"))?;
    if &head[..4] != magic {
        return Err(format_err(
            path,
            format!("expected magic {:?}", std::str::from_utf8(magic).unwrap_or("?")),
        ));
    }
    let mut dims = [0usize; 3];
    for (i, d) in dims.iter_mut().enumerate() {
        let b: [u8; 4] = head[4 + 4 * i..8 + 4 * i].try_into().unwrap();
        *d = u32::from_le_bytes(b) as usize;
    }
    Ok(dims)
}

fn read_f64s(r: &mut impl Read, count: usize, path: &Path) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; count * 8];
    r.read_exact(&mut bytes)
        .map_err(|_| format_err(path, "truncated payload"))?;
    let mut extra = [0u8; 1];
    if r.read(&mut extra).map_err(|e| Error::io(path, e))? != 0 {
        return Err(format_err(path, "trailing bytes after payload"));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn write_cube(path: impl AsRef<Path>, cube: &ComplexCube) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    write_header(&mut w, HSC1, [cube.channels(), cube.height(), cube.width()]).map_err(io)?;
    for z in cube.data() {
        w.write_all(&z.re.to_le_bytes()).map_err(io)?;
        w.write_all(&z.im.to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_cube(path: impl AsRef<Path>) -> Result<ComplexCube> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let [k, h, w] = read_header(&mut r, HSC1, path)?;
    let values = read_f64s(&mut r, 2 * k * h * w, path)?;
    let data = values
        .chunks_exact(2)
        .map(|p| Complex64::new(p[0], p[1]))
        .collect();
    ComplexCube::new(k, h, w, data).map_err(|e| format_err(path, e.to_string()))
}

/// Writes a stack of equally sized images as one `HSR1` file.
pub fn write_images(path: impl AsRef<Path>, images: &[RealImage]) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = match images.first() {
        Some(im) => (im.height(), im.width()),
        None => return Err(Error::invalid("cannot write an empty image stack")),
    };
    if images.iter().any(|im| im.height() != h || im.width() != w) {
        return Err(Error::shape("all images in a stack must share one shape"));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    write_header(&mut out, HSR1, [images.len(), h, w]).map_err(io)?;
    for im in images {
        for v in im.data() {
            out.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

pub fn read_images(path: impl AsRef<Path>) -> Result<Vec<RealImage>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let [n, h, w] = read_header(&mut r, HSR1, path)?;
    let values = read_f64s(&mut r, n * h * w, path)?;
    values
        .chunks_exact((h * w).max(1))
        .take(n)
        .map(|c| RealImage::new(h, w, c.to_vec()).map_err(|e| format_err(path, e.to_string())))
        .collect()
}

/// Writes an 8-bit binary PGM, mapping `[lo, hi]` linearly onto `0..=255`.
pub fn write_pgm(path: impl AsRef<Path>, image: &RealImage, lo: f64, hi: f64) -> Result<()> {
    let path = path.as_ref();
    let span = if hi > lo { hi - lo } else { 1.0 };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    write!(w, "P5\n{} {}\n255\n", image.width(), image.height()).map_err(io)?;
    let bytes: Vec<u8> = image
        .data()
        .iter()
        .map(|&v| (((v - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    w.write_all(&bytes).map_err(io)?;
    w.flush().map_err(io)
}

/// Reads a binary PGM (`P5`) and scales it to `[0, 1]` by its declared maxval.
pub fn read_pgm(path: impl AsRef<Path>) -> Result<RealImage> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;

    // Header: magic, width, height, maxval separated by whitespace, with
    // `#` comments running to end of line.
    let mut pos = 0usize;
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
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(format_err(path, "truncated PGM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(format_err(path, "only binary PGM (P5) is supported"));
    }
    let parse = |s: &str, what: &str| {
        s.parse::<usize>()
            .map_err(|_| format_err(path, format!("bad {what} '{s}'")))
    };
    let width = parse(&fields[1], "width")?;
    let height = parse(&fields[2], "height")?;
    let maxval = parse(&fields[3], "maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(format_err(path, "maxval must be in 1..=65535"));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let n = width * height;
    let depth = if maxval < 256 { 1 } else { 2 };
    let raster = bytes
        .get(pos..pos + n * depth)
        .ok_or_else(|| format_err(path, "truncated raster"))?;
    let scale = 1.0 / maxval as f64;
    let data = if depth == 1 {
        raster.iter().map(|&b| b as f64 * scale).collect()
    } else {
        raster
            .chunks_exact(2)
            .map(|p| u16::from_be_bytes([p[0], p[1]]) as f64 * scale)
            .collect()
    };
    RealImage::new(height, width, data)
}
