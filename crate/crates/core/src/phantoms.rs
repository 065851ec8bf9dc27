//! Synthetic test objects and grayscale image ingestion.
//!
//! An object is built from an amplitude image and a phase image, both in
//! `[0, 1]`. The phase image is turned into a thickness map so that the
//! largest phase delay is exactly `π` at the shortest wavelength; the same
//! thickness then produces smaller, proportional delays at longer
//! wavelengths. The object is embedded in a frame of zeros.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hscube::{ComplexCube, RealImage, SpectralGrid};
use crate::io::read_pgm;
use crate::optics::{transmittance, DispersionModel};

/// Smallest amplitude inside the object support.
pub const AMPLITUDE_FLOOR: f64 = 0.05;

/// Checkerboard levels.
pub const CHECKER_LEVELS: [f64; 2] = [AMPLITUDE_FLOOR, 1.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhantomKind {
    /// Sum of random Gaussian bumps.
    Blobs,
    /// 8×8 board of two levels.
    Checker,
    /// Modified Shepp–Logan head phantom.
    Shepp,
}

impl fmt::Display for PhantomKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PhantomKind::Blobs => "blobs",
            PhantomKind::Checker => "checker",
            PhantomKind::Shepp => "shepp",
        })
    }
}

impl std::str::FromStr for PhantomKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "blobs" => Ok(PhantomKind::Blobs),
            "checker" => Ok(PhantomKind::Checker),
            "shepp" => Ok(PhantomKind::Shepp),
            other => Err(Error::invalid(format!("unknown phantom '{other}'"))),
        }
    }
}

/// Deterministic `size × size` image with values in `[0, 1]`.
pub fn make_phantom(kind: PhantomKind, size: usize, seed: u64) -> Result<RealImage> {
    if size < 8 {
        return Err(Error::invalid(format!("phantom size must be at least 8, got {size}")));
    }
    Ok(match kind {
        PhantomKind::Blobs => normalize(blobs(size, seed)),
        PhantomKind::Checker => checker(size),
        PhantomKind::Shepp => normalize(shepp_logan(size)),
    })
}

fn normalize(img: RealImage) -> RealImage {
    let (lo, hi) = (img.min(), img.max());
    let span = hi - lo;
    let (h, w) = (img.height(), img.width());
    let data = img
        .into_data()
        .into_iter()
        .map(|v| if span > 0.0 { (v - lo) / span } else { 0.0 })
        .collect();
    RealImage::new(h, w, data).expect("normalized image is finite")
}

fn blobs(size: usize, seed: u64) -> RealImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = 12;
    let blobs: Vec<(f64, f64, f64, f64)> = (0..count)
        .map(|_| {
            let cy = rng.random_range(0.1..0.9);
            let cx = rng.random_range(0.1..0.9);
            let radius = rng.random_range(0.04..0.18);
            let weight = rng.random_range(-0.6..1.0);
            (cy, cx, radius, weight)
        })
        .collect();
    let n = size as f64;
    RealImage::from_fn(size, size, |r| {
        let y = ((r / size) as f64 + 0.5) / n;
        let x = ((r % size) as f64 + 0.5) / n;
        let smooth: f64 = blobs
            .iter()
            .map(|&(cy, cx, rad, wgt)| {
                let d2 = (y - cy).powi(2) + (x - cx).powi(2);
                wgt * (-d2 / (2.0 * rad * rad)).exp()
            })
            .sum();
        // one hard-edged disc so the image has an edge as well as smooth parts
        let disc = if (y - 0.3).powi(2) + (x - 0.65).powi(2) < 0.12f64.powi(2) { 0.5 } else { 0.0 };
        smooth + disc
    })
}

fn checker(size: usize) -> RealImage {
    let cell = (size / 8).max(1);
    RealImage::from_fn(size, size, |r| {
        let (row, col) = (r / size, r % size);
        CHECKER_LEVELS[((row / cell) + (col / cell)) % 2]
    })
}

/// `(intensity, a, b, x0, y0, angle in degrees)` of the modified phantom.
const SHEPP_ELLIPSES: [(f64, f64, f64, f64, f64, f64); 10] = [
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
];

fn shepp_logan(size: usize) -> RealImage {
    let n = size as f64;
    RealImage::from_fn(size, size, |r| {
        let y = 1.0 - 2.0 * ((r / size) as f64 + 0.5) / n;
        let x = 2.0 * ((r % size) as f64 + 0.5) / n - 1.0;
        SHEPP_ELLIPSES
            .iter()
            .filter(|&&(_, a, b, x0, y0, deg)| {
                let (s, c) = deg.to_radians().sin_cos();
                let (dx, dy) = (x - x0, y - y0);
                let u = dx * c + dy * s;
                let v = -dx * s + dy * c;
                (u / a).powi(2) + (v / b).powi(2) <= 1.0
            })
            .map(|e| e.0)
            .sum()
    })
}

/// Reads an 8/16-bit PGM, scales it to `[0, 1]` and resamples it to
/// `size × size` by area averaging.
pub fn load_image(path: impl AsRef<Path>, size: usize) -> Result<RealImage> {
    if size == 0 {
        return Err(Error::invalid("target size must be positive"));
    }
    let img = read_pgm(path)?;
    Ok(resample_area(&img, size, size))
}

/// Box-filter resampling: every output pixel is the area-weighted mean of
/// the input pixels it covers.
pub fn resample_area(img: &RealImage, out_h: usize, out_w: usize) -> RealImage {
    let wy = overlap_weights(img.height(), out_h);
    let wx = overlap_weights(img.width(), out_w);
    RealImage::from_fn(out_h, out_w, |r| {
        let (oy, ox) = (r / out_w, r % out_w);
        let mut acc = 0.0;
        let mut total = 0.0;
        for &(iy, fy) in &wy[oy] {
            for &(ix, fx) in &wx[ox] {
                acc += fy * fx * img.get(iy, ix);
                total += fy * fx;
            }
        }
        acc / total
    })
}

/// For each output index, the input indices it covers and the overlap lengths.
fn overlap_weights(n_in: usize, n_out: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let (lo, hi) = (o as f64 * scale, (o + 1) as f64 * scale);
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(n_in);
            (first..last)
                .filter_map(|i| {
                    let w = (hi.min((i + 1) as f64) - lo.max(i as f64)).max(0.0);
                    (w > 1e-12).then_some((i, w))
                })
                .collect()
        })
        .collect()
}

/// Source of one object component.
#[derive(Clone, Debug, PartialEq)]
pub enum ImageSource {
    Phantom { kind: PhantomKind, seed: u64 },
    File(std::path::PathBuf),
}

impl ImageSource {
    pub fn render(&self, size: usize) -> Result<RealImage> {
        match self {
            ImageSource::Phantom { kind, seed } => make_phantom(*kind, size, *seed),
            ImageSource::File(path) => load_image(path, size),
        }
    }
}

impl fmt::Display for ImageSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ImageSource::Phantom { kind, seed } => write!(f, "{kind}:{seed}"),
            ImageSource::File(p) => write!(f, "file:{}", p.display()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectSpec {
    pub amplitude: ImageSource,
    pub phase: ImageSource,
    /// Side length of the object itself, without the frame.
    pub size: usize,
    /// Zero frame width on each side, in pixels.
    pub frame: usize,
}

/// Default frame: a quarter of the object size on each side.
pub fn default_frame(size: usize) -> usize {
    size / 4
}

impl ObjectSpec {
    pub fn new(size: usize) -> Self {
        Self {
            amplitude: ImageSource::Phantom { kind: PhantomKind::Blobs, seed: 1 },
            phase: ImageSource::Phantom { kind: PhantomKind::Shepp, seed: 0 },
            size,
            frame: default_frame(size),
        }
    }

    /// Side length of the framed object, i.e. the simulation grid.
    pub fn grid_size(&self) -> usize {
        self.size + 2 * self.frame
    }
}

/// A synthesized object with the maps it was built from.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectCube {
    pub cube: ComplexCube,
    /// Framed amplitude, zero outside the support.
    pub amplitude: RealImage,
    /// Framed thickness in meters.
    pub thickness: RealImage,
    /// True inside the embedded object.
    pub support: Vec<bool>,
}

/// `h = φ·λ_min / (2π(n(λ_min) − 1))` for a phase image `φ/π ∈ [0, 1]`.
pub fn thickness_from_phase(phase: &RealImage, lambda_min: f64, model: &DispersionModel) -> Result<RealImage> {
    let n = model.index(lambda_min)?;
    if n <= 1.0 {
        return Err(Error::invalid("refractive index must exceed 1"));
    }
    let scale = PI * lambda_min / (2.0 * PI * (n - 1.0));
    Ok(RealImage::from_fn(phase.height(), phase.width(), |r| {
        phase.data()[r].clamp(0.0, 1.0) * scale
    }))
}

fn embed(img: &RealImage, frame: usize) -> RealImage {
    let (h, w) = (img.height(), img.width());
    let side_w = w + 2 * frame;
    RealImage::from_fn(h + 2 * frame, side_w, |r| {
        let (row, col) = (r / side_w, r % side_w);
        if row < frame || col < frame || row >= frame + h || col >= frame + w {
            0.0
        } else {
            img.get(row - frame, col - frame)
        }
    })
}

/// Builds the spectral object cube on `grid`, which must have side
/// `spec.grid_size()`.
pub fn build_object_cube(spec: &ObjectSpec, grid: &SpectralGrid, model: &DispersionModel) -> Result<ObjectCube> {
    let side = spec.grid_size();
    if grid.height() != side || grid.width() != side {
        return Err(Error::shape(format!(
            "object of side {side} (with frame) does not fit a {}x{} grid",
            grid.height(),
            grid.width()
        )));
    }
    let amp = spec.amplitude.render(spec.size)?;
    let phase = spec.phase.render(spec.size)?;
    let amp = RealImage::from_fn(spec.size, spec.size, |r| amp.data()[r].clamp(AMPLITUDE_FLOOR, 1.0));
    object_from_maps(&amp, &phase, spec.frame, grid, model)
}

/// Object from explicit amplitude and normalized phase maps (`φ/π`).
pub fn object_from_maps(
    amplitude: &RealImage,
    phase: &RealImage,
    frame: usize,
    grid: &SpectralGrid,
    model: &DispersionModel,
) -> Result<ObjectCube> {
    if amplitude.height() != phase.height() || amplitude.width() != phase.width() {
        return Err(Error::shape("amplitude and phase maps differ in shape"));
    }
    let thickness = embed(&thickness_from_phase(phase, grid.lambda_min(), model)?, frame);
    let amplitude = embed(amplitude, frame);
    if grid.height() != amplitude.height() || grid.width() != amplitude.width() {
        return Err(Error::shape("framed object does not match the grid"));
    }
    let fields = grid
        .wavelengths()
        .iter()
        .map(|&l| transmittance(&amplitude, &thickness, l, model))
        .collect::<Result<Vec<_>>>()?;
    let cube = ComplexCube::from_channels(grid.height(), grid.width(), &fields)?;
    let inner = embed(&RealImage::filled(phase.height(), phase.width(), 1.0), frame);
    let support = inner.data().iter().map(|&v| v > 0.0).collect();
    Ok(ObjectCube {
        cube,
        amplitude,
        thickness,
        support,
    })
}
