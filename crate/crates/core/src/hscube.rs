//! Spectral cube data model.
//!
//! Every field in the pipeline lives on the same `height × width` pixel grid
//! and is addressed by a flattened row-major pixel index `r = row * width + col`.
//! A [`ComplexCube`] stacks `K` such fields along the spectral axis with
//! channel-major storage, so `(k, r)` maps to `k * pixels + r`.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Wavelength sampling and spatial geometry shared by all fields.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralGrid {
    wavelengths: Vec<f64>,
    pixel_pitch: f64,
    height: usize,
    width: usize,
    distance: f64,
}

impl SpectralGrid {
    pub fn new(
        wavelengths: Vec<f64>,
        pixel_pitch: f64,
        height: usize,
        width: usize,
        distance: f64,
    ) -> Result<Self> {
        if wavelengths.is_empty() {
            return Err(Error::invalid("at least one wavelength is required"));
        }
        if wavelengths.iter().any(|&l| !(l.is_finite() && l > 0.0)) {
            return Err(Error::invalid("wavelengths must be finite and positive"));
        }
        if wavelengths.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("wavelengths must be strictly increasing"));
        }
        if !(pixel_pitch.is_finite() && pixel_pitch > 0.0) {
            return Err(Error::invalid("pixel pitch must be positive"));
        }
        if height == 0 || width == 0 {
            return Err(Error::invalid("grid must have at least one pixel"));
        }
        if !(distance.is_finite() && distance >= 0.0) {
            return Err(Error::invalid("propagation distance must be nonnegative"));
        }
        Ok(Self {
            wavelengths,
            pixel_pitch,
            height,
            width,
            distance,
        })
    }

    /// `count` wavelengths spread uniformly over `[lo, hi]`, endpoints included.
    /// A single channel sits at the midpoint.
    pub fn uniform_band(count: usize, lo: f64, hi: f64) -> Result<Vec<f64>> {
        if count == 0 {
            return Err(Error::invalid("channel count must be at least 1"));
        }
        if !(lo > 0.0 && hi > lo) {
            return Err(Error::invalid("wavelength band must satisfy 0 < lo < hi"));
        }
        if count == 1 {
            return Ok(vec![0.5 * (lo + hi)]);
        }
        let step = (hi - lo) / (count - 1) as f64;
        Ok((0..count).map(|i| lo + step * i as f64).collect())
    }

    pub fn wavelengths(&self) -> &[f64] {
        &self.wavelengths
    }

    pub fn wavenumber(&self, k: usize) -> f64 {
        2.0 * PI / self.wavelengths[k]
    }

    pub fn wavenumbers(&self) -> Vec<f64> {
        (0..self.channels()).map(|k| self.wavenumber(k)).collect()
    }

    pub fn channels(&self) -> usize {
        self.wavelengths.len()
    }

    pub fn lambda_min(&self) -> f64 {
        self.wavelengths[0]
    }

    pub fn pixel_pitch(&self) -> f64 {
        self.pixel_pitch
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn distance(&self) -> f64 {
        self.distance
    }

    /// Same geometry with a different propagation distance.
    pub fn with_distance(&self, distance: f64) -> Result<Self> {
        Self::new(
            self.wavelengths.clone(),
            self.pixel_pitch,
            self.height,
            self.width,
            distance,
        )
    }
}

/// A `K`-channel stack of `height × width` complex fields.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexCube {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<Complex64>,
}

impl ComplexCube {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::shape(format!(
                "cube {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        if data.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::invalid("cube values must be finite"));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![Complex64::new(0.0, 0.0); channels * height * width],
        }
    }

    /// Stacks equally sized fields as channels.
    pub fn from_channels(height: usize, width: usize, fields: &[Vec<Complex64>]) -> Result<Self> {
        let n = height * width;
        let mut data = Vec::with_capacity(fields.len() * n);
        for (k, f) in fields.iter().enumerate() {
            if f.len() != n {
                return Err(Error::shape(format!(
                    "channel {k} has {} values, expected {n}",
                    f.len()
                )));
            }
            data.extend_from_slice(f);
        }
        Self::new(fields.len(), height, width, data)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn get(&self, k: usize, r: usize) -> Complex64 {
        self.data[k * self.pixels() + r]
    }

    pub fn channel(&self, k: usize) -> &[Complex64] {
        let n = self.pixels();
        &self.data[k * n..(k + 1) * n]
    }

    pub fn channel_mut(&mut self, k: usize) -> &mut [Complex64] {
        let n = self.pixels();
        &mut self.data[k * n..(k + 1) * n]
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn same_shape(&self, other: &ComplexCube) -> bool {
        self.shape() == other.shape()
    }

    pub fn amplitude(&self, k: usize) -> RealImage {
        RealImage::from_fn(self.height, self.width, |r| self.channel(k)[r].norm())
    }

    pub fn phase(&self, k: usize) -> RealImage {
        RealImage::from_fn(self.height, self.width, |r| self.channel(k)[r].arg())
    }
}

/// `Σ_{k,r} a(k,r)·conj(b(k,r))`.
pub fn cube_inner(a: &ComplexCube, b: &ComplexCube) -> Result<Complex64> {
    if !a.same_shape(b) {
        return Err(Error::shape(format!(
            "inner product of {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(field_inner(a.data(), b.data()))
}

/// `Σ_{k,r} |a(k,r)|²`.
pub fn cube_norm2(a: &ComplexCube) -> f64 {
    field_norm2(a.data())
}

pub(crate) fn field_inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x * y.conj()).sum()
}

pub(crate) fn field_norm2(a: &[Complex64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

/// A real-valued `height × width` image (intensity, counts, thickness or phase).
#[derive(Clone, Debug, PartialEq)]
pub struct RealImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl RealImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape(format!(
                "image {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("image values must be finite"));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, f: impl FnMut(usize) -> f64) -> Self {
        Self {
            height,
            width,
            data: (0..height * width).map(f).collect(),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> usize {
        self.data.len()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn is_nonnegative(&self) -> bool {
        self.data.iter().all(|&v| v >= 0.0)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}
