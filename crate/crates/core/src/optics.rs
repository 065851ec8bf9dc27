//! Free-space propagation by the angular spectrum method, plus the thin
//! dispersive element model used for both the object and the coding masks.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::hscube::{RealImage, SpectralGrid};

/// Cauchy dispersion `n(λ) = B + C/λ² + D/λ⁴`, with `λ` in micrometers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DispersionModel {
    pub b: f64,
    /// µm²
    pub c: f64,
    /// µm⁴
    pub d: f64,
}

impl DispersionModel {
    /// Two-term Cauchy fit for BK7 crown glass.
    pub const BK7: DispersionModel = DispersionModel {
        b: 1.5046,
        c: 0.00420,
        d: 0.0,
    };

    pub fn index(&self, wavelength: f64) -> Result<f64> {
        cauchy_index(self, wavelength)
    }

    /// Errors unless `n(λ) > 1` for every listed wavelength.
    pub fn check_band(&self, wavelengths: &[f64]) -> Result<()> {
        for &l in wavelengths {
            let n = self.index(l)?;
            if n <= 1.0 {
                return Err(Error::invalid(format!(
                    "refractive index {n} at {l} m is not above 1"
                )));
            }
        }
        Ok(())
    }
}

impl Default for DispersionModel {
    fn default() -> Self {
        Self::BK7
    }
}

pub fn cauchy_index(model: &DispersionModel, wavelength: f64) -> Result<f64> {
    if !(wavelength.is_finite() && wavelength > 0.0) {
        return Err(Error::invalid(format!(
            "wavelength must be positive, got {wavelength}"
        )));
    }
    let um2 = (wavelength * 1e6).powi(2);
    Ok(model.b + model.c / um2 + model.d / (um2 * um2))
}

/// Spatial frequencies of an `n`-point FFT with sample spacing `pitch`, in
/// standard FFT order (zero frequency first, negative half last).
pub fn fft_frequencies(n: usize, pitch: f64) -> Vec<f64> {
    let step = 1.0 / (n as f64 * pitch);
    (0..n)
        .map(|i| {
            let j = if i < n.div_ceil(2) { i as f64 } else { i as f64 - n as f64 };
            j * step
        })
        .collect()
}

/// Angular-spectrum transfer function for one wavelength, and its passband.
pub fn angular_spectrum_tf(grid: &SpectralGrid, wavelength: f64, distance: f64) -> (Vec<Complex64>, Vec<bool>) {
    let fy = fft_frequencies(grid.height(), grid.pixel_pitch());
    let fx = fft_frequencies(grid.width(), grid.pixel_pitch());
    let k = 2.0 * PI / wavelength;
    let mut tf = Vec::with_capacity(grid.pixels());
    let mut pass = Vec::with_capacity(grid.pixels());
    for &v in &fy {
        for &u in &fx {
            let s = (wavelength * u).powi(2) + (wavelength * v).powi(2);
            if s <= 1.0 {
                tf.push(Complex64::cis(k * distance * (1.0 - s).sqrt()));
                pass.push(true);
            } else {
                tf.push(Complex64::new(0.0, 0.0));
                pass.push(false);
            }
        }
    }
    (tf, pass)
}

/// Per-wavelength transfer functions for a fixed propagation distance.
#[derive(Clone, Debug)]
pub struct TransferFunctionSet {
    distance: f64,
    tfs: Vec<Vec<Complex64>>,
    passbands: Vec<Vec<bool>>,
}

impl TransferFunctionSet {
    /// Transfer functions at the grid's own distance.
    pub fn new(grid: &SpectralGrid) -> Self {
        Self::at_distance(grid, grid.distance())
    }

    pub fn at_distance(grid: &SpectralGrid, distance: f64) -> Self {
        let (tfs, passbands) = grid
            .wavelengths()
            .iter()
            .map(|&l| angular_spectrum_tf(grid, l, distance))
            .unzip();
        Self {
            distance,
            tfs,
            passbands,
        }
    }

    pub fn distance(&self) -> f64 {
        self.distance
    }

    pub fn channels(&self) -> usize {
        self.tfs.len()
    }

    pub fn tf(&self, k: usize) -> &[Complex64] {
        &self.tfs[k]
    }

    pub fn passband(&self, k: usize) -> &[bool] {
        &self.passbands[k]
    }

    /// True when no frequency of any channel is cut off.
    pub fn is_all_pass(&self) -> bool {
        self.passbands.iter().all(|p| p.iter().all(|&b| b))
    }
}

/// Scratch buffers for one propagation worker.
pub struct PropagationWorkspace {
    transposed: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

/// Unitary 2-D FFT on a fixed grid and the filtering built on it.
#[derive(Clone)]
pub struct Propagator {
    height: usize,
    width: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Propagator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Propagator")
            .field("height", &self.height)
            .field("width", &self.width)
            .finish()
    }
}

impl Propagator {
    pub fn new(height: usize, width: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            height,
            width,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
        }
    }

    pub fn for_grid(grid: &SpectralGrid) -> Self {
        Self::new(grid.height(), grid.width())
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn workspace(&self) -> PropagationWorkspace {
        let scratch = [&self.row_fwd, &self.row_inv, &self.col_fwd, &self.col_inv]
            .iter()
            .map(|f| f.get_inplace_scratch_len())
            .max()
            .unwrap_or(0);
        PropagationWorkspace {
            transposed: vec![Complex64::new(0.0, 0.0); self.pixels()],
            scratch: vec![Complex64::new(0.0, 0.0); scratch],
        }
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.pixels() {
            return Err(Error::shape(format!(
                "field has {len} values, grid is {}x{}",
                self.height, self.width
            )));
        }
        Ok(())
    }

    fn transpose(src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize) {
        for r in 0..rows {
            for c in 0..cols {
                dst[c * rows + r] = src[r * cols + c];
            }
        }
    }

    /// Unitary forward 2-D DFT in place.
    pub fn fft2(&self, field: &mut [Complex64], ws: &mut PropagationWorkspace) -> Result<()> {
        self.check(field.len())?;
        self.transform(field, ws, true);
        Ok(())
    }

    /// Unitary inverse 2-D DFT in place.
    pub fn ifft2(&self, field: &mut [Complex64], ws: &mut PropagationWorkspace) -> Result<()> {
        self.check(field.len())?;
        self.transform(field, ws, false);
        Ok(())
    }

    fn transform(&self, field: &mut [Complex64], ws: &mut PropagationWorkspace, forward: bool) {
        let (h, w) = (self.height, self.width);
        let (rows, cols) = if forward {
            (&self.row_fwd, &self.col_fwd)
        } else {
            (&self.row_inv, &self.col_inv)
        };
        rows.process_with_scratch(field, &mut ws.scratch);
        Self::transpose(field, &mut ws.transposed, h, w);
        cols.process_with_scratch(&mut ws.transposed, &mut ws.scratch);
        Self::transpose(&ws.transposed, field, w, h);
        let s = 1.0 / (self.pixels() as f64).sqrt();
        field.iter_mut().for_each(|z| *z *= s);
    }

    /// `F⁻¹{tf ∘ F{field}}` in place; with `adjoint` the filter is `conj(tf)`.
    pub fn propagate_in_place(
        &self,
        field: &mut [Complex64],
        tf: &[Complex64],
        adjoint: bool,
        ws: &mut PropagationWorkspace,
    ) -> Result<()> {
        self.check(field.len())?;
        self.check(tf.len())?;
        let (h, w) = (self.height, self.width);
        self.row_fwd.process_with_scratch(field, &mut ws.scratch);
        Self::transpose(field, &mut ws.transposed, h, w);
        self.col_fwd
            .process_with_scratch(&mut ws.transposed, &mut ws.scratch);
        // the two 1/sqrt(N) factors of the unitary pair are folded into one
        let s = 1.0 / self.pixels() as f64;
        for c in 0..w {
            let col = &mut ws.transposed[c * h..(c + 1) * h];
            for (r, z) in col.iter_mut().enumerate() {
                let t = tf[r * w + c];
                let t = if adjoint { t.conj() } else { t };
                *z *= t * s;
            }
        }
        self.col_inv
            .process_with_scratch(&mut ws.transposed, &mut ws.scratch);
        Self::transpose(&ws.transposed, field, w, h);
        self.row_inv.process_with_scratch(field, &mut ws.scratch);
        Ok(())
    }

    pub fn propagate(&self, field: &[Complex64], tf: &[Complex64]) -> Result<Vec<Complex64>> {
        let mut out = field.to_vec();
        self.propagate_in_place(&mut out, tf, false, &mut self.workspace())?;
        Ok(out)
    }

    /// Adjoint propagation, i.e. filtering with `conj(tf)`.
    pub fn backpropagate(&self, field: &[Complex64], tf: &[Complex64]) -> Result<Vec<Complex64>> {
        let mut out = field.to_vec();
        self.propagate_in_place(&mut out, tf, true, &mut self.workspace())?;
        Ok(out)
    }
}

/// Thin-element transmittance `g = a·exp(−j·(2π/λ)·h·(n(λ)−1))`.
pub fn transmittance(
    amplitude: &RealImage,
    thickness: &RealImage,
    wavelength: f64,
    model: &DispersionModel,
) -> Result<Vec<Complex64>> {
    if amplitude.height() != thickness.height() || amplitude.width() != thickness.width() {
        return Err(Error::shape("amplitude and thickness maps differ in shape"));
    }
    if !amplitude.is_nonnegative() {
        return Err(Error::invalid("amplitude must be nonnegative"));
    }
    let n = model.index(wavelength)?;
    let k = 2.0 * PI / wavelength;
    Ok(amplitude
        .data()
        .iter()
        .zip(thickness.data())
        .map(|(&a, &h)| Complex64::from_polar(a, -k * h * (n - 1.0)))
        .collect())
}
