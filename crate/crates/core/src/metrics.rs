//! Reconstruction accuracy and noise metrics.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::hscube::{ComplexCube, RealImage};

/// How the unobservable global phase is removed before comparing cubes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PhaseAlignment {
    /// Each channel gets its own optimal phase.
    #[default]
    PerChannel,
    /// One phase for the whole cube.
    Joint,
}

/// Sums `(‖x̂‖², ‖x‖², ⟨x̂, x⟩)` over the selected pixels.
fn moments(estimate: &[Complex64], truth: &[Complex64], support: Option<&[bool]>) -> (f64, f64, Complex64) {
    let mut ee = 0.0;
    let mut tt = 0.0;
    let mut et = Complex64::new(0.0, 0.0);
    for (r, (e, t)) in estimate.iter().zip(truth).enumerate() {
        if support.is_some_and(|s| !s[r]) {
            continue;
        }
        ee += e.norm_sqr();
        tt += t.norm_sqr();
        et += e * t.conj();
    }
    (ee, tt, et)
}

fn error_from(ee: f64, tt: f64, et: Complex64) -> Result<f64> {
    if tt == 0.0 {
        return Err(Error::Degenerate("reference field has zero energy".into()));
    }
    Ok(((ee + tt - 2.0 * et.norm()) / tt).max(0.0))
}

/// `min_φ ‖x̂·e^{jφ} − x‖² / ‖x‖²`, in closed form
/// `(‖x̂‖² + ‖x‖² − 2|⟨x̂, x⟩|) / ‖x‖²`, optionally restricted to a support.
pub fn relative_error(estimate: &[Complex64], truth: &[Complex64], support: Option<&[bool]>) -> Result<f64> {
    if estimate.len() != truth.len() || support.is_some_and(|s| s.len() != truth.len()) {
        return Err(Error::shape("estimate, truth and support must have equal length"));
    }
    let (ee, tt, et) = moments(estimate, truth, support);
    error_from(ee, tt, et)
}

/// Per-channel errors (per-channel alignment) or the same joint error
/// repeated for every channel.
pub fn channel_errors(
    estimate: &ComplexCube,
    truth: &ComplexCube,
    support: Option<&[bool]>,
    alignment: PhaseAlignment,
) -> Result<Vec<f64>> {
    if !estimate.same_shape(truth) {
        return Err(Error::shape(format!(
            "estimate {:?} vs truth {:?}",
            estimate.shape(),
            truth.shape()
        )));
    }
    match alignment {
        PhaseAlignment::PerChannel => (0..truth.channels())
            .map(|k| relative_error(estimate.channel(k), truth.channel(k), support))
            .collect(),
        PhaseAlignment::Joint => {
            let mut acc = (0.0, 0.0, Complex64::new(0.0, 0.0));
            for k in 0..truth.channels() {
                let (a, b, c) = moments(estimate.channel(k), truth.channel(k), support);
                acc = (acc.0 + a, acc.1 + b, acc.2 + c);
            }
            let e = error_from(acc.0, acc.1, acc.2)?;
            Ok(vec![e; truth.channels()])
        }
    }
}

/// Pixels where the reference amplitude exceeds `threshold` in any channel.
pub fn support_from_truth(truth: &ComplexCube, threshold: f64) -> Vec<bool> {
    (0..truth.pixels())
        .map(|r| (0..truth.channels()).any(|k| truth.get(k, r).norm() > threshold))
        .collect()
}

/// Per-iteration, per-channel relative errors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ErrorTrace {
    per_channel: Vec<Vec<f64>>,
}

impl ErrorTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, errors: Vec<f64>) {
        self.per_channel.push(errors);
    }

    pub fn len(&self) -> usize {
        self.per_channel.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_channel.is_empty()
    }

    /// Errors recorded after iteration `s + 1`.
    pub fn channels_at(&self, s: usize) -> &[f64] {
        &self.per_channel[s]
    }

    pub fn mean_at(&self, s: usize) -> f64 {
        let e = &self.per_channel[s];
        e.iter().sum::<f64>() / e.len() as f64
    }

    pub fn means(&self) -> Vec<f64> {
        (0..self.len()).map(|s| self.mean_at(s)).collect()
    }

    pub fn final_mean(&self) -> Option<f64> {
        (!self.is_empty()).then(|| self.mean_at(self.len() - 1))
    }

    pub fn final_channels(&self) -> Option<&[f64]> {
        self.per_channel.last().map(Vec::as_slice)
    }
}

/// `10·log10(ΣY² / Σ(Z−Y)²)`; `+∞` when `Z = Y` exactly.
pub fn empirical_snr_db(clean: &[RealImage], noisy: &[RealImage]) -> Result<f64> {
    if clean.len() != noisy.len()
        || clean
            .iter()
            .zip(noisy)
            .any(|(a, b)| a.pixels() != b.pixels())
    {
        return Err(Error::shape("clean and noisy sets differ in shape"));
    }
    let mut signal = 0.0;
    let mut noise = 0.0;
    for (y, z) in clean.iter().zip(noisy) {
        for (a, b) in y.data().iter().zip(z.data()) {
            signal += a * a;
            noise += (b - a) * (b - a);
        }
    }
    if noise == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (signal / noise).log10())
}
