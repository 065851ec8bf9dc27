//! Forward observation model and noise channels.
//!
//! The imaging operator for experiment `t` and channel `k` is
//! `A_{t,k} u = F⁻¹{AS_k ∘ F{M_{t,k} ∘ u}}`; the sensor records the total
//! intensity `Y_t = Σ_k |A_{t,k} U_{o,k}|²`.

use std::fmt;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hscube::{ComplexCube, RealImage, SpectralGrid};
use crate::masks::MaskSet;
use crate::optics::{PropagationWorkspace, Propagator, TransferFunctionSet};

/// The set of linear operators `A_{t,k}`.
#[derive(Clone, Debug)]
pub struct ImagingOperator {
    masks: MaskSet,
    tfs: TransferFunctionSet,
    propagator: Propagator,
    height: usize,
    width: usize,
}

impl ImagingOperator {
    pub fn new(grid: &SpectralGrid, masks: MaskSet, tfs: TransferFunctionSet) -> Result<Self> {
        if masks.channels() != grid.channels() || tfs.channels() != grid.channels() {
            return Err(Error::shape(format!(
                "grid has {} channels, masks {}, transfer functions {}",
                grid.channels(),
                masks.channels(),
                tfs.channels()
            )));
        }
        if masks.thickness()[0].pixels() != grid.pixels() || tfs.tf(0).len() != grid.pixels() {
            return Err(Error::shape("masks and transfer functions must match the grid"));
        }
        Ok(Self {
            masks,
            tfs,
            propagator: Propagator::for_grid(grid),
            height: grid.height(),
            width: grid.width(),
        })
    }

    pub fn experiments(&self) -> usize {
        self.masks.count()
    }

    pub fn channels(&self) -> usize {
        self.masks.channels()
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

    pub fn masks(&self) -> &MaskSet {
        &self.masks
    }

    pub fn transfer_functions(&self) -> &TransferFunctionSet {
        &self.tfs
    }

    pub fn propagator(&self) -> &Propagator {
        &self.propagator
    }

    pub fn workspace(&self) -> PropagationWorkspace {
        self.propagator.workspace()
    }

    /// `out = A_{t,k} field`.
    pub fn apply(
        &self,
        t: usize,
        k: usize,
        field: &[Complex64],
        out: &mut [Complex64],
        ws: &mut PropagationWorkspace,
    ) -> Result<()> {
        let mask = self.masks.transmittance(t, k);
        if field.len() != mask.len() || out.len() != mask.len() {
            return Err(Error::shape("field does not match the operator grid"));
        }
        for ((o, &u), &m) in out.iter_mut().zip(field).zip(mask) {
            *o = m * u;
        }
        self.propagator
            .propagate_in_place(out, self.tfs.tf(k), false, ws)
    }

    /// `field ← A_{t,k}^H field`, in place.
    pub fn apply_adjoint_in_place(
        &self,
        t: usize,
        k: usize,
        field: &mut [Complex64],
        ws: &mut PropagationWorkspace,
    ) -> Result<()> {
        self.propagator
            .propagate_in_place(field, self.tfs.tf(k), true, ws)?;
        for (u, m) in field.iter_mut().zip(self.masks.transmittance(t, k)) {
            *u *= m.conj();
        }
        Ok(())
    }
}

/// `Y_t(r) = Σ_k |A_{t,k} U_{o,k}(r)|²`.
pub fn forward_intensity(op: &ImagingOperator, object: &ComplexCube, t: usize) -> Result<RealImage> {
    if object.channels() != op.channels() || object.pixels() != op.pixels() {
        return Err(Error::shape(format!(
            "object {:?} does not match operator with {} channels on {}x{}",
            object.shape(),
            op.channels(),
            op.height(),
            op.width()
        )));
    }
    let mut ws = op.workspace();
    let mut buf = vec![Complex64::new(0.0, 0.0); op.pixels()];
    let mut y = vec![0.0; op.pixels()];
    for k in 0..op.channels() {
        op.apply(t, k, object.channel(k), &mut buf, &mut ws)?;
        for (acc, z) in y.iter_mut().zip(&buf) {
            *acc += z.norm_sqr();
        }
    }
    RealImage::new(op.height(), op.width(), y)
}

/// Noiseless intensities for all experiments.
pub fn forward_all(op: &ImagingOperator, object: &ComplexCube) -> Result<Vec<RealImage>> {
    (0..op.experiments())
        .into_par_iter()
        .map(|t| forward_intensity(op, object, t))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseKind {
    None,
    Gaussian,
    Poisson,
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseKind::None => "none",
            NoiseKind::Gaussian => "gaussian",
            NoiseKind::Poisson => "poisson",
        })
    }
}

impl std::str::FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(NoiseKind::None),
            "gaussian" | "gauss" => Ok(NoiseKind::Gaussian),
            "poisson" => Ok(NoiseKind::Poisson),
            other => Err(Error::invalid(format!("unknown noise kind '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub snr_db: f64,
    pub seed: u64,
}

/// Noise parameter actually applied to the data.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NoiseLevel {
    None,
    /// Standard deviation of the additive noise, in intensity units.
    Gaussian { sigma: f64 },
    /// Photon-flow scale: counts are `Poisson(χ·Y)`.
    Poisson { chi: f64 },
}

impl NoiseLevel {
    /// Human-readable statement of how the SNR maps onto the parameter.
    pub fn snr_definition(&self) -> &'static str {
        match self {
            NoiseLevel::None => "noiseless",
            NoiseLevel::Gaussian { .. } => {
                "sigma^2 = mean(Y^2) * 10^(-snr_db/10) (mean-square signal over noise variance)"
            }
            NoiseLevel::Poisson { .. } => {
                "chi = 10^(snr_db/10) / mean(Y) (mean per-pixel E{Z}^2/var{Z} = chi*Y)"
            }
        }
    }
}

/// Noisy measurements together with their calibration.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationSet {
    pub images: Vec<RealImage>,
    pub spec: NoiseSpec,
    pub level: NoiseLevel,
}

fn mean_over(ys: &[RealImage], f: impl Fn(f64) -> f64) -> f64 {
    let n: usize = ys.iter().map(|y| y.pixels()).sum();
    ys.iter().flat_map(|y| y.data()).map(|&v| f(v)).sum::<f64>() / n as f64
}

pub fn sigma_for_snr(ys: &[RealImage], snr_db: f64) -> Result<f64> {
    if ys.is_empty() {
        return Err(Error::invalid("no intensity images"));
    }
    let ms = mean_over(ys, |v| v * v);
    if ms == 0.0 {
        return Err(Error::Degenerate("all-zero intensities have no SNR".into()));
    }
    Ok((ms * 10f64.powf(-snr_db / 10.0)).sqrt())
}

pub fn chi_for_snr(ys: &[RealImage], snr_db: f64) -> Result<f64> {
    if ys.is_empty() {
        return Err(Error::invalid("no intensity images"));
    }
    if ys.iter().any(|y| !y.is_nonnegative()) {
        return Err(Error::invalid("Poisson rates must be nonnegative"));
    }
    let m = mean_over(ys, |v| v);
    if m == 0.0 {
        return Err(Error::Degenerate("all-zero intensities have no SNR".into()));
    }
    Ok(10f64.powf(snr_db / 10.0) / m)
}

fn stream(seed: u64, t: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(t as u64);
    rng
}

/// `Z_t = Y_t + ε_t` with i.i.d. `N(0, σ²)`; negative values are kept.
pub fn add_gaussian(ys: &[RealImage], sigma: f64, seed: u64) -> Result<Vec<RealImage>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid("sigma must be finite and nonnegative"));
    }
    if sigma == 0.0 {
        return Ok(ys.to_vec());
    }
    Ok(ys
        .par_iter()
        .enumerate()
        .map(|(t, y)| {
            let mut rng = stream(seed, t);
            RealImage::from_fn(y.height(), y.width(), |r| {
                let n: f64 = StandardNormal.sample(&mut rng);
                y.data()[r] + sigma * n
            })
        })
        .collect())
}

/// `Z_t(r) ~ Poisson(χ·Y_t(r))`, integer-valued counts.
pub fn add_poisson(ys: &[RealImage], chi: f64, seed: u64) -> Result<Vec<RealImage>> {
    if !(chi > 0.0 && chi.is_finite()) {
        return Err(Error::invalid("chi must be finite and positive"));
    }
    if ys.iter().any(|y| !y.is_nonnegative()) {
        return Err(Error::invalid("Poisson rates must be nonnegative"));
    }
    ys.par_iter()
        .enumerate()
        .map(|(t, y)| {
            let mut rng = stream(seed, t);
            let mut data = Vec::with_capacity(y.pixels());
            for &v in y.data() {
                let rate = chi * v;
                let count = if rate > 0.0 {
                    Poisson::new(rate)
                        .map_err(|e| Error::invalid(format!("Poisson rate {rate}: {e}")))?
                        .sample(&mut rng)
                } else {
                    0.0
                };
                data.push(count);
            }
            RealImage::new(y.height(), y.width(), data)
        })
        .collect()
}

/// Calibrates the noise level to `spec.snr_db` and draws the observations.
pub fn observe(ys: &[RealImage], spec: NoiseSpec) -> Result<ObservationSet> {
    if spec.kind != NoiseKind::None && !spec.snr_db.is_finite() {
        return Err(Error::invalid("snr_db must be finite"));
    }
    let (images, level) = match spec.kind {
        NoiseKind::None => (ys.to_vec(), NoiseLevel::None),
        NoiseKind::Gaussian => {
            let sigma = sigma_for_snr(ys, spec.snr_db)?;
            (add_gaussian(ys, sigma, spec.seed)?, NoiseLevel::Gaussian { sigma })
        }
        NoiseKind::Poisson => {
            let chi = chi_for_snr(ys, spec.snr_db)?;
            (add_poisson(ys, chi, spec.seed)?, NoiseLevel::Poisson { chi })
        }
    };
    Ok(ObservationSet {
        images,
        spec,
        level,
    })
}
