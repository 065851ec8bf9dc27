//! ADMM phase retrieval driver.
//!
//! One iteration `s` (1-based):
//!
//! 1. `U_{t,k} = A_{t,k} U_{o,k}` for every experiment and channel.
//! 2. `Û_{t,k} = SPO(U_{t,k} + Λ_{t,k})`, pixel by pixel, all channels jointly.
//! 3. `Λ_{t,k} ← Λ_{t,k} − (Û_{t,k} − U_{t,k})` once past the warmup.
//! 4. `U_{o,k} = Σ_t A_{t,k}^H(Û_{t,k} − Λ_{t,k}) / (Σ_t |M_{t,k}|² + reg)`.
//! 5. `U_{o,k} ← (1 − β_s)U_{o,k} + β_s·filter(U_o)` once past the warmup.
//!
//! The denominator in step 4 is the diagonal of `Σ_t A^H A`, exact for
//! phase-only masks and an all-pass transfer function.

use std::fmt;
use std::fs;
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::denoise::{relax, CubeFilter, FilterSpec};
use crate::error::{Error, Result};
use crate::hscube::{ComplexCube, RealImage};
use crate::io::{read_cube, write_cube};
use crate::metrics::{channel_errors, ErrorTrace, PhaseAlignment};
use crate::optics::PropagationWorkspace;
use crate::sensing::{sigma_for_snr, ImagingOperator, NoiseLevel};
use crate::spo::{spo_update, NoiseModel};

/// Nominal SNR used to give noiseless data a Gaussian likelihood.
pub const NOISELESS_NOMINAL_SNR_DB: f64 = 60.0;

/// Consecutive increases of the mean error that trigger a warning.
const DIVERGENCE_RUN: usize = 50;

/// `value_s = initial · ratio^(s−1)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub initial: f64,
    pub ratio: f64,
}

impl Schedule {
    pub fn constant(value: f64) -> Self {
        Self {
            initial: value,
            ratio: 1.0,
        }
    }

    pub fn at(&self, s: usize) -> f64 {
        self.initial * self.ratio.powi(s.saturating_sub(1) as i32)
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !(self.initial > 0.0 && self.initial.is_finite()) {
            return Err(Error::invalid(format!("{name} must be positive, got {}", self.initial)));
        }
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err(Error::invalid(format!("{name} ratio must lie in (0, 1], got {}", self.ratio)));
        }
        Ok(())
    }
}

/// Initial penalty weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GammaInit {
    /// `1 / mean(Z)`.
    Auto,
    Value(f64),
}

/// Which residual drives the multiplier update.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DualUpdate {
    /// `Λ ← Λ − (Û − U)` right after the sensor-plane update, with the `U`
    /// that fed it.
    Immediate,
    /// `Λ ← Λ − (Û − A U_o)` using the object produced by steps 4–5, applied
    /// at the start of the next iteration.
    Deferred,
    /// Multipliers stay at zero.
    Off,
}

impl fmt::Display for DualUpdate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DualUpdate::Immediate => "immediate",
            DualUpdate::Deferred => "deferred",
            DualUpdate::Off => "off",
        })
    }
}

impl std::str::FromStr for DualUpdate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "immediate" => Ok(DualUpdate::Immediate),
            "deferred" => Ok(DualUpdate::Deferred),
            "off" | "none" => Ok(DualUpdate::Off),
            other => Err(Error::invalid(format!("unknown dual update '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub iterations: usize,
    pub gamma: GammaInit,
    /// Geometric decay of `γ` per iteration; 1 keeps it constant.
    pub gamma_ratio: f64,
    pub beta: Schedule,
    pub reg: f64,
    /// Iterations before the multipliers and the filter are switched on.
    pub warmup: usize,
    pub noise: NoiseModel,
    pub dual: DualUpdate,
    pub filter: FilterSpec,
    pub seed: u64,
    pub alignment: PhaseAlignment,
}

impl SolverConfig {
    pub fn new(noise: NoiseModel) -> Self {
        Self {
            iterations: 300,
            gamma: GammaInit::Auto,
            gamma_ratio: 1.0,
            beta: Schedule::constant(0.5),
            reg: 1e-6,
            warmup: 50,
            noise,
            dual: DualUpdate::Immediate,
            filter: FilterSpec::default(),
            seed: 0,
            alignment: PhaseAlignment::PerChannel,
        }
    }

    /// Multipliers off and filter replaced by the identity.
    pub fn ablated(mut self) -> Self {
        self.dual = DualUpdate::Off;
        self.filter = FilterSpec::identity();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations >= 1 && self.warmup >= self.iterations {
            return Err(Error::invalid(format!(
                "warmup ({}) must be smaller than the iteration count ({})",
                self.warmup, self.iterations
            )));
        }
        if let GammaInit::Value(g) = self.gamma {
            Schedule { initial: g, ratio: self.gamma_ratio }.validate("gamma")?;
        } else if !(self.gamma_ratio > 0.0 && self.gamma_ratio <= 1.0) {
            return Err(Error::invalid("gamma ratio must lie in (0, 1]"));
        }
        self.beta.validate("beta")?;
        if self.beta.initial > 1.0 {
            return Err(Error::invalid("beta must not exceed 1"));
        }
        if !(self.reg >= 0.0 && self.reg.is_finite()) {
            return Err(Error::invalid("reg must be finite and nonnegative"));
        }
        match self.noise {
            NoiseModel::Gaussian { sigma } if !(sigma > 0.0 && sigma.is_finite()) => {
                Err(Error::invalid("Gaussian sigma must be positive"))
            }
            NoiseModel::Poisson { chi } if !(chi > 0.0 && chi.is_finite()) => {
                Err(Error::invalid("Poisson chi must be positive"))
            }
            _ => self.filter.validate(),
        }
    }

    /// Stable FNV-1a digest of the configuration, for checkpoints.
    pub fn digest(&self) -> u64 {
        let text = format!("{self:?}");
        text.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
            (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
        })
    }

    fn gamma_at(&self, gamma0: f64, s: usize) -> f64 {
        Schedule { initial: gamma0, ratio: self.gamma_ratio }.at(s)
    }

    fn active(&self, s: usize) -> bool {
        s > self.warmup
    }
}

/// Likelihood matching how the observations were produced. Noiseless data
/// gets a Gaussian model at [`NOISELESS_NOMINAL_SNR_DB`].
pub fn noise_model_for(level: NoiseLevel, observations: &[RealImage]) -> Result<NoiseModel> {
    Ok(match level {
        NoiseLevel::Gaussian { sigma } if sigma > 0.0 => NoiseModel::Gaussian { sigma },
        NoiseLevel::Poisson { chi } => NoiseModel::Poisson { chi },
        _ => NoiseModel::Gaussian {
            sigma: sigma_for_snr(observations, NOISELESS_NOMINAL_SNR_DB)?,
        },
    })
}

/// `1 / mean(Z)` over all observations.
pub fn auto_gamma(observations: &[RealImage]) -> Result<f64> {
    let n: usize = observations.iter().map(RealImage::pixels).sum();
    let mean = observations.iter().flat_map(|z| z.data()).sum::<f64>() / n.max(1) as f64;
    if !(mean > 0.0 && mean.is_finite()) {
        return Err(Error::Degenerate(format!(
            "cannot derive gamma from observations with mean {mean}"
        )));
    }
    Ok(1.0 / mean)
}

/// Evolving ADMM variables.
#[derive(Clone, Debug, PartialEq)]
pub struct SolverState {
    pub object: ComplexCube,
    /// One `K×H×W` cube per experiment.
    pub multipliers: Vec<ComplexCube>,
    /// Completed iterations.
    pub iteration: usize,
    /// Last sensor-plane estimates, kept only for [`DualUpdate::Deferred`].
    pub sensor_estimates: Option<Vec<ComplexCube>>,
}

/// Random start: amplitude uniform on (0, 1], phase standard normal,
/// independent per channel and pixel; multipliers zero.
pub fn initialize(config: &SolverConfig, op: &ImagingOperator) -> SolverState {
    let (k, h, w) = (op.channels(), op.height(), op.width());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let data = (0..k * h * w)
        .map(|_| {
            let amp = 1.0 - rng.random::<f64>();
            let phase: f64 = StandardNormal.sample(&mut rng);
            Complex64::from_polar(amp, phase)
        })
        .collect();
    let object = ComplexCube::new(k, h, w, data).expect("initial cube is finite");
    SolverState {
        object,
        multipliers: vec![ComplexCube::zeros(k, h, w); op.experiments()],
        iteration: 0,
        sensor_estimates: None,
    }
}

/// Per-iteration diagnostics.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct IterationStats {
    pub gamma: f64,
    pub beta: f64,
    pub max_multiplier: f64,
    pub degenerate_pixels: usize,
    pub dual_active: bool,
    pub filter_active: bool,
}

/// Result of [`run`].
#[derive(Clone, Debug)]
pub struct SolverOutput {
    pub estimate: ComplexCube,
    pub state: SolverState,
    /// Entry `i` holds the errors after iteration `i + 1`.
    pub trace: Option<ErrorTrace>,
    pub stats: Vec<IterationStats>,
    pub warnings: Vec<String>,
    pub gamma0: f64,
}

/// Reference cube for error tracking.
#[derive(Clone, Copy, Debug)]
pub struct Truth<'a> {
    pub cube: &'a ComplexCube,
    pub support: Option<&'a [bool]>,
}

/// A configured solver bound to one operator and observation set.
pub struct Solver<'a> {
    op: &'a ImagingOperator,
    observations: &'a [RealImage],
    config: SolverConfig,
    filter: Box<dyn CubeFilter>,
    gamma0: f64,
    /// `1 / (Σ_t |M_{t,k}|² + reg)`, channel-major.
    inv_denominator: Vec<f64>,
    workspaces: Vec<PropagationWorkspace>,
    /// Per-experiment backprojections `A^H(Û − Λ)`.
    partials: Vec<ComplexCube>,
}

impl<'a> Solver<'a> {
    pub fn new(config: SolverConfig, op: &'a ImagingOperator, observations: &'a [RealImage]) -> Result<Self> {
        config.validate()?;
        if observations.len() != op.experiments() {
            return Err(Error::shape(format!(
                "{} observations for {} experiments",
                observations.len(),
                op.experiments()
            )));
        }
        if observations
            .iter()
            .any(|z| z.height() != op.height() || z.width() != op.width())
        {
            return Err(Error::shape("observation size differs from the operator grid"));
        }
        if observations.iter().any(|z| z.data().iter().any(|v| !v.is_finite())) {
            return Err(Error::invalid("observations contain non-finite values"));
        }
        let gamma0 = match config.gamma {
            GammaInit::Auto => auto_gamma(observations)?,
            GammaInit::Value(g) => g,
        };
        let inv_denominator = diagonal_inverse(op, config.reg)?;
        let filter = config.filter.build()?;
        let (k, h, w) = (op.channels(), op.height(), op.width());
        Ok(Self {
            op,
            observations,
            filter,
            gamma0,
            inv_denominator,
            workspaces: (0..op.experiments()).map(|_| op.workspace()).collect(),
            partials: vec![ComplexCube::zeros(k, h, w); op.experiments()],
            config,
        })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn gamma0(&self) -> f64 {
        self.gamma0
    }

    pub fn initialize(&self) -> SolverState {
        initialize(&self.config, self.op)
    }

    /// Advances `state` by one iteration.
    pub fn step(&mut self, state: &mut SolverState) -> Result<IterationStats> {
        let s = state.iteration + 1;
        let cfg = &self.config;
        let active = cfg.active(s);
        let dual = if active { cfg.dual } else { DualUpdate::Off };
        let gamma = cfg.gamma_at(self.gamma0, s);
        let model = cfg.noise;
        let (k, h, w) = (self.op.channels(), self.op.height(), self.op.width());
        let n = h * w;

        if dual == DualUpdate::Deferred && state.sensor_estimates.is_none() {
            state.sensor_estimates = Some(vec![ComplexCube::zeros(k, h, w); self.op.experiments()]);
        }
        let have_previous = cfg.dual == DualUpdate::Deferred && state.iteration > cfg.warmup;
        let op = self.op;
        let object = &state.object;
        let mut estimates: Vec<Option<&mut ComplexCube>> = match state.sensor_estimates.as_mut() {
            Some(v) if cfg.dual == DualUpdate::Deferred => v.iter_mut().map(Some).collect(),
            _ => (0..op.experiments()).map(|_| None).collect(),
        };

        let per_t: Vec<(f64, usize)> = self
            .partials
            .par_iter_mut()
            .zip(state.multipliers.par_iter_mut())
            .zip(self.workspaces.par_iter_mut())
            .zip(estimates.par_iter_mut())
            .zip(self.observations.par_iter())
            .enumerate()
            .map(|(t, ((((out, lambda), ws), prev), z))| {
                sensor_update(SensorTask {
                    op,
                    t,
                    object,
                    z: z.data(),
                    lambda,
                    prev: prev.as_deref_mut(),
                    use_previous: have_previous && dual == DualUpdate::Deferred,
                    out,
                    gamma,
                    model,
                    dual,
                    ws,
                })
            })
            .collect::<Result<_>>()?;

        let max_multiplier = per_t.iter().map(|p| p.0).fold(0.0, f64::max);
        let degenerate_pixels = per_t.iter().map(|p| p.1).sum();

        // Σ_t in a fixed order so results do not depend on the thread count
        let partials = &self.partials;
        let inv = &self.inv_denominator;
        state
            .object
            .data_mut()
            .par_chunks_mut(n)
            .enumerate()
            .for_each(|(kk, field)| {
                for (r, o) in field.iter_mut().enumerate() {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for p in partials {
                        acc += p.channel(kk)[r];
                    }
                    *o = acc * inv[kk * n + r];
                }
            });

        let beta = cfg.beta.at(s);
        let filter_active = active && !self.filter.is_identity();
        if filter_active {
            let filtered = self.filter.filter(&state.object)?;
            state.object = relax(&state.object, &filtered, beta)?;
        }

        if !state.object.is_finite() {
            return Err(Error::NonFinite { iteration: s, what: "object estimate" });
        }
        if !max_multiplier.is_finite() {
            return Err(Error::NonFinite { iteration: s, what: "Lagrange multipliers" });
        }
        state.iteration = s;
        Ok(IterationStats {
            gamma,
            beta,
            max_multiplier,
            degenerate_pixels,
            dual_active: dual != DualUpdate::Off,
            filter_active,
        })
    }

    /// Iterates from `state` until `config.iterations` are complete.
    pub fn run_from(&mut self, mut state: SolverState, truth: Option<Truth<'_>>) -> Result<SolverOutput> {
        let mut trace = truth.map(|_| ErrorTrace::new());
        let mut stats = Vec::new();
        let mut warnings = Vec::new();
        let mut rising = 0usize;
        while state.iteration < self.config.iterations {
            stats.push(self.step(&mut state)?);
            if let (Some(tr), Some(t)) = (trace.as_mut(), truth) {
                let errs = channel_errors(&state.object, t.cube, t.support, self.config.alignment)?;
                tr.push(errs);
                let last = tr.len() - 1;
                if last > 0 && tr.mean_at(last) > tr.mean_at(last - 1) {
                    rising += 1;
                    if rising == DIVERGENCE_RUN {
                        warnings.push(format!(
                            "mean error rose for {DIVERGENCE_RUN} consecutive iterations up to iteration {}",
                            state.iteration
                        ));
                    }
                } else {
                    rising = 0;
                }
            }
        }
        Ok(SolverOutput {
            estimate: state.object.clone(),
            state,
            trace,
            stats,
            warnings,
            gamma0: self.gamma0,
        })
    }
}

/// Runs the full algorithm from the random initialization.
pub fn run(
    config: &SolverConfig,
    op: &ImagingOperator,
    observations: &[RealImage],
    truth: Option<Truth<'_>>,
) -> Result<SolverOutput> {
    let mut solver = Solver::new(config.clone(), op, observations)?;
    let state = solver.initialize();
    solver.run_from(state, truth)
}

fn diagonal_inverse(op: &ImagingOperator, reg: f64) -> Result<Vec<f64>> {
    let n = op.pixels();
    let mut inv = vec![reg; op.channels() * n];
    for t in 0..op.experiments() {
        for kk in 0..op.channels() {
            for (d, m) in inv[kk * n..(kk + 1) * n]
                .iter_mut()
                .zip(op.masks().transmittance(t, kk))
            {
                *d += m.norm_sqr();
            }
        }
    }
    for (i, d) in inv.iter_mut().enumerate() {
        if *d == 0.0 {
            return Err(Error::SingularDenominator {
                channel: i / n,
                pixel: i % n,
            });
        }
        *d = 1.0 / *d;
    }
    Ok(inv)
}

/// `Σ_t A^H(Û − Λ) / (Σ_t |M|² + reg)` for given sensor-plane fields.
pub fn backward_estimate(
    op: &ImagingOperator,
    sensor: &[ComplexCube],
    multipliers: &[ComplexCube],
    reg: f64,
) -> Result<ComplexCube> {
    if sensor.len() != op.experiments() || multipliers.len() != op.experiments() {
        return Err(Error::shape("need one sensor and multiplier cube per experiment"));
    }
    let (k, h, w) = (op.channels(), op.height(), op.width());
    if sensor
        .iter()
        .chain(multipliers)
        .any(|c| c.shape() != (k, h, w))
    {
        return Err(Error::shape("sensor cubes must match the operator"));
    }
    let inv = diagonal_inverse(op, reg)?;
    let n = h * w;
    let partials: Vec<ComplexCube> = (0..op.experiments())
        .into_par_iter()
        .map(|t| {
            let mut ws = op.workspace();
            let mut out = ComplexCube::zeros(k, h, w);
            for kk in 0..k {
                let field = out.channel_mut(kk);
                for ((o, u), l) in field
                    .iter_mut()
                    .zip(sensor[t].channel(kk))
                    .zip(multipliers[t].channel(kk))
                {
                    *o = u - l;
                }
                op.apply_adjoint_in_place(t, kk, field, &mut ws)?;
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut object = ComplexCube::zeros(k, h, w);
    for kk in 0..k {
        for (r, o) in object.channel_mut(kk).iter_mut().enumerate() {
            let acc: Complex64 = partials.iter().map(|p| p.channel(kk)[r]).sum();
            *o = acc * inv[kk * n + r];
        }
    }
    Ok(object)
}

struct SensorTask<'s> {
    op: &'s ImagingOperator,
    t: usize,
    object: &'s ComplexCube,
    z: &'s [f64],
    lambda: &'s mut ComplexCube,
    prev: Option<&'s mut ComplexCube>,
    use_previous: bool,
    out: &'s mut ComplexCube,
    gamma: f64,
    model: NoiseModel,
    dual: DualUpdate,
    ws: &'s mut PropagationWorkspace,
}

/// Steps 1–3 plus the adjoint of step 4 for one experiment. Leaves
/// `A^H(Û − Λ)` in `out` and returns `(max |Λ|, degenerate pixel count)`.
// channels of one pixel are strided by `n`, so explicit indices read better
#[allow(clippy::needless_range_loop)]
fn sensor_update(task: SensorTask<'_>) -> Result<(f64, usize)> {
    let SensorTask {
        op,
        t,
        object,
        z,
        lambda,
        mut prev,
        use_previous,
        out,
        gamma,
        model,
        dual,
        ws,
    } = task;
    let k = op.channels();
    let n = op.pixels();

    for kk in 0..k {
        let (src, dst) = (object.channel(kk), out.channel_mut(kk));
        op.apply(t, kk, src, dst, ws)?;
    }
    if use_previous {
        if let Some(p) = prev.as_deref() {
            for ((l, u_hat), u) in lambda.data_mut().iter_mut().zip(p.data()).zip(out.data()) {
                *l -= u_hat - u;
            }
        }
    }

    let mut v = vec![Complex64::new(0.0, 0.0); k];
    let mut degenerate = 0usize;
    let mut max_lambda = 0.0f64;
    let forward = out.data_mut();
    let lam = lambda.data_mut();
    for r in 0..n {
        let mut q = 0.0;
        for kk in 0..k {
            let i = kk * n + r;
            v[kk] = forward[i] + lam[i];
            q += v[kk].norm_sqr();
        }
        let px = spo_update(model, q, z[r], gamma);
        degenerate += px.degenerate as usize;
        for kk in 0..k {
            let i = kk * n + r;
            let u_hat = v[kk] * px.scale;
            if let Some(p) = prev.as_deref_mut() {
                p.data_mut()[i] = u_hat;
            }
            if dual == DualUpdate::Immediate {
                lam[i] -= u_hat - forward[i];
            }
            max_lambda = max_lambda.max(lam[i].norm());
            forward[i] = u_hat - lam[i];
        }
    }

    for kk in 0..k {
        op.apply_adjoint_in_place(t, kk, out.channel_mut(kk), ws)?;
    }
    Ok((max_lambda, degenerate))
}

const OBJECT_FILE: &str = "object.hsc1";
const MULTIPLIER_FILE: &str = "multipliers.hsc1";
const ESTIMATE_FILE: &str = "sensor_estimates.hsc1";
const HEADER_FILE: &str = "checkpoint.txt";

fn stack(cubes: &[ComplexCube]) -> Result<ComplexCube> {
    let (k, h, w) = cubes[0].shape();
    let data = cubes.iter().flat_map(|c| c.data().iter().copied()).collect();
    ComplexCube::new(cubes.len() * k, h, w, data)
}

fn unstack(cube: ComplexCube, k: usize) -> Result<Vec<ComplexCube>> {
    let (c, h, w) = cube.shape();
    if k == 0 || c % k != 0 {
        return Err(Error::shape("stacked cube is not a whole number of experiments"));
    }
    cube.data()
        .chunks(k * h * w)
        .map(|chunk| ComplexCube::new(k, h, w, chunk.to_vec()))
        .collect()
}

/// Writes the state as HSC1 cubes plus a `key=value` header.
pub fn save_checkpoint(dir: &Path, state: &SolverState, config: &SolverConfig) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_cube(dir.join(OBJECT_FILE), &state.object)?;
    write_cube(dir.join(MULTIPLIER_FILE), &stack(&state.multipliers)?)?;
    if let Some(est) = &state.sensor_estimates {
        write_cube(dir.join(ESTIMATE_FILE), &stack(est)?)?;
    }
    let header = format!(
        "iteration={}\nconfig_hash={:016x}\nexperiments={}\n",
        state.iteration,
        config.digest(),
        state.multipliers.len()
    );
    let path = dir.join(HEADER_FILE);
    fs::write(&path, header).map_err(|e| Error::io(path, e))
}

/// Restores a checkpoint written with the same configuration.
pub fn load_checkpoint(dir: &Path, config: &SolverConfig) -> Result<SolverState> {
    let path = dir.join(HEADER_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let field = |key: &str| {
        text.lines()
            .find_map(|l| l.strip_prefix(key)?.strip_prefix('='))
            .map(str::trim)
            .ok_or_else(|| Error::Format {
                path: path.clone(),
                reason: format!("missing '{key}'"),
            })
    };
    let iteration: usize = field("iteration")?.parse().map_err(|_| Error::Format {
        path: path.clone(),
        reason: "bad iteration".into(),
    })?;
    let hash = field("config_hash")?;
    if hash != format!("{:016x}", config.digest()) {
        return Err(Error::invalid(format!(
            "checkpoint {} was written with a different configuration",
            dir.display()
        )));
    }
    let object = read_cube(dir.join(OBJECT_FILE))?;
    let k = object.channels();
    let multipliers = unstack(read_cube(dir.join(MULTIPLIER_FILE))?, k)?;
    let est_path = dir.join(ESTIMATE_FILE);
    let sensor_estimates = if est_path.exists() {
        Some(unstack(read_cube(est_path)?, k)?)
    } else {
        None
    };
    Ok(SolverState {
        object,
        multipliers,
        iteration,
        sensor_estimates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hscube::{cube_norm2, SpectralGrid};
    use crate::masks::generate_masks;
    use crate::optics::{DispersionModel, TransferFunctionSet};
    use crate::sensing::forward_all;

    fn setup(k: usize, t: usize, size: usize, distance: f64) -> ImagingOperator {
        let wl = SpectralGrid::uniform_band(k, 400e-9, 700e-9).unwrap();
        let grid = SpectralGrid::new(wl, 3.45e-6, size, size, distance).unwrap();
        let masks = generate_masks(7, t, &grid, 1, 400e-9, &DispersionModel::BK7).unwrap();
        let tfs = TransferFunctionSet::new(&grid);
        ImagingOperator::new(&grid, masks, tfs).unwrap()
    }

    fn random_object(k: usize, size: usize, seed: u64) -> ComplexCube {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..k * size * size)
            .map(|_| Complex64::from_polar(rng.random_range(0.2..1.0), rng.random_range(-3.0..3.0)))
            .collect();
        ComplexCube::new(k, size, size, data).unwrap()
    }

    fn rel_diff(a: &ComplexCube, b: &ComplexCube) -> f64 {
        let d: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).norm_sqr()).sum();
        (d / cube_norm2(b)).sqrt()
    }

    fn gaussian() -> NoiseModel {
        NoiseModel::Gaussian { sigma: 1e-3 }
    }

    #[test]
    fn initialization_is_deterministic_with_zero_multipliers() {
        let op = setup(2, 3, 8, 1e-3);
        let cfg = SolverConfig::new(gaussian());
        let a = initialize(&cfg, &op);
        let b = initialize(&cfg, &op);
        assert_eq!(a, b);
        assert!(a
            .multipliers
            .iter()
            .all(|m| m.data().iter().all(|z| *z == Complex64::new(0.0, 0.0))));
        assert!(a.object.data().iter().all(|z| z.norm() > 0.0 && z.norm() <= 1.0));
        let c = initialize(&SolverConfig { seed: 1, ..cfg }, &op);
        assert_ne!(a.object, c.object);
    }

    #[test]
    fn initial_amplitude_is_uniform() {
        // KS statistic against U(0, 1] on 1e6 draws; 1% critical value 1.63/√n
        let op = setup(4, 1, 500, 0.0);
        let st = initialize(&SolverConfig::new(gaussian()), &op);
        let mut amps: Vec<f64> = st.object.data().iter().map(|z| z.norm()).collect();
        amps.sort_by(f64::total_cmp);
        let n = amps.len() as f64;
        let d = amps
            .iter()
            .enumerate()
            .map(|(i, &a)| ((i + 1) as f64 / n - a).abs().max((a - i as f64 / n).abs()))
            .fold(0.0, f64::max);
        assert!(d < 1.63 / n.sqrt(), "KS statistic {d}");
    }

    #[test]
    fn forward_then_backward_is_identity_at_zero_distance() {
        let op = setup(3, 4, 16, 0.0);
        let x = random_object(3, 16, 1);
        let mut ws = op.workspace();
        let sensor: Vec<ComplexCube> = (0..4)
            .map(|t| {
                let mut c = ComplexCube::zeros(3, 16, 16);
                for k in 0..3 {
                    op.apply(t, k, x.channel(k), c.channel_mut(k), &mut ws).unwrap();
                }
                c
            })
            .collect();
        let zeros = vec![ComplexCube::zeros(3, 16, 16); 4];
        let back = backward_estimate(&op, &sensor, &zeros, 0.0).unwrap();
        assert!(rel_diff(&back, &x) < 1e-10);
    }

    #[test]
    fn single_mask_backward_is_conjugate_mask() {
        let op = setup(2, 1, 8, 0.0);
        let u = random_object(2, 8, 2);
        let zeros = vec![ComplexCube::zeros(2, 8, 8)];
        let back = backward_estimate(&op, std::slice::from_ref(&u), &zeros, 0.0).unwrap();
        for k in 0..2 {
            for ((b, x), m) in back.channel(k).iter().zip(u.channel(k)).zip(op.masks().transmittance(0, k)) {
                assert!((b - m.conj() * x).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn denominator_equals_mask_count_plus_reg() {
        let op = setup(2, 5, 8, 1e-3);
        let inv = diagonal_inverse(&op, 0.25).unwrap();
        assert!(inv.iter().all(|v| (1.0 / v - 5.25).abs() < 1e-12));
    }

    #[test]
    fn consistent_state_is_a_fixed_point() {
        let op = setup(2, 4, 16, 0.0);
        let truth = random_object(2, 16, 3);
        let ys = forward_all(&op, &truth).unwrap();
        let cfg = SolverConfig {
            reg: 0.0,
            iterations: 2,
            warmup: 1,
            ..SolverConfig::new(gaussian())
        };
        let mut solver = Solver::new(cfg, &op, &ys).unwrap();
        let mut state = solver.initialize();
        state.object = truth.clone();
        solver.step(&mut state).unwrap();
        assert!(rel_diff(&state.object, &truth) < 1e-8);
    }

    #[test]
    fn warmup_keeps_multipliers_zero() {
        let op = setup(2, 3, 16, 1e-3);
        let truth = random_object(2, 16, 4);
        let ys = forward_all(&op, &truth).unwrap();
        let cfg = SolverConfig {
            iterations: 10,
            warmup: 5,
            filter: FilterSpec::identity(),
            ..SolverConfig::new(gaussian())
        };
        let mut solver = Solver::new(cfg, &op, &ys).unwrap();
        let mut state = solver.initialize();
        for _ in 0..5 {
            let st = solver.step(&mut state).unwrap();
            assert!(!st.dual_active);
            assert!(state
                .multipliers
                .iter()
                .all(|m| m.data().iter().all(|z| *z == Complex64::new(0.0, 0.0))));
        }
        let st = solver.step(&mut state).unwrap();
        assert!(st.dual_active && st.max_multiplier > 0.0);
    }

    #[test]
    fn zero_iterations_return_the_initialization() {
        let op = setup(2, 2, 8, 1e-3);
        let ys = forward_all(&op, &random_object(2, 8, 5)).unwrap();
        let cfg = SolverConfig {
            iterations: 0,
            ..SolverConfig::new(gaussian())
        };
        let out = run(&cfg, &op, &ys, None).unwrap();
        assert_eq!(out.estimate, initialize(&cfg, &op).object);
    }

    #[test]
    fn identity_filter_with_unit_beta_changes_nothing() {
        let op = setup(2, 3, 8, 1e-3);
        let ys = forward_all(&op, &random_object(2, 8, 6)).unwrap();
        let base = SolverConfig {
            iterations: 4,
            warmup: 1,
            filter: FilterSpec::identity(),
            beta: Schedule::constant(1.0),
            ..SolverConfig::new(gaussian())
        };
        let a = run(&base, &op, &ys, None).unwrap();
        let b = run(&SolverConfig { beta: Schedule::constant(0.3), ..base }, &op, &ys, None).unwrap();
        assert_eq!(a.estimate, b.estimate);
    }

    #[test]
    fn phase_only_masks_allow_zero_reg() {
        let op = setup(1, 1, 4, 0.0);
        let ys = forward_all(&op, &random_object(1, 4, 7)).unwrap();
        // unit-magnitude masks never vanish, so reg = 0 is accepted
        assert!(Solver::new(SolverConfig { reg: 0.0, ..SolverConfig::new(gaussian()) }, &op, &ys).is_ok());
        assert!(diagonal_inverse(&op, 0.0).is_ok());
    }

    #[test]
    fn config_validation() {
        let ok = SolverConfig::new(gaussian());
        assert!(ok.validate().is_ok());
        assert!(SolverConfig { warmup: 300, ..ok.clone() }.validate().is_err());
        assert!(SolverConfig { iterations: 0, ..ok.clone() }.validate().is_ok());
        assert!(SolverConfig { gamma: GammaInit::Value(0.0), ..ok.clone() }.validate().is_err());
        assert!(SolverConfig { beta: Schedule::constant(1.5), ..ok.clone() }.validate().is_err());
        assert!(SolverConfig { reg: -1.0, ..ok.clone() }.validate().is_err());
        assert!(SolverConfig { noise: NoiseModel::Poisson { chi: 0.0 }, ..ok }.validate().is_err());
    }

    #[test]
    fn schedules() {
        let s = Schedule { initial: 2.0, ratio: 0.5 };
        assert_eq!(s.at(1), 2.0);
        assert_eq!(s.at(3), 0.5);
        assert_eq!(Schedule::constant(0.7).at(100), 0.7);
    }

    #[test]
    fn checkpoint_round_trip() {
        let op = setup(2, 3, 8, 1e-3);
        let ys = forward_all(&op, &random_object(2, 8, 8)).unwrap();
        let cfg = SolverConfig {
            iterations: 6,
            warmup: 2,
            dual: DualUpdate::Deferred,
            filter: FilterSpec::identity(),
            ..SolverConfig::new(gaussian())
        };
        let mut solver = Solver::new(cfg.clone(), &op, &ys).unwrap();
        let mut state = solver.initialize();
        for _ in 0..4 {
            solver.step(&mut state).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &state, &cfg).unwrap();
        let restored = load_checkpoint(dir.path(), &cfg).unwrap();
        assert_eq!(restored, state);
        let resumed = solver.run_from(restored, None).unwrap();
        let straight = run(&cfg, &op, &ys, None).unwrap();
        assert_eq!(resumed.estimate, straight.estimate);
        let other = SolverConfig { seed: 99, ..cfg };
        assert!(load_checkpoint(dir.path(), &other).is_err());
    }

    #[test]
    fn runs_are_deterministic() {
        let op = setup(2, 4, 16, 1e-3);
        let truth = random_object(2, 16, 9);
        let ys = forward_all(&op, &truth).unwrap();
        let cfg = SolverConfig {
            iterations: 8,
            warmup: 3,
            ..SolverConfig::new(gaussian())
        };
        let t = Truth { cube: &truth, support: None };
        let a = run(&cfg, &op, &ys, Some(t)).unwrap();
        let b = run(&cfg, &op, &ys, Some(t)).unwrap();
        assert_eq!(a.estimate, b.estimate);
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.trace.unwrap().len(), 8);
    }

    #[test]
    fn dual_update_parsing() {
        assert_eq!("deferred".parse::<DualUpdate>().unwrap(), DualUpdate::Deferred);
        assert!("sometimes".parse::<DualUpdate>().is_err());
    }
}
