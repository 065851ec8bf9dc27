//! End-to-end synthetic experiment: grid, masks, object, observations.

use crate::error::Result;
use crate::hscube::{ComplexCube, RealImage, SpectralGrid};
use crate::masks::generate_masks;
use crate::optics::{DispersionModel, TransferFunctionSet};
use crate::phantoms::{build_object_cube, ObjectCube, ObjectSpec};
use crate::sensing::{forward_all, observe, ImagingOperator, NoiseKind, NoiseSpec, ObservationSet};
use crate::solver::{noise_model_for, SolverConfig, Truth};
use crate::spo::NoiseModel;

/// Shortest and longest wavelength of the default band, in meters.
pub const DEFAULT_BAND: (f64, f64) = (400e-9, 700e-9);
pub const DEFAULT_PITCH: f64 = 3.45e-6;
pub const DEFAULT_DISTANCE: f64 = 2e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioSpec {
    pub channels: usize,
    pub experiments: usize,
    pub band: (f64, f64),
    pub pitch: f64,
    pub distance: f64,
    pub mask_cell: usize,
    pub mask_seed: u64,
    pub object: ObjectSpec,
    pub noise: NoiseSpec,
    pub dispersion: DispersionModel,
}

impl ScenarioSpec {
    pub fn new(channels: usize, experiments: usize, size: usize) -> Self {
        Self {
            channels,
            experiments,
            band: DEFAULT_BAND,
            pitch: DEFAULT_PITCH,
            distance: DEFAULT_DISTANCE,
            mask_cell: 1,
            mask_seed: 1,
            object: ObjectSpec::new(size),
            noise: NoiseSpec {
                kind: NoiseKind::None,
                snr_db: f64::INFINITY,
                seed: 2,
            },
            dispersion: DispersionModel::BK7,
        }
    }

    pub fn with_noise(mut self, kind: NoiseKind, snr_db: f64) -> Self {
        self.noise.kind = kind;
        self.noise.snr_db = snr_db;
        self
    }

    pub fn grid(&self) -> Result<SpectralGrid> {
        let wl = SpectralGrid::uniform_band(self.channels, self.band.0, self.band.1)?;
        let side = self.object.grid_size();
        SpectralGrid::new(wl, self.pitch, side, side, self.distance)
    }
}

pub struct Scenario {
    pub spec: ScenarioSpec,
    pub grid: SpectralGrid,
    pub operator: ImagingOperator,
    pub object: ObjectCube,
    /// Noiseless intensities.
    pub clean: Vec<RealImage>,
    pub observations: ObservationSet,
}

impl Scenario {
    pub fn build(spec: ScenarioSpec) -> Result<Self> {
        let grid = spec.grid()?;
        let masks = generate_masks(
            spec.mask_seed,
            spec.experiments,
            &grid,
            spec.mask_cell,
            grid.lambda_min(),
            &spec.dispersion,
        )?;
        let tfs = TransferFunctionSet::new(&grid);
        let operator = ImagingOperator::new(&grid, masks, tfs)?;
        let object = build_object_cube(&spec.object, &grid, &spec.dispersion)?;
        let clean = forward_all(&operator, &object.cube)?;
        let observations = observe(&clean, spec.noise)?;
        Ok(Self {
            spec,
            grid,
            operator,
            object,
            clean,
            observations,
        })
    }

    pub fn truth(&self) -> &ComplexCube {
        &self.object.cube
    }

    pub fn truth_ref(&self) -> Truth<'_> {
        Truth {
            cube: &self.object.cube,
            support: Some(&self.object.support),
        }
    }

    /// Likelihood matching the simulated noise.
    pub fn noise_model(&self) -> Result<NoiseModel> {
        noise_model_for(self.observations.level, &self.observations.images)
    }

    /// Default solver settings for this scenario.
    pub fn solver_config(&self) -> Result<SolverConfig> {
        Ok(SolverConfig::new(self.noise_model()?))
    }
}
