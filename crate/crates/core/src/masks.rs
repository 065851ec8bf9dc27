//! Random piecewise-constant phase coding masks.
//!
//! Each mask is a thickness map taking one of five levels
//! `{0, 1, −1, 1/2, −1/2}·λ_min/4` on square cells, with equal probability.
//! Its transmittance at wavelength `λ` follows the thin-element model with
//! unit amplitude, so the phase shift differs from channel to channel.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hscube::{ComplexCube, RealImage, SpectralGrid};
use crate::optics::{transmittance, DispersionModel};

/// Thickness levels in units of `λ_min / 4`.
pub const MASK_LEVELS: [f64; 5] = [0.0, 1.0, -1.0, 0.5, -0.5];

#[derive(Clone, Debug, PartialEq)]
pub struct MaskSet {
    thickness: Vec<RealImage>,
    cell_size: usize,
    seed: u64,
    /// One cube per experiment, one channel per wavelength.
    transmittances: Vec<ComplexCube>,
}

/// Level indices for `cells` consecutive cells of mask `t`. The stream is
/// keyed by `(seed, t)` so masks can be drawn in any order or in parallel.
pub(crate) fn draw_levels(seed: u64, t: usize, cells: usize) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(t as u64);
    (0..cells).map(|_| rng.random_range(0..5u8)).collect()
}

fn thickness_map(seed: u64, t: usize, grid: &SpectralGrid, cell: usize, lambda_min: f64) -> RealImage {
    let (h, w) = (grid.height(), grid.width());
    let cells_y = h.div_ceil(cell);
    let cells_x = w.div_ceil(cell);
    let levels = draw_levels(seed, t, cells_x * cells_y);
    let unit = lambda_min / 4.0;
    RealImage::from_fn(h, w, |r| {
        let (row, col) = (r / w, r % w);
        let idx = (row / cell) * cells_x + col / cell;
        MASK_LEVELS[levels[idx] as usize] * unit
    })
}

fn spectral_transmittances(
    thickness: &RealImage,
    grid: &SpectralGrid,
    model: &DispersionModel,
) -> Result<ComplexCube> {
    let ones = RealImage::filled(thickness.height(), thickness.width(), 1.0);
    let fields = grid
        .wavelengths()
        .iter()
        .map(|&l| transmittance(&ones, thickness, l, model))
        .collect::<Result<Vec<_>>>()?;
    ComplexCube::from_channels(grid.height(), grid.width(), &fields)
}

/// Draws `count` independent masks and evaluates them at every grid wavelength.
pub fn generate_masks(
    seed: u64,
    count: usize,
    grid: &SpectralGrid,
    cell_size: usize,
    lambda_min: f64,
    model: &DispersionModel,
) -> Result<MaskSet> {
    if count == 0 {
        return Err(Error::invalid("at least one mask is required"));
    }
    if cell_size == 0 {
        return Err(Error::invalid("mask cell size must be at least 1 pixel"));
    }
    if !(lambda_min > 0.0) {
        return Err(Error::invalid("lambda_min must be positive"));
    }
    let thickness: Vec<RealImage> = (0..count)
        .into_par_iter()
        .map(|t| thickness_map(seed, t, grid, cell_size, lambda_min))
        .collect();
    MaskSet::from_thickness(thickness, cell_size, seed, grid, model)
}

impl MaskSet {
    /// Rebuilds a mask set from stored thickness maps.
    pub fn from_thickness(
        thickness: Vec<RealImage>,
        cell_size: usize,
        seed: u64,
        grid: &SpectralGrid,
        model: &DispersionModel,
    ) -> Result<Self> {
        if thickness.is_empty() {
            return Err(Error::invalid("at least one mask is required"));
        }
        if thickness
            .iter()
            .any(|h| h.height() != grid.height() || h.width() != grid.width())
        {
            return Err(Error::shape("mask thickness maps must match the grid"));
        }
        model.check_band(grid.wavelengths())?;
        let transmittances = thickness
            .par_iter()
            .map(|h| spectral_transmittances(h, grid, model))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            thickness,
            cell_size,
            seed,
            transmittances,
        })
    }

    pub fn count(&self) -> usize {
        self.thickness.len()
    }

    pub fn channels(&self) -> usize {
        self.transmittances[0].channels()
    }

    pub fn cell_size(&self) -> usize {
        self.cell_size
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn thickness(&self) -> &[RealImage] {
        &self.thickness
    }

    /// Complex transmittance `M_{t,k}`.
    pub fn transmittance(&self, t: usize, k: usize) -> &[Complex64] {
        self.transmittances[t].channel(k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(k: usize, n: usize) -> SpectralGrid {
        let w = SpectralGrid::uniform_band(k, 400e-9, 700e-9).unwrap();
        SpectralGrid::new(w, 3.45e-6, n, n, 2e-3).unwrap()
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let g = grid(3, 16);
        let a = generate_masks(11, 4, &g, 1, 400e-9, &DispersionModel::BK7).unwrap();
        let b = generate_masks(11, 4, &g, 1, 400e-9, &DispersionModel::BK7).unwrap();
        assert_eq!(a, b);
        let c = generate_masks(12, 4, &g, 1, 400e-9, &DispersionModel::BK7).unwrap();
        assert_ne!(a.thickness(), c.thickness());
    }

    #[test]
    fn masks_differ_across_experiments() {
        let g = grid(1, 16);
        let m = generate_masks(5, 2, &g, 1, 400e-9, &DispersionModel::BK7).unwrap();
        assert_ne!(m.thickness()[0], m.thickness()[1]);
    }

    #[test]
    fn level_frequencies_are_uniform() {
        let n = 1_000_000;
        let levels = draw_levels(2024, 0, n);
        let mut counts = [0usize; 5];
        for l in levels {
            counts[l as usize] += 1;
        }
        for c in counts {
            let f = c as f64 / n as f64;
            assert!((f - 0.2).abs() < 0.003, "frequency {f}");
        }
    }

    #[test]
    fn thickness_takes_only_the_five_levels_and_is_piecewise_constant() {
        let g = grid(2, 20);
        let cell = 3; // does not divide 20: last cells are partial
        let m = generate_masks(1, 3, &g, cell, 400e-9, &DispersionModel::BK7).unwrap();
        let unit = 400e-9 / 4.0;
        for h in m.thickness() {
            for r in 0..20 {
                for c in 0..20 {
                    let v = h.get(r, c);
                    assert!(MASK_LEVELS.iter().any(|l| (l * unit - v).abs() < 1e-24));
                    assert_eq!(v, h.get((r / cell) * cell, (c / cell) * cell));
                }
            }
        }
    }

    #[test]
    fn transmittances_are_phase_only() {
        let g = grid(4, 16);
        let m = generate_masks(3, 5, &g, 1, 400e-9, &DispersionModel::BK7).unwrap();
        let mut worst = 0f64;
        for t in 0..5 {
            for k in 0..4 {
                for z in m.transmittance(t, k) {
                    worst = worst.max((z.norm() - 1.0).abs());
                }
            }
        }
        assert!(worst < 1e-12);
    }

    #[test]
    fn phase_maps_vary_with_wavelength() {
        let g = grid(2, 16);
        let m = generate_masks(8, 1, &g, 1, 400e-9, &DispersionModel::BK7).unwrap();
        let diff = m
            .transmittance(0, 0)
            .iter()
            .zip(m.transmittance(0, 1))
            .map(|(a, b)| (a.arg() - b.arg()).abs())
            .fold(0.0, f64::max);
        assert!(diff > 0.0);
    }

    #[test]
    fn rejects_empty_requests() {
        let g = grid(1, 8);
        assert!(generate_masks(0, 0, &g, 1, 400e-9, &DispersionModel::BK7).is_err());
        assert!(generate_masks(0, 1, &g, 0, 400e-9, &DispersionModel::BK7).is_err());
    }
}
