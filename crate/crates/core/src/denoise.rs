//! Complex-domain cube filters used as the regularizing step of the solver.
//!
//! [`SpectralSvdFilter`] reshapes the cube into a `K × (H·W)` matrix, keeps
//! the leading singular components, denoises each retained eigenimage with a
//! sliding-window orthonormal DCT hard threshold, and maps back. Any type
//! implementing [`CubeFilter`] can be plugged into the solver instead.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hscube::ComplexCube;

/// A complex-domain denoiser acting on a whole spectral cube.
pub trait CubeFilter: Send + Sync {
    fn filter(&self, cube: &ComplexCube) -> Result<ComplexCube>;

    /// Identity filters let the solver skip the relaxation step entirely.
    fn is_identity(&self) -> bool {
        false
    }

    /// One-line description for manifests.
    fn describe(&self) -> String;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FilterKind {
    Identity,
    SpectralSvd,
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FilterKind::Identity => "identity",
            FilterKind::SpectralSvd => "svd",
        })
    }
}

impl std::str::FromStr for FilterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "identity" | "none" | "off" => Ok(FilterKind::Identity),
            "svd" | "spectral_svd" => Ok(FilterKind::SpectralSvd),
            other => Err(Error::invalid(format!("unknown filter '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RankChoice {
    /// Smallest rank capturing [`AUTO_RANK_ENERGY`] of the squared singular values.
    Auto,
    Fixed(usize),
}

/// Energy fraction retained by [`RankChoice::Auto`].
pub const AUTO_RANK_ENERGY: f64 = 0.995;

/// Robust noise scale of Gaussian data: `σ ≈ MAD / 0.6745`.
const MAD_TO_SIGMA: f64 = 0.6745;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilterSpec {
    pub kind: FilterKind,
    pub rank: RankChoice,
    /// Hard threshold in units of the estimated noise level; 0 disables
    /// eigenimage filtering.
    pub threshold: f64,
    /// Block size of the orthonormal DCT.
    pub patch: usize,
    /// Step between neighbouring windows.
    pub stride: usize,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self {
            kind: FilterKind::SpectralSvd,
            rank: RankChoice::Auto,
            threshold: 2.7,
            patch: 8,
            stride: 2,
        }
    }
}

impl FilterSpec {
    pub fn identity() -> Self {
        Self {
            kind: FilterKind::Identity,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let RankChoice::Fixed(r) = self.rank {
            if r == 0 {
                return Err(Error::invalid("filter rank must be at least 1"));
            }
        }
        if !(self.threshold >= 0.0 && self.threshold.is_finite()) {
            return Err(Error::invalid("filter threshold must be nonnegative"));
        }
        if self.patch == 0 || self.stride == 0 || self.stride > self.patch {
            return Err(Error::invalid("need 1 <= stride <= patch"));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Box<dyn CubeFilter>> {
        self.validate()?;
        Ok(match self.kind {
            FilterKind::Identity => Box::new(IdentityFilter),
            FilterKind::SpectralSvd => Box::new(SpectralSvdFilter::new(*self)),
        })
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityFilter;

impl CubeFilter for IdentityFilter {
    fn filter(&self, cube: &ComplexCube) -> Result<ComplexCube> {
        Ok(cube.clone())
    }

    fn is_identity(&self) -> bool {
        true
    }

    fn describe(&self) -> String {
        "identity".into()
    }
}

/// Elementwise `(1 − β)·old + β·filtered`.
pub fn relax(old: &ComplexCube, filtered: &ComplexCube, beta: f64) -> Result<ComplexCube> {
    if !old.same_shape(filtered) {
        return Err(Error::shape("relaxation operands differ in shape"));
    }
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::invalid(format!("beta must lie in (0, 1], got {beta}")));
    }
    let data = old
        .data()
        .iter()
        .zip(filtered.data())
        .map(|(a, b)| a * (1.0 - beta) + b * beta)
        .collect();
    ComplexCube::new(old.channels(), old.height(), old.width(), data)
}

#[derive(Clone, Debug)]
pub struct SpectralSvdFilter {
    spec: FilterSpec,
    dct: Vec<f64>,
}

/// Orthonormal DCT-II matrix, row `u` holds basis function `u`.
fn dct_matrix(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for u in 0..n {
        let a = if u == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        for x in 0..n {
            m[u * n + x] = a * (PI * (2 * x + 1) as f64 * u as f64 / (2 * n) as f64).cos();
        }
    }
    m
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let mid = v.len() / 2;
    let (_, m, _) = v.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    *m
}

/// Noise level from the finest diagonal Haar details of the real and
/// imaginary parts.
pub fn estimate_noise_sigma(img: &[Complex64], height: usize, width: usize) -> f64 {
    let mut details = Vec::with_capacity(img.len() / 2);
    for r in (0..height.saturating_sub(1)).step_by(2) {
        for c in (0..width.saturating_sub(1)).step_by(2) {
            let a = img[r * width + c];
            let b = img[r * width + c + 1];
            let d = img[(r + 1) * width + c];
            let e = img[(r + 1) * width + c + 1];
            let hh = (a - b - d + e) * 0.5;
            details.push(hh.re.abs());
            details.push(hh.im.abs());
        }
    }
    median(details) / MAD_TO_SIGMA
}

impl SpectralSvdFilter {
    pub fn new(spec: FilterSpec) -> Self {
        Self {
            dct: dct_matrix(spec.patch),
            spec,
        }
    }

    /// Sliding-window hard thresholding with periodic boundaries; overlapping
    /// reconstructions are averaged.
    fn threshold_image(&self, img: &[Complex64], height: usize, width: usize) -> Vec<Complex64> {
        let p = self.spec.patch.min(height).min(width);
        if self.spec.threshold == 0.0 || p == 0 {
            return img.to_vec();
        }
        let dct = if p == self.spec.patch { self.dct.clone() } else { dct_matrix(p) };
        let tau = self.spec.threshold * estimate_noise_sigma(img, height, width);
        let stride = self.spec.stride.min(p);
        let zero = Complex64::new(0.0, 0.0);
        let mut acc = vec![zero; img.len()];
        let mut weight = vec![0u32; img.len()];
        let mut block = vec![zero; p * p];
        let mut tmp = vec![zero; p * p];

        for r0 in (0..height).step_by(stride) {
            for c0 in (0..width).step_by(stride) {
                for i in 0..p {
                    for j in 0..p {
                        block[i * p + j] = img[((r0 + i) % height) * width + (c0 + j) % width];
                    }
                }
                // C = D·X·Dᵀ
                separable(&dct, &block, &mut tmp, p, false);
                separable_cols(&dct, &tmp, &mut block, p, false);
                for (idx, c) in block.iter_mut().enumerate() {
                    if idx != 0 && c.norm() < tau {
                        *c = zero;
                    }
                }
                // X = Dᵀ·C·D
                separable(&dct, &block, &mut tmp, p, true);
                separable_cols(&dct, &tmp, &mut block, p, true);
                for i in 0..p {
                    for j in 0..p {
                        let idx = ((r0 + i) % height) * width + (c0 + j) % width;
                        acc[idx] += block[i * p + j];
                        weight[idx] += 1;
                    }
                }
            }
        }
        acc.iter()
            .zip(&weight)
            .zip(img)
            .map(|((a, &w), &orig)| if w == 0 { orig } else { a / w as f64 })
            .collect()
    }
}

/// Row pass: `out[i][v] = Σ_x in[i][x]·D[v][x]` (or `Dᵀ` when `transpose`).
fn separable(d: &[f64], input: &[Complex64], out: &mut [Complex64], p: usize, transpose: bool) {
    for i in 0..p {
        for v in 0..p {
            let mut s = Complex64::new(0.0, 0.0);
            for x in 0..p {
                let coef = if transpose { d[x * p + v] } else { d[v * p + x] };
                s += input[i * p + x] * coef;
            }
            out[i * p + v] = s;
        }
    }
}

/// Column pass: `out[u][j] = Σ_y D[u][y]·in[y][j]` (or `Dᵀ`).
fn separable_cols(d: &[f64], input: &[Complex64], out: &mut [Complex64], p: usize, transpose: bool) {
    for u in 0..p {
        for j in 0..p {
            let mut s = Complex64::new(0.0, 0.0);
            for y in 0..p {
                let coef = if transpose { d[y * p + u] } else { d[u * p + y] };
                s += input[y * p + j] * coef;
            }
            out[u * p + j] = s;
        }
    }
}

impl CubeFilter for SpectralSvdFilter {
    fn filter(&self, cube: &ComplexCube) -> Result<ComplexCube> {
        let k = cube.channels();
        let n = cube.pixels();
        let (h, w) = (cube.height(), cube.width());

        // Left singular vectors and squared singular values of the K × N
        // matrix from its K × K Gram matrix.
        let gram = DMatrix::<Complex64>::from_fn(k, k, |i, j| {
            cube.channel(i)
                .iter()
                .zip(cube.channel(j))
                .map(|(a, b)| a * b.conj())
                .sum()
        });
        let eig = gram.symmetric_eigen();
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let energies: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
        let total: f64 = energies.iter().sum();
        if total == 0.0 {
            return Ok(cube.clone());
        }
        let rank = match self.spec.rank {
            RankChoice::Fixed(r) => r.min(k),
            RankChoice::Auto => {
                let mut acc = 0.0;
                let mut r = k;
                for (i, e) in energies.iter().enumerate() {
                    acc += e;
                    if acc >= AUTO_RANK_ENERGY * total {
                        r = i + 1;
                        break;
                    }
                }
                r
            }
        };

        let basis: Vec<Vec<Complex64>> = order[..rank]
            .iter()
            .map(|&i| (0..k).map(|c| eig.eigenvectors[(c, i)]).collect())
            .collect();

        // eigenimage_i = u_iᴴ · X
        let filtered: Vec<Vec<Complex64>> = basis
            .par_iter()
            .map(|u| {
                let mut img = vec![Complex64::new(0.0, 0.0); n];
                for (c, uc) in u.iter().enumerate() {
                    let w = uc.conj();
                    for (o, x) in img.iter_mut().zip(cube.channel(c)) {
                        *o += w * x;
                    }
                }
                self.threshold_image(&img, h, w)
            })
            .collect();

        let mut out = ComplexCube::zeros(k, h, w);
        for (u, img) in basis.iter().zip(&filtered) {
            for (c, &uc) in u.iter().enumerate() {
                for (o, x) in out.channel_mut(c).iter_mut().zip(img) {
                    *o += uc * x;
                }
            }
        }
        Ok(out)
    }

    fn describe(&self) -> String {
        let rank = match self.spec.rank {
            RankChoice::Auto => format!("auto({AUTO_RANK_ENERGY})"),
            RankChoice::Fixed(r) => r.to_string(),
        };
        format!(
            "spectral-svd rank={rank} block-transform=dct-ii-orthonormal patch={} stride={} threshold={}*sigma_mad",
            self.spec.patch, self.spec.stride, self.spec.threshold
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hscube::cube_norm2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_cube(rng: &mut ChaCha8Rng, k: usize, h: usize, w: usize) -> ComplexCube {
        let data = (0..k * h * w)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        ComplexCube::new(k, h, w, data).unwrap()
    }

    fn max_diff(a: &ComplexCube, b: &ComplexCube) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max)
    }

    /// Smooth complex image: a few low-frequency waves.
    fn smooth_field(h: usize, w: usize, seed: u64) -> Vec<Complex64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let waves: Vec<(f64, f64, f64)> = (0..3)
            .map(|_| (rng.random_range(0.0..2.0), rng.random_range(0.0..2.0), rng.random_range(0.0..6.0)))
            .collect();
        (0..h * w)
            .map(|r| {
                let (y, x) = ((r / w) as f64, (r % w) as f64);
                waves
                    .iter()
                    .map(|&(fy, fx, ph)| {
                        Complex64::cis(2.0 * PI * (fy * y / h as f64 + fx * x / w as f64) + ph)
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn dct_is_orthonormal() {
        let d = dct_matrix(8);
        for a in 0..8 {
            for b in 0..8 {
                let s: f64 = (0..8).map(|x| d[a * 8 + x] * d[b * 8 + x]).sum();
                assert!((s - if a == b { 1.0 } else { 0.0 }).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn full_rank_without_threshold_is_lossless() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cube = random_cube(&mut rng, 4, 16, 16);
        let spec = FilterSpec {
            rank: RankChoice::Fixed(4),
            threshold: 0.0,
            ..FilterSpec::default()
        };
        let out = spec.build().unwrap().filter(&cube).unwrap();
        assert!(max_diff(&out, &cube) < 1e-10);
    }

    #[test]
    fn block_transform_round_trip_is_lossless() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let img: Vec<Complex64> = random_cube(&mut rng, 1, 12, 20).into_data();
        let f = SpectralSvdFilter::new(FilterSpec {
            threshold: 1e-300,
            patch: 4,
            stride: 3,
            ..FilterSpec::default()
        });
        let out = f.threshold_image(&img, 12, 20);
        for (a, b) in out.iter().zip(&img) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn rank_one_data_survives_rank_one_projection() {
        let base = smooth_field(16, 16, 3);
        let weights = [Complex64::new(1.0, 0.0), Complex64::new(0.3, -0.8), Complex64::new(-2.0, 0.1)];
        let fields: Vec<Vec<Complex64>> = weights
            .iter()
            .map(|w| base.iter().map(|b| b * w).collect())
            .collect();
        let cube = ComplexCube::from_channels(16, 16, &fields).unwrap();
        let spec = FilterSpec {
            rank: RankChoice::Fixed(1),
            threshold: 0.0,
            ..FilterSpec::default()
        };
        let out = spec.build().unwrap().filter(&cube).unwrap();
        assert!(max_diff(&out, &cube) < 1e-10);
        let auto = FilterSpec {
            rank: RankChoice::Auto,
            threshold: 0.0,
            ..FilterSpec::default()
        };
        let out = auto.build().unwrap().filter(&cube).unwrap();
        assert!(max_diff(&out, &cube) < 1e-10);
    }

    #[test]
    fn denoises_low_rank_cube_over_a_decade_of_noise() {
        let (h, w) = (32, 32);
        let a = smooth_field(h, w, 5);
        let b = smooth_field(h, w, 6);
        let fields: Vec<Vec<Complex64>> = (0..6)
            .map(|k| {
                let s = k as f64 / 5.0;
                a.iter().zip(&b).map(|(x, y)| x * (1.0 - s) + y * Complex64::new(0.0, s)).collect()
            })
            .collect();
        let clean = ComplexCube::from_channels(h, w, &fields).unwrap();
        let filter = FilterSpec {
            rank: RankChoice::Fixed(2),
            ..FilterSpec::default()
        }
        .build()
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for sigma in [0.05, 0.15, 0.5] {
            let noisy_data = clean
                .data()
                .iter()
                .map(|z| {
                    let nr: f64 = StandardNormal.sample(&mut rng);
                    let ni: f64 = StandardNormal.sample(&mut rng);
                    z + Complex64::new(nr, ni) * sigma
                })
                .collect();
            let noisy = ComplexCube::new(6, h, w, noisy_data).unwrap();
            let out = filter.filter(&noisy).unwrap();
            let mse_in = max_err2(&noisy, &clean);
            let mse_out = max_err2(&out, &clean);
            assert!(mse_out < mse_in, "sigma {sigma}: {mse_out} !< {mse_in}");
        }
    }

    fn max_err2(a: &ComplexCube, b: &ComplexCube) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>()
    }

    #[test]
    fn thresholding_never_adds_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for rank in [RankChoice::Auto, RankChoice::Fixed(2), RankChoice::Fixed(3)] {
            let cube = random_cube(&mut rng, 3, 16, 24);
            let out = FilterSpec { rank, ..FilterSpec::default() }
                .build()
                .unwrap()
                .filter(&cube)
                .unwrap();
            assert!(cube_norm2(&out) <= cube_norm2(&cube) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn identity_filter_is_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let cube = random_cube(&mut rng, 2, 5, 5);
        let f = FilterSpec::identity().build().unwrap();
        assert!(f.is_identity());
        assert_eq!(f.filter(&cube).unwrap(), cube);
    }

    #[test]
    fn relax_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_cube(&mut rng, 2, 3, 3);
        let b = random_cube(&mut rng, 2, 3, 3);
        assert_eq!(relax(&a, &b, 1.0).unwrap(), b);
        let same = relax(&a, &a, 0.5).unwrap();
        assert!(max_diff(&same, &a) < 1e-15);
        let beta = 0.3;
        let r = relax(&a, &b, beta).unwrap();
        for ((x, y), z) in a.data().iter().zip(b.data()).zip(r.data()) {
            let want = Complex64::new(
                (1.0 - beta) * x.re + beta * y.re,
                (1.0 - beta) * x.im + beta * y.im,
            );
            assert!((z - want).norm() < 1e-14);
        }
        assert!(relax(&a, &b, 0.0).is_err());
        assert!(relax(&a, &b, 1.5).is_err());
    }

    #[test]
    fn relax_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let a1 = random_cube(&mut rng, 1, 4, 4);
        let a2 = random_cube(&mut rng, 1, 4, 4);
        let f1 = random_cube(&mut rng, 1, 4, 4);
        let f2 = random_cube(&mut rng, 1, 4, 4);
        let sum = |x: &ComplexCube, y: &ComplexCube| {
            ComplexCube::new(1, 4, 4, x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect()).unwrap()
        };
        let lhs = relax(&sum(&a1, &a2), &sum(&f1, &f2), 0.4).unwrap();
        let rhs = sum(&relax(&a1, &f1, 0.4).unwrap(), &relax(&a2, &f2, 0.4).unwrap());
        assert!(max_diff(&lhs, &rhs) < 1e-14);
    }

    #[test]
    fn spec_validation() {
        assert!(FilterSpec { rank: RankChoice::Fixed(0), ..FilterSpec::default() }.build().is_err());
        assert!(FilterSpec { threshold: -1.0, ..FilterSpec::default() }.build().is_err());
        assert!(FilterSpec { stride: 9, ..FilterSpec::default() }.build().is_err());
        assert_eq!("svd".parse::<FilterKind>().unwrap(), FilterKind::SpectralSvd);
        assert!("bm3d".parse::<FilterKind>().is_err());
    }
}
