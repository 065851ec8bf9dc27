//! Spectral proximity operators.
//!
//! For one experiment `t` and pixel `r`, the sensor-plane update solves
//!
//! ```text
//! min_{U_1..U_K}  L(z, Σ_k |U_k|²) + (1/γ) Σ_k |U_k − v_k|²
//! ```
//!
//! where `v_k = A_{t,k}U_{o,k}(r) + Λ_{t,k}(r)` and `L` is the Gaussian or
//! Poissonian minus-log-likelihood of the observed total intensity `z`. The
//! stationarity conditions force `U_k = v_k / w` for one real scalar `w`
//! shared by all channels, so the problem reduces to a polynomial in the
//! total energy `x = Σ_k |U_k|²` (cubic for Gaussian, quadratic for
//! Poissonian data). Candidate roots are ranked by the per-pixel criterion.

pub mod poly;

use num_complex::Complex64;

pub use poly::{solve_cubic_real, solve_linear, solve_quadratic_real, RealRoots};

/// Likelihood used by the sensor-plane update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NoiseModel {
    /// Additive white Gaussian noise with standard deviation `sigma`.
    Gaussian { sigma: f64 },
    /// Photon counts `Z ~ Poisson(χ·Y)`.
    Poisson { chi: f64 },
}

/// Inputs of one per-pixel update.
#[derive(Clone, Copy, Debug)]
pub struct PixelSpoInput<'a> {
    /// `v_k = A_{t,k}U_{o,k}(r) + Λ_{t,k}(r)` for every channel.
    pub v: &'a [Complex64],
    /// Observed total intensity (or photon count).
    pub z: f64,
    /// Penalty weight.
    pub gamma: f64,
}

impl PixelSpoInput<'_> {
    pub fn q(&self) -> f64 {
        self.v.iter().map(|z| z.norm_sqr()).sum()
    }
}

/// Result of one per-pixel update: `Û_k = scale · v_k` and `x̂ = Σ_k |Û_k|²`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpoPixel {
    pub x_hat: f64,
    pub scale: f64,
    /// Set when the data cannot be explained (positive count with zero
    /// predicted field); the update returns zero.
    pub degenerate: bool,
}

impl SpoPixel {
    const ZERO: SpoPixel = SpoPixel {
        x_hat: 0.0,
        scale: 0.0,
        degenerate: false,
    };

    pub fn apply(&self, v: &[Complex64]) -> Vec<Complex64> {
        v.iter().map(|z| z * self.scale).collect()
    }
}

const TIE_TOLERANCE: f64 = 1e-12;

/// Keeps the better of two `(criterion, x, scale)` candidates; on a tie
/// within [`TIE_TOLERANCE`] the larger energy wins.
fn better(best: Option<(f64, f64, f64)>, cand: (f64, f64, f64)) -> Option<(f64, f64, f64)> {
    match best {
        None => Some(cand),
        Some(b) => {
            let tol = TIE_TOLERANCE * b.0.abs().max(cand.0.abs()).max(f64::MIN_POSITIVE);
            if cand.0 < b.0 - tol || ((cand.0 - b.0).abs() <= tol && cand.1 > b.1) {
                Some(cand)
            } else {
                Some(b)
            }
        }
    }
}

/// Gaussian update from the channel energy `q = Σ_k |v_k|²`.
///
/// With `u = 2γ/σ²` the stationarity condition is
/// `(1 + u(x − z))·U_k = v_k`. Writing `w = 1 + u(x − z)` turns the
/// energy cubic `u²x³ + 2u(1−uz)x² + (1−uz)²x − q = 0` into
/// `w³ + (uz − 1)w² − uq = 0`, the same polynomial under an affine change of
/// variable, but with the consistent solution `q = z ⇒ w = 1` represented
/// exactly instead of sitting next to a near-double root in `x`.
///
/// Only the positive root can minimize the pixel criterion: a root `w < 0`
/// gives the same energy `q/w²` as `|w|` but a strictly larger penalty
/// `(1/w − 1)²q/γ`. The positive root is unique, so no ranking is needed.
pub fn gaussian_update(q: f64, z: f64, gamma: f64, sigma: f64) -> SpoPixel {
    if q == 0.0 {
        return SpoPixel::ZERO;
    }
    let u = 2.0 * gamma / (sigma * sigma);
    let w = positive_cubic_root(u * z - 1.0, u * q);
    let scale = 1.0 / w;
    SpoPixel {
        x_hat: scale * scale * q,
        scale,
        degenerate: false,
    }
}

/// The unique positive root of `w²(w + b) = c` for `c > 0`.
///
/// `g(w) = w²(w + b) − c` is convex and increasing to the right of its
/// positive root, so Newton's method started from an upper bound decreases
/// monotonically onto it.
pub fn positive_cubic_root(b: f64, c: f64) -> f64 {
    // w = max(−b, 0) + c^(1/3) satisfies g(w) ≥ 0, as does √(c/b) for b > 0
    let mut w = (-b).max(0.0) + c.cbrt();
    if b > 0.0 {
        w = w.min((c / b).sqrt());
    }
    for _ in 0..100 {
        let g = w * w * (w + b) - c;
        if g <= 0.0 {
            break;
        }
        let next = w - g / (w * (3.0 * w + 2.0 * b));
        if !(next < w) {
            break;
        }
        w = next;
    }
    w
}

/// Poissonian update from the channel energy `q` and count `z`.
///
/// Stationarity gives `(1 + γχ − γz/x)·U_k = v_k`, hence
/// `(1+γχ)²x² − (2(1+γχ)γz + q)x + (γz)² = 0`, whose discriminant
/// `q² + 4(1+γχ)γz·q` is never negative. The roots are computed through
/// `w = 1 + γχ − γz/x`, which satisfies `(γz/q)·w² + w − (1+γχ) = 0`, so
/// the scale `1/w` never comes from a cancelling difference.
pub fn poisson_update(q: f64, z: f64, gamma: f64, chi: f64) -> SpoPixel {
    let z = z.max(0.0);
    let a1 = 1.0 + gamma * chi;
    if z == 0.0 {
        let scale = 1.0 / a1;
        return SpoPixel {
            x_hat: q * scale * scale,
            scale,
            degenerate: false,
        };
    }
    if q == 0.0 {
        return SpoPixel {
            degenerate: true,
            ..SpoPixel::ZERO
        };
    }
    let alpha = gamma * z / q;
    let root = (1.0 + 4.0 * alpha * a1).sqrt();
    let mut best = None;
    for w in [2.0 * a1 / (1.0 + root), -(1.0 + root) / (2.0 * alpha)] {
        if !(w.is_finite() && w != 0.0) {
            continue;
        }
        let scale = 1.0 / w;
        let energy = scale * scale * q;
        if !(energy > 0.0) {
            continue;
        }
        let j = chi * energy - z * (chi * energy).ln() + (scale - 1.0).powi(2) * q / gamma;
        best = better(best, (j, energy, scale));
    }
    match best {
        Some((_, x_hat, scale)) => SpoPixel {
            x_hat,
            scale,
            degenerate: false,
        },
        None => SpoPixel {
            degenerate: true,
            ..SpoPixel::ZERO
        },
    }
}

/// Per-pixel update under either likelihood.
pub fn spo_update(model: NoiseModel, q: f64, z: f64, gamma: f64) -> SpoPixel {
    match model {
        NoiseModel::Gaussian { sigma } => gaussian_update(q, z, gamma, sigma),
        NoiseModel::Poisson { chi } => poisson_update(q, z, gamma, chi),
    }
}

pub fn spo_gaussian(input: &PixelSpoInput<'_>, sigma: f64) -> SpoPixel {
    gaussian_update(input.q(), input.z, input.gamma, sigma)
}

pub fn spo_poisson(input: &PixelSpoInput<'_>, chi: f64) -> SpoPixel {
    poisson_update(input.q(), input.z, input.gamma, chi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_v(rng: &mut ChaCha8Rng, k: usize, scale: f64) -> Vec<Complex64> {
        (0..k)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * scale)
            .collect()
    }

    #[test]
    fn gaussian_consistent_input_is_a_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let k = rng.random_range(1..6);
            let scale = 10f64.powf(rng.random_range(-3.0..3.0));
            let v = random_v(&mut rng, k, scale);
            let input = PixelSpoInput {
                v: &v,
                z: 0.0,
                gamma: 10f64.powf(rng.random_range(-4.0..4.0)),
            };
            let input = PixelSpoInput { z: input.q(), ..input };
            let sigma = 10f64.powf(rng.random_range(-4.0..1.0));
            let out = spo_gaussian(&input, sigma);
            assert!((out.scale - 1.0).abs() <= 1e-12, "scale {}", out.scale);
            for (a, b) in out.apply(&v).iter().zip(&v) {
                assert!((a - b).norm() <= 1e-12 * b.norm().max(1e-300));
            }
        }
    }

    #[test]
    fn zero_energy_gives_zero() {
        let v = vec![Complex64::new(0.0, 0.0); 3];
        let input = PixelSpoInput { v: &v, z: 2.0, gamma: 1.0 };
        let g = spo_gaussian(&input, 0.1);
        assert_eq!((g.scale, g.x_hat), (0.0, 0.0));
        let p = spo_poisson(&input, 3.0);
        assert!(p.degenerate);
        assert_eq!(p.scale, 0.0);
    }

    #[test]
    fn poisson_zero_count_is_pure_shrinkage() {
        let v = vec![Complex64::new(0.3, -1.2), Complex64::new(2.0, 0.5)];
        let input = PixelSpoInput { v: &v, z: 0.0, gamma: 0.7 };
        let chi = 4.0;
        let out = spo_poisson(&input, chi);
        assert!((out.scale - 1.0 / (1.0 + 0.7 * chi)).abs() < 1e-15);
        let q = input.q();
        assert!((out.x_hat - q / (1.0 + 0.7 * chi).powi(2)).abs() < 1e-14);
    }

    #[test]
    fn poisson_solution_satisfies_stationarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let k = rng.random_range(1..5);
            let scale = 10f64.powf(rng.random_range(-2.0..2.0));
            let v = random_v(&mut rng, k, scale);
            let gamma = 10f64.powf(rng.random_range(-3.0..2.0));
            let chi = 10f64.powf(rng.random_range(-1.0..3.0));
            let z = (rng.random_range(0.0..3.0) * chi).round();
            let input = PixelSpoInput { v: &v, z, gamma };
            let out = spo_poisson(&input, chi);
            if z == 0.0 {
                continue;
            }
            let u_hat = out.apply(&v);
            let x: f64 = u_hat.iter().map(|u| u.norm_sqr()).sum();
            assert!((x - out.x_hat).abs() <= 1e-9 * out.x_hat);
            for (uh, vk) in u_hat.iter().zip(&v) {
                let lhs = uh * (chi - z / x + 1.0 / gamma);
                let rhs = vk / gamma;
                // the bracket may cancel, so measure against its terms
                let size = uh.norm() * (chi + z / x + 1.0 / gamma);
                assert!((lhs - rhs).norm() <= 1e-10 * size, "{lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn poisson_self_consistent_counts() {
        // z = χ·x̂ from a previous solve: the update must reproduce x̂ when
        // v already carries that energy
        let v = vec![Complex64::new(0.6, 0.2), Complex64::new(-0.1, 0.9), Complex64::new(0.4, 0.4)];
        let chi = 25.0;
        let input = PixelSpoInput { v: &v, z: 0.0, gamma: 0.5 };
        let z = chi * input.q();
        let out = spo_poisson(&PixelSpoInput { z, ..input }, chi);
        assert!((out.scale - 1.0).abs() < 1e-12);
        assert!((out.x_hat - input.q()).abs() < 1e-12 * input.q());
    }

    #[test]
    fn gamma_to_zero_keeps_v() {
        let v = vec![Complex64::new(0.5, 0.5), Complex64::new(-1.0, 0.25)];
        let input = PixelSpoInput { v: &v, z: 3.7, gamma: 1e-8 };
        let g = spo_gaussian(&input, 0.5);
        assert!((g.scale - 1.0).abs() < 1e-6);
        let p = spo_poisson(&input, 2.0);
        assert!((p.scale - 1.0).abs() < 1e-6);
    }

    #[test]
    fn negative_gaussian_observation_shrinks() {
        let v = vec![Complex64::new(1.0, 0.0)];
        let input = PixelSpoInput { v: &v, z: -0.5, gamma: 1.0 };
        let out = spo_gaussian(&input, 0.1);
        assert!(out.scale > 0.0 && out.scale < 1.0);
    }

    proptest! {
        #[test]
        fn updates_are_collinear_and_energy_consistent(
            seed in any::<u64>(),
            k in 1usize..6,
            lz in -3.0f64..3.0,
            lg in -4.0f64..3.0,
            ln in -3.0f64..1.0,
            poisson in any::<bool>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v = random_v(&mut rng, k, 1.0);
            let gamma = 10f64.powf(lg);
            let (out, z) = if poisson {
                let chi = 10f64.powf(-ln + 1.0);
                let z = (10f64.powf(lz) * chi).round();
                (spo_poisson(&PixelSpoInput { v: &v, z, gamma }, chi), z)
            } else {
                let z = 10f64.powf(lz);
                (spo_gaussian(&PixelSpoInput { v: &v, z, gamma }, 10f64.powf(ln)), z)
            };
            prop_assert!(z.is_finite());
            prop_assert!(out.scale > 0.0);
            let u = out.apply(&v);
            let x: f64 = u.iter().map(|c| c.norm_sqr()).sum();
            prop_assert!((x - out.x_hat).abs() <= 1e-9 * out.x_hat.max(1e-300));
            for (a, b) in u.iter().zip(&v) {
                if b.norm() > 1e-12 {
                    let d = (a.arg() - b.arg()).abs();
                    prop_assert!(d < 1e-12 || (d - 2.0 * std::f64::consts::PI).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn every_admissible_root_is_no_better_gaussian(
            q in 1e-3f64..10.0, z in -1.0f64..10.0, lg in -3.0f64..2.0, ls in -2.0f64..0.5,
        ) {
            let gamma = 10f64.powf(lg);
            let sigma = 10f64.powf(ls);
            let out = gaussian_update(q, z, gamma, sigma);
            let u = 2.0 * gamma / (sigma * sigma);
            let j = |x: f64, s: f64| (z - x).powi(2) / (sigma * sigma) + (s - 1.0).powi(2) * q / gamma;
            let best = j(out.x_hat, out.scale);
            // roots of the x-cubic as stated, independently of the w form
            let roots = solve_cubic_real(u * u, 2.0 * u * (1.0 - u * z), (1.0 - u * z).powi(2), -q);
            for x in roots.iter().filter(|&x| x >= 0.0) {
                let w = 1.0 + u * (x - z);
                if w == 0.0 { continue; }
                let s = 1.0 / w;
                prop_assert!(best <= j(s * s * q, s) + 1e-9 * best.abs().max(1e-12));
            }
        }
    }
}
