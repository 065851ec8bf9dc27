//! Real roots of low-degree polynomials with real coefficients.

use std::f64::consts::PI;

/// Up to three real roots, ascending.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RealRoots {
    roots: [f64; 3],
    len: usize,
}

impl RealRoots {
    fn push(&mut self, x: f64) {
        if self.len < 3 && x.is_finite() {
            self.roots[self.len] = x;
            self.len += 1;
        }
    }

    fn sorted(mut self) -> Self {
        self.roots[..self.len].sort_by(|a, b| a.total_cmp(b));
        self
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.roots[..self.len]
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.as_slice().iter().copied()
    }
}

/// Root of `b·x + c = 0`; no roots when `b = 0`.
pub fn solve_linear(b: f64, c: f64) -> RealRoots {
    let mut out = RealRoots::default();
    if b != 0.0 {
        out.push(-c / b);
    }
    out
}

/// Real roots of `a·x² + b·x + c = 0`, cancellation-free.
pub fn solve_quadratic_real(a: f64, b: f64, c: f64) -> RealRoots {
    if a == 0.0 {
        return solve_linear(b, c);
    }
    let mut out = RealRoots::default();
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return out;
    }
    let q = -0.5 * (b + disc.sqrt().copysign(b));
    if q == 0.0 {
        // b = 0 and c = 0
        out.push(0.0);
        out.push(0.0);
        return out;
    }
    out.push(q / a);
    out.push(c / q);
    out.sorted()
}

fn eval_monic(x: f64, b: f64, c: f64, d: f64) -> (f64, f64) {
    let f = ((x + b) * x + c) * x + d;
    let df = (3.0 * x + 2.0 * b) * x + c;
    (f, df)
}

/// Newton refinement on the monic cubic; keeps a step only if it lowers the
/// residual.
fn polish(mut x: f64, b: f64, c: f64, d: f64) -> f64 {
    let (mut f, mut df) = eval_monic(x, b, c, d);
    for _ in 0..4 {
        if f == 0.0 || df == 0.0 {
            break;
        }
        let next = x - f / df;
        let (fn_, dfn) = eval_monic(next, b, c, d);
        if !(fn_.abs() < f.abs()) {
            break;
        }
        x = next;
        f = fn_;
        df = dfn;
    }
    x
}

/// Real roots of `a·x³ + b·x² + c·x + d = 0`.
///
/// The root of largest magnitude comes from the trigonometric form (three
/// real roots) or the cube-root formula (one real root). It is polished and
/// divided out; the remaining quadratic is formed with whichever of the two
/// equivalent coefficient formulas loses less to cancellation. Every root is
/// refined by Newton steps on the original polynomial. Degenerates to the
/// quadratic or linear solver when leading coefficients vanish.
pub fn solve_cubic_real(a: f64, b: f64, c: f64, d: f64) -> RealRoots {
    if a == 0.0 {
        return solve_quadratic_real(b, c, d);
    }
    let (b, c, d) = (b / a, c / a, d / a);
    if d == 0.0 {
        let mut out = solve_quadratic_real(1.0, b, c);
        out.push(0.0);
        return out.sorted();
    }

    let r = polish(dominant_root(b, c, d), b, c, d);
    if r == 0.0 {
        // d ≠ 0 rules out a zero root; only reachable on underflow
        return RealRoots::default();
    }
    // x³ + bx² + cx + d = (x − r)(x² + e·x + f) with f = −d/r and
    // e = b + r = (f − c)/r
    let f = -d / r;
    let e_sum = b + r;
    let e_div = (f - c) / r;
    let err_sum = b.abs() + r.abs();
    let err_div = (c.abs() + f.abs()) / r.abs();
    let e = if err_div < err_sum { e_div } else { e_sum };

    let mut out = RealRoots::default();
    out.push(r);
    for x in solve_quadratic_real(1.0, e, f).iter() {
        out.push(polish(x, b, c, d));
    }
    out.sorted()
}

/// Real root of largest magnitude of the monic cubic.
fn dominant_root(b: f64, c: f64, d: f64) -> f64 {
    // x = t − b/3 gives t³ + p·t + q = 0
    let shift = b / 3.0;
    let p = c - b * shift;
    let q = (2.0 * shift * shift - c) * shift + d;
    let half_q = 0.5 * q;
    let third_p = p / 3.0;
    let disc = half_q * half_q + third_p * third_p * third_p;

    if disc < 0.0 {
        // p < 0 here
        let m = 2.0 * (-third_p).sqrt();
        let cos_arg = (3.0 * q / (p * m)).clamp(-1.0, 1.0);
        let theta = cos_arg.acos() / 3.0;
        (0..3)
            .map(|i| m * (theta - 2.0 * PI * i as f64 / 3.0).cos() - shift)
            .max_by(|x, y| x.abs().total_cmp(&y.abs()))
            .unwrap_or(0.0)
    } else {
        let s = -half_q - disc.sqrt().copysign(half_q);
        let u = s.cbrt();
        let t = if u == 0.0 { 0.0 } else { u - third_p / u };
        let single = t - shift;
        // with disc = 0 the double root −t/2 may be the larger one
        let double = -0.5 * t - shift;
        if disc == 0.0 && double.abs() > single.abs() {
            double
        } else {
            single
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factored_cubic() {
        let r = solve_cubic_real(1.0, -6.0, 11.0, -6.0);
        assert_eq!(r.len(), 3);
        for (got, want) in r.iter().zip([1.0, 2.0, 3.0]) {
            assert!((got - want).abs() < 1e-12, "{got}");
        }
    }

    #[test]
    fn single_real_root() {
        let r = solve_cubic_real(1.0, 0.0, 0.0, -8.0);
        assert_eq!(r.len(), 1);
        assert!((r.as_slice()[0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn zero_constant_term() {
        let r = solve_cubic_real(2.0, -2.0, 0.0, 0.0);
        // 2x²(x − 1)
        assert_eq!(r.as_slice(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn leading_zero_falls_back() {
        let r = solve_cubic_real(0.0, 1.0, -3.0, 2.0);
        assert_eq!(r.as_slice(), &[1.0, 2.0]);
        let r = solve_cubic_real(0.0, 0.0, 2.0, -1.0);
        assert_eq!(r.as_slice(), &[0.5]);
        assert!(solve_cubic_real(0.0, 0.0, 0.0, 1.0).is_empty());
    }

    #[test]
    fn quadratic_cases() {
        assert!(solve_quadratic_real(1.0, 0.0, 1.0).is_empty());
        assert_eq!(solve_quadratic_real(1.0, 0.0, 0.0).as_slice(), &[0.0, 0.0]);
        let r = solve_quadratic_real(1.0, -1e8, 1.0);
        // small root must not cancel to zero
        assert!((r.as_slice()[0] - 1e-8).abs() < 1e-22);
        assert!((r.as_slice()[1] - 1e8).abs() < 1e-6);
    }

    #[test]
    fn triple_root() {
        // (x − 2)³
        let r = solve_cubic_real(1.0, -6.0, 12.0, -8.0);
        assert!(!r.is_empty());
        for x in r.iter() {
            assert!((x - 2.0).abs() < 1e-5);
        }
    }

    #[test]
    fn wildly_scaled_coefficients() {
        // w³ + (uz − 1) w² − u·z has the root w = 1 for any u·z
        for uz in [1e-6, 1.0, 1e6, 1e12] {
            let r = solve_cubic_real(1.0, uz - 1.0, 0.0, -uz);
            assert!(r.iter().any(|w| (w - 1.0).abs() < 1e-14), "{uz}: {r:?}");
        }
    }
}
