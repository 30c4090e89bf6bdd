//! Safeguarded scalar Newton iteration on a sign-change bracket.

use thiserror::Error;

pub const MAX_ITERATIONS: usize = 200;
/// Newton steps whose residual fails to halve before forcing a bisection.
const NON_CONTRACTING_LIMIT: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RootError {
    #[error("no sign change on [{lo}, {hi}] (f = {f_lo:e}, {f_hi:e})")]
    NoSignChange { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },
    #[error("Newton stalled after {iterations} iterations: bracket [{lo}, {hi}], residual {residual:e}")]
    Stall {
        lo: f64,
        hi: f64,
        residual: f64,
        iterations: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Root {
    pub t: f64,
    pub residual: f64,
    pub slope: f64,
    pub iterations: usize,
}

/// Finds a root of `f` in `[lo, hi]`, where `f` returns `(value, derivative)`.
///
/// Requires `f(lo)` and `f(hi)` of opposite sign (or one of them zero). The
/// iteration starts at `seed` when it lies inside the bracket, and returns
/// once `|f| ≤ tol`. When the residual cannot reach `tol` because the bracket
/// has collapsed to adjacent floats, the best point is returned anyway and
/// the caller decides from `residual`.
pub fn newton_bracketed<F>(mut f: F, lo: f64, hi: f64, seed: Option<f64>, tol: f64) -> Result<Root, RootError>
where
    F: FnMut(f64) -> (f64, f64),
{
    let (mut lo, mut hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
    let (f_lo, d_lo) = f(lo);
    if f_lo == 0.0 {
        return Ok(Root { t: lo, residual: 0.0, slope: d_lo, iterations: 0 });
    }
    let (f_hi, d_hi) = f(hi);
    if f_hi == 0.0 {
        return Ok(Root { t: hi, residual: 0.0, slope: d_hi, iterations: 0 });
    }
    if !(f_lo.signum() != f_hi.signum()) {
        return Err(RootError::NoSignChange { lo, hi, f_lo, f_hi });
    }
    let lo_sign = f_lo.signum();

    let mut x = match seed {
        Some(s) if s > lo && s < hi => s,
        _ => 0.5 * (lo + hi),
    };
    let mut best = Root { t: x, residual: f64::INFINITY, slope: 0.0, iterations: 0 };
    let mut prev_residual = f64::INFINITY;
    let mut stalls = 0;
    for it in 1..=MAX_ITERATIONS {
        let (fx, dfx) = f(x);
        let r = fx.abs();
        if r < best.residual {
            best = Root { t: x, residual: r, slope: dfx, iterations: it };
        }
        if r <= tol {
            return Ok(Root { t: x, residual: r, slope: dfx, iterations: it });
        }
        if fx.signum() == lo_sign {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo <= 4.0 * f64::EPSILON * lo.abs().max(hi.abs()).max(f64::MIN_POSITIVE) {
            best.iterations = it;
            return Ok(best);
        }
        if r > 0.5 * prev_residual {
            stalls += 1;
        } else {
            stalls = 0;
        }
        prev_residual = r;
        let step = if dfx != 0.0 { x - fx / dfx } else { f64::NAN };
        x = if stalls >= NON_CONTRACTING_LIMIT || !(step > lo && step < hi) {
            stalls = 0;
            0.5 * (lo + hi)
        } else {
            step
        };
    }
    Err(RootError::Stall {
        lo,
        hi,
        residual: best.residual,
        iterations: MAX_ITERATIONS,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sqrt_two() {
        let r = newton_bracketed(|x| (x * x - 2.0, 2.0 * x), 0.0, 2.0, None, 1e-14).unwrap();
        assert!((r.t - 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn flat_derivative_falls_back_to_bisection() {
        // Newton from 0 would divide by zero.
        let r = newton_bracketed(|x| (x * x * x - 0.001, 3.0 * x * x), -1.0, 1.0, Some(0.0), 1e-15).unwrap();
        assert!((r.t - 0.1).abs() < 1e-12);
    }

    #[test]
    fn no_sign_change() {
        let e = newton_bracketed(|x| (x * x + 1.0, 2.0 * x), -1.0, 1.0, None, 1e-12).unwrap_err();
        assert!(matches!(e, RootError::NoSignChange { .. }));
    }

    #[test]
    fn overshooting_newton_is_contained() {
        // atan sends naive Newton out to infinity from |x| > 1.39.
        let r = newton_bracketed(|x| (x.atan(), 1.0 / (1.0 + x * x)), -10.0, 20.0, Some(15.0), 1e-14).unwrap();
        assert!(r.t.abs() < 1e-13);
    }
}
