//! One-dimensional root finding for monotone functions.

use crate::error::{Error, Result};

const MAX_ITER: usize = 200;

/// Safeguarded Newton iteration on a bracket `[lo, hi]` where `f` changes sign.
///
/// `f` returns the function value and its derivative. A Newton step that leaves
/// the current bracket (or a vanishing derivative) falls back to bisection.
/// Stops when the bracket width drops below `xtol · |x|` (relative tolerance),
/// the bracket cannot be split further, or `f` is exactly zero.
pub fn newton_bisect<F>(mut f: F, lo: f64, hi: f64, xtol: f64) -> Result<f64>
where
    F: FnMut(f64) -> (f64, f64),
{
    let (mut a, mut b) = (lo, hi);
    let (fa, _) = f(a);
    let (fb, _) = f(b);
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() || fa.is_nan() || fb.is_nan() {
        return Err(Error::Bracket {
            lo,
            hi,
            context: format!("f(lo)={fa:e}, f(hi)={fb:e}"),
        });
    }
    let increasing = fb > 0.0;
    let mut x = 0.5 * (a + b);
    for _ in 0..MAX_ITER {
        let (fx, dfx) = f(x);
        if fx == 0.0 {
            return Ok(x);
        }
        if (fx > 0.0) == increasing {
            b = x;
        } else {
            a = x;
        }
        let mid = 0.5 * (a + b);
        if (b - a).abs() <= xtol * x.abs() || mid <= a || mid >= b {
            return Ok(mid);
        }
        let newton = x - fx / dfx;
        x = if dfx.is_finite() && dfx != 0.0 && newton > a && newton < b {
            // Newton converged to within rounding: accept.
            if (newton - x).abs() <= 0.25 * xtol * x.abs() {
                return Ok(newton);
            }
            newton
        } else {
            mid
        };
    }
    Ok(x)
}

/// Plain bisection for a monotone function; used where no derivative is at hand.
pub fn bisect<F>(mut f: F, lo: f64, hi: f64, xtol: f64) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    let (mut a, mut b) = (lo, hi);
    let fa = f(a);
    let fb = f(b);
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() || fa.is_nan() || fb.is_nan() {
        return Err(Error::Bracket {
            lo,
            hi,
            context: format!("f(lo)={fa:e}, f(hi)={fb:e}"),
        });
    }
    let increasing = fb > 0.0;
    for _ in 0..400 {
        let m = 0.5 * (a + b);
        if (b - a) <= xtol * m.abs() || m <= a || m >= b {
            return Ok(m);
        }
        let fm = f(m);
        if fm == 0.0 {
            return Ok(m);
        }
        if (fm > 0.0) == increasing {
            b = m;
        } else {
            a = m;
        }
    }
    Ok(0.5 * (a + b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_cube_root() {
        let r = newton_bisect(|x| (x * x * x - 2.0, 3.0 * x * x), 0.0, 2.0, 1e-15).unwrap();
        assert!((r - 2f64.cbrt()).abs() < 1e-14);
        let r = bisect(|x| x * x * x - 2.0, 0.0, 2.0, 1e-15).unwrap();
        assert!((r - 2f64.cbrt()).abs() < 1e-14);
    }

    #[test]
    fn reports_missing_bracket() {
        let err = newton_bisect(|x| (x * x + 1.0, 2.0 * x), -1.0, 1.0, 1e-12).unwrap_err();
        assert!(matches!(err, Error::Bracket { .. }));
    }

    #[test]
    fn relative_tolerance_near_zero() {
        let target = 3e-11;
        let r = newton_bisect(|x| (x - target, 1.0), 0.0, 1.0, 1e-15).unwrap();
        assert!(((r - target) / target).abs() < 1e-13);
        let r = bisect(|x| x - target, 0.0, 1.0, 1e-15).unwrap();
        assert!(((r - target) / target).abs() < 1e-13);
    }
}
