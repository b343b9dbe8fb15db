//! Minimizers used by the estimators: Nelder–Mead for small problems and BFGS
//! with central-difference gradients for the full likelihood, plus numerical
//! Hessians and covariance inversion.
//!
//! Objectives return `f64::INFINITY` (or NaN) outside their admissible region;
//! both minimizers treat such points as rejected steps.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy)]
pub struct OptimOptions {
    pub max_iter: usize,
    /// Relative tolerance on the objective value.
    pub rel_tol: f64,
    /// Relative step of the central-difference gradient.
    pub grad_step: f64,
}

impl Default for OptimOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            rel_tol: 1e-9,
            grad_step: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Converged,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub fval: f64,
    pub iterations: usize,
    pub evaluations: usize,
    /// Infinity norm of the numerical gradient at `x`.
    pub grad_norm: f64,
    pub status: Status,
}

impl OptimResult {
    pub fn converged(&self) -> bool {
        self.status == Status::Converged
    }
}

#[inline]
fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

/// Central-difference gradient with step `rel · (1 + |x_i|)`.
pub fn numerical_gradient<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], rel: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = rel * (1.0 + x[i].abs());
            xp[i] = x[i] + h;
            let fp = f(&xp);
            xp[i] = x[i] - h;
            let fm = f(&xp);
            xp[i] = x[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Central-difference Hessian with per-coordinate step `rel · (1 + |x_i|)`.
pub fn numerical_hessian<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], rel: f64) -> DMatrix<f64> {
    let n = x.len();
    let h: Vec<f64> = x.iter().map(|v| rel * (1.0 + v.abs())).collect();
    let f0 = f(x);
    let mut hess = DMatrix::zeros(n, n);
    let mut xp = x.to_vec();
    for i in 0..n {
        xp[i] = x[i] + h[i];
        let fp = f(&xp);
        xp[i] = x[i] - h[i];
        let fm = f(&xp);
        xp[i] = x[i];
        hess[(i, i)] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
        for j in 0..i {
            let mut eval = |si: f64, sj: f64| {
                xp[i] = x[i] + si * h[i];
                xp[j] = x[j] + sj * h[j];
                let v = f(&xp);
                xp[i] = x[i];
                xp[j] = x[j];
                v
            };
            let v = (eval(1.0, 1.0) - eval(1.0, -1.0) - eval(-1.0, 1.0) + eval(-1.0, -1.0))
                / (4.0 * h[i] * h[j]);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    hess
}

/// Inverse of a symmetric matrix expected to be positive definite.
///
/// Returns the inverse and `true` when a Cholesky factorization succeeds.
/// Otherwise returns the Moore–Penrose pseudo-inverse restricted to the
/// positive eigenvalues and `false`.
pub fn invert_information(info: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let sym = (info + info.transpose()) * 0.5;
    if let Some(chol) = sym.clone().cholesky() {
        let inv = chol.inverse();
        if inv.iter().all(|v| v.is_finite()) {
            return (inv, true);
        }
    }
    let eig = SymmetricEigen::new(sym);
    let max = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let cutoff = max * 1e-12;
    let n = eig.eigenvalues.len();
    let mut inv = DMatrix::zeros(n, n);
    for k in 0..n {
        let lam = eig.eigenvalues[k];
        if lam > cutoff && lam > 0.0 {
            let v = eig.eigenvectors.column(k);
            inv += (v * v.transpose()) / lam;
        }
    }
    (inv, false)
}

/// Nelder–Mead simplex minimization.
///
/// The initial simplex is `x0` plus `scale` along each coordinate axis.
/// Stops when the spread of function values over the simplex falls below
/// `rel_tol · (|f_best| + rel_tol)`.
pub fn nelder_mead<F: Fn(&[f64]) -> f64>(
    f: &F,
    x0: &[f64],
    scale: f64,
    opts: &OptimOptions,
) -> OptimResult {
    let n = x0.len();
    let mut evals = 0usize;
    let mut eval = |x: &[f64]| {
        evals += 1;
        sanitize(f(x))
    };
    if n == 0 {
        let fval = eval(x0);
        return OptimResult {
            x: x0.to_vec(),
            fval,
            iterations: 0,
            evaluations: 1,
            grad_norm: 0.0,
            status: Status::Converged,
        };
    }
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let f0 = eval(x0);
    simplex.push((x0.to_vec(), f0));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += scale;
        let mut fx = eval(&x);
        if !fx.is_finite() {
            x[i] = x0[i] - scale;
            fx = eval(&x);
        }
        simplex.push((x, fx));
    }
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut status = Status::MaxIterations;
    let mut iterations = 0;
    for it in 1..=opts.max_iter {
        iterations = it;
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        if best.is_finite() && (worst - best).abs() <= opts.rel_tol * (best.abs() + opts.rel_tol) {
            status = Status::Converged;
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|p| p.0[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n].0)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };
        let xr = along(alpha);
        let fr = eval(&xr);
        if fr < simplex[0].1 {
            let xe = along(gamma);
            let fe = eval(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[n].1 {
                let xc = along(rho);
                let fc = eval(&xc);
                (xc, fc)
            } else {
                let xc = along(-rho);
                let fc = eval(&xc);
                (xc, fc)
            };
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let x_best = simplex[0].0.clone();
                for p in simplex.iter_mut().skip(1) {
                    let xs: Vec<f64> = x_best
                        .iter()
                        .zip(&p.0)
                        .map(|(b, v)| b + sigma * (v - b))
                        .collect();
                    let fs = eval(&xs);
                    *p = (xs, fs);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, fval) = simplex.swap_remove(0);
    let grad = numerical_gradient(f, &x, opts.grad_step);
    OptimResult {
        grad_norm: inf_norm(&grad),
        x,
        fval,
        iterations,
        evaluations: evals + 2 * n,
        status,
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Largest coordinate change allowed in a single BFGS step.
const MAX_STEP: f64 = 5.0;

/// BFGS quasi-Newton minimization with central-difference gradients and a
/// backtracking Armijo line search.
pub fn bfgs<F: Fn(&[f64]) -> f64>(f: &F, x0: &[f64], opts: &OptimOptions) -> OptimResult {
    let n = x0.len();
    let mut evals = 0usize;
    let grad = |x: &[f64], evals: &mut usize| {
        *evals += 2 * n;
        numerical_gradient(f, x, opts.grad_step)
    };
    let mut x = x0.to_vec();
    let mut fx = sanitize(f(&x));
    evals += 1;
    let mut g = grad(&x, &mut evals);
    let mut hinv = DMatrix::<f64>::identity(n, n);
    let mut fresh = true;
    let mut status = Status::MaxIterations;
    let mut iterations = 0;
    if n == 0 || !fx.is_finite() {
        return OptimResult {
            x,
            fval: fx,
            iterations: 0,
            evaluations: evals,
            grad_norm: 0.0,
            status: if n == 0 {
                Status::Converged
            } else {
                Status::LineSearchFailed
            },
        };
    }
    let small_grad = |g: &[f64], fx: f64| inf_norm(g) <= 1e-4 * (1.0 + fx.abs());
    for it in 1..=opts.max_iter {
        iterations = it;
        let gv = nalgebra::DVector::from_column_slice(&g);
        let mut p: Vec<f64> = (-(&hinv * &gv)).iter().cloned().collect();
        if dot(&p, &g) >= 0.0 {
            hinv = DMatrix::identity(n, n);
            fresh = true;
            p = g.iter().map(|v| -v).collect();
        }
        let pmax = inf_norm(&p);
        if pmax > MAX_STEP {
            p.iter_mut().for_each(|v| *v *= MAX_STEP / pmax);
        }
        let slope = dot(&p, &g);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            let xn: Vec<f64> = x.iter().zip(&p).map(|(a, b)| a + t * b).collect();
            let fnew = sanitize(f(&xn));
            evals += 1;
            if fnew.is_finite() && fnew <= fx + 1e-4 * t * slope {
                accepted = Some((xn, fnew));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fnew)) = accepted else {
            if !fresh {
                hinv = DMatrix::identity(n, n);
                fresh = true;
                continue;
            }
            status = if small_grad(&g, fx) {
                Status::Converged
            } else {
                Status::LineSearchFailed
            };
            break;
        };
        let gn = grad(&xn, &mut evals);
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        let rel_change = (fx - fnew).abs() / (fx.abs() + opts.rel_tol);
        x = xn;
        g = gn;
        let f_prev = fx;
        fx = fnew;
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            let sv = nalgebra::DVector::from_vec(s);
            let yv = nalgebra::DVector::from_vec(y);
            if fresh {
                hinv *= sy / yv.dot(&yv);
            }
            let rho = 1.0 / sy;
            let hy = &hinv * &yv;
            let yhy = yv.dot(&hy);
            hinv += (&sv * sv.transpose()) * (rho * rho * yhy + rho)
                - (&hy * sv.transpose() + &sv * hy.transpose()) * rho;
            fresh = false;
        }
        if rel_change <= opts.rel_tol && small_grad(&g, fx) {
            status = Status::Converged;
            break;
        }
        if f_prev == fx && small_grad(&g, fx) {
            status = Status::Converged;
            break;
        }
    }
    OptimResult {
        grad_norm: inf_norm(&g),
        x,
        fval: fx,
        iterations,
        evaluations: evals,
        status,
    }
}

/// Minimizes with Nelder–Mead when there are at most two coordinates and with
/// BFGS otherwise. The simplex result is polished by a second, smaller simplex.
pub fn minimize<F: Fn(&[f64]) -> f64>(f: &F, x0: &[f64], opts: &OptimOptions) -> OptimResult {
    if x0.len() <= 2 {
        let first = nelder_mead(f, x0, 0.5, opts);
        let second = nelder_mead(f, &first.x, 0.05, opts);
        let mut best = if second.fval <= first.fval { second } else { first.clone() };
        best.iterations = first.iterations + best.iterations.min(opts.max_iter);
        best.evaluations += first.evaluations;
        if first.converged() {
            best.status = Status::Converged;
        }
        best
    } else {
        bfgs(f, x0, opts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> f64 {
        (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
    }

    #[test]
    fn nelder_mead_rosenbrock() {
        let r = nelder_mead(&rosenbrock, &[-1.2, 1.0], 0.5, &OptimOptions::default());
        assert!(r.converged());
        assert!((r.x[0] - 1.0).abs() < 1e-3 && (r.x[1] - 1.0).abs() < 2e-3, "{:?}", r.x);
    }

    #[test]
    fn bfgs_quadratic_and_rosenbrock() {
        let quad = |x: &[f64]| 10.0 + (x[0] - 3.0).powi(2) + 4.0 * (x[1] + 1.0).powi(2) + x[2].powi(2) + 0.5 * x[0] * x[2];
        let r = bfgs(&quad, &[0.0, 0.0, 0.0], &OptimOptions::default());
        assert!(r.converged());
        // stationary point: 2(x0-3) + 0.5 x2 = 0, 2 x2 + 0.5 x0 = 0
        let x0 = 6.0 / (2.0 - 0.125);
        assert!((r.x[0] - x0).abs() < 1e-4);
        let r = bfgs(&rosenbrock, &[-1.2, 1.0], &OptimOptions::default());
        assert!((r.x[0] - 1.0).abs() < 1e-3, "{r:?}");
    }

    #[test]
    fn bfgs_respects_infeasible_region() {
        // minimum of x - ln x at x = 1; infeasible for x <= 0
        let f = |x: &[f64]| if x[0] <= 0.0 { f64::INFINITY } else { x[0] - x[0].ln() + x[1] * x[1] + x[2].powi(2) };
        let r = bfgs(&f, &[7.0, 1.0, 1.0], &OptimOptions::default());
        assert!((r.x[0] - 1.0).abs() < 1e-4, "{r:?}");
    }

    #[test]
    fn hessian_and_inverse() {
        let f = |x: &[f64]| 2.0 * x[0] * x[0] + x[0] * x[1] + 3.0 * x[1] * x[1];
        let h = numerical_hessian(&f, &[0.3, -0.2], 1e-4);
        assert!((h[(0, 0)] - 4.0).abs() < 1e-6);
        assert!((h[(0, 1)] - 1.0).abs() < 1e-6);
        assert!((h[(1, 1)] - 6.0).abs() < 1e-6);
        let (inv, pd) = invert_information(&h);
        assert!(pd);
        let prod = &h * &inv;
        assert!((prod - DMatrix::identity(2, 2)).abs().max() < 1e-8);
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let (pinv, pd) = invert_information(&singular);
        assert!(!pd);
        assert!((pinv[(0, 0)] - 0.25).abs() < 1e-12);
    }
}
