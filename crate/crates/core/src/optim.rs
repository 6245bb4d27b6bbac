//! Small dense solvers shared by the geometry layers.
//!
//! The main entry point is [`min_energy_sqp`], a quasi-Newton SQP method for
//!
//! ```text
//! minimise ½ Σ w_i x_i²   subject to   E(x) = 0,   E: ℝⁿ → ℝᵐ, m ≪ n,
//! ```
//!
//! which is the shape of every direct-transcription problem in the crate.
//! The Lagrangian Hessian is approximated by damped BFGS, steps are globalised
//! with an ℓ1 merit line search plus a second-order correction, and the
//! constraint Jacobian is taken by forward differences.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct SqpOptions {
    pub max_iter: usize,
    /// Required max-norm of E at termination.
    pub constraint_tol: f64,
    /// Relative tolerance on the Lagrangian gradient.
    pub kkt_tol: f64,
    pub fd_step: f64,
}

impl Default for SqpOptions {
    fn default() -> Self {
        Self { max_iter: 300, constraint_tol: 1e-11, kkt_tol: 1e-7, fd_step: 1e-7 }
    }
}

#[derive(Debug, Clone)]
pub struct SqpResult {
    pub x: Vec<f64>,
    pub objective: f64,
    pub constraint_norm: f64,
    pub kkt_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Forward-difference Jacobian of `e` at `x` (rows = constraints).
pub fn fd_jacobian<F>(e: &F, x: &DVector<f64>, ex: &DVector<f64>, step: f64) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let (n, m) = (x.len(), ex.len());
    let mut jac = DMatrix::zeros(m, n);
    let mut xp = x.clone();
    for j in 0..n {
        let h = step * (1.0 + x[j].abs());
        xp[j] = x[j] + h;
        let ep = e(xp.as_slice());
        for i in 0..m {
            jac[(i, j)] = (ep[i] - ex[i]) / h;
        }
        xp[j] = x[j];
    }
    jac
}

/// Minimum weighted-norm correction δ with J δ = −E.
fn min_norm_correction(jac: &DMatrix<f64>, w_inv: &DVector<f64>, ex: &DVector<f64>) -> Option<DVector<f64>> {
    let jw = DMatrix::from_fn(jac.nrows(), jac.ncols(), |i, j| jac[(i, j)] * w_inv[j]);
    let gram = &jw * jac.transpose();
    let mu = gram.lu().solve(ex)?;
    Some(-(jw.transpose() * mu))
}

/// Quasi-Newton SQP for the weighted minimum-energy problem.
pub fn min_energy_sqp<F>(x0: &[f64], weights: &[f64], e: F, opts: &SqpOptions) -> SqpResult
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let w = DVector::from_column_slice(weights);
    let w_inv = w.map(|v| 1.0 / v);
    let objective = |x: &DVector<f64>| 0.5 * x.iter().zip(w.iter()).map(|(a, b)| b * a * a).sum::<f64>();
    let eval = |x: &DVector<f64>| DVector::from_vec(e(x.as_slice()));

    let mut x = DVector::from_column_slice(x0);
    let mut ex = eval(&x);
    let mut jac = fd_jacobian(&e, &x, &ex, opts.fd_step);

    // Restoration: reach the constraint set first so the merit function
    // starts from a sensible point.
    for _ in 0..20 {
        if inf_norm(&ex) < 1e-3 {
            break;
        }
        match min_norm_correction(&jac, &w_inv, &ex) {
            Some(d) => {
                let mut alpha = 1.0;
                let base = ex.norm();
                loop {
                    let trial = &x + &d * alpha;
                    let et = eval(&trial);
                    if et.norm() < base || alpha < 1e-3 {
                        x = trial;
                        ex = et;
                        break;
                    }
                    alpha *= 0.5;
                }
                jac = fd_jacobian(&e, &x, &ex, opts.fd_step);
            }
            None => break,
        }
    }

    let mut hess = DMatrix::from_diagonal(&w);
    let mut nu: f64 = 1.0;
    let mut kkt = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iter {
        iterations += 1;
        let grad = w.component_mul(&x);
        let chol = match hess.clone().cholesky() {
            Some(c) => c,
            None => {
                hess = DMatrix::from_diagonal(&w);
                hess.clone().cholesky().expect("positive weights")
            }
        };
        let hinv_g = chol.solve(&grad);
        let hinv_jt = chol.solve(&jac.transpose());
        let schur = &jac * &hinv_jt;
        let rhs = &ex - &jac * &hinv_g;
        let mu_new = match schur.lu().solve(&rhs) {
            Some(m) => m,
            None => break,
        };
        let delta = -(hinv_g + &hinv_jt * &mu_new);
        let mu = mu_new;

        let lag_grad = &grad + jac.transpose() * &mu;
        kkt = inf_norm(&lag_grad) / (1.0 + inf_norm(&grad));
        if inf_norm(&ex) < opts.constraint_tol && (kkt < opts.kkt_tol || inf_norm(&delta) < 1e-13) {
            converged = true;
            break;
        }

        nu = nu.max(1.1 * mu.amax() + 1e-8);
        let merit = |xx: &DVector<f64>, ee: &DVector<f64>| objective(xx) + nu * ee.iter().map(|v| v.abs()).sum::<f64>();
        let phi0 = merit(&x, &ex);
        let slope = grad.dot(&delta) - nu * ex.iter().map(|v| v.abs()).sum::<f64>();

        let mut accepted: Option<(DVector<f64>, DVector<f64>)> = None;
        let full = &x + &delta;
        let e_full = eval(&full);
        if merit(&full, &e_full) <= phi0 + 1e-4 * slope {
            accepted = Some((full, e_full));
        } else if let Some(corr) = min_norm_correction(&jac, &w_inv, &e_full) {
            let soc = &full + corr;
            let e_soc = eval(&soc);
            if merit(&soc, &e_soc) <= phi0 + 1e-4 * slope {
                accepted = Some((soc, e_soc));
            }
        }
        if accepted.is_none() {
            let mut alpha = 0.5;
            while alpha > 1e-8 {
                let trial = &x + &delta * alpha;
                let et = eval(&trial);
                if merit(&trial, &et) <= phi0 + 1e-4 * alpha * slope {
                    accepted = Some((trial, et));
                    break;
                }
                alpha *= 0.5;
            }
        }
        let (x_new, e_new) = match accepted {
            Some(v) => v,
            None => {
                // Stalled: treat as converged only if already feasible and flat.
                converged = inf_norm(&ex) < opts.constraint_tol && kkt < 1e3 * opts.kkt_tol;
                break;
            }
        };
        let jac_new = fd_jacobian(&e, &x_new, &e_new, opts.fd_step);

        // Damped BFGS on the Lagrangian Hessian.
        let s = &x_new - &x;
        let y = (w.component_mul(&x_new) + jac_new.transpose() * &mu) - (w.component_mul(&x) + jac.transpose() * &mu);
        let bs = &hess * &s;
        let sbs = s.dot(&bs);
        if sbs > 1e-300 {
            let sy = s.dot(&y);
            let theta = if sy >= 0.2 * sbs { 1.0 } else { 0.8 * sbs / (sbs - sy) };
            let r = &y * theta + &bs * (1.0 - theta);
            let sr = s.dot(&r);
            if sr > 1e-300 {
                hess -= &bs * bs.transpose() / sbs;
                hess += &r * r.transpose() / sr;
            }
        }
        x = x_new;
        ex = e_new;
        jac = jac_new;
        if s.amax() < 1e-14 * (1.0 + x.amax()) && inf_norm(&ex) < opts.constraint_tol {
            converged = true;
            break;
        }
    }

    // Final feasibility polish: the minimum-norm correction moves the energy
    // only to second order.
    for _ in 0..5 {
        if inf_norm(&ex) < 1e-13 {
            break;
        }
        match min_norm_correction(&jac, &w_inv, &ex) {
            Some(d) => {
                let trial = &x + d;
                let et = eval(&trial);
                if et.norm() >= ex.norm() {
                    break;
                }
                x = trial;
                ex = et;
            }
            None => break,
        }
    }
    let constraint_norm = inf_norm(&ex);
    SqpResult {
        objective: objective(&x),
        x: x.as_slice().to_vec(),
        constraint_norm,
        kkt_norm: kkt,
        iterations,
        converged: converged && constraint_norm < opts.constraint_tol.max(1e-10),
    }
}

/// Bisection for a sign change of `f` on [lo, hi].
pub fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, iterations: usize) -> f64 {
    let flo = f(lo);
    for _ in 0..iterations {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if (fm > 0.0) == (flo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projects_onto_hyperplane() {
        // min ½|x|² s.t. x0 + 2 x1 − 3 = 0: answer (3/5, 6/5).
        let r = min_energy_sqp(&[0.0, 0.0], &[1.0, 1.0], |x| vec![x[0] + 2.0 * x[1] - 3.0], &SqpOptions::default());
        assert!(r.converged);
        assert!((r.x[0] - 0.6).abs() < 1e-8 && (r.x[1] - 1.2).abs() < 1e-8);
    }

    #[test]
    fn nonlinear_constraint_circle() {
        // min ½(x² + 4y²) on the circle (x−2)² + y² = 1: answer (1, 0).
        let r = min_energy_sqp(&[2.5, 0.8], &[1.0, 4.0], |x| vec![(x[0] - 2.0).powi(2) + x[1] * x[1] - 1.0], &SqpOptions::default());
        assert!(r.converged, "{r:?}");
        assert!((r.x[0] - 1.0).abs() < 1e-6 && r.x[1].abs() < 1e-6, "{r:?}");
    }

    #[test]
    fn bisect_finds_root() {
        let r = bisect(|x| x * x - 2.0, 0.0, 2.0, 60);
        assert!((r - 2f64.sqrt()).abs() < 1e-12);
    }
}
