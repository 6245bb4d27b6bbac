//! Pansu derivatives as dilation limits δ_h ∘ f ∘ δ_{1/h} in privileged
//! coordinates, fitted by graded homomorphisms (x, y, t) ↦ (A(x, y), τ t).

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifolds::heisenberg::{heisenberg_chart, HeisenbergChart, HeisenbergPoint};
use crate::manifolds::sphere::{exp_horizontal, horizontal_from_frame, SpherePoint};
use crate::map_zoo::MapHandle;

/// h ∈ {10, 10^1.5, 10², 10^2.5, 10³}.
pub const DEFAULT_SCHEDULE: [f64; 5] = [1e1, 31.622776601683793, 1e2, 316.22776601683796, 1e3];
/// Final Cauchy difference required for convergence.
pub const CAUCHY_TOL: f64 = 1e-3;
/// Largest probe deviation from the fitted hom for a certified fit. Branch
/// points have a homogeneous but non-linear limit and fail here.
pub const RESIDUAL_TOL: f64 = 1e-3;
/// Cauchy differences below this are rounding noise and need not decrease.
pub const CAUCHY_FLOOR: f64 = 1e-8;

/// Romberg levels applied to the dilation sequence.
pub const ROMBERG_LEVELS: usize = 2;

fn richardson(a: &HeisenbergPoint, b: &HeisenbergPoint, q: f64) -> HeisenbergPoint {
    let c = |x: f64, y: f64| (q * y - x) / (q - 1.0);
    HeisenbergPoint::new(c(a.x, b.x), c(a.y, b.y), c(a.t, b.t))
}

/// Privileged coordinates at p: the Heisenberg chart based at p.
pub fn privileged_chart(p: &SpherePoint) -> Result<HeisenbergChart> {
    heisenberg_chart(p)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradedHom {
    /// Row-major horizontal matrix.
    pub a: [[f64; 2]; 2],
    pub tau: f64,
    /// Max deviation of the last extrapolated map from the fitted hom on the probes.
    pub residual: f64,
    /// Max deviation from the product law on probe pairs (extrapolated).
    pub product_residual: f64,
    /// Max probe difference between consecutive extrapolated values.
    pub cauchy: Vec<f64>,
    pub schedule: Vec<f64>,
    pub converged: bool,
}

impl GradedHom {
    pub fn matrix(&self) -> Matrix2<f64> {
        Matrix2::new(self.a[0][0], self.a[0][1], self.a[1][0], self.a[1][1])
    }

    pub fn apply(&self, v: &HeisenbergPoint) -> HeisenbergPoint {
        HeisenbergPoint::new(self.a[0][0] * v.x + self.a[0][1] * v.y, self.a[1][0] * v.x + self.a[1][1] * v.y, self.tau * v.t)
    }

    pub fn det(&self) -> f64 {
        self.matrix().determinant()
    }

    /// `self ∘ inner`.
    pub fn compose(&self, inner: &GradedHom) -> GradedHom {
        let m = self.matrix() * inner.matrix();
        GradedHom {
            a: [[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]],
            tau: self.tau * inner.tau,
            residual: self.residual + inner.residual,
            product_residual: self.product_residual + inner.product_residual,
            cauchy: Vec::new(),
            schedule: Vec::new(),
            converged: self.converged && inner.converged,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Contract(e.to_string()))
    }
}

/// 8 unit first-layer points and 4 vertical points.
pub fn probe_set() -> Vec<HeisenbergPoint> {
    let mut v: Vec<HeisenbergPoint> = (0..8)
        .map(|k| {
            let t = std::f64::consts::PI * k as f64 / 4.0;
            HeisenbergPoint::new(t.cos(), t.sin(), 0.0)
        })
        .collect();
    v.extend([1.0, -1.0, 0.5, -0.5].iter().map(|&t| HeisenbergPoint::new(0.0, 0.0, t)));
    v
}

/// Pansu derivative at 0 of a map f: H → H, from δ_h(f(0)⁻¹ · f(δ_{1/h} v)).
pub fn pansu_derivative_heisenberg<F>(f: F, schedule: &[f64]) -> Result<GradedHom>
where
    F: Fn(&HeisenbergPoint) -> Result<HeisenbergPoint>,
{
    if schedule.len() < 3 || schedule.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Contract("h schedule needs at least three increasing values".into()));
    }
    let f0_inv = f(&HeisenbergPoint::IDENTITY)?.inverse();
    let rescaled = |h: f64, v: &HeisenbergPoint| -> Result<HeisenbergPoint> { Ok(f0_inv.mul(&f(&v.dilate(1.0 / h))?).dilate(h)) };
    let probes = probe_set();
    // Probe products u_k · u_{k+3} for the product-law check.
    let pairs: Vec<(usize, usize)> = (0..8).map(|k| (k, (k + 3) % 8)).collect();
    let mut points = probes.clone();
    points.extend(pairs.iter().map(|&(i, j)| probes[i].mul(&probes[j])));
    let raw: Vec<Vec<HeisenbergPoint>> = schedule.iter().map(|&h| points.iter().map(|v| rescaled(h, v)).collect::<Result<Vec<_>>>()).collect::<Result<_>>()?;
    // The rescaled maps expand in integer powers of 1/h. Romberg steps remove
    // the 1/h and 1/h² terms while at least two values remain.
    let mut images = raw;
    let mut hs = schedule.to_vec();
    for order in 1..=ROMBERG_LEVELS as i32 {
        if images.len() < 3 {
            break;
        }
        images = images
            .windows(2)
            .zip(hs.windows(2))
            .map(|(w, h)| {
                let q = (h[1] / h[0]).powi(order);
                w[0].iter().zip(&w[1]).map(|(a, b)| richardson(a, b, q)).collect()
            })
            .collect();
        hs.remove(0);
    }
    let cauchy: Vec<f64> =
        images.windows(2).map(|w| w[0][..probes.len()].iter().zip(&w[1][..probes.len()]).map(|(a, b)| a.dist_euclid(b)).fold(0.0, f64::max)).collect();
    let last = images.last().expect("schedule is nonempty");

    // Least squares for A over the horizontal probes; τ over the vertical ones.
    let (mut vtv, mut wtv) = (Matrix2::<f64>::zeros(), Matrix2::<f64>::zeros());
    let (mut num, mut den) = (0.0, 0.0);
    for (v, w) in probes.iter().zip(last) {
        if v.t == 0.0 {
            vtv += Matrix2::new(v.x * v.x, v.x * v.y, v.y * v.x, v.y * v.y);
            wtv += Matrix2::new(w.x * v.x, w.x * v.y, w.y * v.x, w.y * v.y);
        } else {
            num += w.t * v.t;
            den += v.t * v.t;
        }
    }
    let inv = vtv.try_inverse().ok_or_else(|| Error::Contract("degenerate probe set".into()))?;
    let a = wtv * inv;
    let mut hom = GradedHom {
        a: [[a[(0, 0)], a[(0, 1)]], [a[(1, 0)], a[(1, 1)]]],
        tau: num / den,
        residual: 0.0,
        product_residual: 0.0,
        cauchy: cauchy.clone(),
        schedule: schedule.to_vec(),
        converged: false,
    };
    hom.residual = probes.iter().zip(last).map(|(v, w)| hom.apply(v).dist_euclid(w)).fold(0.0, f64::max);
    let prod = pairs.iter().enumerate().map(|(k, &(i, j))| last[probes.len() + k].dist_euclid(&last[i].mul(&last[j]))).fold(0.0, f64::max);
    hom.product_residual = prod;
    let monotone = cauchy.windows(2).all(|w| w[1] < w[0] || w[1] < CAUCHY_FLOOR);
    let last_cauchy = cauchy.last().copied().unwrap_or(f64::INFINITY);
    hom.converged = monotone && last_cauchy < CAUCHY_TOL && hom.residual < RESIDUAL_TOL;
    Ok(hom)
}

/// Pansu derivative of a sphere map at p, read in the privileged charts at
/// p and m(p). Fails with `NonConvergent` when the Cauchy certificate fails.
pub fn pansu_derivative(m: &MapHandle, p: &SpherePoint, schedule: &[f64]) -> Result<GradedHom> {
    let hom = pansu_derivative_uncertified(m, p, schedule)?;
    if !hom.converged {
        return Err(Error::NonConvergent(format!("Pansu derivative non-convergent at p (Cauchy differences {:?})", hom.cauchy)));
    }
    Ok(hom)
}

/// As [`pansu_derivative`] but returns the fit whatever the certificate says.
pub fn pansu_derivative_uncertified(m: &MapHandle, p: &SpherePoint, schedule: &[f64]) -> Result<GradedHom> {
    let src = privileged_chart(p)?;
    let dst = privileged_chart(&m.eval(p)?)?;
    pansu_derivative_heisenberg(|v| dst.forward(&m.eval(&src.inverse(v))?), schedule)
}

/// Ratio of the extremal singular values of A.
pub fn hom_distortion(hom: &GradedHom) -> Result<f64> {
    let sv = hom.matrix().singular_values();
    let (lo, hi) = (sv.min(), sv.max());
    if !(lo > 1e-12 * hi.max(1.0)) {
        return Err(Error::Domain("graded homomorphism has a singular horizontal part".into()));
    }
    Ok(hi / lo)
}

/// Largest Frobenius difference between the fitted A at p and at four points
/// a horizontal distance `eps` away. Recorded as data only.
pub fn hom_variation(m: &MapHandle, p: &SpherePoint, eps: f64, schedule: &[f64]) -> Result<f64> {
    let base = pansu_derivative_uncertified(m, p, schedule)?.matrix();
    let mut worst = 0.0f64;
    for c in [[eps, 0.0], [-eps, 0.0], [0.0, eps], [0.0, -eps]] {
        let q = exp_horizontal(p, &horizontal_from_frame(p, &c)?);
        worst = worst.max((pansu_derivative_uncertified(m, &q, schedule)?.matrix() - base).norm());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifolds::sphere::horizontal_frame;
    use crate::map_zoo::{horizontal_matrix, multi_twist, pullback_contact_factor, rotation};
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn generic() -> SpherePoint {
        SpherePoint::from_polar(&[0.6, 0.8], &[0.4, -1.2]).unwrap()
    }

    #[test]
    fn isometries_certify_at_the_noise_floor() {
        let p = SpherePoint::from_polar(&[0.6, 0.8], &[0.3, 1.0]).unwrap();
        for m in [multi_twist(1).unwrap(), rotation(vec![0.3, 0.2])] {
            let d = pansu_derivative(&m, &p, &DEFAULT_SCHEDULE).unwrap();
            assert!((hom_distortion(&d).unwrap() - 1.0).abs() < 1e-8 && (d.tau - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn chart_is_privileged() {
        let p = generic();
        let c = privileged_chart(&p).unwrap();
        let o = c.forward(&p).unwrap();
        assert!(o.x.abs() < 1e-15 && o.y.abs() < 1e-15 && o.t.abs() < 1e-15);
        let frame = horizontal_frame(&p);
        let h = 1e-5;
        for (k, e) in frame.iter().enumerate() {
            let at = |s: f64| c.forward(&exp_horizontal(&p, &e.scale(s))).unwrap();
            let (a, b) = (at(h), at(-h));
            let d = [(a.x - b.x) / (2.0 * h), (a.y - b.y) / (2.0 * h), (a.t - b.t) / (2.0 * h)];
            let want = if k == 0 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
            for j in 0..3 {
                assert!((d[j] - want[j]).abs() < 1e-8, "{d:?}");
            }
        }
    }

    #[test]
    fn dilations_are_graded_automorphisms() {
        for u in probe_set() {
            for v in probe_set() {
                let lhs = u.mul(&v).dilate(3.0);
                let rhs = u.dilate(3.0).mul(&v.dilate(3.0));
                assert!(lhs.dist_euclid(&rhs) < 1e-12);
                assert!(u.dilate(2.0).dilate(0.5).dist_euclid(&u) < 1e-15);
            }
        }
    }

    #[test]
    fn dilation_and_translation_derivatives() {
        let r = 1.7;
        let d = pansu_derivative_heisenberg(|v| Ok(v.dilate(r)), &DEFAULT_SCHEDULE).unwrap();
        assert!((d.matrix() - Matrix2::identity() * r).norm() < 1e-12 && (d.tau - r * r).abs() < 1e-12);
        let g = HeisenbergPoint::new(0.3, -1.1, 0.7);
        let l = pansu_derivative_heisenberg(|v| Ok(g.mul(v)), &DEFAULT_SCHEDULE).unwrap();
        assert!((l.matrix() - Matrix2::identity()).norm() < 1e-9 && (l.tau - 1.0).abs() < 1e-9);
    }

    #[test]
    fn twist_derivative_matches_chain_rule_oracle() {
        let f2 = multi_twist(2).unwrap();
        let p = generic();
        let d = pansu_derivative(&f2, &p, &DEFAULT_SCHEDULE).unwrap();
        assert!((d.tau - d.det()).abs() < 1e-3, "{d:?}");
        let (m, _) = horizontal_matrix(&f2, &p).unwrap();
        assert!((d.matrix() - m).norm() < 1e-2, "{d:?} vs {m}");
        let lambda = pullback_contact_factor(&f2, &p).unwrap();
        assert!((d.tau - lambda).abs() < 1e-2);
        assert!(d.product_residual < 1e-3);
    }

    #[test]
    fn twist_hom_distortion_is_at_most_two() {
        let f2 = multi_twist(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut done = 0;
        while done < 100 {
            let p = SpherePoint::new((0..2).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect()).unwrap();
            if p.min_modulus() < 0.1 {
                continue;
            }
            done += 1;
            let d = pansu_derivative(&f2, &p, &DEFAULT_SCHEDULE).unwrap();
            assert!(hom_distortion(&d).unwrap() <= 2.0 * 1.02);
            assert!((d.tau - d.det()).abs() < 1e-3);
        }
    }

    #[test]
    fn chain_rule_for_composites() {
        let (f, g) = (multi_twist(2).unwrap(), rotation(vec![0.3, -0.8]).then(&multi_twist(3).unwrap()));
        let p = generic();
        let fg = f.then(&g);
        let whole = pansu_derivative(&fg, &p, &DEFAULT_SCHEDULE).unwrap();
        let parts = pansu_derivative(&g, &f.eval(&p).unwrap(), &DEFAULT_SCHEDULE).unwrap().compose(&pansu_derivative(&f, &p, &DEFAULT_SCHEDULE).unwrap());
        let tol = 10.0 * (whole.residual + parts.residual) + 1e-9;
        assert!((whole.matrix() - parts.matrix()).norm() < tol && (whole.tau - parts.tau).abs() < tol);
    }

    #[test]
    fn hom_distortion_examples() {
        let mut h = pansu_derivative_heisenberg(|v| Ok(*v), &DEFAULT_SCHEDULE).unwrap();
        assert!((hom_distortion(&h).unwrap() - 1.0).abs() < 1e-12);
        h.a = [[2.0, 0.0], [0.0, 1.0]];
        assert!((hom_distortion(&h).unwrap() - 2.0).abs() < 1e-12);
        h.a = [[1.0, 2.0], [0.5, 1.0]];
        assert!(hom_distortion(&h).is_err());
        assert!(h.to_json().unwrap().contains("\"tau\""));
    }

    #[test]
    fn branch_points_do_not_certify() {
        let f2 = multi_twist(2).unwrap();
        let p = SpherePoint::new(vec![Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)]).unwrap();
        assert!(pansu_derivative(&f2, &p, &DEFAULT_SCHEDULE).is_err());
        let q = generic();
        assert!(hom_variation(&f2, &q, 1e-3, &DEFAULT_SCHEDULE).unwrap() < 0.05);
    }
}
