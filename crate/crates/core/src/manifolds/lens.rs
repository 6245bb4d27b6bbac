//! Lens spaces L_{p,q} = S^{2n+1} / ⟨R_{p,q}⟩ with
//! R_{p,q}(z) = (e^{2πi q_0/p} z_0, …, e^{2πi q_n/p} z_n).

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::cc::{cc_distance, CcOptions, CcReport};
use super::sphere::SpherePoint;
use crate::error::{Error, Result};

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LensSpec {
    p: u32,
    q: Vec<i64>,
}

impl LensSpec {
    pub fn new(p: u32, q: Vec<i64>) -> Result<Self> {
        if p < 2 {
            return Err(Error::Contract(format!("lens order p = {p} must exceed 1")));
        }
        if q.is_empty() {
            return Err(Error::Contract("lens weights q must be nonempty".into()));
        }
        if let Some(bad) = q.iter().find(|&&qi| gcd(qi, p as i64) != 1) {
            return Err(Error::Contract(format!("lens weight {bad} is not coprime to p = {p}")));
        }
        Ok(Self { p, q })
    }

    pub fn p(&self) -> u32 {
        self.p
    }

    pub fn q(&self) -> &[i64] {
        &self.q
    }

    pub fn n(&self) -> usize {
        self.q.len() - 1
    }

    /// Angles of R_{p,q}^k.
    pub fn rotation_angles(&self, k: i64) -> Vec<f64> {
        self.q.iter().map(|&qi| 2.0 * std::f64::consts::PI * ((qi * k).rem_euclid(self.p as i64)) as f64 / self.p as f64).collect()
    }

    /// R_{p,q}^k z.
    pub fn rotate(&self, z: &SpherePoint, k: i64) -> Result<SpherePoint> {
        self.check_dim(z)?;
        let rotated = z.coords().iter().zip(self.rotation_angles(k)).map(|(w, a)| w * Complex64::from_polar(1.0, a)).collect();
        SpherePoint::new(rotated)
    }

    /// All p points of the orbit of z, in order k = 0, …, p−1.
    pub fn orbit(&self, z: &SpherePoint) -> Result<Vec<SpherePoint>> {
        (0..self.p as i64).map(|k| self.rotate(z, k)).collect()
    }

    fn check_dim(&self, z: &SpherePoint) -> Result<()> {
        if z.n() != self.n() {
            return Err(Error::Contract(format!("lens space over S^{} given a point of S^{}", 2 * self.n() + 1, 2 * z.n() + 1)));
        }
        Ok(())
    }
}

/// A lens-space point stored as its canonical orbit representative: the
/// rotation with the lexicographically smallest angle tuple, ties broken by
/// the smallest k.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LensPoint {
    representative: SpherePoint,
    spec: LensSpec,
}

/// Angle comparison granularity for canonicalisation.
const ANGLE_TIE: f64 = 1e-12;

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if (x - y).abs() > ANGLE_TIE {
            return x < y;
        }
    }
    false
}

impl LensPoint {
    pub fn representative(&self) -> &SpherePoint {
        &self.representative
    }

    pub fn spec(&self) -> &LensSpec {
        &self.spec
    }

    /// Whether two lens points are the same orbit.
    pub fn approx_eq(&self, other: &LensPoint, tol: f64) -> bool {
        self.spec == other.spec && self.spec.orbit(&other.representative).map(|o| o.iter().any(|w| w.approx_eq(&self.representative, tol))).unwrap_or(false)
    }
}

/// The quotient map π: S^{2n+1} → L_{p,q}.
pub fn lens_project(z: &SpherePoint, spec: &LensSpec) -> Result<LensPoint> {
    let orbit = spec.orbit(z)?;
    let mut best = orbit[0].clone();
    for w in orbit.into_iter().skip(1) {
        if lex_less(w.angles(), best.angles()) {
            best = w;
        }
    }
    Ok(LensPoint { representative: best, spec: spec.clone() })
}

/// Quotient distance: the minimum over the p rotations of the cc distance
/// between representatives. The pair is put in a fixed order first so the
/// result is exactly symmetric.
pub fn lens_distance(x: &LensPoint, y: &LensPoint, opts: &CcOptions) -> Result<CcReport> {
    if x.spec != y.spec {
        return Err(Error::Contract("lens_distance between different lens spaces".into()));
    }
    let (a, b) = if lex_less(y.representative.angles(), x.representative.angles()) { (y, x) } else { (x, y) };
    let mut best: Option<CcReport> = None;
    for w in a.spec.orbit(&b.representative)? {
        let rep = cc_distance(&a.representative, &w, opts)?;
        if best.as_ref().is_none_or(|b| rep.distance < b.distance) {
            best = Some(rep);
        }
    }
    Ok(best.expect("orbit is nonempty"))
}
