use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on Σ|z_i|² − 1 after construction.
pub const UNIT_NORM_TOL: f64 = 1e-12;
/// Tolerance on Re⟨z, v⟩ for tangent vectors (relative to max(1, ‖v‖)).
pub const TANGENCY_TOL: f64 = 1e-10;
/// Moduli below this count as zero for polar angles and branch-locus tests.
pub const BRANCH_THRESHOLD: f64 = 1e-8;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Hermitian product Σ a_i conj(b_i).
pub fn hermitian(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x * y.conj()).sum()
}

pub fn norm(a: &[Complex64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// Angle in (−π, π]; zero when the modulus is (numerically) zero.
pub fn principal_angle(w: Complex64) -> f64 {
    if w.norm() < BRANCH_THRESHOLD {
        return 0.0;
    }
    let a = w.im.atan2(w.re);
    if a <= -PI {
        a + 2.0 * PI
    } else {
        a
    }
}

/// A point of the unit sphere S^{2n+1} ⊂ C^{n+1} with its polar form.
#[derive(Debug, Clone, PartialEq)]
pub struct SpherePoint {
    z: Vec<Complex64>,
    r: Vec<f64>,
    theta: Vec<f64>,
}

impl SpherePoint {
    /// Normalises `z` onto the sphere. Fails for the zero vector or fewer
    /// than two complex coordinates.
    pub fn new(z: Vec<Complex64>) -> Result<Self> {
        if z.len() < 2 {
            return Err(Error::Contract(format!("sphere points need at least 2 complex coordinates, got {}", z.len())));
        }
        let nrm = norm(&z);
        if !nrm.is_finite() || nrm < 1e-300 {
            return Err(Error::Contract("cannot normalise a zero or non-finite vector".into()));
        }
        let z: Vec<Complex64> = z.into_iter().map(|w| w / nrm).collect();
        let sq: f64 = z.iter().map(|w| w.norm_sqr()).sum();
        debug_assert!((sq - 1.0).abs() <= UNIT_NORM_TOL, "unit norm violated: {sq}");
        let r = z.iter().map(|w| w.norm()).collect();
        let theta = z.iter().map(|w| principal_angle(*w)).collect();
        Ok(Self { z, r, theta })
    }

    /// Builds `(r_i e^{iθ_i})`, renormalising the moduli.
    pub fn from_polar(r: &[f64], theta: &[f64]) -> Result<Self> {
        if r.len() != theta.len() {
            return Err(Error::Contract("polar moduli and angles differ in length".into()));
        }
        Self::new(r.iter().zip(theta).map(|(&m, &a)| Complex64::from_polar(m, a)).collect())
    }

    /// Real layout (x_1, y_1, x_2, y_2, ...).
    pub fn from_real(v: &[f64]) -> Result<Self> {
        if !v.len().is_multiple_of(2) {
            return Err(Error::Contract("real layout needs an even length".into()));
        }
        Self::new(v.chunks(2).map(|c| Complex64::new(c[0], c[1])).collect())
    }

    /// The pole (1, 0, ..., 0) of S^{2n+1}.
    pub fn pole(n: usize) -> Self {
        let mut z = vec![Complex64::new(0.0, 0.0); n + 1];
        z[0] = Complex64::new(1.0, 0.0);
        Self::new(z).expect("pole is a unit vector")
    }

    pub fn coords(&self) -> &[Complex64] {
        &self.z
    }

    /// n for S^{2n+1}.
    pub fn n(&self) -> usize {
        self.z.len() - 1
    }

    pub fn moduli(&self) -> &[f64] {
        &self.r
    }

    pub fn angles(&self) -> &[f64] {
        &self.theta
    }

    pub fn to_real(&self) -> Vec<f64> {
        self.z.iter().flat_map(|w| [w.re, w.im]).collect()
    }

    pub fn min_modulus(&self) -> f64 {
        self.r.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// On the set {some z_i = 0} up to [`BRANCH_THRESHOLD`].
    pub fn on_branch_locus(&self) -> bool {
        self.min_modulus() < BRANCH_THRESHOLD
    }

    pub fn ensure_off_branch_locus(&self) -> Result<()> {
        if self.on_branch_locus() {
            Err(Error::BranchLocus { min_modulus: self.min_modulus() })
        } else {
            Ok(())
        }
    }

    /// Euclidean distance in C^{n+1}.
    pub fn chordal(&self, other: &SpherePoint) -> f64 {
        self.z.iter().zip(&other.z).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn approx_eq(&self, other: &SpherePoint, tol: f64) -> bool {
        self.z.len() == other.z.len() && self.chordal(other) <= tol
    }

    /// Korányi gauge |1 − ⟨z, w⟩|^{1/2}: a unitarily invariant metric on the
    /// sphere, bi-Lipschitz equivalent to the Carnot–Carathéodory distance.
    pub fn gauge(&self, other: &SpherePoint) -> f64 {
        // 1 − ⟨z, w⟩ = −⟨z − w, w⟩ with real part −|z − w|²/2, which avoids
        // cancellation for nearby points.
        let diff: Vec<Complex64> = self.z.iter().zip(&other.z).map(|(a, b)| a - b).collect();
        let re = 0.5 * diff.iter().map(|d| d.norm_sqr()).sum::<f64>();
        let im = hermitian(&diff, &other.z).im;
        re.hypot(im).sqrt()
    }

    pub fn dot(&self, other: &SpherePoint) -> Complex64 {
        hermitian(&self.z, &other.z)
    }
}

impl Serialize for SpherePoint {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr {
            re: Vec<f64>,
            im: Vec<f64>,
        }
        Repr { re: self.z.iter().map(|w| w.re).collect(), im: self.z.iter().map(|w| w.im).collect() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for SpherePoint {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Repr {
            re: Vec<f64>,
            im: Vec<f64>,
        }
        let r = Repr::deserialize(d)?;
        if r.re.len() != r.im.len() {
            return Err(serde::de::Error::custom("re and im lengths differ"));
        }
        SpherePoint::new(r.re.iter().zip(&r.im).map(|(&a, &b)| Complex64::new(a, b)).collect()).map_err(serde::de::Error::custom)
    }
}

/// A tangent vector to the sphere, stored as a complex vector of C^{n+1}
/// (real layout (v_{x_1}, v_{y_1}, ...)).
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    base: SpherePoint,
    v: Vec<Complex64>,
}

impl TangentVector {
    pub fn new(base: &SpherePoint, v: Vec<Complex64>) -> Result<Self> {
        if v.len() != base.z.len() {
            return Err(Error::Contract("tangent vector dimension mismatch".into()));
        }
        let radial = hermitian(base.coords(), &v).re;
        if radial.abs() > TANGENCY_TOL * norm(&v).max(1.0) {
            return Err(Error::Contract(format!("vector is not tangent: Re<z,v> = {radial:e}")));
        }
        Ok(Self { base: base.clone(), v })
    }

    /// Removes the radial component of an ambient vector.
    pub fn project(base: &SpherePoint, mut v: Vec<Complex64>) -> Result<Self> {
        if v.len() != base.z.len() {
            return Err(Error::Contract("tangent vector dimension mismatch".into()));
        }
        let radial = hermitian(base.coords(), &v).re;
        for (w, z) in v.iter_mut().zip(base.coords()) {
            *w -= z * radial;
        }
        Ok(Self { base: base.clone(), v })
    }

    pub fn from_real(base: &SpherePoint, v: &[f64]) -> Result<Self> {
        if !v.len().is_multiple_of(2) {
            return Err(Error::Contract("real layout needs an even length".into()));
        }
        Self::new(base, v.chunks(2).map(|c| Complex64::new(c[0], c[1])).collect())
    }

    pub fn zero(base: &SpherePoint) -> Self {
        Self { base: base.clone(), v: vec![Complex64::new(0.0, 0.0); base.z.len()] }
    }

    pub fn base(&self) -> &SpherePoint {
        &self.base
    }

    pub fn components(&self) -> &[Complex64] {
        &self.v
    }

    pub fn to_real(&self) -> Vec<f64> {
        self.v.iter().flat_map(|w| [w.re, w.im]).collect()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.v)
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { base: self.base.clone(), v: self.v.iter().map(|w| w * s).collect() }
    }

    pub fn add(&self, other: &TangentVector) -> Result<Self> {
        check_same_base(&self.base, &other.base)?;
        Ok(Self { base: self.base.clone(), v: self.v.iter().zip(&other.v).map(|(a, b)| a + b).collect() })
    }

    pub(crate) fn from_parts_unchecked(base: SpherePoint, v: Vec<Complex64>) -> Self {
        Self { base, v }
    }
}

pub(crate) fn check_same_base(a: &SpherePoint, b: &SpherePoint) -> Result<()> {
    if a.z.len() != b.z.len() || a.chordal(b) > 1e-12 {
        return Err(Error::Contract("tangent vector is based at a different point".into()));
    }
    Ok(())
}

/// A tangent vector in ker α together with its certified contact residual
/// |α(v)| / max(‖v‖, tiny).
#[derive(Debug, Clone, PartialEq)]
pub struct HorizontalVector {
    inner: TangentVector,
    residual: f64,
}

/// Relative contact residual accepted for horizontal vectors.
pub const HORIZONTAL_TOL: f64 = 1e-9;

impl HorizontalVector {
    /// Certifies `v` as horizontal with the default tolerance.
    pub fn new(v: TangentVector) -> Result<Self> {
        Self::with_tolerance(v, HORIZONTAL_TOL)
    }

    pub fn with_tolerance(v: TangentVector, tol: f64) -> Result<Self> {
        let a = contact_form_raw(v.base.coords(), &v.v);
        let nrm = v.norm();
        let residual = if nrm > 0.0 { a.abs() / nrm } else { 0.0 };
        if a.abs() > tol * nrm {
            return Err(Error::Contract(format!("vector is not horizontal: |alpha(v)|/|v| = {residual:e}")));
        }
        Ok(Self { inner: v, residual })
    }

    pub fn tangent(&self) -> &TangentVector {
        &self.inner
    }

    pub fn base(&self) -> &SpherePoint {
        &self.inner.base
    }

    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn norm(&self) -> f64 {
        self.inner.norm()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { inner: self.inner.scale(s), residual: self.residual }
    }
}

/// α_z(v) = (i/2) Σ (z_i dz̄_i − z̄_i dz_i)(v) = Im Σ z̄_i v_i.
pub(crate) fn contact_form_raw(z: &[Complex64], v: &[Complex64]) -> f64 {
    z.iter().zip(v).map(|(a, b)| (a.conj() * b).im).sum()
}

/// Evaluates the standard contact form of S^{2n+1} at `p` on `v`.
pub fn contact_form(p: &SpherePoint, v: &TangentVector) -> Result<f64> {
    check_same_base(p, &v.base)?;
    Ok(contact_form_raw(p.coords(), &v.v))
}

/// The Reeb field T_p = i·z (the velocity of the circle action e^{is} z),
/// normalised so that α(T) = 1; its flow has period 2π.
pub fn reeb(p: &SpherePoint) -> TangentVector {
    TangentVector::from_parts_unchecked(p.clone(), p.coords().iter().map(|w| I * w).collect())
}

/// v − α(v)·T: projection onto the horizontal plane along the Reeb field.
pub fn horizontal_project(p: &SpherePoint, v: &TangentVector) -> Result<HorizontalVector> {
    check_same_base(p, &v.base)?;
    let a = contact_form_raw(p.coords(), &v.v);
    let w: Vec<Complex64> = v.v.iter().zip(p.coords()).map(|(x, z)| x - I * z * a).collect();
    let t = TangentVector::from_parts_unchecked(p.clone(), w);
    let nrm = t.norm();
    let residual = if nrm > 0.0 { contact_form_raw(p.coords(), &t.v).abs() / nrm } else { 0.0 };
    Ok(HorizontalVector { inner: t, residual })
}

/// Sub-Riemannian inner product: the Euclidean product of C^{n+1} restricted
/// to the horizontal bundle.
pub fn sr_inner(p: &SpherePoint, u: &HorizontalVector, w: &HorizontalVector) -> Result<f64> {
    check_same_base(p, u.base())?;
    check_same_base(p, w.base())?;
    Ok(hermitian(&w.inner.v, &u.inner.v).re)
}

/// X(z) = (−z̄₂, z̄₁) on S³; together with Y = i·X it is an orthonormal frame
/// of the horizontal plane, and dα(X, Y) has the same sign at every point.
pub(crate) fn frame_x(z: &[Complex64]) -> [Complex64; 2] {
    [-z[1].conj(), z[0].conj()]
}

/// Orthonormal horizontal frame at `p` (real basis e_1, i e_1, e_2, i e_2, ...).
/// For S³ this is (X, iX) with X(z) = (−z̄₂, z̄₁).
pub fn horizontal_frame(p: &SpherePoint) -> Vec<HorizontalVector> {
    let z = p.coords();
    let complex_basis: Vec<Vec<Complex64>> = if z.len() == 2 {
        vec![frame_x(z).to_vec()]
    } else {
        // Gram–Schmidt of the standard basis against z and each other.
        let m = z.len();
        let mut basis: Vec<Vec<Complex64>> = Vec::new();
        for k in 0..m {
            let mut e = vec![Complex64::new(0.0, 0.0); m];
            e[k] = Complex64::new(1.0, 0.0);
            let c = hermitian(&e, z);
            for (x, zz) in e.iter_mut().zip(z) {
                *x -= c * zz;
            }
            for b in &basis {
                let c = hermitian(&e, b);
                for (x, bb) in e.iter_mut().zip(b) {
                    *x -= c * bb;
                }
            }
            let nrm = norm(&e);
            if nrm > 1e-6 {
                basis.push(e.into_iter().map(|x| x / nrm).collect());
            }
            if basis.len() == m - 1 {
                break;
            }
        }
        basis
    };
    complex_basis
        .into_iter()
        .flat_map(|e| {
            let ie: Vec<Complex64> = e.iter().map(|x| I * x).collect();
            [e, ie]
        })
        .map(|v| HorizontalVector { inner: TangentVector::from_parts_unchecked(p.clone(), v), residual: 0.0 })
        .collect()
}

/// Horizontal vector at `p` with coordinates `c` in [`horizontal_frame`].
pub fn horizontal_from_frame(p: &SpherePoint, c: &[f64]) -> Result<HorizontalVector> {
    let frame = horizontal_frame(p);
    if c.len() != frame.len() {
        return Err(Error::Contract(format!("expected {} frame coordinates, got {}", frame.len(), c.len())));
    }
    let mut v = vec![Complex64::new(0.0, 0.0); p.coords().len()];
    for (coef, e) in c.iter().zip(&frame) {
        for (x, y) in v.iter_mut().zip(e.tangent().components()) {
            *x += y * coef;
        }
    }
    Ok(HorizontalVector { inner: TangentVector::from_parts_unchecked(p.clone(), v), residual: 0.0 })
}

/// Frame coordinates of a horizontal vector.
pub fn frame_coordinates(v: &HorizontalVector) -> Vec<f64> {
    horizontal_frame(v.base()).iter().map(|e| hermitian(v.tangent().components(), e.tangent().components()).re).collect()
}

/// The point reached along the horizontal great circle through `p` with unit
/// direction `v/‖v‖` after arc length ‖v‖.
pub fn exp_horizontal(p: &SpherePoint, v: &HorizontalVector) -> SpherePoint {
    let s = v.norm();
    if s == 0.0 {
        return p.clone();
    }
    let (sn, cs) = s.sin_cos();
    let z: Vec<Complex64> = p.coords().iter().zip(v.tangent().components()).map(|(a, b)| a * cs + b * (sn / s)).collect();
    SpherePoint::new(z).expect("great circle stays on the sphere")
}

/// Unitary matrix (row-major, 2×2) carrying `b` on S³ to the pole (1, 0);
/// it sends X(b) to (0, 1).
pub(crate) fn unitary_to_pole(b: &[Complex64]) -> [[Complex64; 2]; 2] {
    [[b[0].conj(), b[1].conj()], [-b[1], b[0]]]
}

pub(crate) fn apply2(u: &[[Complex64; 2]; 2], z: &[Complex64]) -> [Complex64; 2] {
    [u[0][0] * z[0] + u[0][1] * z[1], u[1][0] * z[0] + u[1][1] * z[1]]
}

pub(crate) fn adjoint2(u: &[[Complex64; 2]; 2]) -> [[Complex64; 2]; 2] {
    [[u[0][0].conj(), u[1][0].conj()], [u[0][1].conj(), u[1][1].conj()]]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn construction_normalises_and_polar_roundtrips() {
        let p = SpherePoint::new(vec![c(3.0, 1.0), c(-2.0, 0.5)]).unwrap();
        let sq: f64 = p.coords().iter().map(|w| w.norm_sqr()).sum();
        assert!((sq - 1.0).abs() < UNIT_NORM_TOL);
        let q = SpherePoint::from_polar(p.moduli(), p.angles()).unwrap();
        assert!(p.approx_eq(&q, 1e-12));
    }

    #[test]
    fn angle_convention() {
        assert_eq!(principal_angle(c(-1.0, -0.0)), PI);
        assert_eq!(principal_angle(c(0.0, 0.0)), 0.0);
        let p = SpherePoint::new(vec![c(1.0, 0.0), c(0.0, 0.0)]).unwrap();
        assert_eq!(p.angles()[1], 0.0);
        assert!(p.on_branch_locus());
    }

    #[test]
    fn zero_vector_rejected() {
        assert!(SpherePoint::new(vec![c(0.0, 0.0), c(0.0, 0.0)]).is_err());
        assert!(SpherePoint::new(vec![c(1.0, 0.0)]).is_err());
    }

    #[test]
    fn contact_form_at_pole_on_fiber_direction() {
        let p = SpherePoint::pole(1);
        let v = TangentVector::from_real(&p, &[0.0, 1.0, 0.0, 0.0]).unwrap();
        assert!((contact_form(&p, &v).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn reeb_normalisation() {
        let s = 0.5f64.sqrt();
        let p = SpherePoint::new(vec![c(s, 0.0), c(s, 0.0)]).unwrap();
        let t = reeb(&p);
        assert!((contact_form(&p, &t).unwrap() - 1.0).abs() < 1e-12);
        assert!(hermitian(p.coords(), t.components()).re.abs() < 1e-12);
        let pole = SpherePoint::pole(1);
        assert_eq!(reeb(&pole).to_real(), vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn projection_kernel_and_idempotence() {
        let p = SpherePoint::new(vec![c(0.3, 0.4), c(-0.2, 0.8)]).unwrap();
        let h = horizontal_project(&p, &reeb(&p)).unwrap();
        assert!(h.norm() < 1e-14);
        let e = &horizontal_frame(&p)[0];
        let again = horizontal_project(&p, e.tangent()).unwrap();
        assert!(TangentVector::project(&p, again.tangent().components().to_vec()).unwrap().norm() > 0.99);
        for (a, b) in again.tangent().components().iter().zip(e.tangent().components()) {
            assert!((a - b).norm() < 1e-15);
        }
    }

    #[test]
    fn mismatched_base_is_a_contract_violation() {
        let p = SpherePoint::pole(1);
        let q = SpherePoint::new(vec![c(0.0, 0.0), c(1.0, 0.0)]).unwrap();
        let v = reeb(&q);
        assert!(matches!(contact_form(&p, &v), Err(Error::Contract(_))));
    }

    #[test]
    fn frame_is_orthonormal_and_horizontal_general_n() {
        for n in 1..4 {
            let z: Vec<Complex64> = (0..=n).map(|k| c(0.3 + k as f64, 0.7 - 0.2 * k as f64)).collect();
            let p = SpherePoint::new(z).unwrap();
            let f = horizontal_frame(&p);
            assert_eq!(f.len(), 2 * n);
            for (i, a) in f.iter().enumerate() {
                assert!(contact_form(&p, a.tangent()).unwrap().abs() < 1e-12);
                for (j, b) in f.iter().enumerate() {
                    let g = sr_inner(&p, a, b).unwrap();
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((g - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn unitary_to_pole_maps_frame() {
        let p = SpherePoint::new(vec![c(0.3, 0.4), c(-0.2, 0.8)]).unwrap();
        let u = unitary_to_pole(p.coords());
        let w = apply2(&u, p.coords());
        assert!((w[0] - c(1.0, 0.0)).norm() < 1e-14 && w[1].norm() < 1e-14);
        let x = apply2(&u, &frame_x(p.coords()));
        assert!(x[0].norm() < 1e-14 && (x[1] - c(1.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn gauge_is_zero_on_diagonal_and_symmetric() {
        let p = SpherePoint::new(vec![c(0.3, 0.4), c(-0.2, 0.8)]).unwrap();
        let q = SpherePoint::new(vec![c(0.1, -0.4), c(0.5, 0.2)]).unwrap();
        assert!(p.gauge(&p) < 1e-8);
        assert!((p.gauge(&q) - q.gauge(&p)).abs() < 1e-14);
    }
}
