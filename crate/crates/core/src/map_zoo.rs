//! Closed-form self-maps of S^{2n+1} and lens spaces, with pushforwards.
//!
//! Every map is a [`MapHandle`]: a cheap-to-clone, thread-safe evaluator with
//! an optional closed-form pushforward. Composites apply their parts in
//! pipeline order (`parts[0]` first).

use std::fmt;
use std::sync::Arc;

use nalgebra::Matrix2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifolds::lens::{lens_project, LensSpec};
use crate::manifolds::sphere::{
    contact_form_raw, frame_coordinates, hermitian, horizontal_frame, horizontal_project, HorizontalVector, SpherePoint, TangentVector,
};

/// Map families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MapKind {
    MultiTwist,
    Rotation,
    Unitary,
    Loxodromic,
    Inversion,
    Antipodal,
    LensInduced,
    FlowDefined,
    Composite,
}

/// JSON-friendly description of a closed-form map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MapDescriptor {
    MultiTwist {
        a: i64,
    },
    Rotation {
        angles: Vec<f64>,
    },
    Loxodromic {
        d: f64,
    },
    Inversion {
        center: SpherePoint,
        radius: f64,
    },
    Antipodal,
    /// π ∘ F_a on the lens space L_{p,q}.
    LensMultiTwist {
        a: i64,
        p: u32,
        q: Vec<i64>,
    },
    Composite {
        parts: Vec<MapDescriptor>,
    },
}

impl MapDescriptor {
    pub fn build(&self) -> Result<MapHandle> {
        match self {
            MapDescriptor::MultiTwist { a } => multi_twist(*a),
            MapDescriptor::Rotation { angles } => Ok(rotation(angles.clone())),
            MapDescriptor::Loxodromic { d } => Ok(loxodromic(*d)),
            MapDescriptor::Inversion { center, radius } => Ok(inversion(center, *radius)?.handle),
            MapDescriptor::Antipodal => Ok(antipodal()),
            MapDescriptor::LensMultiTwist { a, p, q } => Ok(lens_multi_twist(*a, &LensSpec::new(*p, q.clone())?)?.projected),
            MapDescriptor::Composite { parts } => Ok(MapHandle::composite(parts.iter().map(|d| d.build()).collect::<Result<Vec<_>>>()?)),
        }
    }
}

pub type EvalFn = dyn Fn(&SpherePoint) -> Result<SpherePoint> + Send + Sync;
/// Ambient pushforward; `Ok(None)` asks for finite differences at this point.
pub type PushFn = dyn Fn(&SpherePoint, &[Complex64]) -> Result<Option<Vec<Complex64>>> + Send + Sync;

#[derive(Clone)]
enum Imp {
    MultiTwist(i64),
    Rotation(Vec<f64>),
    /// Row-major unitary matrix.
    Unitary(Vec<Vec<Complex64>>),
    Loxodromic(f64),
    Antipodal,
    /// Canonical lens representative; a local isometry, piecewise a rotation.
    LensProjection(LensSpec),
    Custom {
        eval: Arc<EvalFn>,
        push: Option<Arc<PushFn>>,
    },
    Composite(Vec<MapHandle>),
}

/// A self-map of the sphere (lens maps act on canonical representatives).
#[derive(Clone)]
pub struct MapHandle {
    kind: MapKind,
    name: String,
    imp: Imp,
    descriptor: Option<MapDescriptor>,
}

impl fmt::Debug for MapHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MapHandle({:?}, {})", self.kind, self.name)
    }
}

/// Central-difference step for pushforwards without a closed form.
pub const FD_STEP: f64 = 1e-6;
/// Horizontality required of a pushed-forward horizontal vector.
pub const PUSH_HORIZONTAL_TOL: f64 = 1e-7;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn matvec(u: &[Vec<Complex64>], z: &[Complex64]) -> Vec<Complex64> {
    u.iter().map(|row| row.iter().zip(z).map(|(a, b)| a * b).sum()).collect()
}

fn adjoint(u: &[Vec<Complex64>]) -> Vec<Vec<Complex64>> {
    let m = u.len();
    (0..m).map(|i| (0..m).map(|j| u[j][i].conj()).collect()).collect()
}

/// A unitary (Householder reflection followed by a phase) with U z = e₁.
pub fn unitary_to_e1(z: &SpherePoint) -> Vec<Vec<Complex64>> {
    let z = z.coords();
    let m = z.len();
    let phase = if z[0].norm() > 0.0 { z[0] / z[0].norm() } else { c(1.0, 0.0) };
    let mut v: Vec<Complex64> = z.to_vec();
    v[0] -= phase;
    let vv: f64 = v.iter().map(|x| x.norm_sqr()).sum();
    let mut h: Vec<Vec<Complex64>> = (0..m).map(|i| (0..m).map(|j| if i == j { c(1.0, 0.0) } else { c(0.0, 0.0) }).collect()).collect();
    if vv > 1e-30 {
        for i in 0..m {
            for j in 0..m {
                h[i][j] -= v[i] * v[j].conj() * (2.0 / vv);
            }
        }
    }
    // H z = phase·e₁, so conj(phase)·H sends z to e₁.
    h.iter().map(|row| row.iter().map(|x| x * phase.conj()).collect()).collect()
}

impl MapHandle {
    pub fn kind(&self) -> MapKind {
        self.kind
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn descriptor(&self) -> Option<&MapDescriptor> {
        self.descriptor.as_ref()
    }

    /// A flow-defined or otherwise custom map.
    pub fn custom(name: impl Into<String>, kind: MapKind, eval: Arc<EvalFn>, push: Option<Arc<PushFn>>) -> MapHandle {
        MapHandle { kind, name: name.into(), imp: Imp::Custom { eval, push }, descriptor: None }
    }

    /// Pipeline composite: `parts[0]` is applied first.
    pub fn composite(parts: Vec<MapHandle>) -> MapHandle {
        let name = parts.iter().map(|p| p.name.clone()).collect::<Vec<_>>().join(" ; ");
        let descriptor = parts.iter().map(|p| p.descriptor.clone()).collect::<Option<Vec<_>>>().map(|parts| MapDescriptor::Composite { parts });
        MapHandle { kind: MapKind::Composite, name, imp: Imp::Composite(parts), descriptor }
    }

    /// `self` followed by `next`.
    pub fn then(&self, next: &MapHandle) -> MapHandle {
        MapHandle::composite(vec![self.clone(), next.clone()])
    }

    pub fn eval(&self, p: &SpherePoint) -> Result<SpherePoint> {
        match &self.imp {
            Imp::MultiTwist(a) => {
                let theta: Vec<f64> = p.angles().iter().map(|t| t * *a as f64).collect();
                SpherePoint::from_polar(p.moduli(), &theta)
            }
            Imp::Rotation(angles) => {
                check_len(p, angles.len())?;
                SpherePoint::new(p.coords().iter().zip(angles).map(|(z, a)| z * Complex64::from_polar(1.0, *a)).collect())
            }
            Imp::Unitary(u) => {
                check_len(p, u.len())?;
                SpherePoint::new(matvec(u, p.coords()))
            }
            Imp::Loxodromic(d) => {
                let z = p.coords();
                let (ch, sh) = (d.cosh(), d.sinh());
                let den = z[0] * sh + ch;
                if den.norm() < 1e-300 {
                    return Err(Error::Domain("loxodromic evaluated at its pole".into()));
                }
                let mut w: Vec<Complex64> = z.iter().map(|x| x / den).collect();
                w[0] = (z[0] * ch + sh) / den;
                SpherePoint::new(w)
            }
            Imp::Antipodal => SpherePoint::new(p.coords().iter().map(|z| -z).collect()),
            Imp::LensProjection(spec) => Ok(lens_project(p, spec)?.representative().clone()),
            Imp::Custom { eval, .. } => eval(p),
            Imp::Composite(parts) => {
                let mut q = p.clone();
                for part in parts {
                    q = part.eval(&q)?;
                }
                Ok(q)
            }
        }
    }

    /// Whether the closed-form pushforward (or a finite-difference stencil)
    /// is valid at `p`.
    pub fn in_smooth_domain(&self, p: &SpherePoint) -> bool {
        match &self.imp {
            Imp::MultiTwist(a) => *a == 1 || !p.on_branch_locus(),
            Imp::Composite(parts) => {
                let mut q = p.clone();
                for part in parts {
                    if !part.in_smooth_domain(&q) {
                        return false;
                    }
                    q = match part.eval(&q) {
                        Ok(q) => q,
                        Err(_) => return false,
                    };
                }
                true
            }
            _ => true,
        }
    }

    /// Ambient pushforward of a tangent vector given as complex components.
    pub fn push_raw(&self, p: &SpherePoint, v: &[Complex64]) -> Result<Vec<Complex64>> {
        match &self.imp {
            Imp::MultiTwist(a) => {
                if *a != 1 {
                    p.ensure_off_branch_locus()?;
                }
                let a = *a as f64;
                Ok(p.angles()
                    .iter()
                    .zip(v)
                    .map(|(t, vj)| {
                        let u = vj * Complex64::from_polar(1.0, -t);
                        c(u.re, a * u.im) * Complex64::from_polar(1.0, a * t)
                    })
                    .collect())
            }
            Imp::Rotation(angles) => Ok(v.iter().zip(angles).map(|(x, a)| x * Complex64::from_polar(1.0, *a)).collect()),
            Imp::Unitary(u) => Ok(matvec(u, v)),
            Imp::Loxodromic(d) => {
                let z = p.coords();
                let (ch, sh) = (d.cosh(), d.sinh());
                let den = z[0] * sh + ch;
                let den2 = den * den;
                let mut w: Vec<Complex64> = z.iter().zip(v).map(|(zk, vk)| vk / den - zk * sh * v[0] / den2).collect();
                w[0] = v[0] / den2;
                Ok(w)
            }
            Imp::Antipodal => Ok(v.iter().map(|x| -x).collect()),
            Imp::LensProjection(spec) => {
                // The representative is R^k p for the k that lens_project picks.
                let target = self.eval(p)?;
                for k in 0..spec.p() as i64 {
                    if spec.rotate(p, k)?.approx_eq(&target, 1e-12) {
                        let angles = spec.rotation_angles(k);
                        return Ok(v.iter().zip(angles).map(|(x, a)| x * Complex64::from_polar(1.0, a)).collect());
                    }
                }
                Err(Error::Domain("lens representative not found in orbit".into()))
            }
            Imp::Custom { push, .. } => {
                if let Some(push) = push {
                    if let Some(w) = push(p, v)? {
                        return Ok(w);
                    }
                }
                self.push_fd(p, v)
            }
            Imp::Composite(parts) => {
                let mut q = p.clone();
                let mut w = v.to_vec();
                for part in parts {
                    w = part.push_raw(&q, &w)?;
                    q = part.eval(&q)?;
                }
                Ok(w)
            }
        }
    }

    /// m(p) and the ambient pushforwards of several vectors at p, evaluating
    /// every part of a composite once.
    pub fn push_frame(&self, p: &SpherePoint, vs: &[Vec<Complex64>]) -> Result<(SpherePoint, Vec<Vec<Complex64>>)> {
        match &self.imp {
            Imp::Composite(parts) => {
                let mut q = p.clone();
                let mut ws = vs.to_vec();
                for part in parts {
                    (q, ws) = part.push_frame(&q, &ws)?;
                }
                Ok((q, ws))
            }
            _ => {
                if !self.in_smooth_domain(p) {
                    return Err(Error::BranchLocus { min_modulus: p.min_modulus() });
                }
                let ws = vs.iter().map(|v| self.push_raw(p, v)).collect::<Result<_>>()?;
                Ok((self.eval(p)?, ws))
            }
        }
    }

    /// Central differences along the great circle in direction v, with one
    /// Richardson step.
    pub fn push_fd(&self, p: &SpherePoint, v: &[Complex64]) -> Result<Vec<Complex64>> {
        let nv: f64 = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        if nv == 0.0 {
            return Ok(vec![c(0.0, 0.0); v.len()]);
        }
        let along = |s: f64| -> Result<Vec<Complex64>> {
            let z: Vec<Complex64> = p.coords().iter().zip(v).map(|(a, b)| a * (s * nv).cos() + b * ((s * nv).sin() / nv)).collect();
            Ok(self.eval(&SpherePoint::new(z)?)?.coords().to_vec())
        };
        let central = |h: f64| -> Result<Vec<Complex64>> {
            let (plus, minus) = (along(h)?, along(-h)?);
            Ok(plus.iter().zip(&minus).map(|(a, b)| (a - b) / (2.0 * h)).collect())
        };
        let h = FD_STEP / nv.max(1e-300) * nv.clamp(1e-3, 1.0);
        let (d1, d2) = (central(h)?, central(0.5 * h)?);
        Ok(d1.iter().zip(&d2).map(|(a, b)| (b * 4.0 - a) / 3.0).collect())
    }

    /// Pushforward of a tangent vector (projected to the tangent space of the
    /// image point to remove rounding).
    pub fn pushforward_tangent(&self, p: &SpherePoint, v: &TangentVector) -> Result<TangentVector> {
        let q = self.eval(p)?;
        TangentVector::project(&q, self.push_raw(p, v.components())?)
    }
}

fn check_len(p: &SpherePoint, len: usize) -> Result<()> {
    if p.coords().len() != len {
        return Err(Error::Contract(format!("map of C^{len} applied to a point of C^{}", p.coords().len())));
    }
    Ok(())
}

/// F_a(r e^{iθ}) = (r_j e^{i a θ_j}).
pub fn multi_twist(a: i64) -> Result<MapHandle> {
    if a == 0 {
        return Err(Error::Contract("multi-twist needs a ≠ 0".into()));
    }
    Ok(MapHandle { kind: MapKind::MultiTwist, name: format!("F_{a}"), imp: Imp::MultiTwist(a), descriptor: Some(MapDescriptor::MultiTwist { a }) })
}

/// R_θ(z) = (e^{iθ_j} z_j).
pub fn rotation(angles: Vec<f64>) -> MapHandle {
    MapHandle {
        kind: MapKind::Rotation,
        name: format!("R{angles:?}"),
        descriptor: Some(MapDescriptor::Rotation { angles: angles.clone() }),
        imp: Imp::Rotation(angles),
    }
}

pub fn unitary(u: Vec<Vec<Complex64>>) -> MapHandle {
    MapHandle { kind: MapKind::Unitary, name: "U".into(), imp: Imp::Unitary(u), descriptor: None }
}

/// The loxodromic T_d(z) = ((cosh d z₁ + sinh d)/D, z_k/D), D = sinh d z₁ + cosh d,
/// with fixed points ±e₁; it contracts towards e₁ for d > 0.
pub fn loxodromic(d: f64) -> MapHandle {
    MapHandle { kind: MapKind::Loxodromic, name: format!("T_{d}"), imp: Imp::Loxodromic(d), descriptor: Some(MapDescriptor::Loxodromic { d }) }
}

pub fn antipodal() -> MapHandle {
    MapHandle { kind: MapKind::Antipodal, name: "-id".into(), imp: Imp::Antipodal, descriptor: Some(MapDescriptor::Antipodal) }
}

/// Sends a point to its canonical lens representative.
pub fn lens_projection(spec: &LensSpec) -> MapHandle {
    MapHandle { kind: MapKind::LensInduced, name: format!("pi_{}", spec.p()), imp: Imp::LensProjection(spec.clone()), descriptor: None }
}

/// Conformal families accepted by [`make_conformal`].
#[derive(Debug, Clone)]
pub enum ConformalParams {
    Rotation(Vec<f64>),
    Loxodromic(f64),
    /// Gauge ball B(center, radius) inside which the inverted region must lie.
    Inversion {
        center: SpherePoint,
        radius: f64,
    },
    Antipodal,
}

pub fn make_conformal(params: ConformalParams) -> Result<MapHandle> {
    match params {
        ConformalParams::Rotation(a) => Ok(rotation(a)),
        ConformalParams::Loxodromic(d) => Ok(loxodromic(d)),
        ConformalParams::Inversion { center, radius } => Ok(inversion(&center, radius)?.handle),
        ConformalParams::Antipodal => Ok(antipodal()),
    }
}

/// The inversion ι = C⁻¹ ∘ ι₀ ∘ C with C = T_{−d} ∘ U, where U carries the
/// center to e₁ and ι₀ is the antipodal map. In U-coordinates the swapped
/// region is the disc |w₁ − coth 2d| < csch 2d, squeezed between the gauge
/// balls of radii √(1 − tanh d) and √(coth d − 1) about the center.
#[derive(Debug, Clone)]
pub struct Inversion {
    pub handle: MapHandle,
    pub center: SpherePoint,
    pub d: f64,
    /// Radius of the requested containing gauge ball (= outer radius).
    pub outer_radius: f64,
    /// Largest gauge ball about the center contained in the swapped region.
    pub inner_radius: f64,
    u: Vec<Vec<Complex64>>,
}

impl Inversion {
    /// Membership in the swapped region B.
    pub fn contains(&self, z: &SpherePoint) -> bool {
        let w1 = matvec(&self.u, z.coords())[0];
        let d2 = 2.0 * self.d;
        (w1 - 1.0 / d2.tanh()).norm() < 1.0 / d2.sinh()
    }

    /// Signed boundary function: negative inside B, positive outside.
    pub fn level(&self, z: &SpherePoint) -> f64 {
        let w1 = matvec(&self.u, z.coords())[0];
        let d2 = 2.0 * self.d;
        (w1 - 1.0 / d2.tanh()).norm() - 1.0 / d2.sinh()
    }
}

/// Largest accepted containing radius: half the gauge diameter √2.
pub const INVERSION_MAX_RADIUS: f64 = std::f64::consts::FRAC_1_SQRT_2;

pub fn inversion(center: &SpherePoint, radius: f64) -> Result<Inversion> {
    if !(radius > 0.0) || radius >= INVERSION_MAX_RADIUS {
        return Err(Error::Rejected(format!("inversion ball radius {radius} must lie in (0, {INVERSION_MAX_RADIUS})")));
    }
    // coth d − 1 = ρ² puts the swapped region inside the gauge ball of radius ρ.
    let d = acoth(1.0 + radius * radius);
    let u = unitary_to_e1(center);
    let c_map = unitary(u.clone()).then(&loxodromic(-d));
    let c_inv = loxodromic(d).then(&unitary(adjoint(&u)));
    let handle = MapHandle {
        descriptor: Some(MapDescriptor::Inversion { center: center.clone(), radius }),
        name: format!("iota(r={radius:.4})"),
        ..MapHandle::composite(vec![c_map, antipodal(), c_inv])
    };
    let handle = MapHandle { kind: MapKind::Inversion, ..handle };
    Ok(Inversion { handle, center: center.clone(), d, outer_radius: (1.0 / d.tanh() - 1.0).sqrt(), inner_radius: (1.0 - d.tanh()).sqrt(), u })
}

fn acoth(x: f64) -> f64 {
    0.5 * ((x + 1.0) / (x - 1.0)).ln()
}

/// f_a on L_{p,q} (evaluated on any representative) and π ∘ f_a.
#[derive(Debug, Clone)]
pub struct LensMultiTwist {
    pub f_a: MapHandle,
    pub projected: MapHandle,
    pub spec: LensSpec,
}

pub fn lens_multi_twist(a: i64, spec: &LensSpec) -> Result<LensMultiTwist> {
    if a % spec.p() as i64 != 0 {
        return Err(Error::Rejected(format!("a = {a} is not a multiple of p = {}: F_a does not descend to the lens space", spec.p())));
    }
    let f_a = MapHandle { kind: MapKind::LensInduced, ..multi_twist(a)? };
    let mut projected = f_a.then(&lens_projection(spec));
    projected.descriptor = Some(MapDescriptor::LensMultiTwist { a, p: spec.p(), q: spec.q().to_vec() });
    Ok(LensMultiTwist { f_a, projected, spec: spec.clone() })
}

/// Pushforward of a horizontal vector; the image must be horizontal.
pub fn pushforward(m: &MapHandle, p: &SpherePoint, v: &HorizontalVector) -> Result<HorizontalVector> {
    if !m.in_smooth_domain(p) {
        return Err(Error::BranchLocus { min_modulus: p.min_modulus() });
    }
    let w = m.pushforward_tangent(p, v.tangent())?;
    let alpha = contact_form_raw(w.base().coords(), w.components()).abs();
    let scale = w.norm().max(v.norm()).max(1e-300);
    if alpha > PUSH_HORIZONTAL_TOL * scale {
        return Err(Error::NotContact { residual: alpha / scale });
    }
    horizontal_project(w.base(), &w)
}

/// Tolerance for the kernel check in [`pullback_contact_factor`].
pub const CONTACT_KERNEL_TOL: f64 = 1e-6;

/// The factor c with m*α = c α at p.
pub fn pullback_contact_factor(m: &MapHandle, p: &SpherePoint) -> Result<f64> {
    if !m.in_smooth_domain(p) {
        return Err(Error::BranchLocus { min_modulus: p.min_modulus() });
    }
    let q = m.eval(p)?;
    for e in horizontal_frame(p) {
        let w = m.push_raw(p, e.tangent().components())?;
        let nw = w.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt().max(1.0);
        let res = contact_form_raw(q.coords(), &w).abs() / nw;
        if res > CONTACT_KERNEL_TOL {
            return Err(Error::NotContact { residual: res });
        }
    }
    let t: Vec<Complex64> = p.coords().iter().map(|z| z * Complex64::i()).collect();
    let w = m.push_raw(p, &t)?;
    Ok(contact_form_raw(q.coords(), &w))
}

/// The 2×2 (n = 1) matrix of m_* on horizontal planes in the frames (X, iX)
/// at p and m(p), together with m(p).
pub fn horizontal_matrix(m: &MapHandle, p: &SpherePoint) -> Result<(Matrix2<f64>, SpherePoint)> {
    if p.n() != 1 {
        return Err(Error::Contract("horizontal_matrix is defined for S³".into()));
    }
    let frame = horizontal_frame(p);
    let vs: Vec<Vec<Complex64>> = frame.iter().map(|e| e.tangent().components().to_vec()).collect();
    let (q, ws) = m.push_frame(p, &vs)?;
    let mut mat = Matrix2::zeros();
    for (j, (w, e)) in ws.into_iter().zip(&frame).enumerate() {
        let w = TangentVector::project(&q, w)?;
        let alpha = contact_form_raw(q.coords(), w.components()).abs();
        let scale = w.norm().max(e.norm()).max(1e-300);
        if alpha > PUSH_HORIZONTAL_TOL * scale {
            return Err(Error::NotContact { residual: alpha / scale });
        }
        let col = frame_coordinates(&horizontal_project(&q, &w)?);
        mat[(0, j)] = col[0];
        mat[(1, j)] = col[1];
    }
    Ok((mat, q))
}

/// All F_a-preimages of `target` on the sphere, or one representative per
/// lens orbit when `spec` is given.
pub fn twist_preimages(a: i64, target: &SpherePoint, spec: Option<&LensSpec>) -> Result<Vec<SpherePoint>> {
    if a == 0 {
        return Err(Error::Contract("multi-twist needs a ≠ 0".into()));
    }
    if a.abs() != 1 && target.on_branch_locus() {
        return Err(Error::BranchLocus { min_modulus: target.min_modulus() });
    }
    let m = target.coords().len();
    let k = a.unsigned_abs() as usize;
    let mut out = Vec::with_capacity(k.pow(m as u32));
    let mut idx = vec![0usize; m];
    loop {
        let theta: Vec<f64> = target.angles().iter().zip(&idx).map(|(t, &kk)| (t + 2.0 * std::f64::consts::PI * kk as f64) / a as f64).collect();
        out.push(SpherePoint::from_polar(target.moduli(), &theta)?);
        let mut j = 0;
        while j < m {
            idx[j] += 1;
            if idx[j] < k {
                break;
            }
            idx[j] = 0;
            j += 1;
        }
        if j == m {
            break;
        }
    }
    match spec {
        None => Ok(out),
        Some(spec) => {
            if a % spec.p() as i64 != 0 {
                return Err(Error::Rejected(format!("a = {a} is not a multiple of p = {}", spec.p())));
            }
            let mut classes: Vec<SpherePoint> = Vec::new();
            for z in out {
                let rep = lens_project(&z, spec)?;
                if !classes.iter().any(|c| c.approx_eq(rep.representative(), 1e-9)) {
                    classes.push(rep.representative().clone());
                }
            }
            Ok(classes)
        }
    }
}

/// Real inner product of ambient vectors.
pub fn real_dot(a: &[Complex64], b: &[Complex64]) -> f64 {
    hermitian(a, b).re
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifolds::sphere::horizontal_from_frame;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_1_SQRT_2, PI};

    fn random_point(rng: &mut ChaCha8Rng) -> SpherePoint {
        SpherePoint::new((0..2).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect()).unwrap()
    }

    #[test]
    fn identity_twist_and_worked_example() {
        let f1 = multi_twist(1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let p = random_point(&mut rng);
            assert!(f1.eval(&p).unwrap().approx_eq(&p, 1e-12));
        }
        let z = SpherePoint::new(vec![Complex64::from_polar(FRAC_1_SQRT_2, PI / 4.0), c(FRAC_1_SQRT_2, 0.0)]).unwrap();
        let w = multi_twist(2).unwrap().eval(&z).unwrap();
        let want = SpherePoint::new(vec![Complex64::from_polar(FRAC_1_SQRT_2, PI / 2.0), c(FRAC_1_SQRT_2, 0.0)]).unwrap();
        assert!(w.approx_eq(&want, 1e-12));
    }

    #[test]
    fn twist_preserves_branch_locus() {
        let z = SpherePoint::new(vec![c(0.0, 0.0), Complex64::from_polar(1.0, 0.7)]).unwrap();
        let w = multi_twist(3).unwrap().eval(&z).unwrap();
        assert!(w.on_branch_locus());
    }

    #[test]
    fn conformal_fixtures() {
        let p = SpherePoint::new(vec![c(0.3, 0.4), c(-0.2, 0.8)]).unwrap();
        assert!(rotation(vec![2.0 * PI, 2.0 * PI]).eval(&p).unwrap().approx_eq(&p, 1e-12));
        let e1 = SpherePoint::pole(1);
        for d in [-1.0, 0.3, 2.0] {
            assert!(loxodromic(d).eval(&e1).unwrap().approx_eq(&e1, 1e-14));
        }
    }

    #[test]
    fn inversion_is_an_involution_that_swaps_the_ball() {
        let center = SpherePoint::new(vec![c(0.5, 0.5), c(0.5, -0.5)]).unwrap();
        let inv = inversion(&center, 0.3).unwrap();
        assert!(inv.inner_radius < inv.outer_radius && (inv.outer_radius - 0.3).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..500 {
            let p = random_point(&mut rng);
            let q = inv.handle.eval(&p).unwrap();
            assert!(inv.handle.eval(&q).unwrap().approx_eq(&p, 1e-9));
            if inv.level(&p) < -1e-9 {
                assert!(inv.level(&q) > 0.0);
            }
            if inv.contains(&p) {
                assert!(center.gauge(&p) < inv.outer_radius + 1e-12);
            }
            if center.gauge(&p) < inv.inner_radius {
                assert!(inv.contains(&p));
            }
        }
        assert!(inversion(&center, 0.8).is_err());
    }

    #[test]
    fn pushforward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let center = SpherePoint::new(vec![c(0.6, 0.0), c(0.0, 0.8)]).unwrap();
        let maps = vec![
            multi_twist(2).unwrap(),
            multi_twist(-3).unwrap(),
            rotation(vec![0.3, -1.1]),
            loxodromic(0.7),
            antipodal(),
            inversion(&center, 0.4).unwrap().handle,
        ];
        for m in &maps {
            for _ in 0..20 {
                let p = random_point(&mut rng);
                let v = horizontal_from_frame(&p, &[rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).unwrap();
                let exact = m.push_raw(&p, v.tangent().components()).unwrap();
                let fd = m.push_fd(&p, v.tangent().components()).unwrap();
                let err: f64 = exact.iter().zip(&fd).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
                assert!(err < 1e-6, "{m:?}: {err}");
                let h = pushforward(m, &p, &v).unwrap();
                assert!(h.residual() < 1e-9);
            }
        }
    }

    #[test]
    fn twist_norm_bounds_and_contact_factor() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = multi_twist(2).unwrap();
        for _ in 0..300 {
            let p = random_point(&mut rng);
            let v = horizontal_from_frame(&p, &[rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).unwrap();
            let w = pushforward(&f, &p, &v).unwrap();
            assert!(v.norm() <= w.norm() + 1e-12 && w.norm() <= 2.0 * v.norm() + 1e-12);
            assert!((pullback_contact_factor(&f, &p).unwrap() - 2.0).abs() < 1e-12);
        }
        let p = random_point(&mut rng);
        assert!((pullback_contact_factor(&rotation(vec![0.2, 0.9]), &p).unwrap() - 1.0).abs() < 1e-12);
        let comp = multi_twist(2).unwrap().then(&multi_twist(3).unwrap());
        assert!((pullback_contact_factor(&comp, &p).unwrap() - 6.0).abs() < 1e-10);
        // A non-contact map: the real-linear swap (z₁, z₂) ↦ (z̄₁, z₂) reverses α on one factor.
        let conj =
            MapHandle::custom("conj1", MapKind::FlowDefined, Arc::new(|p: &SpherePoint| SpherePoint::new(vec![p.coords()[0].conj(), p.coords()[1]])), None);
        assert!(matches!(pullback_contact_factor(&conj, &p), Err(Error::NotContact { .. })));
    }

    #[test]
    fn branch_locus_pushforward_is_a_domain_error() {
        let z = SpherePoint::new(vec![c(0.0, 0.0), c(1.0, 0.0)]).unwrap();
        let v = horizontal_frame(&z)[0].clone();
        assert!(matches!(pushforward(&multi_twist(2).unwrap(), &z, &v), Err(Error::BranchLocus { .. })));
    }

    #[test]
    fn conjugation_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let theta = vec![0.4, -1.3];
        let a = 3;
        let lhs = rotation(theta.clone()).then(&multi_twist(a).unwrap());
        let rhs = multi_twist(a).unwrap().then(&rotation(theta.iter().map(|t| t * a as f64).collect()));
        for _ in 0..200 {
            let p = random_point(&mut rng);
            assert!(lhs.eval(&p).unwrap().approx_eq(&rhs.eval(&p).unwrap(), 1e-10));
        }
    }

    #[test]
    fn lens_twist_is_well_defined_and_divisibility_checked() {
        let spec = LensSpec::new(2, vec![1, 1]).unwrap();
        let lt = lens_multi_twist(2, &spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..200 {
            let z = random_point(&mut rng);
            let rz = spec.rotate(&z, 1).unwrap();
            assert!(lt.f_a.eval(&z).unwrap().approx_eq(&lt.f_a.eval(&rz).unwrap(), 1e-10));
        }
        assert!(lens_multi_twist(3, &spec).is_err());
    }

    #[test]
    fn preimage_counts() {
        let t = SpherePoint::new(vec![c(0.6, 0.3), c(-0.2, 0.714)]).unwrap();
        let pre = twist_preimages(2, &t, None).unwrap();
        assert_eq!(pre.len(), 4);
        let f = multi_twist(2).unwrap();
        for z in &pre {
            assert!(f.eval(z).unwrap().approx_eq(&t, 1e-10));
        }
        let spec = LensSpec::new(2, vec![1, 1]).unwrap();
        assert_eq!(twist_preimages(2, &t, Some(&spec)).unwrap().len(), 2);
        let one = twist_preimages(1, &t, None).unwrap();
        assert_eq!(one.len(), 1);
        assert!(one[0].approx_eq(&t, 1e-12));
        let locus = SpherePoint::pole(1);
        assert!(matches!(twist_preimages(2, &locus, None), Err(Error::BranchLocus { .. })));
    }

    #[test]
    fn descriptors_roundtrip_through_json() {
        let d = MapDescriptor::Composite { parts: vec![MapDescriptor::MultiTwist { a: 2 }, MapDescriptor::Rotation { angles: vec![0.1, 0.2] }] };
        let json = serde_json::to_string(&d).unwrap();
        let back: MapDescriptor = serde_json::from_str(&json).unwrap();
        assert_eq!(back, d);
        let m = back.build().unwrap();
        assert_eq!(m.descriptor(), Some(&d));
    }
}
