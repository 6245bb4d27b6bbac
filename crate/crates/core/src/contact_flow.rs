//! Contact vector fields on S³ from potentials, their flows, and the trap
//! interpolant that blends the multi-twist F_a into an isometry.
//!
//! With Z = z̄₂∂_{z₁} − z̄₁∂_{z₂} and Reeb field T = iz, the contact field of a
//! potential ρ is W = i(Z̄ρ)Z − i(Zρ)Z̄ + ρT. As an ambient velocity this is
//!
//! ```text
//! ż = i (Z̄ρ) (z̄₂, −z̄₁) + ρ · i z,
//! ```
//!
//! and α(W) = ρ. For real ρ, Z̄ρ = (D_ξ ρ + i D_{iξ} ρ)/2 with ξ = (z̄₂, −z̄₁).

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifolds::ball::GaugeBall;
use crate::manifolds::sphere::SpherePoint;
use crate::map_zoo::{horizontal_matrix, multi_twist, rotation, MapHandle, MapKind};

/// A smooth function on (an open subset of) S³.
pub trait Potential: Send + Sync {
    fn value(&self, z: &SpherePoint) -> Result<f64>;

    /// Z̄ρ at z; defaults to 4th-order central differences along the great
    /// circles through z in the directions ξ and iξ.
    fn zbar(&self, z: &SpherePoint) -> Result<Complex64> {
        fd_zbar(&|w: &SpherePoint| self.value(w), z)
    }

    /// Whether a step from `a` to `b` stays in one connected piece of the
    /// domain. Potentials with a branch cut override this.
    fn continuous_between(&self, _a: &SpherePoint, _b: &SpherePoint) -> bool {
        true
    }
}

const FD_H: f64 = 1e-3;

fn fd_zbar(f: &dyn Fn(&SpherePoint) -> Result<f64>, z: &SpherePoint) -> Result<Complex64> {
    let c = z.coords();
    let xi = [c[1].conj(), -c[0].conj()];
    let deriv = |v: [Complex64; 2]| -> Result<f64> {
        let at = |s: f64| -> Result<f64> { f(&SpherePoint::new(vec![c[0] * s.cos() + v[0] * s.sin(), c[1] * s.cos() + v[1] * s.sin()])?) };
        Ok((-at(2.0 * FD_H)? + 8.0 * at(FD_H)? - 8.0 * at(-FD_H)? + at(-2.0 * FD_H)?) / (12.0 * FD_H))
    };
    let i = Complex64::i();
    let d_xi = deriv(xi)?;
    let d_ixi = deriv([xi[0] * i, xi[1] * i])?;
    Ok(Complex64::new(0.5 * d_xi, 0.5 * d_ixi))
}

/// ρ ≡ c.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPotential(pub f64);

impl Potential for ConstantPotential {
    fn value(&self, _z: &SpherePoint) -> Result<f64> {
        Ok(self.0)
    }

    fn zbar(&self, _z: &SpherePoint) -> Result<Complex64> {
        Ok(Complex64::new(0.0, 0.0))
    }
}

/// A potential given by a closure (derivatives by finite differences).
pub struct FnPotential<F: Fn(&SpherePoint) -> Result<f64> + Send + Sync>(pub F);

impl<F: Fn(&SpherePoint) -> Result<f64> + Send + Sync> Potential for FnPotential<F> {
    fn value(&self, z: &SpherePoint) -> Result<f64> {
        (self.0)(z)
    }
}

/// ρ = ln(a) Σ r_j² θ_j on {θ_j ∈ (−π, π), r_j ≠ 0}. Its field multiplies
/// every angle by a^s at time s, so the time-1 map is F_a.
#[derive(Debug, Clone, Copy)]
pub struct TwistPotential {
    pub a: i64,
    ln_a: f64,
}

/// Angular margin below which the twist potential reports a domain exit.
const TWIST_DOMAIN_EPS: f64 = 1e-9;

impl TwistPotential {
    fn check(&self, z: &SpherePoint) -> Result<()> {
        if z.on_branch_locus() {
            return Err(Error::Domain("twist potential evaluated on the branch locus".into()));
        }
        if z.angles().iter().any(|t| t.abs() >= std::f64::consts::PI - TWIST_DOMAIN_EPS) {
            return Err(Error::Domain("twist potential evaluated at θ = ±π".into()));
        }
        Ok(())
    }
}

pub fn twist_potential(a: i64) -> Result<TwistPotential> {
    if a < 2 {
        return Err(Error::Contract(format!("twist potential needs a ≥ 2, got {a}")));
    }
    Ok(TwistPotential { a, ln_a: (a as f64).ln() })
}

impl Potential for TwistPotential {
    fn value(&self, z: &SpherePoint) -> Result<f64> {
        self.check(z)?;
        Ok(self.ln_a * z.moduli().iter().zip(z.angles()).map(|(r, t)| r * r * t).sum::<f64>())
    }

    fn zbar(&self, z: &SpherePoint) -> Result<Complex64> {
        self.check(z)?;
        let c = z.coords();
        let th = z.angles();
        Ok(c[0] * c[1] * (self.ln_a * (th[0] - th[1])))
    }

    fn continuous_between(&self, a: &SpherePoint, b: &SpherePoint) -> bool {
        a.angles().iter().zip(b.angles()).all(|(x, y)| (x - y).abs() < std::f64::consts::PI)
    }
}

/// The C^∞ step ψ(x) = f(x)/(f(x) + f(1−x)), f(x) = e^{−1/x} for x > 0.
pub fn smoothstep(x: f64) -> f64 {
    let f = |t: f64| if t <= 0.0 { 0.0 } else { (-1.0 / t).exp() };
    if x <= 0.0 {
        0.0
    } else if x >= 1.0 {
        1.0
    } else {
        f(x) / (f(x) + f(1.0 - x))
    }
}

/// φ = ψ((d − d₀)/(d₁ − d₀)) of the gauge distance d to the center, with
/// d₀ = r_inner + δ and d₁ = k_min − δ: φ ≡ 0 on the δ-neighbourhood of the
/// inner ball and φ ≡ 1 on the δ-neighbourhood of any set at distance
/// ≥ k_min from the center.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Bump {
    pub center: SpherePoint,
    pub r_inner: f64,
    pub k_min: f64,
    pub delta: f64,
}

impl Bump {
    pub fn value(&self, z: &SpherePoint) -> f64 {
        let d = self.center.gauge(z);
        let (d0, d1) = (self.r_inner + self.delta, self.k_min - self.delta);
        smoothstep((d - d0) / (d1 - d0))
    }

    pub fn zero_radius(&self) -> f64 {
        self.r_inner + self.delta
    }

    pub fn one_radius(&self) -> f64 {
        self.k_min - self.delta
    }
}

/// Bump function separating an outer set from an inner gauge ball. The
/// default δ is gap/8.
pub fn bump(k_outer: &[SpherePoint], inner: &GaugeBall, delta: Option<f64>) -> Result<Bump> {
    let k_min = k_outer.iter().map(|p| inner.center.gauge(p)).fold(f64::INFINITY, f64::min);
    if !k_min.is_finite() {
        return Err(Error::Contract("bump needs a nonempty outer set".into()));
    }
    let gap = k_min - inner.radius;
    let delta = delta.unwrap_or(gap / 8.0);
    if !(delta > 0.0) || gap < 4.0 * delta {
        return Err(Error::Rejected(format!("bump gap {gap:.3e} is below 4δ = {:.3e}", 4.0 * delta)));
    }
    Ok(Bump { center: inner.center.clone(), r_inner: inner.radius, k_min, delta })
}

/// φ·ρ, with Z̄(φρ) = φ Z̄ρ + ρ Z̄φ; ρ is not evaluated where φ vanishes.
pub struct BumpedPotential<P: Potential> {
    pub base: P,
    pub bump: Bump,
}

impl<P: Potential> Potential for BumpedPotential<P> {
    fn value(&self, z: &SpherePoint) -> Result<f64> {
        let phi = self.bump.value(z);
        if phi == 0.0 {
            return Ok(0.0);
        }
        Ok(phi * self.base.value(z)?)
    }

    fn zbar(&self, z: &SpherePoint) -> Result<Complex64> {
        let d = self.bump.center.gauge(z);
        if d <= self.bump.zero_radius() - 4.0 * FD_H {
            return Ok(Complex64::new(0.0, 0.0));
        }
        let phi = self.bump.value(z);
        if d >= self.bump.one_radius() + 4.0 * FD_H {
            return self.base.zbar(z);
        }
        let zphi = fd_zbar(&|w: &SpherePoint| Ok(self.bump.value(w)), z)?;
        let rho = self.base.value(z)?;
        Ok(self.base.zbar(z)? * phi + zphi * rho)
    }

    fn continuous_between(&self, a: &SpherePoint, b: &SpherePoint) -> bool {
        self.base.continuous_between(a, b)
    }
}

/// The Libermann contact field of a potential.
#[derive(Clone)]
pub struct ContactField {
    potential: Arc<dyn Potential>,
}

pub fn libermann_field(potential: Arc<dyn Potential>) -> ContactField {
    ContactField { potential }
}

impl ContactField {
    pub fn potential(&self) -> &dyn Potential {
        self.potential.as_ref()
    }

    pub fn eval(&self, z: &SpherePoint) -> Result<[Complex64; 2]> {
        if z.n() != 1 {
            return Err(Error::Contract("contact fields are implemented on S³".into()));
        }
        let rho = self.potential.value(z)?;
        let zb = self.potential.zbar(z)?;
        let c = z.coords();
        let i = Complex64::i();
        let k = i * zb;
        Ok([k * c[1].conj() + i * rho * c[0], -k * c[0].conj() + i * rho * c[1]])
    }
}

/// Outcome of integrating a contact field.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowResult {
    pub endpoint: SpherePoint,
    /// Time actually reached (equals the requested time unless exited).
    pub s_reached: f64,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub exited_domain: bool,
    pub samples: Vec<(f64, SpherePoint)>,
}

/// Relative local tolerance of the adaptive integrator.
pub const FLOW_RTOL: f64 = 1e-8;

fn axpy(z: &[Complex64], k: &[Complex64; 2], h: f64) -> Result<SpherePoint> {
    SpherePoint::new(vec![z[0] + k[0] * h, z[1] + k[1] * h])
}

fn rk4_step(field: &ContactField, p: &SpherePoint, h: f64) -> Result<SpherePoint> {
    let z = p.coords();
    let stage = |k: &[Complex64; 2], f: f64| -> Result<[Complex64; 2]> {
        let q = axpy(z, k, f * h)?;
        if !field.potential().continuous_between(p, &q) {
            return Err(Error::Domain("step crosses a branch cut of the potential".into()));
        }
        field.eval(&q)
    };
    let k1 = field.eval(p)?;
    let k2 = stage(&k1, 0.5)?;
    let k3 = stage(&k2, 0.5)?;
    let k4 = stage(&k3, 1.0)?;
    let upd: Vec<Complex64> = (0..2).map(|j| z[j] + (k1[j] + k2[j] * 2.0 + k3[j] * 2.0 + k4[j]) * (h / 6.0)).collect();
    // SpherePoint::new renormalises.
    SpherePoint::new(upd)
}

/// Adaptive RK4 (step doubling) for the time-s flow, renormalised to the
/// sphere after each accepted step. Leaving the potential's domain shrinks
/// the step; when it underflows the partial trajectory is returned with
/// `exited_domain` set.
pub fn flow(field: &ContactField, p: &SpherePoint, s: f64) -> Result<FlowResult> {
    field.eval(p)?;
    let dir = if s < 0.0 { -1.0 } else { 1.0 };
    let total = s.abs();
    let mut t = 0.0;
    let mut h = (total / 16.0).clamp(1e-6, 0.1);
    let mut h_cap = f64::INFINITY;
    let mut z = p.clone();
    let mut out =
        FlowResult { endpoint: p.clone(), s_reached: 0.0, accepted_steps: 0, rejected_steps: 0, exited_domain: false, samples: vec![(0.0, p.clone())] };
    while t < total - 1e-15 {
        h = h.min(total - t);
        if h < 1e-12 {
            out.exited_domain = true;
            break;
        }
        let attempt = (|| -> Result<(SpherePoint, f64)> {
            let full = rk4_step(field, &z, dir * h)?;
            let half = rk4_step(field, &rk4_step(field, &z, dir * 0.5 * h)?, dir * 0.5 * h)?;
            if !field.potential().continuous_between(&z, &half) {
                return Err(Error::Domain("step crosses a branch cut of the potential".into()));
            }
            Ok((half.clone(), half.chordal(&full) / 15.0))
        })();
        match attempt {
            Ok((next, err)) if err <= FLOW_RTOL => {
                t += h;
                z = next;
                out.accepted_steps += 1;
                out.samples.push((dir * t, z.clone()));
                let grow = if err == 0.0 { 4.0 } else { (0.9 * (FLOW_RTOL / err).powf(0.2)).clamp(0.2, 4.0) };
                h = (h * grow).min(h_cap);
            }
            Ok((_, err)) => {
                out.rejected_steps += 1;
                h *= (0.9 * (FLOW_RTOL / err).powf(0.2)).clamp(0.1, 0.5);
            }
            Err(Error::Domain(_)) | Err(Error::BranchLocus { .. }) => {
                out.rejected_steps += 1;
                // Cap later growth; otherwise accepted steps creep toward the
                // boundary without the step ever underflowing.
                h *= 0.25;
                h_cap = h;
            }
            Err(e) => return Err(e),
        }
    }
    out.endpoint = z;
    out.s_reached = dir * t;
    Ok(out)
}

/// Fixed-step RK4 flow. A fixed step makes the result a smooth function of
/// the initial point, which finite-difference pushforwards rely on.
pub fn flow_fixed(field: &ContactField, p: &SpherePoint, s: f64, steps: usize) -> Result<SpherePoint> {
    let h = s / steps as f64;
    let mut z = p.clone();
    for _ in 0..steps {
        z = rk4_step(field, &z, h)?;
    }
    Ok(z)
}

/// The time-s map of a field as a [`MapHandle`] (fixed-step RK4).
pub fn flow_map(field: &ContactField, s: f64, steps: usize) -> MapHandle {
    let f = field.clone();
    MapHandle::custom(format!("flow(s={s})"), MapKind::FlowDefined, Arc::new(move |p: &SpherePoint| flow_fixed(&f, p, s, steps)), None)
}

/// Steps of the fixed-step flow inside the trap interpolant.
pub const INTERPOLANT_FLOW_STEPS: usize = 64;
/// Angular margin for admissible radii: a·|θ_j| ≤ 0.9π on the closed ball.
pub const ADMISSIBLE_ANGLE: f64 = 0.9 * std::f64::consts::PI;

/// The interpolant G₁ with G₁ = F_a off B(z*, R) and G₁ = R_{(a−1)θ*} on a
/// neighbourhood of B′ = B(z*, r′).
#[derive(Clone)]
pub struct TrapInterpolant {
    pub a: i64,
    pub z_star: SpherePoint,
    pub theta_star: Vec<f64>,
    /// R_{−θ*} z*, all angles zero.
    pub z_prime: SpherePoint,
    pub radius: f64,
    pub admissible_radius: f64,
    pub b_prime: GaugeBall,
    pub bump: Bump,
    pub handle: MapHandle,
    field: ContactField,
}

impl std::fmt::Debug for TrapInterpolant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TrapInterpolant")
            .field("a", &self.a)
            .field("radius", &self.radius)
            .field("admissible_radius", &self.admissible_radius)
            .field("b_prime", &self.b_prime)
            .field("bump", &self.bump)
            .finish()
    }
}

/// Region of a point relative to the interpolant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InterpolantRegion {
    /// d ≥ R: closed-form F_a.
    Outside,
    /// d ≤ r′ + δ: the bump vanishes, G₁ is the rotation R_{(a−1)θ*}.
    Isometric,
    /// In between: the time-1 flow of the bumped potential.
    Annulus,
}

impl TrapInterpolant {
    pub fn region(&self, p: &SpherePoint) -> InterpolantRegion {
        let d = self.z_star.gauge(p);
        if d >= self.radius {
            InterpolantRegion::Outside
        } else if d <= self.bump.zero_radius() {
            InterpolantRegion::Isometric
        } else {
            InterpolantRegion::Annulus
        }
    }

    /// G₁ through the flow branch regardless of region (conjugated by the
    /// rotations R_{∓θ*}).
    pub fn eval_flow(&self, p: &SpherePoint) -> Result<SpherePoint> {
        eval_flow_branch(&self.field, &self.theta_star, self.a, p)
    }

    pub fn field(&self) -> &ContactField {
        &self.field
    }
}

fn rotate(p: &SpherePoint, angles: &[f64], scale: f64) -> Result<SpherePoint> {
    SpherePoint::new(p.coords().iter().zip(angles).map(|(z, t)| z * Complex64::from_polar(1.0, scale * t)).collect())
}

fn eval_flow_branch(field: &ContactField, theta: &[f64], a: i64, p: &SpherePoint) -> Result<SpherePoint> {
    let q = rotate(p, theta, -1.0)?;
    let h = flow_fixed(field, &q, 1.0, INTERPOLANT_FLOW_STEPS)?;
    rotate(&h, theta, a as f64)
}

/// Closed-ball check used for the admissible radius: off the branch locus
/// and a·|θ_j| ≤ 0.9π (angles relative to z′, whose angles vanish).
fn ball_admissible(a: i64, z_prime: &SpherePoint, r: f64) -> bool {
    let ball = GaugeBall::new(z_prime.clone(), r);
    for frac in [0.25, 0.5, 0.75, 1.0] {
        let shell = match ball.shell(r * frac, 17, 24) {
            Ok(s) => s,
            Err(_) => return false,
        };
        for z in shell {
            if z.min_modulus() < 1e-3 || z.angles().iter().any(|t| a as f64 * t.abs() > ADMISSIBLE_ANGLE) {
                return false;
            }
        }
    }
    true
}

/// Largest R (bisection, 20 iterations) for which the twist flow is defined
/// on B̄(z*, R) for s ∈ [0, 1] with the angular margin.
pub fn admissible_radius(a: i64, z_star: &SpherePoint) -> Result<f64> {
    z_star.ensure_off_branch_locus()?;
    let z_prime = SpherePoint::from_polar(z_star.moduli(), &vec![0.0; z_star.coords().len()])?;
    let (mut lo, mut hi) = (0.0, std::f64::consts::FRAC_1_SQRT_2);
    for _ in 0..20 {
        let mid = 0.5 * (lo + hi);
        if ball_admissible(a, &z_prime, mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// min over s ∈ [0,1] and q ∈ ∂B(z′, R) of the gauge distance from z′ to
/// H_s(q), where H_s multiplies angles by a^s.
fn twist_sweep_min_distance(a: i64, z_prime: &SpherePoint, r: f64) -> Result<f64> {
    let ball = GaugeBall::new(z_prime.clone(), r);
    let boundary = ball.shell(r, 33, 48)?;
    let mut k_min = f64::INFINITY;
    for q in &boundary {
        for k in 0..=32 {
            let s = k as f64 / 32.0;
            let f = (a as f64).powf(s);
            let h = SpherePoint::from_polar(q.moduli(), &q.angles().iter().map(|t| t * f).collect::<Vec<_>>())?;
            k_min = k_min.min(z_prime.gauge(&h));
        }
    }
    Ok(k_min)
}

/// Builds G₁ = R_{aθ*} ∘ H₁ ∘ R_{−θ*}, H₁ the time-1 flow of φρ for the twist
/// potential ρ and a bump φ that vanishes near z′ and equals 1 on the sweep
/// ∪_s H_s(∂B).
pub fn trap_interpolant(a: i64, z_star: &SpherePoint, radius: f64) -> Result<TrapInterpolant> {
    if z_star.n() != 1 {
        return Err(Error::Contract("trap interpolant is implemented on S³".into()));
    }
    let potential = twist_potential(a)?;
    let r0 = admissible_radius(a, z_star)?;
    if !(radius > 0.0) || radius > r0 {
        return Err(Error::Rejected(format!("interpolation radius {radius:.6} exceeds the largest admissible radius {r0:.6}")));
    }
    let theta_star = z_star.angles().to_vec();
    let z_prime = SpherePoint::from_polar(z_star.moduli(), &[0.0, 0.0])?;
    let k_min = twist_sweep_min_distance(a, &z_prime, radius)?;
    let r_inner = 0.25 * k_min;
    let bump_fn = bump(&[], &GaugeBall::new(z_prime.clone(), r_inner), None).or_else(|_| {
        let gap = k_min - r_inner;
        Ok::<Bump, Error>(Bump { center: z_prime.clone(), r_inner, k_min, delta: gap / 8.0 })
    })?;
    let field = libermann_field(Arc::new(BumpedPotential { base: potential, bump: bump_fn.clone() }));

    let (f_a, iso) = (multi_twist(a)?, rotation(theta_star.iter().map(|t| t * (a - 1) as f64).collect()));
    let (zs, th, fld, f_a2, iso2) = (z_star.clone(), theta_star.clone(), field.clone(), f_a.clone(), iso.clone());
    let zero_r = bump_fn.zero_radius();
    let eval = Arc::new(move |p: &SpherePoint| -> Result<SpherePoint> {
        let d = zs.gauge(p);
        if d >= radius {
            f_a2.eval(p)
        } else if d <= zero_r {
            iso2.eval(p)
        } else {
            eval_flow_branch(&fld, &th, a, p)
        }
    });
    let (zs, th, fld) = (z_star.clone(), theta_star.clone(), field.clone());
    let push = Arc::new(move |p: &SpherePoint, v: &[Complex64]| -> Result<Option<Vec<Complex64>>> {
        let d = zs.gauge(p);
        if d >= radius {
            Ok(Some(f_a.push_raw(p, v)?))
        } else if d <= zero_r {
            Ok(Some(iso.push_raw(p, v)?))
        } else {
            // Differentiate the flow branch only, so the stencil never
            // straddles a seam.
            let (th, fld) = (th.clone(), fld.clone());
            let branch = MapHandle::custom("G1-flow", MapKind::FlowDefined, Arc::new(move |q: &SpherePoint| eval_flow_branch(&fld, &th, a, q)), None);
            Ok(Some(branch.push_fd(p, v)?))
        }
    });
    let handle = MapHandle::custom(format!("G1(a={a})"), MapKind::FlowDefined, eval, Some(push));
    Ok(TrapInterpolant {
        a,
        z_star: z_star.clone(),
        theta_star,
        z_prime: z_prime.clone(),
        radius,
        admissible_radius: r0,
        b_prime: GaugeBall::new(z_star.clone(), r_inner),
        bump: Bump { center: z_star.clone(), ..bump_fn },
        handle,
        field,
    })
}

/// Measured distortion per region of an interpolant.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegionDistortion {
    pub region: InterpolantRegion,
    pub samples: usize,
    pub sup_lambda_plus: f64,
    pub inf_lambda_minus: f64,
    pub max_ratio: f64,
}

pub const DIAGNOSTICS_CSV_HEADER: &str = "region,samples,sup_lambda_plus,inf_lambda_minus,max_ratio";

impl RegionDistortion {
    pub fn csv_row(&self) -> String {
        let name = serde_json::to_value(self.region).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        format!("{name},{},{:.9},{:.9},{:.9}", self.samples, self.sup_lambda_plus, self.inf_lambda_minus, self.max_ratio)
    }
}

/// Singular values of the horizontal matrix of G₁ over gauge shells about z*.
pub fn interpolant_diagnostics(g: &TrapInterpolant, shells: usize, per_shell: usize) -> Result<Vec<RegionDistortion>> {
    let mut acc: Vec<RegionDistortion> = [InterpolantRegion::Isometric, InterpolantRegion::Annulus, InterpolantRegion::Outside]
        .into_iter()
        .map(|region| RegionDistortion { region, samples: 0, sup_lambda_plus: 0.0, inf_lambda_minus: f64::INFINITY, max_ratio: 0.0 })
        .collect();
    let ball = GaugeBall::new(g.z_star.clone(), g.radius);
    let side = (per_shell as f64).sqrt().ceil() as usize;
    for k in 0..shells {
        let r = 1.3 * g.radius * (k as f64 + 0.5) / shells as f64;
        for p in ball.shell(r, side, side)? {
            if p.on_branch_locus() {
                continue;
            }
            let (m, _) = horizontal_matrix(&g.handle, &p)?;
            let sv = m.singular_values();
            let (hi, lo) = (sv.max(), sv.min());
            let slot = match g.region(&p) {
                InterpolantRegion::Isometric => 0,
                InterpolantRegion::Annulus => 1,
                InterpolantRegion::Outside => 2,
            };
            let e = &mut acc[slot];
            e.samples += 1;
            e.sup_lambda_plus = e.sup_lambda_plus.max(hi);
            e.inf_lambda_minus = e.inf_lambda_minus.min(lo);
            e.max_ratio = e.max_ratio.max(hi / lo);
        }
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifolds::sphere::{contact_form_raw, reeb, TangentVector};
    use crate::map_zoo::pullback_contact_factor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_point(rng: &mut ChaCha8Rng) -> SpherePoint {
        SpherePoint::new((0..2).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect()).unwrap()
    }

    #[test]
    fn zero_and_constant_potentials() {
        let p = SpherePoint::new(vec![c(0.3, 0.4), c(-0.2, 0.8)]).unwrap();
        let w0 = libermann_field(Arc::new(ConstantPotential(0.0))).eval(&p).unwrap();
        assert!(w0.iter().all(|x| x.norm() == 0.0));
        let w1 = libermann_field(Arc::new(ConstantPotential(1.0))).eval(&p).unwrap();
        let t = reeb(&p);
        assert!(w1.iter().zip(t.components()).all(|(a, b)| (a - b).norm() < 1e-15));
    }

    #[test]
    fn contact_form_of_field_is_the_potential() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let generic = FnPotential(|z: &SpherePoint| Ok(z.coords()[0].re * z.coords()[1].im + z.coords()[0].norm_sqr()));
        let field = libermann_field(Arc::new(generic));
        let twist = libermann_field(Arc::new(twist_potential(2).unwrap()));
        for _ in 0..200 {
            let p = random_point(&mut rng);
            for f in [&field, &twist] {
                let w = f.eval(&p).unwrap();
                TangentVector::new(&p, w.to_vec()).unwrap();
                let rho = f.potential().value(&p).unwrap();
                assert!((contact_form_raw(p.coords(), &w) - rho).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn twist_closed_form_zbar_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tp = twist_potential(3).unwrap();
        for _ in 0..100 {
            let p = random_point(&mut rng);
            if p.angles().iter().any(|t| t.abs() > 3.0) {
                continue;
            }
            let exact = tp.zbar(&p).unwrap();
            let fd = fd_zbar(&|w: &SpherePoint| tp.value(w), &p).unwrap();
            assert!((exact - fd).norm() < 1e-8, "{exact} vs {fd}");
        }
    }

    #[test]
    fn twist_flow_reaches_the_multi_twist() {
        let field = libermann_field(Arc::new(twist_potential(2).unwrap()));
        let f2 = multi_twist(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut checked = 0;
        while checked < 30 {
            let p = random_point(&mut rng);
            if p.angles().iter().any(|t| 2.0 * t.abs() > 0.95 * PI) {
                continue;
            }
            checked += 1;
            let r = flow(&field, &p, 1.0).unwrap();
            assert!(!r.exited_domain);
            assert!(r.endpoint.approx_eq(&f2.eval(&p).unwrap(), 1e-6));
            assert!(flow(&field, &p, 0.0).unwrap().endpoint.approx_eq(&p, 0.0));
        }
        // z′ has zero angles and is fixed.
        let zp = SpherePoint::from_polar(&[0.6, 0.8], &[0.0, 0.0]).unwrap();
        assert_eq!(twist_potential(2).unwrap().value(&zp).unwrap(), 0.0);
    }

    #[test]
    fn reeb_flow_has_period_two_pi() {
        let field = libermann_field(Arc::new(ConstantPotential(1.0)));
        let p = SpherePoint::new(vec![c(0.3, 0.4), c(-0.2, 0.8)]).unwrap();
        let r = flow(&field, &p, 2.0 * PI).unwrap();
        assert!(r.endpoint.approx_eq(&p, 1e-5));
        let half = flow(&field, &p, PI).unwrap().endpoint;
        assert!(half.approx_eq(&SpherePoint::new(p.coords().iter().map(|z| -z).collect()).unwrap(), 1e-6));
    }

    #[test]
    fn flow_semigroup() {
        let generic = FnPotential(|z: &SpherePoint| Ok(0.5 * z.coords()[0].re + z.coords()[1].im * z.coords()[1].re));
        let field = libermann_field(Arc::new(generic));
        let p = SpherePoint::new(vec![c(0.3, 0.4), c(-0.2, 0.8)]).unwrap();
        let a = flow(&field, &flow(&field, &p, 0.4).unwrap().endpoint, 0.7).unwrap().endpoint;
        let b = flow(&field, &p, 1.1).unwrap().endpoint;
        assert!(a.approx_eq(&b, 1e-5));
    }

    #[test]
    fn domain_exit_is_flagged() {
        let field = libermann_field(Arc::new(twist_potential(2).unwrap()));
        let p = SpherePoint::from_polar(&[0.6, 0.8], &[2.0, 0.1]).unwrap();
        let r = flow(&field, &p, 1.0).unwrap();
        assert!(r.exited_domain && r.s_reached < 1.0);
    }

    #[test]
    fn flow_maps_are_contact() {
        let field = libermann_field(Arc::new(twist_potential(2).unwrap()));
        let p = SpherePoint::from_polar(&[0.6, 0.8], &[0.3, -0.2]).unwrap();
        for s in [0.25, 0.5, 1.0] {
            let f = flow_map(&field, s, 64);
            let k = pullback_contact_factor(&f, &p).unwrap();
            assert!((k - 2f64.powf(s)).abs() < 1e-5, "{s}: {k}");
        }
    }

    #[test]
    fn bump_properties() {
        let center = SpherePoint::from_polar(&[0.6, 0.8], &[0.0, 0.0]).unwrap();
        let outer = GaugeBall::new(center.clone(), 0.3).shell(0.3, 5, 8).unwrap();
        let b = bump(&outer, &GaugeBall::new(center.clone(), 0.1), None).unwrap();
        assert_eq!(b.value(&center), 0.0);
        for q in &outer {
            assert_eq!(b.value(q), 1.0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10_000 {
            let v = b.value(&random_point(&mut rng));
            assert!((0.0..=1.0).contains(&v));
        }
        assert!(bump(&outer, &GaugeBall::new(center, 0.1), Some(0.06)).is_err());
    }

    fn interpolant() -> TrapInterpolant {
        let z_star = SpherePoint::from_polar(&[0.6, 0.8], &[0.5, -0.3]).unwrap();
        let r0 = admissible_radius(2, &z_star).unwrap();
        trap_interpolant(2, &z_star, 0.8 * r0).unwrap()
    }

    #[test]
    fn interpolant_matches_twist_outside_and_rotation_inside() {
        let g = interpolant();
        let f2 = multi_twist(2).unwrap();
        assert!(g.handle.eval(&g.z_star).unwrap().approx_eq(&f2.eval(&g.z_star).unwrap(), 1e-12));
        let ball = GaugeBall::new(g.z_star.clone(), g.radius);
        for p in ball.shell(1.05 * g.radius, 7, 8).unwrap() {
            assert!(g.handle.eval(&p).unwrap().approx_eq(&f2.eval(&p).unwrap(), 1e-10));
        }
        for p in ball.shell(0.9 * g.b_prime.radius, 5, 6).unwrap() {
            let (m, _) = horizontal_matrix(&g.handle, &p).unwrap();
            let sv = m.singular_values();
            assert!((sv.max() - 1.0).abs() < 1e-9 && (sv.min() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn interpolant_is_continuous_across_seams() {
        let g = interpolant();
        let ball = GaugeBall::new(g.z_star.clone(), 1.0);
        for r in [g.radius, g.bump.zero_radius()] {
            let inner = ball.shell(r * (1.0 - 1e-9), 5, 6).unwrap();
            let outer = ball.shell(r * (1.0 + 1e-9), 5, 6).unwrap();
            for (p, q) in inner.iter().zip(&outer) {
                let gap = g.handle.eval(p).unwrap().chordal(&g.handle.eval(q).unwrap());
                assert!(gap < 1e-5, "seam at {r}: {gap}");
            }
        }
    }

    #[test]
    fn oversized_radius_is_rejected_with_bound() {
        let z_star = SpherePoint::from_polar(&[0.6, 0.8], &[0.5, -0.3]).unwrap();
        match trap_interpolant(2, &z_star, 0.7) {
            Err(Error::Rejected(msg)) => assert!(msg.contains("largest admissible")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn annulus_distortion_is_finite() {
        let g = interpolant();
        let d = interpolant_diagnostics(&g, 6, 16).unwrap();
        for r in &d {
            if r.samples > 0 {
                assert!(r.max_ratio.is_finite() && r.inf_lambda_minus > 0.0, "{r:?}");
            }
        }
        assert!((d[0].max_ratio - 1.0).abs() < 1e-9);
    }
}
