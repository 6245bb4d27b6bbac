//! The conformal-trap UQR map on a lens space L_{p,q} (S³ case).
//!
//! Starting from f = F_a (with p | a), g₁ replaces f near x₀ and near each
//! preimage x_i of z₀ by a trap interpolant that is a rotation on a smaller
//! ball B′_i. An inversion ι centred at z₀ swaps a domain B ⊂ g₁(B′_i) with
//! its complement. Then g = π ∘ ι ∘ g₁ on L and G = ι ∘ g₁ ∘ π on S³.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contact_flow::{admissible_radius, trap_interpolant, TrapInterpolant};
use crate::error::{Error, Result};
use crate::manifolds::ball::GaugeBall;
use crate::manifolds::heisenberg::heisenberg_chart;
use crate::manifolds::lens::{lens_project, LensSpec};
use crate::manifolds::sphere::SpherePoint;
use crate::map_zoo::{inversion, lens_multi_twist, lens_projection, multi_twist, Inversion, MapHandle, MapKind};

/// Safety factor applied to every radius condition.
pub const RADIUS_MARGIN: f64 = 0.9;
/// Fraction of r′ used for the gauge ball containing the inversion domain.
pub const INVERSION_FRACTION: f64 = 0.9;
/// Largest accepted Julia depth; the tree grows like deg(g)^depth.
pub const MAX_JULIA_DEPTH: usize = 7;
/// The gauge of points a few ulps apart is ~√ε; diameters below this are
/// rounding and are left out of the decay fit.
pub const DIAMETER_FLOOR: f64 = 1e-6;

/// Optional replacements for the automatic choices of `build_trap`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrapOverrides {
    pub z0: Option<SpherePoint>,
    pub u_radius: Option<f64>,
    pub v_radius: Option<f64>,
    pub radius: Option<f64>,
    pub inversion_fraction: Option<f64>,
}

/// One of the five radius conditions, evaluated at the chosen R.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RadiusCondition {
    pub name: String,
    /// The measured quantity and the bound it must stay below.
    pub value: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrapConfig {
    pub a: i64,
    pub spec: LensSpec,
    /// Canonical representative of x₀ = π(z₀).
    pub x0: SpherePoint,
    pub z0: SpherePoint,
    pub f_x0: SpherePoint,
    pub u: GaugeBall,
    pub v: GaugeBall,
    pub radius: f64,
    /// Radius of g₁(B′_i), the ball about z₀ holding the inversion domain.
    pub r: f64,
    /// Representatives of the preimages x_1, …, x_N of z₀ in L.
    pub preimages: Vec<SpherePoint>,
    /// B₀, B₁, …, B_N about x₀, x₁, …, x_N.
    pub balls: Vec<GaugeBall>,
    pub primed_balls: Vec<GaugeBall>,
    pub inversion_center: SpherePoint,
    pub inversion_radius: f64,
    pub conditions: Vec<RadiusCondition>,
    pub admissible_radii: Vec<f64>,
}

impl TrapConfig {
    pub fn n_preimages(&self) -> usize {
        self.preimages.len()
    }

    /// Overrides that rebuild exactly this configuration.
    pub fn overrides(&self) -> TrapOverrides {
        TrapOverrides {
            z0: Some(self.z0.clone()),
            u_radius: Some(self.u.radius),
            v_radius: Some(self.v.radius),
            radius: Some(self.radius),
            inversion_fraction: Some(self.inversion_radius / self.r),
        }
    }
}

/// Where a point sits relative to the trap construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Region {
    Trap,
    ConformalBall,
    Transit,
}

struct Center {
    point: SpherePoint,
    interp: TrapInterpolant,
}

/// The UQR map with its construction data.
#[derive(Clone)]
pub struct UQRMap {
    pub config: TrapConfig,
    /// g₁ on S³ (invariant under the lens rotation).
    pub g1: MapHandle,
    pub iota: Inversion,
    /// g = π ∘ ι ∘ g₁, acting on lens representatives.
    pub g: MapHandle,
    /// G = ι ∘ g₁ ∘ π.
    pub big_g: MapHandle,
    /// (center, rotation angles (a−1)θ*, B′ radius) for every sphere lift of
    /// every x_i, i ≥ 1.
    conformal: Arc<Vec<(SpherePoint, Vec<f64>, f64)>>,
}

impl std::fmt::Debug for UQRMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("UQRMap").field("config", &self.config).finish()
    }
}

fn default_z0(a: i64, n: usize) -> Result<SpherePoint> {
    let m = n + 1;
    let c = Complex64::from_polar(1.0 / (m as f64).sqrt(), PI / a as f64);
    SpherePoint::new(vec![c; m])
}

/// Gauge distance from z to {z_j = 0 for some j}: √(1 − max_{k≠j} |z_k|)
/// minimised over j, which for n = 1 is √(1 − max |z_k|).
fn branch_distance(z: &SpherePoint) -> f64 {
    let r = z.moduli();
    (0..r.len())
        .map(|j| {
            let rest: f64 = r.iter().enumerate().filter(|(k, _)| *k != j).map(|(_, x)| x * x).sum::<f64>().sqrt();
            (1.0 - rest).max(0.0).sqrt()
        })
        .fold(f64::INFINITY, f64::min)
}

/// max over concentric shells of B(center, R) of the gauge distance from
/// F_a(center) to F_a(q).
fn image_spread(a: i64, center: &SpherePoint, r: f64) -> Result<f64> {
    let f = multi_twist(a)?;
    let fc = f.eval(center)?;
    let ball = GaugeBall::new(center.clone(), r);
    let mut worst = 0.0f64;
    for frac in [0.25, 0.5, 0.75, 1.0] {
        for q in ball.shell(r * frac, 9, 16)? {
            worst = worst.max(fc.gauge(&f.eval(&q)?));
        }
    }
    Ok(worst)
}

fn evaluate_conditions(a: i64, r: f64, x0: &SpherePoint, preimages: &[SpherePoint], u: &GaugeBall, v: &GaugeBall, r0: &[f64]) -> Result<Vec<RadiusCondition>> {
    let mut out = Vec::with_capacity(5);
    let r0_min = r0.iter().cloned().fold(f64::INFINITY, f64::min);
    out.push(RadiusCondition { name: "R < R0(f, x_i) for all i".into(), value: r, bound: RADIUS_MARGIN * r0_min });
    out.push(RadiusCondition { name: "closed B(x0, R) inside V0".into(), value: image_spread(a, x0, r)?, bound: RADIUS_MARGIN * v.radius });
    let mut worst = 0.0f64;
    for x in preimages {
        worst = worst.max(image_spread(a, x, r)?);
    }
    out.push(RadiusCondition { name: "closed B(x_i, R) inside U_i".into(), value: worst, bound: RADIUS_MARGIN * u.radius });
    out.push(RadiusCondition { name: "closed B(z0, R) inside U".into(), value: r, bound: RADIUS_MARGIN * u.radius });
    out.push(RadiusCondition { name: "closed B(f(x0), R) inside V".into(), value: r, bound: RADIUS_MARGIN * v.radius });
    Ok(out)
}

fn first_failure(conds: &[RadiusCondition]) -> Option<&RadiusCondition> {
    conds.iter().find(|c| !(c.value < c.bound))
}

/// Builds the trap map for F_a on L_{p,q}.
pub fn build_trap(a: i64, spec: &LensSpec, overrides: Option<&TrapOverrides>) -> Result<UQRMap> {
    let ov = overrides.cloned().unwrap_or_default();
    if spec.n() != 1 {
        return Err(Error::Contract("the trap construction is implemented for L_{p,q} over S³".into()));
    }
    lens_multi_twist(a, spec)?;
    let f = multi_twist(a)?;
    let z0 = match ov.z0 {
        Some(z) => z,
        None => default_z0(a, spec.n())?,
    };
    z0.ensure_off_branch_locus()?;
    let x0 = lens_project(&z0, spec)?;
    let f_x0 = f.eval(&z0)?;
    if lens_project(&f_x0, spec)?.approx_eq(&x0, 1e-9) {
        return Err(Error::Rejected("x0 is fixed by the projected multi-twist".into()));
    }
    let sphere_pre = crate::map_zoo::twist_preimages(a, &z0, None)?;
    let preimages = crate::map_zoo::twist_preimages(a, &z0, Some(spec))?;
    let expected = (a.unsigned_abs() as usize).pow(2) / spec.p() as usize;
    if preimages.len() != expected {
        return Err(Error::Rejected(format!("found {} preimage classes, expected a^(n+1)/p = {expected}", preimages.len())));
    }
    if preimages.iter().chain(std::iter::once(&z0)).any(|x| x.min_modulus() < 1e-6) {
        return Err(Error::Rejected("a preimage of z0 lies on the branch locus".into()));
    }

    // U about z0 and V about f(x0): disjoint, off the branch values, and U
    // injective under π.
    let lens_sep = spec.orbit(&z0)?.iter().skip(1).map(|w| z0.gauge(w)).fold(f64::INFINITY, f64::min);
    let uv_sep = z0.gauge(&f_x0);
    let u_auto = RADIUS_MARGIN * (0.5 * lens_sep).min(0.5 * uv_sep).min(branch_distance(&z0));
    let v_auto = RADIUS_MARGIN * (0.5 * uv_sep).min(branch_distance(&f_x0));
    let u = GaugeBall::new(z0.clone(), ov.u_radius.unwrap_or(u_auto));
    let v = GaugeBall::new(f_x0.clone(), ov.v_radius.unwrap_or(v_auto));
    if u.radius + v.radius >= uv_sep {
        return Err(Error::Rejected(format!("U and V overlap: radii {} + {} ≥ separation {uv_sep}", u.radius, v.radius)));
    }
    if 2.0 * u.radius >= lens_sep {
        return Err(Error::Rejected("pi restricted to U is not injective".into()));
    }

    let mut centers_l = vec![x0.representative().clone()];
    centers_l.extend(preimages.iter().cloned());
    let r0: Vec<f64> = centers_l.iter().map(|c| admissible_radius(a, c)).collect::<Result<_>>()?;
    let check = |r: f64| evaluate_conditions(a, r, x0.representative(), &preimages, &u, &v, &r0);

    let radius = match ov.radius {
        Some(r) => r,
        None => {
            let mut lo = 1e-4;
            if let Some(c) = first_failure(&check(lo)?) {
                return Err(Error::Rejected(format!("radius condition unsatisfiable with margins: {}", c.name)));
            }
            let mut hi = std::f64::consts::FRAC_1_SQRT_2;
            if first_failure(&check(hi)?).is_none() {
                lo = hi;
            } else {
                for _ in 0..40 {
                    let mid = 0.5 * (lo + hi);
                    if first_failure(&check(mid)?).is_none() {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
            }
            lo
        }
    };
    let conditions = check(radius)?;
    if let Some(c) = first_failure(&conditions) {
        return Err(Error::Rejected(format!("radius condition fails at R = {radius}: {} ({} ≥ {})", c.name, c.value, c.bound)));
    }

    // One interpolant per sphere lift of x0 and of every x_i.
    let lifts: Vec<SpherePoint> = spec.orbit(&z0)?.into_iter().chain(sphere_pre.iter().cloned()).collect();
    let centers: Vec<Center> = lifts.par_iter().map(|c| Ok(Center { point: c.clone(), interp: trap_interpolant(a, c, radius)? })).collect::<Result<_>>()?;
    let r = centers.iter().map(|c| c.interp.b_prime.radius).fold(f64::INFINITY, f64::min);
    let inv_frac = ov.inversion_fraction.unwrap_or(INVERSION_FRACTION);
    let iota = inversion(&z0, inv_frac * r)?;

    let balls = centers_l.iter().map(|c| GaugeBall::new(c.clone(), radius)).collect();
    let primed_balls = centers_l.iter().map(|c| GaugeBall::new(c.clone(), r)).collect();
    let conformal: Vec<(SpherePoint, Vec<f64>, f64)> = centers
        .iter()
        .skip(spec.p() as usize)
        .map(|c| (c.point.clone(), c.interp.theta_star.iter().map(|t| t * (a - 1) as f64).collect(), c.interp.b_prime.radius))
        .collect();

    let centers = Arc::new(centers);
    let (cs, fe) = (centers.clone(), f.clone());
    let pick = move |z: &SpherePoint| cs.iter().find(|c| c.point.gauge(z) < radius).map(|c| c.interp.handle.clone());
    let pick2 = pick.clone();
    let g1 = MapHandle::custom(
        format!("g1(a={a})"),
        MapKind::FlowDefined,
        Arc::new(move |z: &SpherePoint| match pick(z) {
            Some(h) => h.eval(z),
            None => fe.eval(z),
        }),
        Some(Arc::new(move |z: &SpherePoint, v: &[Complex64]| match pick2(z) {
            Some(h) => Ok(Some(h.push_raw(z, v)?)),
            None => Ok(Some(f.push_raw(z, v)?)),
        })),
    );
    let pi = lens_projection(spec);
    let g = MapHandle::composite(vec![g1.clone(), iota.handle.clone(), pi.clone()]);
    let big_g = MapHandle::composite(vec![pi, g1.clone(), iota.handle.clone()]);

    let config = TrapConfig {
        a,
        spec: spec.clone(),
        x0: x0.representative().clone(),
        z0: z0.clone(),
        f_x0,
        u,
        v,
        radius,
        r,
        preimages,
        balls,
        primed_balls,
        inversion_center: z0,
        inversion_radius: inv_frac * r,
        conditions,
        admissible_radii: r0,
    };
    Ok(UQRMap { config, g1, iota, g, big_g, conformal: Arc::new(conformal) })
}

impl UQRMap {
    /// Region of the lens point represented by z.
    pub fn region(&self, z: &SpherePoint) -> Result<Region> {
        let lifts = self.config.spec.orbit(z)?;
        if lifts.iter().any(|w| self.iota.contains(w)) {
            return Ok(Region::Trap);
        }
        // The sphere lifts of the x_i form a lens-invariant set, so one
        // representative suffices.
        if self.conformal.iter().any(|(c, _, rad)| c.gauge(z) < *rad) {
            return Ok(Region::ConformalBall);
        }
        Ok(Region::Transit)
    }

    /// All g-preimages of y that lie in ∪ B′_i (i ≥ 1), one representative
    /// per lens point. Inside B′_i, g₁ is a rotation and ι is an involution,
    /// so the inverse branches are closed-form.
    pub fn conformal_preimages(&self, y: &SpherePoint) -> Result<Vec<SpherePoint>> {
        let spec = &self.config.spec;
        let mut out = Vec::new();
        for w in spec.orbit(y)? {
            let v = self.iota.handle.eval(&w)?;
            for (c, angles, rad) in self.conformal.iter() {
                let x = SpherePoint::new(v.coords().iter().zip(angles).map(|(z, t)| z * Complex64::from_polar(1.0, -t)).collect())?;
                if c.gauge(&x) < *rad {
                    let rep = lens_project(&x, spec)?.representative().clone();
                    if !out.iter().any(|o: &SpherePoint| o.approx_eq(&rep, 1e-12)) {
                        out.push(rep);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Local degree of g: a^{n+1}.
    pub fn degree(&self) -> usize {
        (self.config.a.unsigned_abs() as usize).pow(2)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrbitClassification {
    pub labels: Vec<Region>,
    /// Set when the orbit reached the branch locus or a map failure.
    pub truncated: bool,
}

impl OrbitClassification {
    /// TRAP is absorbing and TRANSIT is followed by TRAP.
    pub fn respects_contract(&self) -> bool {
        self.labels.windows(2).all(|w| match w[0] {
            Region::Trap | Region::Transit => w[1] == Region::Trap,
            Region::ConformalBall => true,
        })
    }
}

/// Labels of x, g(x), …, g^{n_max}(x).
pub fn classify_orbit(u: &UQRMap, x: &SpherePoint, n_max: usize) -> Result<OrbitClassification> {
    let mut q = lens_project(x, &u.config.spec)?.representative().clone();
    let mut labels = Vec::with_capacity(n_max + 1);
    for k in 0..=n_max {
        if q.on_branch_locus() {
            return Ok(OrbitClassification { labels, truncated: true });
        }
        labels.push(u.region(&q)?);
        if k == n_max {
            break;
        }
        q = match u.g.eval(&q) {
            Ok(next) => next,
            Err(_) => return Ok(OrbitClassification { labels, truncated: true }),
        };
    }
    Ok(OrbitClassification { labels, truncated: false })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JuliaPoint {
    pub point: SpherePoint,
    pub depth: usize,
    /// Index of the inverse-branch word (base deg g).
    pub word: u64,
    pub seed: usize,
    /// Diameter of the cluster of points sharing this word.
    pub diameter: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JuliaLevel {
    pub depth: usize,
    pub generated: usize,
    pub pruned: usize,
    pub max_diameter: f64,
    pub mean_diameter: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JuliaCloud {
    pub depth: usize,
    pub seeds: Vec<SpherePoint>,
    pub points: Vec<JuliaPoint>,
    pub levels: Vec<JuliaLevel>,
    /// exp of the slope of log(mean diameter) against depth, over the levels
    /// above [`DIAMETER_FLOOR`].
    pub decay_ratio: f64,
}

impl JuliaCloud {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Contract(e.to_string()))
    }

    /// x, y, t in the Heisenberg chart based at `base`, plus depth.
    pub fn to_csv(&self, base: &SpherePoint) -> Result<String> {
        let chart = heisenberg_chart(base)?;
        let mut out = String::from("x,y,t,depth\n");
        for p in &self.points {
            let h = chart.forward(&p.point)?;
            out.push_str(&format!("{:.12e},{:.12e},{:.12e},{}\n", h.x, h.y, h.t, p.depth));
        }
        Ok(out)
    }
}

/// Deterministic seeds in L minus the trap.
pub fn default_julia_seeds(u: &UQRMap) -> Result<Vec<SpherePoint>> {
    let mut seeds = Vec::new();
    for (r1, t1, t2) in
        [(0.3, 0.4, -1.1), (0.5, 2.0, 0.7), (0.7, -0.6, 2.5), (0.85, 1.3, -2.2), (0.45, -2.7, 0.2), (0.6, 0.1, 1.9), (0.25, -1.5, -0.4), (0.9, 2.9, 1.0)]
    {
        let z = SpherePoint::from_polar(&[r1, (1.0f64 - r1 * r1).sqrt()], &[t1, t2])?;
        if u.region(&z)? != Region::Trap {
            seeds.push(lens_project(&z, &u.config.spec)?.representative().clone());
        }
    }
    Ok(seeds)
}

fn lens_gauge(spec: &LensSpec, a: &SpherePoint, b: &SpherePoint) -> Result<f64> {
    Ok(spec.orbit(b)?.iter().map(|w| a.gauge(w)).fold(f64::INFINITY, f64::min))
}

fn fit_decay(levels: &[JuliaLevel]) -> f64 {
    let pts: Vec<(f64, f64)> = levels.iter().filter(|l| l.mean_diameter > DIAMETER_FLOOR).map(|l| (l.depth as f64, l.mean_diameter.ln())).collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxy / sxx).exp()
}

/// A point of the inverse-iteration tree: (point, seed index, branch word).
type Branch = (SpherePoint, usize, u64);

/// Inverse-iteration approximation of J(g) to the given depth.
pub fn julia_approx(u: &UQRMap, depth: usize) -> Result<JuliaCloud> {
    julia_approx_from(u, depth, &default_julia_seeds(u)?)
}

pub fn julia_approx_from(u: &UQRMap, depth: usize, seeds: &[SpherePoint]) -> Result<JuliaCloud> {
    if depth == 0 || depth > MAX_JULIA_DEPTH {
        return Err(Error::Contract(format!("Julia depth must lie in 1..={MAX_JULIA_DEPTH}, got {depth}")));
    }
    if seeds.is_empty() {
        return Err(Error::Contract("Julia approximation needs at least one seed".into()));
    }
    let spec = &u.config.spec;
    let deg = u.degree() as u64;
    let mut frontier: Vec<Branch> = seeds.iter().cloned().enumerate().map(|(i, s)| (s, i, 0)).collect();
    let mut points = Vec::new();
    let mut levels = Vec::new();
    for d in 1..=depth {
        let expanded: Vec<(Vec<Branch>, usize)> = frontier
            .par_iter()
            .map(|(y, seed, word)| match u.conformal_preimages(y) {
                Ok(pre) => {
                    let pruned = (deg as usize).saturating_sub(pre.len());
                    (pre.into_iter().enumerate().map(|(k, x)| (x, *seed, word * deg + k as u64)).collect(), pruned)
                }
                Err(_) => (Vec::new(), deg as usize),
            })
            .collect();
        let pruned: usize = expanded.iter().map(|e| e.1).sum();
        frontier = expanded.into_iter().flat_map(|e| e.0).collect();
        // Cluster by word.
        let mut order: Vec<usize> = (0..frontier.len()).collect();
        order.sort_by_key(|&i| frontier[i].2);
        let mut diam = vec![0.0; frontier.len()];
        let mut clusters: Vec<f64> = Vec::new();
        let mut start = 0;
        while start < order.len() {
            let mut end = start;
            while end < order.len() && frontier[order[end]].2 == frontier[order[start]].2 {
                end += 1;
            }
            let members = &order[start..end];
            let mut dmax = 0.0f64;
            for (ii, &i) in members.iter().enumerate() {
                for &j in &members[ii + 1..] {
                    dmax = dmax.max(lens_gauge(spec, &frontier[i].0, &frontier[j].0)?);
                }
            }
            for &i in members {
                diam[i] = dmax;
            }
            clusters.push(dmax);
            start = end;
        }
        levels.push(JuliaLevel {
            depth: d,
            generated: frontier.len(),
            pruned,
            max_diameter: clusters.iter().cloned().fold(0.0, f64::max),
            mean_diameter: if clusters.is_empty() { 0.0 } else { clusters.iter().sum::<f64>() / clusters.len() as f64 },
        });
        points.extend(frontier.iter().zip(&diam).map(|((p, s, w), dm)| JuliaPoint { point: p.clone(), depth: d, word: *w, seed: *s, diameter: *dm }));
    }
    let decay_ratio = fit_decay(&levels);
    Ok(JuliaCloud { depth, seeds: seeds.to_vec(), points, levels, decay_ratio })
}
