//! The det-1 SPD symmetric space and the invariant conformal structure of a
//! uniformly quasiregular map.
//!
//! A horizontal derivative D at p is recorded through its normalized Gram
//! matrix (det D)^{-2/d} DᵗD. Orbit sets of these matrices live in
//! SL(d)/SO(d), which for d = 2 is a hyperbolic plane scaled by √2; their
//! Chebyshev centers give the structure s_p.

use std::f64::consts::SQRT_2;

use nalgebra::{Matrix2, SymmetricEigen, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifolds::ball::GaugeBall;
use crate::manifolds::heisenberg::{heisenberg_chart, HeisenbergChart, HeisenbergPoint};
use crate::manifolds::lens::LensSpec;
use crate::manifolds::sphere::{principal_angle, SpherePoint};
use crate::map_zoo::{horizontal_matrix, rotation, MapHandle};
use crate::trap_dynamics::{Region, UQRMap};

/// Horizontal rank of S³.
pub const DIM: usize = 2;
const D: f64 = DIM as f64;

/// Determinant floor of [`normalized_gram`].
pub const SINGULAR_DET: f64 = 1e-12;
/// Orbits passing closer than this (min |z_i|) to the branch locus are excluded.
pub const BRANCH_EXCLUSION: f64 = 1e-3;
/// Iteration cap of farthest-point stepping.
pub const CENTER_ITERATIONS: usize = 500;
/// Sets with at most this many distinct elements get an exact center.
pub const EXACT_CENTER_MAX: usize = 16;
/// Excluded fraction above which a structure carries a warning.
pub const EXCLUSION_WARNING: f64 = 0.2;
pub const SCHEMA_VERSION: u32 = 1;
/// Default box extents of [`StructureGrid::for_trap`], in units of R and r′.
pub const TRAP_BOX_COVER: f64 = 1.1;
pub const BALL_BOX_COVER: f64 = 1.2;

/// A symmetric positive-definite matrix of determinant one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 4]", try_from = "[f64; 4]")]
pub struct SPDPoint(Matrix2<f64>);

impl From<SPDPoint> for [f64; 4] {
    fn from(s: SPDPoint) -> Self {
        s.row_major()
    }
}

impl TryFrom<[f64; 4]> for SPDPoint {
    type Error = Error;
    fn try_from(v: [f64; 4]) -> Result<Self> {
        SPDPoint::new(Matrix2::new(v[0], v[1], v[2], v[3]))
    }
}

impl SPDPoint {
    pub fn identity() -> Self {
        SPDPoint(Matrix2::identity())
    }

    /// Checks symmetry (1e-12), positivity and |det − 1| < 1e-10.
    pub fn new(m: Matrix2<f64>) -> Result<Self> {
        let scale = m.abs().max().max(1.0);
        if (m[(0, 1)] - m[(1, 0)]).abs() > 1e-12 * scale {
            return Err(Error::Contract("SPD point is not symmetric".into()));
        }
        if !(m[(0, 0)] > 0.0) || !(m.determinant() > 0.0) {
            return Err(Error::Contract("matrix is not positive definite".into()));
        }
        if (m.determinant() - 1.0).abs() > 1e-10 {
            return Err(Error::Contract(format!("SPD point has det {} ≠ 1", m.determinant())));
        }
        Ok(SPDPoint(m))
    }

    /// Symmetrizes and rescales to det 1.
    pub fn normalize(m: Matrix2<f64>) -> Result<Self> {
        let s = 0.5 * (m + m.transpose());
        let det = s.determinant();
        if !(det > 0.0) || !(s[(0, 0)] > 0.0) || !det.is_finite() {
            return Err(Error::Contract("matrix is not positive definite".into()));
        }
        let mut out = s / det.powf(1.0 / D);
        out[(1, 0)] = out[(0, 1)];
        SPDPoint::new(out)
    }

    pub fn matrix(&self) -> &Matrix2<f64> {
        &self.0
    }

    pub fn row_major(&self) -> [f64; 4] {
        [self.0[(0, 0)], self.0[(0, 1)], self.0[(1, 0)], self.0[(1, 1)]]
    }

    pub fn inverse(&self) -> SPDPoint {
        let m = &self.0;
        SPDPoint(Matrix2::new(m[(1, 1)], -m[(0, 1)], -m[(1, 0)], m[(0, 0)]) / m.determinant())
    }

    /// Hyperboloid coordinates ((a+c)/2, (a−c)/2, b), on x₀² − x₁² − x₂² = 1.
    fn hyperboloid(&self) -> Vector3<f64> {
        let m = &self.0;
        Vector3::new(0.5 * (m[(0, 0)] + m[(1, 1)]), 0.5 * (m[(0, 0)] - m[(1, 1)]), m[(0, 1)])
    }

    fn from_hyperboloid(x: &Vector3<f64>) -> Result<SPDPoint> {
        SPDPoint::normalize(Matrix2::new(x[0] + x[1], x[2], x[2], x[0] - x[1]))
    }
}

fn sym_apply(m: &Matrix2<f64>, f: impl Fn(f64) -> f64) -> Matrix2<f64> {
    let e = SymmetricEigen::new(0.5 * (m + m.transpose()));
    let d = Matrix2::from_diagonal(&e.eigenvalues.map(f));
    e.eigenvectors * d * e.eigenvectors.transpose()
}

fn sqrt_pair(a: &SPDPoint) -> (Matrix2<f64>, Matrix2<f64>) {
    let e = SymmetricEigen::new(a.0);
    let v = &e.eigenvectors;
    let s = e.eigenvalues.map(f64::sqrt);
    (v * Matrix2::from_diagonal(&s) * v.transpose(), v * Matrix2::from_diagonal(&s.map(|x| 1.0 / x)) * v.transpose())
}

/// ‖log(A^{-1/2} B A^{-1/2})‖_F (d = 2).
pub fn spd_distance(a: &SPDPoint, b: &SPDPoint) -> f64 {
    if a == b {
        return 0.0;
    }
    let (_, ainv) = sqrt_pair(a);
    let c = ainv * b.0 * ainv;
    let e = SymmetricEigen::new(0.5 * (c + c.transpose()));
    // det C = 1, so the log-eigenvalues are ±ln λ_max; the small eigenvalue
    // carries only absolute accuracy and is not used.
    SQRT_2 * e.eigenvalues.max().ln().abs()
}

/// A^{1/2}(A^{-1/2} B A^{-1/2})^t A^{1/2}, renormalized to det 1.
pub fn spd_geodesic(a: &SPDPoint, b: &SPDPoint, t: f64) -> Result<SPDPoint> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Contract(format!("geodesic parameter {t} outside [0, 1]")));
    }
    if t == 0.0 {
        return Ok(*a);
    }
    if t == 1.0 {
        return Ok(*b);
    }
    let (ah, ainv) = sqrt_pair(a);
    let c = ainv * b.0 * ainv;
    SPDPoint::normalize(ah * sym_apply(&c, |l| l.powf(t)) * ah)
}

/// The congruence action M·X = |det M|^{-2/d} MᵗXM.
pub fn congruence(m: &Matrix2<f64>, x: &SPDPoint) -> Result<SPDPoint> {
    let det = m.determinant().abs();
    if det < SINGULAR_DET {
        return Err(Error::Contract(format!("singular matrix (|det| = {det:e})")));
    }
    SPDPoint::normalize(m.transpose() * x.0 * m / det.powf(2.0 / D))
}

/// (det D)^{-2/d} DᵗD.
pub fn normalized_gram(d: &Matrix2<f64>) -> Result<SPDPoint> {
    congruence(d, &SPDPoint::identity())
}

/// Weighted Karcher mean. Weights need not be normalized.
pub fn karcher_mean(points: &[SPDPoint], weights: &[f64]) -> Result<SPDPoint> {
    if points.is_empty() || points.len() != weights.len() {
        return Err(Error::Contract("karcher_mean needs matching nonempty points and weights".into()));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Contract("karcher weights must have positive sum".into()));
    }
    let start = weights.iter().enumerate().fold(0, |best, (i, w)| if *w > weights[best] { i } else { best });
    let mut x = points[start];
    for _ in 0..50 {
        let (xh, xinv) = sqrt_pair(&x);
        let mut step = Matrix2::zeros();
        for (p, w) in points.iter().zip(weights) {
            step += sym_apply(&(xinv * p.0 * xinv), f64::ln) * (*w / total);
        }
        x = SPDPoint::normalize(xh * sym_apply(&step, f64::exp) * xh)?;
        if step.norm() < 1e-14 {
            break;
        }
    }
    Ok(x)
}

/// Normalized Grams of the iterates f⁰, f¹, …, f^N at p.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrbitSet {
    pub base: SpherePoint,
    pub elements: Vec<SPDPoint>,
    /// Iterate count n of each element.
    pub iterates: Vec<usize>,
    /// Orbit points f⁰(p), …, f^{len−1}(p).
    pub orbit: Vec<SpherePoint>,
    /// Largest singular-value ratio of the chained derivatives.
    pub max_ratio: f64,
    /// The orbit met the branch locus (or a map failure) before N.
    pub truncated: bool,
    /// Horizontal matrix of f at p (row-major), when the first step exists.
    pub first_step: Option<[f64; 4]>,
}

impl OrbitSet {
    /// Elements with iterate count at least `n0`.
    pub fn tail(&self, n0: usize) -> Vec<SPDPoint> {
        self.elements.iter().zip(&self.iterates).filter(|(_, n)| **n >= n0).map(|(e, _)| *e).collect()
    }

    /// Smallest |z_i| along the orbit.
    pub fn branch_clearance(&self) -> f64 {
        self.orbit.iter().map(|q| q.min_modulus()).fold(f64::INFINITY, f64::min)
    }
}

fn singular_ratio(m: &Matrix2<f64>) -> f64 {
    let s = m.singular_values();
    s.max() / s.min()
}

/// Chain-ruled horizontal derivatives of m, m², …, m^N at p.
pub fn orbit_set(m: &MapHandle, p: &SpherePoint, n: usize) -> Result<OrbitSet> {
    let mut out = OrbitSet {
        base: p.clone(),
        elements: vec![SPDPoint::identity()],
        iterates: vec![0],
        orbit: vec![p.clone()],
        max_ratio: 1.0,
        truncated: false,
        first_step: None,
    };
    let mut acc = Matrix2::identity();
    let mut q = p.clone();
    for k in 1..=n {
        if !m.in_smooth_domain(&q) {
            out.truncated = true;
            break;
        }
        let Ok((h, next)) = horizontal_matrix(m, &q) else {
            out.truncated = true;
            break;
        };
        // Grams are scale-free; rescaling keeps strongly contracting orbits
        // clear of underflow.
        if k == 1 {
            out.first_step = Some([h[(0, 0)], h[(0, 1)], h[(1, 0)], h[(1, 1)]]);
        }
        acc = h * acc;
        let det = acc.determinant().abs();
        if !(det > 0.0 && det.is_finite()) {
            out.truncated = true;
            break;
        }
        acc /= det.sqrt();
        let Ok(g) = normalized_gram(&acc) else {
            out.truncated = true;
            break;
        };
        out.max_ratio = out.max_ratio.max(singular_ratio(&acc));
        out.elements.push(g);
        out.iterates.push(k);
        out.orbit.push(next.clone());
        q = next;
    }
    Ok(out)
}

fn covering_radius(c: &SPDPoint, set: &[SPDPoint]) -> f64 {
    set.iter().map(|s| spd_distance(c, s)).fold(0.0, f64::max)
}

fn distinct(set: &[SPDPoint]) -> Vec<SPDPoint> {
    let mut out: Vec<SPDPoint> = Vec::new();
    for s in set {
        if !out.iter().any(|o| (o.0 - s.0).abs().max() < 1e-13) {
            out.push(*s);
        }
    }
    out
}

fn lorentz(x: &Vector3<f64>, y: &Vector3<f64>) -> f64 {
    x[0] * y[0] - x[1] * y[1] - x[2] * y[2]
}

/// The point equidistant from three hyperboloid points, if it is finite.
fn circumcenter(a: &SPDPoint, b: &SPDPoint, c: &SPDPoint) -> Option<SPDPoint> {
    let (x, y, z) = (a.hyperboloid(), b.hyperboloid(), c.hyperboloid());
    let n = (x - y).cross(&(x - z));
    let mut w = Vector3::new(n[0], -n[1], -n[2]);
    let q = lorentz(&w, &w);
    if !(q > 1e-300) {
        return None;
    }
    w /= q.sqrt();
    if w[0] < 0.0 {
        w = -w;
    }
    SPDPoint::from_hyperboloid(&w).ok()
}

/// Exact 1-center in dimension 2: the minimum ball is fixed by at most
/// three elements, so it is the best of the points, pair midpoints and
/// triple circumcenters.
fn exact_center(set: &[SPDPoint]) -> Result<(SPDPoint, f64)> {
    let mut best = (set[0], covering_radius(&set[0], set));
    let mut consider = |c: SPDPoint| {
        let r = covering_radius(&c, set);
        if r < best.1 {
            best = (c, r);
        }
    };
    for i in 0..set.len() {
        consider(set[i]);
        for j in i + 1..set.len() {
            consider(spd_geodesic(&set[i], &set[j], 0.5)?);
            for k in j + 1..set.len() {
                if let Some(c) = circumcenter(&set[i], &set[j], &set[k]) {
                    consider(c);
                }
            }
        }
    }
    Ok(best)
}

/// Farthest-point geodesic stepping with step 1/(k+1). Returns the best
/// center seen and its covering radius.
pub fn chebyshev_center_stepping(set: &[SPDPoint], iterations: usize) -> Result<(SPDPoint, f64)> {
    if set.is_empty() {
        return Err(Error::Contract("chebyshev_center needs a nonempty set".into()));
    }
    let mut c = set[0];
    let mut best = (c, covering_radius(&c, set));
    let mut last_check = best.1;
    for k in 1..=iterations {
        let far = set.iter().max_by(|a, b| spd_distance(&c, a).total_cmp(&spd_distance(&c, b))).expect("nonempty");
        c = spd_geodesic(&c, far, 1.0 / (k + 1) as f64)?;
        let r = covering_radius(&c, set);
        if !r.is_finite() {
            return Err(Error::NonConvergent("farthest-point stepping diverged".into()));
        }
        if r < best.1 {
            best = (c, r);
        }
        if k % 50 == 0 {
            if last_check - best.1 < 1e-9 {
                break;
            }
            last_check = best.1;
        }
    }
    Ok(best)
}

/// Riemannian 1-center of S and its covering radius.
pub fn chebyshev_center(set: &[SPDPoint]) -> Result<(SPDPoint, f64)> {
    if set.is_empty() {
        return Err(Error::Contract("chebyshev_center needs a nonempty set".into()));
    }
    let uniq = distinct(set);
    if uniq.len() == 1 {
        return Ok((uniq[0], 0.0));
    }
    if uniq.len() <= EXACT_CENTER_MAX {
        return exact_center(&uniq);
    }
    let (c, r) = chebyshev_center_stepping(&uniq, CENTER_ITERATIONS)?;
    // Polish on the elements that nearly realise the radius.
    let support: Vec<SPDPoint> = uniq.iter().filter(|s| spd_distance(&c, s) > r - 0.05 * r.max(1e-3)).copied().collect();
    if support.len() <= EXACT_CENTER_MAX {
        let (c2, _) = exact_center(&support)?;
        let r2 = covering_radius(&c2, &uniq);
        if r2 < r {
            return Ok((c2, r2));
        }
    }
    Ok((c, r))
}

/// One block of a structure grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GridBlock {
    /// Cell-centred ψ ∈ (0, π/2) with r = (cos ψ, sin ψ), θ₁ ∈ [0, 2π/p),
    /// θ₂ ∈ [0, 2π).
    LensPolar { n: [usize; 3] },
    /// Cell-centred box [−h, h] in the Heisenberg chart at `center`.
    ChartBox { center: SpherePoint, half: [f64; 3], n: [usize; 3] },
}

impl GridBlock {
    fn len(&self) -> usize {
        let n = match self {
            GridBlock::LensPolar { n } | GridBlock::ChartBox { n, .. } => n,
        };
        n[0] * n[1] * n[2]
    }

    fn dims(&self) -> [usize; 3] {
        match self {
            GridBlock::LensPolar { n } | GridBlock::ChartBox { n, .. } => *n,
        }
    }
}

/// A union of blocks on a lens space. Lookups use the finest block that
/// covers the query.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StructureGrid {
    pub spec: LensSpec,
    pub blocks: Vec<GridBlock>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridPoint {
    pub block: usize,
    pub index: [usize; 3],
    pub point: SpherePoint,
}

struct Neighbor {
    flat: usize,
    dist: f64,
    /// s at the neighbor, in the query lift, is congruence(q, stored).
    q: Matrix2<f64>,
}

impl StructureGrid {
    pub fn lens_polar(spec: &LensSpec, n: usize) -> Result<Self> {
        if spec.n() != 1 {
            return Err(Error::Contract("structure grids live on lens spaces over S³".into()));
        }
        if n < 2 || !n.is_multiple_of(spec.p() as usize) {
            return Err(Error::Contract(format!("lens grid size {n} must be ≥ 2 and divisible by p = {}", spec.p())));
        }
        Ok(StructureGrid { spec: spec.clone(), blocks: vec![GridBlock::LensPolar { n: [n; 3] }] })
    }

    /// Adds an n³ chart box that covers the gauge ball B(center, radius).
    pub fn with_box(mut self, center: &SpherePoint, radius: f64, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Contract("chart boxes need n ≥ 2".into()));
        }
        let chart = heisenberg_chart(center)?;
        let mut half = [0.0f64; 3];
        for q in GaugeBall::new(center.clone(), radius).shell(radius, 33, 48)? {
            let h = chart.forward(&q)?;
            for (m, v) in half.iter_mut().zip([h.x, h.y, h.t]) {
                *m = m.max(v.abs());
            }
        }
        self.blocks.push(GridBlock::ChartBox { center: center.clone(), half, n: [n; 3] });
        Ok(self)
    }

    /// The lens grid of size n with n³ boxes covering B(x₀, trap_cover·R)
    /// and B(x_i, ball_cover·r′) for every conformal-ball center.
    pub fn for_trap_with(u: &UQRMap, n: usize, trap_cover: f64, ball_cover: f64) -> Result<Self> {
        let mut g = StructureGrid::lens_polar(&u.config.spec, n)?;
        for (i, b) in u.config.primed_balls.iter().enumerate() {
            let radius = if i == 0 { trap_cover * u.config.radius } else { ball_cover * b.radius };
            g = g.with_box(&b.center, radius, n)?;
        }
        Ok(g)
    }

    pub fn for_trap(u: &UQRMap, n: usize) -> Result<Self> {
        Self::for_trap_with(u, n, TRAP_BOX_COVER, BALL_BOX_COVER)
    }

    /// Every block with twice the resolution and the same extent.
    pub fn refined(&self) -> Self {
        let blocks = self
            .blocks
            .iter()
            .map(|b| match b {
                GridBlock::LensPolar { n } => GridBlock::LensPolar { n: n.map(|k| 2 * k) },
                GridBlock::ChartBox { center, half, n } => GridBlock::ChartBox { center: center.clone(), half: *half, n: n.map(|k| 2 * k) },
            })
            .collect();
        StructureGrid { spec: self.spec.clone(), blocks }
    }

    pub fn len(&self) -> usize {
        self.blocks.iter().map(GridBlock::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn offset(&self, block: usize) -> usize {
        self.blocks[..block].iter().map(GridBlock::len).sum()
    }

    fn flat(&self, block: usize, i: [usize; 3]) -> usize {
        let n = self.blocks[block].dims();
        self.offset(block) + (i[0] * n[1] + i[1]) * n[2] + i[2]
    }

    fn polar_point(&self, n: [usize; 3], i: [f64; 3]) -> Result<SpherePoint> {
        let p = self.spec.p() as f64;
        let psi = (i[0] + 0.5) * std::f64::consts::FRAC_PI_2 / n[0] as f64;
        let t1 = i[1] * 2.0 * std::f64::consts::PI / (p * n[1] as f64);
        let t2 = i[2] * 2.0 * std::f64::consts::PI / n[2] as f64;
        SpherePoint::from_polar(&[psi.cos(), psi.sin()], &[t1, t2])
    }

    fn box_coord(half: &[f64; 3], n: [usize; 3], i: [usize; 3]) -> HeisenbergPoint {
        let c: Vec<f64> = (0..3).map(|k| -half[k] + (i[k] as f64 + 0.5) * 2.0 * half[k] / n[k] as f64).collect();
        HeisenbergPoint::new(c[0], c[1], c[2])
    }

    pub fn points(&self) -> Result<Vec<GridPoint>> {
        let mut out = Vec::with_capacity(self.len());
        for (b, block) in self.blocks.iter().enumerate() {
            let n = block.dims();
            let chart = match block {
                GridBlock::ChartBox { center, .. } => Some(heisenberg_chart(center)?),
                GridBlock::LensPolar { .. } => None,
            };
            for i in 0..n[0] {
                for j in 0..n[1] {
                    for k in 0..n[2] {
                        let point = match (block, &chart) {
                            (GridBlock::ChartBox { half, .. }, Some(c)) => c.inverse(&Self::box_coord(half, n, [i, j, k])),
                            _ => self.polar_point(n, [i as f64, j as f64, k as f64])?,
                        };
                        out.push(GridPoint { block: b, index: [i, j, k], point });
                    }
                }
            }
        }
        Ok(out)
    }

    /// Rotation R^k and its horizontal matrix at z (which maps frame
    /// coordinates at z to those at R^k z).
    fn deck(&self, z: &SpherePoint, k: i64) -> Result<(SpherePoint, Matrix2<f64>)> {
        if k == 0 {
            return Ok((z.clone(), Matrix2::identity()));
        }
        let (h, w) = horizontal_matrix(&rotation(self.spec.rotation_angles(k)), z)?;
        Ok((w, h))
    }

    /// k with R^k shifting θ₁ by −2πm/p.
    fn shift_power(&self, m: i64) -> i64 {
        let p = self.spec.p() as i64;
        let q1 = self.spec.q()[0];
        (0..p).find(|k| (q1 * k - (p - m)).rem_euclid(p) == 0).expect("q₁ is a unit mod p")
    }

    /// The lift of z with θ₁ ∈ [0, 2π/p), its deck matrix and local θ₁.
    fn polar_lift(&self, z: &SpherePoint) -> Result<(SpherePoint, Matrix2<f64>, f64)> {
        let p = self.spec.p() as i64;
        let width = 2.0 * std::f64::consts::PI / p as f64;
        let th = principal_angle(z.coords()[0]).rem_euclid(2.0 * std::f64::consts::PI);
        let m = ((th / width).floor() as i64).clamp(0, p - 1);
        let (w, q) = self.deck(z, self.shift_power(m))?;
        Ok((w, q, (th - m as f64 * width).clamp(0.0, width)))
    }

    /// Neighbors of z (in z's own lift) from the finest covering block.
    fn neighbors(&self, z: &SpherePoint) -> Result<Option<Vec<Neighbor>>> {
        let p = self.spec.p() as i64;
        let mut boxes: Vec<(f64, usize)> = Vec::new();
        let mut polar = None;
        for (b, block) in self.blocks.iter().enumerate() {
            match block {
                GridBlock::ChartBox { half, n, .. } => boxes.push((half[0] / n[0] as f64, b)),
                GridBlock::LensPolar { .. } => polar = Some(b),
            }
        }
        boxes.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (_, b) in boxes {
            let GridBlock::ChartBox { center, half, n } = &self.blocks[b] else { unreachable!() };
            let mut lift = None;
            for k in 0..p {
                let (w, q) = self.deck(z, k)?;
                let g = center.gauge(&w);
                if lift.as_ref().is_none_or(|(d, _, _)| g < *d) {
                    lift = Some((g, w, q));
                }
            }
            let (_, w, q) = lift.expect("p ≥ 1");
            let chart: HeisenbergChart = heisenberg_chart(center)?;
            let Ok(h) = chart.forward(&w) else { continue };
            let f: Vec<f64> = [h.x, h.y, h.t].iter().enumerate().map(|(k, v)| (v + half[k]) * n[k] as f64 / (2.0 * half[k]) - 0.5).collect();
            if (0..3).any(|k| f[k] < 0.0 || f[k] > (n[k] - 1) as f64) {
                continue;
            }
            let lo: Vec<usize> = (0..3).map(|k| (f[k].floor() as usize).min(n[k] - 2)).collect();
            let mut out = Vec::with_capacity(8);
            for c in 0..8 {
                let idx = [lo[0] + (c & 1), lo[1] + ((c >> 1) & 1), lo[2] + ((c >> 2) & 1)];
                let dist = (0..3).map(|k| (f[k] - idx[k] as f64).powi(2)).sum::<f64>().sqrt();
                out.push(Neighbor { flat: self.flat(b, idx), dist, q });
            }
            return Ok(Some(out));
        }
        let Some(b) = polar else { return Ok(None) };
        let GridBlock::LensPolar { n } = self.blocks[b] else { unreachable!() };
        let (w, q, t1) = self.polar_lift(z)?;
        let r = w.moduli();
        let psi = r[1].atan2(r[0]);
        let two_pi = 2.0 * std::f64::consts::PI;
        let f = [
            psi * n[0] as f64 / std::f64::consts::FRAC_PI_2 - 0.5,
            t1 * p as f64 * n[1] as f64 / two_pi,
            principal_angle(w.coords()[1]).rem_euclid(two_pi) * n[2] as f64 / two_pi,
        ];
        let i0 = f[0].floor() as i64;
        let (j0, k0) = (f[1].floor() as i64, f[2].floor() as i64);
        let mut out = Vec::with_capacity(8);
        for c in 0..8 {
            let (i, j, k) = (i0 + (c & 1), j0 + ((c >> 1) & 1), k0 + ((c >> 2) & 1));
            if i < 0 || i >= n[0] as i64 {
                continue;
            }
            let dist = ((f[0] - i as f64).powi(2) + (f[1] - j as f64).powi(2) + (f[2] - k as f64).powi(2)).sqrt();
            let (jj, kk, qc) = if j >= n[1] as i64 {
                // The corner sits at θ₁ = 2π/p; R^{k'} carries it to θ₁ = 0.
                let corner = self.polar_point(n, [i as f64, j as f64, k as f64])?;
                let kp = self.shift_power(1);
                let shift = (self.spec.q()[1] * kp).rem_euclid(p) * n[2] as i64 / p;
                let (_, cq) = self.deck(&corner, kp)?;
                (0usize, (k + shift).rem_euclid(n[2] as i64) as usize, cq)
            } else {
                (j as usize, k.rem_euclid(n[2] as i64) as usize, Matrix2::identity())
            };
            out.push(Neighbor { flat: self.flat(b, [i as usize, jj, kk]), dist, q: qc * q });
        }
        Ok(Some(out))
    }
}

/// Per-point structure data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StructureEntry {
    pub block: usize,
    pub index: [usize; 3],
    pub point: SpherePoint,
    pub valid: bool,
    /// s_p in the frame (X, iX) at `point`.
    pub s: Option<SPDPoint>,
    /// Covering radius of the averaged set about s_p (0 when invalid).
    pub radius: f64,
    /// Covering radius of the whole orbit set n = 0..N about its own center.
    pub orbit_radius: f64,
    pub max_ratio: f64,
    pub region: Option<Region>,
    /// Horizontal matrix of the map at `point` (row-major) and the image.
    pub step: Option<[f64; 4]>,
    pub image: Option<SpherePoint>,
}

/// The averaged structure on a grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConformalStructure {
    pub schema_version: u32,
    pub grid: StructureGrid,
    pub iterates: usize,
    pub tail_start: usize,
    pub entries: Vec<StructureEntry>,
    pub max_radius: f64,
    pub max_orbit_radius: f64,
    /// Largest singular-value ratio seen along valid orbits.
    pub distortion_bound: f64,
    /// √2 ln K: every orbit element lies this close to the identity.
    pub radius_bound: f64,
    pub excluded_fraction: f64,
    pub warning: Option<String>,
}

impl ConformalStructure {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Contract(format!("serialisation failed: {e}")))
    }

    /// s at an arbitrary point by a distance-weighted Karcher blend of at
    /// most 4 valid grid neighbors. None when no block covers z.
    pub fn interpolate(&self, z: &SpherePoint) -> Result<Option<SPDPoint>> {
        let Some(mut nb) = self.grid.neighbors(z)? else { return Ok(None) };
        nb.retain(|n| self.entries[n.flat].s.is_some());
        nb.sort_by(|a, b| a.dist.total_cmp(&b.dist));
        nb.truncate(4);
        if nb.is_empty() {
            return Ok(None);
        }
        if nb[0].dist < 1e-12 {
            return congruence(&nb[0].q, &self.entries[nb[0].flat].s.expect("retained")).map(Some);
        }
        let pts: Vec<SPDPoint> = nb.iter().map(|n| congruence(&n.q, &self.entries[n.flat].s.expect("retained"))).collect::<Result<_>>()?;
        let w: Vec<f64> = nb.iter().map(|n| 1.0 / n.dist).collect();
        karcher_mean(&pts, &w).map(Some)
    }
}

/// Orbit sets and centers at every grid point. s_p is the center of the
/// elements with n ≥ tail_start.
pub fn build_structure_map(m: &MapHandle, grid: &StructureGrid, n: usize, tail_start: usize) -> Result<ConformalStructure> {
    if grid.is_empty() {
        return Err(Error::Contract("empty structure grid".into()));
    }
    if n == 0 || tail_start > n {
        return Err(Error::Contract(format!("need 1 ≤ N and tail start ≤ N (N = {n}, start = {tail_start})")));
    }
    let pts = grid.points()?;
    let entries: Vec<StructureEntry> = pts
        .into_par_iter()
        .map(|gp| {
            let mut e = StructureEntry {
                block: gp.block,
                index: gp.index,
                point: gp.point.clone(),
                valid: false,
                s: None,
                radius: 0.0,
                orbit_radius: 0.0,
                max_ratio: 1.0,
                region: None,
                step: None,
                image: None,
            };
            let os = orbit_set(m, &gp.point, n)?;
            if os.truncated || os.branch_clearance() < BRANCH_EXCLUSION {
                return Ok(e);
            }
            let (s, r) = chebyshev_center(&os.tail(tail_start))?;
            let (_, full) = chebyshev_center(&os.elements)?;
            e.valid = true;
            e.s = Some(s);
            e.radius = r;
            e.orbit_radius = full;
            e.max_ratio = os.max_ratio;
            e.step = os.first_step;
            e.image = Some(os.orbit[1].clone());
            Ok(e)
        })
        .collect::<Result<_>>()?;
    let valid: Vec<&StructureEntry> = entries.iter().filter(|e| e.valid).collect();
    let excluded_fraction = 1.0 - valid.len() as f64 / entries.len() as f64;
    let max_radius = valid.iter().map(|e| e.radius).fold(0.0, f64::max);
    let max_orbit_radius = valid.iter().map(|e| e.orbit_radius).fold(0.0, f64::max);
    let distortion_bound = valid.iter().map(|e| e.max_ratio).fold(1.0, f64::max);
    let warning =
        (excluded_fraction > EXCLUSION_WARNING).then(|| format!("{:.1}% of the grid lies on branch orbits and was excluded", 100.0 * excluded_fraction));
    Ok(ConformalStructure {
        schema_version: SCHEMA_VERSION,
        grid: grid.clone(),
        iterates: n,
        tail_start,
        entries,
        max_radius,
        max_orbit_radius,
        distortion_bound,
        radius_bound: SQRT_2 * distortion_bound.ln(),
        excluded_fraction,
        warning,
    })
}

/// Default tail start for N iterates.
pub fn default_tail_start(n: usize) -> usize {
    (n / 2).max(1)
}

/// The invariant structure of the trap map g, with region tags.
pub fn build_structure(u: &UQRMap, grid: &StructureGrid, n: usize) -> Result<ConformalStructure> {
    let mut cs = build_structure_map(&u.g, grid, n, default_tail_start(n))?;
    cs.entries.par_iter_mut().try_for_each(|e| -> Result<()> {
        e.region = Some(u.region(&e.point)?);
        Ok(())
    })?;
    Ok(cs)
}

/// Per-point invariance defect d(f_p · s_{f(p)}, s_p). None for invalid
/// points and for images outside the grid coverage.
pub fn invariance_residual(cs: &ConformalStructure, m: &MapHandle) -> Result<Vec<Option<f64>>> {
    cs.entries
        .par_iter()
        .map(|e| {
            let Some(s) = e.s else { return Ok(None) };
            let (h, y) = horizontal_matrix(m, &e.point)?;
            let Some(sy) = cs.interpolate(&y)? else { return Ok(None) };
            Ok(Some(spd_distance(&congruence(&h, &sy)?, &s)))
        })
        .collect()
}

/// [`invariance_residual`] for the map the structure was built from, reusing
/// the first orbit step stored with every entry.
pub fn invariance_residual_cached(cs: &ConformalStructure) -> Result<Vec<Option<f64>>> {
    cs.entries
        .par_iter()
        .map(|e| {
            let (Some(s), Some(step), Some(y)) = (e.s, e.step, e.image.as_ref()) else { return Ok(None) };
            let Some(sy) = cs.interpolate(y)? else { return Ok(None) };
            let h = Matrix2::new(step[0], step[1], step[2], step[3]);
            Ok(Some(spd_distance(&congruence(&h, &sy)?, &s)))
        })
        .collect()
}

/// Aggregate of a residual vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualSummary {
    pub count: usize,
    pub excluded: usize,
    pub mean: f64,
    pub max: f64,
}

impl ResidualSummary {
    pub fn new(res: &[Option<f64>]) -> Self {
        let vals: Vec<f64> = res.iter().flatten().copied().collect();
        let mean = if vals.is_empty() { f64::NAN } else { vals.iter().sum::<f64>() / vals.len() as f64 };
        ResidualSummary { count: vals.len(), excluded: res.len() - vals.len(), mean, max: vals.iter().copied().fold(0.0, f64::max) }
    }
}

pub const RESIDUAL_CSV_HEADER: &str = "block,i,j,k,residual";

/// One row per grid point; excluded points have an empty residual.
pub fn residual_csv(cs: &ConformalStructure, res: &[Option<f64>]) -> String {
    let mut out = String::from(RESIDUAL_CSV_HEADER);
    out.push('\n');
    for (e, r) in cs.entries.iter().zip(res) {
        let v = r.map(|x| format!("{x:.12e}")).unwrap_or_default();
        out.push_str(&format!("{},{},{},{},{v}\n", e.block, e.index[0], e.index[1], e.index[2]));
    }
    out
}

/// Dense search in the Klein model, where the geodesic hull is the
/// Euclidean convex hull: coarse grid over the bounding box, then a
/// zoomed grid about the best candidate.
pub fn brute_force_center(set: &[SPDPoint], grid: usize) -> (SPDPoint, f64) {
    let klein: Vec<(f64, f64)> = set
        .iter()
        .map(|s| {
            let x = s.hyperboloid();
            (x[1] / x[0], x[2] / x[0])
        })
        .collect();
    let from_klein = |u: f64, v: f64| -> Option<SPDPoint> {
        let q = 1.0 - u * u - v * v;
        if q <= 0.0 {
            return None;
        }
        let x0 = 1.0 / q.sqrt();
        SPDPoint::from_hyperboloid(&Vector3::new(x0, x0 * u, x0 * v)).ok()
    };
    let (mut lo_u, mut hi_u, mut lo_v, mut hi_v) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for (u, v) in &klein {
        lo_u = lo_u.min(*u);
        hi_u = hi_u.max(*u);
        lo_v = lo_v.min(*v);
        hi_v = hi_v.max(*v);
    }
    let mut best = (SPDPoint::identity(), f64::INFINITY);
    let m = grid.max(4);
    for _zoom in 0..3 {
        let (du, dv) = ((hi_u - lo_u) / m as f64, (hi_v - lo_v) / m as f64);
        let mut best_uv = (0.0, 0.0);
        for i in 0..=m {
            for j in 0..=m {
                let (u, v) = (lo_u + i as f64 * du, lo_v + j as f64 * dv);
                if let Some(c) = from_klein(u, v) {
                    let r = covering_radius(&c, set);
                    if r < best.1 {
                        best = (c, r);
                        best_uv = (u, v);
                    }
                }
            }
        }
        (lo_u, hi_u, lo_v, hi_v) = (best_uv.0 - 2.0 * du, best_uv.0 + 2.0 * du, best_uv.1 - 2.0 * dv, best_uv.1 + 2.0 * dv);
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifolds::sphere::SpherePoint;
    use crate::map_zoo::multi_twist;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::E;

    fn diag(a: f64, b: f64) -> SPDPoint {
        SPDPoint::normalize(Matrix2::new(a, 0.0, 0.0, b)).unwrap()
    }

    fn random_matrix(rng: &mut ChaCha8Rng, scale: f64) -> Matrix2<f64> {
        loop {
            let m = Matrix2::from_fn(|_, _| rng.gen_range(-scale..scale));
            if m.determinant().abs() > 0.1 * scale * scale && singular_ratio(&m) < 20.0 {
                return m;
            }
        }
    }

    /// exp of a random traceless symmetric matrix with entries below `spread`.
    fn random_spd(rng: &mut ChaCha8Rng, spread: f64) -> SPDPoint {
        let (u, v) = (rng.gen_range(-spread..spread), rng.gen_range(-spread..spread));
        SPDPoint::normalize(sym_apply(&Matrix2::new(u, v, v, -u), f64::exp)).unwrap()
    }

    #[test]
    fn distance_and_geodesic_basics() {
        let a = diag(3.0, 1.0);
        let b = diag(0.5, 2.0);
        assert_eq!(spd_distance(&a, &a), 0.0);
        assert_eq!(spd_geodesic(&a, &b, 0.0).unwrap(), a);
        assert_eq!(spd_geodesic(&a, &b, 1.0).unwrap(), b);
        let d = spd_distance(&SPDPoint::identity(), &SPDPoint::new(Matrix2::new(E, 0.0, 0.0, 1.0 / E)).unwrap());
        assert!((d - SQRT_2).abs() < 1e-14, "{d}");
        let mid = spd_geodesic(&a, &b, 0.3).unwrap();
        let total = spd_distance(&a, &b);
        assert!((spd_distance(&a, &mid) - 0.3 * total).abs() < 1e-12);
        assert!((spd_distance(&mid, &b) - 0.7 * total).abs() < 1e-12);
        assert!(spd_geodesic(&a, &b, 1.5).is_err());
    }

    #[test]
    fn congruence_is_an_isometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let (a, b) = (random_spd(&mut rng, 1.0), random_spd(&mut rng, 1.0));
            let m = random_matrix(&mut rng, 1.0);
            let d0 = spd_distance(&a, &b);
            let d1 = spd_distance(&congruence(&m, &a).unwrap(), &congruence(&m, &b).unwrap());
            assert!((d0 - d1).abs() < 1e-10, "{d0} vs {d1}");
        }
    }

    #[test]
    fn normalized_gram_examples() {
        let q = nalgebra::Rotation2::new(0.7).into_inner();
        assert!((normalized_gram(&q).unwrap().matrix() - Matrix2::identity()).norm() < 1e-15);
        let g = normalized_gram(&Matrix2::new(2.0, 0.0, 0.0, 1.0)).unwrap();
        assert!((g.matrix() - Matrix2::new(2.0, 0.0, 0.0, 0.5)).norm() < 1e-15);
        assert!((normalized_gram(&(q * 3.7)).unwrap().matrix() - Matrix2::identity()).norm() < 1e-14);
        let reflect = Matrix2::new(1.0, 0.0, 0.0, -1.0) * q * 0.2;
        assert!((normalized_gram(&reflect).unwrap().matrix() - Matrix2::identity()).norm() < 1e-14);
        assert!(normalized_gram(&Matrix2::new(1.0, 2.0, 2.0, 4.0)).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let d = random_matrix(&mut rng, 3.0);
            let q = nalgebra::Rotation2::new(rng.gen_range(0.0..6.3)).into_inner();
            let (a, b) = (normalized_gram(&(q * d)).unwrap(), normalized_gram(&d).unwrap());
            assert!(spd_distance(&a, &b) < 1e-10);
        }
    }

    #[test]
    fn spd_point_validation_and_serde() {
        assert!(SPDPoint::new(Matrix2::new(2.0, 0.0, 0.0, 2.0)).is_err());
        assert!(SPDPoint::new(Matrix2::new(1.0, 0.1, 0.0, 1.0)).is_err());
        assert!(SPDPoint::new(Matrix2::new(-1.0, 0.0, 0.0, -1.0)).is_err());
        let a = diag(4.0, 1.0);
        let s = serde_json::to_string(&a).unwrap();
        assert_eq!(s, "[2.0,0.0,0.0,0.5]");
        assert_eq!(serde_json::from_str::<SPDPoint>(&s).unwrap(), a);
        assert!(serde_json::from_str::<SPDPoint>("[1.0,0.0,0.0,2.0]").is_err());
    }

    #[test]
    fn karcher_mean_of_symmetric_pair_is_identity() {
        let a = diag(E, 1.0 / E);
        let m = karcher_mean(&[a, a.inverse()], &[1.0, 1.0]).unwrap();
        assert!(spd_distance(&m, &SPDPoint::identity()) < 1e-12);
        let w = karcher_mean(&[a, a.inverse()], &[3.0, 1.0]).unwrap();
        let expect = spd_geodesic(&a, &a.inverse(), 0.25).unwrap();
        assert!(spd_distance(&w, &expect) < 1e-10);
    }

    #[test]
    fn center_fixtures() {
        let a = diag(3.0, 1.0);
        let (c, r) = chebyshev_center(&[a]).unwrap();
        assert_eq!((c, r), (a, 0.0));
        let e = SPDPoint::new(Matrix2::new(E, 0.0, 0.0, 1.0 / E)).unwrap();
        let (c, r) = chebyshev_center(&[e, e.inverse()]).unwrap();
        assert!(spd_distance(&c, &SPDPoint::identity()) < 1e-9);
        assert!((r - SQRT_2).abs() < 1e-9);
        let (c2, r2) = chebyshev_center_stepping(&[e, e.inverse()], CENTER_ITERATIONS).unwrap();
        assert!(spd_distance(&c2, &SPDPoint::identity()) < 1e-2 && (r2 - SQRT_2).abs() < 1e-2);
    }

    #[test]
    fn center_matches_brute_force_and_covers() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for trial in 0..20 {
            let k = 3 + trial % 3;
            let set: Vec<SPDPoint> = (0..k).map(|_| random_spd(&mut rng, 1.0)).collect();
            let (c, r) = chebyshev_center(&set).unwrap();
            assert!(set.iter().all(|s| spd_distance(&c, s) <= r + 1e-7));
            let (_, rb) = brute_force_center(&set, 120);
            assert!(r <= rb + 1e-9, "trial {trial}: {r} > oracle {rb}");
            assert!(rb - r < 1e-3, "trial {trial}: oracle {rb} vs {r}");
            let (_, rs) = chebyshev_center_stepping(&set, CENTER_ITERATIONS).unwrap();
            assert!(rs >= r - 1e-12 && rs - r < 1e-2, "stepping {rs} vs exact {r}");
        }
    }

    #[test]
    fn center_is_congruence_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..30 {
            let set: Vec<SPDPoint> = (0..rng.gen_range(2..7)).map(|_| random_spd(&mut rng, 1.2)).collect();
            let m = random_matrix(&mut rng, 2.0);
            let moved: Vec<SPDPoint> = set.iter().map(|s| congruence(&m, s).unwrap()).collect();
            let (c, r) = chebyshev_center(&set).unwrap();
            let (cm, rm) = chebyshev_center(&moved).unwrap();
            assert!(spd_distance(&congruence(&m, &c).unwrap(), &cm) < 1e-6);
            assert!((r - rm).abs() < 1e-9, "{r} vs {rm}");
        }
    }

    #[test]
    fn large_sets_use_stepping_and_polish() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let set: Vec<SPDPoint> = (0..40).map(|_| random_spd(&mut rng, 0.8)).collect();
        let (c, r) = chebyshev_center(&set).unwrap();
        assert!(set.iter().all(|s| spd_distance(&c, s) <= r + 1e-7));
        let (_, rb) = brute_force_center(&set, 120);
        assert!(r <= rb + 1e-9 && rb - r < 1e-3, "{r} vs {rb}");
    }

    #[test]
    fn rotation_orbits_are_conformal() {
        let m = rotation(vec![0.4, -1.1]);
        let p = SpherePoint::from_polar(&[0.6, 0.8], &[0.2, 2.0]).unwrap();
        let os = orbit_set(&m, &p, 6).unwrap();
        assert_eq!(os.iterates, (0..=6).collect::<Vec<_>>());
        assert!(!os.truncated);
        assert!(os.elements.iter().all(|e| spd_distance(e, &SPDPoint::identity()) < 1e-9));
    }

    #[test]
    fn twist_orbit_sets_are_equivariant_and_bounded() {
        let f = multi_twist(2).unwrap();
        let p = SpherePoint::from_polar(&[0.6, 0.8], &[0.011, -0.023]).unwrap();
        let s = orbit_set(&f, &p, 4).unwrap();
        let s1 = orbit_set(&f, &s.orbit[1], 3).unwrap();
        let (h, _) = horizontal_matrix(&f, &p).unwrap();
        for n in 0..=3 {
            let pulled = congruence(&h, &s1.elements[n]).unwrap();
            assert!(spd_distance(&pulled, &s.elements[n + 1]) < 1e-6);
        }
        for e in &s.elements {
            assert!(spd_distance(e, &SPDPoint::identity()) <= SQRT_2 * s.max_ratio.ln() + 1e-9);
        }
        let on_branch = SpherePoint::from_polar(&[1.0, 0.0], &[0.3, 0.0]).unwrap();
        let t = orbit_set(&f, &on_branch, 3).unwrap();
        assert!(t.truncated && t.elements.len() == 1);
    }

    #[test]
    fn rotation_structure_is_identity_and_invariant() {
        let spec = LensSpec::new(2, vec![1, 1]).unwrap();
        let grid = StructureGrid::lens_polar(&spec, 6).unwrap();
        let m = rotation(vec![0.5, 0.5]);
        let cs = build_structure_map(&m, &grid, 4, 2).unwrap();
        assert_eq!(cs.entries.len(), 216);
        assert!(cs.entries.iter().all(|e| e.valid && spd_distance(&e.s.unwrap(), &SPDPoint::identity()) < 1e-9));
        assert!(cs.max_radius < 1e-9 && cs.warning.is_none());
        let res = invariance_residual(&cs, &m).unwrap();
        let sum = ResidualSummary::new(&res);
        assert_eq!(sum.count, 216);
        assert!(sum.max < 1e-8, "{sum:?}");
        assert_eq!(invariance_residual_cached(&cs).unwrap(), res);
    }

    #[test]
    fn interpolation_reproduces_grid_values_across_the_seam() {
        let spec = LensSpec::new(2, vec![1, 1]).unwrap();
        let grid = StructureGrid::lens_polar(&spec, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts = grid.points().unwrap();
        let entries = pts
            .iter()
            .map(|gp| StructureEntry {
                block: gp.block,
                index: gp.index,
                point: gp.point.clone(),
                valid: true,
                s: Some(random_spd(&mut rng, 0.5)),
                radius: 0.0,
                orbit_radius: 0.0,
                max_ratio: 1.0,
                region: None,
                step: None,
                image: None,
            })
            .collect::<Vec<_>>();
        let cs = ConformalStructure {
            schema_version: SCHEMA_VERSION,
            grid: grid.clone(),
            iterates: 1,
            tail_start: 1,
            entries,
            max_radius: 0.0,
            max_orbit_radius: 0.0,
            distortion_bound: 1.0,
            radius_bound: 0.0,
            excluded_fraction: 0.0,
            warning: None,
        };
        for (gp, e) in pts.iter().zip(&cs.entries) {
            // Every lens lift of a grid point returns its stored value.
            for lift in spec.orbit(&gp.point).unwrap() {
                let s = cs.interpolate(&lift).unwrap().unwrap();
                assert!(spd_distance(&s, &e.s.unwrap()) < 1e-9);
            }
        }
        assert!(cs.to_json().unwrap().contains("\"schema_version\": 1"));
    }

    #[test]
    fn chart_boxes_cover_their_ball() {
        let spec = LensSpec::new(2, vec![1, 1]).unwrap();
        let c = SpherePoint::from_polar(&[0.6, 0.8], &[0.4, 1.3]).unwrap();
        let grid = StructureGrid::lens_polar(&spec, 4).unwrap().with_box(&c, 0.05, 6).unwrap();
        assert_eq!(grid.len(), 64 + 216);
        let ball = GaugeBall::new(c.clone(), 0.05);
        for q in ball.shell(0.04, 5, 8).unwrap() {
            let nb = grid.neighbors(&q).unwrap().unwrap();
            assert!(nb.iter().all(|n| n.flat >= 64));
        }
        let far = SpherePoint::from_polar(&[0.8, 0.6], &[2.0, -1.0]).unwrap();
        assert!(grid.neighbors(&far).unwrap().unwrap().iter().all(|n| n.flat < 64));
        assert_eq!(grid.refined().len(), 512 + 1728);
    }

    #[test]
    fn empty_and_bad_grids_are_rejected() {
        let spec = LensSpec::new(2, vec![1, 1]).unwrap();
        assert!(StructureGrid::lens_polar(&spec, 5).is_err());
        let empty = StructureGrid { spec, blocks: vec![] };
        assert!(build_structure_map(&rotation(vec![0.0, 0.0]), &empty, 2, 1).is_err());
    }
}
