//! Carnot–Carathéodory distances by direct transcription.
//!
//! A path is K segments of constant frame controls. On S³ a segment with
//! control c ∈ ℂ (coordinates in the frame X, iX) is the horizontal great
//! circle z ↦ z cos(|c|h) + (c/|c|) X(z) sin(|c|h); on the Heisenberg group it
//! is a left translate of a straight horizontal segment. Both propagate in
//! closed form, so the only approximation is the piecewise-constant control.
//!
//! Energy is minimised subject to hitting the target exactly (see
//! [`crate::optim::min_energy_sqp`]); minimum-energy paths have constant speed,
//! and the reported length Σ|c_k|h is the length of an actual horizontal path,
//! hence an upper bound for the distance.
//!
//! The oracle replaces the sub-Riemannian metric by the Riemannian penalty
//! metric in which the Reeb (resp. ∂t) direction has length 1/ε, solves the
//! same transcription with a third control, and extrapolates the three
//! values ε ∈ {0.2, 0.1, 0.05} to ε = 0 with the interpolating quadratic.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::heisenberg::{heisenberg_chart, HeisenbergPoint};
use super::sphere::{apply2, frame_x, unitary_to_pole, SpherePoint};
use crate::error::{Error, Result};
use crate::optim::{bisect, min_energy_sqp, SqpOptions};

pub const PENALTY_EPSILONS: [f64; 3] = [0.2, 0.1, 0.05];

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CcOptions {
    pub segments: usize,
    pub restarts: usize,
    pub seed: u64,
    /// Also run the penalty-metric oracle and report it.
    pub penalty_check: bool,
    pub max_iter: usize,
}

impl Default for CcOptions {
    fn default() -> Self {
        Self { segments: 24, restarts: 8, seed: 0x5eed, penalty_check: false, max_iter: 300 }
    }
}

impl CcOptions {
    pub fn with_restarts(mut self, restarts: usize) -> Self {
        self.restarts = restarts;
        self
    }

    pub fn with_penalty(mut self) -> Self {
        self.penalty_check = true;
        self
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PenaltyReport {
    pub epsilons: [f64; 3],
    pub values: [f64; 3],
    pub extrapolated: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CcReport {
    pub distance: f64,
    pub method: String,
    pub restarts: usize,
    pub converged_restarts: usize,
    /// Endpoint mismatch of the returned path.
    pub residual: f64,
    pub converged: bool,
    pub penalty: Option<PenaltyReport>,
    /// Frame controls of the best path, `[re c_0, im c_0, re c_1, ...]`.
    #[serde(skip)]
    pub controls: Vec<f64>,
}

impl CcReport {
    pub const CSV_HEADER: &'static str = "a,b,value,method,restarts,residual";

    pub fn csv_row(&self, a: &str, b: &str) -> String {
        format!("{a},{b},{:.12e},{},{},{:.3e}", self.distance, self.method, self.restarts, self.residual)
    }
}

/// Points between which cc distances can be computed.
pub trait CcPoint {
    #[doc(hidden)]
    fn problem(a: &Self, b: &Self) -> Result<Problem>;
}

impl CcPoint for SpherePoint {
    fn problem(a: &Self, b: &Self) -> Result<Problem> {
        if a.n() != 1 || b.n() != 1 {
            return Err(Error::Contract("cc_distance on spheres is implemented for S³".into()));
        }
        let target_u = unitary_to_pole(b.coords());
        let guess = match heisenberg_chart(a)?.forward(b) {
            Ok(h) => heisenberg_guess(&h),
            // Antipodal: every horizontal great circle of length π works.
            Err(_) => Guess { amp: std::f64::consts::PI, omega: 0.0, phase: 0.0 },
        };
        Ok(Problem::Sphere { start: [a.coords()[0], a.coords()[1]], target_u, guess })
    }
}

impl CcPoint for HeisenbergPoint {
    fn problem(a: &Self, b: &Self) -> Result<Problem> {
        let rel = a.inverse().mul(b);
        Ok(Problem::Heisenberg { target: rel, guess: heisenberg_guess(&rel) })
    }
}

/// The closed-form Heisenberg geodesic with control A e^{i(ωs + φ)}, s ∈ [0,1].
#[derive(Debug, Clone, Copy)]
#[doc(hidden)]
pub struct Guess {
    amp: f64,
    omega: f64,
    phase: f64,
}

/// Solves for the Heisenberg geodesic from the identity to `h`.
///
/// With control u(s) = A e^{i(ωs+φ)} the endpoint is
/// x + iy = A e^{iφ}(e^{iω} − 1)/(iω) and t = −2A²(ω − sin ω)/ω²,
/// so ω is fixed by t/|x+iy|² = −(ω − sin ω)/(2 sin²(ω/2)) on (−2π, 2π).
fn heisenberg_guess(h: &HeisenbergPoint) -> Guess {
    use std::f64::consts::PI;
    let zeta = Complex64::new(h.x, h.y);
    let r2 = zeta.norm_sqr();
    if r2 == 0.0 && h.t == 0.0 {
        return Guess { amp: 0.0, omega: 0.0, phase: 0.0 };
    }
    if r2 < 1e-300 || h.t.abs() / r2 > 1e12 {
        return Guess { amp: (PI * h.t.abs()).sqrt(), omega: -2.0 * PI * h.t.signum(), phase: 0.0 };
    }
    let ratio = h.t / r2;
    let g = |w: f64| {
        if w.abs() < 1e-6 {
            -w / 3.0 - ratio
        } else {
            -(w - w.sin()) / (2.0 * (0.5 * w).sin().powi(2)) - ratio
        }
    };
    let lim = 2.0 * PI * (1.0 - 1e-12);
    let omega = bisect(g, -lim, lim, 200);
    let sinc = if omega.abs() < 1e-12 { 1.0 } else { (0.5 * omega).sin() / (0.5 * omega) };
    Guess { amp: zeta.norm() / sinc, omega, phase: zeta.arg() - 0.5 * omega }
}

/// Exact Carnot–Carathéodory distance on the Heisenberg group from the
/// identity, read off the closed-form geodesic.
pub fn heisenberg_distance_exact(a: &HeisenbergPoint, b: &HeisenbergPoint) -> f64 {
    heisenberg_guess(&a.inverse().mul(b)).amp
}

#[doc(hidden)]
#[derive(Debug, Clone)]
pub enum Problem {
    Sphere { start: [Complex64; 2], target_u: [[Complex64; 2]; 2], guess: Guess },
    Heisenberg { target: HeisenbergPoint, guess: Guess },
}

fn sphere_segment(z: [Complex64; 2], c: Complex64, h: f64) -> [Complex64; 2] {
    let s = c.norm() * h;
    let x = frame_x(&z);
    // sin(s)/|c| written as h·sinc(s) to stay regular at c = 0.
    let sinc = if s.abs() < 1e-8 { 1.0 - s * s / 6.0 } else { s.sin() / s };
    let (cs, k) = (s.cos(), c * h * sinc);
    [z[0] * cs + k * x[0], z[1] * cs + k * x[1]]
}

fn sphere_field(z: [Complex64; 2], c: Complex64, v: f64) -> [Complex64; 2] {
    let x = frame_x(&z);
    let i = Complex64::i();
    [c * x[0] + i * v * z[0], c * x[1] + i * v * z[1]]
}

fn renormalise(z: [Complex64; 2]) -> [Complex64; 2] {
    let n = (z[0].norm_sqr() + z[1].norm_sqr()).sqrt();
    [z[0] / n, z[1] / n]
}

/// Sphere segment with an extra Reeb control, integrated by RK4.
fn sphere_segment_penalty(z: [Complex64; 2], c: Complex64, v: f64, h: f64, substeps: usize) -> [Complex64; 2] {
    let dt = h / substeps as f64;
    let mut z = z;
    let add = |a: [Complex64; 2], b: [Complex64; 2], s: f64| [a[0] + b[0] * s, a[1] + b[1] * s];
    for _ in 0..substeps {
        let k1 = sphere_field(z, c, v);
        let k2 = sphere_field(add(z, k1, 0.5 * dt), c, v);
        let k3 = sphere_field(add(z, k2, 0.5 * dt), c, v);
        let k4 = sphere_field(add(z, k3, dt), c, v);
        z = [z[0] + (k1[0] + k2[0] * 2.0 + k3[0] * 2.0 + k4[0]) * (dt / 6.0), z[1] + (k1[1] + k2[1] * 2.0 + k3[1] * 2.0 + k4[1]) * (dt / 6.0)];
        z = renormalise(z);
    }
    z
}

impl Problem {
    fn guess(&self) -> Guess {
        match self {
            Problem::Sphere { guess, .. } | Problem::Heisenberg { guess, .. } => *guess,
        }
    }

    /// Endpoint residual for controls with `dim` entries per segment
    /// (2: horizontal, 3: horizontal plus vertical penalty control).
    fn residual(&self, u: &[f64], dim: usize) -> Vec<f64> {
        let k = u.len() / dim;
        let h = 1.0 / k as f64;
        match self {
            Problem::Sphere { start, target_u, .. } => {
                let mut z = *start;
                for seg in u.chunks(dim) {
                    let c = Complex64::new(seg[0], seg[1]);
                    z = if dim == 2 { sphere_segment(z, c, h) } else { sphere_segment_penalty(z, c, seg[2], h, 4) };
                }
                let w = apply2(target_u, &renormalise(z));
                vec![w[1].re, w[1].im, w[0].im]
            }
            Problem::Heisenberg { target, .. } => {
                let (mut x, mut y, mut t) = (0.0, 0.0, 0.0);
                for seg in u.chunks(dim) {
                    t += 2.0 * h * (y * seg[0] - x * seg[1]);
                    if dim == 3 {
                        t += h * seg[2];
                    }
                    x += h * seg[0];
                    y += h * seg[1];
                }
                vec![x - target.x, y - target.y, t - target.t]
            }
        }
    }

    /// Rejects the spurious solution at the antipode of the sphere target.
    fn lands_on_target(&self, u: &[f64], dim: usize) -> bool {
        match self {
            Problem::Sphere { start, target_u, .. } => {
                let k = u.len() / dim;
                let h = 1.0 / k as f64;
                let mut z = *start;
                for seg in u.chunks(dim) {
                    let c = Complex64::new(seg[0], seg[1]);
                    z = if dim == 2 { sphere_segment(z, c, h) } else { sphere_segment_penalty(z, c, seg[2], h, 4) };
                }
                apply2(target_u, &z)[0].re > 0.0
            }
            Problem::Heisenberg { .. } => true,
        }
    }
}

fn controls_from_guess(g: &Guess, k: usize) -> Vec<f64> {
    (0..k)
        .flat_map(|j| {
            let s = (j as f64 + 0.5) / k as f64;
            let c = Complex64::from_polar(g.amp, g.omega * s + g.phase);
            [c.re, c.im]
        })
        .collect()
}

fn horizontal_length(u: &[f64]) -> f64 {
    let k = u.len() / 2;
    u.chunks(2).map(|c| c[0].hypot(c[1])).sum::<f64>() / k as f64
}

struct Attempt {
    controls: Vec<f64>,
    length: f64,
    residual: f64,
    converged: bool,
}

fn solve(problem: &Problem, x0: &[f64], weights: &[f64], dim: usize, max_iter: usize) -> Attempt {
    let opts = SqpOptions { max_iter, ..SqpOptions::default() };
    let r = min_energy_sqp(x0, weights, |u| problem.residual(u, dim), &opts);
    let ok = r.converged && problem.lands_on_target(&r.x, dim);
    let k = r.x.len() / dim;
    let length =
        r.x.chunks(dim)
            .map(|c| {
                let v = if dim == 3 { c[2] * c[2] * weights[2] } else { 0.0 };
                (c[0] * c[0] + c[1] * c[1] + v).sqrt()
            })
            .sum::<f64>()
            / k as f64;
    Attempt { controls: r.x, length, residual: r.constraint_norm, converged: ok }
}

/// Carnot–Carathéodory distance between two points of S³ or of the
/// Heisenberg group.
pub fn cc_distance<P: CcPoint>(a: &P, b: &P, opts: &CcOptions) -> Result<CcReport> {
    if opts.segments < 4 {
        return Err(Error::Contract("cc_distance needs at least 4 segments".into()));
    }
    let problem = P::problem(a, b)?;
    let k = opts.segments;
    let guess = problem.guess();
    if guess.amp == 0.0 && problem.residual(&vec![0.0; 2 * k], 2).iter().all(|r| r.abs() < 1e-15) {
        return Ok(CcReport {
            distance: 0.0,
            method: "transcription".into(),
            restarts: 0,
            converged_restarts: 0,
            residual: 0.0,
            converged: true,
            penalty: None,
            controls: vec![0.0; 2 * k],
        });
    }

    let base = controls_from_guess(&guess, k);
    let weights = vec![1.0; 2 * k];
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let scale = 0.25 * guess.amp.max(0.05);
    let mut best: Option<Attempt> = None;
    let mut converged_count = 0;
    let restarts = opts.restarts.max(1);
    for r in 0..restarts {
        let x0: Vec<f64> = if r == 0 { base.clone() } else { base.iter().map(|v| v + scale * rng.gen_range(-1.0..1.0)).collect() };
        let att = solve(&problem, &x0, &weights, 2, opts.max_iter);
        if att.converged {
            converged_count += 1;
        }
        let better = match &best {
            None => true,
            Some(b) => (att.converged && !b.converged) || (att.converged == b.converged && att.length < b.length),
        };
        if better {
            best = Some(att);
        }
    }
    let best = best.expect("at least one restart");
    let penalty = if opts.penalty_check { Some(penalty_oracle_from(&problem, &best.controls, opts.max_iter)) } else { None };
    Ok(CcReport {
        distance: horizontal_length(&best.controls),
        method: "transcription".into(),
        restarts,
        converged_restarts: converged_count,
        residual: best.residual,
        converged: best.converged,
        penalty,
        controls: best.controls,
    })
}

fn penalty_oracle_from(problem: &Problem, horizontal: &[f64], max_iter: usize) -> PenaltyReport {
    let mut values = [0.0; 3];
    let mut start: Vec<f64> = horizontal.chunks(2).flat_map(|c| [c[0], c[1], 0.0]).collect();
    // Solve from the stiffest metric outwards is less stable than continuing
    // from the horizontal solution; each ε starts from the previous answer.
    for (slot, &eps) in values.iter_mut().zip(PENALTY_EPSILONS.iter()) {
        let weights: Vec<f64> = (0..start.len()).map(|j| if j % 3 == 2 { 1.0 / (eps * eps) } else { 1.0 }).collect();
        let att = solve(problem, &start, &weights, 3, max_iter);
        *slot = att.length;
        start = att.controls;
    }
    PenaltyReport { epsilons: PENALTY_EPSILONS, values, extrapolated: extrapolate_to_zero(&PENALTY_EPSILONS, &values) }
}

/// Value at 0 of the quadratic through three samples.
pub fn extrapolate_to_zero(x: &[f64; 3], y: &[f64; 3]) -> f64 {
    (0..3)
        .map(|i| {
            let mut w = 1.0;
            for j in 0..3 {
                if j != i {
                    w *= x[j] / (x[j] - x[i]);
                }
            }
            w * y[i]
        })
        .sum()
}

/// Penalty-metric oracle distance (independent of the primary solve: it
/// starts from the closed-form guess).
pub fn penalty_oracle<P: CcPoint>(a: &P, b: &P, opts: &CcOptions) -> Result<PenaltyReport> {
    let problem = P::problem(a, b)?;
    let base = controls_from_guess(&problem.guess(), opts.segments);
    Ok(penalty_oracle_from(&problem, &base, opts.max_iter))
}
