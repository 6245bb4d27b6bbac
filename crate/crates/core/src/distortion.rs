//! Distortion of maps on S³: metric H(x, f) from image distances over metric
//! spheres, singular values λ₋ ≤ λ₊ of the horizontal differential, BLD
//! length ratios and distortion of iterates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifolds::cc::{cc_distance, CcOptions};
use crate::manifolds::path::{path_length, path_length_with_tolerance, HorizontalPath, PATH_HORIZONTAL_TOL};
use crate::manifolds::sphere::{exp_horizontal, horizontal_from_frame, SpherePoint};
use crate::map_zoo::{horizontal_matrix, MapHandle};
use nalgebra::Matrix2;

/// Radii below this are optimizer noise.
pub const MIN_RADIUS: f64 = 1e-4;
/// Horizontal great circles minimise up to this length.
pub const MAX_RADIUS: f64 = std::f64::consts::PI;
/// Pairs fixed to rounding keep their exact distance r.
const FIXED_TOL: f64 = 1e-14;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistortionOptions {
    pub directions: usize,
    pub cc: CcOptions,
}

impl Default for DistortionOptions {
    fn default() -> Self {
        Self { directions: 64, cc: CcOptions::default().with_restarts(2) }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RadiusRow {
    pub r: f64,
    /// sup and inf over the metric sphere of d(f(x), f(y)) / r.
    pub sup: f64,
    pub inf: f64,
    pub ratio: f64,
    /// Directions whose image distance could not be computed.
    pub failures: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistortionReport {
    pub point: SpherePoint,
    pub rows: Vec<RadiusRow>,
    /// H₀ of the fit H(r) = H₀ + c r on the three smallest radii.
    pub extrapolated: f64,
    pub slope: f64,
    /// Whether the ratio is non-increasing as r shrinks.
    pub monotone: bool,
    pub eigen: Option<(f64, f64)>,
    pub method: String,
}

impl DistortionReport {
    pub const CSV_HEADER: &'static str = "point_id,r,sup,inf,ratio";

    /// One row per radius, then a summary row with r = 0 holding H₀.
    pub fn to_csv(&self, point_id: &str) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            out.push_str(&format!("{point_id},{:.9e},{:.12},{:.12},{:.12}\n", r.r, r.sup, r.inf, r.ratio));
        }
        out.push_str(&format!("{point_id},0,,,{:.12}\n", self.extrapolated));
        out
    }
}

/// Least-squares line through (x_i, y_i); returns (intercept, slope).
fn fit_line(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return (my, 0.0);
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    (my - slope * mx, slope)
}

/// Points at cc distance exactly r from x: the endpoints of the horizontal
/// great circles of length r, which minimise for r ≤ π.
pub fn metric_sphere(x: &SpherePoint, r: f64, directions: usize) -> Result<Vec<SpherePoint>> {
    if x.n() != 1 {
        return Err(Error::Contract("metric spheres are sampled on S³".into()));
    }
    (0..directions)
        .map(|k| {
            let t = 2.0 * std::f64::consts::PI * k as f64 / directions as f64;
            Ok(exp_horizontal(x, &horizontal_from_frame(x, &[r * t.cos(), r * t.sin()])?))
        })
        .collect()
}

/// Metric distortion sup/inf of d(f(x), f(y)) over d(x, y) = r, per radius,
/// extrapolated linearly to r = 0.
pub fn metric_distortion(m: &MapHandle, x: &SpherePoint, radii: &[f64], opts: &DistortionOptions) -> Result<DistortionReport> {
    if radii.len() < 3 {
        return Err(Error::Contract("metric_distortion needs at least three radii".into()));
    }
    if radii.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Contract("radii must be strictly decreasing".into()));
    }
    if let Some(r) = radii.iter().find(|r| **r < MIN_RADIUS || **r > MAX_RADIUS) {
        return Err(Error::Contract(format!("radius {r:e} outside [{MIN_RADIUS:e}, π]")));
    }
    let fx = m.eval(x)?;
    let mut rows = Vec::with_capacity(radii.len());
    for &r in radii {
        let sphere = metric_sphere(x, r, opts.directions)?;
        let dists: Vec<Option<f64>> = sphere
            .par_iter()
            .map(|y| {
                let fy = m.eval(y).ok()?;
                if fy.chordal(y) < FIXED_TOL && fx.chordal(x) < FIXED_TOL {
                    return Some(r);
                }
                cc_distance(&fx, &fy, &opts.cc).ok().filter(|rep| rep.converged).map(|rep| rep.distance)
            })
            .collect();
        let ok: Vec<f64> = dists.iter().flatten().map(|d| d / r).collect();
        let failures = dists.len() - ok.len();
        if ok.is_empty() {
            return Err(Error::NonConvergent(format!("no image distance computed at radius {r:e}")));
        }
        let sup = ok.iter().cloned().fold(f64::MIN, f64::max);
        let inf = ok.iter().cloned().fold(f64::MAX, f64::min);
        rows.push(RadiusRow { r, sup, inf, ratio: sup / inf, failures });
    }
    let tail = &rows[rows.len() - 3..];
    let (h0, slope) = fit_line(&tail.iter().map(|r| r.r).collect::<Vec<_>>(), &tail.iter().map(|r| r.ratio).collect::<Vec<_>>());
    let monotone = rows.windows(2).all(|w| w[1].ratio <= w[0].ratio + 1e-9);
    let eigen = eigen_distortion(m, x).ok();
    Ok(DistortionReport { point: x.clone(), rows, extrapolated: h0.max(1.0), slope, monotone, eigen, method: "horizontal-great-circle".into() })
}

fn singular_pair(m: &Matrix2<f64>) -> (f64, f64) {
    let sv = m.singular_values();
    (sv.min(), sv.max())
}

/// Extremal singular values (λ₋, λ₊) of m_* on the horizontal plane at x.
pub fn eigen_distortion(m: &MapHandle, x: &SpherePoint) -> Result<(f64, f64)> {
    if !m.in_smooth_domain(x) {
        return Err(Error::BranchLocus { min_modulus: x.min_modulus() });
    }
    let (mat, _) = horizontal_matrix(m, x)?;
    Ok(singular_pair(&mat))
}

/// (len(m∘γ)/len(γ), its reciprocal). The image path is checked to be
/// horizontal with `tol` (default [`PATH_HORIZONTAL_TOL`]).
pub fn bld_ratio(m: &MapHandle, path: &HorizontalPath, tol: Option<f64>) -> Result<(f64, f64)> {
    let len = path_length(path)?;
    if len == 0.0 {
        return Err(Error::Contract("bld_ratio of a constant path".into()));
    }
    let image = path.map_points(|p| m.eval(p))?;
    let ilen = path_length_with_tolerance(&image, tol.unwrap_or(PATH_HORIZONTAL_TOL))?;
    Ok((ilen / len, len / ilen))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterateRow {
    pub n: usize,
    pub max_ratio: f64,
    pub excluded: usize,
}

pub const ITERATE_CSV_HEADER: &str = "n,max_ratio,excluded";

pub fn iterate_table_csv(rows: &[IterateRow]) -> String {
    let mut out = format!("{ITERATE_CSV_HEADER}\n");
    for r in rows {
        out.push_str(&format!("{},{:.12},{}\n", r.n, r.max_ratio, r.excluded));
    }
    out
}

/// Per n ≤ n_max, the max over the sample of λ₊/λ₋ for the n-th iterate,
/// from products of horizontal matrices along orbits. A point whose orbit
/// leaves the smooth domain is excluded from that row onward.
pub fn iterate_distortion(m: &MapHandle, n_max: usize, sample: &[SpherePoint]) -> Result<Vec<IterateRow>> {
    // Per point, the ratio after each iterate until the orbit fails.
    let per_point: Vec<Vec<f64>> = sample
        .par_iter()
        .map(|p| {
            let mut ratios = Vec::with_capacity(n_max);
            let mut q = p.clone();
            let mut acc = Matrix2::identity();
            for _ in 0..n_max {
                if !m.in_smooth_domain(&q) {
                    break;
                }
                let Ok((h, next)) = horizontal_matrix(m, &q) else { break };
                acc = h * acc;
                let (lo, hi) = singular_pair(&acc);
                if !(lo > 0.0) {
                    break;
                }
                ratios.push(hi / lo);
                q = next;
            }
            ratios
        })
        .collect();
    Ok((1..=n_max)
        .map(|n| {
            let vals: Vec<f64> = per_point.iter().filter_map(|r| r.get(n - 1).copied()).collect();
            IterateRow { n, max_ratio: vals.iter().cloned().fold(f64::NAN, f64::max), excluded: per_point.len() - vals.len() }
        })
        .collect())
}
