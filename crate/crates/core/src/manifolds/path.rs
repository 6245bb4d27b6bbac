use serde::{Deserialize, Serialize};

use super::sphere::{hermitian, SpherePoint};
use crate::error::{Error, Result};

/// Default bound on the relative per-segment contact residual.
pub const PATH_HORIZONTAL_TOL: f64 = 1e-5;

/// A sampled path on the sphere with timestamps.
///
/// The residual of segment k is |α_m(z_{k+1} − z_k)| / |z_{k+1} − z_k| at the
/// chord midpoint m; it vanishes for horizontal great-circle segments and is
/// O(step²) for smooth horizontal curves.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HorizontalPath {
    samples: Vec<SpherePoint>,
    times: Vec<f64>,
    residuals: Vec<f64>,
}

pub(crate) fn segment_residual(a: &SpherePoint, b: &SpherePoint) -> f64 {
    let chord = a.chordal(b);
    if chord == 0.0 {
        return 0.0;
    }
    // α at the (normalised) midpoint applied to the chord reduces to
    // 2 Im<z_{k+1}, z_k> / |z_k + z_{k+1}|.
    let mid: f64 = a.coords().iter().zip(b.coords()).map(|(x, y)| (x + y).norm_sqr()).sum::<f64>().sqrt();
    let alpha = 2.0 * hermitian(b.coords(), a.coords()).im / mid.max(1e-300);
    alpha.abs() / chord
}

impl HorizontalPath {
    pub fn new(samples: Vec<SpherePoint>, times: Vec<f64>) -> Result<Self> {
        Self::with_tolerance(samples, times, PATH_HORIZONTAL_TOL)
    }

    /// Rejects paths with a segment residual above `tol`.
    pub fn with_tolerance(samples: Vec<SpherePoint>, times: Vec<f64>, tol: f64) -> Result<Self> {
        let path = Self::unchecked(samples, times)?;
        if let Some((k, r)) = path.residuals.iter().enumerate().find(|(_, r)| **r > tol) {
            return Err(Error::NonHorizontal { segment: k, residual: *r });
        }
        Ok(path)
    }

    /// Builds the path and records residuals without rejecting.
    pub fn unchecked(samples: Vec<SpherePoint>, times: Vec<f64>) -> Result<Self> {
        if samples.is_empty() || samples.len() != times.len() {
            return Err(Error::Contract("path needs matching, nonempty samples and timestamps".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Contract("path timestamps must increase strictly".into()));
        }
        let n = samples[0].n();
        if samples.iter().any(|s| s.n() != n) {
            return Err(Error::Contract("path samples live on different spheres".into()));
        }
        let residuals = samples.windows(2).map(|w| segment_residual(&w[0], &w[1])).collect();
        Ok(Self { samples, times, residuals })
    }

    /// Samples a curve on a uniform grid of `steps + 1` times over [t0, t1].
    pub fn sample<F>(curve: F, t0: f64, t1: f64, steps: usize) -> Result<Self>
    where
        F: Fn(f64) -> Result<SpherePoint>,
    {
        let times: Vec<f64> = (0..=steps).map(|k| t0 + (t1 - t0) * k as f64 / steps as f64).collect();
        let samples = times.iter().map(|&t| curve(t)).collect::<Result<Vec<_>>>()?;
        Self::new(samples, times)
    }

    pub fn samples(&self) -> &[SpherePoint] {
        &self.samples
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn residuals(&self) -> &[f64] {
        &self.residuals
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().cloned().fold(0.0, f64::max)
    }

    /// Applies a point map sample-by-sample, keeping the timestamps.
    pub fn map_points<F>(&self, f: F) -> Result<HorizontalPath>
    where
        F: Fn(&SpherePoint) -> Result<SpherePoint>,
    {
        let samples = self.samples.iter().map(f).collect::<Result<Vec<_>>>()?;
        HorizontalPath::unchecked(samples, self.times.clone())
    }
}

/// Length of a horizontal path: the integral of the piecewise-constant segment
/// speed, each segment measured along its great-circle arc 2·asin(|Δz|/2).
/// Exact for piecewise horizontal great-circle paths, second order otherwise.
pub fn path_length(path: &HorizontalPath) -> Result<f64> {
    path_length_with_tolerance(path, PATH_HORIZONTAL_TOL)
}

pub fn path_length_with_tolerance(path: &HorizontalPath, tol: f64) -> Result<f64> {
    if let Some((k, r)) = path.residuals.iter().enumerate().find(|(_, r)| **r > tol) {
        return Err(Error::NonHorizontal { segment: k, residual: *r });
    }
    Ok(path
        .samples
        .windows(2)
        .zip(path.times.windows(2))
        .map(|(w, t)| {
            let arc = 2.0 * (0.5 * w[0].chordal(&w[1])).min(1.0).asin();
            let speed = arc / (t[1] - t[0]);
            speed * (t[1] - t[0])
        })
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifolds::sphere::{horizontal_frame, SpherePoint};
    use num_complex::Complex64;

    fn arc(p: &SpherePoint, dir: usize, phi: f64, steps: usize) -> HorizontalPath {
        let e = horizontal_frame(p)[dir].clone();
        HorizontalPath::sample(
            |s| SpherePoint::new(p.coords().iter().zip(e.tangent().components()).map(|(a, v)| a * s.cos() + v * s.sin()).collect()),
            0.0,
            phi,
            steps,
        )
        .unwrap()
    }

    #[test]
    fn constant_path_has_zero_length() {
        let p = SpherePoint::pole(1);
        let path = HorizontalPath::new(vec![p.clone(), p.clone(), p], vec![0.0, 1.0, 2.0]).unwrap();
        assert_eq!(path_length(&path).unwrap(), 0.0);
    }

    #[test]
    fn great_circle_arc_length_matches_angle() {
        // Analytic oracle: a unit-speed horizontal great circle of angle φ.
        let p = SpherePoint::pole(1);
        for &phi in &[0.3, 1.0, 2.5] {
            let l = path_length(&arc(&p, 0, phi, 200)).unwrap();
            assert!((l - phi).abs() < 1e-6, "{l} vs {phi}");
        }
    }

    #[test]
    fn reparametrisation_invariance() {
        let p = SpherePoint::new(vec![Complex64::new(0.6, 0.1), Complex64::new(0.2, -0.7)]).unwrap();
        let path = arc(&p, 1, 1.2, 300);
        let re: Vec<f64> = path.times().iter().map(|t| t * t + 3.0 * t).collect();
        let moved = HorizontalPath::new(path.samples().to_vec(), re).unwrap();
        assert!((path_length(&path).unwrap() - path_length(&moved).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn vertical_path_is_rejected() {
        let p = SpherePoint::pole(1);
        let fiber = HorizontalPath::unchecked(
            (0..10).map(|k| SpherePoint::new(p.coords().iter().map(|w| w * Complex64::from_polar(1.0, 0.05 * k as f64)).collect()).unwrap()).collect(),
            (0..10).map(|k| k as f64).collect(),
        )
        .unwrap();
        assert!(matches!(path_length(&fiber), Err(Error::NonHorizontal { .. })));
    }

    #[test]
    fn refinement_is_second_order() {
        // A horizontal but non-geodesic curve: image of a great circle under
        // a smooth contact map (the squaring twist away from the branch set).
        let p = SpherePoint::new(vec![Complex64::new(0.7, 0.2), Complex64::new(0.3, 0.6)]).unwrap();
        let e = horizontal_frame(&p)[0].clone();
        let curve = |s: f64| {
            let z: Vec<Complex64> = p.coords().iter().zip(e.tangent().components()).map(|(a, v)| a * s.cos() + v * s.sin()).collect();
            let q = SpherePoint::new(z)?;
            SpherePoint::from_polar(q.moduli(), &q.angles().iter().map(|a| 2.0 * a).collect::<Vec<_>>())
        };
        let lens: Vec<f64> = [100, 200, 400, 800].iter().map(|&n| path_length(&HorizontalPath::sample(curve, 0.0, 0.5, n).unwrap()).unwrap()).collect();
        for w in lens.windows(3) {
            let (d1, d2) = ((w[1] - w[0]).abs(), (w[2] - w[1]).abs());
            assert!(d2 <= d1 * 0.26 + 1e-15, "{d1} {d2}");
        }
    }
}
