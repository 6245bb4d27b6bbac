//! The first Heisenberg group and its identification with S³ minus a point.
//!
//! Group law: (x, y, t)·(x', y', t') = (x + x', y + y', t + t' − 2(x y' − y x')).
//! Left-invariant horizontal frame X = ∂x + 2y ∂t, Y = ∂y − 2x ∂t with
//! [X, Y] = 4 ∂t; contact form dt − 2y dx + 2x dy. Dilations
//! δ_h(x, y, t) = (h x, h y, h² t) are automorphisms.
//!
//! The chart at a base point b ∈ S³ is z ↦ δ_2(C(U_b z)), where U_b is the
//! unitary sending b to the pole and X(b) to (0, 1), and C is the Cayley map
//! (z₁, z₂) ↦ (z₂/(1+z₁), 2 Im z₁ / |1+z₁|²) onto the boundary of the Siegel
//! domain. The extra δ_2 makes the chart an isometry on the horizontal plane
//! at b, with X(b) ↦ ∂x and Y(b) = iX(b) ↦ ∂y.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::sphere::{adjoint2, apply2, unitary_to_pole, SpherePoint};
use crate::error::{Error, Result};

/// The bracket constant [X, Y] = BRACKET_CONSTANT · ∂t of the chart group law.
pub const BRACKET_CONSTANT: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeisenbergPoint {
    pub x: f64,
    pub y: f64,
    pub t: f64,
}

impl HeisenbergPoint {
    pub const IDENTITY: HeisenbergPoint = HeisenbergPoint { x: 0.0, y: 0.0, t: 0.0 };

    pub fn new(x: f64, y: f64, t: f64) -> Self {
        Self { x, y, t }
    }

    pub fn mul(&self, o: &HeisenbergPoint) -> HeisenbergPoint {
        HeisenbergPoint { x: self.x + o.x, y: self.y + o.y, t: self.t + o.t - 2.0 * (self.x * o.y - self.y * o.x) }
    }

    pub fn inverse(&self) -> HeisenbergPoint {
        HeisenbergPoint { x: -self.x, y: -self.y, t: -self.t }
    }

    pub fn dilate(&self, h: f64) -> HeisenbergPoint {
        HeisenbergPoint { x: h * self.x, y: h * self.y, t: h * h * self.t }
    }

    /// Korányi gauge ((x² + y²)² + t²)^{1/4}.
    pub fn gauge(&self) -> f64 {
        let r2 = self.x * self.x + self.y * self.y;
        (r2 * r2 + self.t * self.t).sqrt().sqrt()
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.x, self.y, self.t]
    }

    pub fn dist_euclid(&self, o: &HeisenbergPoint) -> f64 {
        ((self.x - o.x).powi(2) + (self.y - o.y).powi(2) + (self.t - o.t).powi(2)).sqrt()
    }
}

/// Graded dilation δ_h.
pub fn dilation(h: f64, p: &HeisenbergPoint) -> HeisenbergPoint {
    p.dilate(h)
}

/// Privileged coordinates of S³ around a base point.
#[derive(Debug, Clone)]
pub struct HeisenbergChart {
    base: SpherePoint,
    u: [[Complex64; 2]; 2],
    u_inv: [[Complex64; 2]; 2],
}

/// Points with |1 + z₁'| below this are treated as the antipode of the base.
const ANTIPODE_TOL: f64 = 1e-9;

impl HeisenbergChart {
    pub fn base(&self) -> &SpherePoint {
        &self.base
    }

    pub fn forward(&self, z: &SpherePoint) -> Result<HeisenbergPoint> {
        if z.n() != 1 {
            return Err(Error::Contract("Heisenberg charts exist for S³ only".into()));
        }
        let w = apply2(&self.u, z.coords());
        let d = Complex64::new(1.0, 0.0) + w[0];
        if d.norm() < ANTIPODE_TOL {
            return Err(Error::Domain("chart evaluated at the antipode of its base".into()));
        }
        let zeta = w[1] / d;
        let t = 2.0 * w[0].im / d.norm_sqr();
        Ok(HeisenbergPoint { x: 2.0 * zeta.re, y: 2.0 * zeta.im, t: 4.0 * t })
    }

    pub fn inverse(&self, h: &HeisenbergPoint) -> SpherePoint {
        let zeta = Complex64::new(h.x / 2.0, h.y / 2.0);
        let w1 = Complex64::new(h.t / 4.0, zeta.norm_sqr());
        let i = Complex64::new(0.0, 1.0);
        // Siegel coordinate w₁ = i(1 − z₁)/(1 + z₁).
        let z1 = (i - w1) / (i + w1);
        let z2 = zeta * (Complex64::new(1.0, 0.0) + z1);
        let z = apply2(&self.u_inv, &[z1, z2]);
        SpherePoint::new(z.to_vec()).expect("chart inverse lands on the sphere")
    }
}

/// Builds the chart at `base` (S³ only).
pub fn heisenberg_chart(base: &SpherePoint) -> Result<HeisenbergChart> {
    if base.n() != 1 {
        return Err(Error::Contract("Heisenberg charts exist for S³ only".into()));
    }
    let u = unitary_to_pole(base.coords());
    Ok(HeisenbergChart { base: base.clone(), u, u_inv: adjoint2(&u) })
}
