use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::sphere::SpherePoint;
use crate::error::Result;

/// A Korányi gauge ball {z : |1 − ⟨z, c⟩|^{1/2} < r} on the sphere.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaugeBall {
    pub center: SpherePoint,
    pub radius: f64,
}

impl GaugeBall {
    pub fn new(center: SpherePoint, radius: f64) -> Self {
        Self { center, radius }
    }

    pub fn contains(&self, z: &SpherePoint) -> bool {
        self.center.gauge(z) < self.radius
    }

    pub fn contains_closed(&self, z: &SpherePoint) -> bool {
        self.center.gauge(z) <= self.radius
    }

    /// Points of the gauge sphere of radius `r` about the center, on a
    /// `m_psi × m_chi` grid. With U the unitary sending the center to e₁,
    /// they are U⁻¹(1 − r² e^{iψ}, √(1 − |w₁|²) e^{iχ}) for cos ψ ≥ r²/2.
    pub fn shell(&self, r: f64, m_psi: usize, m_chi: usize) -> Result<Vec<SpherePoint>> {
        let c = self.center.coords();
        if c.len() != 2 {
            return Err(crate::error::Error::Contract("gauge shells are sampled on S³".into()));
        }
        let r2 = r * r;
        let psi_max = if r2 >= 2.0 { 0.0 } else { (0.5 * r2).acos() };
        let mut out = Vec::with_capacity(m_psi * m_chi);
        for i in 0..m_psi {
            let psi = if m_psi == 1 { 0.0 } else { -psi_max + 2.0 * psi_max * i as f64 / (m_psi - 1) as f64 };
            let w1 = Complex64::new(1.0, 0.0) - Complex64::from_polar(r2, psi);
            let rest = (1.0 - w1.norm_sqr()).max(0.0).sqrt();
            for j in 0..m_chi {
                let chi = 2.0 * std::f64::consts::PI * j as f64 / m_chi as f64;
                let w2 = Complex64::from_polar(rest, chi);
                // U⁻¹ = [[c₁, −c̄₂], [c₂, c̄₁]] for U = [[c̄₁, c̄₂], [−c₂, c₁]].
                let z = vec![c[0] * w1 - c[1].conj() * w2, c[1] * w1 + c[0].conj() * w2];
                out.push(SpherePoint::new(z)?);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shell_points_sit_at_the_radius() {
        let b = GaugeBall::new(SpherePoint::new(vec![Complex64::new(0.6, 0.1), Complex64::new(-0.3, 0.7)]).unwrap(), 0.4);
        for z in b.shell(0.4, 9, 12).unwrap() {
            assert!((b.center.gauge(&z) - 0.4).abs() < 1e-12);
        }
        assert!(b.contains(&b.center));
    }
}
