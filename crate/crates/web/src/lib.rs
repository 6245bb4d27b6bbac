//! WebAssembly front end for three qrlab operations: probing a multi-twist
//! map at a point, drawing the Julia set of the trap map, and comparing the
//! Heisenberg cc distance with its closed form and the penalty oracle.
//!
//! The `*_json`/`julia_chart` functions are plain Rust so they can be tested
//! natively; the exported wrappers only convert errors.

use std::cell::OnceCell;

use qrlab::distortion::eigen_distortion;
use qrlab::manifolds::{cc_distance, heisenberg_chart, heisenberg_distance_exact, penalty_oracle, CcOptions, HeisenbergPoint, LensSpec, SpherePoint};
use qrlab::map_zoo::{multi_twist, pullback_contact_factor};
use qrlab::trap_dynamics::{build_trap, julia_approx, UQRMap};
use serde_json::json;
use wasm_bindgen::prelude::*;

/// Deepest Julia level offered in the page; deeper clouds get slow.
pub const MAX_DEMO_DEPTH: u32 = 4;

thread_local! {
    static TRAP: OnceCell<Result<UQRMap, String>> = const { OnceCell::new() };
}

fn with_trap<T>(f: impl FnOnce(&UQRMap) -> Result<T, String>) -> Result<T, String> {
    TRAP.with(|cell| {
        let trap = cell.get_or_init(|| LensSpec::new(2, vec![1, 1]).and_then(|s| build_trap(2, &s, None)).map_err(|e| e.to_string()));
        f(trap.as_ref().map_err(Clone::clone)?)
    })
}

/// F_a at the point with |z₁| = r1 and angles (θ₁, θ₂): image, contact
/// pullback factor and horizontal singular values.
pub fn twist_probe_json(a: i32, r1: f64, theta1: f64, theta2: f64) -> Result<String, String> {
    if !(0.0..=1.0).contains(&r1) {
        return Err(format!("r1 must lie in [0, 1], got {r1}"));
    }
    let m = multi_twist(a.into()).map_err(|e| e.to_string())?;
    let p = SpherePoint::from_polar(&[r1, (1.0 - r1 * r1).sqrt()], &[theta1, theta2]).map_err(|e| e.to_string())?;
    let image = m.eval(&p).map_err(|e| e.to_string())?;
    let factor = pullback_contact_factor(&m, &p).map_err(|e| e.to_string())?;
    let (lo, hi) = eigen_distortion(&m, &p).map_err(|e| e.to_string())?;
    Ok(json!({
        "image": { "moduli": image.moduli(), "angles": image.angles() },
        "pullback_factor": factor,
        "lambda_min": lo,
        "lambda_max": hi,
        "distortion": hi / lo,
    })
    .to_string())
}

/// Julia cloud of the trap map on L(2; 1, 1) in the Heisenberg chart at z₀,
/// flattened as (x, y, depth) triples.
pub fn julia_chart(depth: u32) -> Result<Vec<f64>, String> {
    if depth == 0 || depth > MAX_DEMO_DEPTH {
        return Err(format!("depth must lie in 1..={MAX_DEMO_DEPTH}"));
    }
    with_trap(|u| {
        let cloud = julia_approx(u, depth as usize).map_err(|e| e.to_string())?;
        let chart = heisenberg_chart(&u.config.z0).map_err(|e| e.to_string())?;
        let mut out = Vec::with_capacity(3 * cloud.points.len());
        for p in &cloud.points {
            let h = chart.forward(&p.point).map_err(|e| e.to_string())?;
            out.extend([h.x, h.y, p.depth as f64]);
        }
        Ok(out)
    })
}

/// cc distance between two Heisenberg points by the SQP solver, the
/// closed-form geodesics and the penalty oracle.
pub fn cc_compare_json(a: [f64; 3], b: [f64; 3]) -> Result<String, String> {
    let (p, q) = (HeisenbergPoint::new(a[0], a[1], a[2]), HeisenbergPoint::new(b[0], b[1], b[2]));
    let opts = CcOptions::default();
    let solved = cc_distance(&p, &q, &opts).map_err(|e| e.to_string())?;
    let penalty = penalty_oracle(&p, &q, &opts).map_err(|e| e.to_string())?;
    Ok(json!({
        "cc": solved.distance,
        "converged": solved.converged,
        "exact": heisenberg_distance_exact(&p, &q),
        "penalty": penalty.extrapolated,
    })
    .to_string())
}

#[wasm_bindgen]
pub fn twist_probe(a: i32, r1: f64, theta1: f64, theta2: f64) -> Result<String, JsError> {
    twist_probe_json(a, r1, theta1, theta2).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn julia_points(depth: u32) -> Result<Vec<f64>, JsError> {
    julia_chart(depth).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn cc_compare(ax: f64, ay: f64, at: f64, bx: f64, by: f64, bt: f64) -> Result<String, JsError> {
    cc_compare_json([ax, ay, at], [bx, by, bt]).map_err(|e| JsError::new(&e))
}
