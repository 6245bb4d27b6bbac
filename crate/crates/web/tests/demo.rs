use qrlab_web::{cc_compare_json, julia_chart, twist_probe_json, MAX_DEMO_DEPTH};
use serde_json::Value;

#[test]
fn twist_probe_reports_the_pullback_factor() {
    let v: Value = serde_json::from_str(&twist_probe_json(3, 0.6, 0.4, -1.0).unwrap()).unwrap();
    assert!((v["pullback_factor"].as_f64().unwrap() - 3.0).abs() < 1e-9);
    assert!(v["distortion"].as_f64().unwrap() <= 3.0 + 1e-8);
    assert!(twist_probe_json(2, 1.5, 0.0, 0.0).is_err());
    assert!(twist_probe_json(0, 0.5, 0.0, 0.0).is_err());
}

#[test]
fn julia_chart_returns_triples_by_depth() {
    let pts = julia_chart(2).unwrap();
    assert!(!pts.is_empty() && pts.len().is_multiple_of(3));
    assert!(pts.chunks(3).all(|c| c[2] == 1.0 || c[2] == 2.0));
    assert!(julia_chart(0).is_err() && julia_chart(MAX_DEMO_DEPTH + 1).is_err());
}

#[test]
fn cc_compare_agrees_with_closed_form() {
    let v: Value = serde_json::from_str(&cc_compare_json([0.0, 0.0, 0.0], [0.5, 0.2, 0.3]).unwrap()).unwrap();
    let (cc, exact, pen) = (v["cc"].as_f64().unwrap(), v["exact"].as_f64().unwrap(), v["penalty"].as_f64().unwrap());
    assert!((cc - exact).abs() / exact < 5e-3 && (pen - exact).abs() / exact < 2e-2, "{v}");
}
