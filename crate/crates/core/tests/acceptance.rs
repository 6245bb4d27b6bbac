//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on failure.
//!
//! Every tolerance and sample size is pinned here rather than taken from the
//! library defaults, so a change of defaults cannot loosen this check.

use std::process::ExitCode;

use qrlab::certify::{certify_with, CertifyConfig, Sizes, Tolerances, CRITERIA};

fn pinned() -> CertifyConfig {
    CertifyConfig {
        seed: 20,
        a: 2,
        pullback_degrees: vec![2, 3],
        lens_p: 2,
        lens_q: vec![1, 1],
        criteria: CRITERIA.to_vec(),
        tolerances: Tolerances {
            pullback: 1e-7,
            h_bound: Some(2.0),
            eigen_slack: 1e-8,
            metric_slack: 0.1,
            interpolant_outside: 1e-10,
            interpolant_isometry: 1e-6,
            interpolant_seam: 1e-5,
            uqr_row_factor: 1.05,
            control_growth: 1.8,
            julia_decay: 0.9,
            pansu_fixture: 1e-6,
            pansu_tau: 1e-3,
            pansu_slack: 0.02,
            center_exact: 1e-9,
            center_oracle: 1e-3,
            center_equivariance: 1e-6,
            structure_trap: 1e-5,
            refinement_ratio: 1.5,
            cc_segment: 1e-4,
            cc_exact: 5e-3,
            cc_oracle: 0.02,
            cc_metric_slack: 0.02,
        },
        sizes: Sizes {
            pullback_points: 1000,
            eigen_points: 1000,
            metric_points: 50,
            preimage_targets: 20,
            iterate_points: 200,
            iterates: 8,
            julia_depth: 5,
            pansu_points: 100,
            center_sets: 20,
            structure_grid: 24,
            structure_iterates: 8,
            cc_pairs: 50,
        },
    }
}

fn main() -> ExitCode {
    let cfg = pinned();
    let report = certify_with(&cfg, |r| println!("{} [{:.1}s]", r.line(), r.seconds));
    let passed = report.criteria.iter().filter(|r| r.pass).count();
    println!("acceptance: {passed}/{} criteria passed", report.criteria.len());
    if report.all_pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
