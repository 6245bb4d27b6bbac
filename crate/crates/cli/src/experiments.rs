use qrlab::certify::{certify_with, CertifyConfig};
use qrlab::distortion::{eigen_distortion, iterate_distortion, iterate_table_csv, metric_distortion, DistortionOptions, DistortionReport};
use qrlab::manifolds::{lens_project, CcOptions, SpherePoint};
use qrlab::map_zoo::MapHandle;
use qrlab::mm_derivative::{hom_distortion, pansu_derivative_uncertified};
use qrlab::trap_dynamics::{build_trap, classify_orbit, julia_approx, Region, UQRMap};
use qrlab::tukia::{build_structure, invariance_residual_cached, residual_csv, ResidualSummary, StructureGrid};
use qrlab::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::RunError;
use crate::manifest::ArtifactWriter;
use crate::SCHEMA_VERSION;

/// Runs the configured experiment, writing artifacts through `w`. Returns
/// the failure message when the experiment completed but did not pass.
pub fn run(cfg: &ExperimentConfig, w: &mut ArtifactWriter, verbose: bool) -> Result<Option<String>, RunError> {
    match cfg.kind {
        ExperimentKind::DistortionSweep => distortion_sweep(cfg, w),
        ExperimentKind::TrapBuild => trap_build(cfg, w),
        ExperimentKind::Julia => julia(cfg, w),
        ExperimentKind::PansuSweep => pansu_sweep(cfg, w),
        ExperimentKind::TukiaBuild => tukia_build(cfg, w, verbose),
        ExperimentKind::CertifyAll => certify_all(cfg, w, verbose),
    }
    .map(|_| None)
    .or_else(|e| match e {
        Failure::Criteria(msg) => Ok(Some(msg)),
        Failure::Run(e) => Err(e),
    })
}

enum Failure {
    Run(RunError),
    Criteria(String),
}

impl<E: Into<RunError>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Run(e.into())
    }
}

type Step = Result<(), Failure>;

fn sample_points(cfg: &ExperimentConfig) -> Vec<SpherePoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.sample.points);
    while out.len() < cfg.sample.points {
        let z: Vec<Complex64> = (0..2).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let n2: f64 = z.iter().map(|c| c.norm_sqr()).sum();
        if !(0.01..=1.0).contains(&n2) {
            continue;
        }
        if let Ok(p) = SpherePoint::new(z) {
            if p.min_modulus() > cfg.sample.min_modulus {
                out.push(p);
            }
        }
    }
    out
}

fn coords(p: &SpherePoint) -> String {
    let c = p.coords();
    format!("{:.15e},{:.15e},{:.15e},{:.15e}", c[0].re, c[0].im, c[1].re, c[1].im)
}

fn region_label(r: Region) -> &'static str {
    match r {
        Region::Trap => "TRAP",
        Region::ConformalBall => "CONFORMAL_BALL",
        Region::Transit => "TRANSIT",
    }
}

fn map(cfg: &ExperimentConfig) -> Result<MapHandle, RunError> {
    let d = cfg.map.as_ref().ok_or_else(|| RunError::Schema("missing [map]".into()))?;
    Ok(d.build()?)
}

fn trap(cfg: &ExperimentConfig) -> Result<UQRMap, RunError> {
    Ok(build_trap(cfg.trap.a, &cfg.lens()?, None)?)
}

fn distortion_sweep(cfg: &ExperimentConfig, w: &mut ArtifactWriter) -> Step {
    let m = map(cfg)?;
    let pts = sample_points(cfg);
    let opts = DistortionOptions { directions: cfg.distortion.directions, cc: CcOptions::default().with_restarts(cfg.distortion.restarts) };
    let reports: Vec<DistortionReport> = pts.par_iter().map(|p| metric_distortion(&m, p, &cfg.distortion.radii, &opts)).collect::<qrlab::Result<_>>()?;
    let mut summary = String::from("point_id,re_z1,im_z1,re_z2,im_z2,h_extrapolated,slope,monotone,eigen_ratio\n");
    let mut rows = String::from(DistortionReport::CSV_HEADER);
    rows.push('\n');
    let mut h_max = 0.0f64;
    for (i, (p, r)) in pts.iter().zip(&reports).enumerate() {
        let (lo, hi) = eigen_distortion(&m, p)?;
        summary.push_str(&format!("{i},{},{:.12},{:.12},{},{:.12}\n", coords(p), r.extrapolated, r.slope, r.monotone, hi / lo));
        rows.extend(r.to_csv(&i.to_string()).lines().skip(1).map(|l| format!("{l}\n")));
        h_max = h_max.max(r.extrapolated);
    }
    w.write("distortion.csv", &summary)?;
    w.write("distortion_radii.csv", &rows)?;
    let mut table = None;
    if cfg.distortion.iterates > 0 {
        let it = iterate_distortion(&m, cfg.distortion.iterates, &pts)?;
        w.write("iterates.csv", &iterate_table_csv(&it))?;
        table = Some(it);
    }
    w.write_json("summary.json", &json!({ "schema_version": SCHEMA_VERSION, "map": m.name(), "points": pts.len(), "h_max": h_max, "iterates": table }))?;
    Ok(())
}

fn trap_build(cfg: &ExperimentConfig, w: &mut ArtifactWriter) -> Step {
    let u = trap(cfg)?;
    w.write_json("trap.json", &json!({ "schema_version": SCHEMA_VERSION, "trap": u.config }))?;
    let spec = &u.config.spec;
    let pts: Vec<SpherePoint> = sample_points(cfg).iter().map(|p| lens_project(p, spec).map(|l| l.representative().clone())).collect::<qrlab::Result<_>>()?;
    let orbits = pts.par_iter().map(|p| classify_orbit(&u, p, cfg.trap.orbit_steps)).collect::<qrlab::Result<Vec<_>>>()?;
    let mut csv = String::from("point_id,re_z1,im_z1,re_z2,im_z2,labels,truncated,contract_ok\n");
    let mut violations = 0usize;
    for (i, (p, o)) in pts.iter().zip(&orbits).enumerate() {
        let labels: Vec<&str> = o.labels.iter().map(|r| region_label(*r)).collect();
        violations += usize::from(!o.respects_contract());
        csv.push_str(&format!("{i},{},{},{},{}\n", coords(p), labels.join(";"), o.truncated, o.respects_contract()));
    }
    w.write("orbits.csv", &csv)?;
    w.write_json("summary.json", &json!({ "schema_version": SCHEMA_VERSION, "radius": u.config.radius, "r_prime": u.config.r, "degree": u.degree(), "orbits": pts.len(), "contract_violations": violations }))?;
    if violations > 0 {
        return Err(Failure::Criteria(format!("{violations} orbits break the trap contract")));
    }
    Ok(())
}

fn julia(cfg: &ExperimentConfig, w: &mut ArtifactWriter) -> Step {
    let u = trap(cfg)?;
    let cloud = julia_approx(&u, cfg.julia.depth.max(1))?;
    let mut csv = String::from("re_z1,im_z1,re_z2,im_z2,depth,word,seed,diameter,region\n");
    let mut outside = 0usize;
    for p in &cloud.points {
        let r = u.region(&p.point)?;
        outside += usize::from(r != Region::ConformalBall);
        csv.push_str(&format!("{},{},{},{},{:.12e},{}\n", coords(&p.point), p.depth, p.word, p.seed, p.diameter, region_label(r)));
    }
    w.write("julia.csv", &csv)?;
    w.write_json("summary.json", &json!({ "schema_version": SCHEMA_VERSION, "depth": cloud.depth, "seeds": cloud.seeds.len(), "points": cloud.points.len(), "outside_conformal_balls": outside, "decay_ratio": cloud.decay_ratio, "levels": cloud.levels }))?;
    if outside > 0 {
        return Err(Failure::Criteria(format!("{outside} Julia points outside the conformal balls")));
    }
    Ok(())
}

struct PansuRow {
    a: [[f64; 2]; 2],
    tau: f64,
    det: f64,
    h: f64,
    residual: f64,
    converged: bool,
}

fn pansu_sweep(cfg: &ExperimentConfig, w: &mut ArtifactWriter) -> Step {
    let m = map(cfg)?;
    let pts = sample_points(cfg);
    let rows: Vec<PansuRow> = pts
        .par_iter()
        .map(|p| {
            let d = pansu_derivative_uncertified(&m, p, &cfg.pansu.schedule)?;
            Ok(PansuRow { a: d.a, tau: d.tau, det: d.det(), h: hom_distortion(&d)?, residual: d.residual, converged: d.converged })
        })
        .collect::<qrlab::Result<_>>()?;
    let mut csv = String::from("point_id,re_z1,im_z1,re_z2,im_z2,a11,a12,a21,a22,tau,det,h,residual,converged\n");
    for (i, (p, r)) in pts.iter().zip(&rows).enumerate() {
        csv.push_str(&format!(
            "{i},{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12},{:.3e},{}\n",
            coords(p),
            r.a[0][0],
            r.a[0][1],
            r.a[1][0],
            r.a[1][1],
            r.tau,
            r.det,
            r.h,
            r.residual,
            r.converged
        ));
    }
    w.write("pansu.csv", &csv)?;
    let h_max = rows.iter().map(|r| r.h).fold(0.0, f64::max);
    let unconverged = rows.iter().filter(|r| !r.converged).count();
    w.write_json(
        "summary.json",
        &json!({ "schema_version": SCHEMA_VERSION, "map": m.name(), "points": rows.len(), "h_max": h_max, "unconverged": unconverged }),
    )?;
    Ok(())
}

fn tukia_build(cfg: &ExperimentConfig, w: &mut ArtifactWriter, verbose: bool) -> Step {
    let u = trap(cfg)?;
    let coarse = StructureGrid::for_trap(&u, cfg.tukia.grid)?;
    let mut grids = vec![("", coarse.clone())];
    if cfg.tukia.refine {
        grids.push(("_fine", coarse.refined()));
    }
    let mut summaries = Vec::new();
    for (suffix, grid) in grids {
        if verbose {
            eprintln!("tukia: building structure on {} grid points", grid.len());
        }
        let cs = build_structure(&u, &grid, cfg.tukia.iterates)?;
        let res = invariance_residual_cached(&cs)?;
        w.write(&format!("structure{suffix}.json"), &(cs.to_json()? + "\n"))?;
        w.write(&format!("residual{suffix}.csv"), &residual_csv(&cs, &res))?;
        summaries.push(json!({
            "points": grid.len(),
            "residual": ResidualSummary::new(&res),
            "excluded_fraction": cs.excluded_fraction,
            "max_radius": cs.max_radius,
            "warning": cs.warning,
        }));
    }
    let ratio = match summaries.as_slice() {
        [c, f] => Some(c["residual"]["mean"].as_f64().unwrap_or(f64::NAN) / f["residual"]["mean"].as_f64().unwrap_or(f64::NAN)),
        _ => None,
    };
    w.write_json("summary.json", &json!({ "schema_version": SCHEMA_VERSION, "grids": summaries, "refinement_ratio": ratio }))?;
    Ok(())
}

fn certify_all(cfg: &ExperimentConfig, w: &mut ArtifactWriter, verbose: bool) -> Step {
    let c = cfg.certify.clone().unwrap_or_else(|| CertifyConfig { seed: cfg.seed, ..CertifyConfig::default() });
    let report = certify_with(&c, |r| {
        if verbose {
            eprintln!("{}", r.line());
        }
    });
    let mut lines = String::from("id,name,pass,measured\n");
    for r in &report.criteria {
        let m: Vec<String> = r.measured.iter().map(|(k, v)| format!("{k}={v:e}")).collect();
        lines.push_str(&format!("{},{},{},{}\n", r.id, r.name, r.pass, m.join(";")));
    }
    w.write("certify.csv", &lines)?;
    w.write_json("certify.json", &json!({ "schema_version": SCHEMA_VERSION, "report": report }))?;
    let failed: Vec<String> = report.criteria.iter().filter(|r| !r.pass).map(|r| r.id.to_string()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Criteria(format!("criteria {} failed", failed.join(", "))))
    }
}
