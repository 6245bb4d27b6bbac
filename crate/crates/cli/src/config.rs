//! Experiment configuration, read from TOML with a strict schema.

use std::path::PathBuf;

use qrlab::certify::{CertifyConfig, CRITERIA};
use qrlab::manifolds::LensSpec;
use qrlab::map_zoo::MapDescriptor;
use qrlab::mm_derivative::DEFAULT_SCHEDULE;
use qrlab::trap_dynamics::MAX_JULIA_DEPTH;
use serde::{Deserialize, Serialize};

use crate::error::RunError;
use crate::manifest::sha256_hex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    DistortionSweep,
    TrapBuild,
    Julia,
    PansuSweep,
    TukiaBuild,
    CertifyAll,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::DistortionSweep => "distortion-sweep",
            ExperimentKind::TrapBuild => "trap-build",
            ExperimentKind::Julia => "julia",
            ExperimentKind::PansuSweep => "pansu-sweep",
            ExperimentKind::TukiaBuild => "tukia-build",
            ExperimentKind::CertifyAll => "certify-all",
        }
    }
}

/// The trap map: F_a on L_{p,q}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrapSection {
    pub a: i64,
    pub p: u32,
    pub q: Vec<i64>,
    /// Orbit length for the classification table of trap-build.
    pub orbit_steps: usize,
}

impl Default for TrapSection {
    fn default() -> Self {
        Self { a: 2, p: 2, q: vec![1, 1], orbit_steps: 6 }
    }
}

/// Random sample points (seeded), kept at `min_modulus` from the branch locus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSection {
    pub points: usize,
    pub min_modulus: f64,
}

impl Default for SampleSection {
    fn default() -> Self {
        Self { points: 50, min_modulus: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistortionSection {
    pub radii: Vec<f64>,
    pub directions: usize,
    pub restarts: usize,
    /// When positive, also tabulates the distortion of the first iterates.
    pub iterates: usize,
}

impl Default for DistortionSection {
    fn default() -> Self {
        Self { radii: vec![0.2, 0.1, 0.05, 0.025], directions: 64, restarts: 2, iterates: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JuliaSection {
    /// Inverse-iteration depth; 0 runs a single level.
    pub depth: usize,
}

impl Default for JuliaSection {
    fn default() -> Self {
        Self { depth: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PansuSection {
    pub schedule: Vec<f64>,
}

impl Default for PansuSection {
    fn default() -> Self {
        Self { schedule: DEFAULT_SCHEDULE.to_vec() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TukiaSection {
    /// Points per axis in every grid block.
    pub grid: usize,
    pub iterates: usize,
    /// Also build on the refined grid and report the residual ratio.
    pub refine: bool,
}

impl Default for TukiaSection {
    fn default() -> Self {
        Self { grid: 8, iterates: 8, refine: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    /// Output directory; `--out` takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map: Option<MapDescriptor>,
    #[serde(default)]
    pub trap: TrapSection,
    #[serde(default)]
    pub sample: SampleSection,
    #[serde(default)]
    pub distortion: DistortionSection,
    #[serde(default)]
    pub julia: JuliaSection,
    #[serde(default)]
    pub pansu: PansuSection,
    #[serde(default)]
    pub tukia: TukiaSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certify: Option<CertifyConfig>,
}

fn schema(msg: impl Into<String>) -> RunError {
    RunError::Schema(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, RunError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| schema(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Hash of the parsed config without the output directory, so that
    /// formatting and output location do not change it.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        sha256_hex(serde_json::to_string(&c).unwrap_or_default().as_bytes())
    }

    pub fn lens(&self) -> Result<LensSpec, RunError> {
        LensSpec::new(self.trap.p, self.trap.q.clone()).map_err(|e| schema(format!("trap lens: {e}")))
    }

    pub fn validate(&self) -> Result<(), RunError> {
        use ExperimentKind::*;
        let k = self.kind;
        if matches!(k, DistortionSweep | PansuSweep) {
            let map = self.map.as_ref().ok_or_else(|| schema(format!("{} needs a [map] section", k.name())))?;
            map.build().map_err(|e| schema(format!("map: {e}")))?;
            if self.sample.points == 0 {
                return Err(schema("sample.points must be positive"));
            }
            if !(self.sample.min_modulus >= 0.0 && self.sample.min_modulus < std::f64::consts::FRAC_1_SQRT_2) {
                return Err(schema("sample.min_modulus must lie in [0, 1/sqrt 2)"));
            }
        }
        if k == DistortionSweep {
            let d = &self.distortion;
            if d.radii.is_empty() || d.directions == 0 {
                return Err(schema("distortion.radii and distortion.directions must be nonempty"));
            }
            if d.radii.iter().any(|r| !(1e-4..=std::f64::consts::PI).contains(r)) {
                return Err(schema("distortion.radii must lie in [1e-4, pi]"));
            }
        }
        if k == PansuSweep && (self.pansu.schedule.len() < 3 || self.pansu.schedule.iter().any(|h| !(h.is_finite() && *h > 0.0))) {
            return Err(schema("pansu.schedule needs at least three positive scales"));
        }
        if matches!(k, TrapBuild | Julia | TukiaBuild) {
            self.lens()?;
        }
        if k == Julia && self.julia.depth > MAX_JULIA_DEPTH {
            return Err(schema(format!("julia.depth must be at most {MAX_JULIA_DEPTH}")));
        }
        if k == TukiaBuild {
            let t = &self.tukia;
            if t.grid < 2 || !t.grid.is_multiple_of(self.trap.p as usize) || t.iterates == 0 {
                return Err(schema(format!("tukia.grid must be at least 2 and divisible by p = {}; tukia.iterates must be positive", self.trap.p)));
            }
        }
        if let Some(c) = &self.certify {
            if c.criteria.is_empty() || c.criteria.iter().any(|id| !CRITERIA.contains(id)) {
                return Err(schema("certify.criteria must be a nonempty subset of 1..=10"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = ExperimentConfig::from_toml("kind = \"julia\"\n").unwrap();
        assert_eq!(cfg.julia.depth, 4);
        assert_eq!(cfg.trap, TrapSection::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(ExperimentConfig::from_toml("kind = \"julia\"\nbogus = 1\n"), Err(RunError::Schema(_))));
        assert!(matches!(ExperimentConfig::from_toml("kind = \"julia\"\n[julia]\ndepht = 2\n"), Err(RunError::Schema(_))));
        assert!(matches!(ExperimentConfig::from_toml("kind = \"teleport\"\n"), Err(RunError::Schema(_))));
    }

    #[test]
    fn map_descriptor_reads_from_a_table() {
        let cfg = ExperimentConfig::from_toml("kind = \"distortion-sweep\"\n[map]\nkind = \"multi-twist\"\na = 3\n").unwrap();
        assert_eq!(cfg.map, Some(MapDescriptor::MultiTwist { a: 3 }));
    }

    #[test]
    fn empty_grids_are_schema_errors() {
        let no_radii = "kind = \"distortion-sweep\"\n[map]\nkind = \"multi-twist\"\na = 2\n[distortion]\nradii = []\n";
        assert!(matches!(ExperimentConfig::from_toml(no_radii), Err(RunError::Schema(_))));
        assert!(matches!(ExperimentConfig::from_toml("kind = \"tukia-build\"\n[tukia]\ngrid = 0\n"), Err(RunError::Schema(_))));
        assert!(matches!(ExperimentConfig::from_toml("kind = \"tukia-build\"\n[tukia]\ngrid = 5\n"), Err(RunError::Schema(_))));
    }

    #[test]
    fn digest_ignores_output_directory() {
        let a = ExperimentConfig::from_toml("kind = \"julia\"\nout = \"x\"\n").unwrap();
        let b = ExperimentConfig::from_toml("kind = \"julia\"\n").unwrap();
        assert_eq!(a.digest(), b.digest());
        let c = ExperimentConfig::from_toml("kind = \"julia\"\nseed = 1\n").unwrap();
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn shipped_configs_are_valid() {
        let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        let mut n = 0;
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.extension().is_some_and(|e| e == "toml") {
                ExperimentConfig::from_toml(&std::fs::read_to_string(&path).unwrap()).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
                n += 1;
            }
        }
        assert_eq!(n, 6);
    }
}
