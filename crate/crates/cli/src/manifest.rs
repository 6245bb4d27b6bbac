use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::RunError;

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Ok,
    NumericalFailure,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub kind: String,
    pub config_sha256: String,
    pub status: Status,
    pub error: Option<String>,
    pub artifacts: Vec<Artifact>,
}

/// Single writer for one output directory. Every file goes through
/// [`ArtifactWriter::write`], so the manifest lists all of them.
pub struct ArtifactWriter {
    dir: PathBuf,
    artifacts: Vec<Artifact>,
}

impl ArtifactWriter {
    pub fn new(dir: &Path) -> Result<Self, RunError> {
        fs::create_dir_all(dir).map_err(|e| RunError::Io(format!("{}: {e}", dir.display())))?;
        Ok(Self { dir: dir.to_path_buf(), artifacts: Vec::new() })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<(), RunError> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|e| RunError::Io(format!("{}: {e}", path.display())))?;
        self.artifacts.push(Artifact { path: name.to_string(), sha256: sha256_hex(contents.as_bytes()), bytes: contents.len() as u64 });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), RunError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| RunError::Numerical(format!("serializing {name}: {e}")))?;
        text.push('\n');
        self.write(name, &text)
    }

    pub fn finish(self, kind: &str, config_sha256: &str, error: Option<String>) -> Result<Manifest, RunError> {
        let manifest = Manifest {
            schema_version: crate::SCHEMA_VERSION,
            kind: kind.to_string(),
            config_sha256: config_sha256.to_string(),
            status: if error.is_some() { Status::NumericalFailure } else { Status::Ok },
            error,
            artifacts: self.artifacts,
        };
        let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| RunError::Io(e.to_string()))?;
        text.push('\n');
        let path = self.dir.join(MANIFEST_FILE);
        fs::write(&path, text).map_err(|e| RunError::Io(format!("{}: {e}", path.display())))?;
        Ok(manifest)
    }
}

/// A previous successful run with the same config whose artifacts are intact.
pub fn up_to_date(dir: &Path, config_sha256: &str) -> bool {
    let Ok(text) = fs::read_to_string(dir.join(MANIFEST_FILE)) else {
        return false;
    };
    let Ok(m) = serde_json::from_str::<Manifest>(&text) else {
        return false;
    };
    m.status == Status::Ok
        && m.config_sha256 == config_sha256
        && m.artifacts.iter().all(|a| fs::read(dir.join(&a.path)).is_ok_and(|b| sha256_hex(&b) == a.sha256))
}
