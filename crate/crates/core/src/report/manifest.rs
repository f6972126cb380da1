use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{FgttError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

/// SHA-256 over `"blob <len>\0"` followed by the bytes, as git does for
/// its object ids.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: PathBuf,
    pub content_hash: String,
}

impl FileRecord {
    pub fn of(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| FgttError::io(path, e))?;
        Ok(FileRecord {
            path: path.to_path_buf(),
            content_hash: content_hash(&bytes),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: Option<PathBuf>,
    pub seed: u64,
    pub tool_version: String,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    /// Hash of the concatenated input hashes, in the order listed.
    pub inputs_hash: String,
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        command: &str,
        args: &[String],
        config: Option<&Path>,
        seed: u64,
        inputs: &[PathBuf],
        outputs: &[PathBuf],
        wall_clock_seconds: f64,
    ) -> Result<Self> {
        let inputs = inputs.iter().map(|p| FileRecord::of(p)).collect::<Result<Vec<_>>>()?;
        let outputs = outputs.iter().map(|p| FileRecord::of(p)).collect::<Result<Vec<_>>>()?;
        let joined: String = inputs.iter().map(|r| r.content_hash.as_str()).collect();
        Ok(RunManifest {
            command: command.into(),
            args: args.to_vec(),
            config: config.map(Path::to_path_buf),
            seed,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            inputs,
            outputs,
            inputs_hash: content_hash(joined.as_bytes()),
            wall_clock_seconds,
        })
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let p = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&p, text + "\n").map_err(|e| FgttError::io(&p, e))?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_git_blob_layout() {
        // sha256 of "blob 0\0"
        assert_eq!(
            content_hash(b""),
            "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813"
        );
        assert_ne!(content_hash(b"a"), content_hash(b"b"));
    }

    #[test]
    fn manifest_lists_files() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("x.csv");
        std::fs::write(&f, "a\n1\n").unwrap();
        let m = RunManifest::build("generate", &[], None, 7, &[], &[f.clone()], 0.5).unwrap();
        assert_eq!(m.outputs[0].content_hash, content_hash(b"a\n1\n"));
        let p = m.write(dir.path()).unwrap();
        let back: RunManifest = serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
