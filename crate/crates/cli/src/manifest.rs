//! Run manifests: enough to reproduce a run and check its outputs.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    pub tool_version: &'static str,
    /// The command's settings with every default filled in.
    pub config: serde_json::Value,
    /// sha256 of each input file.
    pub inputs: BTreeMap<String, String>,
    /// sha256 of each output file, keyed by path relative to the output
    /// directory.
    pub outputs: BTreeMap<String, String>,
    pub duration_secs: f64,
}

pub struct Recorder {
    command: String,
    started: Instant,
    config: serde_json::Value,
    inputs: BTreeMap<String, String>,
    outputs: Vec<PathBuf>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut h = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = f.read(&mut buf).with_context(|| format!("reading {}", path.display()))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

/// Every regular file under `root` (or `root` itself), sorted.
pub fn files_under(root: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for e in walkdir::WalkDir::new(root).sort_by_file_name() {
        let e = e.with_context(|| format!("listing {}", root.display()))?;
        if e.file_type().is_file() {
            out.push(e.into_path());
        }
    }
    Ok(out)
}

impl Recorder {
    pub fn new(command: &str) -> Self {
        Recorder {
            command: command.to_string(),
            started: Instant::now(),
            config: serde_json::Value::Null,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn config(&mut self, value: impl Serialize) -> Result<()> {
        self.config = serde_json::to_value(value)?;
        Ok(())
    }

    /// Digests a file, or every file under a directory.
    pub fn input(&mut self, path: &Path) -> Result<()> {
        for f in files_under(path)? {
            let d = sha256_file(&f)?;
            self.inputs.insert(f.display().to_string(), d);
        }
        Ok(())
    }

    /// Registers a file, or a directory of files, this run wrote.
    pub fn output(&mut self, path: PathBuf) {
        self.outputs.push(path);
    }

    /// Digests the registered outputs and writes the manifest into `out`
    /// via a temporary file and rename.
    pub fn finish(self, out: &Path) -> Result<RunManifest> {
        let mut outputs = BTreeMap::new();
        for p in &self.outputs {
            for f in files_under(p)? {
                let rel = f.strip_prefix(out).unwrap_or(&f).to_string_lossy().replace('\\', "/");
                outputs.insert(rel, sha256_file(&f)?);
            }
        }
        let mut h = Sha256::new();
        h.update(self.command.as_bytes());
        h.update(self.config.to_string().as_bytes());
        for (k, v) in &self.inputs {
            h.update(k.as_bytes());
            h.update(v.as_bytes());
        }
        let run_id = hex::encode(&h.finalize()[..8]);
        let m = RunManifest {
            run_id,
            command: self.command,
            tool_version: env!("CARGO_PKG_VERSION"),
            config: self.config,
            inputs: self.inputs,
            outputs,
            duration_secs: self.started.elapsed().as_secs_f64(),
        };
        let tmp = out.join(format!("{MANIFEST_FILE}.tmp"));
        fs::write(&tmp, serde_json::to_string_pretty(&m)? + "\n").with_context(|| format!("writing {}", tmp.display()))?;
        fs::rename(&tmp, out.join(MANIFEST_FILE)).context("renaming manifest into place")?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_of_abc() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        fs::write(&p, "abc").unwrap();
        assert_eq!(sha256_file(&p).unwrap(), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn manifest_lists_registered_outputs() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("sub")).unwrap();
        fs::write(dir.path().join("sub/x.json"), "{}").unwrap();
        fs::write(dir.path().join("unrelated.txt"), "").unwrap();
        let run = || {
            let mut r = Recorder::new("synth");
            r.config(serde_json::json!({"users": 3})).unwrap();
            r.output(dir.path().join("sub"));
            r.finish(dir.path()).unwrap()
        };
        let (m, m2) = (run(), run());
        assert_eq!(m.outputs.keys().collect::<Vec<_>>(), vec!["sub/x.json"]);
        assert_eq!(m.run_id, m2.run_id);
        assert!(dir.path().join(MANIFEST_FILE).exists());
    }
}
