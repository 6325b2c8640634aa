use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct OutputFile {
    pub file: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Stage {
    pub name: String,
    pub seconds: f64,
}

/// Record of one CLI run, written as manifest.json next to its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub arguments: serde_json::Value,
    pub regime: String,
    /// Parsed config, re-serialized; feeding it back reproduces the run.
    pub config: String,
    pub stages: Vec<Stage>,
    pub outputs: Vec<OutputFile>,
}

pub struct Recorder {
    out_dir: PathBuf,
    manifest: RunManifest,
}

impl Recorder {
    pub fn new(out_dir: &Path, command: &str, arguments: serde_json::Value, config: String) -> io::Result<Self> {
        fs::create_dir_all(out_dir)?;
        Ok(Self {
            out_dir: out_dir.to_path_buf(),
            manifest: RunManifest {
                tool: env!("CARGO_PKG_NAME"),
                version: env!("CARGO_PKG_VERSION"),
                command: command.to_string(),
                arguments,
                regime: String::new(),
                config,
                stages: Vec::new(),
                outputs: Vec::new(),
            },
        })
    }

    pub fn set_regime(&mut self, regime: &str) {
        self.manifest.regime = regime.to_string();
    }

    /// Run `f` and record its wall-clock time under `name`.
    pub fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.manifest.stages.push(Stage {
            name: name.to_string(),
            seconds: t.elapsed().as_secs_f64(),
        });
        out
    }

    pub fn write(&mut self, file: &str, contents: &[u8]) -> io::Result<()> {
        fs::write(self.out_dir.join(file), contents)?;
        self.manifest.outputs.push(OutputFile {
            file: file.to_string(),
            bytes: contents.len(),
            sha256: hex::encode(Sha256::digest(contents)),
        });
        Ok(())
    }

    pub fn finish(self) -> io::Result<RunManifest> {
        let json = serde_json::to_string_pretty(&self.manifest).map_err(io::Error::other)?;
        fs::write(self.out_dir.join("manifest.json"), json + "\n")?;
        Ok(self.manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checksums_match_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = Recorder::new(dir.path(), "test", serde_json::json!({}), String::new()).unwrap();
        r.write("a.txt", b"abc").unwrap();
        let m = r.finish().unwrap();
        assert_eq!(
            m.outputs[0].sha256,
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert!(dir.path().join("manifest.json").exists());
    }
}
