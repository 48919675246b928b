//! Run outputs: every file lands inside the output directory, and the
//! manifest is written before the outputs themselves.

use std::fs;
use std::path::{Component, Path, PathBuf};
use std::time::Instant;

use chrono::{SecondsFormat, Utc};
use loadcast::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub arguments: Vec<String>,
    /// SHA-256 of the canonical configuration text, or of the arguments
    /// without the output directory when no config file is used.
    pub config_hash: String,
    pub seed: Option<u64>,
    pub inputs: Vec<FileDigest>,
    /// Paths relative to the output directory.
    pub outputs: Vec<FileDigest>,
    pub started: String,
    pub wall_clock_seconds: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

fn digest(path: String, bytes: &[u8]) -> FileDigest {
    FileDigest { path, sha256: sha256_hex(bytes), bytes: bytes.len() as u64 }
}

/// A relative path made of plain components only.
fn check_name(name: &str) -> Result<()> {
    let p = Path::new(name);
    let plain = p.components().all(|c| matches!(c, Component::Normal(_)));
    if name.is_empty() || !plain || name == MANIFEST {
        return Err(Error::usage(format!("refusing to write `{name}`: not a plain path inside the output directory")));
    }
    Ok(())
}

pub struct Outputs {
    dir: PathBuf,
    command: String,
    arguments: Vec<String>,
    config_hash: String,
    seed: Option<u64>,
    inputs: Vec<FileDigest>,
    files: Vec<(String, Vec<u8>)>,
    started: Instant,
    started_at: String,
}

impl Outputs {
    pub fn new(dir: &Path, command: &str, arguments: &[String]) -> Self {
        let mut hashed = Vec::new();
        let mut skip = false;
        for a in arguments {
            if skip {
                skip = false;
                continue;
            }
            if a == "--out" {
                skip = true;
                continue;
            }
            if a.starts_with("--out=") {
                continue;
            }
            hashed.push(a.as_str());
        }
        Outputs {
            dir: dir.to_path_buf(),
            command: command.to_string(),
            arguments: arguments.to_vec(),
            config_hash: sha256_hex(hashed.join("\n").as_bytes()),
            seed: None,
            inputs: Vec::new(),
            files: Vec::new(),
            started: Instant::now(),
            started_at: Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true),
        }
    }

    pub fn set_config_hash(&mut self, canonical: &str) {
        self.config_hash = sha256_hex(canonical.as_bytes());
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
    }

    /// Reads an input file and records its digest.
    pub fn input(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        self.inputs.push(digest(path.display().to_string(), &bytes));
        Ok(bytes)
    }

    pub fn add(&mut self, name: &str, bytes: impl Into<Vec<u8>>) -> Result<()> {
        check_name(name)?;
        if self.files.iter().any(|(n, _)| n == name) {
            return Err(Error::usage(format!("output `{name}` written twice")));
        }
        self.files.push((name.to_string(), bytes.into()));
        Ok(())
    }

    /// Writes the manifest, then every output.
    pub fn finish(self) -> Result<RunManifest> {
        let io = |p: &Path, e| Error::io(p.display().to_string(), e);
        fs::create_dir_all(&self.dir).map_err(|e| io(&self.dir, e))?;
        let manifest = RunManifest {
            tool: "loadcast".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: self.command,
            arguments: self.arguments,
            config_hash: self.config_hash,
            seed: self.seed,
            inputs: self.inputs,
            outputs: self.files.iter().map(|(n, b)| digest(n.clone(), b)).collect(),
            started: self.started_at,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
        };
        let path = self.dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(|e| io(&path, e))?;
        for (name, bytes) in &self.files {
            let path = self.dir.join(name);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|e| io(parent, e))?;
            }
            fs::write(&path, bytes).map_err(|e| io(&path, e))?;
        }
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_stay_inside_the_directory() {
        for bad in ["../x.csv", "/tmp/x.csv", "", "a/../../b", "manifest.json", "./x"] {
            assert!(check_name(bad).is_err(), "{bad}");
        }
        for good in ["scores.csv", "plots/residuals.svg"] {
            assert!(check_name(good).is_ok());
        }
    }

    #[test]
    fn manifest_digests_match_written_files() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.csv");
        fs::write(&input, "a,b\n1,2\n").unwrap();
        let out_dir = dir.path().join("run");
        let args: Vec<String> = ["fit", "--out", "run", "--seed", "3"].iter().map(|s| s.to_string()).collect();
        let mut out = Outputs::new(&out_dir, "fit", &args);
        out.input(&input).unwrap();
        out.add("x.csv", "t,v\n").unwrap();
        assert!(out.add("x.csv", "again").is_err());
        let m = out.finish().unwrap();
        let back: RunManifest = serde_json::from_str(&fs::read_to_string(out_dir.join(MANIFEST)).unwrap()).unwrap();
        assert_eq!(back, m);
        for f in m.outputs.iter() {
            assert_eq!(sha256_hex(&fs::read(out_dir.join(&f.path)).unwrap()), f.sha256);
        }
        assert_eq!(m.inputs[0].sha256, sha256_hex(b"a,b\n1,2\n"));
        let other = Outputs::new(&dir.path().join("elsewhere"), "fit", &args);
        let mut moved = args.clone();
        moved[2] = "elsewhere".into();
        assert_eq!(Outputs::new(&out_dir, "fit", &moved).config_hash, other.config_hash);
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
