//! Output directory handling, manifests and exit codes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_AUDIT: u8 = 4;

/// Bad flag combinations found after argument parsing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Exit code for an error escaping a subcommand.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return EXIT_USAGE;
    }
    match err.downcast_ref::<clicksim::Error>() {
        Some(clicksim::Error::Config(_)) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

/// Everything that identifies a run. Written before any work starts.
#[derive(Debug, Clone, Default)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub data_dir: Option<PathBuf>,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// `(label, path)` of every file whose content feeds the run.
    pub inputs: Vec<(String, PathBuf)>,
    /// Effective settings, `key = value` per line.
    pub settings: String,
}

impl RunManifest {
    /// SHA-256 over the settings and every input, each input framed as
    /// `label NUL length NUL bytes` so renames and concatenations differ.
    pub fn input_hash(&self) -> Result<String> {
        let mut h = Sha256::new();
        h.update(self.command.as_bytes());
        h.update([0]);
        h.update(self.settings.as_bytes());
        for (label, path) in &self.inputs {
            let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
            h.update(label.as_bytes());
            h.update([0]);
            h.update(bytes.len().to_string().as_bytes());
            h.update([0]);
            h.update(&bytes);
        }
        Ok(h.finalize().iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        }))
    }

    pub fn to_text(&self) -> Result<String> {
        let show = |p: &Option<PathBuf>| p.as_ref().map_or("-".to_string(), |p| p.display().to_string());
        let mut s = String::new();
        let _ = writeln!(s, "command\t{}", self.command);
        let _ = writeln!(s, "config\t{}", show(&self.config_path));
        let _ = writeln!(s, "data\t{}", show(&self.data_dir));
        let _ = writeln!(s, "seed\t{}", self.seed);
        let _ = writeln!(s, "out\t{}", self.out_dir.display());
        for (label, path) in &self.inputs {
            let _ = writeln!(s, "input\t{label}\t{}", path.display());
        }
        let _ = writeln!(s, "input_hash\tsha256:{}", self.input_hash()?);
        for line in self.settings.lines() {
            let _ = writeln!(s, "setting\t{line}");
        }
        Ok(s)
    }
}

/// Output directory of one run. Files are tracked so a failed run can
/// remove what it wrote.
pub struct RunDir {
    dir: PathBuf,
    created_dir: bool,
    written: Vec<PathBuf>,
}

impl RunDir {
    pub fn create(dir: &Path) -> Result<Self> {
        let created_dir = !dir.exists();
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            created_dir,
            written: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let p = self.path(name);
        fs::write(&p, contents).with_context(|| format!("writing {}", p.display()))?;
        self.written.push(p.clone());
        Ok(p)
    }

    /// Registers a file or directory produced by library code.
    pub fn track(&mut self, name: &str) -> PathBuf {
        let p = self.path(name);
        self.written.push(p.clone());
        p
    }

    pub fn write_manifest(&mut self, m: &RunManifest) -> Result<()> {
        let text = m.to_text()?;
        self.write("manifest.txt", text)?;
        Ok(())
    }

    pub fn remove_outputs(&self) {
        for p in self.written.iter().rev() {
            if p.is_dir() {
                let _ = fs::remove_dir_all(p);
            } else {
                let _ = fs::remove_file(p);
            }
        }
        if self.created_dir {
            let _ = fs::remove_dir(&self.dir);
        }
    }
}
