//! All-or-nothing output directories.
//!
//! Commands write into a hidden sibling directory that is renamed onto the
//! requested path only after every file is in place.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use tempfile::TempDir;

pub struct Staging {
    dir: TempDir,
    target: PathBuf,
}

impl Staging {
    /// Refuses a target that exists and is not an empty directory.
    pub fn new(target: &Path) -> Result<Self> {
        if target.exists() {
            let empty = target.is_dir() && fs::read_dir(target)?.next().is_none();
            if !empty {
                bail!("output {} already exists and is not empty", target.display());
            }
        }
        let parent = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent).with_context(|| format!("creating {}", parent.display()))?;
        let dir = tempfile::Builder::new()
            .prefix(".etdmpc-partial-")
            .tempdir_in(&parent)
            .with_context(|| format!("creating a staging directory in {}", parent.display()))?;
        Ok(Self {
            dir,
            target: target.to_path_buf(),
        })
    }

    pub fn path(&self, rel: impl AsRef<Path>) -> Result<PathBuf> {
        let p = self.dir.path().join(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        Ok(p)
    }

    pub fn write_json<T: Serialize>(&self, rel: &str, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value)?;
        self.write_text(rel, &text)
    }

    pub fn write_text(&self, rel: &str, text: &str) -> Result<()> {
        let p = self.path(rel)?;
        fs::write(&p, text).with_context(|| format!("writing {}", p.display()))
    }

    pub fn write_csv<T: Serialize>(&self, rel: &str, rows: &[T]) -> Result<()> {
        Ok(etdmpc::io::write_csv(&self.path(rel)?, rows)?)
    }

    /// Moves the staged files onto the target path.
    pub fn commit(self) -> Result<PathBuf> {
        if self.target.is_dir() {
            fs::remove_dir(&self.target).with_context(|| format!("replacing {}", self.target.display()))?;
        }
        let staged = self.dir.keep();
        fs::rename(&staged, &self.target).with_context(|| format!("moving output into {}", self.target.display()))?;
        Ok(self.target)
    }
}
