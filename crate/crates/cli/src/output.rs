//! All-or-nothing output: files are collected in memory, written into a
//! scratch directory next to the destination, and renamed into place only
//! once every write has succeeded.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::CliError;

#[derive(Debug, Default)]
pub struct Staged {
    files: BTreeMap<PathBuf, Vec<u8>>,
}

impl Staged {
    pub fn new() -> Self {
        Self::default()
    }

    /// Queues `contents` under `rel`, a path relative to the output
    /// directory.
    pub fn add(&mut self, rel: impl Into<PathBuf>, contents: impl Into<Vec<u8>>) {
        self.files.insert(rel.into(), contents.into());
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    pub fn paths(&self) -> impl Iterator<Item = &Path> {
        self.files.keys().map(PathBuf::as_path)
    }

    pub fn commit(self, out: &Path) -> Result<Vec<PathBuf>, CliError> {
        let io = |what: &str, p: &Path, e: std::io::Error| {
            CliError::Internal(format!("{what} {}: {e}", p.display()))
        };
        std::fs::create_dir_all(out).map_err(|e| io("creating", out, e))?;
        let scratch = tempfile::Builder::new()
            .prefix(".predsafe-")
            .tempdir_in(out)
            .map_err(|e| io("creating scratch directory in", out, e))?;

        for (rel, bytes) in &self.files {
            let tmp = scratch.path().join(rel);
            if let Some(parent) = tmp.parent() {
                std::fs::create_dir_all(parent).map_err(|e| io("creating", parent, e))?;
            }
            std::fs::write(&tmp, bytes).map_err(|e| io("writing", &tmp, e))?;
        }

        let mut written = Vec::with_capacity(self.files.len());
        for rel in self.files.keys() {
            let dest = out.join(rel);
            if let Some(parent) = dest.parent() {
                std::fs::create_dir_all(parent).map_err(|e| io("creating", parent, e))?;
            }
            std::fs::rename(scratch.path().join(rel), &dest)
                .map_err(|e| io("moving into place", &dest, e))?;
            written.push(dest);
        }
        Ok(written)
    }
}
