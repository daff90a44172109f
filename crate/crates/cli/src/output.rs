//! Output directories that appear only once complete.

use std::path::{Path, PathBuf};

use tempfile::TempDir;

/// A hidden sibling of `dest` that replaces it on [`Staged::commit`]. Dropped
/// without committing, it is removed.
pub struct Staged {
    tmp: TempDir,
    dest: PathBuf,
}

impl Staged {
    pub fn new(dest: &Path) -> std::io::Result<Self> {
        let parent = match dest.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        std::fs::create_dir_all(&parent)?;
        let tmp = tempfile::Builder::new().prefix(".warpfuse-").tempdir_in(&parent)?;
        Ok(Self {
            tmp,
            dest: dest.to_path_buf(),
        })
    }

    pub fn path(&self) -> &Path {
        self.tmp.path()
    }

    pub fn commit(self) -> std::io::Result<()> {
        if self.dest.exists() {
            std::fs::remove_dir_all(&self.dest)?;
        }
        std::fs::rename(self.tmp.path(), &self.dest)?;
        Ok(())
    }

    /// Moves the staged subdirectory `sub` to `dest` instead of the whole stage.
    pub fn commit_subdir(self, sub: &Path) -> std::io::Result<()> {
        if let Some(parent) = self.dest.parent() {
            std::fs::create_dir_all(parent)?;
        }
        if self.dest.exists() {
            std::fs::remove_dir_all(&self.dest)?;
        }
        std::fs::rename(self.tmp.path().join(sub), &self.dest)?;
        Ok(())
    }
}
