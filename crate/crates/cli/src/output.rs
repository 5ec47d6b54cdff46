use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};

/// Files produced by a command, kept in memory until the command has fully
/// succeeded.
#[derive(Default)]
pub struct Outputs {
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    pub fn add(&mut self, name: impl Into<String>, bytes: impl Into<Vec<u8>>) -> Result<()> {
        let name = name.into();
        if self.files.iter().any(|(n, _)| *n == name) {
            bail!("two outputs would be written to {name}");
        }
        self.files.push((name, bytes.into()));
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.iter().map(|(n, _)| n.as_str())
    }

    /// Writes everything into a staging directory next to the targets, then
    /// renames each file into place.
    pub fn commit(self, out_dir: &Path) -> Result<()> {
        fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
        let staging = tempfile::Builder::new()
            .prefix(".layertree-staging-")
            .tempdir_in(out_dir)
            .with_context(|| format!("staging in {}", out_dir.display()))?;
        for (name, bytes) in &self.files {
            let path = staging.path().join(name);
            fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        }
        for (name, _) in &self.files {
            let target = out_dir.join(name);
            fs::rename(staging.path().join(name), &target)
                .with_context(|| format!("moving output to {}", target.display()))?;
        }
        Ok(())
    }
}
