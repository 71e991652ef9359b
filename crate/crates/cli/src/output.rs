//! Output staging. Every file is rendered in memory first and only written
//! once the whole command has succeeded, so a failed run leaves nothing behind.

use std::fs;
use std::path::{Component, Path, PathBuf};

use crate::CliError;

#[derive(Debug, Default)]
pub struct Outputs {
    files: Vec<(PathBuf, Vec<u8>)>,
}

/// Rejects names that would escape the output directory.
pub fn checked_relative(name: &Path) -> Result<PathBuf, CliError> {
    let ok = name.components().any(|c| matches!(c, Component::Normal(_)))
        && name
            .components()
            .all(|c| matches!(c, Component::Normal(_) | Component::CurDir));
    if ok {
        Ok(name
            .components()
            .filter(|c| matches!(c, Component::Normal(_)))
            .collect())
    } else {
        Err(CliError::Config(format!(
            "output name {} must be a relative path inside --out",
            name.display()
        )))
    }
}

impl Outputs {
    pub fn add(&mut self, name: impl AsRef<Path>, contents: impl Into<Vec<u8>>) -> Result<(), CliError> {
        let rel = checked_relative(name.as_ref())?;
        if self.files.iter().any(|(p, _)| *p == rel) {
            return Err(CliError::Config(format!("output {} is named twice", rel.display())));
        }
        self.files.push((rel, contents.into()));
        Ok(())
    }

    pub fn names(&self) -> Vec<String> {
        self.files
            .iter()
            .map(|(p, _)| p.to_string_lossy().into_owned())
            .collect()
    }

    /// Writes each file to a temporary sibling, then renames them all into place.
    pub fn commit(self, out: &Path) -> Result<(), CliError> {
        let mut staged: Vec<(PathBuf, PathBuf)> = Vec::with_capacity(self.files.len());
        let result = (|| {
            for (rel, bytes) in &self.files {
                let target = out.join(rel);
                if let Some(parent) = target.parent() {
                    fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
                }
                let mut tmp = target.clone().into_os_string();
                tmp.push(".partial");
                let tmp = PathBuf::from(tmp);
                fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
                staged.push((tmp, target));
            }
            for (tmp, target) in &staged {
                fs::rename(tmp, target).map_err(|e| CliError::io(target, e))?;
            }
            Ok(())
        })();
        if result.is_err() {
            for (tmp, _) in &staged {
                let _ = fs::remove_file(tmp);
            }
        }
        result
    }
}
