use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use tempfile::NamedTempFile;

use crate::Failure;

/// Output files staged next to their destination and renamed into place only
/// when [`Staged::commit`] is called. Dropping without committing deletes the
/// temporaries.
#[derive(Default)]
pub struct Staged {
    files: Vec<(NamedTempFile, PathBuf)>,
}

impl Staged {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn write_with(
        &mut self,
        dest: &Path,
        fill: impl FnOnce(&mut NamedTempFile) -> anyhow::Result<()>,
    ) -> Result<(), Failure> {
        let dir = match dest.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&dir)
            .with_context(|| format!("creating {}", dir.display()))
            .map_err(Failure::data)?;
        let mut tmp = NamedTempFile::new_in(&dir)
            .with_context(|| format!("staging {}", dest.display()))
            .map_err(Failure::data)?;
        fill(&mut tmp)
            .and_then(|_| tmp.flush().map_err(Into::into))
            .with_context(|| format!("writing {}", dest.display()))
            .map_err(Failure::data)?;
        self.files.push((tmp, dest.to_path_buf()));
        Ok(())
    }

    pub fn write_bytes(&mut self, dest: &Path, bytes: &[u8]) -> Result<(), Failure> {
        self.write_with(dest, |f| f.write_all(bytes).map_err(Into::into))
    }

    pub fn commit(self) -> Result<(), Failure> {
        for (tmp, dest) in self.files {
            tmp.persist(&dest)
                .with_context(|| format!("renaming into {}", dest.display()))
                .map_err(Failure::data)?;
        }
        Ok(())
    }
}
