use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

pub const VERSION: &str = concat!("v", env!("CARGO_PKG_VERSION"));

/// What a command ran with and what it wrote. Paths are relative to the
/// output directory.
#[derive(Debug, Serialize)]
pub struct RunManifest<'a, C> {
    pub command: &'a str,
    pub version: &'a str,
    pub seed: u64,
    pub config: &'a C,
    pub outputs: &'a [String],
}

pub fn manifest_name(command: &str) -> String {
    format!("{command}_manifest.json")
}

/// Output directory that records every file written into it.
pub struct OutDir {
    root: PathBuf,
    outputs: Vec<String>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            outputs: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Registers `rel` as an output and returns its full path, creating
    /// parent directories.
    pub fn path(&mut self, rel: &str) -> Result<PathBuf> {
        let full = self.root.join(rel);
        if let Some(parent) = full.parent() {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        self.outputs.push(rel.to_string());
        Ok(full)
    }

    /// Records a file some library routine already wrote under the root.
    pub fn record(&mut self, full: &Path) {
        let rel = full.strip_prefix(&self.root).unwrap_or(full);
        let rel = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        self.outputs.push(rel);
    }

    pub fn write_with<F>(&mut self, rel: &str, f: F) -> Result<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<()>,
    {
        let path = self.path(rel)?;
        let mut w =
            BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
        f(&mut w)?;
        w.flush().with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }

    pub fn json<S: Serialize>(&mut self, rel: &str, value: &S) -> Result<()> {
        self.write_with(rel, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            w.write_all(b"\n")?;
            Ok(())
        })
    }

    pub fn finish<C: Serialize>(self, command: &str, seed: u64, config: &C) -> Result<PathBuf> {
        let manifest = RunManifest {
            command,
            version: VERSION,
            seed,
            config,
            outputs: &self.outputs,
        };
        let path = self.root.join(manifest_name(command));
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
