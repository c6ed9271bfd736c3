use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use panelctrl_core::panel::PanelManifest;
use serde::Serialize;
use serde_json::Value;

use crate::exit::CliResult;

pub const TOOL: &str = "panelctrl";

/// Written next to every set of artifacts. Carries everything needed to
/// rerun the command and nothing that changes between runs.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub seed: Option<u64>,
    pub config: Value,
    pub panel: Option<PanelManifest>,
    pub outputs: Vec<String>,
    pub results: Value,
}

/// Output directory plus the artifacts written into it so far.
pub struct OutDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutDir {
    pub fn create(root: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(root)?;
        Ok(Self { root: root.to_path_buf(), written: Vec::new() })
    }

    /// Create `name` in the directory and hand a buffered writer to `f`.
    pub fn write<F>(&mut self, name: &str, f: F) -> CliResult<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> CliResult<()>,
    {
        let mut w = BufWriter::new(File::create(self.root.join(name))?);
        f(&mut w)?;
        w.flush()?;
        self.written.push(name.to_string());
        log::info!("wrote {}", self.root.join(name).display());
        Ok(())
    }

    pub fn finish(mut self, mut manifest: Manifest) -> CliResult<()> {
        manifest.outputs = std::mem::take(&mut self.written);
        self.write("manifest.json", |w| {
            serde_json::to_writer_pretty(&mut *w, &manifest)?;
            writeln!(w)?;
            Ok(())
        })
    }
}

impl Manifest {
    pub fn new(command: &'static str, config: &impl Serialize) -> CliResult<Self> {
        Ok(Self {
            tool: TOOL,
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed: None,
            config: serde_json::to_value(config)?,
            panel: None,
            outputs: Vec::new(),
            results: Value::Null,
        })
    }
}
