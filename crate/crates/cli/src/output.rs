//! Atomic file output and the run manifest.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use dpmood::config::Config;

/// Write `path` through a temporary file in the same directory, renamed
/// into place only after `fill` succeeds.
pub fn write_atomic<F>(path: &Path, fill: F) -> anyhow::Result<()>
where
    F: FnOnce(&mut dyn Write) -> anyhow::Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir)?;
    let mut builder = tempfile::Builder::new();
    // temp files default to 0600; outputs should read like any other file
    #[cfg(unix)]
    builder.permissions(std::os::unix::fs::PermissionsExt::from_mode(0o644));
    let tmp = builder.tempfile_in(&dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        fill(&mut w)?;
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| io::Error::new(e.error.kind(), format!("{}: {}", path.display(), e.error)))?;
    Ok(())
}

pub fn write_atomic_bytes(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    write_atomic(path, |w| Ok(w.write_all(bytes)?))
}

/// Everything needed to repeat a run: the command line, the resolved
/// parameters and what was written. Saved as `key = value` text.
#[derive(Debug)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config_path: Option<PathBuf>,
    pub params: Config,
    pub seed: Option<u64>,
    pub artifacts: Vec<PathBuf>,
    pub started: String,
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl RunManifest {
    pub fn new(command: &str, argv: Vec<String>) -> Self {
        RunManifest {
            command: command.to_string(),
            argv,
            config_path: None,
            params: Config::new(),
            seed: None,
            artifacts: Vec::new(),
            started: now(),
        }
    }

    /// Manifest text for a run that ended with `exit_code`.
    pub fn render(&self, exit_code: i32, error: Option<&str>) -> String {
        let mut m = Config::new();
        let mut set = |k: &str, v: String| {
            // values are single-line by construction; flatten just in case
            m.set(k, v.replace('\n', " ")).expect("static key");
        };
        set("command", self.command.clone());
        set("argv", self.argv.join(" "));
        set(
            "config_path",
            self.config_path.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "none".into()),
        );
        set("seed", self.seed.map(|s| s.to_string()).unwrap_or_else(|| "none".into()));
        let artifacts: Vec<String> = self.artifacts.iter().map(|p| p.display().to_string()).collect();
        set("artifacts", if artifacts.is_empty() { "none".into() } else { artifacts.join(",") });
        set("started", self.started.clone());
        set("finished", now());
        set("exit_code", exit_code.to_string());
        set("status", error.map(|e| format!("failed: {e}")).unwrap_or_else(|| "ok".into()));
        for (k, v) in self.params.iter() {
            set(&format!("param_{k}"), v.to_string());
        }
        m.to_string()
    }
}
