//! Output directory handling and the run manifest.

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{Context, Result};
use log::warn;
use mempca_core::io;
use serde::Serialize;

use crate::config::{Format, RunConfig};

#[derive(Debug, Serialize)]
pub struct StageTime {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub status: &'static str,
    pub exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub version: &'static str,
    pub config: RunConfig,
    pub timings: Vec<StageTime>,
    pub warnings: Vec<String>,
    /// File names relative to the output directory.
    pub artifacts: Vec<String>,
    pub summary: serde_json::Map<String, serde_json::Value>,
}

pub struct Run {
    pub dir: PathBuf,
    pub format: Format,
    pub manifest: Manifest,
}

impl Run {
    pub fn new(command: &str, config: RunConfig) -> Result<Self> {
        let dir = config.out_dir();
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir,
            format: config.format(),
            manifest: Manifest {
                command: command.to_string(),
                status: "running",
                exit_code: 0,
                error: None,
                version: env!("CARGO_PKG_VERSION"),
                config,
                timings: Vec::new(),
                warnings: Vec::new(),
                artifacts: Vec::new(),
                summary: serde_json::Map::new(),
            },
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.manifest.config
    }

    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.record_time(stage, start.elapsed().as_secs_f64());
        out
    }

    pub fn record_time(&mut self, stage: &str, seconds: f64) {
        self.manifest.timings.push(StageTime {
            stage: stage.to_string(),
            seconds,
        });
    }

    pub fn warn(&mut self, msg: impl Into<String>) {
        let msg = msg.into();
        warn!("{msg}");
        self.manifest.warnings.push(msg);
    }

    pub fn summary(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).expect("summary values serialize");
        self.manifest.summary.insert(key.to_string(), v);
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.dir.join(name);
        let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        self.manifest.artifacts.push(name.to_string());
        Ok(BufWriter::new(f))
    }

    /// Always CSV, whatever `--format` says; used for panels that feed other commands.
    pub fn csv(
        &mut self,
        name: &str,
        write: impl FnOnce(&mut BufWriter<File>) -> mempca_core::Result<()>,
    ) -> Result<()> {
        let mut w = self.create(name)?;
        write(&mut w)?;
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let w = self.create(name)?;
        io::write_json(w, value)?;
        Ok(())
    }

    /// `<stem>.csv` or `<stem>.json` depending on `--format`.
    pub fn table<T: Serialize>(
        &mut self,
        stem: &str,
        value: &T,
        write_csv: impl FnOnce(&mut BufWriter<File>) -> mempca_core::Result<()>,
    ) -> Result<()> {
        match self.format {
            Format::Csv => self.csv(&format!("{stem}.csv"), write_csv),
            Format::Json => self.json(&format!("{stem}.json"), value),
        }
    }

    /// Writes `manifest.json`; called on success and on failure alike.
    pub fn finish(mut self, outcome: &Result<()>, exit_code: i32) -> Result<()> {
        match outcome {
            Ok(()) => self.manifest.status = "ok",
            Err(e) => {
                self.manifest.status = "failed";
                self.manifest.error = Some(crate::describe(e));
            }
        }
        self.manifest.exit_code = exit_code;
        let path = self.dir.join("manifest.json");
        self.manifest.artifacts.push("manifest.json".into());
        let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        io::write_json(BufWriter::new(f), &self.manifest)?;
        Ok(())
    }
}
