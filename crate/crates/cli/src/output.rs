//! Output files: matrices, plain tables and the run manifest.

use std::fs;
use std::path::PathBuf;

use anyhow::Context;
use nalgebra::DMatrix;
use serde::Serialize;

use crate::config::RunConfig;

pub struct OutDir(PathBuf);

impl OutDir {
    pub fn create(cfg: &RunConfig) -> anyhow::Result<Self> {
        let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("out"));
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self(dir))
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }

    pub fn write(&self, name: &str, text: &str) -> anyhow::Result<()> {
        let path = self.path(name);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }

    pub fn write_manifest(&self, command: &str, cfg: &RunConfig) -> anyhow::Result<()> {
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            config: cfg,
        };
        self.write("manifest.toml", &toml::to_string(&manifest)?)
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'a str,
    version: &'a str,
    command: &'a str,
    config: &'a RunConfig,
}

/// Square matrix with asset labels on both margins. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn matrix_csv(m: &DMatrix<f64>, labels: &[String]) -> anyhow::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["asset".to_string()];
    header.extend(labels.iter().cloned());
    w.write_record(&header)?;
    for (i, name) in labels.iter().enumerate() {
        let mut row = vec![name.clone()];
        row.extend(m.row(i).iter().map(|v| format!("{v:?}")));
        w.write_record(&row)?;
    }
    csv_string(w)
}

pub fn table_csv(header: &[&str], rows: &[Vec<String>]) -> anyhow::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    csv_string(w)
}

fn csv_string(w: csv::Writer<Vec<u8>>) -> anyhow::Result<String> {
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes)?)
}
