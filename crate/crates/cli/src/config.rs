//! Run configuration: a TOML file merged with command-line flags.
//!
//! Every key is optional in the file. After merging, each subcommand fills the
//! gaps with its defaults, so the manifest written next to the outputs holds a
//! complete configuration; passing the manifest back via `--config` reruns it.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use precision_lab::cov::{CovMethod, COV_METHODS};
use precision_lab::ggm::{GgmMethod, Params, GGM_METHODS};
use precision_lab::ingest::Horizon;
use precision_lab::tuning::{Criterion, Search, DEFAULT_BUDGET, DEFAULT_FOLDS};
use serde::{Deserialize, Serialize};

/// Rejected configuration; maps to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_err<T>(msg: impl Into<String>) -> anyhow::Result<T> {
    Err(ConfigError(msg.into()).into())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    /// `prices` or `returns`.
    pub kind: Option<String>,
    pub intraday: Option<PathBuf>,
    pub losses: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub methods: Option<Vec<String>>,
    pub from: Option<String>,
    pub to: Option<String>,
    #[serde(default)]
    pub tuning: TuningSection,
    #[serde(default)]
    pub backtest: BacktestSection,
    #[serde(default)]
    pub compare: CompareSection,
    #[serde(default)]
    pub synth: SynthSection,
    /// Named evaluation periods; the backtest writes one extra loss file per entry.
    #[serde(default)]
    pub periods: BTreeMap<String, Period>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuningSection {
    pub criterion: Option<String>,
    pub search: Option<String>,
    pub budget: Option<usize>,
    pub folds: Option<usize>,
    /// Delimited grid file: a `method` column plus one column per parameter.
    pub grid: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BacktestSection {
    pub horizon: Option<String>,
    pub window: Option<usize>,
    pub step: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSection {
    pub alpha: Option<f64>,
    pub n_boot: Option<usize>,
    pub seed: Option<u64>,
    pub block: Option<usize>,
    pub benchmark: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    /// `recovery` or `frobenius`.
    pub experiment: Option<String>,
    pub seed: Option<u64>,
    pub sizes: Option<Vec<usize>>,
    pub d: Option<usize>,
    pub rho: Option<f64>,
    pub target: Option<f64>,
    pub trials: Option<usize>,
    pub ladder_start: Option<usize>,
    pub max_samples: Option<usize>,
    pub refine_steps: Option<usize>,
    pub p: Option<usize>,
    pub m: Option<usize>,
    pub reps: Option<usize>,
    pub sector_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Period {
    pub from: String,
    pub to: String,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        let bad = |e: toml::de::Error| ConfigError(format!("{}: {e}", path.display()));
        // a run manifest nests the configuration under `config`
        if text.parse::<toml::Table>().map_err(bad)?.contains_key("config") {
            return Ok(toml::from_str::<ManifestFile>(&text).map_err(bad)?.config);
        }
        Ok(toml::from_str(&text).map_err(bad)?)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(dead_code)]
struct ManifestFile {
    tool: String,
    version: String,
    command: String,
    config: RunConfig,
}

/// A method identifier accepted by some subcommand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodId {
    Ewp,
    Oracle,
    Cov(CovMethod),
    Ggm(GgmMethod),
}

impl MethodId {
    pub fn name(self) -> &'static str {
        match self {
            MethodId::Ewp => "ewp",
            MethodId::Oracle => "oracle",
            MethodId::Cov(c) => c.name(),
            MethodId::Ggm(g) => g.name(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Allowed {
    pub ewp: bool,
    pub oracle: bool,
    pub cov: bool,
    pub ggm: bool,
}

impl Allowed {
    fn ids(self) -> Vec<&'static str> {
        let mut v = Vec::new();
        if self.ewp {
            v.push("ewp");
        }
        if self.oracle {
            v.push("oracle");
        }
        if self.cov {
            v.extend(COV_METHODS);
        }
        if self.ggm {
            v.extend(GGM_METHODS);
        }
        v
    }
}

pub fn parse_methods(names: &[String], allowed: Allowed) -> anyhow::Result<Vec<MethodId>> {
    if names.is_empty() {
        return config_err("method list is empty");
    }
    let mut out = Vec::new();
    for raw in names {
        let s = raw.trim();
        let id = match s {
            "ewp" if allowed.ewp => Some(MethodId::Ewp),
            "oracle" if allowed.oracle => Some(MethodId::Oracle),
            _ => None,
        }
        .or_else(|| s.parse().ok().filter(|_| allowed.cov).map(MethodId::Cov))
        .or_else(|| s.parse().ok().filter(|_| allowed.ggm).map(MethodId::Ggm));
        match id {
            Some(id) if out.contains(&id) => return config_err(format!("method '{s}' listed twice")),
            Some(id) => out.push(id),
            None => return config_err(format!("unknown method '{s}'; valid: {}", allowed.ids().join(", "))),
        }
    }
    Ok(out)
}

pub fn parse_criterion(s: &str) -> anyhow::Result<Criterion> {
    s.parse().map_err(|e: precision_lab::Error| ConfigError(e.to_string()).into())
}

pub fn parse_search(s: &str) -> anyhow::Result<Search> {
    s.parse().map_err(|e: precision_lab::Error| ConfigError(e.to_string()).into())
}

pub fn parse_horizon(s: &str) -> anyhow::Result<Horizon> {
    s.parse().map_err(|e: precision_lab::Error| ConfigError(e.to_string()).into())
}

pub fn default_tuning() -> TuningSection {
    TuningSection {
        criterion: Some("cv1".into()),
        search: Some("grid".into()),
        budget: Some(DEFAULT_BUDGET),
        folds: Some(DEFAULT_FOLDS),
        grid: None,
    }
}

/// Reads a grid file. Rows are grouped by the `method` column; empty cells
/// leave the parameter unset for that row.
pub fn read_grid_file(path: &Path) -> anyhow::Result<BTreeMap<GgmMethod, Vec<Params>>> {
    let bad = |msg: String| ConfigError(format!("grid file {}: {msg}", path.display()));
    let mut rdr = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let header: Vec<String> = rdr.headers().map_err(|e| bad(e.to_string()))?.iter().map(|h| h.trim().to_string()).collect();
    if header.first().map(String::as_str) != Some("method") || header.len() < 2 {
        return Err(bad("header must be `method,<param>,...`".into()).into());
    }
    let mut grids: BTreeMap<GgmMethod, Vec<Params>> = BTreeMap::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let method: GgmMethod = rec[0].trim().parse().map_err(|e: precision_lab::Error| bad(e.to_string()))?;
        let mut point = Params::new();
        for (name, cell) in header.iter().zip(rec.iter()).skip(1) {
            let cell = cell.trim();
            if cell.is_empty() {
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| bad(format!("row {}: bad value '{cell}'", line + 2)))?;
            point.insert(name.clone(), v);
        }
        grids.entry(method).or_default().push(point);
    }
    Ok(grids)
}

#[cfg(test)]
mod tests {
    use super::*;

    const ALL: Allowed = Allowed { ewp: true, oracle: false, cov: true, ggm: true };

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("methods = [\"lwl\"]\n[tuning]\ncriterion = \"cv2\"\n").is_ok());
        assert!(toml::from_str::<RunConfig>("metods = [\"lwl\"]\n").is_err());
        assert!(toml::from_str::<RunConfig>("[tuning]\ncritrion = \"cv2\"\n").is_err());
        assert!(toml::from_str::<RunConfig>("[periods.stress]\nfrom = \"2008-01-01\"\n").is_err());
    }

    #[test]
    fn method_lists() {
        let names = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let got = parse_methods(&names(&["ewp", "lwl", "glasso"]), ALL).unwrap();
        assert_eq!(got, vec![MethodId::Ewp, MethodId::Cov(CovMethod::Lwl), MethodId::Ggm(GgmMethod::Glasso)]);
        let err = parse_methods(&names(&["lasso"]), ALL).unwrap_err().to_string();
        assert!(err.contains("valid: ewp, sample") && err.contains("hybridmb"), "{err}");
        assert!(parse_methods(&names(&["oracle"]), ALL).is_err());
        assert!(parse_methods(&names(&["lwl", "lwl"]), ALL).is_err());
        let ggm_only = Allowed { ewp: false, oracle: false, cov: false, ggm: true };
        assert!(parse_methods(&names(&["sample"]), ggm_only).is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let mut cfg = RunConfig { methods: Some(vec!["lwl".into()]), ..Default::default() };
        cfg.tuning = default_tuning();
        cfg.periods.insert("stress".into(), Period { from: "2008-09-01".into(), to: "2009-03-31".into() });
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(toml::from_str::<RunConfig>(&text).unwrap(), cfg);
    }

    #[test]
    fn manifest_loads_as_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.toml");
        std::fs::write(&path, "tool = \"x\"\nversion = \"0.1.0\"\ncommand = \"compare\"\n[config]\nlosses = \"l.csv\"\n[config.compare]\nseed = 7\n").unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.compare.seed, Some(7));
        std::fs::write(&path, "command = \"compare\"\nextra = 1\n[config]\n").unwrap();
        assert!(RunConfig::load(&path).is_err());
    }

    #[test]
    fn grid_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grid.csv");
        std::fs::write(&path, "method,rho,t_steps,nu\nglasso,0.1,,\nglasso,0.2,,\ngreedy,,10,0.05\n").unwrap();
        let g = read_grid_file(&path).unwrap();
        assert_eq!(g[&GgmMethod::Glasso].len(), 2);
        assert_eq!(g[&GgmMethod::Glasso][1]["rho"], 0.2);
        assert_eq!(g[&GgmMethod::Greedy][0].len(), 2);
        std::fs::write(&path, "method,rho\nlasso,0.1\n").unwrap();
        assert!(read_grid_file(&path).is_err());
        std::fs::write(&path, "rho\n0.1\n").unwrap();
        assert!(read_grid_file(&path).is_err());
    }
}
