//! On-disk layout of a run directory and the file formats written into it.
//!
//! Every output file carries the config hash: metrics and run metadata as a
//! JSON field, trajectory CSVs and grid files as a leading comment line,
//! checkpoints in their provenance slot. `cli_compare` checks these before
//! mixing numbers from two runs.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::MetricRecord;
use crate::diagnostics::{ConcentrationReport, DiagnosticsReport};
use crate::harness::config::{short_hash, RunConfig};
use crate::{Error, Result};

pub const METRICS_FORMAT: &str = "frontier-metrics-v1";
pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const OUT_ROOT_ENV: &str = "FRONTIER_OUT_ROOT";

/// Output root: the env var wins over the config's `output_dir`, so tests and
/// batch jobs can redirect a config they must not edit.
pub fn out_root(cfg: &RunConfig) -> PathBuf {
    match std::env::var_os(OUT_ROOT_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from(&cfg.output_dir),
    }
}

#[derive(Debug, Clone)]
pub struct RunPaths {
    pub run_dir: PathBuf,
}

impl RunPaths {
    pub fn new(out_root: &Path, experiment: &str, hash: &str) -> Self {
        Self {
            run_dir: out_root.join(format!("{experiment}-{}", short_hash(hash))),
        }
    }

    pub fn existing(run_dir: &Path) -> Self {
        Self {
            run_dir: run_dir.to_path_buf(),
        }
    }

    pub fn config_file(&self) -> PathBuf {
        self.run_dir.join("config.toml")
    }

    pub fn meta_file(&self) -> PathBuf {
        self.run_dir.join("run.json")
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.run_dir.join(format!("seed_{seed}"))
    }

    pub fn metrics_file(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("metrics.jsonl")
    }

    pub fn checkpoint_file(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("checkpoint.ck")
    }

    /// Refreshed at every metrics interval; survives a later divergence.
    pub fn last_good_file(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("checkpoint_last_good.ck")
    }

    pub fn diagnostics_file(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("diagnostics.json")
    }

    pub fn grid_file(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("visitation.txt")
    }

    pub fn trajectory_file(&self, seed: u64, episode: usize) -> PathBuf {
        self.seed_dir(seed).join(format!("trajectory_{episode:03}.csv"))
    }
}

/// Top-level run metadata; the one place timestamps are allowed (metrics
/// stay byte-reproducible).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMeta {
    pub artifact_version: String,
    pub config_hash: String,
    pub created_unix: u64,
    pub seeds: Vec<u64>,
    /// seed (stringified for JSON) -> "ok" | "diverged" | "pending".
    pub seed_status: BTreeMap<String, String>,
}

impl RunMeta {
    pub fn new(config_hash: &str, seeds: &[u64]) -> Self {
        let created_unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self {
            artifact_version: ARTIFACT_VERSION.to_string(),
            config_hash: config_hash.to_string(),
            created_unix,
            seeds: seeds.to_vec(),
            seed_status: seeds
                .iter()
                .map(|s| (s.to_string(), "pending".to_string()))
                .collect(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = serde_json::to_string_pretty(self)?;
        out.push('\n');
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsHeader {
    pub format: String,
    pub config_hash: String,
    pub seed: u64,
}

/// Streaming JSONL writer: one header record, then one record per metrics
/// interval. No timestamps anywhere, so reruns are byte-identical.
pub struct MetricsWriter {
    w: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path, config_hash: &str, seed: u64) -> Result<Self> {
        let mut w = BufWriter::new(File::create(path)?);
        let header = MetricsHeader {
            format: METRICS_FORMAT.to_string(),
            config_hash: config_hash.to_string(),
            seed,
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        Ok(Self { w })
    }

    pub fn append(&mut self, rec: &MetricRecord) -> Result<()> {
        serde_json::to_writer(&mut self.w, rec)?;
        self.w.write_all(b"\n")?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.w.flush()?;
        Ok(())
    }
}

pub fn read_metrics(path: &Path) -> Result<(MetricsHeader, Vec<MetricRecord>)> {
    let f = BufReader::new(File::open(path)?);
    let mut lines = f.lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::InvalidInput(format!("{}: empty metrics file", path.display())))??;
    let header: MetricsHeader = serde_json::from_str(&first)?;
    if header.format != METRICS_FORMAT {
        return Err(Error::InvalidInput(format!(
            "{}: unknown metrics format {:?}",
            path.display(),
            header.format
        )));
    }
    let mut records = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line)?);
    }
    Ok((header, records))
}

/// Per-seed diagnostics written after final evaluation. `concentration` is
/// absent when the scripted reference is undefined (multi-bump fields or a
/// level set that no bump crosses).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedDiagnostics {
    pub config_hash: String,
    pub seed: u64,
    pub curvature: f64,
    pub report: DiagnosticsReport,
    pub concentration: Option<ConcentrationReport>,
}

impl SeedDiagnostics {
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = serde_json::to_string_pretty(self)?;
        out.push('\n');
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::InvalidInput(format!("cannot read diagnostics {}: {e}", path.display()))
        })?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(step: u64) -> MetricRecord {
        MetricRecord {
            env_steps: step,
            updates: step,
            episodes: 1,
            window_episodes: 1,
            mean_shaped_return: 0.5,
            mean_base_return: 0.25,
            goal_rate: 0.0,
            mean_episode_len: 60.0,
            critic_loss: 0.1,
            actor_loss: -0.2,
            alpha_loss: 0.0,
            alpha: 0.1,
            entropy_estimate: 1.0,
            grad_norm_critic: 1.0,
            grad_norm_actor: 1.0,
            buffer_size: 100,
        }
    }

    #[test]
    fn metrics_round_trip_and_header_checks() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("metrics.jsonl");
        let mut w = MetricsWriter::create(&p, "abc123", 7).unwrap();
        w.append(&record(1000)).unwrap();
        w.append(&record(2000)).unwrap();
        w.finish().unwrap();

        let (header, recs) = read_metrics(&p).unwrap();
        assert_eq!(header.config_hash, "abc123");
        assert_eq!(header.seed, 7);
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[1].env_steps, 2000);

        std::fs::write(&p, "{\"format\":\"other\",\"config_hash\":\"x\",\"seed\":0}\n").unwrap();
        assert!(read_metrics(&p).is_err());
        std::fs::write(&p, "").unwrap();
        assert!(read_metrics(&p).is_err());
    }

    #[test]
    fn identical_writes_are_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (pa, pb) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
        for p in [&pa, &pb] {
            let mut w = MetricsWriter::create(p, "hash", 1).unwrap();
            w.append(&record(1000)).unwrap();
            w.finish().unwrap();
        }
        assert_eq!(
            std::fs::read(&pa).unwrap(),
            std::fs::read(&pb).unwrap()
        );
    }

    #[test]
    fn run_paths_embed_experiment_and_hash_prefix() {
        let paths = RunPaths::new(Path::new("/tmp/out"), "pure_vf", &"ab".repeat(40));
        assert_eq!(
            paths.run_dir,
            PathBuf::from("/tmp/out/pure_vf-abababababab")
        );
        assert!(paths
            .metrics_file(3)
            .ends_with("pure_vf-abababababab/seed_3/metrics.jsonl"));
        assert!(paths.trajectory_file(3, 7).ends_with("seed_3/trajectory_007.csv"));
    }

    #[test]
    fn run_meta_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.json");
        let mut meta = RunMeta::new("deadbeef", &[1, 2]);
        meta.seed_status.insert("1".into(), "ok".into());
        meta.write(&p).unwrap();
        let back = RunMeta::read(&p).unwrap();
        assert_eq!(back.config_hash, "deadbeef");
        assert_eq!(back.seeds, vec![1, 2]);
        assert_eq!(back.seed_status["1"], "ok");
        assert_eq!(back.seed_status["2"], "pending");
    }
}
