//! Config-driven training runs. Seeds run in parallel; each writes its own
//! append-only metrics CSV and weight snapshot, and a manifest is written
//! once every seed has finished.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use super::config::{ExperimentConfig, Mode};
use super::study::{synthetic_study, write_study};
use crate::agent::{Agent, IterationReport};
use crate::error::{Error, Result};
use crate::worldmodel::{load_snapshot, save_snapshot};

pub const CSV_SCHEMA_VERSION: u32 = 1;

pub const METRICS_HEADER: &str = "seed,update,env_steps,episodes,mean_ext_return,recent_ext_return,\
success_rate,mean_r_int,policy_loss,value_loss,entropy,approx_kl,clip_fraction,model_loss";

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const STUDY_FILE: &str = "study.csv";

pub fn metrics_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("seed-{seed}.csv"))
}

pub fn snapshot_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("seed-{seed}.nnmw"))
}

/// One CSV line per policy update. Wall-clock time is kept out so that
/// re-runs produce identical bytes.
pub fn metrics_line(seed: u64, r: &IterationReport) -> String {
    format!(
        "{seed},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        r.update,
        r.env_steps,
        r.episodes,
        r.mean_ext_return,
        r.recent_ext_return,
        r.success_rate(),
        r.mean_r_int,
        r.stats.policy_loss,
        r.stats.value_loss,
        r.stats.entropy,
        r.stats.approx_kl,
        r.stats.clip_fraction,
        r.model_loss,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedOutcome {
    pub seed: u64,
    /// Mean extrinsic return over the most recent episodes at the end of training.
    pub final_return: f64,
    pub success_rate: f64,
    pub episodes: u64,
    pub updates: usize,
    pub wall_ms: u128,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub output_dir: PathBuf,
    pub seeds: Vec<SeedOutcome>,
}

/// Runs every seed of `cfg`. Synthetic-study mode writes `study.csv` instead.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.output_dir)?;
    if cfg.mode == Mode::SyntheticStudy {
        let rows = synthetic_study(&cfg.study)?;
        write_study(&cfg.output_dir.join(STUDY_FILE), &rows)?;
        write_manifest(cfg, &[])?;
        return Ok(RunOutcome {
            output_dir: cfg.output_dir.clone(),
            seeds: Vec::new(),
        });
    }
    if cfg.mode == Mode::Finetune {
        let dir = cfg.checkpoint.as_deref().expect("validated");
        if let Some(missing) = cfg.seeds.iter().map(|&s| snapshot_path(dir, s)).find(|p| !p.is_file()) {
            return Err(Error::MissingCheckpoint(missing));
        }
    }
    let results: Vec<Result<SeedOutcome>> = cfg.seeds.par_iter().map(|&seed| run_seed(cfg, seed)).collect();
    let seeds = results.into_iter().collect::<Result<Vec<_>>>()?;
    write_manifest(cfg, &seeds)?;
    Ok(RunOutcome {
        output_dir: cfg.output_dir.clone(),
        seeds,
    })
}

/// Trains one seed to completion.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedOutcome> {
    let started = Instant::now();
    let mut agent = Agent::new(&cfg.env, cfg.agent.clone(), seed)?;
    if cfg.mode == Mode::Finetune {
        let path = snapshot_path(cfg.checkpoint.as_deref().expect("validated"), seed);
        agent.load_snapshot(load_snapshot(&path)?)?;
    }
    let mut out = BufWriter::new(File::create(metrics_path(&cfg.output_dir, seed))?);
    writeln!(out, "{METRICS_HEADER}")?;
    out.flush()?;
    let mut last = None;
    for _ in 0..cfg.updates() {
        let report = agent.iterate()?;
        writeln!(out, "{}", metrics_line(seed, &report))?;
        out.flush()?;
        last = Some(report);
    }
    let nets = agent.snapshot_nets();
    save_snapshot(&snapshot_path(&cfg.output_dir, seed), &nets.iter().collect::<Vec<_>>())?;
    let last = last.expect("at least one update");
    Ok(SeedOutcome {
        seed,
        final_return: last.recent_ext_return,
        success_rate: last.success_rate(),
        episodes: last.total_episodes,
        updates: last.update,
        wall_ms: started.elapsed().as_millis(),
    })
}

fn write_manifest(cfg: &ExperimentConfig, seeds: &[SeedOutcome]) -> Result<()> {
    let mut f = BufWriter::new(File::create(cfg.output_dir.join(MANIFEST_FILE))?);
    writeln!(f, "code_version = {}", env!("CARGO_PKG_VERSION"))?;
    writeln!(f, "csv_schema = {CSV_SCHEMA_VERSION}")?;
    writeln!(f, "csv_header = {METRICS_HEADER}")?;
    for (k, v) in cfg.echo() {
        writeln!(f, "config.{k} = {v}")?;
    }
    for s in seeds {
        writeln!(f, "seed.{}.final_return = {}", s.seed, s.final_return)?;
        writeln!(f, "seed.{}.success_rate = {}", s.seed, s.success_rate)?;
        writeln!(f, "seed.{}.episodes = {}", s.seed, s.episodes)?;
        writeln!(f, "seed.{}.updates = {}", s.seed, s.updates)?;
        writeln!(f, "seed.{}.wall_ms = {}", s.seed, s.wall_ms)?;
    }
    f.flush()?;
    Ok(())
}
