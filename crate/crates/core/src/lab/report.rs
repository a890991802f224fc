//! Cross-run comparison: final returns and goal-reach rates per run
//! directory, plus noisy-versus-clean degradation for matching pairs.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use super::runner::MANIFEST_FILE;
use super::stats::{mean, std_dev};
use crate::error::{Error, Result};

/// Final metrics row of one seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinalRow {
    pub final_return: f64,
    pub success_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunDir {
    pub path: PathBuf,
    pub label: String,
    pub method: String,
    pub env: String,
    pub noise_sigma: f64,
    pub finals: BTreeMap<u64, FinalRow>,
}

impl RunDir {
    pub fn load(path: &Path) -> Result<Self> {
        let manifest = read_manifest(&path.join(MANIFEST_FILE))?;
        let field = |k: &str| manifest.get(k).cloned().unwrap_or_default();
        let mut finals = BTreeMap::new();
        for entry in fs::read_dir(path)? {
            let p = entry?.path();
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            let Some(seed) = name
                .strip_prefix("seed-")
                .and_then(|s| s.strip_suffix(".csv"))
                .and_then(|s| s.parse::<u64>().ok())
            else {
                continue;
            };
            if let Some(row) = final_row(&p)? {
                finals.insert(seed, row);
            }
        }
        if finals.is_empty() {
            return Err(Error::InvalidSpec(format!("{}: no completed seed CSVs", path.display())));
        }
        Ok(Self {
            label: path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.display().to_string()),
            path: path.to_path_buf(),
            method: field("config.reward.method"),
            env: field("config.env.kind"),
            noise_sigma: field("config.noise_sigma").parse().unwrap_or(0.0),
            finals,
        })
    }
}

fn read_manifest(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config {
        path: path.display().to_string(),
        field: "-".into(),
        message: format!("cannot read manifest: {e}"),
    })?;
    Ok(text
        .lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect())
}

/// Last data row of a metrics CSV, or `None` when it has no rows.
pub fn final_row(path: &Path) -> Result<Option<FinalRow>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| Error::InvalidSpec(format!("{}: missing column {name}", path.display())))
    };
    let (ret, succ) = (col("recent_ext_return")?, col("success_rate")?);
    let Some(last) = lines.rev().find(|l| !l.trim().is_empty()) else {
        return Ok(None);
    };
    let fields: Vec<&str> = last.split(',').collect();
    let num = |i: usize| -> Result<f64> {
        fields
            .get(i)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::InvalidSpec(format!("{}: malformed row `{last}`", path.display())))
    };
    Ok(Some(FinalRow {
        final_return: num(ret)?,
        success_rate: num(succ)?,
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub label: String,
    pub method: String,
    pub env: String,
    pub noise_sigma: f64,
    pub seeds: usize,
    pub return_mean: f64,
    pub return_std: f64,
    pub success_mean: f64,
    pub success_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Degradation {
    pub method: String,
    pub env: String,
    pub clean_label: String,
    pub noisy_label: String,
    pub clean_return: f64,
    pub noisy_return: f64,
    /// `clean - noisy`.
    pub delta: f64,
    /// `delta / |clean|`; NaN when the clean return is 0.
    pub relative: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub seeds: Vec<u64>,
    pub summary: Vec<SummaryRow>,
    pub degradation: Vec<Degradation>,
    pub warnings: Vec<String>,
}

pub const SUMMARY_HEADER: &str =
    "label,method,env,noise_sigma,seeds,final_return_mean,final_return_std,success_rate_mean,success_rate_std";
pub const DEGRADATION_HEADER: &str =
    "method,env,clean,noisy,clean_return,noisy_return,delta,relative_degradation";

impl Report {
    pub fn summary_csv(&self) -> String {
        let mut s = format!("{SUMMARY_HEADER}\n");
        for r in &self.summary {
            s += &format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.label,
                r.method,
                r.env,
                r.noise_sigma,
                r.seeds,
                r.return_mean,
                r.return_std,
                r.success_mean,
                r.success_std
            );
        }
        s
    }

    pub fn degradation_csv(&self) -> String {
        let mut s = format!("{DEGRADATION_HEADER}\n");
        for d in &self.degradation {
            s += &format!(
                "{},{},{},{},{},{},{},{}\n",
                d.method, d.env, d.clean_label, d.noisy_label, d.clean_return, d.noisy_return, d.delta, d.relative
            );
        }
        s
    }
}

pub fn compare_report(dirs: &[PathBuf]) -> Result<Report> {
    if dirs.is_empty() {
        return Err(Error::Empty("run directories"));
    }
    let runs = dirs.iter().map(|d| RunDir::load(d)).collect::<Result<Vec<_>>>()?;
    summarize(&runs)
}

/// Aggregates loaded runs over the seeds they all share.
pub fn summarize(runs: &[RunDir]) -> Result<Report> {
    let mut warnings = Vec::new();
    let first: BTreeSet<u64> = runs[0].finals.keys().copied().collect();
    let common: BTreeSet<u64> = runs
        .iter()
        .fold(first, |acc, r| acc.intersection(&r.finals.keys().copied().collect()).copied().collect());
    for r in runs {
        if r.finals.len() != common.len() {
            warnings.push(format!(
                "{}: seeds {:?} differ from the common set {:?}; using the intersection",
                r.label,
                r.finals.keys().collect::<Vec<_>>(),
                common
            ));
        }
    }
    if common.is_empty() {
        return Err(Error::InvalidSpec("run directories share no seeds".into()));
    }

    let summary: Vec<SummaryRow> = runs
        .iter()
        .map(|r| {
            let returns: Vec<f64> = common.iter().map(|s| r.finals[s].final_return).collect();
            let success: Vec<f64> = common.iter().map(|s| r.finals[s].success_rate).collect();
            SummaryRow {
                label: r.label.clone(),
                method: r.method.clone(),
                env: r.env.clone(),
                noise_sigma: r.noise_sigma,
                seeds: common.len(),
                return_mean: mean(&returns),
                return_std: std_dev(&returns),
                success_mean: mean(&success),
                success_std: std_dev(&success),
            }
        })
        .collect();

    let mut degradation = Vec::new();
    for noisy in summary.iter().filter(|s| s.noise_sigma > 0.0) {
        if let Some(clean) = summary
            .iter()
            .find(|c| c.noise_sigma == 0.0 && c.method == noisy.method && c.env == noisy.env)
        {
            let delta = clean.return_mean - noisy.return_mean;
            degradation.push(Degradation {
                method: noisy.method.clone(),
                env: noisy.env.clone(),
                clean_label: clean.label.clone(),
                noisy_label: noisy.label.clone(),
                clean_return: clean.return_mean,
                noisy_return: noisy.return_mean,
                delta,
                relative: if clean.return_mean == 0.0 { f64::NAN } else { delta / clean.return_mean.abs() },
            });
        }
    }
    Ok(Report {
        seeds: common.into_iter().collect(),
        summary,
        degradation,
        warnings,
    })
}
