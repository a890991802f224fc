//! Sensitivity of curiosity scores to additive noise and single outliers on
//! a synthetic state matrix.
//!
//! For every perturbation level each trial draws a base matrix, scores it,
//! perturbs it and scores it again with all three methods. The relative
//! deviation `|score(perturbed) - score(clean)| / |score(clean)|` is averaged
//! over trials.

use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::config::{StudyBase, StudyConfig};
use crate::curiosity::{apt_reward, disagreement_reward, nnm_reward, StateMatrix};
use crate::error::Result;
use crate::matlin::DenseMatrix;
use crate::seeding::{derive_seed, rng_for, tags, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Perturbation {
    /// i.i.d. `N(0, level^2)` on every entry.
    Noise,
    /// `U(0, level)` added to one random entry.
    Outlier,
}

impl Perturbation {
    pub const ALL: [Perturbation; 2] = [Perturbation::Noise, Perturbation::Outlier];
}

impl fmt::Display for Perturbation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Perturbation::Noise => "noise",
            Perturbation::Outlier => "outlier",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Score {
    Nnm,
    Variance,
    LogDistance,
}

impl Score {
    pub const ALL: [Score; 3] = [Score::Nnm, Score::Variance, Score::LogDistance];

    /// Scores a matrix whose columns are states.
    pub fn evaluate(self, z: &DenseMatrix, k: usize) -> Result<f64> {
        let cols: Vec<Vec<f64>> = (0..z.cols()).map(|j| z.column(j)).collect();
        match self {
            Score::Nnm => nnm_reward(&StateMatrix::new(z.clone())?),
            Score::Variance => disagreement_reward(&cols),
            Score::LogDistance => {
                let k = k.min(cols.len() - 1);
                apt_reward(&cols[0], &cols[1..=k])
            }
        }
    }
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Score::Nnm => "nnm",
            Score::Variance => "disagreement",
            Score::LogDistance => "apt",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyRow {
    pub kind: Perturbation,
    pub level: f64,
    pub method: Score,
    /// Mean perturbed score over trials.
    pub mean: f64,
    pub std: f64,
    pub sem: f64,
    /// Mean relative deviation from each trial's clean score.
    pub mean_rel_dev: f64,
}

pub const STUDY_HEADER: &str = "kind,level,method,mean,std,sem,mean_rel_dev";

impl StudyRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.kind, self.level, self.method, self.mean, self.std, self.sem, self.mean_rel_dev
        )
    }
}

fn base_matrix(cfg: &StudyConfig, rng: &mut Rng) -> DenseMatrix {
    match cfg.base {
        StudyBase::Gaussian => DenseMatrix::from_fn(cfg.m, cfg.n, |_, _| rng.sample(StandardNormal)).unwrap(),
        StudyBase::RankOne => {
            let u: Vec<f64> = (0..cfg.m).map(|_| rng.sample(StandardNormal)).collect();
            DenseMatrix::from_fn(cfg.m, cfg.n, |i, _| u[i]).unwrap()
        }
    }
}

fn perturb(z: &DenseMatrix, kind: Perturbation, level: f64, rng: &mut Rng) -> DenseMatrix {
    let mut out = z.clone();
    if level == 0.0 {
        return out;
    }
    match kind {
        Perturbation::Noise => {
            let normal = Normal::new(0.0, level).expect("level is finite and non-negative");
            out.data_mut().iter_mut().for_each(|x| *x += normal.sample(rng));
        }
        Perturbation::Outlier => {
            let idx = rng.random_range(0..out.data().len());
            out.data_mut()[idx] += rng.random_range(0.0..level);
        }
    }
    out
}

/// All rows, ordered by perturbation kind, level, then method.
pub fn synthetic_study(cfg: &StudyConfig) -> Result<Vec<StudyRow>> {
    let mut rows = Vec::new();
    for (ki, &kind) in Perturbation::ALL.iter().enumerate() {
        for (li, &level) in cfg.levels.iter().enumerate() {
            let mut scores = vec![Vec::with_capacity(cfg.trials); Score::ALL.len()];
            let mut devs = vec![Vec::with_capacity(cfg.trials); Score::ALL.len()];
            for trial in 0..cfg.trials {
                let trial_seed = derive_seed(cfg.seed, trial as u64);
                let z = base_matrix(cfg, &mut rng_for(trial_seed, tags::STUDY));
                let stream = derive_seed(trial_seed, ((ki as u64) << 32) | li as u64);
                let zp = perturb(&z, kind, level, &mut rng_for(stream, tags::STUDY));
                for (si, score) in Score::ALL.iter().enumerate() {
                    let clean = score.evaluate(&z, cfg.k)?;
                    let noisy = score.evaluate(&zp, cfg.k)?;
                    scores[si].push(noisy);
                    devs[si].push(if clean == 0.0 { 0.0 } else { (noisy - clean).abs() / clean.abs() });
                }
            }
            for (si, &method) in Score::ALL.iter().enumerate() {
                rows.push(StudyRow {
                    kind,
                    level,
                    method,
                    mean: super::stats::mean(&scores[si]),
                    std: super::stats::std_dev(&scores[si]),
                    sem: super::stats::sem(&scores[si]),
                    mean_rel_dev: super::stats::mean(&devs[si]),
                });
            }
        }
    }
    Ok(rows)
}

pub fn write_study(path: &Path, rows: &[StudyRow]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{STUDY_HEADER}")?;
    for r in rows {
        writeln!(f, "{}", r.csv())?;
    }
    f.flush()?;
    Ok(())
}
