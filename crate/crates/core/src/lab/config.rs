//! Flat `key = value` experiment configuration.
//!
//! Grammar, one entry per line:
//!
//! ```text
//! # comment (also after a value)
//! mode = train
//! seeds = 1, 2, 3
//! env.kind = grid_world
//! reward.alpha = 1.0
//! ```
//!
//! Keys are dotted identifiers; values run to the end of the line (or to a
//! `#`). Lists are comma separated and cells are written `x:y`. Unknown or
//! repeated keys are errors.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::agent::AgentConfig;
use crate::curiosity::{MatrixSource, RewardMethod, RewardSpec};
use crate::envs::{EnvKind, EnvSpec};
use crate::error::{Error, Result};

/// Parsed key/value pairs plus the source path for error messages.
#[derive(Debug, Clone)]
pub struct ConfigFile {
    path: String,
    entries: BTreeMap<String, String>,
    used: RefCell<BTreeSet<String>>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
            path: path.display().to_string(),
            field: "-".into(),
            message: format!("cannot read: {e}"),
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, path: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |field: &str, message: String| Error::Config {
                path: format!("{path}:{}", lineno + 1),
                field: field.to_string(),
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err("-", format!("expected `key = value`, got `{line}`")))?;
            let key = key.trim();
            if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.') {
                return Err(err(key, "keys are dotted identifiers".into()));
            }
            if entries.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(err(key, "duplicate key".into()));
            }
        }
        Ok(Self {
            path: path.to_string(),
            entries,
            used: RefCell::new(BTreeSet::new()),
        })
    }

    pub fn path(&self) -> &str {
        &self.path
    }

    /// Applies a `key=value` override on top of the file contents.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment.split_once('=').ok_or_else(|| Error::Config {
            path: "--override".into(),
            field: assignment.into(),
            message: "expected key=value".into(),
        })?;
        self.set(k.trim(), v.trim());
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn error(&self, field: &str, message: impl Into<String>) -> Error {
        Error::Config {
            path: self.path.clone(),
            field: field.to_string(),
            message: message.into(),
        }
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.used.borrow_mut().insert(key.to_string());
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| self.error(key, format!("cannot parse `{v}`: {e}"))),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: fmt::Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => parse_list(v).map(Some).map_err(|m| self.error(key, m)),
        }
    }

    fn get_cells(&self, key: &str) -> Result<Option<Vec<(usize, usize)>>> {
        let Some(v) = self.raw(key) else {
            return Ok(None);
        };
        v.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|cell| {
                let (x, y) = cell
                    .split_once(':')
                    .ok_or_else(|| self.error(key, format!("cells are written x:y, got `{cell}`")))?;
                let p = |s: &str| {
                    s.trim()
                        .parse::<usize>()
                        .map_err(|e| self.error(key, format!("bad coordinate `{s}`: {e}")))
                };
                Ok((p(x)?, p(y)?))
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    /// Fails on the first key that was never read.
    pub fn reject_unknown(&self) -> Result<()> {
        let used = self.used.borrow();
        match self.entries.keys().find(|k| !used.contains(*k)) {
            Some(k) => Err(self.error(k, "unknown key")),
            None => Ok(()),
        }
    }
}

/// Parses `a, b, c`.
pub fn parse_list<T: FromStr>(v: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: fmt::Display,
{
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|e| format!("cannot parse `{s}`: {e}")))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Pretrain,
    Finetune,
    SyntheticStudy,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Mode::Train),
            "pretrain" => Ok(Mode::Pretrain),
            "finetune" => Ok(Mode::Finetune),
            "synthetic-study" => Ok(Mode::SyntheticStudy),
            other => Err(format!(
                "unknown mode `{other}` (expected train, pretrain, finetune or synthetic-study)"
            )),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Train => "train",
            Mode::Pretrain => "pretrain",
            Mode::Finetune => "finetune",
            Mode::SyntheticStudy => "synthetic-study",
        })
    }
}

/// Base matrix for the synthetic perturbation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StudyBase {
    Gaussian,
    /// Every column equal to one Gaussian vector.
    RankOne,
}

impl FromStr for StudyBase {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "gaussian" => Ok(StudyBase::Gaussian),
            "rank1" => Ok(StudyBase::RankOne),
            other => Err(format!("unknown base `{other}` (expected gaussian or rank1)")),
        }
    }
}

impl fmt::Display for StudyBase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StudyBase::Gaussian => "gaussian",
            StudyBase::RankOne => "rank1",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    /// Encoding dimension (rows of Z).
    pub m: usize,
    /// Number of states (columns of Z).
    pub n: usize,
    pub trials: usize,
    /// Perturbation levels, shared by the noise and outlier sweeps.
    pub levels: Vec<f64>,
    pub seed: u64,
    pub base: StudyBase,
    /// Neighbour count used by the log-distance score (columns after the first).
    pub k: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            m: 128,
            n: 5,
            trials: 100,
            levels: (0..=10).map(|i| i as f64 / 10.0).collect(),
            seed: 0,
            base: StudyBase::Gaussian,
            k: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub env: EnvSpec,
    pub agent: AgentConfig,
    pub seeds: Vec<u64>,
    pub total_steps: u64,
    pub output_dir: PathBuf,
    /// Directory holding `seed-<s>.nnmw` snapshots (finetune mode).
    pub checkpoint: Option<PathBuf>,
    pub study: StudyConfig,
}

/// Default budgets: pre-training and fine-tuning use the scaled-down pair.
pub const PRETRAIN_STEPS: u64 = 100_000;
pub const FINETUNE_STEPS: u64 = 20_000;
pub const TRAIN_STEPS: u64 = 100_000;

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        Self::from_file(&ConfigFile::load(path)?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_file(&ConfigFile::parse(text, "<config>")?)
    }

    pub fn from_file(f: &ConfigFile) -> Result<Self> {
        let mode: Mode = f.get("mode")?.ok_or_else(|| f.error("mode", "required"))?;
        let env = env_spec(f)?;
        let reward = reward_spec(f, mode)?;
        let mut agent = AgentConfig::new(reward);
        agent_fields(f, &mut agent)?;

        let seeds: Vec<u64> = f.get_list("seeds")?.unwrap_or_else(|| vec![0]);
        let default_steps = match mode {
            Mode::Pretrain => PRETRAIN_STEPS,
            Mode::Finetune => FINETUNE_STEPS,
            _ => TRAIN_STEPS,
        };
        let cfg = ExperimentConfig {
            mode,
            env,
            agent,
            seeds,
            total_steps: f.get_or("total_steps", default_steps)?,
            output_dir: f.get_or("output_dir", PathBuf::from("runs"))?,
            checkpoint: f.get("checkpoint")?,
            study: study_config(f)?,
        };
        f.reject_unknown()?;
        cfg.check().map_err(|(field, m)| f.error(field, m))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.check().map_err(|(_, m)| Error::InvalidSpec(m))
    }

    /// The first violated constraint as `(field, message)`.
    fn check(&self) -> std::result::Result<(), (&'static str, String)> {
        if self.seeds.is_empty() {
            return Err(("seeds", "seeds must be non-empty".into()));
        }
        let mut seen = BTreeSet::new();
        if let Some(d) = self.seeds.iter().find(|s| !seen.insert(**s)) {
            return Err(("seeds", format!("duplicate seed {d}")));
        }
        if self.mode == Mode::SyntheticStudy {
            if self.study.trials == 0 || self.study.n < 2 || self.study.m == 0 {
                return Err(("study", "study needs trials >= 1, n >= 2, m >= 1".into()));
            }
            return Ok(());
        }
        let spec = |field: &'static str| move |e: Error| (field, e.to_string());
        self.env.validate().map_err(spec("env"))?;
        self.agent.validate().map_err(spec("agent"))?;
        if self.total_steps < self.agent.rollout_len as u64 {
            return Err((
                "total_steps",
                format!(
                    "total_steps {} is shorter than one rollout ({})",
                    self.total_steps, self.agent.rollout_len
                ),
            ));
        }
        if self.mode == Mode::Pretrain && self.agent.reward.beta != 0.0 {
            return Err((
                "reward.beta",
                format!(
                    "pretrain uses intrinsic reward only; reward.beta must be 0, got {}",
                    self.agent.reward.beta
                ),
            ));
        }
        if self.mode == Mode::Finetune && self.checkpoint.is_none() {
            return Err(("checkpoint", "finetune needs a checkpoint directory".into()));
        }
        Ok(())
    }

    /// Number of policy updates (one per full rollout).
    pub fn updates(&self) -> u64 {
        self.total_steps / self.agent.rollout_len as u64
    }

    /// Resolved configuration as config-file lines.
    pub fn echo(&self) -> Vec<(String, String)> {
        let a = &self.agent;
        let r = &a.reward;
        let e = &self.env;
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
        let cells = |v: &[(usize, usize)]| v.iter().map(|(x, y)| format!("{x}:{y}")).collect::<Vec<_>>().join(", ");
        let mut out = vec![
            ("mode".to_string(), self.mode.to_string()),
            ("seeds".into(), self.seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(", ")),
            ("total_steps".into(), self.total_steps.to_string()),
            ("output_dir".into(), self.output_dir.display().to_string()),
        ];
        if let Some(c) = &self.checkpoint {
            out.push(("checkpoint".into(), c.display().to_string()));
        }
        out.extend([
            ("env.kind".to_string(), e.kind.to_string()),
            ("env.width".into(), e.width.to_string()),
            ("env.height".into(), e.height.to_string()),
            ("env.goals".into(), cells(&e.goal_cells())),
            ("env.walls".into(), cells(&e.walls)),
            ("env.max_steps".into(), e.max_steps.to_string()),
            ("env.noise_dims".into(), e.noise_dims.to_string()),
            ("reward.method".into(), r.method.to_string()),
            ("reward.source".into(), r.source.to_string()),
            ("reward.n".into(), r.n.to_string()),
            ("reward.k".into(), r.k.to_string()),
            ("reward.alpha".into(), r.alpha.to_string()),
            ("reward.beta".into(), r.beta.to_string()),
            ("reward.normalize".into(), r.normalize.to_string()),
            ("agent.gamma".into(), a.gamma.to_string()),
            ("agent.gae_lambda".into(), a.gae_lambda.to_string()),
            ("agent.clip_epsilon".into(), a.clip_epsilon.to_string()),
            ("agent.rollout_len".into(), a.rollout_len.to_string()),
            ("agent.epochs".into(), a.epochs.to_string()),
            ("agent.minibatch_size".into(), a.minibatch_size.to_string()),
            ("agent.learning_rate".into(), a.learning_rate.to_string()),
            ("agent.entropy_coef".into(), a.entropy_coef.to_string()),
            ("agent.value_coef".into(), a.value_coef.to_string()),
            ("agent.max_grad_norm".into(), a.max_grad_norm.to_string()),
            ("agent.policy_hidden".into(), list(&a.policy_hidden)),
            ("agent.encoding_dim".into(), a.encoding_dim.to_string()),
            ("agent.model_hidden".into(), list(&a.model_hidden)),
            ("agent.model_learning_rate".into(), a.model_learning_rate.to_string()),
            ("agent.model_clip_norm".into(), a.model_clip_norm.to_string()),
            ("agent.model_batch".into(), a.model_batch.to_string()),
            ("agent.model_updates".into(), a.model_updates.to_string()),
            ("agent.replay_capacity".into(), a.replay_capacity.to_string()),
            ("noise_sigma".into(), a.noise_sigma.to_string()),
        ]);
        out
    }
}

fn env_spec(f: &ConfigFile) -> Result<EnvSpec> {
    let kind: EnvKind = f.get_or("env.kind", EnvKind::GridWorld)?;
    let mut spec = match kind {
        EnvKind::GridWorld => EnvSpec::grid_world(20, 20),
        EnvKind::NoisyTvGridWorld => EnvSpec::noisy_tv(20, 20),
        EnvKind::ChainMdp => EnvSpec::chain(40),
    };
    if kind == EnvKind::ChainMdp {
        spec.width = f.get_or("env.length", spec.width)?;
    } else {
        spec.width = f.get_or("env.width", spec.width)?;
        spec.height = f.get_or("env.height", spec.height)?;
        spec.walls = f.get_cells("env.walls")?.unwrap_or_default();
        spec.noise_dims = f.get_or("env.noise_dims", spec.noise_dims)?;
    }
    spec.goals = f.get_cells("env.goals")?.unwrap_or_default();
    spec.max_steps = f.get_or("env.max_steps", spec.max_steps)?;
    Ok(spec)
}

fn reward_spec(f: &ConfigFile, mode: Mode) -> Result<RewardSpec> {
    let method: RewardMethod = f.get_or("reward.method", RewardMethod::Nnm)?;
    let mut spec = RewardSpec::new(method);
    spec.source = f.get_or::<MatrixSource>("reward.source", spec.source)?;
    spec.n = f.get_or("reward.n", spec.n)?;
    spec.k = f.get_or("reward.k", spec.k)?;
    // Pre-training is intrinsic-only; fine-tuning is extrinsic-only unless
    // the file says otherwise.
    match mode {
        Mode::Pretrain => spec.beta = 0.0,
        Mode::Finetune => spec.alpha = 0.0,
        _ => {}
    }
    spec.alpha = f.get_or("reward.alpha", spec.alpha)?;
    spec.beta = f.get_or("reward.beta", spec.beta)?;
    spec.normalize = f.get_or("reward.normalize", spec.normalize)?;
    Ok(spec)
}

fn agent_fields(f: &ConfigFile, a: &mut AgentConfig) -> Result<()> {
    a.gamma = f.get_or("agent.gamma", a.gamma)?;
    a.gae_lambda = f.get_or("agent.gae_lambda", a.gae_lambda)?;
    a.clip_epsilon = f.get_or("agent.clip_epsilon", a.clip_epsilon)?;
    a.rollout_len = f.get_or("agent.rollout_len", a.rollout_len)?;
    a.epochs = f.get_or("agent.epochs", a.epochs)?;
    a.minibatch_size = f.get_or("agent.minibatch_size", a.minibatch_size)?;
    a.learning_rate = f.get_or("agent.learning_rate", a.learning_rate)?;
    a.entropy_coef = f.get_or("agent.entropy_coef", a.entropy_coef)?;
    a.value_coef = f.get_or("agent.value_coef", a.value_coef)?;
    a.max_grad_norm = f.get_or("agent.max_grad_norm", a.max_grad_norm)?;
    if let Some(h) = f.get_list("agent.policy_hidden")? {
        a.policy_hidden = h;
    }
    a.encoding_dim = f.get_or("agent.encoding_dim", a.encoding_dim)?;
    if let Some(h) = f.get_list("agent.model_hidden")? {
        a.model_hidden = h;
    }
    a.model_learning_rate = f.get_or("agent.model_learning_rate", a.model_learning_rate)?;
    a.model_clip_norm = f.get_or("agent.model_clip_norm", a.model_clip_norm)?;
    a.model_batch = f.get_or("agent.model_batch", a.model_batch)?;
    a.model_updates = f.get_or("agent.model_updates", a.model_updates)?;
    a.replay_capacity = f.get_or("agent.replay_capacity", a.replay_capacity)?;
    a.noise_sigma = f.get_or("noise_sigma", a.noise_sigma)?;
    Ok(())
}

fn study_config(f: &ConfigFile) -> Result<StudyConfig> {
    let d = StudyConfig::default();
    Ok(StudyConfig {
        m: f.get_or("study.m", d.m)?,
        n: f.get_or("study.n", d.n)?,
        trials: f.get_or("study.trials", d.trials)?,
        levels: f.get_list("study.levels")?.unwrap_or(d.levels),
        seed: f.get_or("study.seed", d.seed)?,
        base: f.get_or("study.base", d.base)?,
        k: f.get_or("study.k", d.k)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_train_config() {
        let cfg = ExperimentConfig::parse("mode = train\nseeds = 3, 4\n").unwrap();
        assert_eq!(cfg.seeds, vec![3, 4]);
        assert_eq!(cfg.env.width, 20);
        assert_eq!(cfg.agent.reward.beta, 2.0);
    }

    #[test]
    fn comments_and_cells() {
        let cfg = ExperimentConfig::parse(
            "mode = train # trailing\n# full line\nenv.kind = grid_world\nenv.width = 5\nenv.height = 4\nenv.walls = 1:1, 2:1\n",
        )
        .unwrap();
        assert_eq!(cfg.env.walls, vec![(1, 1), (2, 1)]);
    }

    #[test]
    fn errors_name_path_and_field() {
        match ExperimentConfig::parse("mode = train\nagent.gamma = lots\n") {
            Err(Error::Config { path, field, .. }) => {
                assert_eq!(path, "<config>");
                assert_eq!(field, "agent.gamma");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            ExperimentConfig::parse("mode = train\nagent.gama = 0.9\n"),
            Err(Error::Config { field, .. }) if field == "agent.gama"
        ));
        assert!(matches!(
            ExperimentConfig::parse("mode = train\nmode = train\n"),
            Err(Error::Config { path, .. }) if path == "<config>:2"
        ));
    }

    #[test]
    fn pretrain_forces_intrinsic_only() {
        let cfg = ExperimentConfig::parse("mode = pretrain\n").unwrap();
        assert_eq!(cfg.agent.reward.beta, 0.0);
        assert!(ExperimentConfig::parse("mode = pretrain\nreward.beta = 2\n").is_err());
    }

    #[test]
    fn duplicate_seeds_rejected() {
        assert!(matches!(
            ExperimentConfig::parse("mode = train\nseeds = 1, 1\n"),
            Err(Error::Config { field, .. }) if field == "seeds"
        ));
    }

    #[test]
    fn overrides_replace_values() {
        let mut f = ConfigFile::parse("mode = train\nagent.gamma = 0.9\n", "x").unwrap();
        f.apply_override("agent.gamma=0.5").unwrap();
        assert_eq!(ExperimentConfig::from_file(&f).unwrap().agent.gamma, 0.5);
    }

    #[test]
    fn echo_round_trips() {
        let cfg = ExperimentConfig::parse("mode = train\nenv.kind = chain\nenv.length = 12\nseeds = 5\n").unwrap();
        let text: String = cfg.echo().iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
        let text = text.replace("env.width", "env.length");
        let text: String = text
            .lines()
            .filter(|l| !l.starts_with("env.height") && !l.starts_with("env.walls") && !l.starts_with("env.noise_dims"))
            .map(|l| format!("{l}\n"))
            .collect();
        let mut expected = cfg.clone();
        expected.env.goals = cfg.env.goal_cells();
        assert_eq!(ExperimentConfig::parse(&text).unwrap(), expected);
    }
}
