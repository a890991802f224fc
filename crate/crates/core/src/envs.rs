//! Sparse-reward toy environments and the feature-noise wrapper.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::seeding::{rng_for, tags, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvKind {
    GridWorld,
    NoisyTvGridWorld,
    ChainMdp,
}

impl FromStr for EnvKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "grid_world" | "gridworld" | "grid" => Ok(EnvKind::GridWorld),
            "noisy_tv" | "noisy_tv_grid_world" | "noisytv" => Ok(EnvKind::NoisyTvGridWorld),
            "chain" | "chain_mdp" => Ok(EnvKind::ChainMdp),
            other => Err(format!(
                "unknown environment kind `{other}` (expected grid_world, noisy_tv or chain)"
            )),
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnvKind::GridWorld => "grid_world",
            EnvKind::NoisyTvGridWorld => "noisy_tv",
            EnvKind::ChainMdp => "chain",
        })
    }
}

/// Grid actions.
pub const UP: usize = 0;
pub const DOWN: usize = 1;
pub const LEFT: usize = 2;
pub const RIGHT: usize = 3;

/// Chain actions.
pub const CHAIN_LEFT: usize = 0;
pub const CHAIN_RIGHT: usize = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub kind: EnvKind,
    /// Grid width, or chain length for [`EnvKind::ChainMdp`].
    pub width: usize,
    /// Grid height; ignored for chains.
    pub height: usize,
    /// Goal cells as `(x, y)`. Empty means the far corner (or chain end).
    pub goals: Vec<(usize, usize)>,
    /// Impassable interior cells as `(x, y)`.
    pub walls: Vec<(usize, usize)>,
    pub max_steps: usize,
    /// Extra uniformly resampled observation dimensions for the noisy-TV grid.
    pub noise_dims: usize,
    pub seed: u64,
}

impl EnvSpec {
    pub fn grid_world(width: usize, height: usize) -> Self {
        Self {
            kind: EnvKind::GridWorld,
            width,
            height,
            goals: Vec::new(),
            walls: Vec::new(),
            max_steps: 200,
            noise_dims: 0,
            seed: 0,
        }
    }

    pub fn noisy_tv(width: usize, height: usize) -> Self {
        Self {
            kind: EnvKind::NoisyTvGridWorld,
            noise_dims: 16,
            ..Self::grid_world(width, height)
        }
    }

    pub fn chain(length: usize) -> Self {
        Self {
            kind: EnvKind::ChainMdp,
            width: length,
            height: 1,
            goals: Vec::new(),
            walls: Vec::new(),
            max_steps: 100,
            noise_dims: 0,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Goal cells with the far-corner default applied.
    pub fn goal_cells(&self) -> Vec<(usize, usize)> {
        if !self.goals.is_empty() {
            return self.goals.clone();
        }
        match self.kind {
            EnvKind::ChainMdp => vec![(self.width.saturating_sub(1), 0)],
            _ => vec![(self.width.saturating_sub(1), self.height.saturating_sub(1))],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let height = if self.kind == EnvKind::ChainMdp { 1 } else { self.height };
        if self.width == 0 || height == 0 || self.width * height < 2 {
            return Err(Error::InvalidSpec(format!(
                "environment needs at least two cells ({}x{})",
                self.width, height
            )));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidSpec("max_steps must be at least 1".into()));
        }
        for &(x, y) in self.goal_cells().iter().chain(&self.walls) {
            if x >= self.width || y >= height {
                return Err(Error::InvalidSpec(format!(
                    "cell ({x}, {y}) lies outside the {}x{height} grid",
                    self.width
                )));
            }
        }
        if self.walls.contains(&(0, 0)) {
            return Err(Error::InvalidSpec("start cell (0, 0) is a wall".into()));
        }
        if let Some(g) = self.goal_cells().iter().find(|g| self.walls.contains(g)) {
            return Err(Error::InvalidSpec(format!("goal {g:?} is a wall")));
        }
        if self.kind == EnvKind::NoisyTvGridWorld && self.noise_dims == 0 {
            return Err(Error::InvalidSpec("noisy TV needs noise_dims >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_obs: Vec<f64>,
    pub r_ext: f64,
    pub done: bool,
    /// Steps taken in the current episode, including this one.
    pub step: usize,
    pub goal_reached: bool,
}

pub trait Environment: Send {
    fn obs_dim(&self) -> usize;
    fn action_count(&self) -> usize;
    fn reset(&mut self) -> Vec<f64>;
    fn step(&mut self, action: usize) -> Result<StepResult>;
    /// Index of the agent's current cell.
    fn position(&self) -> usize;
    fn spec(&self) -> &EnvSpec;
}

pub fn make_env(spec: &EnvSpec) -> Result<Box<dyn Environment>> {
    spec.validate()?;
    Ok(match spec.kind {
        EnvKind::GridWorld | EnvKind::NoisyTvGridWorld => Box::new(GridWorld::new(spec.clone())?),
        EnvKind::ChainMdp => Box::new(ChainMdp::new(spec.clone())?),
    })
}

/// Four-connected grid starting at `(0, 0)`; reward 1 and termination on a goal.
/// The noisy-TV variant appends `noise_dims` uniform(0, 1) values resampled every step.
#[derive(Debug, Clone)]
pub struct GridWorld {
    spec: EnvSpec,
    blocked: Vec<bool>,
    goal: Vec<bool>,
    x: usize,
    y: usize,
    steps: usize,
    done: bool,
    tv: Option<Rng>,
}

impl GridWorld {
    pub fn new(spec: EnvSpec) -> Result<Self> {
        if spec.kind == EnvKind::ChainMdp {
            return Err(Error::InvalidSpec("GridWorld given a chain spec".into()));
        }
        spec.validate()?;
        let cells = spec.width * spec.height;
        let mut blocked = vec![false; cells];
        for &(x, y) in &spec.walls {
            blocked[y * spec.width + x] = true;
        }
        let mut goal = vec![false; cells];
        for (x, y) in spec.goal_cells() {
            goal[y * spec.width + x] = true;
        }
        let tv = (spec.kind == EnvKind::NoisyTvGridWorld).then(|| rng_for(spec.seed, tags::ENV_NOISE_TV));
        Ok(Self {
            spec,
            blocked,
            goal,
            x: 0,
            y: 0,
            steps: 0,
            done: false,
            tv,
        })
    }

    pub fn cell_count(&self) -> usize {
        self.spec.width * self.spec.height
    }

    pub fn is_blocked(&self, x: usize, y: usize) -> bool {
        self.blocked[y * self.spec.width + x]
    }

    pub fn is_goal(&self, x: usize, y: usize) -> bool {
        self.goal[y * self.spec.width + x]
    }

    fn observation(&mut self, fresh_noise: bool) -> Vec<f64> {
        let mut obs = vec![0.0; self.obs_dim()];
        obs[self.y * self.spec.width + self.x] = 1.0;
        if let Some(rng) = self.tv.as_mut() {
            let base = self.spec.width * self.spec.height;
            if fresh_noise {
                for v in &mut obs[base..] {
                    *v = rng.random::<f64>();
                }
            }
        }
        obs
    }
}

impl Environment for GridWorld {
    fn obs_dim(&self) -> usize {
        self.cell_count() + if self.tv.is_some() { self.spec.noise_dims } else { 0 }
    }

    fn action_count(&self) -> usize {
        4
    }

    fn reset(&mut self) -> Vec<f64> {
        self.x = 0;
        self.y = 0;
        self.steps = 0;
        self.done = false;
        self.observation(false)
    }

    fn step(&mut self, action: usize) -> Result<StepResult> {
        if action >= 4 {
            return Err(Error::InvalidAction { action, count: 4 });
        }
        if self.done {
            return Err(Error::InvalidSpec("step called on a finished episode; reset first".into()));
        }
        let (w, h) = (self.spec.width, self.spec.height);
        let (mut nx, mut ny) = (self.x, self.y);
        match action {
            UP if self.y > 0 => ny -= 1,
            DOWN if self.y + 1 < h => ny += 1,
            LEFT if self.x > 0 => nx -= 1,
            RIGHT if self.x + 1 < w => nx += 1,
            _ => {}
        }
        if !self.is_blocked(nx, ny) {
            self.x = nx;
            self.y = ny;
        }
        self.steps += 1;
        let goal_reached = self.is_goal(self.x, self.y);
        self.done = goal_reached || self.steps >= self.spec.max_steps;
        Ok(StepResult {
            next_obs: self.observation(true),
            r_ext: if goal_reached { 1.0 } else { 0.0 },
            done: self.done,
            step: self.steps,
            goal_reached,
        })
    }

    fn position(&self) -> usize {
        self.y * self.spec.width + self.x
    }

    fn spec(&self) -> &EnvSpec {
        &self.spec
    }
}

/// Linear chain of states starting at the left end; reward at the right end.
#[derive(Debug, Clone)]
pub struct ChainMdp {
    spec: EnvSpec,
    pos: usize,
    goal: usize,
    steps: usize,
    done: bool,
}

impl ChainMdp {
    pub fn new(spec: EnvSpec) -> Result<Self> {
        if spec.kind != EnvKind::ChainMdp {
            return Err(Error::InvalidSpec("ChainMdp given a grid spec".into()));
        }
        spec.validate()?;
        let goal = spec.goal_cells()[0].0;
        Ok(Self {
            spec,
            pos: 0,
            goal,
            steps: 0,
            done: false,
        })
    }

    fn observation(&self) -> Vec<f64> {
        let mut obs = vec![0.0; self.spec.width];
        obs[self.pos] = 1.0;
        obs
    }
}

impl Environment for ChainMdp {
    fn obs_dim(&self) -> usize {
        self.spec.width
    }

    fn action_count(&self) -> usize {
        2
    }

    fn reset(&mut self) -> Vec<f64> {
        self.pos = 0;
        self.steps = 0;
        self.done = false;
        self.observation()
    }

    fn step(&mut self, action: usize) -> Result<StepResult> {
        if action >= 2 {
            return Err(Error::InvalidAction { action, count: 2 });
        }
        if self.done {
            return Err(Error::InvalidSpec("step called on a finished episode; reset first".into()));
        }
        match action {
            CHAIN_LEFT => self.pos = self.pos.saturating_sub(1),
            _ => self.pos = (self.pos + 1).min(self.spec.width - 1),
        }
        self.steps += 1;
        let goal_reached = self.pos == self.goal;
        self.done = goal_reached || self.steps >= self.spec.max_steps;
        Ok(StepResult {
            next_obs: self.observation(),
            r_ext: if goal_reached { 1.0 } else { 0.0 },
            done: self.done,
            step: self.steps,
            goal_reached,
        })
    }

    fn position(&self) -> usize {
        self.pos
    }

    fn spec(&self) -> &EnvSpec {
        &self.spec
    }
}

/// Adds i.i.d. `N(0, sigma^2)` noise to every component; `sigma = 0` is the identity.
pub fn noise_wrap<R: rand::Rng>(obs: &[f64], sigma: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidSpec(format!("noise sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(obs.to_vec());
    }
    let normal = Normal::new(0.0, sigma).expect("sigma validated");
    Ok(obs.iter().map(|x| x + normal.sample(rng)).collect())
}
