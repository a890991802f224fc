//! Nuclear-norm curiosity: matrix routines, intrinsic rewards, world models,
//! replay memory, environments, a PPO agent and an experiment runner.

pub mod agent;
pub mod curiosity;
pub mod envs;
pub mod error;
pub mod lab;
pub mod matlin;
pub mod memory;
pub mod optim;
pub mod seeding;
pub mod worldmodel;

pub use curiosity::{MatrixSource, RewardMethod, RewardSpec, StateMatrix};
pub use error::{Error, Result};
pub use matlin::DenseMatrix;
