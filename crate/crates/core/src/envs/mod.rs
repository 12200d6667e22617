//! Small native continuous-control tasks with dense rewards.
//!
//! Both run in microseconds per step, which is what makes five-seed
//! strategy sweeps practical on one machine. Episodes are fixed-horizon:
//! `done` signals only the time limit, never a failure state.

mod pendulum;
mod point_mass;

use std::fmt;
use std::str::FromStr;

pub use pendulum::PendulumEnv;
pub use point_mass::PointMassEnv;

use crate::error::{Error, Result};

/// What a single environment step produced.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

pub trait Environment: Send {
    fn obs_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    /// Per-dimension symmetric action bound: valid torque/force is
    /// `[-bound[i], bound[i]]`. Out-of-range actions are clipped by `step`.
    fn action_bound(&self) -> &[f64];
    /// Episode length; `step` reports `done` exactly at this many steps.
    fn horizon(&self) -> usize;
    /// Starts a fresh episode. The same seed always produces the same
    /// initial state.
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    /// Advances one step. Stepping a finished episode is an error.
    fn step(&mut self, action: &[f64]) -> Result<StepOutcome>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvKind {
    Pendulum,
    PointMass,
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnvKind::Pendulum => "pendulum",
            EnvKind::PointMass => "pointmass",
        })
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pendulum" => Ok(EnvKind::Pendulum),
            "pointmass" => Ok(EnvKind::PointMass),
            other => Err(Error::InvalidArgument(format!(
                "unknown environment '{other}' (expected pendulum or pointmass)"
            ))),
        }
    }
}

pub fn make_env(kind: EnvKind) -> Box<dyn Environment> {
    match kind {
        EnvKind::Pendulum => Box::new(PendulumEnv::new()),
        EnvKind::PointMass => Box::new(PointMassEnv::new()),
    }
}
