//! Torque-limited pendulum swing-up.
//!
//! The rod starts at a random angle and must be swung to, and balanced at,
//! the upright position with a motor too weak to lift it directly — the
//! agent has to pump energy by swinging. Observations are `[cos th,
//! sin th, th_dot]`; the angle itself is kept unwrapped in the state and
//! only wrapped into `[-pi, pi)` for the reward.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Environment, StepOutcome};
use crate::error::{Error, Result};

const GRAVITY: f64 = 10.0;
const MASS: f64 = 1.0;
const LENGTH: f64 = 1.0;
const DT: f64 = 0.05;
const MAX_SPEED: f64 = 8.0;
const MAX_TORQUE: f64 = 2.0;
const HORIZON: usize = 200;

pub struct PendulumEnv {
    theta: f64,
    theta_dot: f64,
    dt: f64,
    steps: usize,
    done: bool,
    bound: [f64; 1],
}

impl PendulumEnv {
    pub fn new() -> Self {
        Self { theta: 0.0, theta_dot: 0.0, dt: DT, steps: 0, done: false, bound: [MAX_TORQUE] }
    }

    fn observation(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.theta_dot]
    }

    #[cfg(test)]
    fn state(&self) -> (f64, f64) {
        (self.theta, self.theta_dot)
    }

    #[cfg(test)]
    fn set_state(&mut self, theta: f64, theta_dot: f64) {
        self.theta = theta;
        self.theta_dot = theta_dot;
        self.steps = 0;
        self.done = false;
    }

    #[cfg(test)]
    fn set_dt(&mut self, dt: f64) {
        self.dt = dt;
    }
}

impl Default for PendulumEnv {
    fn default() -> Self {
        Self::new()
    }
}

/// Wraps an angle into `[-pi, pi)`.
fn wrap_angle(theta: f64) -> f64 {
    (theta + PI).rem_euclid(2.0 * PI) - PI
}

impl Environment for PendulumEnv {
    fn obs_dim(&self) -> usize {
        3
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn action_bound(&self) -> &[f64] {
        &self.bound
    }

    fn horizon(&self) -> usize {
        HORIZON
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.theta = rng.random_range(-PI..PI);
        self.theta_dot = rng.random_range(-1.0..1.0);
        self.steps = 0;
        self.done = false;
        self.observation()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::EpisodeFinished);
        }
        if action.len() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "pendulum takes a 1-dim action, got {}",
                action.len()
            )));
        }
        let u = action[0].clamp(-MAX_TORQUE, MAX_TORQUE);
        // Semi-implicit Euler: velocity first, then position with the new
        // velocity. theta = 0 is upright, so gravity pushes away from it.
        let accel = 3.0 * GRAVITY / (2.0 * LENGTH) * self.theta.sin()
            + 3.0 / (MASS * LENGTH * LENGTH) * u;
        self.theta_dot = (self.theta_dot + accel * self.dt).clamp(-MAX_SPEED, MAX_SPEED);
        self.theta += self.theta_dot * self.dt;

        let angle = wrap_angle(self.theta);
        let reward = -(angle * angle + 0.1 * self.theta_dot * self.theta_dot + 0.001 * u * u);

        self.steps += 1;
        self.done = self.steps >= HORIZON;
        Ok(StepOutcome { obs: self.observation(), reward, done: self.done })
    }
}
