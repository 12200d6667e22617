//! Damped point mass homing on the origin.
//!
//! The mass spawns near the edge of the unit square with zero velocity and
//! is pushed by a bounded 2-d force. Reward is the negative distance to the
//! goal minus a small control cost, so the best policy brakes into the
//! center and parks there.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Environment, StepOutcome};
use crate::error::{Error, Result};

const DT: f64 = 0.05;
const DAMPING: f64 = 0.95;
const HORIZON: usize = 150;

pub struct PointMassEnv {
    pos: [f64; 2],
    vel: [f64; 2],
    steps: usize,
    done: bool,
    bound: [f64; 2],
}

impl PointMassEnv {
    pub fn new() -> Self {
        Self { pos: [0.0; 2], vel: [0.0; 2], steps: 0, done: false, bound: [1.0, 1.0] }
    }

    fn observation(&self) -> Vec<f64> {
        vec![self.pos[0], self.pos[1], self.vel[0], self.vel[1]]
    }

    #[cfg(test)]
    fn pos(&self) -> [f64; 2] {
        self.pos
    }
}

impl Default for PointMassEnv {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for PointMassEnv {
    fn obs_dim(&self) -> usize {
        4
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn action_bound(&self) -> &[f64] {
        &self.bound
    }

    fn horizon(&self) -> usize {
        HORIZON
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // A point in the outer band of the square: pick an edge, slide along
        // it, and pull in by at most 0.2 so every start is far from the goal.
        let side = rng.random_range(0..4u8);
        let along = rng.random_range(-1.0..1.0);
        let radial = rng.random_range(0.8..1.0);
        self.pos = match side {
            0 => [along, radial],
            1 => [along, -radial],
            2 => [radial, along],
            _ => [-radial, along],
        };
        self.vel = [0.0; 2];
        self.steps = 0;
        self.done = false;
        self.observation()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::EpisodeFinished);
        }
        if action.len() != 2 {
            return Err(Error::ShapeMismatch(format!(
                "point mass takes a 2-dim action, got {}",
                action.len()
            )));
        }
        let a = [action[0].clamp(-1.0, 1.0), action[1].clamp(-1.0, 1.0)];
        for i in 0..2 {
            self.vel[i] = DAMPING * self.vel[i] + a[i] * DT;
            self.pos[i] = (self.pos[i] + self.vel[i] * DT).clamp(-1.0, 1.0);
        }
        let dist = (self.pos[0] * self.pos[0] + self.pos[1] * self.pos[1]).sqrt();
        let effort = a[0] * a[0] + a[1] * a[1];
        let reward = -dist - 0.01 * effort;

        self.steps += 1;
        self.done = self.steps >= HORIZON;
        Ok(StepOutcome { obs: self.observation(), reward, done: self.done })
    }
}
