//! Experience replay with pluggable sampling strategies.
//!
//! Three strategies share one buffer and one proportional sampler:
//!
//! - `Meet`: priorities come from the critic ensemble's disagreement. For a
//!   transition with normalized head-mean `mu`, normalized head-variance
//!   `var` and visit count `n`, the score is
//!   `var * (mu + (1 - mu) / n)` — high-value uncertain experience is
//!   replayed while it stays uncertain, and the `1/n` term gives rarely
//!   drawn transitions a second chance even when their mean looks poor.
//! - `Per`: classic TD-error proportionality `(|td| + eps)^alpha` with
//!   annealed importance-sampling weights.
//! - `Uniform`: every stored transition at the same fixed priority.
//!
//! New transitions always enter at the buffer's current maximum priority so
//! they are seen at least once before their own score takes over. All
//! priorities are floored at a small epsilon, keeping every stored
//! transition reachable.

use std::fmt;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;

use crate::critic::HeadMask;
use crate::error::{Error, Result};
use crate::sum_tree::SumTree;

pub const DEFAULT_PRIORITY_FLOOR: f64 = 1e-6;
pub const DEFAULT_PER_ALPHA: f64 = 0.6;
pub const DEFAULT_PER_BETA0: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Meet,
    Per,
    Uniform,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Meet => "meet",
            Strategy::Per => "per",
            Strategy::Uniform => "uniform",
        })
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "meet" => Ok(Strategy::Meet),
            "per" => Ok(Strategy::Per),
            "uniform" => Ok(Strategy::Uniform),
            other => Err(Error::InvalidArgument(format!(
                "unknown strategy '{other}' (expected meet, per or uniform)"
            ))),
        }
    }
}

/// One stored environment step.
#[derive(Debug, Clone)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
    /// Bootstrap mask drawn when the step was taken.
    pub head_mask: HeadMask,
    /// Times this slot has been drawn for learning.
    pub visit_count: u32,
    /// Current replay priority; managed by the buffer.
    pub priority: f64,
}

impl Transition {
    pub fn new(
        state: Vec<f64>,
        action: Vec<f64>,
        reward: f64,
        next_state: Vec<f64>,
        done: bool,
        head_mask: HeadMask,
    ) -> Self {
        Self { state, action, reward, next_state, done, head_mask, visit_count: 0, priority: 0.0 }
    }
}

/// One draw from [`ReplayBuffer::sample_batch`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleDraw {
    pub slot: usize,
    /// Importance weight: 1 for `Meet`/`Uniform`; for `Per` the annealed,
    /// batch-max-normalized correction `(n * P(slot))^-beta`.
    pub weight: f64,
    /// The slot's visit count after this draw was counted.
    pub visits_after: u32,
}

/// Max-aggregated mirror of the sum tree, tracking the largest stored
/// priority in O(log n) so insertions don't rescan the buffer.
#[derive(Debug, Clone)]
struct MaxTree {
    leaf_base: usize,
    nodes: Vec<f64>,
}

impl MaxTree {
    fn new(capacity: usize) -> Self {
        let leaf_base = capacity.next_power_of_two();
        Self { leaf_base, nodes: vec![0.0; 2 * leaf_base] }
    }

    fn set(&mut self, index: usize, value: f64) {
        let mut node = self.leaf_base + index;
        self.nodes[node] = value;
        while node > 1 {
            node /= 2;
            self.nodes[node] = self.nodes[2 * node].max(self.nodes[2 * node + 1]);
        }
    }

    fn max(&self) -> f64 {
        self.nodes[1]
    }
}

/// Ring buffer of transitions with proportional priority sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    strategy: Strategy,
    items: Vec<Transition>,
    tree: SumTree,
    max_tree: MaxTree,
    /// Next slot to write; wraps at capacity, evicting the oldest entry.
    cursor: usize,
    priority_floor: f64,
    per_alpha: f64,
    per_beta0: f64,
    per_beta: f64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, strategy: Strategy) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("buffer capacity must be >= 1".into()));
        }
        Ok(Self {
            capacity,
            strategy,
            items: Vec::new(),
            tree: SumTree::new(capacity)?,
            max_tree: MaxTree::new(capacity),
            cursor: 0,
            priority_floor: DEFAULT_PRIORITY_FLOOR,
            per_alpha: DEFAULT_PER_ALPHA,
            per_beta0: DEFAULT_PER_BETA0,
            per_beta: DEFAULT_PER_BETA0,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn priority_floor(&self) -> f64 {
        self.priority_floor
    }

    pub fn per_alpha(&self) -> f64 {
        self.per_alpha
    }

    pub fn per_beta(&self) -> f64 {
        self.per_beta
    }

    /// Sets the TD-error exponent and the importance-weight starting
    /// exponent for the `Per` strategy.
    pub fn set_per_schedule(&mut self, alpha: f64, beta0: f64) -> Result<()> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("alpha must be >= 0, got {alpha}")));
        }
        if !(0.0..=1.0).contains(&beta0) {
            return Err(Error::InvalidArgument(format!("beta0 must be in [0, 1], got {beta0}")));
        }
        self.per_alpha = alpha;
        self.per_beta0 = beta0;
        self.per_beta = beta0;
        Ok(())
    }

    /// Linearly anneals the importance exponent from `beta0` at progress 0
    /// to 1 at progress 1. Progress outside `[0, 1]` is clamped.
    pub fn anneal_per_beta(&mut self, progress: f64) {
        let p = if progress.is_nan() { 0.0 } else { progress.clamp(0.0, 1.0) };
        self.per_beta = self.per_beta0 + (1.0 - self.per_beta0) * p;
    }

    pub fn get(&self, slot: usize) -> Option<&Transition> {
        self.items.get(slot)
    }

    /// Sum of stored priorities divided by the number stored; zero when
    /// empty.
    pub fn mean_priority(&self) -> f64 {
        if self.items.is_empty() {
            0.0
        } else {
            self.tree.total() / self.items.len() as f64
        }
    }

    pub fn max_priority(&self) -> f64 {
        self.max_tree.max()
    }

    /// Inserts a transition at the buffer's current maximum priority (1 for
    /// the very first insertion), evicting the oldest entry once full.
    /// Returns the slot written.
    pub fn store(&mut self, mut transition: Transition) -> Result<usize> {
        if let Some(first) = self.items.first() {
            if transition.state.len() != first.state.len()
                || transition.action.len() != first.action.len()
                || transition.next_state.len() != first.next_state.len()
                || transition.head_mask.len() != first.head_mask.len()
            {
                return Err(Error::ShapeMismatch(
                    "transition dimensions differ from buffer contents".into(),
                ));
            }
        }
        // Current max, not the historical one: if every stored priority has
        // decayed, newcomers enter at the decayed scale rather than pinning
        // the buffer to an early spike.
        let priority = if self.items.is_empty() { 1.0 } else { self.max_tree.max() };
        transition.priority = priority;
        let slot = self.cursor;
        if slot == self.items.len() {
            self.items.push(transition);
        } else {
            self.items[slot] = transition;
        }
        self.tree.set(slot, priority)?;
        self.max_tree.set(slot, priority);
        self.cursor = (self.cursor + 1) % self.capacity;
        Ok(slot)
    }

    /// Draws `k` slots with probability proportional to priority, with
    /// replacement. Each draw consumes one `random_range(0.0..total)` value
    /// from `rng` and bumps the drawn slot's visit count immediately, so a
    /// slot drawn twice in a batch sees two different `visits_after`.
    pub fn sample_batch(&mut self, k: usize, rng: &mut impl Rng) -> Result<Vec<SampleDraw>> {
        if self.items.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        if k == 0 {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        let total = self.tree.total();
        let n = self.items.len() as f64;
        let mut draws = Vec::with_capacity(k);
        for _ in 0..k {
            let u = rng.random_range(0.0..total);
            let slot = self.tree.sample_prefix(u)?;
            self.items[slot].visit_count += 1;
            let weight = match self.strategy {
                Strategy::Meet | Strategy::Uniform => 1.0,
                Strategy::Per => {
                    let prob = self.items[slot].priority / total;
                    (n * prob).powf(-self.per_beta)
                }
            };
            draws.push(SampleDraw { slot, weight, visits_after: self.items[slot].visit_count });
        }
        if self.strategy == Strategy::Per {
            let max_w = draws.iter().map(|d| d.weight).fold(f64::MIN, f64::max);
            for d in &mut draws {
                d.weight /= max_w;
            }
        }
        Ok(draws)
    }

    /// Overwrites the priorities of the given slots, flooring each at the
    /// buffer's epsilon. All writes land before the call returns, so the
    /// next sample sees a consistent tree.
    pub fn update_priorities(&mut self, slots: &[usize], priorities: &[f64]) -> Result<()> {
        if slots.len() != priorities.len() {
            return Err(Error::InvalidArgument(format!(
                "{} slots but {} priorities",
                slots.len(),
                priorities.len()
            )));
        }
        for (&slot, &p) in slots.iter().zip(priorities) {
            if slot >= self.items.len() {
                return Err(Error::OutOfBounds { index: slot, len: self.items.len() });
            }
            if !p.is_finite() || p < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "priority must be finite and >= 0, got {p}"
                )));
            }
        }
        for (&slot, &p) in slots.iter().zip(priorities) {
            let p = p.max(self.priority_floor);
            self.items[slot].priority = p;
            self.tree.set(slot, p)?;
            self.max_tree.set(slot, p);
        }
        Ok(())
    }

    /// Debug snapshot: magic `MEETBUF1`, little-endian u32 count,
    /// state/action/mask widths, then each transition's fields in slot
    /// order (state, action, reward, next state, done byte, visit count,
    /// priority, mask bits as bytes).
    pub fn dump(&self, path: &Path) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        file.write_all(b"MEETBUF1")?;
        let (sd, ad, md) = self
            .items
            .first()
            .map(|t| (t.state.len(), t.action.len(), t.head_mask.len()))
            .unwrap_or((0, 0, 0));
        for v in [self.items.len(), sd, ad, md] {
            file.write_all(&(v as u32).to_le_bytes())?;
        }
        for t in &self.items {
            for v in t.state.iter().chain(&t.action) {
                file.write_all(&v.to_le_bytes())?;
            }
            file.write_all(&t.reward.to_le_bytes())?;
            for v in &t.next_state {
                file.write_all(&v.to_le_bytes())?;
            }
            file.write_all(&[u8::from(t.done)])?;
            file.write_all(&t.visit_count.to_le_bytes())?;
            file.write_all(&t.priority.to_le_bytes())?;
            for &b in t.head_mask.bits() {
                file.write_all(&[u8::from(b)])?;
            }
        }
        file.flush()?;
        Ok(())
    }
}

/// Ensemble-disagreement replay score, floored at `eps`:
/// `max(eps, var * (mu + (1 - mu) / n))` with `mu`, `var` the normalized
/// head statistics and `n >= 1` the visit count.
pub fn meet_priority(mu: f64, var: f64, visit_count: u32, eps: f64) -> Result<f64> {
    if visit_count == 0 {
        return Err(Error::ContractViolation(
            "priority update requires visit count >= 1".into(),
        ));
    }
    if !(mu.is_finite() && var.is_finite()) {
        return Err(Error::NonFinite("head statistics".into()));
    }
    Ok(meet_priority_raw(mu, var, visit_count).max(eps))
}

/// The raw (unfloored) disagreement score.
pub fn meet_priority_raw(mu: f64, var: f64, visit_count: u32) -> f64 {
    let n = f64::from(visit_count);
    var * (mu + (1.0 - mu) / n)
}

/// Rescales a batch of head statistics to `[0, 1]`: means by min-max
/// (everything at 0.5 if they coincide), variances by the batch maximum
/// (zeros if all are zero). Keeps the two priority factors on a comparable
/// scale regardless of the reward magnitude of the task.
pub fn normalize_batch_stats(mus: &[f64], vars: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if mus.is_empty() {
        return Err(Error::EmptyInput);
    }
    if mus.len() != vars.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} means but {} variances",
            mus.len(),
            vars.len()
        )));
    }
    if mus.iter().chain(vars).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("batch statistics".into()));
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &m in mus {
        lo = lo.min(m);
        hi = hi.max(m);
    }
    let span = hi - lo;
    let norm_mus = if span > 0.0 {
        mus.iter().map(|&m| (m - lo) / span).collect()
    } else {
        vec![0.5; mus.len()]
    };
    let vmax = vars.iter().fold(0.0f64, |a, &b| a.max(b));
    let norm_vars = if vmax > 0.0 {
        vars.iter().map(|&v| v / vmax).collect()
    } else {
        vec![0.0; vars.len()]
    };
    Ok((norm_mus, norm_vars))
}

/// TD-error replay score `(|td| + eps)^alpha`.
pub fn per_priority(td_error: f64, alpha: f64, eps: f64) -> f64 {
    (td_error.abs() + eps).powf(alpha)
}
