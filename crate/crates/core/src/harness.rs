//! Seeded experiment sweeps: every (strategy, seed) pair trains a fresh
//! agent, evaluation returns are logged on a fixed schedule, and the whole
//! sweep lands in one CSV.
//!
//! With the `parallel` feature (default) the runs execute on a rayon pool;
//! results are collected back in spec order, so parallel and serial sweeps
//! emit identical records. The only column that can differ between two
//! invocations of the same spec is `wall_secs`, which reports measured
//! time; [`csv_without_wall_clock`] strips it for byte-level comparisons.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agent::{evaluate, Agent, AgentConfig};
use crate::envs::{make_env, EnvKind};
use crate::error::{Error, Result};
use crate::mix_seed;
use crate::replay::Strategy;

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub env: EnvKind,
    pub strategies: Vec<Strategy>,
    pub seeds: Vec<u64>,
    /// Template agent configuration; `strategy` and `seed` are overridden
    /// per run.
    pub agent: AgentConfig,
    /// Evaluate every this many environment steps (plus once at step 0).
    pub eval_interval: u64,
    pub eval_episodes: usize,
}

impl ExperimentSpec {
    pub fn new(env: EnvKind) -> Self {
        Self {
            env,
            strategies: vec![Strategy::Meet, Strategy::Per, Strategy::Uniform],
            seeds: vec![0, 1, 2, 3, 4],
            agent: AgentConfig::default(),
            eval_interval: 1000,
            eval_episodes: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.strategies.is_empty() || self.seeds.is_empty() {
            return Err(Error::InvalidArgument(
                "strategy and seed lists must be non-empty".into(),
            ));
        }
        for (i, s) in self.strategies.iter().enumerate() {
            if self.strategies[..i].contains(s) {
                return Err(Error::InvalidArgument(format!("duplicate strategy '{s}'")));
            }
        }
        for (i, s) in self.seeds.iter().enumerate() {
            if self.seeds[..i].contains(s) {
                return Err(Error::InvalidArgument(format!("duplicate seed {s}")));
            }
        }
        if self.eval_interval == 0 {
            return Err(Error::InvalidArgument("eval_interval must be >= 1".into()));
        }
        if self.eval_episodes == 0 {
            return Err(Error::InvalidArgument("eval_episodes must be >= 1".into()));
        }
        Ok(())
    }
}

/// One evaluation point of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub strategy: Strategy,
    pub seed: u64,
    pub step: u64,
    pub eval_return: f64,
    pub critic_loss: f64,
    pub mean_priority: f64,
    /// Seconds since the run started; measured, not reproducible.
    pub wall_secs: f64,
}

/// A finished sweep: records in spec order plus any runs that aborted.
/// A failed run leaves a single marker record with NaN metrics at step 0.
#[derive(Debug)]
pub struct ExperimentOutcome {
    pub records: Vec<RunRecord>,
    pub failures: Vec<(Strategy, u64, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategySummary {
    pub strategy: Strategy,
    /// Mean over seeds of each seed's last evaluation return.
    pub final_mean: f64,
    /// Population standard deviation of those finals.
    pub final_std: f64,
    /// Mean over seeds of the step-normalized trapezoidal area under the
    /// return curve — a convergence-speed proxy (a constant curve at c
    /// scores exactly c).
    pub auc_mean: f64,
    /// Maximum of the seed-averaged return curve over evaluation points.
    pub peak: f64,
}

fn run_one(spec: &ExperimentSpec, strategy: Strategy, seed: u64) -> Result<Vec<RunRecord>> {
    let start = Instant::now();
    let mut env = make_env(spec.env);
    let mut eval_env = make_env(spec.env);
    let mut cfg = spec.agent.clone();
    cfg.strategy = strategy;
    cfg.seed = seed;
    let total_steps = cfg.total_steps;
    let mut agent = Agent::new(cfg, env.as_mut())?;

    let mut records = Vec::with_capacity(1 + (total_steps / spec.eval_interval) as usize);
    let mut record_eval = |agent: &Agent, step: u64| -> Result<RunRecord> {
        let eval_seed = mix_seed(mix_seed(seed, 0xE7A1), step);
        let ret = evaluate(agent.actor(), eval_env.as_mut(), spec.eval_episodes, eval_seed)?;
        Ok(RunRecord {
            strategy,
            seed,
            step,
            eval_return: ret,
            critic_loss: agent.last_loss(),
            mean_priority: agent.buffer().mean_priority(),
            wall_secs: start.elapsed().as_secs_f64(),
        })
    };

    records.push(record_eval(&agent, 0)?);
    for t in 1..=total_steps {
        agent.train_iteration(env.as_mut(), t)?;
        if t % spec.eval_interval == 0 {
            records.push(record_eval(&agent, t)?);
        }
    }
    Ok(records)
}

fn assemble(
    pairs: Vec<(Strategy, u64)>,
    results: Vec<Result<Vec<RunRecord>>>,
) -> ExperimentOutcome {
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for ((strategy, seed), result) in pairs.into_iter().zip(results) {
        match result {
            Ok(series) => records.extend(series),
            Err(e) => {
                failures.push((strategy, seed, e.to_string()));
                records.push(RunRecord {
                    strategy,
                    seed,
                    step: 0,
                    eval_return: f64::NAN,
                    critic_loss: f64::NAN,
                    mean_priority: f64::NAN,
                    wall_secs: 0.0,
                });
            }
        }
    }
    ExperimentOutcome { records, failures }
}

fn spec_pairs(spec: &ExperimentSpec) -> Vec<(Strategy, u64)> {
    spec.strategies
        .iter()
        .flat_map(|&s| spec.seeds.iter().map(move |&seed| (s, seed)))
        .collect()
}

/// Runs the sweep, using the rayon pool when the `parallel` feature is
/// enabled and falling back to the serial path otherwise. Output order and
/// content are identical either way.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    spec.validate()?;
    let pairs = spec_pairs(spec);
    #[cfg(feature = "parallel")]
    let results: Vec<Result<Vec<RunRecord>>> = {
        use rayon::prelude::*;
        pairs.par_iter().map(|&(s, seed)| run_one(spec, s, seed)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<Vec<RunRecord>>> =
        pairs.iter().map(|&(s, seed)| run_one(spec, s, seed)).collect();
    Ok(assemble(pairs, results))
}

/// The sweep on the current thread, one run at a time, regardless of
/// features. Exists as the reference path the parallel sweep is compared
/// against.
pub fn run_experiment_serial(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    spec.validate()?;
    let pairs = spec_pairs(spec);
    let results = pairs.iter().map(|&(s, seed)| run_one(spec, s, seed)).collect();
    Ok(assemble(pairs, results))
}

/// Per-strategy aggregates in first-appearance order. Rows with non-finite
/// returns (failed-run markers) are ignored; a strategy whose every series
/// failed is dropped.
pub fn summarize(records: &[RunRecord]) -> Result<Vec<StrategySummary>> {
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    // Group into (strategy, seed) series preserving encounter order.
    let mut series: Vec<(Strategy, u64, Vec<&RunRecord>)> = Vec::new();
    for r in records {
        if !r.eval_return.is_finite() {
            continue;
        }
        match series.iter_mut().find(|(s, seed, _)| *s == r.strategy && *seed == r.seed) {
            Some((_, _, rows)) => rows.push(r),
            None => series.push((r.strategy, r.seed, vec![r])),
        }
    }
    let mut strategies: Vec<Strategy> = Vec::new();
    for (s, _, _) in &series {
        if !strategies.contains(s) {
            strategies.push(*s);
        }
    }

    let mut out = Vec::with_capacity(strategies.len());
    for strategy in strategies {
        let runs: Vec<&(Strategy, u64, Vec<&RunRecord>)> =
            series.iter().filter(|(s, _, _)| *s == strategy).collect();
        let finals: Vec<f64> =
            runs.iter().map(|(_, _, rows)| rows.last().unwrap().eval_return).collect();
        let n = finals.len() as f64;
        let final_mean = finals.iter().sum::<f64>() / n;
        let final_std =
            (finals.iter().map(|f| (f - final_mean).powi(2)).sum::<f64>() / n).sqrt();

        let auc_mean = runs.iter().map(|(_, _, rows)| series_auc(rows)).sum::<f64>() / n;

        // Seed-mean curve: average return at each step over the seeds that
        // evaluated there, then take the best point.
        let mut step_sums: Vec<(u64, f64, usize)> = Vec::new();
        for (_, _, rows) in &runs {
            for r in rows {
                match step_sums.iter_mut().find(|(st, _, _)| *st == r.step) {
                    Some((_, sum, cnt)) => {
                        *sum += r.eval_return;
                        *cnt += 1;
                    }
                    None => step_sums.push((r.step, r.eval_return, 1)),
                }
            }
        }
        let peak = step_sums
            .iter()
            .map(|(_, sum, cnt)| sum / *cnt as f64)
            .fold(f64::NEG_INFINITY, f64::max);

        out.push(StrategySummary { strategy, final_mean, final_std, auc_mean, peak });
    }
    if out.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(out)
}

/// Step-normalized trapezoidal area of one series; a single point is its
/// own area.
fn series_auc(rows: &[&RunRecord]) -> f64 {
    if rows.len() < 2 {
        return rows[0].eval_return;
    }
    let span = (rows.last().unwrap().step - rows[0].step) as f64;
    let mut area = 0.0;
    for pair in rows.windows(2) {
        let dt = (pair[1].step - pair[0].step) as f64;
        area += 0.5 * (pair[0].eval_return + pair[1].eval_return) * dt;
    }
    area / span
}

pub const CSV_HEADER: &str = "strategy,seed,step,eval_return,critic_loss,mean_priority,wall_secs";

pub fn records_to_csv(records: &[RunRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        // Metrics use shortest-roundtrip float formatting; wall time is
        // measured anyway, so it gets fixed precision.
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{:.3}",
            r.strategy, r.seed, r.step, r.eval_return, r.critic_loss, r.mean_priority, r.wall_secs
        );
    }
    out
}

pub fn write_csv(path: &Path, records: &[RunRecord]) -> Result<()> {
    std::fs::write(path, records_to_csv(records))?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<RunRecord>> {
    let text = std::fs::read_to_string(path)?;
    parse_csv(&text)
}

pub fn parse_csv(text: &str) -> Result<Vec<RunRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        other => {
            return Err(Error::InvalidArgument(format!(
                "bad CSV header: {:?}",
                other.unwrap_or("<empty>")
            )))
        }
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(Error::InvalidArgument(format!(
                "row {}: expected 7 fields, got {}",
                i + 2,
                fields.len()
            )));
        }
        let parse_f = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("row {}: bad {what} '{s}'", i + 2)))
        };
        records.push(RunRecord {
            strategy: fields[0].parse()?,
            seed: fields[1]
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("row {}: bad seed", i + 2)))?,
            step: fields[2]
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("row {}: bad step", i + 2)))?,
            eval_return: parse_f(fields[3], "eval_return")?,
            critic_loss: parse_f(fields[4], "critic_loss")?,
            mean_priority: parse_f(fields[5], "mean_priority")?,
            wall_secs: parse_f(fields[6], "wall_secs")?,
        });
    }
    Ok(records)
}

/// Drops the `wall_secs` column (the one measured, non-reproducible field)
/// from a sweep CSV so two invocations of the same spec can be compared
/// byte for byte.
pub fn csv_without_wall_clock(csv: &str) -> String {
    csv.lines()
        .map(|line| match line.rsplit_once(',') {
            Some((rest, _)) => format!("{rest}\n"),
            None => format!("{line}\n"),
        })
        .collect()
}

/// Aligned text table of the per-strategy summary, one row per strategy.
pub fn summary_table(summaries: &[StrategySummary]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<10} {:>12} {:>12} {:>12} {:>12}",
        "strategy", "final_mean", "final_std", "auc_mean", "peak"
    );
    for s in summaries {
        let _ = writeln!(
            out,
            "{:<10} {:>12.3} {:>12.3} {:>12.3} {:>12.3}",
            s.strategy.to_string(),
            s.final_mean,
            s.final_std,
            s.auc_mean,
            s.peak
        );
    }
    out
}

/// Mean and population std over `seeds` of a uniform-random policy's mean
/// evaluation return, under the same episode protocol the sweeps use. The
/// floor any learned policy is compared against.
pub fn random_policy_baseline(
    kind: EnvKind,
    seeds: &[u64],
    episodes: usize,
) -> Result<(f64, f64)> {
    if seeds.is_empty() || episodes == 0 {
        return Err(Error::InvalidArgument(
            "baseline needs at least one seed and one episode".into(),
        ));
    }
    let mut env = make_env(kind);
    let mut means = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xBA5E));
        let mut total = 0.0;
        for ep in 0..episodes {
            env.reset(mix_seed(seed, ep as u64));
            loop {
                let action: Vec<f64> =
                    env.action_bound().iter().map(|&b| rng.random_range(-b..b)).collect();
                let out = env.step(&action)?;
                total += out.reward;
                if out.done {
                    break;
                }
            }
        }
        means.push(total / episodes as f64);
    }
    let n = means.len() as f64;
    let mean = means.iter().sum::<f64>() / n;
    let std = (means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok((mean, std))
}
