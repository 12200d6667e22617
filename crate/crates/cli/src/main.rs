//! `meet` — seeded sweeps comparing replay-sampling strategies, and a
//! summarizer for the CSVs those sweeps produce.
//!
//! Exit codes: 0 success, 1 invalid arguments or unreadable input,
//! 2 at least one run aborted.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use meet_core::agent::AgentConfig;
use meet_core::envs::EnvKind;
use meet_core::harness::{
    run_experiment, summarize, summary_table, write_csv, ExperimentSpec,
};
use meet_core::replay::Strategy;

#[derive(Parser, Debug)]
#[command(name = "meet", version, about = "Replay-strategy experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one agent per (strategy, seed) pair and write learning curves
    /// to a CSV.
    Run(RunArgs),
    /// Print per-strategy summary statistics for a sweep CSV.
    Summarize {
        /// Sweep CSV produced by `run`.
        #[arg(long = "in", value_name = "PATH")]
        input: PathBuf,
    },
}

/// Every flag is optional on the command line; missing values fall back to
/// the config file (if given), then to built-in defaults. `--out` has no
/// default and must come from one of the two.
#[derive(Args, Debug, Default, Clone)]
struct RunArgs {
    /// Line-based `key = value` file mirroring these flags; explicit flags
    /// override it.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Environment: pendulum | pointmass.
    #[arg(long)]
    env: Option<String>,
    /// Comma-separated strategies: meet | per | uniform.
    #[arg(long)]
    strategy: Option<String>,
    /// Comma-separated seeds, e.g. 0,1,2,3,4.
    #[arg(long)]
    seeds: Option<String>,
    /// Environment steps per run.
    #[arg(long)]
    steps: Option<u64>,
    /// Critic ensemble size.
    #[arg(long)]
    heads: Option<usize>,
    /// Bernoulli probability that a head participates in a transition.
    #[arg(long = "mask-prob")]
    mask_prob: Option<f64>,
    /// Discount factor.
    #[arg(long)]
    gamma: Option<f64>,
    /// Learn every this many environment steps.
    #[arg(long = "replay-period")]
    replay_period: Option<u64>,
    /// Minibatch size.
    #[arg(long)]
    batch: Option<usize>,
    /// Replay buffer capacity.
    #[arg(long)]
    capacity: Option<usize>,
    /// Stored transitions required before learning starts.
    #[arg(long)]
    warmup: Option<usize>,
    /// Target-network soft-update rate.
    #[arg(long)]
    tau: Option<f64>,
    /// Evaluate every this many environment steps.
    #[arg(long = "eval-interval")]
    eval_interval: Option<u64>,
    /// Episodes averaged per evaluation point.
    #[arg(long = "eval-episodes")]
    eval_episodes: Option<usize>,
    /// Actor learning rate.
    #[arg(long = "actor-lr")]
    actor_lr: Option<f64>,
    /// Critic learning rate.
    #[arg(long = "critic-lr")]
    critic_lr: Option<f64>,
    /// Heavy-ball momentum for all optimizers.
    #[arg(long)]
    momentum: Option<f64>,
    /// Exploration noise as a fraction of the action range.
    #[arg(long = "noise-scale")]
    noise_scale: Option<f64>,
    /// Smallest priority a stored transition can hold.
    #[arg(long = "priority-floor")]
    priority_floor: Option<f64>,
    /// Width of the critic's shared trunk layer.
    #[arg(long = "trunk-width")]
    trunk_width: Option<usize>,
    /// Hidden width of each critic head.
    #[arg(long = "head-width")]
    head_width: Option<usize>,
    /// Comma-separated actor hidden-layer widths, e.g. 32,32.
    #[arg(long = "actor-hidden")]
    actor_hidden: Option<String>,
    /// Output CSV path.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version land here too; they are not failures.
            let is_error = e.use_stderr();
            let _ = e.print();
            return if is_error { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Summarize { input } => cmd_summarize(&input),
    };
    match result {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn cmd_run(cli_args: RunArgs) -> Result<ExitCode, String> {
    let args = match &cli_args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
            overlay(args_from_config(&text)?, cli_args)
        }
        None => cli_args,
    };
    let (spec, out_path) = build_spec(&args)?;
    let outcome = run_experiment(&spec).map_err(|e| e.to_string())?;
    write_csv(&out_path, &outcome.records).map_err(|e| e.to_string())?;
    println!("wrote {} records to {}", outcome.records.len(), out_path.display());
    if outcome.failures.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        for (strategy, seed, err) in &outcome.failures {
            eprintln!("run failed: strategy={strategy} seed={seed}: {err}");
        }
        Ok(ExitCode::from(2))
    }
}

fn cmd_summarize(input: &PathBuf) -> Result<ExitCode, String> {
    let records = meet_core::harness::read_csv(input).map_err(|e| e.to_string())?;
    let summaries = summarize(&records).map_err(|e| e.to_string())?;
    print!("{}", summary_table(&summaries));
    Ok(ExitCode::SUCCESS)
}

/// Parses a config file into the same shape as the command line: one
/// `key = value` pair per line, `#` starts a comment, keys spelled exactly
/// like the long flags.
fn args_from_config(text: &str) -> Result<RunArgs, String> {
    let mut args = RunArgs::default();
    for (i, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {}: expected `key = value`", i + 1))?;
        let (key, value) = (key.trim(), value.trim().to_string());
        let bad = |e: String| format!("config line {}: {key}: {e}", i + 1);
        let parse_u64 = |v: &str| v.parse::<u64>().map_err(|e| e.to_string());
        let parse_usize = |v: &str| v.parse::<usize>().map_err(|e| e.to_string());
        let parse_f64 = |v: &str| v.parse::<f64>().map_err(|e| e.to_string());
        match key {
            "env" => args.env = Some(value),
            "strategy" => args.strategy = Some(value),
            "seeds" => args.seeds = Some(value),
            "steps" => args.steps = Some(parse_u64(&value).map_err(bad)?),
            "heads" => args.heads = Some(parse_usize(&value).map_err(bad)?),
            "mask-prob" => args.mask_prob = Some(parse_f64(&value).map_err(bad)?),
            "gamma" => args.gamma = Some(parse_f64(&value).map_err(bad)?),
            "replay-period" => args.replay_period = Some(parse_u64(&value).map_err(bad)?),
            "batch" => args.batch = Some(parse_usize(&value).map_err(bad)?),
            "capacity" => args.capacity = Some(parse_usize(&value).map_err(bad)?),
            "warmup" => args.warmup = Some(parse_usize(&value).map_err(bad)?),
            "tau" => args.tau = Some(parse_f64(&value).map_err(bad)?),
            "eval-interval" => args.eval_interval = Some(parse_u64(&value).map_err(bad)?),
            "eval-episodes" => args.eval_episodes = Some(parse_usize(&value).map_err(bad)?),
            "actor-lr" => args.actor_lr = Some(parse_f64(&value).map_err(bad)?),
            "critic-lr" => args.critic_lr = Some(parse_f64(&value).map_err(bad)?),
            "momentum" => args.momentum = Some(parse_f64(&value).map_err(bad)?),
            "noise-scale" => args.noise_scale = Some(parse_f64(&value).map_err(bad)?),
            "priority-floor" => args.priority_floor = Some(parse_f64(&value).map_err(bad)?),
            "trunk-width" => args.trunk_width = Some(parse_usize(&value).map_err(bad)?),
            "head-width" => args.head_width = Some(parse_usize(&value).map_err(bad)?),
            "actor-hidden" => args.actor_hidden = Some(value),
            "out" => args.out = Some(PathBuf::from(value)),
            other => return Err(format!("config line {}: unknown key '{other}'", i + 1)),
        }
    }
    Ok(args)
}

/// Command-line values win over config-file values field by field.
fn overlay(file: RunArgs, cli: RunArgs) -> RunArgs {
    RunArgs {
        config: cli.config,
        env: cli.env.or(file.env),
        strategy: cli.strategy.or(file.strategy),
        seeds: cli.seeds.or(file.seeds),
        steps: cli.steps.or(file.steps),
        heads: cli.heads.or(file.heads),
        mask_prob: cli.mask_prob.or(file.mask_prob),
        gamma: cli.gamma.or(file.gamma),
        replay_period: cli.replay_period.or(file.replay_period),
        batch: cli.batch.or(file.batch),
        capacity: cli.capacity.or(file.capacity),
        warmup: cli.warmup.or(file.warmup),
        tau: cli.tau.or(file.tau),
        eval_interval: cli.eval_interval.or(file.eval_interval),
        eval_episodes: cli.eval_episodes.or(file.eval_episodes),
        actor_lr: cli.actor_lr.or(file.actor_lr),
        critic_lr: cli.critic_lr.or(file.critic_lr),
        momentum: cli.momentum.or(file.momentum),
        noise_scale: cli.noise_scale.or(file.noise_scale),
        priority_floor: cli.priority_floor.or(file.priority_floor),
        trunk_width: cli.trunk_width.or(file.trunk_width),
        head_width: cli.head_width.or(file.head_width),
        actor_hidden: cli.actor_hidden.or(file.actor_hidden),
        out: cli.out.or(file.out),
    }
}

fn build_spec(args: &RunArgs) -> Result<(ExperimentSpec, PathBuf), String> {
    let env: EnvKind = match &args.env {
        Some(name) => name.parse().map_err(|e: meet_core::Error| e.to_string())?,
        None => EnvKind::Pendulum,
    };
    let mut spec = ExperimentSpec::new(env);
    if let Some(list) = &args.strategy {
        spec.strategies = list
            .split(',')
            .map(|s| s.trim().parse::<Strategy>().map_err(|e| e.to_string()))
            .collect::<Result<_, _>>()?;
    }
    if let Some(list) = &args.seeds {
        spec.seeds = list
            .split(',')
            .map(|s| s.trim().parse::<u64>().map_err(|e| format!("bad seed '{s}': {e}")))
            .collect::<Result<_, _>>()?;
    }
    let a: &mut AgentConfig = &mut spec.agent;
    if let Some(v) = args.steps {
        a.total_steps = v;
    }
    if let Some(v) = args.heads {
        a.heads = v;
    }
    if let Some(v) = args.mask_prob {
        a.mask_prob = v;
    }
    if let Some(v) = args.gamma {
        a.gamma = v;
    }
    if let Some(v) = args.replay_period {
        a.replay_period = v;
    }
    if let Some(v) = args.batch {
        a.batch_size = v;
    }
    if let Some(v) = args.capacity {
        a.capacity = v;
    }
    if let Some(v) = args.warmup {
        a.warmup = v;
    }
    if let Some(v) = args.tau {
        a.tau = v;
    }
    if let Some(v) = args.actor_lr {
        a.actor_lr = v;
    }
    if let Some(v) = args.critic_lr {
        a.critic_lr = v;
    }
    if let Some(v) = args.momentum {
        a.momentum = v;
    }
    if let Some(v) = args.noise_scale {
        a.noise_scale = v;
    }
    if let Some(v) = args.priority_floor {
        a.priority_floor = v;
    }
    if let Some(v) = args.trunk_width {
        a.trunk_width = v;
    }
    if let Some(v) = args.head_width {
        a.head_width = v;
    }
    if let Some(list) = &args.actor_hidden {
        let widths: Result<Vec<usize>, _> = list
            .split(',')
            .map(|s| s.trim().parse::<usize>())
            .collect();
        a.actor_hidden = widths.map_err(|_| {
            format!("actor-hidden: expected comma-separated widths, got '{list}'")
        })?;
    }
    if let Some(v) = args.eval_interval {
        spec.eval_interval = v;
    }
    if let Some(v) = args.eval_episodes {
        spec.eval_episodes = v;
    }
    spec.agent.validate().map_err(|e| e.to_string())?;
    spec.validate().map_err(|e| e.to_string())?;
    let out = args.out.clone().ok_or("--out is required (flag or config file)")?;
    Ok((spec, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_file_covers_every_flag() {
        let text = "\
env = pointmass
strategy = meet,uniform
seeds = 5,6
steps = 123          # trailing comment
heads = 4
mask-prob = 0.7
gamma = 0.95
replay-period = 2
batch = 32
capacity = 1000
warmup = 64
tau = 0.01
eval-interval = 50
eval-episodes = 2
actor-lr = 0.001
critic-lr = 0.002
momentum = 0.8
noise-scale = 0.2
priority-floor = 0.0001
trunk-width = 48
head-width = 8
actor-hidden = 24, 12
out = /tmp/sweep.csv
";
        let args = args_from_config(text).unwrap();
        let (spec, out) = build_spec(&args).unwrap();
        assert_eq!(spec.env, EnvKind::PointMass);
        assert_eq!(spec.strategies, vec![Strategy::Meet, Strategy::Uniform]);
        assert_eq!(spec.seeds, vec![5, 6]);
        assert_eq!(spec.agent.total_steps, 123);
        assert_eq!(spec.agent.heads, 4);
        assert_eq!(spec.agent.mask_prob, 0.7);
        assert_eq!(spec.agent.gamma, 0.95);
        assert_eq!(spec.agent.replay_period, 2);
        assert_eq!(spec.agent.batch_size, 32);
        assert_eq!(spec.agent.capacity, 1000);
        assert_eq!(spec.agent.warmup, 64);
        assert_eq!(spec.agent.tau, 0.01);
        assert_eq!(spec.eval_interval, 50);
        assert_eq!(spec.eval_episodes, 2);
        assert_eq!(spec.agent.actor_lr, 0.001);
        assert_eq!(spec.agent.critic_lr, 0.002);
        assert_eq!(spec.agent.momentum, 0.8);
        assert_eq!(spec.agent.noise_scale, 0.2);
        assert_eq!(spec.agent.priority_floor, 0.0001);
        assert_eq!(spec.agent.trunk_width, 48);
        assert_eq!(spec.agent.head_width, 8);
        assert_eq!(spec.agent.actor_hidden, vec![24, 12]);
        assert_eq!(out, PathBuf::from("/tmp/sweep.csv"));
    }

    #[test]
    fn command_line_overrides_config_file() {
        let file = args_from_config("steps = 100\nheads = 4\nout = a.csv\n").unwrap();
        let cli = RunArgs { steps: Some(999), ..RunArgs::default() };
        let merged = overlay(file, cli);
        assert_eq!(merged.steps, Some(999)); // CLI wins
        assert_eq!(merged.heads, Some(4)); // file fills the gap
        assert_eq!(merged.out, Some(PathBuf::from("a.csv")));
    }

    #[test]
    fn config_rejects_unknown_keys_and_bad_values() {
        assert!(args_from_config("bogus = 1\n").unwrap_err().contains("unknown key"));
        assert!(args_from_config("steps\n").unwrap_err().contains("key = value"));
        assert!(args_from_config("steps = fast\n").is_err());
        // Comments and blank lines are fine.
        assert!(args_from_config("\n# comment only\n").is_ok());
        // actor-hidden parses lazily, so the error surfaces in build_spec.
        let args = args_from_config("actor-hidden = 32,oops\nout = x.csv\n").unwrap();
        assert!(build_spec(&args).unwrap_err().contains("actor-hidden"));
    }

    #[test]
    fn defaults_fill_everything_but_out() {
        let args = RunArgs::default();
        assert!(build_spec(&args).unwrap_err().contains("--out"));
        let args = RunArgs { out: Some("x.csv".into()), ..RunArgs::default() };
        let (spec, _) = build_spec(&args).unwrap();
        assert_eq!(spec.env, EnvKind::Pendulum);
        assert_eq!(spec.strategies.len(), 3);
        assert_eq!(spec.seeds, vec![0, 1, 2, 3, 4]);
        assert_eq!(spec.agent.total_steps, 30_000);
        assert_eq!(spec.agent.heads, 10);
        assert_eq!(spec.eval_interval, 1000);
        assert_eq!(spec.eval_episodes, 10);
    }

    #[test]
    fn bad_strategy_or_seed_lists_are_rejected() {
        let args = RunArgs {
            strategy: Some("meet,krill".into()),
            out: Some("x.csv".into()),
            ..RunArgs::default()
        };
        assert!(build_spec(&args).is_err());
        let args = RunArgs {
            seeds: Some("1,two".into()),
            out: Some("x.csv".into()),
            ..RunArgs::default()
        };
        assert!(build_spec(&args).unwrap_err().contains("bad seed"));
    }
}
