//! Command-line subcommands. Each has a plain function form used by the
//! binary, the examples and the tests.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::agent::{build_agent, offline_pretrain, online_finetune, Agent, RunLog};
use crate::config::{parse_config, RunConfig};
use crate::env::{generate_play_dataset, make_env, mix_seed, tabular_spec, EnvKind};
use crate::error::{Error, Result};
use crate::eval::{
    emit_csv, emit_plot_svg, evaluate_success, load_csv, log_series, state_coverage, temporal_coherency, EvalOutcome,
};
use crate::oracle::{
    chunk_value_iteration, decode_chunk, nstep_bias_probe, policy_eval_chunked, BiasTable, ChunkedQTable,
    TabularPolicy,
};
use crate::replay::{dataset_stats, load_dataset, save_dataset, DatasetStats, EpisodeDataset, ReplayBuffer};

#[derive(Debug, Parser)]
#[command(name = "qchunk", version, about = "Action-chunked offline-to-online RL on desk-scale tasks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a play-style offline dataset (QCD1).
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// `section.key=value` overrides applied after the config file.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Offline pretraining followed by online fine-tuning.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset to pretrain on; generated from the config when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        run_dir: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Evaluate a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Exact n-step bias table and chunked fixed points on the chain.
    Oracle {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        n: usize,
        /// Output directory; defaults to the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Plot a training log as SVG.
    Plot {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Loads or generates the offline dataset for a run.
pub fn dataset_for(cfg: &RunConfig, data: Option<&Path>) -> Result<EpisodeDataset> {
    match data.map(Path::to_path_buf).or_else(|| cfg.io.dataset_path.clone()) {
        Some(p) => {
            let ds = load_dataset(&p)?;
            if ds.obs_dim != cfg.env.obs_dim || ds.act_dim != cfg.env.act_dim {
                return Err(Error::Config(format!(
                    "dataset {} has obs/act dims {}/{}, environment expects {}/{}",
                    p.display(),
                    ds.obs_dim,
                    ds.act_dim,
                    cfg.env.obs_dim,
                    cfg.env.act_dim
                )));
            }
            Ok(ds)
        }
        None => generate_play_dataset(&cfg.env, &cfg.play, cfg.num_transitions, mix_seed(cfg.io.seed, 0xDA7A)),
    }
}

pub fn gen_data(cfg: &RunConfig, out: &Path) -> Result<DatasetStats> {
    let ds = dataset_for(cfg, None)?;
    save_dataset(&ds, out)?;
    Ok(dataset_stats(&ds))
}

/// End-of-run numbers written to `summary.txt`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub final_success: f64,
    /// Temporal coherency over all online exploration.
    pub coherency: f64,
    /// Grid cells visited during early online exploration.
    pub early_coverage: usize,
    pub log: RunLog,
}

impl TrainSummary {
    pub fn render(&self) -> String {
        format!(
            "final_success = {}\ncoherency = {}\nearly_coverage = {}\n",
            self.final_success, self.coherency, self.early_coverage
        )
    }
}

/// Full protocol. Writes `config.resolved`, `log.csv`, `offline.qckp`,
/// `final.qckp` and `summary.txt` into `run_dir`.
pub fn train(cfg: &RunConfig, data: Option<&Path>, run_dir: &Path) -> Result<TrainSummary> {
    cfg.write_resolved(run_dir)?;
    let dataset = dataset_for(cfg, data)?;
    let mut buffer = ReplayBuffer::new(dataset);
    let mut agent = build_agent(&cfg.agent_config(), cfg.env.obs_dim, cfg.env.act_dim)?;
    let mut eval = cfg.eval.clone();
    eval.seed = mix_seed(cfg.io.seed, eval.seed);
    let mut env = cfg.env.clone();
    env.seed = mix_seed(cfg.io.seed, env.seed);

    let mut log = offline_pretrain(&mut agent, &buffer, cfg.agent.offline_steps, &env, &eval)?;
    agent.save(&run_dir.join("offline.qckp"))?;
    let online = online_finetune(
        &mut agent,
        &env,
        &mut buffer,
        cfg.agent.online_steps,
        &eval,
        cfg.agent.offline_steps as u64,
    )?;
    log.extend(online.log)?;
    agent.save(&run_dir.join("final.qckp"))?;
    emit_csv(&log, &run_dir.join("log.csv"))?;
    let summary = TrainSummary {
        final_success: log.last().map_or(f64::NAN, |r| r.success_rate),
        coherency: temporal_coherency(&online.trace).unwrap_or(f64::NAN),
        early_coverage: state_coverage(&online.early, cfg.grid)?,
        log,
    };
    let p = run_dir.join("summary.txt");
    fs::write(&p, summary.render()).map_err(|e| Error::io(&p, e))?;
    Ok(summary)
}

/// Builds the configured agent and loads `checkpoint` into it.
pub fn load_agent(cfg: &RunConfig, checkpoint: &Path) -> Result<Agent> {
    let mut agent = build_agent(&cfg.agent_config(), cfg.env.obs_dim, cfg.env.act_dim)?;
    agent.load(checkpoint)?;
    Ok(agent)
}

pub fn eval_checkpoint(cfg: &RunConfig, checkpoint: &Path) -> Result<EvalOutcome> {
    let agent = load_agent(cfg, checkpoint)?;
    let mut env = cfg.env.clone();
    env.seed = mix_seed(cfg.io.seed, env.seed);
    evaluate_success(&agent, &env, cfg.eval.episodes, mix_seed(cfg.io.seed, cfg.eval.seed), cfg.eval.stride)
}

/// Oracle tables for the configured chain.
#[derive(Debug, Clone)]
pub struct OracleReport {
    pub bias: BiasTable,
    /// Optimal values over chunks of length `n`.
    pub optimal: ChunkedQTable,
    /// Values of the open-loop target policy over chunks of length `n`.
    pub target: ChunkedQTable,
}

/// Uniform behavior versus an epsilon-greedy target built on the optimal
/// single-step values.
pub fn oracle_report(cfg: &RunConfig, n: usize) -> Result<OracleReport> {
    if cfg.env.kind != EnvKind::DiscreteChain {
        return Err(Error::Unsupported("the oracle needs env.kind = discrete-chain".into()));
    }
    let mdp = tabular_spec(&make_env(&cfg.env)?, cfg.agent.gamma)?;
    let tol = cfg.oracle.tol;
    let single = chunk_value_iteration(&mdp, 1, tol)?;
    let a = mdp.num_actions;
    let eps = cfg.oracle.target_epsilon;
    let mut probs = vec![eps / a as f64; mdp.num_states * a];
    for (s, g) in single.greedy().into_iter().enumerate() {
        probs[s * a + g] += 1.0 - eps;
    }
    let target = TabularPolicy::new(mdp.num_states, a, probs)?;
    let behavior = TabularPolicy::uniform(mdp.num_states, a);
    Ok(OracleReport {
        bias: nstep_bias_probe(&mdp, &behavior, &target, n, tol)?,
        optimal: chunk_value_iteration(&mdp, n, tol)?,
        target: policy_eval_chunked(&mdp, &TabularPolicy::open_loop_chunks(&target, n)?, n, tol)?,
    })
}

/// Writes `bias.csv` and `fixed_point.csv`.
pub fn write_oracle(report: &OracleReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut bias = String::from("state,action,bias\n");
    for s in 0..report.bias.num_states {
        for a in 0..report.bias.num_actions {
            let _ = writeln!(bias, "{s},{a},{}", report.bias.get(s, a));
        }
    }
    let mut fixed = String::from("state,chunk,q_optimal,q_target\n");
    let (opt, tgt) = (&report.optimal, &report.target);
    for s in 0..opt.num_states {
        for c in 0..opt.num_chunks() {
            let actions: Vec<String> = decode_chunk(c, opt.num_actions, opt.h).iter().map(|a| a.to_string()).collect();
            let _ = writeln!(fixed, "{s},{},{},{}", actions.join(" "), opt.get(s, c), tgt.get(s, c));
        }
    }
    for (name, text) in [("bias.csv", bias), ("fixed_point.csv", fixed)] {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

pub fn plot(log: &Path, out: &Path) -> Result<()> {
    let run = load_csv(log)?;
    emit_plot_svg("learning curves", &log_series(&run), out)
}

/// Runs a parsed command, printing results to stdout.
pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::GenData { config, out, overrides } => {
            let cfg = parse_config(config.as_deref(), &overrides)?;
            let stats = gen_data(&cfg, &out)?;
            println!(
                "wrote {} transitions in {} episodes ({:.1}% successful) to {}",
                stats.num_transitions,
                stats.num_episodes,
                100.0 * stats.success_fraction,
                out.display()
            );
        }
        Command::Train {
            config,
            data,
            run_dir,
            overrides,
        } => {
            let cfg = parse_config(config.as_deref(), &overrides)?;
            let dir = cfg.run_dir(run_dir.as_deref())?;
            let summary = train(&cfg, data.as_deref(), &dir)?;
            print!("{}", summary.render());
        }
        Command::Eval {
            checkpoint,
            config,
            overrides,
        } => {
            let cfg = parse_config(config.as_deref(), &overrides)?;
            let out = eval_checkpoint(&cfg, &checkpoint)?;
            println!("success_rate = {}\ncoherency = {}", out.success_rate, out.coherency);
        }
        Command::Oracle {
            config,
            n,
            out,
            overrides,
        } => {
            let cfg = parse_config(config.as_deref(), &overrides)?;
            let dir = match out {
                Some(d) => d,
                None => cfg.run_dir(None)?,
            };
            let report = oracle_report(&cfg, n)?;
            write_oracle(&report, &dir)?;
            println!("max_abs_bias = {}", report.bias.max_abs());
        }
        Command::Plot { log, out } => plot(&log, &out)?,
    }
    Ok(())
}

/// Parses arguments, runs, and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
