use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use td3lab::agents::{Agent, Variant};
use td3lab::diagnostics::{estimate_value_bias, horizon_for_tolerance, tau_sweep, write_bias_csv, BiasOptions};
use td3lab::envs::make_env;
use td3lab::fsutil::write_atomic;
use td3lab::harness::{
    aggregate_dir, render_svg, run_ablation_matrix, run_all, summary_csv, ExperimentConfig, MAX_AUTO_HORIZON,
};
use td3lab::rng::{stream, streams};
use td3lab::tabular::{run_tabular, value_iteration, ClippedUpdate, FiniteMdp, TabularConfig, TabularVariant};
use td3lab::Result;

#[derive(Parser)]
#[command(name = "td3lab", version, about = "TD3 and ablation experiments, tabular clipped double Q, bias diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of a config and write learning curves.
    Run(RunArgs),
    /// Train every ablation variant over every seed.
    Ablate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Tabular Q-learning variants on a finite MDP.
    Tabular(TabularArgs),
    /// Overestimation and target-rate diagnostics.
    #[command(subcommand)]
    Diagnose(Diagnose),
    /// Summarize every seed<N>.csv below a directory.
    Aggregate {
        dir: PathBuf,
        /// Also write an SVG of the learning curves.
        #[arg(long)]
        plot: Option<PathBuf>,
        /// Moving-average window used only for the plot.
        #[arg(long, default_value_t = 1)]
        smooth: usize,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment config; the desk profile when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run only this seed.
    #[arg(long)]
    seed: Option<u64>,
    /// pendulum, reacher2d or noisy1d.
    #[arg(long)]
    env: Option<String>,
    /// Agent variant id, e.g. td3, ahe, ddpg, td3-cdq, dq-ac.
    #[arg(long)]
    variant: Option<Variant>,
    /// Total environment steps per seed.
    #[arg(long)]
    steps: Option<u64>,
    /// Output root directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum UpdateMode {
    Both,
    RandomSingle,
}

#[derive(Args)]
struct TabularArgs {
    /// MDP text file, or an integer seed for a random 6-state, 3-action MDP.
    #[arg(long)]
    mdp: String,
    /// q, double-q or clipped-dq.
    #[arg(long, default_value = "clipped-dq")]
    variant: TabularVariant,
    #[arg(long, default_value_t = 100_000)]
    steps: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Exploration rate of the epsilon-greedy behaviour policy.
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    /// Move both tables toward the clipped target, or one table picked at random.
    #[arg(long, value_enum, default_value = "both")]
    update: UpdateMode,
    /// Override the reward noise std of every cell.
    #[arg(long)]
    reward_noise: Option<f64>,
    /// Write the bias trace as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Diagnose {
    /// Value estimate against Monte-Carlo returns for a saved agent.
    Bias {
        /// Agent file written by `run` (seed<N>.agent).
        #[arg(long)]
        snapshot: PathBuf,
        #[arg(long)]
        env: String,
        /// Number of start states.
        #[arg(long, default_value_t = 1000)]
        states: usize,
        /// Monte-Carlo episodes in total, spread over the start states.
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        /// Rollout length; chosen from --tolerance when omitted.
        #[arg(long)]
        horizon: Option<usize>,
        /// Largest acceptable truncation error of the true value.
        #[arg(long, default_value_t = 1.0)]
        tolerance: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Value-estimate curves for several target update rates.
    TauSweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated target update rates.
        #[arg(long, value_delimiter = ',', default_value = "1,0.1,0.01")]
        taus: Vec<f64>,
        /// Train the critics only, against the initial policy.
        #[arg(long)]
        fixed_policy: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

/// `Ok(false)` when some requested run failed.
fn dispatch(command: Command) -> Result<bool> {
    match command {
        Command::Run(args) => run(args),
        Command::Ablate { config } => ablate(&config),
        Command::Tabular(args) => tabular(args),
        Command::Diagnose(Diagnose::Bias {
            snapshot,
            env,
            states,
            episodes,
            horizon,
            tolerance,
            seed,
            out,
        }) => bias(&snapshot, &env, states, episodes, horizon, tolerance, seed, out),
        Command::Diagnose(Diagnose::TauSweep {
            config,
            taus,
            fixed_policy,
            out,
        }) => sweep(&config, &taus, fixed_policy, out),
        Command::Aggregate { dir, plot, smooth } => aggregate(&dir, plot, smooth),
    }
}

fn run(args: RunArgs) -> Result<bool> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::from_toml_str("")?,
    };
    if let Some(s) = args.seed {
        cfg.seeds = vec![s];
    }
    if let Some(e) = args.env {
        cfg.env = e;
    }
    if let Some(v) = args.variant {
        cfg.variant.name = v;
    }
    if let Some(n) = args.steps {
        cfg.total_steps = n;
        cfg.eval_every = cfg.eval_every.min(n.max(1));
    }
    if let Some(o) = args.out {
        cfg.out_dir = o;
    }
    cfg.validate()?;
    let mut ok = true;
    for (seed, result) in run_all(&cfg) {
        match result {
            Ok(run) if !run.failed() => {
                println!("{} {} seed {seed}: final return {:.3}", cfg.env, cfg.variant.name, run.final_return().unwrap_or(f64::NAN));
            }
            Ok(run) => {
                ok = false;
                println!("{} {} seed {seed}: FAILED ({})", cfg.env, cfg.variant.name, run.failure.unwrap_or_default());
            }
            Err(e) => {
                ok = false;
                println!("{} {} seed {seed}: ERROR {e}", cfg.env, cfg.variant.name);
            }
        }
    }
    Ok(ok)
}

fn ablate(config: &Path) -> Result<bool> {
    let cfg = ExperimentConfig::load(config)?;
    let rows = run_ablation_matrix(&cfg)?;
    println!("{:<10} {:>12} {:>10} {:>7}", "variant", "mean_last10", "std", "failed");
    for r in &rows {
        println!("{:<10} {:>12.3} {:>10.3} {:>4}/{}", r.variant.label(), r.mean, r.std, r.failed, r.runs);
    }
    Ok(rows.iter().all(|r| r.failed == 0))
}

fn tabular(args: TabularArgs) -> Result<bool> {
    let mut mdp = match args.mdp.parse::<u64>() {
        Ok(seed) => FiniteMdp::from_seed(seed)?,
        Err(_) => FiniteMdp::load(Path::new(&args.mdp))?,
    };
    if let Some(std) = args.reward_noise {
        mdp = mdp.with_reward_noise(std);
    }
    let q_star = value_iteration(&mdp, 1e-12)?;
    let config = TabularConfig {
        variant: args.variant,
        steps: args.steps,
        epsilon: args.epsilon,
        clipped_update: match args.update {
            UpdateMode::Both => ClippedUpdate::Both,
            UpdateMode::RandomSingle => ClippedUpdate::RandomSingle,
        },
        ..TabularConfig::default()
    };
    let run = run_tabular(&mdp, &config, &q_star, args.seed)?;
    let err = run.tables.a.sup_distance(&q_star) / q_star.sup_norm().max(f64::MIN_POSITIVE);
    println!("variant {}  steps {}  seed {}", args.variant, args.steps, args.seed);
    println!("final bias           {:.6}", run.final_bias());
    println!("relative sup error   {err:.6}");
    if let Some(c) = run.contraction_error {
        println!("contraction error    {c:.3e}");
    }
    if let Some(out) = args.out {
        let mut csv = String::from("# td3lab tabular v1\nstep,bias\n");
        for (step, b) in &run.bias_trace {
            csv += &format!("{step},{b:?}\n");
        }
        write_atomic(&out, csv.as_bytes())?;
    }
    Ok(true)
}

#[allow(clippy::too_many_arguments)]
fn bias(
    snapshot: &Path,
    env_id: &str,
    n_states: usize,
    episodes: usize,
    horizon: Option<usize>,
    tolerance: f64,
    seed: u64,
    out: Option<PathBuf>,
) -> Result<bool> {
    let agent = Agent::load(snapshot)?;
    let env = make_env(env_id)?;
    let env = env.as_ref();
    // Without the training buffer, visit states by running the saved
    // policy with its exploration noise from fresh starts.
    let mut rng = stream(seed, streams::DIAGNOSTICS);
    let mut states = Vec::with_capacity(n_states);
    let mut state = env.reset(&mut rng);
    while states.len() < n_states {
        let obs = env.observe(&state);
        let action = agent.select_action(&obs, true, &mut rng)?;
        states.push(obs);
        let out = env.step(&state, &action)?;
        state = if out.end.ends_episode() { env.reset(&mut rng) } else { out.state };
    }
    let gamma = agent.config().gamma;
    let options = BiasOptions {
        gamma,
        episodes,
        horizon: horizon
            .unwrap_or_else(|| horizon_for_tolerance(gamma, env.spec().reward_bound, tolerance, MAX_AUTO_HORIZON)),
        truncation_tolerance: tolerance,
    };
    // Snapshots know their critic-update count, not the environment step.
    let p = estimate_value_bias(&agent, env, &states, &options, agent.critic_updates(), seed)?;
    println!(
        "estimate {:.4}  true {:.4}  gap {:.4}  (states {}, episodes {}, horizon {}, truncation bound {:.3e}{})",
        p.estimate_mean,
        p.true_mean,
        p.gap,
        p.n_states,
        p.n_episodes,
        options.horizon,
        p.truncation_bound,
        if p.truncated { ", TRUNCATED" } else { "" }
    );
    if let Some(out) = out {
        let mut bytes = Vec::new();
        write_bias_csv(&mut bytes, &[p])?;
        write_atomic(&out, &bytes)?;
    }
    Ok(true)
}

fn sweep(config: &Path, taus: &[f64], fixed_policy: bool, out: Option<PathBuf>) -> Result<bool> {
    let cfg = ExperimentConfig::load(config)?;
    let curves = tau_sweep(&cfg, taus, fixed_policy)?;
    let mut csv = String::from("# td3lab tau-sweep v1\ntau,seed,step,estimate_mean\n");
    for c in &curves {
        for (step, q) in &c.points {
            csv += &format!("{:?},{},{step},{q:?}\n", c.tau, c.seed);
        }
    }
    for &tau in taus {
        let vars: Vec<f64> = curves.iter().filter(|c| c.tau == tau).map(|c| c.late_variance()).collect();
        let finals: Vec<f64> = curves
            .iter()
            .filter(|c| c.tau == tau)
            .filter_map(|c| c.points.last().map(|p| p.1))
            .collect();
        println!(
            "tau {tau:<6} final estimate {:>10.3}  late variance {:>10.3}",
            finals.iter().sum::<f64>() / finals.len().max(1) as f64,
            vars.iter().sum::<f64>() / vars.len().max(1) as f64
        );
    }
    let path = out.unwrap_or_else(|| cfg.out_dir.join(&cfg.env).join("tau_sweep.csv"));
    write_atomic(&path, csv.as_bytes())?;
    Ok(true)
}

fn aggregate(dir: &Path, plot: Option<PathBuf>, window: usize) -> Result<bool> {
    let groups = aggregate_dir(dir)?;
    for g in &groups {
        match &g.summary {
            Some(s) => println!(
                "{:<28} runs {:>2} failed {:>2}  max avg return {:>10.3} ± {:<8.3} final {:>10.3} ± {:.3}",
                g.group,
                g.runs,
                g.failed,
                s.max_average_return,
                s.std_at_max,
                s.final_mean(),
                s.final_std()
            ),
            None => println!("{:<28} runs {:>2} failed {:>2}  (no successful runs)", g.group, g.runs, g.failed),
        }
    }
    write_atomic(&dir.join("summary.csv"), summary_csv(&groups).as_bytes())?;
    if let Some(path) = plot {
        let series: Vec<(String, _)> = groups
            .iter()
            .filter_map(|g| g.summary.clone().map(|s| (g.group.clone(), s)))
            .collect();
        write_atomic(&path, render_svg(&series, window, &dir.display().to_string()).as_bytes())?;
    }
    Ok(groups.iter().all(|g| g.failed == 0))
}
