use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use super::{run_pool, ExperimentConfig, VariantSpec};
use crate::agents::{Agent, Variant};
use crate::diagnostics::{estimate_value_bias, value_estimate, write_bias_csv, BiasOptions, BiasPoint};
use crate::envs::{make_env, mean_std, rollout_eval, Env};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::replay::{ReplayBuffer, Transition};
use crate::rng::{mix64, stream, streams};

pub const CURVE_CSV_HEADER: &str = "config_hash,seed,step,return_mean,return_std,estimate_mean,true_mean,gap,status";

/// One evaluation record. A failed point marks where a run diverged.
#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub step: u64,
    pub return_mean: f64,
    pub return_std: f64,
    pub estimate_mean: Option<f64>,
    pub true_mean: Option<f64>,
    pub gap: Option<f64>,
    pub failed: bool,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub config_hash: String,
    pub env: String,
    pub variant: Variant,
    pub seed: u64,
    pub points: Vec<CurvePoint>,
    pub bias: Vec<BiasPoint>,
    /// Seconds since the run started, per evaluation point.
    pub wall_clock: Vec<(u64, f64)>,
    pub failure: Option<String>,
    pub agent: Agent,
}

impl RunOutcome {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }

    pub fn final_return(&self) -> Option<f64> {
        self.points.iter().rev().find(|p| !p.failed).map(|p| p.return_mean)
    }
}

fn evaluate(
    cfg: &ExperimentConfig,
    env: &dyn Env,
    agent: &Agent,
    buffer: &ReplayBuffer,
    seed: u64,
    step: u64,
) -> Result<(CurvePoint, Option<BiasPoint>)> {
    // Same start states at every evaluation of a run.
    let mut rng = stream(seed, streams::EVAL);
    let stats = rollout_eval(env, &mut |s: &[f64]| agent.act(s), cfg.eval_episodes, &mut rng)?;
    if !stats.mean.is_finite() {
        return Err(Error::Numeric(format!("evaluation return {} at step {step}", stats.mean)));
    }
    let mut point = CurvePoint {
        step,
        return_mean: stats.mean,
        return_std: stats.std,
        estimate_mean: None,
        true_mean: None,
        gap: None,
        failed: false,
    };
    let b = &cfg.bias;
    let due = step as f64 >= b.after_fraction * cfg.total_steps as f64;
    if !(b.enabled && due && !buffer.is_empty()) {
        return Ok((point, None));
    }
    let mut rng = stream(mix64(seed ^ mix64(step)), streams::DIAGNOSTICS);
    let states = buffer.sample_states(b.n_states, &mut rng)?;
    if !b.monte_carlo {
        point.estimate_mean = Some(value_estimate(agent, &states)?);
        return Ok((point, None));
    }
    let gamma = agent.config().gamma;
    let options = BiasOptions {
        gamma,
        episodes: b.episodes,
        horizon: b.horizon_for(gamma, env.spec().reward_bound),
        truncation_tolerance: b.tolerance,
    };
    let bias = estimate_value_bias(agent, env, &states, &options, step, seed)?;
    point.estimate_mean = Some(bias.estimate_mean);
    point.true_mean = Some(bias.true_mean);
    point.gap = Some(bias.gap);
    Ok((point, Some(bias)))
}

fn failed_point(step: u64) -> CurvePoint {
    CurvePoint {
        step,
        return_mean: f64::NAN,
        return_std: f64::NAN,
        estimate_mean: None,
        true_mean: None,
        gap: None,
        failed: true,
    }
}

/// Trains one seed in memory: uniform warmup actions, then one noisy policy
/// step and one training iteration per environment step, with noise-free
/// evaluation at step 0, every `eval_every` steps and at the end. Evaluation
/// episodes do not count toward `total_steps`.
///
/// Numeric divergence ends the run with a failed point instead of an error.
pub fn train(cfg: &ExperimentConfig, seed: u64) -> Result<RunOutcome> {
    cfg.validate()?;
    let env = make_env(&cfg.env)?;
    let env = env.as_ref();
    let spec = env.spec().clone();
    let agent_cfg = cfg.agent_config(env)?;
    let mut agent = Agent::new(agent_cfg.clone(), spec.state_dim, seed)?;
    let mut buffer = ReplayBuffer::new(cfg.replay_capacity(), spec.state_dim, spec.action_dim)?
        .with_action_bounds(spec.action_low.clone(), spec.action_high.clone())?;
    let mut env_rng = stream(seed, streams::ENV);
    let mut explore_rng = stream(seed, streams::EXPLORE);
    let mut train_rng = stream(seed, streams::TRAIN);
    let started = Instant::now();

    let mut points = Vec::new();
    let mut bias = Vec::new();
    let mut wall_clock = Vec::new();
    let mut failure = None;

    let mut record = |r: Result<(CurvePoint, Option<BiasPoint>)>, step: u64, failure: &mut Option<String>| -> Result<()> {
        match r {
            Ok((p, b)) => {
                points.push(p);
                bias.extend(b);
            }
            Err(Error::Numeric(msg)) => {
                points.push(failed_point(step));
                *failure = Some(msg);
            }
            Err(e) => return Err(e),
        }
        wall_clock.push((step, started.elapsed().as_secs_f64()));
        Ok(())
    };

    record(evaluate(cfg, env, &agent, &buffer, seed, 0), 0, &mut failure)?;
    let mut state = env.reset(&mut env_rng);
    for t in 1..=cfg.total_steps {
        if failure.is_some() {
            break;
        }
        let obs = env.observe(&state);
        let action = if t as usize <= agent_cfg.start_steps {
            agent.random_action(&mut explore_rng)
        } else {
            agent.select_action(&obs, true, &mut explore_rng)?
        };
        let out = env.step(&state, &action)?;
        buffer.push(Transition {
            state: obs,
            action: spec.clip_action(&action),
            reward: out.reward,
            next_state: env.observe(&out.state),
            end: out.end,
        })?;
        state = if out.end.ends_episode() {
            env.reset(&mut env_rng)
        } else {
            out.state
        };
        if t as usize > agent_cfg.start_steps && buffer.len() >= agent_cfg.batch_size {
            match agent.train_step(&buffer, &mut train_rng) {
                Ok(_) => {}
                Err(e @ Error::Numeric(_)) => {
                    record(Err(e), t, &mut failure)?;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if t % cfg.eval_every == 0 || t == cfg.total_steps {
            record(evaluate(cfg, env, &agent, &buffer, seed, t), t, &mut failure)?;
        }
    }

    Ok(RunOutcome {
        config_hash: cfg.hash(),
        env: cfg.env.clone(),
        variant: cfg.variant.name,
        seed,
        points,
        bias,
        wall_clock,
        failure,
        agent,
    })
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:?}")).unwrap_or_default()
}

/// The learning-curve CSV of one run. Contains no timing, so it is
/// byte-identical across repeats of the same `(config, seed)`.
pub fn curve_csv(run: &RunOutcome) -> String {
    let mut s = format!("# td3lab curve v1 env={} variant={}\n{CURVE_CSV_HEADER}\n", run.env, run.variant);
    for p in &run.points {
        if p.failed {
            writeln!(s, "{},{},{},,,,,,failed", run.config_hash, run.seed, p.step).unwrap();
        } else {
            writeln!(
                s,
                "{},{},{},{:?},{:?},{},{},{},ok",
                run.config_hash,
                run.seed,
                p.step,
                p.return_mean,
                p.return_std,
                opt(p.estimate_mean),
                opt(p.true_mean),
                opt(p.gap)
            )
            .unwrap();
        }
    }
    s
}

fn timing_csv(run: &RunOutcome) -> String {
    let mut s = String::from("# td3lab timing v1\nstep,wall_seconds\n");
    for (step, secs) in &run.wall_clock {
        writeln!(s, "{step},{secs:.3}").unwrap();
    }
    s
}

/// `out_dir/<env>/<variant>`.
pub fn run_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out_dir.join(&cfg.env).join(cfg.variant.name.id())
}

/// Trains one seed and writes `seed<N>.csv`, `seed<N>.timing.csv`,
/// `seed<N>.bias.csv` (when measured) and the final `seed<N>.agent`
/// snapshot under [`run_dir`], each atomically.
pub fn run_experiment(cfg: &ExperimentConfig, seed: u64) -> Result<RunOutcome> {
    let run = train(cfg, seed)?;
    let dir = run_dir(cfg);
    write_atomic(&dir.join(format!("seed{seed}.csv")), curve_csv(&run).as_bytes())?;
    write_atomic(&dir.join(format!("seed{seed}.timing.csv")), timing_csv(&run).as_bytes())?;
    if !run.bias.is_empty() {
        let mut bytes = Vec::new();
        write_bias_csv(&mut bytes, &run.bias)?;
        write_atomic(&dir.join(format!("seed{seed}.bias.csv")), &bytes)?;
    }
    run.agent.save(&dir.join(format!("seed{seed}.agent")))?;
    Ok(run)
}

/// Every seed of `cfg` on the worker pool, in seed-list order.
pub fn run_all(cfg: &ExperimentConfig) -> Vec<(u64, Result<RunOutcome>)> {
    let results = run_pool(&cfg.seeds, cfg.worker_count(), |&seed| run_experiment(cfg, seed));
    cfg.seeds.iter().copied().zip(results).collect()
}

/// Mean return over the last 10 evaluations; `None` for a failed run.
pub fn ablation_metric(points: &[CurvePoint]) -> Option<f64> {
    if points.is_empty() || points.iter().any(|p| p.failed) {
        return None;
    }
    let tail = &points[points.len().saturating_sub(10)..];
    Some(tail.iter().map(|p| p.return_mean).sum::<f64>() / tail.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub runs: usize,
    pub failed: usize,
    /// Across-seed mean and sample std of [`ablation_metric`].
    pub mean: f64,
    pub std: f64,
    pub per_seed: Vec<(u64, f64)>,
}

/// Every row of the ablation table over every seed. Failed runs are counted
/// and left out of the statistics; the matrix always completes. Writes the
/// per-run files and `out_dir/<env>/ablation.csv`.
pub fn run_ablation_matrix(cfg: &ExperimentConfig) -> Result<Vec<AblationRow>> {
    cfg.validate()?;
    let jobs: Vec<(Variant, u64, ExperimentConfig)> = Variant::ALL
        .iter()
        .flat_map(|&v| {
            let c = ExperimentConfig {
                variant: VariantSpec::named(v),
                ..cfg.clone()
            };
            cfg.seeds.iter().map(move |&s| (v, s, c.clone()))
        })
        .collect();
    let results = run_pool(&jobs, cfg.worker_count(), |(_, seed, c)| run_experiment(c, *seed));
    let mut rows = Vec::new();
    let mut results = results.into_iter();
    for v in Variant::ALL {
        let mut per_seed = Vec::new();
        let mut failed = 0;
        for &seed in &cfg.seeds {
            let run = results.next().expect("one result per job")?;
            match ablation_metric(&run.points) {
                Some(m) => per_seed.push((seed, m)),
                None => failed += 1,
            }
        }
        let (mean, std) = mean_std(&per_seed.iter().map(|p| p.1).collect::<Vec<_>>());
        rows.push(AblationRow {
            variant: v,
            runs: cfg.seeds.len(),
            failed,
            mean,
            std,
            per_seed,
        });
    }
    let mut csv = format!(
        "# td3lab ablation v1 env={} config_hash={}\nvariant,label,runs,failed,mean_last10,std_last10\n",
        cfg.env,
        cfg.hash()
    );
    for r in &rows {
        writeln!(
            csv,
            "{},{},{},{},{:?},{:?}",
            r.variant,
            r.variant.label(),
            r.runs,
            r.failed,
            r.mean,
            r.std
        )
        .unwrap();
    }
    write_atomic(&cfg.out_dir.join(&cfg.env).join("ablation.csv"), csv.as_bytes())?;
    Ok(rows)
}
