use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use flexrun_core::env::Env;
use flexrun_core::imitation::{GaitKind, ReferenceTrajectory, TerminationCause};
use flexrun_core::metrics::{self, MetricsReport};
use flexrun_core::model::{HybridModel, Side};
use flexrun_core::sweep::{
    condition_name, load_force, quasi_static_bending, scripted_load_run, ScriptedLoad,
};
use flexrun_core::table::Table;
use flexrun_core::trajectory::{TRAJECTORY_MAJOR, TRAJECTORY_SCHEMA};
use flexrun_rl::checkpoint::Checkpoint;
use flexrun_rl::trainer::{PolicySnapshot, TrainConfig, Trainer};
use flexrun_rl::RlError;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::{ExportArgs, MetricsArgs, Setup, SimArgs, SweepArgs, TrainArgs};

/// The run diverged; maps to exit code 2.
#[derive(Debug)]
pub struct Diverged(pub String);

impl std::fmt::Display for Diverged {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "diverged: {}", self.0)
    }
}

impl std::error::Error for Diverged {}

/// Writes a line to stdout; a closed pipe is not an error.
fn emit(text: &str) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

/// Training config assembled from `--config` and the command-line
/// overrides.
fn resolve_config(setup: &Setup) -> Result<TrainConfig> {
    let mut cfg = match &setup.config {
        Some(path) => TrainConfig::load(path).with_context(|| format!("config {}", path.display()))?,
        None => TrainConfig::default(),
    };
    if let Some(m) = &setup.model {
        cfg.model = m.clone();
    }
    if let Some(g) = &setup.gait {
        cfg.env.gait = g.parse::<GaitKind>()?;
    }
    if setup.speed.is_some() {
        cfg.env.speed = setup.speed;
    }
    if let Some(r) = &setup.reference {
        cfg.reference = Some(r.clone());
    }
    cfg.rigid |= setup.rigid;
    if let Some(k) = setup.stiffness_scale {
        cfg.stiffness_scale = k;
    }
    Ok(cfg)
}

/// Environment for open-ended evaluation: no horizon or tracking cut-off.
fn evaluation_env(cfg: &TrainConfig, model: &HybridModel) -> Result<Env> {
    let mut cfg = cfg.clone();
    cfg.env.termination.horizon = f64::INFINITY;
    cfg.env.termination.max_tracking_error = None;
    Ok(cfg.build_env(model)?)
}

enum Driver {
    /// Joint targets follow the reference.
    Reference,
    Policy {
        snap: PolicySnapshot,
        rng: Option<ChaCha8Rng>,
    },
}

impl Driver {
    fn new(checkpoint: Option<&Path>, env: &Env, stochastic: bool, seed: u64) -> Result<Self> {
        let Some(path) = checkpoint else { return Ok(Driver::Reference) };
        let ckpt = Checkpoint::load(path)?;
        ckpt.check_dims(env.obs_dim(), env.action_dim())?;
        Ok(Driver::Policy {
            snap: PolicySnapshot {
                policy: ckpt.policy,
                normalizer: ckpt.normalizer,
            },
            rng: stochastic.then(|| ChaCha8Rng::seed_from_u64(seed)),
        })
    }

    fn action(&mut self, env: &Env, phase: f64, obs: &nalgebra::DVector<f64>) -> Vec<f64> {
        match self {
            Driver::Reference => {
                let t = phase + env.time() + env.control_dt();
                env.reference().sample(t).q.iter().copied().collect()
            }
            Driver::Policy { snap, rng: Some(rng) } => {
                let s = snap.normalizer.normalize(obs);
                snap.policy.sample(&s, rng).0.iter().copied().collect()
            }
            Driver::Policy { snap, rng: None } => snap.mean_action(obs).iter().copied().collect(),
        }
    }
}

struct Episode {
    table: Table,
    total_reward: f64,
    ticks: usize,
    /// Time of divergence, if any.
    diverged: Option<f64>,
    /// First non-divergence termination seen (fall, pitch).
    first_event: Option<(TerminationCause, f64)>,
}

fn run_episode(env: &mut Env, driver: &mut Driver, duration: f64, phase: f64) -> Result<Episode> {
    if !(duration >= 0.0) || !duration.is_finite() {
        bail!("duration must be a non-negative number of seconds");
    }
    let ticks = (duration / env.control_dt() - 1e-9).ceil().max(0.0) as usize;
    let mut obs = env.reset(phase);
    env.start_recording();
    let mut ep = Episode {
        table: Table::new(TRAJECTORY_SCHEMA, TRAJECTORY_MAJOR, 0, Vec::new()),
        total_reward: 0.0,
        ticks: 0,
        diverged: None,
        first_event: None,
    };
    for _ in 0..ticks {
        let action = driver.action(env, phase, &obs);
        let out = env.step(&action)?;
        ep.ticks += 1;
        match out.done {
            Some(TerminationCause::Diverged) => {
                ep.diverged = Some(env.time());
                break;
            }
            Some(cause) if ep.first_event.is_none() => ep.first_event = Some((cause, env.time())),
            _ => {}
        }
        ep.total_reward += out.reward.total;
        obs = out.obs;
    }
    ep.table = env.take_recording().ok_or_else(|| anyhow!("recording missing"))?;
    ep.table.rows.retain(|r| r[0] <= duration + 1e-9);
    Ok(ep)
}

fn build(setup: &Setup) -> Result<(TrainConfig, HybridModel)> {
    let cfg = resolve_config(setup)?;
    let model = cfg.build_model()?;
    Ok((cfg, model))
}

fn simulate_to_table(args: &SimArgs) -> Result<(Episode, HybridModel)> {
    let (cfg, model) = build(&args.setup)?;
    let mut env = evaluation_env(&cfg, &model)?;
    let mut driver = Driver::new(args.checkpoint.as_deref(), &env, args.stochastic, args.seed)?;
    let ep = run_episode(&mut env, &mut driver, args.duration, args.phase)?;
    if let Some((cause, t)) = ep.first_event {
        log::warn!("termination condition {cause:?} first met at t = {t:.3} s");
    }
    Ok((ep, model))
}

fn diverged_error(t: f64) -> anyhow::Error {
    Diverged(format!("simulation diverged at t = {t:.4} s; partial trajectory written")).into()
}

pub fn simulate(args: &SimArgs) -> Result<()> {
    let out = args.out.as_ref().ok_or_else(|| anyhow!("simulate needs --out"))?;
    let (ep, _) = simulate_to_table(args)?;
    ep.table.save(out).with_context(|| format!("writing {}", out.display()))?;
    log::info!("wrote {} samples to {}", ep.table.rows.len(), out.display());
    match ep.diverged {
        Some(t) => Err(diverged_error(t)),
        None => Ok(()),
    }
}

#[derive(Serialize)]
struct Evaluation {
    ticks: usize,
    total_reward: f64,
    mean_reward: f64,
    report: Option<MetricsReport>,
}

pub fn evaluate(args: &SimArgs) -> Result<()> {
    let (ep, model) = simulate_to_table(args)?;
    if let Some(out) = &args.out {
        ep.table.save(out)?;
    }
    let report = if ep.table.rows.is_empty() {
        None
    } else {
        Some(metrics::report(&ep.table, Some(model.total_mass()), metrics::DEFAULT_EFFICIENCY)?)
    };
    let eval = Evaluation {
        ticks: ep.ticks,
        total_reward: ep.total_reward,
        mean_reward: ep.total_reward / ep.ticks.max(1) as f64,
        report,
    };
    emit(&serde_json::to_string_pretty(&eval)?);
    match ep.diverged {
        Some(t) => Err(diverged_error(t)),
        None => Ok(()),
    }
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let mut cfg = TrainConfig::load(&args.config).with_context(|| format!("config {}", args.config.display()))?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    if let Some(n) = args.iterations {
        cfg.iterations = n;
    }
    if let Some(o) = &args.out {
        cfg.out_dir = Some(o.clone());
    }
    if cfg.out_dir.is_none() {
        let stem = args.config.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
        cfg.out_dir = Some(Path::new("runs").join(stem));
    }
    cfg.validate()?;
    let mut trainer = if let Some(path) = &args.resume {
        let ckpt = Checkpoint::load(path)?;
        log::info!("resuming at iteration {}", ckpt.iteration);
        Trainer::resume(cfg, ckpt)?
    } else if let Some(path) = &args.fine_tune {
        let ckpt = Checkpoint::load(path)?;
        if ckpt.hybrid {
            log::warn!("fine-tuning from a checkpoint that was trained on a hybrid model");
        }
        Trainer::fine_tune(cfg, &ckpt)?
    } else {
        Trainer::new(cfg)?
    };
    match trainer.train() {
        Ok(logs) => {
            if let Some(last) = logs.last() {
                log::info!(
                    "finished at iteration {} with mean return {:.3}",
                    last.iteration,
                    last.mean_return
                );
            }
            Ok(())
        }
        Err(RlError::Diverged(msg)) => Err(Diverged(format!("{msg}; last good checkpoint kept")).into()),
        Err(e) => Err(e.into()),
    }
}

#[derive(Serialize)]
struct ConditionReport {
    condition: String,
    stiffness_scale: f64,
    damping_scale: f64,
    trajectory: String,
    diverged: bool,
    /// Largest curvature deviation along the episode, 1/m.
    max_strain: f64,
    /// Mean braking force over late stance of the prosthesis side, N.
    late_stance_braking: f64,
    peak_mechanical_cost: Option<f64>,
    cost_of_transport: Option<f64>,
    /// Clamped-rod equilibrium bending under body weight, 1/m.
    quasi_static_strain: f64,
    /// Peak bending of the fixed-base scripted body-weight load, 1/m.
    scripted_load_strain: f64,
}

#[derive(Serialize)]
struct SweepReport {
    conditions: Vec<ConditionReport>,
    /// Strain decreases strictly with stiffness in the episode runs.
    strain_ordered: bool,
    /// Same for the quasi-static body-weight load.
    quasi_static_ordered: bool,
    /// Strain of the most compliant over the stiffest condition.
    compliant_over_stiff: Option<f64>,
}

fn strictly_decreasing(pairs: &[(f64, f64)]) -> bool {
    let mut v = pairs.to_vec();
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    v.windows(2).all(|w| w[0].1 > w[1].1)
}

pub fn sweep(args: &SweepArgs) -> Result<()> {
    if args.scales.is_empty() {
        bail!("--scales needs at least one value");
    }
    if args.scales.iter().any(|k| !(*k > 0.0)) {
        bail!("stiffness scales must be positive");
    }
    if args.checkpoint.len() > 1 && args.checkpoint.len() != args.scales.len() {
        bail!("give one shared checkpoint or one per scale");
    }
    let (cfg, base) = build(&args.setup)?;
    if base.rod.is_none() {
        bail!("the stiffness sweep needs a model with a rod");
    }
    std::fs::create_dir_all(&args.out)?;
    let load = ScriptedLoad::default();
    let mut conditions = Vec::new();
    let mut diverged = false;
    for (i, &k) in args.scales.iter().enumerate() {
        let d = if args.scale_damping { k } else { 1.0 };
        let model = base.scale_rod(k, d)?;
        let mut env = evaluation_env(&cfg, &model)?;
        let ckpt = args.checkpoint.get(i).or(args.checkpoint.first());
        let mut driver = Driver::new(ckpt.map(|p| p.as_path()), &env, false, args.seed)?;
        let ep = run_episode(&mut env, &mut driver, args.duration, args.phase)?;
        let name = condition_name(k);
        let file = format!("trajectory_{name}.csv");
        ep.table.save(&args.out.join(&file))?;
        diverged |= ep.diverged.is_some();
        let mass = model.total_mass();
        let strain = metrics::strain_summary(&ep.table, Some(mass))?;
        let braking = if ep.table.rows.is_empty() {
            0.0
        } else {
            metrics::grf_stats(&ep.table, Side::Right)?.avg_braking_late_stance
        };
        let scripted = scripted_load_run(&model, 1.0, &load)?;
        let scripted_strain = metrics::strain_summary(&scripted, Some(mass))?.max_bending;
        conditions.push(ConditionReport {
            condition: name,
            stiffness_scale: k,
            damping_scale: d,
            trajectory: file,
            diverged: ep.diverged.is_some(),
            max_strain: strain.max_bending,
            late_stance_braking: braking,
            peak_mechanical_cost: strain.mechanical_cost,
            cost_of_transport: metrics::trajectory_cot(&ep.table, Some(mass), metrics::DEFAULT_EFFICIENCY).ok(),
            quasi_static_strain: quasi_static_bending(&base, k, &load_force(&base, &load))?,
            scripted_load_strain: scripted_strain,
        });
    }
    let pairs = |f: fn(&ConditionReport) -> f64| -> Vec<(f64, f64)> {
        conditions.iter().map(|c| (c.stiffness_scale, f(c))).collect()
    };
    let soft = conditions.iter().min_by(|a, b| a.stiffness_scale.total_cmp(&b.stiffness_scale));
    let hard = conditions.iter().max_by(|a, b| a.stiffness_scale.total_cmp(&b.stiffness_scale));
    let report = SweepReport {
        strain_ordered: strictly_decreasing(&pairs(|c| c.max_strain)),
        quasi_static_ordered: strictly_decreasing(&pairs(|c| c.quasi_static_strain)),
        compliant_over_stiff: match (soft, hard) {
            (Some(s), Some(h)) if conditions.len() > 1 && h.max_strain > 0.0 => Some(s.max_strain / h.max_strain),
            _ => None,
        },
        conditions,
    };
    let text = serde_json::to_string_pretty(&report)?;
    std::fs::write(args.out.join("report.json"), &text)?;
    emit("condition          max_strain  braking_N  mech_cost   COT      quasi_static");
    for c in &report.conditions {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        emit(&format!(
            "{:<18} {:<11.5} {:<10.3} {:<11} {:<8} {:.5}",
            c.condition,
            c.max_strain,
            c.late_stance_braking,
            opt(c.peak_mechanical_cost),
            opt(c.cost_of_transport),
            c.quasi_static_strain
        ));
    }
    if diverged {
        return Err(Diverged("at least one condition diverged; partial trajectories written".into()).into());
    }
    Ok(())
}

#[derive(Serialize)]
struct FileReport {
    file: String,
    report: MetricsReport,
}

pub fn metrics(args: &MetricsArgs) -> Result<()> {
    let mut reports = Vec::new();
    for path in &args.files {
        let table = Table::load(path, TRAJECTORY_SCHEMA, TRAJECTORY_MAJOR)
            .with_context(|| format!("reading {}", path.display()))?;
        let report = metrics::report(&table, args.mass, args.efficiency)
            .with_context(|| format!("metrics of {}", path.display()))?;
        reports.push(FileReport {
            file: path.display().to_string(),
            report,
        });
    }
    let text = serde_json::to_string_pretty(&reports)?;
    if let Some(out) = &args.out {
        std::fs::write(out, &text)?;
    }
    emit(&text);
    Ok(())
}

pub fn export_reference(args: &ExportArgs) -> Result<()> {
    let (mut cfg, model) = build(&args.setup)?;
    if let Some(rate) = args.rate {
        cfg.env.reference_rate = rate;
    }
    let reference: ReferenceTrajectory = match &cfg.reference {
        Some(path) => ReferenceTrajectory::load_csv(path)?,
        None => cfg.env.build_reference(&model)?,
    };
    reference.save_csv(&args.out)?;
    log::info!(
        "wrote {} samples over {:.3} s to {}",
        reference.samples.len(),
        reference.period,
        args.out.display()
    );
    Ok(())
}
