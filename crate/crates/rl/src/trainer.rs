//! Synchronous PPO training: parallel rollout workers fill one buffer per
//! iteration from a read-only policy snapshot, then a single update runs
//! on the aggregated data.
//!
//! Every logical worker owns an environment and draws from an RNG seeded
//! by `(seed, iteration, worker)`, and the buffer is concatenated in worker
//! order. Results therefore do not depend on how many OS threads run the
//! workers, which is capped at the available hardware parallelism.

use std::path::{Path, PathBuf};
use std::time::Instant;

use flexrun_core::env::{Env, EnvConfig};
use flexrun_core::imitation::{ReferenceTrajectory, TerminationCause};
use flexrun_core::model::HybridModel;
use flexrun_core::table::Table;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::buffer::{RolloutBuffer, Transition};
use crate::checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
use crate::error::{Result, RlError};
use crate::normalizer::ObsNormalizer;
use crate::policy::{ActorCritic, HIDDEN};
use crate::ppo::{ppo_update, Adam, PpoConfig, UpdateStats};

pub const LEARNING_SCHEMA: &str = "flexrun-learning";
pub const LEARNING_MAJOR: u32 = 1;
pub const LEARNING_FILE: &str = "learning.csv";
pub const TIMING_FILE: &str = "timing.csv";

const LEARNING_COLUMNS: [&str; 10] = [
    "iteration",
    "transitions",
    "episodes",
    "mean_return",
    "mean_length",
    "policy_loss",
    "value_loss",
    "entropy",
    "approx_kl",
    "clip_frac",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Bundled model name or path to a model file.
    pub model: String,
    /// Train on the rigid variant of the model.
    pub rigid: bool,
    /// Scale of the rod stiffness.
    pub stiffness_scale: f64,
    /// Optional reference CSV replacing the built-in gait.
    pub reference: Option<PathBuf>,
    pub workers: usize,
    /// Transitions per PPO update.
    pub buffer_size: usize,
    pub iterations: u64,
    pub seed: u64,
    pub hidden: Vec<usize>,
    /// Where checkpoints and logs go; nothing is written when absent.
    pub out_dir: Option<PathBuf>,
    pub checkpoint_every: u64,
    /// Stop once an iteration's mean return reaches this value.
    pub target_return: Option<f64>,
    pub env: EnvConfig,
    pub ppo: PpoConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: "humanoid".into(),
            rigid: false,
            stiffness_scale: 1.0,
            reference: None,
            workers: 8,
            buffer_size: 4096,
            iterations: 1000,
            seed: 0,
            hidden: HIDDEN.to_vec(),
            out_dir: None,
            checkpoint_every: 10,
            target_return: None,
            env: EnvConfig::default(),
            ppo: PpoConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| RlError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RlError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        // Relative paths inside the file are relative to the file.
        let dir = path.parent().unwrap_or(Path::new("."));
        if let Some(r) = &cfg.reference {
            if r.is_relative() {
                cfg.reference = Some(dir.join(r));
            }
        }
        if !cfg.model.contains(['/', '.']) {
            return Ok(cfg);
        }
        let p = Path::new(&cfg.model);
        if p.is_relative() {
            cfg.model = dir.join(p).to_string_lossy().into_owned();
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(RlError::Config("workers must be at least 1".into()));
        }
        if self.buffer_size < self.workers {
            return Err(RlError::Config("buffer_size must be at least the worker count".into()));
        }
        if !(self.stiffness_scale > 0.0) {
            return Err(RlError::Config("stiffness_scale must be positive".into()));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(RlError::Config("hidden layer sizes must be positive".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(RlError::Config("checkpoint_every must be positive".into()));
        }
        self.env.validate()?;
        self.ppo.validate()
    }

    /// The model this run trains on.
    pub fn build_model(&self) -> Result<HybridModel> {
        let base = HybridModel::resolve(&self.model)?;
        let scaled = base.scale_rod(self.stiffness_scale, 1.0)?;
        Ok(if self.rigid { scaled.make_rigid_variant()? } else { scaled })
    }

    pub fn build_env(&self, model: &HybridModel) -> Result<Env> {
        let reference = match &self.reference {
            Some(path) => ReferenceTrajectory::load_csv(path)?,
            None => self.env.build_reference(model)?,
        };
        Ok(Env::with_reference(model.clone(), reference, self.env.clone())?)
    }
}

/// Read-only policy state handed to rollout workers.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicySnapshot {
    pub policy: ActorCritic,
    pub normalizer: ObsNormalizer,
}

impl PolicySnapshot {
    /// Deterministic action (the policy mean) for a raw observation.
    pub fn mean_action(&self, raw_obs: &nalgebra::DVector<f64>) -> nalgebra::DVector<f64> {
        self.policy.policy_forward(&self.normalizer.normalize(raw_obs)).0
    }
}

/// Seed of one worker's RNG for one iteration.
pub fn worker_seed(seed: u64, iteration: u64, worker: usize) -> u64 {
    let mut x = seed ^ 0x9E37_79B9_7F4A_7C15;
    for v in [iteration, worker as u64] {
        x = (x ^ v).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        x ^= x >> 31;
    }
    x
}

/// Collects exactly `steps` transitions from fresh episodes that start at
/// uniformly random reference phases. The final unfinished episode is cut
/// off and bootstrapped with the critic.
pub fn collect_worker<R: Rng>(
    env: &mut Env,
    snap: &PolicySnapshot,
    steps: usize,
    rng: &mut R,
) -> Result<RolloutBuffer> {
    let mut buf = RolloutBuffer::default();
    let period = env.reference().period;
    let mut raw = env.reset(rng.gen_range(0.0..period));
    let mut ep_return = 0.0;
    let mut ep_len = 0usize;
    for k in 0..steps {
        let obs = snap.normalizer.normalize(&raw);
        let (action, log_prob) = snap.policy.sample(&obs, rng);
        let value = snap.policy.value(&obs);
        let out = env.step(action.as_slice())?;
        buf.raw_obs.push(raw.clone());
        ep_return += out.reward.total;
        ep_len += 1;
        let last = k + 1 == steps;
        let (done, end, boundary) = match out.done {
            Some(TerminationCause::Horizon) => (false, true, snap.policy.value(&snap.normalizer.normalize(&out.obs))),
            Some(_) => (true, true, 0.0),
            None if last => (false, true, snap.policy.value(&snap.normalizer.normalize(&out.obs))),
            None => (false, false, 0.0),
        };
        buf.transitions.push(Transition {
            obs,
            action,
            reward: out.reward.total,
            value,
            log_prob,
            done,
            end,
            boundary_value: boundary,
        });
        if out.done.is_some() {
            buf.episode_returns.push(ep_return);
            buf.episode_lengths.push(ep_len);
            ep_return = 0.0;
            ep_len = 0;
            if !last {
                raw = env.reset(rng.gen_range(0.0..period));
            }
        } else {
            raw = out.obs;
        }
    }
    Ok(buf)
}

/// Transitions assigned to each of `workers` for a buffer of `total`.
pub fn split_steps(total: usize, workers: usize) -> Vec<usize> {
    (0..workers)
        .map(|w| total / workers + usize::from(w < total % workers))
        .collect()
}

/// Runs all workers (on at most `threads` OS threads) and concatenates
/// their buffers in worker order.
pub fn collect_rollouts(
    envs: &mut [Env],
    snap: &PolicySnapshot,
    steps: &[usize],
    seeds: &[u64],
    threads: usize,
) -> Result<RolloutBuffer> {
    let n = envs.len();
    if steps.len() != n || seeds.len() != n {
        return Err(RlError::Config("one step count and seed per worker required".into()));
    }
    let threads = threads.clamp(1, n.max(1));
    let mut results: Vec<Option<Result<RolloutBuffer>>> = (0..n).map(|_| None).collect();
    let per_thread = n.div_ceil(threads);
    std::thread::scope(|scope| {
        let handles: Vec<_> = envs
            .chunks_mut(per_thread)
            .zip(results.chunks_mut(per_thread))
            .enumerate()
            .map(|(chunk, (env_chunk, out_chunk))| {
                scope.spawn(move || {
                    for (i, (env, out)) in env_chunk.iter_mut().zip(out_chunk.iter_mut()).enumerate() {
                        let w = chunk * per_thread + i;
                        let mut rng = ChaCha8Rng::seed_from_u64(seeds[w]);
                        *out = Some(collect_worker(env, snap, steps[w], &mut rng));
                    }
                })
            })
            .collect();
        for h in handles {
            let _ = h.join();
        }
    });
    let mut buffer = RolloutBuffer::default();
    for (w, r) in results.into_iter().enumerate() {
        match r {
            Some(Ok(b)) => buffer.extend(b),
            Some(Err(e)) => {
                return Err(RlError::Worker {
                    worker: w,
                    message: e.to_string(),
                })
            }
            None => {
                return Err(RlError::Worker {
                    worker: w,
                    message: "worker panicked".into(),
                })
            }
        }
    }
    Ok(buffer)
}

/// One row of the learning curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    /// Number of completed updates after this iteration.
    pub iteration: u64,
    pub transitions: usize,
    pub episodes: usize,
    /// Mean undiscounted return of episodes finished during collection
    /// (of the cut-off partial episodes if none finished).
    pub mean_return: f64,
    pub mean_length: f64,
    pub stats: UpdateStats,
    /// s
    pub wall_time: f64,
}

impl IterationLog {
    fn row(&self) -> Vec<f64> {
        vec![
            self.iteration as f64,
            self.transitions as f64,
            self.episodes as f64,
            self.mean_return,
            self.mean_length,
            self.stats.policy_loss,
            self.stats.value_loss,
            self.stats.entropy,
            self.stats.approx_kl,
            self.stats.clip_frac,
        ]
    }
}

fn new_learning_table() -> Table {
    Table::new(
        LEARNING_SCHEMA,
        LEARNING_MAJOR,
        0,
        LEARNING_COLUMNS.iter().map(|s| s.to_string()).collect(),
    )
}

fn episode_summary(buffer: &RolloutBuffer) -> (usize, f64, f64) {
    if !buffer.episode_returns.is_empty() {
        let n = buffer.episode_returns.len();
        let mean = buffer.episode_returns.iter().sum::<f64>() / n as f64;
        let len = buffer.episode_lengths.iter().sum::<usize>() as f64 / n as f64;
        return (n, mean, len);
    }
    // Only cut-off episodes: average the partial returns.
    let mut returns = Vec::new();
    let mut lengths = Vec::new();
    let (mut r, mut l) = (0.0, 0usize);
    for t in &buffer.transitions {
        r += t.reward;
        l += 1;
        if t.end {
            returns.push(r);
            lengths.push(l);
            r = 0.0;
            l = 0;
        }
    }
    let n = returns.len().max(1) as f64;
    (0, returns.iter().sum::<f64>() / n, lengths.iter().sum::<usize>() as f64 / n)
}

pub struct Trainer {
    pub config: TrainConfig,
    pub model: HybridModel,
    pub policy: ActorCritic,
    pub normalizer: ObsNormalizer,
    pub adam: Adam,
    pub rng: ChaCha8Rng,
    /// Completed updates.
    pub iteration: u64,
    pub envs: Vec<Env>,
    pub learning: Table,
    pub timing: Table,
    pub threads: usize,
}

impl Trainer {
    /// Fresh run with randomly initialised networks.
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = config.build_model()?;
        let env = config.build_env(&model)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let policy = ActorCritic::new(env.obs_dim(), env.action_dim(), &config.hidden, &mut rng)?;
        let normalizer = ObsNormalizer::new(env.obs_dim());
        let adam = Adam::new(policy.num_params());
        let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(config.workers);
        let envs = vec![env; config.workers];
        Ok(Self {
            config,
            model,
            policy,
            normalizer,
            adam,
            rng,
            iteration: 0,
            envs,
            learning: new_learning_table(),
            timing: Table::new("flexrun-timing", 1, 0, vec!["iteration".into(), "wall_time".into()]),
            threads,
        })
    }

    /// Continues a run from its checkpoint. Existing logs in `out_dir`
    /// are kept up to the checkpoint's iteration.
    pub fn resume(config: TrainConfig, ckpt: Checkpoint) -> Result<Self> {
        let mut t = Self::new(config)?;
        ckpt.check_dims(t.envs[0].obs_dim(), t.envs[0].action_dim())?;
        if ckpt.policy.actor.sizes != t.policy.actor.sizes {
            return Err(RlError::Checkpoint("hidden layer sizes differ from the config".into()));
        }
        t.policy = ckpt.policy;
        t.normalizer = ckpt.normalizer;
        t.adam = ckpt.adam;
        t.rng = ckpt.rng;
        t.iteration = ckpt.iteration;
        if let Some(dir) = &t.config.out_dir {
            for (table, file, schema, major) in [
                (&mut t.learning, LEARNING_FILE, LEARNING_SCHEMA, LEARNING_MAJOR),
                (&mut t.timing, TIMING_FILE, "flexrun-timing", 1),
            ] {
                let path = dir.join(file);
                if path.exists() {
                    let mut old = Table::load(&path, schema, major)?;
                    old.rows.retain(|r| r[0] <= ckpt.iteration as f64);
                    *table = old;
                }
            }
        }
        Ok(t)
    }

    /// New run whose networks and observation statistics start from
    /// `ckpt` (typically trained on the rigid variant). Optimizer and RNG
    /// start fresh.
    pub fn fine_tune(config: TrainConfig, ckpt: &Checkpoint) -> Result<Self> {
        let mut t = Self::new(config)?;
        ckpt.check_dims(t.envs[0].obs_dim(), t.envs[0].action_dim())?;
        if ckpt.policy.actor.sizes != t.policy.actor.sizes || ckpt.policy.critic.sizes != t.policy.critic.sizes {
            return Err(RlError::Checkpoint("hidden layer sizes differ from the config".into()));
        }
        t.policy = ckpt.policy.clone();
        t.normalizer = ckpt.normalizer.clone();
        Ok(t)
    }

    pub fn snapshot(&self) -> PolicySnapshot {
        PolicySnapshot {
            policy: self.policy.clone(),
            normalizer: self.normalizer.clone(),
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            iteration: self.iteration,
            seed: self.config.seed,
            model: self.model.name.clone(),
            hybrid: self.model.rod.is_some(),
            policy: self.policy.clone(),
            normalizer: self.normalizer.clone(),
            adam: self.adam.clone(),
            rng: self.rng.clone(),
        }
    }

    /// Buffer for the current iteration, collected with the current policy.
    pub fn collect(&mut self) -> Result<RolloutBuffer> {
        let snap = self.snapshot();
        let steps = split_steps(self.config.buffer_size, self.config.workers);
        let seeds: Vec<u64> = (0..self.config.workers)
            .map(|w| worker_seed(self.config.seed, self.iteration, w))
            .collect();
        collect_rollouts(&mut self.envs, &snap, &steps, &seeds, self.threads)
    }

    /// Collect, update, log. Non-finite parameters after the update
    /// restore the previous ones and fail with [`RlError::Diverged`].
    pub fn iterate(&mut self) -> Result<IterationLog> {
        let start = Instant::now();
        let buffer = self.collect()?;
        let (episodes, mean_return, mean_length) = episode_summary(&buffer);
        let backup = (self.policy.clone(), self.adam.clone());
        let stats = ppo_update(&mut self.policy, &mut self.adam, &buffer, &self.config.ppo, &mut self.rng)?;
        if !self.policy.is_finite() {
            self.policy = backup.0;
            self.adam = backup.1;
            return Err(RlError::Diverged(format!("non-finite parameters at iteration {}", self.iteration + 1)));
        }
        for x in &buffer.raw_obs {
            self.normalizer.update(x);
        }
        self.iteration += 1;
        let log = IterationLog {
            iteration: self.iteration,
            transitions: buffer.len(),
            episodes,
            mean_return,
            mean_length,
            stats,
            wall_time: start.elapsed().as_secs_f64(),
        };
        self.learning.push(log.row())?;
        self.timing.push(vec![self.iteration as f64, log.wall_time])?;
        Ok(log)
    }

    pub fn write_outputs(&self) -> Result<()> {
        let Some(dir) = &self.config.out_dir else { return Ok(()) };
        std::fs::create_dir_all(dir)?;
        self.learning.save(&dir.join(LEARNING_FILE))?;
        self.timing.save(&dir.join(TIMING_FILE))?;
        let ckpt = self.checkpoint();
        ckpt.save(&dir.join(format!("checkpoint_{:05}.json", self.iteration)))?;
        ckpt.save(&dir.join("latest.json"))?;
        Ok(())
    }

    /// Runs until `config.iterations` updates are done or the target
    /// return is reached. On divergence the last good state is written
    /// before the error is returned.
    pub fn train(&mut self) -> Result<Vec<IterationLog>> {
        let mut logs = Vec::new();
        while self.iteration < self.config.iterations {
            let log = match self.iterate() {
                Ok(log) => log,
                Err(e) => {
                    self.write_outputs()?;
                    return Err(e);
                }
            };
            log::info!(
                "iteration {} return {:.3} length {:.1} kl {:.4}",
                log.iteration,
                log.mean_return,
                log.mean_length,
                log.stats.approx_kl
            );
            let reached = self.config.target_return.is_some_and(|r| log.mean_return >= r);
            logs.push(log);
            if self.iteration % self.config.checkpoint_every == 0 || reached {
                self.write_outputs()?;
            }
            if reached {
                break;
            }
        }
        self.write_outputs()?;
        Ok(logs)
    }
}

/// Mean return of `episodes` episodes under the deterministic policy mean.
pub fn evaluate(env: &mut Env, snap: &PolicySnapshot, episodes: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let period = env.reference().period;
    let mut total = 0.0;
    for _ in 0..episodes {
        let mut raw = env.reset(rng.gen_range(0.0..period));
        loop {
            let out = env.step(snap.mean_action(&raw).as_slice())?;
            total += out.reward.total;
            if out.done.is_some() {
                break;
            }
            raw = out.obs;
        }
    }
    Ok(total / episodes.max(1) as f64)
}
