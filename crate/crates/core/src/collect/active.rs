use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::sync_channel;
use std::sync::{Arc, RwLock};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{episode_seeds, policy_rng, random_episode, CollectError, NoiseKind, OuState, ReplayBuffer};
use crate::data::Trajectory;
use crate::env::EnvConfig;
use crate::planner::{mpc_episode, CostKind, CostSpec, MpcNoise, PlannerConfig};
use crate::preco::{PrecoModel, PrecoParams, Trainer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActiveMode {
    /// Actor threads and a learner running concurrently.
    Threaded,
    /// One thread alternating one episode with a fixed number of learner steps.
    Lockstep,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActiveConfig {
    pub num_actors: usize,
    /// Learner steps between published snapshots.
    pub publish_interval: usize,
    /// Episodes in total, warmup included.
    pub episodes_total: usize,
    /// CorNoise episodes buffered before planning starts.
    pub warmup_episodes: usize,
    /// Learner steps per planned episode.
    pub learner_steps_per_episode: usize,
    pub buffer_capacity: usize,
    /// `entropy_max` gives AxEnt, `touch_max` gives AxTask.
    pub cost: CostKind,
    /// Add CorNoise to executed controls.
    pub noise: bool,
    pub mode: ActiveMode,
    pub planner: PlannerConfig,
}

impl Default for ActiveConfig {
    fn default() -> Self {
        Self {
            num_actors: 1,
            publish_interval: 10,
            episodes_total: 200,
            warmup_episodes: 50,
            learner_steps_per_episode: 5,
            buffer_capacity: 5000,
            cost: CostKind::EntropyMax,
            noise: true,
            mode: ActiveMode::Lockstep,
            planner: PlannerConfig::default(),
        }
    }
}

impl ActiveConfig {
    pub fn validate(&self) -> Result<(), CollectError> {
        let bad = |m: &str| Err(CollectError::InvalidConfig(m.into()));
        if self.num_actors == 0 {
            return bad("num_actors must be >= 1");
        }
        if self.publish_interval == 0 || self.buffer_capacity == 0 {
            return bad("publish_interval and buffer_capacity must be >= 1");
        }
        if self.warmup_episodes == 0 || self.warmup_episodes > self.episodes_total {
            return bad("warmup_episodes must be in 1..=episodes_total");
        }
        self.planner.validate()?;
        Ok(())
    }
}

/// An immutable published parameter set.
#[derive(Debug)]
struct Snapshot {
    version: u64,
    params: PrecoParams,
}

/// Which snapshot each planned episode used, and every published version.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SnapshotLog {
    pub published: Vec<u64>,
    /// `(episode_id, snapshot version)` for planned episodes.
    pub used: Vec<(u64, u64)>,
}

#[derive(Clone, Debug)]
pub struct ActiveOutcome {
    pub params: PrecoParams,
    /// Every produced episode, ordered by id.
    pub dataset: Vec<Trajectory>,
    pub losses: Vec<f64>,
    pub snapshots: SnapshotLog,
    pub total_pushed: u64,
}

struct Learner {
    trainer: Trainer,
    buffer: ReplayBuffer,
    rng: ChaCha8Rng,
    steps: usize,
    publish_interval: usize,
    version: u64,
}

impl Learner {
    /// One update; returns a new snapshot when one is due.
    fn step(&mut self) -> Result<Option<Snapshot>, CollectError> {
        let batch: Vec<_> = self
            .buffer
            .sample(self.trainer.model.config.batch_size, &mut self.rng)?
            .into_iter()
            .map(Trajectory::sensorimotor)
            .collect();
        self.trainer.step(&batch)?;
        self.steps += 1;
        if self.steps % self.publish_interval == 0 {
            self.version += 1;
            return Ok(Some(Snapshot { version: self.version, params: self.trainer.params.clone() }));
        }
        Ok(None)
    }
}

fn planned_episode(
    env: &EnvConfig,
    model: &PrecoModel,
    snap: &Snapshot,
    config: &ActiveConfig,
    id: u64,
    seed: u64,
) -> Result<Trajectory, CollectError> {
    let cost = CostSpec::new(config.cost, env);
    let mut rng = policy_rng(seed);
    let noise = config.noise.then(|| MpcNoise { ou: OuState::new(env.num_fingers), rng: &mut rng });
    Ok(mpc_episode(env, id, seed, model, &snap.params, &cost, &config.planner, noise)?.trajectory)
}

/// Active data collection: actors plan with the latest snapshot, the learner
/// trains on the shared buffer and publishes new snapshots.
pub fn run_active(
    env: &EnvConfig,
    model: &PrecoModel,
    params: PrecoParams,
    config: &ActiveConfig,
    seed: u64,
) -> Result<ActiveOutcome, CollectError> {
    config.validate()?;
    env.validate()?;
    let seeds = episode_seeds(seed, config.episodes_total);
    let mut learner_rng = ChaCha8Rng::seed_from_u64(seed);
    learner_rng.set_stream(2);
    let mut learner = Learner {
        trainer: Trainer::new(model.clone(), params.clone(), seed)?,
        buffer: ReplayBuffer::new(config.buffer_capacity),
        rng: learner_rng,
        steps: 0,
        publish_interval: config.publish_interval,
        version: 0,
    };
    let mut dataset = Vec::with_capacity(config.episodes_total);
    for (i, &s) in seeds.iter().enumerate().take(config.warmup_episodes) {
        let traj = random_episode(env, NoiseKind::Cor, i as u64, s)?;
        learner.buffer.push(traj.clone());
        dataset.push(traj);
    }
    let mut log = SnapshotLog { published: vec![0], used: Vec::new() };
    let planned = config.episodes_total - config.warmup_episodes;
    let total_steps = planned * config.learner_steps_per_episode;
    let first = Snapshot { version: 0, params };

    match config.mode {
        ActiveMode::Lockstep => {
            let mut current = Arc::new(first);
            for (i, &s) in seeds.iter().enumerate().skip(config.warmup_episodes) {
                let traj = planned_episode(env, model, &current, config, i as u64, s)?;
                log.used.push((i as u64, current.version));
                learner.buffer.push(traj.clone());
                dataset.push(traj);
                for _ in 0..config.learner_steps_per_episode {
                    if let Some(snap) = learner.step()? {
                        log.published.push(snap.version);
                        current = Arc::new(snap);
                    }
                }
            }
        }
        ActiveMode::Threaded => {
            let shared = RwLock::new(Arc::new(first));
            let next_id = AtomicUsize::new(config.warmup_episodes);
            let (tx, rx) = sync_channel::<Result<(Trajectory, u64), CollectError>>(config.num_actors);
            std::thread::scope(|scope| -> Result<(), CollectError> {
                for _ in 0..config.num_actors {
                    let tx = tx.clone();
                    let (shared, next_id, seeds) = (&shared, &next_id, &seeds);
                    scope.spawn(move || loop {
                        let i = next_id.fetch_add(1, Ordering::SeqCst);
                        if i >= config.episodes_total {
                            break;
                        }
                        let snap = Arc::clone(&shared.read().expect("snapshot lock"));
                        let out = planned_episode(env, model, &snap, config, i as u64, seeds[i]).map(|t| (t, snap.version));
                        let failed = out.is_err();
                        if tx.send(out).is_err() || failed {
                            break;
                        }
                    });
                }
                drop(tx);
                let rx = rx;
                let mut received = 0;
                while received < planned || learner.steps < total_steps {
                    let msg = if learner.steps >= total_steps {
                        Some(rx.recv().map_err(|_| CollectError::InvalidConfig("actors stopped early".into()))?)
                    } else {
                        rx.try_recv().ok()
                    };
                    match msg {
                        Some(msg) => {
                            let (traj, version) = msg?;
                            log.used.push((traj.episode_id, version));
                            learner.buffer.push(traj.clone());
                            dataset.push(traj);
                            received += 1;
                        }
                        None => {
                            if let Some(snap) = learner.step()? {
                                log.published.push(snap.version);
                                *shared.write().expect("snapshot lock") = Arc::new(snap);
                            }
                        }
                    }
                }
                Ok(())
            })?;
            dataset.sort_by_key(|t| t.episode_id);
            log.used.sort_unstable();
        }
    }
    let total_pushed = learner.buffer.total_pushed();
    let out = learner.trainer.finish();
    Ok(ActiveOutcome { params: out.params, dataset, losses: out.losses, snapshots: log, total_pushed })
}
