//! Dataset production: scripted grasps, random-noise policies, and the
//! active actor/learner loop.

mod active;

pub use active::{run_active, ActiveConfig, ActiveMode, ActiveOutcome, SnapshotLog};

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Trajectory;
use crate::env::{EnvConfig, EnvError, GraspScript, GripperEnv};
use crate::planner::PlanError;
use crate::preco::PrecoError;

#[derive(Debug, Error)]
pub enum CollectError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Model(#[from] PrecoError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("cannot sample from an empty buffer")]
    EmptyBuffer,
    #[error("unknown noise kind '{0}' (expected ind or cor)")]
    UnknownKind(String),
    #[error("invalid collection config: {0}")]
    InvalidConfig(String),
}

/// Ornstein-Uhlenbeck noise, one independent process per action coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct OuState {
    pub noise: Vec<f64>,
    pub damping: f64,
    pub std: f64,
}

impl OuState {
    pub fn new(dim: usize) -> Self {
        Self { noise: vec![0.0; dim], damping: 0.2, std: 0.2 }
    }

    /// Stationary per-coordinate standard deviation.
    pub fn stationary_std(&self) -> f64 {
        self.std / (1.0 - (1.0 - self.damping).powi(2)).sqrt()
    }
}

/// `n' = (1 - λ) n + ε`, `ε ~ N(0, σ²)`.
pub fn ou_step(s: &OuState, rng: &mut impl Rng) -> OuState {
    let keep = 1.0 - s.damping;
    let noise = if s.std > 0.0 {
        let normal = Normal::new(0.0, s.std).expect("finite std");
        s.noise.iter().map(|n| keep * n + normal.sample(rng)).collect()
    } else {
        s.noise.iter().map(|n| keep * n).collect()
    };
    OuState { noise, ..*s }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    /// Independent `N(0, 0.2²)` actions.
    Ind,
    /// Ornstein-Uhlenbeck actions.
    Cor,
}

impl FromStr for NoiseKind {
    type Err = CollectError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ind" => Ok(Self::Ind),
            "cor" => Ok(Self::Cor),
            other => Err(CollectError::UnknownKind(other.into())),
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Ind => "ind",
            Self::Cor => "cor",
        })
    }
}

/// Standard deviation of IndNoise actions.
pub const IND_STD: f64 = 0.2;

pub fn clip_box(u: &mut [f64]) {
    for v in u {
        *v = v.clamp(-1.0, 1.0);
    }
}

/// Per-episode seeds drawn from one master stream.
pub fn episode_seeds(seed: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random()).collect()
}

/// RNG for a policy, independent of the environment stream for the same seed.
pub fn policy_rng(episode_seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(episode_seed);
    rng.set_stream(1);
    rng
}

/// Runs one episode. `policy(t, env, last_observation)` returns the action for step `t`.
pub fn run_episode<F>(config: &EnvConfig, episode_id: u64, seed: u64, mut policy: F) -> Result<Trajectory, CollectError>
where
    F: FnMut(usize, &GripperEnv, Option<&[f64]>) -> Result<Vec<f64>, CollectError>,
{
    let mut env = GripperEnv::new(config.clone(), seed)?;
    let label = env.label();
    let t_len = config.episode_length;
    let mut actions = Vec::with_capacity(t_len);
    let mut observations: Vec<Vec<f64>> = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let u = policy(t, &env, observations.last().map(Vec::as_slice))?;
        observations.push(env.step(&u).into_vec());
        actions.push(u);
    }
    Ok(Trajectory { episode_id, seed, actions, observations, label, markers: Vec::new() })
}

/// Scripted grasp-and-release episodes with phase markers.
pub fn collect_passive(config: &EnvConfig, n: usize, seed: u64) -> Result<Vec<Trajectory>, CollectError> {
    config.validate()?;
    episode_seeds(seed, n)
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            let script = GraspScript::sample(&mut policy_rng(s));
            let mut traj = run_episode(config, i as u64, s, |t, env, _| Ok(script.action(t, env.angles())))?;
            traj.markers = GraspScript::markers(config.episode_length);
            Ok(traj)
        })
        .collect()
}

/// One random-policy episode.
pub fn random_episode(config: &EnvConfig, kind: NoiseKind, episode_id: u64, seed: u64) -> Result<Trajectory, CollectError> {
    let mut rng = policy_rng(seed);
    let f = config.num_fingers;
    let mut ou = OuState::new(f);
    let normal = Normal::new(0.0, IND_STD).expect("finite std");
    run_episode(config, episode_id, seed, |_, _, _| {
        let mut u = match kind {
            NoiseKind::Ind => (0..f).map(|_| normal.sample(&mut rng)).collect(),
            NoiseKind::Cor => {
                ou = ou_step(&ou, &mut rng);
                ou.noise.clone()
            }
        };
        clip_box(&mut u);
        Ok(u)
    })
}

/// IndNoise or CorNoise episodes.
pub fn collect_random(kind: NoiseKind, config: &EnvConfig, n: usize, seed: u64) -> Result<Vec<Trajectory>, CollectError> {
    config.validate()?;
    episode_seeds(seed, n)
        .into_iter()
        .enumerate()
        .map(|(i, s)| random_episode(config, kind, i as u64, s))
        .collect()
}

/// Re-executes the recorded actions and returns the observations the environment produces.
pub fn replay(config: &EnvConfig, traj: &Trajectory) -> Result<Vec<Vec<f64>>, CollectError> {
    let mut env = GripperEnv::new(config.clone(), traj.seed)?;
    Ok(traj.actions.iter().map(|u| env.step(u).into_vec()).collect())
}

/// Bounded FIFO of complete episodes.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    items: VecDeque<Trajectory>,
    capacity: usize,
    total_pushed: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "buffer capacity must be positive");
        Self { items: VecDeque::with_capacity(capacity.min(1024)), capacity, total_pushed: 0 }
    }

    pub fn push(&mut self, traj: Trajectory) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(traj);
        self.total_pushed += 1;
    }

    /// `k` episodes drawn uniformly with replacement.
    pub fn sample(&self, k: usize, rng: &mut impl Rng) -> Result<Vec<&Trajectory>, CollectError> {
        if self.items.is_empty() {
            return Err(CollectError::EmptyBuffer);
        }
        Ok((0..k).map(|_| &self.items[rng.random_range(0..self.items.len())]).collect())
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

    pub fn total_pushed(&self) -> u64 {
        self.total_pushed
    }

    pub fn iter(&self) -> impl Iterator<Item = &Trajectory> {
        self.items.iter()
    }
}

#[cfg(test)]
mod tests;
