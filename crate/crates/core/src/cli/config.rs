use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::collect::{ActiveConfig, ActiveMode};
use crate::env::EnvConfig;
use crate::planner::{CostKind, PlannerConfig};
use crate::preco::PrecoConfig;
use crate::probes::ProbeConfig;

/// Everything a run reads from its TOML config file. Every key is optional;
/// missing keys take the desk defaults and unknown keys are rejected.
///
/// ```toml
/// seed = 7
///
/// [env]
/// episode_length = 60
///
/// [model]
/// core_hidden_size = 64
/// overshoot_length = 15
///
/// [planner]
/// horizon = 30
///
/// [collect]
/// episodes = 200
///
/// [eval]
/// bootstrap_samples = 1000
/// ```
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub env: EnvConfig,
    pub model: PrecoConfig,
    pub planner: PlannerConfig,
    pub collect: CollectSection,
    pub probe: ProbeConfig,
    pub eval: EvalSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollectSection {
    /// Episodes written by the collection verbs, warmup included for active runs.
    pub episodes: usize,
    pub num_actors: usize,
    pub publish_interval: usize,
    pub warmup_episodes: usize,
    pub learner_steps_per_episode: usize,
    pub buffer_capacity: usize,
    pub cost: CostKind,
    /// CorNoise on executed controls during active collection.
    pub exploration_noise: bool,
    pub mode: ActiveMode,
}

impl Default for CollectSection {
    fn default() -> Self {
        let a = ActiveConfig::default();
        Self {
            episodes: a.episodes_total,
            num_actors: a.num_actors,
            publish_interval: a.publish_interval,
            warmup_episodes: a.warmup_episodes,
            learner_steps_per_episode: a.learner_steps_per_episode,
            buffer_capacity: a.buffer_capacity,
            cost: a.cost,
            exploration_noise: a.noise,
            mode: a.mode,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub bootstrap_samples: usize,
    /// Episodes per `plan` invocation.
    pub plan_episodes: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { bootstrap_samples: 1000, plan_episodes: 20 }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let config: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.env.validate()?;
        config.model.validate()?;
        config.planner.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is representable as TOML")
    }

    pub fn active(&self) -> ActiveConfig {
        let c = &self.collect;
        ActiveConfig {
            num_actors: c.num_actors,
            publish_interval: c.publish_interval,
            episodes_total: c.episodes,
            warmup_episodes: c.warmup_episodes,
            learner_steps_per_episode: c.learner_steps_per_episode,
            buffer_capacity: c.buffer_capacity,
            cost: c.cost,
            noise: c.exploration_noise,
            mode: c.mode,
            planner: self.planner,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn sections_override_defaults() {
        let c = RunConfig::parse("seed = 3\n[env]\nepisode_length = 20\n[model]\novershoot_length = 4\n[collect]\ncost = \"touch_max\"\nmode = \"threaded\"\n").unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.env.episode_length, 20);
        assert_eq!(c.model.overshoot_length, 4);
        assert_eq!(c.model.core_hidden_size, PrecoConfig::default().core_hidden_size);
        let a = c.active();
        assert_eq!((a.cost, a.mode), (CostKind::TouchMax, ActiveMode::Threaded));
        assert_eq!(a.planner, c.planner);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in ["colour = 1", "[env]\nfingers = 3", "[planner]\nhorizon = 3\nspeed = 2", "[extra]\n"] {
            assert!(matches!(RunConfig::parse(text), Err(CliError::Config(_))), "{text}");
        }
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(RunConfig::parse("[env]\nnum_fingers = 0").is_err());
        assert!(RunConfig::parse("[planner]\nhorizon = 0").is_err());
    }

    #[test]
    fn toml_round_trip() {
        let mut c = RunConfig::default();
        c.seed = 99;
        c.env.obs_noise_std = 0.01;
        assert_eq!(RunConfig::parse(&c.to_toml()).unwrap(), c);
    }
}
