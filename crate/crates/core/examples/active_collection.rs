//! Actor-learner data collection driven by the entropy objective, in the
//! reproducible single-thread mode and with concurrent actors.
//!
//! `cargo run --release --example active_collection`

use proprio::collect::{replay, run_active, ActiveConfig, ActiveMode};
use proprio::env::EnvConfig;
use proprio::planner::{CostKind, PlannerConfig};
use proprio::preco::{PrecoConfig, PrecoModel};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let env = EnvConfig { episode_length: 30, ..EnvConfig::default() };
    let (model, params) = PrecoModel::init(PrecoConfig::compact(), 4, 16, 0)?;
    for mode in [ActiveMode::Lockstep, ActiveMode::Threaded] {
        let config = ActiveConfig {
            num_actors: 2,
            episodes_total: 16,
            warmup_episodes: 8,
            learner_steps_per_episode: 4,
            publish_interval: 4,
            cost: CostKind::EntropyMax,
            mode,
            planner: PlannerConfig { horizon: 10, iters: 8, ..PlannerConfig::default() },
            ..ActiveConfig::default()
        };
        let out = run_active(&env, &model, params.clone(), &config, 5)?;
        println!("{mode:?}: {} episodes, {} learner updates, snapshots {:?}", out.dataset.len(), out.losses.len(), out.snapshots.published);
        for (id, version) in out.snapshots.used.iter().take(4) {
            println!("  episode {id} planned with snapshot {version}");
        }
        let touch: Vec<String> = out.dataset.iter().map(|t| format!("{:.1}", t.cumulative_touch(env.touch_dims()))).collect();
        println!("  cumulative touch per episode: {}", touch.join(" "));
        assert!(out.dataset.iter().all(|t| replay(&env, t).map(|x| x == t.observations).unwrap_or(false)));
    }
    Ok(())
}
