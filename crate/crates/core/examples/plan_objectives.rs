//! Receding-horizon control through a learned model: plan for touch, for
//! maximal prediction entropy and for minimal prediction entropy.
//!
//! `cargo run --release --example plan_objectives [train_steps]`

use proprio::collect::{collect_passive, collect_random, episode_seeds, NoiseKind};
use proprio::env::EnvConfig;
use proprio::planner::{mpc_episode, CostKind, CostSpec, MpcNoise, PlannerConfig};
use proprio::preco::{train, PrecoConfig, PrecoModel};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let steps = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(600);
    let env = EnvConfig::default();
    let mut data = collect_passive(&env, 200, 1)?;
    data.extend(collect_random(NoiseKind::Cor, &env, 200, 2)?);
    let (model, params) = PrecoModel::init(PrecoConfig { train_steps: steps, ..PrecoConfig::compact() }, 4, 16, 0)?;
    let views: Vec<_> = data.iter().map(|t| t.sensorimotor()).collect();
    let params = train(&model, params, &views, 0)?.params;

    let planner = PlannerConfig::default();
    let seeds = episode_seeds(9, 2);
    for kind in [CostKind::TouchMax, CostKind::EntropyMax, CostKind::EntropyMin] {
        let cost = CostSpec::new(kind, &env);
        let mut touch = 0.0;
        for (i, &s) in seeds.iter().enumerate() {
            let out = mpc_episode(&env, i as u64, s, &model, &params, &cost, &planner, None::<MpcNoise<'_, ChaCha8Rng>>)?;
            touch += out.trajectory.cumulative_touch(env.touch_dims());
            if i == 0 {
                let first = &out.traces[0];
                println!("{kind}: first solve objective {:.3} -> {:.3} over {} iterations", first[0], first[first.len() - 1], first.len());
            }
        }
        println!("{kind}: mean cumulative touch {:.2}", touch / seeds.len() as f64);
    }
    let cor = collect_random(NoiseKind::Cor, &env, 20, 3)?;
    println!("cor noise: mean cumulative touch {:.2}", cor.iter().map(|t| t.cumulative_touch(env.touch_dims())).sum::<f64>() / 20.0);
    Ok(())
}
