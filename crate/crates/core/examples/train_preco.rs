//! Train a PreCo dynamics model on scripted grasps and compare its held-out
//! per-step likelihood with a constant Gaussian per sensor.
//!
//! `cargo run --release --example train_preco [steps]`

use proprio::collect::collect_passive;
use proprio::env::EnvConfig;
use proprio::preco::{train, MarginalBaseline, PrecoConfig, PrecoModel};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let steps = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(400);
    let env = EnvConfig::default();
    let train_set = collect_passive(&env, 400, 1)?;
    let test_set = collect_passive(&env, 50, 2)?;
    let config = PrecoConfig { train_steps: steps, ..PrecoConfig::compact() };
    let (model, params) = PrecoModel::init(config, env.num_fingers, env.obs_dim(), 0)?;
    println!("{} parameters, {} updates", params.num_scalars(), steps);

    let views: Vec<_> = train_set.iter().map(|t| t.sensorimotor()).collect();
    let outcome = train(&model, params, &views, 0)?;
    for (i, chunk) in outcome.losses.chunks((steps / 8).max(1)).enumerate() {
        println!("updates {:>5}..: mean loss {:+.3}", i * chunk.len(), chunk.iter().sum::<f64>() / chunk.len() as f64);
    }

    let test: Vec<_> = test_set.iter().map(|t| t.sensorimotor()).collect();
    let nll = model.step_nll(&outcome.params, &test)?;
    let baseline = MarginalBaseline::fit(&views, model.config.stddev_floor)?;
    let (mut wins, mut total) = (0usize, 0usize);
    for (ep, row) in test_set.iter().zip(&nll) {
        for (x, l) in ep.observations.iter().zip(row) {
            wins += usize::from(*l < baseline.nll(x));
            total += 1;
        }
    }
    println!("held-out steps where the model beats the marginal Gaussian: {:.1}%", 100.0 * wins as f64 / total as f64);
    Ok(())
}
