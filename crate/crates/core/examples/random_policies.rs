//! IndNoise and CorNoise exploration: marginal spread and temporal correlation.
//!
//! `cargo run --release --example random_policies`

use proprio::collect::{collect_random, NoiseKind, OuState};
use proprio::env::EnvConfig;

fn lag1(xs: &[f64]) -> f64 {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    let var: f64 = xs.iter().map(|x| (x - m).powi(2)).sum();
    xs.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum::<f64>() / var
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let env = EnvConfig { episode_length: 400, ..EnvConfig::default() };
    println!("OU stationary std {:.4}", OuState::new(1).stationary_std());
    for kind in [NoiseKind::Ind, NoiseKind::Cor] {
        let data = collect_random(kind, &env, 20, 7)?;
        let finger0: Vec<f64> = data.iter().flat_map(|t| t.actions.iter().map(|u| u[0])).collect();
        let std = (finger0.iter().map(|v| v * v).sum::<f64>() / finger0.len() as f64).sqrt();
        let r: f64 = data.iter().map(|t| lag1(&t.actions.iter().map(|u| u[0]).collect::<Vec<_>>())).sum::<f64>() / data.len() as f64;
        let touch = data.iter().map(|t| t.cumulative_touch(env.touch_dims())).sum::<f64>() / data.len() as f64;
        println!("{kind}: action std {std:.3}, lag-1 autocorrelation {r:+.3}, mean cumulative touch {touch:.2}");
    }
    Ok(())
}
