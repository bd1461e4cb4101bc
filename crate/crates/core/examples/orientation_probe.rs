//! Recovering the orientation of rectangles and ellipses from dynamics states
//! versus from the raw sensors, after the hand has let go.
//!
//! `cargo run --release --example orientation_probe [train_steps]`

use proprio::collect::collect_passive;
use proprio::env::{EnvConfig, Phase};
use proprio::preco::{train, PrecoConfig, PrecoModel};
use proprio::probes::{median, train_baseline, train_diagnostic, ProbeConfig, ProbeKind, ProbeTask};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let steps = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(800);
    let env = EnvConfig::default();
    let task = ProbeTask::Orientation;
    let train_set = task.subset(&collect_passive(&env, 900, 1)?)?;
    let test_set = task.subset(&collect_passive(&env, 300, 2)?)?;
    println!("{} training and {} test episodes with an orientation", train_set.len(), test_set.len());
    let (model, params) = PrecoModel::init(PrecoConfig { train_steps: steps, ..PrecoConfig::compact() }, 4, 16, 0)?;
    let views: Vec<_> = train_set.iter().map(|t| t.sensorimotor()).collect();
    let params = train(&model, params, &views, 0)?.params;

    let cfg = ProbeConfig::default();
    let dynamics = train_diagnostic(&model, &params, &train_set, task, &cfg, 0)?.angular_errors(&test_set)?;
    let sensors = train_baseline(ProbeKind::Mlp, &train_set, task, &cfg, 0)?.angular_errors(&test_set)?;
    let after_open: Vec<usize> = test_set[0]
        .markers
        .iter()
        .filter(|m| m.phase == Phase::Open && m.t > 0)
        .flat_map(|m| m.t + 1..=m.t + 5)
        .filter(|&t| t < env.episode_length)
        .collect();
    let pick = |e: &[Vec<f64>]| -> Vec<f64> { e.iter().flat_map(|row| after_open.iter().map(move |&t| row[t])).collect() };
    println!("median angular error in the 5 steps after each release (uniform guess: {:.3} rad)", std::f64::consts::FRAC_PI_4);
    println!("  dynamics states: {:.3} rad", median(&pick(&dynamics)));
    println!("  sensor MLP:      {:.3} rad", median(&pick(&sensors)));
    Ok(())
}
