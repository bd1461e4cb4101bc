//! Awareness of object shape: a diagnostic readout on frozen PreCo states
//! against sensor-only MLP and LSTM classifiers, compared at the open markers.
//!
//! `cargo run --release --example shape_probe [train_steps]`

use proprio::collect::collect_passive;
use proprio::env::{EnvConfig, Phase};
use proprio::preco::{train, PrecoConfig, PrecoModel};
use proprio::probes::{median, pooled_win, train_baseline, train_diagnostic, ModelLosses, ProbeConfig, ProbeKind, ProbeTask};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let steps = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(800);
    let env = EnvConfig::default();
    let train_set = collect_passive(&env, 600, 1)?;
    let test_set = collect_passive(&env, 200, 2)?;
    let (model, params) = PrecoModel::init(PrecoConfig { train_steps: steps, ..PrecoConfig::compact() }, 4, 16, 0)?;
    let views: Vec<_> = train_set.iter().map(|t| t.sensorimotor()).collect();
    let params = train(&model, params, &views, 0)?.params;

    let probe_cfg = ProbeConfig { sequence_steps: 200, ..ProbeConfig::default() };
    let task = ProbeTask::Shape;
    let mut all = vec![ModelLosses::new("preco", train_diagnostic(&model, &params, &train_set, task, &probe_cfg, 0)?.step_losses(&test_set)?)];
    for kind in [ProbeKind::Mlp, ProbeKind::Lstm, ProbeKind::RandLstm] {
        let probe = train_baseline(kind, &train_set, task, &probe_cfg, 0)?;
        all.push(ModelLosses::new(kind.to_string(), probe.step_losses(&test_set)?));
    }

    let open: Vec<usize> = test_set[0].markers.iter().filter(|m| m.phase == Phase::Open && m.t > 0).map(|m| m.t).collect();
    println!("median cross-entropy (chance = {:.3})", 3f64.ln());
    for t in [5, 10, 20, 30, 40, 50, 59] {
        let row: Vec<String> = all.iter().map(|m| format!("{} {:.3}", m.name, median(&m.losses.iter().map(|l| l[t]).collect::<Vec<_>>()))).collect();
        println!("  t={t:>2}: {}", row.join(", "));
    }
    for other in &all[1..] {
        let w = pooled_win(&all[0], other, &open, 500, 0);
        println!("P(preco beats {}) at open markers {:?}: {:.3} [{:.3}, {:.3}]", other.name, open, w.p, w.lo, w.hi);
    }
    Ok(())
}
