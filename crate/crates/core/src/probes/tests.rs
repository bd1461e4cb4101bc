use super::*;
use crate::collect::collect_passive;
use crate::env::EnvConfig;
use crate::preco::{EmbedShape, HeadShape, PrecoConfig};

fn env(t: usize) -> EnvConfig {
    EnvConfig { episode_length: t, ..EnvConfig::default() }
}

fn quick() -> ProbeConfig {
    ProbeConfig { readout_hidden: 8, lstm_hidden: 6, readout_steps: 30, sequence_steps: 5, sequence_batch: 3, ..ProbeConfig::default() }
}

fn tiny_model(env: &EnvConfig) -> (PrecoModel, PrecoParams) {
    let e = EmbedShape { depth: 1, hidden: 6, out: 6 };
    let h = HeadShape { depth: 1, hidden: 6 };
    let config = PrecoConfig {
        control_embed: e,
        sensor_embed: e,
        core_hidden_size: 5,
        mean_head: h,
        stddev_head: h,
        mixture_head: h,
        ..PrecoConfig::default()
    };
    PrecoModel::init(config, env.num_fingers, env.obs_dim(), 2).unwrap()
}

#[test]
fn task_encodings_and_losses() {
    let data = collect_passive(&env(4), 6, 0).unwrap();
    for t in &data {
        let s = ProbeTask::Shape.target(t);
        assert_eq!(s.iter().sum::<f64>(), 1.0);
        assert_eq!(s[t.label.shape.class_index()], 1.0);
        let o = ProbeTask::Orientation.target(t);
        assert!((o[0].hypot(o[1]) - 1.0).abs() < 1e-15);
    }
    let uniform = ProbeTask::Shape.loss(&[0.3, 0.3, 0.3], &[0.0, 1.0, 0.0]);
    assert!((uniform - 3f64.ln()).abs() < 1e-15);
    assert_eq!(ProbeTask::Orientation.loss(&[1.0, 0.0], &[0.0, 1.0]), 2.0);
    assert!("colour".parse::<ProbeTask>().is_err());
    assert!("gru".parse::<ProbeKind>().is_err());
    for k in ["preco", "mlp", "lstm", "randlstm"] {
        assert_eq!(k.parse::<ProbeKind>().unwrap().to_string(), k);
    }
}

#[test]
fn angular_error_has_period_pi() {
    let enc = |phi: f64| [(2.0 * phi).sin(), (2.0 * phi).cos()];
    assert!(angular_error(&enc(0.3), 0.3) < 1e-12);
    assert!(angular_error(&enc(0.3), 0.3 + std::f64::consts::PI) < 1e-12);
    assert!((angular_error(&enc(0.0), 0.5) - 0.5).abs() < 1e-12);
    assert!((angular_error(&enc(0.0), 1.4) - 1.4).abs() < 1e-12);
    assert!((angular_error(&enc(0.0), 2.0) - (std::f64::consts::PI - 2.0)).abs() < 1e-12);
}

#[test]
fn orientation_rejects_disc_only_data() {
    let discs = EnvConfig { shape_set: vec![Shape::Disc], ..env(4) };
    let data = collect_passive(&discs, 4, 0).unwrap();
    let err = train_baseline(ProbeKind::Mlp, &data, ProbeTask::Orientation, &quick(), 0).unwrap_err();
    assert_eq!(err, ProbeError::OnlyDiscs);
    assert!(train_baseline(ProbeKind::Mlp, &[], ProbeTask::Shape, &quick(), 0).is_err());
}

#[test]
fn diagnostic_leaves_dynamics_untouched() {
    let e = env(8);
    let data = collect_passive(&e, 6, 1).unwrap();
    let (m, p) = tiny_model(&e);
    let before = serde_json::to_string(&p).unwrap();
    let probe = train_diagnostic(&m, &p, &data, ProbeTask::Shape, &quick(), 3).unwrap();
    assert_eq!(serde_json::to_string(&p).unwrap(), before);
    match &probe.encoder {
        Encoder::Dynamics { params, .. } => assert_eq!(params, &p),
        Encoder::Sensors => panic!("wrong encoder"),
    }
    let again = train_diagnostic(&m, &p, &data, ProbeTask::Shape, &quick(), 3).unwrap();
    assert_eq!(probe.params, again.params);
    let states = extract_states(&m, &p, &data).unwrap();
    assert_eq!(states.len(), 6);
    assert_eq!(states[0].shape(), &[8, 10]);
    let steps = m.filter(&p, &data[2].sensorimotor()).unwrap();
    assert_eq!(states[2].row(7), steps[7].1.features().as_slice());
}

#[test]
fn randlstm_freezes_recurrent_weights() {
    let data = collect_passive(&env(8), 6, 2).unwrap();
    let init = build(ProbeKind::RandLstm, ProbeTask::Shape, Encoder::Sensors, Standardizer::fit(&sensor_features(&data)), 16, &quick(), 4);
    let rand = train_baseline(ProbeKind::RandLstm, &data, ProbeTask::Shape, &quick(), 4).unwrap();
    let lstm = train_baseline(ProbeKind::Lstm, &data, ProbeTask::Shape, &quick(), 4).unwrap();
    let cell = rand.lstm.unwrap();
    for i in [cell.gates.weight, cell.gates.bias] {
        assert_eq!(rand.params.arrays()[i], init.params.arrays()[i]);
        assert_ne!(lstm.params.arrays()[i], init.params.arrays()[i]);
    }
    let r = rand.readout.layers[0].weight;
    assert_ne!(rand.params.arrays()[r], init.params.arrays()[r]);
}

#[test]
fn mlp_is_per_timestep() {
    let data = collect_passive(&env(8), 6, 3).unwrap();
    let probe = train_baseline(ProbeKind::Mlp, &data, ProbeTask::Shape, &quick(), 5).unwrap();
    let mut permuted = data[0].clone();
    permuted.observations.swap(1, 6);
    permuted.observations.swap(2, 5);
    let a = probe.predict(&data[..1]).unwrap();
    let b = probe.predict(&[permuted]).unwrap();
    for t in [0, 3, 4, 7] {
        assert_eq!(a[0].row(t), b[0].row(t));
    }
    assert_eq!(a[0].row(1), b[0].row(6));
}

#[test]
fn recurrent_predictions_match_across_batching() {
    let data = collect_passive(&env(8), 5, 4).unwrap();
    let probe = train_baseline(ProbeKind::Lstm, &data, ProbeTask::Orientation, &quick(), 6).unwrap();
    let all = probe.predict(&data).unwrap();
    let one = probe.predict(&data[3..4]).unwrap();
    assert!(all[3].max_abs_diff(&one[0]) < 1e-12);
}

#[test]
fn shuffled_labels_reach_chance() {
    let e = env(12);
    let train = shuffled_labels(&collect_passive(&e, 300, 10).unwrap(), 1);
    let test = collect_passive(&e, 300, 11).unwrap();
    let cfg = ProbeConfig { readout_steps: 300, ..ProbeConfig::default() };
    let probe = train_baseline(ProbeKind::Mlp, &train, ProbeTask::Shape, &cfg, 2).unwrap();
    let preds = probe.predict(&test).unwrap();
    let n = test.len() as f64;
    let hits = test
        .iter()
        .zip(&preds)
        .filter(|(t, y)| {
            let row = y.row(10);
            let arg = (0..3).fold(0, |b, i| if row[i] > row[b] { i } else { b });
            arg == t.label.shape.class_index()
        })
        .count() as f64;
    let acc = hits / n;
    let sigma = (1.0 / 3.0 * 2.0 / 3.0 / n).sqrt();
    assert!((acc - 1.0 / 3.0).abs() <= 3.0 * sigma, "{acc}");
}

#[test]
fn statistics() {
    let a = ModelLosses::new("a", vec![vec![1.0, 2.0], vec![3.0, 0.5], vec![2.0, 2.0]]);
    let b = ModelLosses::new("b", vec![vec![2.0, 1.0], vec![3.0, 0.7], vec![1.0, 2.5]]);
    assert_eq!(win_probability(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]), 0.5);
    assert_eq!(win_probability(&[1.0, 5.0], &[2.0, 5.0]), 0.75);
    assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    let self_win = pooled_win(&a, &a, &[0, 1], 200, 0);
    assert_eq!(self_win.p, 0.5);
    assert_eq!((self_win.lo, self_win.hi), (0.5, 0.5));
    let w1 = pooled_win(&a, &b, &[0, 1], 200, 7);
    assert_eq!(w1, pooled_win(&a, &b, &[0, 1], 200, 7));
    assert_eq!(w1.p, 3.5 / 6.0);
    let mask = vec![vec![true, false], vec![true, true], vec![false, true]];
    // b - a over selected pairs: 1, 0, 0.2, 0.5.
    assert!((median_margin(&a, &b, &mask).unwrap() - 0.35).abs() < 1e-12);
    assert_eq!(median_margin(&a, &b, &vec![vec![false; 2]; 3]), None);
}

#[test]
fn report_contents() {
    let one = ModelLosses::new("preco", vec![vec![0.4, 0.9, 0.1]]);
    let report = eval_report(std::slice::from_ref(&one), &[1], 50, 0).unwrap();
    let medians: Vec<f64> = report.rows.iter().map(|r| r.value).collect();
    assert_eq!(medians, vec![0.4, 0.9, 0.1]);
    assert_eq!(report.cdfs.len(), 1);

    let a = ModelLosses::new("preco", vec![vec![0.4, 0.9], vec![0.2, 0.3], vec![1.0, 0.1]]);
    let b = ModelLosses::new("mlp", vec![vec![0.5, 0.9], vec![0.1, 0.4], vec![1.2, 0.2]]);
    let r1 = eval_report(&[a.clone(), a.clone()], &[0], 100, 3).unwrap();
    assert!(r1.rows.iter().filter(|r| r.statistic == "win_vs_preco").all(|r| r.value == 0.5));
    let r2 = eval_report(&[a.clone(), b.clone()], &[0, 1], 100, 3).unwrap();
    assert_eq!(r2, eval_report(&[a, b], &[0, 1], 100, 3).unwrap());
    let mut csv = Vec::new();
    r2.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("timestep,model,statistic,value,ci_lo,ci_hi\n"));
    assert_eq!(text.lines().count(), 1 + 2 * 3);
    assert!(eval_report(&[], &[], 10, 0).is_err());
}
