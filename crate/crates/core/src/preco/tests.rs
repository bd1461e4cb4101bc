use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::Trajectory;
use crate::diffcore::grad_check;
use crate::entropy::adaptive_simpson;
use crate::env::{ObjectSpec, Shape};

fn toy_config() -> PrecoConfig {
    let e = EmbedShape { depth: 1, hidden: 8, out: 8 };
    let h = HeadShape { depth: 1, hidden: 8 };
    PrecoConfig {
        control_embed: e,
        sensor_embed: e,
        core_hidden_size: 8,
        mean_head: h,
        stddev_head: h,
        mixture_head: h,
        num_components: 2,
        overshoot_length: 3,
        batch_size: 4,
        train_steps: 10,
        learning_rate: 1e-2,
        ..PrecoConfig::default()
    }
}

/// Integrator toy system: x accumulates the actions, plus a velocity channel.
fn toy_data(n: usize, t_len: usize, seed: u64) -> Vec<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut pos = [0.0f64; 2];
            let mut us = Vec::new();
            let mut xs = Vec::new();
            for _ in 0..t_len {
                let u = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                for (p, v) in pos.iter_mut().zip(&u) {
                    *p = (*p + 0.2 * v).clamp(-1.0, 1.0);
                }
                xs.push(vec![pos[0], pos[1], 0.2 * u[0], 0.2 * u[1]]);
                us.push(u);
            }
            (us, xs)
        })
        .collect()
}

fn views(data: &[(Vec<Vec<f64>>, Vec<Vec<f64>>)]) -> Vec<Episode<'_>> {
    data.iter().map(|(u, x)| Episode { actions: u, observations: x }).collect()
}

fn toy_model(seed: u64) -> (PrecoModel, PrecoParams) {
    PrecoModel::init(toy_config(), 2, 4, seed).unwrap()
}

#[test]
fn init_is_seeded() {
    let (_, a) = toy_model(3);
    let (_, b) = toy_model(3);
    let (_, c) = toy_model(4);
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn zero_weights_keep_zero_state() {
    let (m, mut p) = toy_model(0);
    for a in p.arrays_mut() {
        a.scale_in_place(0.0);
    }
    let h0 = HiddenState::zeros(m.hidden_size());
    let h1 = m.predictor_step(&p, &h0, &[0.7, -0.3]).unwrap();
    assert_eq!(h1, h0);
    let h2 = m.corrector_step(&p, &h1, &[1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(h2, h0);
}

#[test]
fn opposite_actions_give_distinct_states() {
    let (m, p) = toy_model(1);
    let h0 = HiddenState::zeros(m.hidden_size());
    let a = m.predictor_step(&p, &h0, &[1.0, 1.0]).unwrap();
    let b = m.predictor_step(&p, &h0, &[-1.0, -1.0]).unwrap();
    let gap: f64 = a.output.iter().zip(&b.output).map(|(x, y)| (x - y).abs()).sum();
    assert!(gap > 1e-3, "{gap}");
}

#[test]
fn non_finite_inputs_are_rejected() {
    let (m, p) = toy_model(1);
    let h0 = HiddenState::zeros(m.hidden_size());
    assert!(m.predictor_step(&p, &h0, &[f64::NAN, 0.0]).is_err());
}

#[test]
fn decoded_mixtures_are_valid() {
    let (m, p) = toy_model(2);
    let h = m.predictor_step(&p, &HiddenState::zeros(8), &[0.5, -0.5]).unwrap();
    let mix = m.decode(&p, &h).unwrap();
    assert_eq!((mix.dims, mix.components), (4, 2));
    assert_eq!(mix.weights.len(), 8);
    assert!(mix.stddevs.iter().all(|&s| s >= 1e-3));
    for d in 0..4 {
        let s: f64 = mix.dim(d).weights.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
}

#[test]
fn standard_normal_nll() {
    let mix = MixtureParams { dims: 3, components: 1, weights: vec![1.0; 3], means: vec![0.5; 3], stddevs: vec![1.0; 3] };
    let want = 1.5 * (2.0 * std::f64::consts::PI).ln();
    assert!((nll(&mix, &[0.5; 3]) - want).abs() < 1e-12);
}

#[test]
fn duplicated_component_changes_nothing() {
    let one = MixtureParams { dims: 1, components: 1, weights: vec![1.0], means: vec![0.3], stddevs: vec![0.4] };
    let two = MixtureParams { dims: 1, components: 2, weights: vec![0.5, 0.5], means: vec![0.3, 0.3], stddevs: vec![0.4, 0.4] };
    for x in [-2.0, 0.0, 0.3, 1.7] {
        assert!((nll(&one, &[x]) - nll(&two, &[x])).abs() < 1e-12);
    }
}

#[test]
fn tape_nll_matches_naive_density() {
    let (m, p) = toy_model(5);
    let data = toy_data(1, 6, 5);
    let ep = views(&data)[0];
    for (pre, _) in m.filter(&p, &ep).unwrap() {
        let mix = m.decode(&p, &pre).unwrap();
        let x = &ep.observations[0];
        let naive: f64 = (0..4).map(|d| -mix.dim(d).density(x[d]).ln()).sum();
        let got = nll(&mix, x);
        assert!((naive - got).abs() <= 1e-12 * naive.abs().max(1.0), "{naive} vs {got}");
    }
}

#[test]
fn predictive_density_integrates_to_one() {
    let (m, p) = toy_model(6);
    let h = m.predictor_step(&p, &HiddenState::zeros(8), &[0.2, 0.9]).unwrap();
    let mix = m.decode(&p, &h).unwrap();
    for d in 0..4 {
        let md = mix.dim(d);
        let lo = md.means.iter().zip(&md.stddevs).map(|(m, s)| m - 12.0 * s).fold(f64::INFINITY, f64::min);
        let hi = md.means.iter().zip(&md.stddevs).map(|(m, s)| m + 12.0 * s).fold(f64::NEG_INFINITY, f64::max);
        let mass = adaptive_simpson(&|x| md.density(x), lo, hi, 1e-10);
        assert!((mass - 1.0).abs() < 1e-6, "{mass}");
    }
}

#[test]
fn rollout_lengths_and_steps() {
    let (m, p) = toy_model(7);
    let h0 = HiddenState::zeros(8);
    assert!(m.rollout(&p, &h0, &[]).unwrap().is_empty());
    let us = vec![vec![0.1, 0.2], vec![-0.4, 0.3]];
    let r = m.rollout(&p, &h0, &us).unwrap();
    let a = m.predictor_step(&p, &h0, &us[0]).unwrap();
    let b = m.predictor_step(&p, &a, &us[1]).unwrap();
    assert_eq!(r, vec![a, b]);
}

#[test]
fn term_count() {
    let (m, _) = toy_model(0);
    assert_eq!(m.prediction_terms(5, 3), 17);
    assert_eq!(m.prediction_terms(5, 1), 10);
    assert_eq!(m.prediction_terms(2, 9), 5);
}

#[test]
fn single_step_overshoot_is_filter_loss() {
    let (m, p) = toy_model(8);
    let data = toy_data(1, 7, 8);
    let ep = views(&data)[0];
    let a = m.overshoot_loss(&p, &ep, 1).unwrap();
    let b = m.filter_loss(&p, &ep).unwrap();
    assert!((a - b).abs() < 1e-10, "{a} vs {b}");
}

/// Every rollout built one state at a time.
fn naive_overshoot(m: &PrecoModel, p: &PrecoParams, ep: &Episode<'_>, k_max: usize) -> f64 {
    let t_len = ep.len();
    let states = m.filter(p, ep).unwrap();
    let mut total = 0.0;
    for (t, (pre, post)) in states.iter().enumerate() {
        total += nll(&m.decode(p, post).unwrap(), &ep.observations[t]);
        let mut h = pre.clone();
        for k in 0..k_max {
            if t + k >= t_len {
                break;
            }
            if k > 0 {
                h = m.predictor_step(p, &h, &ep.actions[t + k]).unwrap();
            }
            total += nll(&m.decode(p, &h).unwrap(), &ep.observations[t + k]);
        }
    }
    total / m.prediction_terms(t_len, k_max) as f64
}

#[test]
fn batched_overshoot_matches_naive() {
    let (m, p) = toy_model(9);
    let data = toy_data(3, 6, 9);
    let eps = views(&data);
    for k in [2, 3, 6, 10] {
        let want: f64 = eps.iter().map(|e| naive_overshoot(&m, &p, e, k)).sum::<f64>() / 3.0;
        let mut tape = Tape::new();
        let pv = p.bind_const(&mut tape);
        let l = m.overshoot_loss_tape(&mut tape, &pv, &eps, k).unwrap();
        let got = tape.value(l).item();
        assert!((want - got).abs() < 1e-10, "k={k}: {want} vs {got}");
    }
}

#[test]
fn overshoot_gradients() {
    let (m, p) = toy_model(10);
    let data = toy_data(2, 3, 10);
    let eps = views(&data);
    let err = grad_check(|t, v| m.overshoot_loss_tape(t, v, &eps, 3).map_err(|e| match e {
        PrecoError::Diff(d) => d,
        other => panic!("{other}"),
    }), p.arrays(), 1e-5)
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn batched_filter_matches_stepwise() {
    let (m, p) = toy_model(11);
    let data = toy_data(2, 5, 11);
    let eps = views(&data);
    let batched = m.filter_states(&p, &eps).unwrap();
    for (ep, arr) in eps.iter().zip(&batched) {
        for (t, (_, post)) in m.filter(&p, ep).unwrap().iter().enumerate() {
            let diff = post.features().iter().zip(arr.row(t)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(diff < 1e-12);
        }
    }
}

#[test]
fn batch_validation() {
    let (m, p) = toy_model(0);
    assert_eq!(m.overshoot_loss_tape(&mut Tape::new(), &p.bind_const(&mut Tape::new()), &[], 2).unwrap_err(), PrecoError::EmptyDataset);
    let mut data = toy_data(2, 4, 0);
    data[1].0.pop();
    data[1].1.pop();
    assert!(matches!(m.filter_states(&p, &views(&data)), Err(PrecoError::Ragged(_))));
    let (other, _) = PrecoModel::init(PrecoConfig { core_hidden_size: 5, ..toy_config() }, 2, 4, 0).unwrap();
    assert!(matches!(other.check_params(&p), Err(PrecoError::LayoutMismatch(_))));
}

#[test]
fn training_reduces_loss_and_is_deterministic() {
    let (m, p) = toy_model(12);
    let data = toy_data(8, 12, 12);
    let eps = views(&data);
    let cfg = PrecoConfig { train_steps: 150, ..toy_config() };
    let m = PrecoModel { config: cfg, ..m };
    let before = eps.iter().map(|e| m.overshoot_loss(&p, e, 3).unwrap()).sum::<f64>();
    let a = train(&m, p.clone(), &eps, 1).unwrap();
    let b = train(&m, p.clone(), &eps, 1).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.losses, b.losses);
    let after = eps.iter().map(|e| m.overshoot_loss(&a.params, e, 3).unwrap()).sum::<f64>();
    assert!(after < before - 1.0, "{before} -> {after}");
    assert!(train(&m, p, &[], 1).is_err());
}

#[test]
fn labels_do_not_reach_training() {
    let (m, p) = toy_model(13);
    let data = toy_data(4, 5, 13);
    let make = |shape| -> Vec<Trajectory> {
        data.iter()
            .enumerate()
            .map(|(i, (u, x))| Trajectory {
                episode_id: i as u64,
                seed: i as u64,
                actions: u.clone(),
                observations: x.clone(),
                label: ObjectSpec { shape, half_extents: [0.3, 0.4], angle: i as f64 },
                markers: Vec::new(),
            })
            .collect()
    };
    let a = make(Shape::Rect);
    let mut b = make(Shape::Ellipse);
    for t in &mut b {
        t.label.angle += 1.0;
    }
    let ra = train(&m, p.clone(), &crate::data::episodes(&a), 2).unwrap();
    let rb = train(&m, p, &crate::data::episodes(&b), 2).unwrap();
    assert_eq!(ra.params, rb.params);
}

