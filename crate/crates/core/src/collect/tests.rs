use super::*;
use crate::env::env_init;
use crate::planner::PlannerConfig;
use crate::preco::{EmbedShape, HeadShape, PrecoConfig, PrecoModel};

fn short_env() -> EnvConfig {
    EnvConfig { episode_length: 12, ..EnvConfig::default() }
}

#[test]
fn ou_without_drive_decays() {
    let s = OuState { noise: vec![1.0, -2.0], damping: 0.2, std: 0.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let n = ou_step(&ou_step(&s, &mut rng), &mut rng);
    assert!((n.noise[0] - 0.64).abs() < 1e-15 && (n.noise[1] + 1.28).abs() < 1e-15);
}

#[test]
fn ou_stationary_std() {
    let mut s = OuState::new(1);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 100_000;
    let mut sq = 0.0;
    for _ in 0..n {
        s = ou_step(&s, &mut rng);
        sq += s.noise[0] * s.noise[0];
    }
    let std = (sq / n as f64).sqrt();
    let want = s.stationary_std();
    assert!((want - 0.2 / 0.36f64.sqrt()).abs() < 1e-15);
    assert!((std / want - 1.0).abs() < 0.02, "{std} vs {want}");
}

#[test]
fn passive_episodes() {
    let env = short_env();
    let a = collect_passive(&env, 5, 3).unwrap();
    assert_eq!(a.len(), 5);
    assert_eq!(a, collect_passive(&env, 5, 3).unwrap());
    assert_ne!(a, collect_passive(&env, 5, 4).unwrap());
    for (i, t) in a.iter().enumerate() {
        assert_eq!(t.episode_id, i as u64);
        assert_eq!(t.len(), 12);
        assert_eq!(t.observations.len(), 12);
        assert_eq!(t.label, env_init(&env, t.seed).unwrap().object);
        assert_eq!(t.markers, GraspScript::markers(12));
        assert_eq!(replay(&env, t).unwrap(), t.observations);
    }
}

fn lag1(xs: &[f64]) -> f64 {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    let var: f64 = xs.iter().map(|x| (x - m).powi(2)).sum();
    let cov: f64 = xs.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
    cov / var
}

#[test]
fn random_policy_statistics() {
    let env = EnvConfig { episode_length: 500, ..EnvConfig::default() };
    let ind = collect_random(NoiseKind::Ind, &env, 50, 5).unwrap();
    let cor = collect_random(NoiseKind::Cor, &env, 50, 5).unwrap();
    let coord = |d: &[Trajectory], f: usize| -> Vec<Vec<f64>> {
        d.iter().map(|t| t.actions.iter().map(|u| u[f]).collect()).collect()
    };
    let ind_all: Vec<f64> = (0..4).flat_map(|f| coord(&ind, f)).flatten().collect();
    assert_eq!(ind_all.len(), 100_000);
    let std = (ind_all.iter().map(|v| v * v).sum::<f64>() / ind_all.len() as f64).sqrt();
    assert!((std / IND_STD - 1.0).abs() < 0.03, "{std}");
    for d in [&ind, &cor] {
        assert!(d.iter().flat_map(|t| t.actions.iter().flatten()).all(|v| v.abs() <= 1.0));
    }
    let mean_r = |d: &[Trajectory]| {
        let series: Vec<Vec<f64>> = (0..4).flat_map(|f| coord(d, f)).collect();
        series.iter().map(|s| lag1(s)).sum::<f64>() / series.len() as f64
    };
    let (ri, rc) = (mean_r(&ind), mean_r(&cor));
    assert!(ri.abs() < 0.02, "{ri}");
    assert!((rc - 0.8).abs() < 0.03, "{rc}");
    assert_eq!(cor, collect_random(NoiseKind::Cor, &env, 50, 5).unwrap());
    for t in cor.iter().take(5) {
        assert_eq!(replay(&env, t).unwrap(), t.observations);
    }
}

#[test]
fn noise_kind_parsing() {
    assert_eq!("ind".parse::<NoiseKind>().unwrap(), NoiseKind::Ind);
    assert_eq!(NoiseKind::Cor.to_string(), "cor");
    assert!(matches!("pink".parse::<NoiseKind>(), Err(CollectError::UnknownKind(_))));
}

#[test]
fn buffer_fifo_and_sampling() {
    let eps = collect_passive(&short_env(), 3, 0).unwrap();
    let mut b = ReplayBuffer::new(2);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(matches!(b.sample(1, &mut rng), Err(CollectError::EmptyBuffer)));
    for e in &eps {
        b.push(e.clone());
    }
    assert_eq!(b.len(), 2);
    assert_eq!(b.total_pushed(), 3);
    assert!(b.iter().all(|t| t.episode_id != 0));
    let s1: Vec<u64> = b.sample(7, &mut ChaCha8Rng::seed_from_u64(9)).unwrap().iter().map(|t| t.episode_id).collect();
    let s2: Vec<u64> = b.sample(7, &mut ChaCha8Rng::seed_from_u64(9)).unwrap().iter().map(|t| t.episode_id).collect();
    assert_eq!(s1.len(), 7);
    assert_eq!(s1, s2);
}

fn tiny_model(env: &EnvConfig) -> (PrecoModel, crate::preco::PrecoParams) {
    let e = EmbedShape { depth: 1, hidden: 6, out: 6 };
    let h = HeadShape { depth: 1, hidden: 6 };
    let config = PrecoConfig {
        control_embed: e,
        sensor_embed: e,
        core_hidden_size: 6,
        mean_head: h,
        stddev_head: h,
        mixture_head: h,
        overshoot_length: 3,
        batch_size: 2,
        ..PrecoConfig::default()
    };
    PrecoModel::init(config, env.num_fingers, env.obs_dim(), 0).unwrap()
}

fn tiny_active(mode: ActiveMode) -> ActiveConfig {
    ActiveConfig {
        num_actors: 2,
        publish_interval: 2,
        episodes_total: 7,
        warmup_episodes: 3,
        learner_steps_per_episode: 3,
        mode,
        planner: PlannerConfig { horizon: 3, iters: 2, ..PlannerConfig::default() },
        ..ActiveConfig::default()
    }
}

#[test]
fn lockstep_active_is_reproducible() {
    let env = EnvConfig { episode_length: 6, ..EnvConfig::default() };
    let (m, p) = tiny_model(&env);
    let cfg = tiny_active(ActiveMode::Lockstep);
    let a = run_active(&env, &m, p.clone(), &cfg, 11).unwrap();
    let b = run_active(&env, &m, p, &cfg, 11).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.dataset, b.dataset);
    assert_eq!(a.losses, b.losses);
    assert_eq!(a.losses.len(), 12);
    assert_eq!(a.total_pushed, 7);
    assert_eq!(a.snapshots.published, vec![0, 1, 2, 3, 4, 5, 6]);
    assert!(a.snapshots.used.windows(2).all(|w| w[0].1 <= w[1].1));
    let feasible = crate::planner::PlanConstraints::new(vec![0.0; 4]);
    for t in &a.dataset {
        assert_eq!(replay(&env, t).unwrap(), t.observations);
    }
    for t in &a.dataset[3..] {
        assert!(feasible.is_feasible(&t.actions));
    }
}

#[test]
fn threaded_active_completes() {
    let env = EnvConfig { episode_length: 6, ..EnvConfig::default() };
    let (m, p) = tiny_model(&env);
    let out = run_active(&env, &m, p, &tiny_active(ActiveMode::Threaded), 11).unwrap();
    assert_eq!(out.dataset.len(), 7);
    assert_eq!(out.total_pushed, 7);
    assert_eq!(out.losses.len(), 12);
    assert!(out.snapshots.published.windows(2).all(|w| w[0] < w[1]));
    let ids: Vec<u64> = out.dataset.iter().map(|t| t.episode_id).collect();
    assert_eq!(ids, (0..7).collect::<Vec<_>>());
    for t in &out.dataset {
        assert_eq!(replay(&env, t).unwrap(), t.observations);
    }
}

#[test]
fn active_config_validation() {
    let env = short_env();
    let (m, p) = tiny_model(&env);
    let cfg = ActiveConfig { warmup_episodes: 0, ..tiny_active(ActiveMode::Lockstep) };
    assert!(matches!(run_active(&env, &m, p, &cfg, 0), Err(CollectError::InvalidConfig(_))));
}
