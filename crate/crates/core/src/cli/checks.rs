//! Self-checks run by the `entropy-check` and `gradcheck` verbs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Episode;
use crate::diffcore::{grad_check, Array, DiffError};
use crate::env::EnvConfig;
use crate::planner::{CostKind, CostSpec, PlanError, RolloutObjective};
use crate::preco::{EmbedShape, HeadShape, HiddenState, PrecoConfig, PrecoError, PrecoModel};

/// Closed-form versus quadrature tolerance of `entropy-check`.
pub const ENTROPY_TOLERANCE: f64 = 1e-6;
/// Relative gradient error tolerance of `gradcheck`.
pub const GRADIENT_TOLERANCE: f64 = 1e-4;
/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

fn toy_config(hidden: usize) -> PrecoConfig {
    let e = EmbedShape { depth: 1, hidden, out: hidden };
    let h = HeadShape { depth: 1, hidden };
    PrecoConfig {
        control_embed: e,
        sensor_embed: e,
        core_hidden_size: hidden,
        mean_head: h,
        stddev_head: h,
        mixture_head: h,
        overshoot_length: 2,
        ..PrecoConfig::default()
    }
}

fn preco_diff(e: PrecoError) -> DiffError {
    match e {
        PrecoError::Diff(d) => d,
        other => DiffError::NonFinite { node: other.to_string() },
    }
}

fn plan_diff(e: PlanError) -> DiffError {
    match e {
        PlanError::Diff(d) => d,
        other => DiffError::NonFinite { node: other.to_string() },
    }
}

/// Relative gradient error of the overshooting loss on a random `T = 3`,
/// `D = 4`, hidden-8 problem with two action channels.
pub fn overshoot_gradient_error(seed: u64) -> Result<f64, PrecoError> {
    let (model, params) = PrecoModel::init(toy_config(8), 2, 4, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |n: usize| -> Vec<Vec<f64>> { (0..3).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect() };
    let (u, x) = (draw(2), draw(4));
    let ep = [Episode { actions: &u, observations: &x }];
    let k = model.config.overshoot_length;
    Ok(grad_check(|t, v| model.overshoot_loss_tape(t, v, &ep, k).map_err(preco_diff), params.arrays(), FD_STEP)?)
}

/// Relative gradient error of each planner cost with respect to the control
/// sequence, for a small model sized to the default gripper.
pub fn planner_gradient_errors(seed: u64) -> Result<Vec<(CostKind, f64)>, PlanError> {
    let env = EnvConfig::default();
    let (model, params) = PrecoModel::init(toy_config(6), env.num_fingers, env.obs_dim(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u0: Vec<f64> = (0..env.num_fingers).map(|_| rng.random_range(-0.5..0.5)).collect();
    let h = model.predictor_step(&params, &HiddenState::zeros(model.hidden_size()), &u0)?;
    let controls = Array::matrix(3, env.num_fingers, (0..3 * env.num_fingers).map(|_| rng.random_range(-0.5..0.5)).collect());
    [CostKind::EntropyMax, CostKind::EntropyMin, CostKind::TouchMax]
        .into_iter()
        .map(|kind| {
            let cost = CostSpec::new(kind, &env);
            let obj = RolloutObjective { model: &model, params: &params, h_init: &h, cost: &cost };
            let err = grad_check(
                |t, v| crate::planner::Objective::record(&obj, t, v[0]).map_err(plan_diff),
                std::slice::from_ref(&controls),
                FD_STEP,
            )?;
            Ok((kind, err))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradients_pass() {
        assert!(overshoot_gradient_error(0).unwrap() < GRADIENT_TOLERANCE);
        for (kind, err) in planner_gradient_errors(0).unwrap() {
            assert!(err < GRADIENT_TOLERANCE, "{kind}: {err}");
        }
    }
}
