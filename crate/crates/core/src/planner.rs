//! Gradient-based shooting MPC over the learned predictor.
//!
//! Controls are optimized with Adam and projected back onto the box and
//! slew-rate constraints after every step; the best feasible iterate wins.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::collect::{clip_box, ou_step, CollectError, OuState};
use crate::data::Trajectory;
use crate::diffcore::{Adam, AdamConfig, Array, DiffError, Tape, Var};
use crate::entropy::mixture_entropies;
use crate::env::{EnvConfig, GripperEnv};
use crate::nn::TapeState;
use crate::preco::{HiddenState, PrecoError, PrecoModel, PrecoParams, TapeMixture};

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Model(#[from] PrecoError),
    #[error("unknown cost kind '{0}' (expected entropy_max, entropy_min or touch_max)")]
    UnknownCost(String),
    #[error("invalid planner setting: {0}")]
    Invalid(String),
}

/// Feasible set: `‖u_t‖∞ ≤ box`, `‖u_t - u_{t-1}‖∞ ≤ slew`, `u_0` = `reference`.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanConstraints {
    pub box_limit: f64,
    pub slew_limit: f64,
    pub reference: Vec<f64>,
}

impl PlanConstraints {
    pub fn new(reference: Vec<f64>) -> Self {
        Self { box_limit: 1.0, slew_limit: 0.1, reference }
    }

    pub fn is_feasible(&self, u: &[Vec<f64>]) -> bool {
        let mut prev = self.reference.as_slice();
        for ut in u {
            for (v, p) in ut.iter().zip(prev) {
                if v.abs() > self.box_limit || *v < p - self.slew_limit || *v > p + self.slew_limit {
                    return false;
                }
            }
            prev = ut;
        }
        true
    }
}

/// Box clip, then one forward pass clamping each step into the slew band of
/// the previous one.
pub fn project_controls(u: &[Vec<f64>], c: &PlanConstraints) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(u.len());
    let mut prev = c.reference.clone();
    for ut in u {
        let next: Vec<f64> = ut
            .iter()
            .zip(&prev)
            .map(|(&v, &p)| {
                let b = v.clamp(-c.box_limit, c.box_limit);
                b.clamp(p - c.slew_limit, p + c.slew_limit)
            })
            .collect();
        prev.clone_from(&next);
        out.push(next);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKind {
    EntropyMax,
    EntropyMin,
    TouchMax,
}

impl FromStr for CostKind {
    type Err = PlanError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "entropy_max" => Ok(Self::EntropyMax),
            "entropy_min" => Ok(Self::EntropyMin),
            "touch_max" => Ok(Self::TouchMax),
            other => Err(PlanError::UnknownCost(other.into())),
        }
    }
}

impl fmt::Display for CostKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::EntropyMax => "entropy_max",
            Self::EntropyMin => "entropy_min",
            Self::TouchMax => "touch_max",
        })
    }
}

/// Per-step cost with unit weight. `touch_dims` locates the touch sensors in
/// the observation vector.
#[derive(Clone, Debug, PartialEq)]
pub struct CostSpec {
    pub kind: CostKind,
    pub touch_dims: Range<usize>,
}

impl CostSpec {
    pub fn new(kind: CostKind, env: &EnvConfig) -> Self {
        Self { kind, touch_dims: env.touch_dims() }
    }

    /// Total cost of a decoded mixture covering `rows / dims` states.
    pub fn mixture_cost(&self, tape: &mut Tape, mix: &TapeMixture, dims: usize) -> Result<Var, DiffError> {
        match self.kind {
            CostKind::EntropyMax | CostKind::EntropyMin => {
                let h = mixture_entropies(tape, mix)?;
                let total = tape.sum(h)?;
                let sign = if self.kind == CostKind::EntropyMax { -1.0 } else { 1.0 };
                tape.scale(total, sign)
            }
            CostKind::TouchMax => {
                let m = tape.shape(mix.means)[1];
                let mask: Vec<f64> = (0..mix.rows)
                    .flat_map(|r| {
                        let on = if self.touch_dims.contains(&(r % dims)) { -1.0 } else { 0.0 };
                        std::iter::repeat_n(on, m)
                    })
                    .collect();
                let mask = tape.constant(Array::matrix(mix.rows, m, mask));
                let expected = tape.mul(mix.weights, mix.means)?;
                let picked = tape.mul(expected, mask)?;
                tape.sum(picked)
            }
        }
    }
}

/// `C(h, u)` for one predicted state.
pub fn step_cost(model: &PrecoModel, params: &PrecoParams, h: &HiddenState, cost: &CostSpec) -> Result<f64, PlanError> {
    let mut tape = Tape::new();
    let p = params.bind_const(&mut tape);
    let hv = tape.constant(Array::matrix(1, h.output.len(), h.output.clone()));
    let mix = model.decode_tape(&mut tape, &p, hv)?;
    let c = cost.mixture_cost(&mut tape, &mix, model.obs_dim)?;
    Ok(tape.value(c).item())
}

/// A differentiable objective over a `[T, F]` control sequence.
pub trait Objective {
    fn action_dim(&self) -> usize;
    fn record(&self, tape: &mut Tape, u: Var) -> Result<Var, PlanError>;
}

/// Predictor rollout from `h_init`, summed step costs.
pub struct RolloutObjective<'a> {
    pub model: &'a PrecoModel,
    pub params: &'a PrecoParams,
    pub h_init: &'a HiddenState,
    pub cost: &'a CostSpec,
}

impl RolloutObjective<'_> {
    /// Output states `[T, H]` of the rollout under `u`.
    pub fn rollout_tape(&self, tape: &mut Tape, p: &[Var], u: Var) -> Result<Var, DiffError> {
        let horizon = tape.shape(u)[0];
        let n = self.h_init.output.len();
        let mut s = TapeState {
            h: tape.constant(Array::matrix(1, n, self.h_init.output.clone())),
            c: tape.constant(Array::matrix(1, n, self.h_init.memory.clone())),
        };
        let emb = self.model.embed_controls(tape, p, u)?;
        let mut hs = Vec::with_capacity(horizon);
        for t in 0..horizon {
            let e = tape.slice(emb, 0, t, t + 1)?;
            s = self.model.predict_embedded(tape, p, s, e)?;
            hs.push(s.h);
        }
        tape.concat(&hs, 0)
    }
}

impl Objective for RolloutObjective<'_> {
    fn action_dim(&self) -> usize {
        self.model.action_dim
    }

    fn record(&self, tape: &mut Tape, u: Var) -> Result<Var, PlanError> {
        let p = self.params.bind_const(tape);
        let hs = self.rollout_tape(tape, &p, u)?;
        let mix = self.model.decode_tape(tape, &p, hs)?;
        Ok(self.cost.mixture_cost(tape, &mix, self.model.obs_dim)?)
    }
}

fn to_array(u: &[Vec<f64>]) -> Array {
    let f = u.first().map_or(0, Vec::len);
    Array::matrix(u.len(), f, u.iter().flatten().copied().collect())
}

fn to_rows(a: &Array) -> Vec<Vec<f64>> {
    let (r, _) = a.dims2().expect("controls are [T, F]");
    (0..r).map(|i| a.row(i).to_vec()).collect()
}

/// Objective value and gradient at `u`.
pub fn evaluate(obj: &dyn Objective, u: &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>), PlanError> {
    let mut tape = Tape::new();
    let uv = tape.input("u", to_array(u))?;
    let c = obj.record(&mut tape, uv)?;
    let value = tape.value(c).item();
    let mut g = tape.backward(c)?;
    let grad = g.take_or_zeros(uv, tape.shape(uv));
    Ok((value, to_rows(&grad)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerConfig {
    pub horizon: usize,
    pub iters: usize,
    pub step_size: f64,
    pub box_limit: f64,
    pub slew_limit: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self { horizon: 30, iters: 25, step_size: 0.05, box_limit: 1.0, slew_limit: 0.1 }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<(), PlanError> {
        if self.horizon == 0 {
            return Err(PlanError::Invalid("horizon must be >= 1".into()));
        }
        if !(self.step_size > 0.0 && self.box_limit > 0.0 && self.slew_limit > 0.0) {
            return Err(PlanError::Invalid("step_size and limits must be positive".into()));
        }
        Ok(())
    }

    pub fn constraints(&self, reference: Vec<f64>) -> PlanConstraints {
        PlanConstraints { box_limit: self.box_limit, slew_limit: self.slew_limit, reference }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanResult {
    pub controls: Vec<Vec<f64>>,
    /// Predicted states along `controls`; empty for objectives without a model.
    pub states: Vec<HiddenState>,
    /// Objective at every visited iterate, starting with the projected init.
    pub trace: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

/// Adam with post-step projection. Returns the best feasible iterate.
pub fn optimize(
    obj: &dyn Objective,
    init: &[Vec<f64>],
    constraints: &PlanConstraints,
    iters: usize,
    step_size: f64,
) -> Result<PlanResult, PlanError> {
    if init.is_empty() {
        return Err(PlanError::Invalid("horizon must be >= 1".into()));
    }
    if init.iter().any(|u| u.len() != obj.action_dim()) || constraints.reference.len() != obj.action_dim() {
        return Err(PlanError::Invalid("control width differs from the action dimension".into()));
    }
    let mut adam = Adam::new(AdamConfig::with_lr(step_size));
    let mut u = project_controls(init, constraints);
    let mut trace = Vec::with_capacity(iters + 1);
    let mut best = (f64::INFINITY, u.clone());
    for i in 0..=iters {
        let (value, grad) = evaluate(obj, &u)?;
        trace.push(value);
        if value < best.0 {
            best = (value, u.clone());
        }
        if i == iters {
            break;
        }
        let mut params = [to_array(&u)];
        adam.step(&mut params, &[to_array(&grad)])?;
        u = project_controls(&to_rows(&params[0]), constraints);
    }
    Ok(PlanResult { controls: best.1, states: Vec::new(), trace, objective: best.0, iterations: iters })
}

/// Plans a control sequence through the learned predictor from `h_init`.
pub fn plan(
    model: &PrecoModel,
    params: &PrecoParams,
    h_init: &HiddenState,
    cost: &CostSpec,
    config: &PlannerConfig,
    init: &[Vec<f64>],
    reference: Vec<f64>,
) -> Result<PlanResult, PlanError> {
    config.validate()?;
    let obj = RolloutObjective { model, params, h_init, cost };
    let mut res = optimize(&obj, init, &config.constraints(reference), config.iters, config.step_size)?;
    res.states = model.rollout(params, h_init, &res.controls)?;
    Ok(res)
}

/// Previous solution shifted one step left, last entry duplicated.
pub fn warm_start(previous: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut next: Vec<Vec<f64>> = previous.iter().skip(1).cloned().collect();
    if let Some(last) = previous.last() {
        next.push(last.clone());
    }
    next
}

/// Correlated exploration noise added to executed controls.
pub struct MpcNoise<'r, R: Rng> {
    pub ou: OuState,
    pub rng: &'r mut R,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MpcOutcome {
    pub trajectory: Trajectory,
    /// Objective trace of every solve, one per environment step.
    pub traces: Vec<Vec<f64>>,
    /// Initial control sequence handed to each solve.
    pub warm_starts: Vec<Vec<Vec<f64>>>,
}

/// Receding-horizon control of one episode: filter, plan, execute the first
/// control, repeat.
#[allow(clippy::too_many_arguments)]
pub fn mpc_episode<R: Rng>(
    env: &EnvConfig,
    episode_id: u64,
    seed: u64,
    model: &PrecoModel,
    params: &PrecoParams,
    cost: &CostSpec,
    config: &PlannerConfig,
    mut noise: Option<MpcNoise<'_, R>>,
) -> Result<MpcOutcome, CollectError> {
    config.validate()?;
    let f = env.num_fingers;
    if model.action_dim != f || model.obs_dim != env.obs_dim() {
        return Err(PrecoError::LayoutMismatch("model and environment widths differ".into()).into());
    }
    let mut gripper = GripperEnv::new(env.clone(), seed)?;
    let label = gripper.label();
    let mut h = HiddenState::zeros(model.hidden_size());
    let mut prev_u = vec![0.0; f];
    let mut nominal = vec![prev_u.clone(); config.horizon];
    let (mut actions, mut observations) = (Vec::new(), Vec::new());
    let mut traces = Vec::new();
    let mut warm_starts = Vec::new();
    for _ in 0..env.episode_length {
        warm_starts.push(nominal.clone());
        let res = plan(model, params, &h, cost, config, &nominal, prev_u.clone())?;
        let mut u = res.controls[0].clone();
        if let Some(n) = noise.as_mut() {
            n.ou = ou_step(&n.ou, n.rng);
            for (v, e) in u.iter_mut().zip(&n.ou.noise) {
                *v += e;
            }
            clip_box(&mut u);
            u = project_controls(&[u], &config.constraints(prev_u.clone())).remove(0);
        }
        let x = gripper.step(&u).into_vec();
        let hp = model.predictor_step(params, &h, &u)?;
        h = model.corrector_step(params, &hp, &x)?;
        nominal = warm_start(&res.controls);
        traces.push(res.trace);
        prev_u.clone_from(&u);
        actions.push(u);
        observations.push(x);
    }
    let trajectory = Trajectory { episode_id, seed, actions, observations, label, markers: Vec::new() };
    Ok(MpcOutcome { trajectory, traces, warm_starts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::grad_check;
    use crate::preco::{EmbedShape, HeadShape, PrecoConfig};

    /// `h_{t+1} = h_t`, cost `Σ_t ‖u_t - u*_t‖²`.
    struct Quadratic {
        target: Vec<Vec<f64>>,
    }

    impl Objective for Quadratic {
        fn action_dim(&self) -> usize {
            self.target[0].len()
        }
        fn record(&self, tape: &mut Tape, u: Var) -> Result<Var, PlanError> {
            let t = tape.constant(to_array(&self.target));
            let d = tape.sub(u, t)?;
            let d2 = tape.mul(d, d)?;
            Ok(tape.sum(d2)?)
        }
    }

    fn tiny_model() -> (PrecoModel, PrecoParams) {
        let e = EmbedShape { depth: 1, hidden: 6, out: 6 };
        let h = HeadShape { depth: 1, hidden: 6 };
        let config = PrecoConfig {
            control_embed: e,
            sensor_embed: e,
            core_hidden_size: 6,
            mean_head: h,
            stddev_head: h,
            mixture_head: h,
            ..PrecoConfig::default()
        };
        PrecoModel::init(config, 4, 16, 9).unwrap()
    }

    #[test]
    fn projection_examples() {
        let c = PlanConstraints::new(vec![0.0]);
        assert_eq!(project_controls(&[vec![1.5], vec![1.5]], &c), vec![vec![0.1], vec![0.2]]);
        assert_eq!(project_controls(&[vec![0.0], vec![0.5]], &c), vec![vec![0.0], vec![0.1]]);
        let feasible = vec![vec![0.05], vec![0.1], vec![0.02]];
        assert_eq!(project_controls(&feasible, &c), feasible);
    }

    #[test]
    fn projection_is_always_feasible() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let r: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let u: Vec<Vec<f64>> = (0..8).map(|_| (0..3).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
            let c = PlanConstraints::new(r);
            let p = project_controls(&u, &c);
            assert!(c.is_feasible(&p));
            assert_eq!(project_controls(&p, &c), p);
        }
    }

    #[test]
    fn convex_stub_recovers_optimum() {
        let target: Vec<Vec<f64>> = (0..6).map(|t| vec![0.08 * t as f64, -0.05 * t as f64]).collect();
        let obj = Quadratic { target: target.clone() };
        let c = PlanConstraints::new(vec![0.0, 0.0]);
        assert!(c.is_feasible(&target));
        let init = vec![vec![0.0, 0.0]; 6];
        let res = optimize(&obj, &init, &c, 500, 0.05).unwrap();
        let err = res.controls.iter().flatten().zip(target.iter().flatten()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-3, "{err}");
        assert!(res.objective <= res.trace[0]);
        assert!(c.is_feasible(&res.controls));
    }

    #[test]
    fn zero_iterations_return_projected_init() {
        let obj = Quadratic { target: vec![vec![0.0]; 2] };
        let c = PlanConstraints::new(vec![0.0]);
        let res = optimize(&obj, &[vec![1.5], vec![1.5]], &c, 0, 0.05).unwrap();
        assert_eq!(res.controls, vec![vec![0.1], vec![0.2]]);
        assert_eq!(res.trace.len(), 1);
    }

    #[test]
    fn cost_kinds() {
        let (m, p) = tiny_model();
        let env = EnvConfig::default();
        let h = m.predictor_step(&p, &HiddenState::zeros(6), &[0.1, 0.2, -0.3, 0.4]).unwrap();
        let max = step_cost(&m, &p, &h, &CostSpec::new(CostKind::EntropyMax, &env)).unwrap();
        let min = step_cost(&m, &p, &h, &CostSpec::new(CostKind::EntropyMin, &env)).unwrap();
        assert_eq!(max, -min);
        let ent = crate::entropy::prediction_entropy(&m, &p, &h).unwrap();
        assert!((min - ent).abs() < 1e-12);
        assert!("entropy_mid".parse::<CostKind>().is_err());
        for k in [CostKind::EntropyMax, CostKind::EntropyMin, CostKind::TouchMax] {
            assert_eq!(k.to_string().parse::<CostKind>().unwrap(), k);
        }
    }

    #[test]
    fn touch_cost_arithmetic() {
        // Single component, every mean 2: four touch dims give -8.
        let mut tape = Tape::new();
        let rows = 16;
        let c = |t: &mut Tape, v: f64| t.constant(Array::full(&[rows, 1], v));
        let mix = TapeMixture { logits: c(&mut tape, 0.0), weights: c(&mut tape, 1.0), means: c(&mut tape, 2.0), stddevs: c(&mut tape, 1.0), rows };
        let cost = CostSpec::new(CostKind::TouchMax, &EnvConfig::default());
        let v = cost.mixture_cost(&mut tape, &mix, 16).unwrap();
        assert_eq!(tape.value(v).item(), -8.0);
    }

    #[test]
    fn cost_gradients() {
        let (m, p) = tiny_model();
        let env = EnvConfig::default();
        let h = m.predictor_step(&p, &HiddenState::zeros(6), &[0.3, 0.2, -0.3, 0.1]).unwrap();
        let u0 = Array::matrix(3, 4, (0..12).map(|i| 0.07 * i as f64 - 0.4).collect());
        for kind in [CostKind::EntropyMax, CostKind::EntropyMin, CostKind::TouchMax] {
            let cost = CostSpec::new(kind, &env);
            let obj = RolloutObjective { model: &m, params: &p, h_init: &h, cost: &cost };
            let err = grad_check(
                |t, v| obj.record(t, v[0]).map_err(|e| match e {
                    PlanError::Diff(d) => d,
                    other => panic!("{other}"),
                }),
                std::slice::from_ref(&u0),
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-4, "{kind}: {err}");
        }
    }

    #[test]
    fn warm_start_shifts() {
        let prev = vec![vec![1.0], vec![2.0], vec![3.0]];
        assert_eq!(warm_start(&prev), vec![vec![2.0], vec![3.0], vec![3.0]]);
    }

    #[test]
    fn mpc_episode_is_feasible_and_reproducible() {
        use rand::SeedableRng;
        let (m, p) = tiny_model();
        let env = EnvConfig { episode_length: 8, ..EnvConfig::default() };
        let cfg = PlannerConfig { horizon: 4, iters: 3, ..PlannerConfig::default() };
        let cost = CostSpec::new(CostKind::EntropyMax, &env);
        let run = |noisy: bool| {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
            let noise = noisy.then(|| MpcNoise { ou: OuState::new(4), rng: &mut rng });
            mpc_episode(&env, 0, 3, &m, &p, &cost, &cfg, noise).unwrap()
        };
        for noisy in [false, true] {
            let a = run(noisy);
            let b = run(noisy);
            assert_eq!(a, b);
            let c = PlanConstraints::new(vec![0.0; 4]);
            assert!(c.is_feasible(&a.trajectory.actions));
            assert_eq!(a.trajectory.len(), 8);
            assert_eq!(a.traces.len(), 8);
            // The warm start of step s+1 is the shifted solution of step s.
            let first = plan(&m, &p, &HiddenState::zeros(6), &cost, &cfg, &a.warm_starts[0], vec![0.0; 4]).unwrap();
            assert_eq!(a.warm_starts[1], warm_start(&first.controls));
            if !noisy {
                assert_eq!(a.trajectory.actions[0], first.controls[0]);
            }
        }
    }
}
