//! Predictor-corrector (PreCo) dynamics model.
//!
//! Two single-layer LSTM cores share one hidden-state space: the predictor
//! advances the state under an action, the corrector folds in an observation.
//! A decoder maps the output part of the state to an independent Gaussian
//! mixture per observation dimension. Training maximizes the likelihood of
//! single-step predictions and of multi-step predictor rollouts launched from
//! every timestep ("overshooting").
//!
//! Nothing in this module can see a [`crate::env::ObjectSpec`]; it only
//! consumes label-free [`Episode`] views.

mod loss;
mod train;

pub use loss::{mixture_nll, nll, MarginalBaseline};
pub use train::{train, Trainer, TrainOutcome};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Episode;
use crate::diffcore::{Array, DiffError, Tape, Var};
use crate::entropy::Mixture1D;
use crate::nn::{Initializer, LstmCell, Mlp, ParamSet, TapeState};

pub type PrecoParams = ParamSet;

#[derive(Debug, Error, PartialEq)]
pub enum PrecoError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Entropy(#[from] crate::entropy::EntropyError),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("episode has no steps")]
    EmptyEpisode,
    #[error("episodes must share one length and layout: {0}")]
    Ragged(String),
    #[error("parameters do not match the model layout: {0}")]
    LayoutMismatch(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedShape {
    pub depth: usize,
    pub hidden: usize,
    pub out: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadShape {
    pub depth: usize,
    pub hidden: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrecoConfig {
    pub control_embed: EmbedShape,
    pub sensor_embed: EmbedShape,
    pub core_hidden_size: usize,
    pub mean_head: HeadShape,
    pub stddev_head: HeadShape,
    pub mixture_head: HeadShape,
    pub num_components: usize,
    pub overshoot_length: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub train_steps: usize,
    pub grad_clip: f64,
    pub stddev_floor: f64,
    /// Include likelihood terms decoded from corrector states.
    pub decode_corrector: bool,
}

impl Default for PrecoConfig {
    /// Desk-scale defaults.
    fn default() -> Self {
        Self {
            control_embed: EmbedShape { depth: 1, hidden: 32, out: 32 },
            sensor_embed: EmbedShape { depth: 1, hidden: 32, out: 32 },
            core_hidden_size: 64,
            mean_head: HeadShape { depth: 1, hidden: 32 },
            stddev_head: HeadShape { depth: 1, hidden: 32 },
            mixture_head: HeadShape { depth: 1, hidden: 32 },
            num_components: 2,
            overshoot_length: 15,
            learning_rate: 2.5e-4,
            batch_size: 16,
            train_steps: 2000,
            grad_clip: 5.0,
            stddev_floor: 1e-3,
            decode_corrector: true,
        }
    }
}

impl PrecoConfig {
    /// Smaller, faster variant for single-core runs: 48 hidden units, 32-wide
    /// embeddings and heads, overshooting depth 10, batch 8, learning rate 1e-3,
    /// 3000 updates.
    pub fn compact() -> Self {
        let e = EmbedShape { depth: 1, hidden: 32, out: 32 };
        let h = HeadShape { depth: 1, hidden: 32 };
        Self {
            control_embed: e,
            sensor_embed: e,
            core_hidden_size: 48,
            mean_head: h,
            stddev_head: h,
            mixture_head: h,
            overshoot_length: 10,
            batch_size: 8,
            learning_rate: 1e-3,
            train_steps: 3000,
            ..Self::default()
        }
    }

    /// 128-wide everywhere, overshooting 30 steps.
    pub fn large() -> Self {
        let e = EmbedShape { depth: 1, hidden: 128, out: 128 };
        let h = HeadShape { depth: 1, hidden: 128 };
        Self {
            control_embed: e,
            sensor_embed: e,
            core_hidden_size: 128,
            mean_head: h,
            stddev_head: h,
            mixture_head: h,
            num_components: 2,
            overshoot_length: 30,
            learning_rate: 0.00025,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), PrecoError> {
        let bad = |m: &str| Err(PrecoError::InvalidConfig(m.into()));
        if self.num_components == 0 {
            return bad("num_components must be >= 1");
        }
        if self.overshoot_length == 0 {
            return bad("overshoot_length must be >= 1");
        }
        if !(self.stddev_floor > 0.0) {
            return bad("stddev_floor must be > 0");
        }
        if self.core_hidden_size == 0 || self.control_embed.out == 0 || self.sensor_embed.out == 0 {
            return bad("layer widths must be >= 1");
        }
        if self.batch_size == 0 || !(self.learning_rate > 0.0) || !(self.grad_clip > 0.0) {
            return bad("batch_size, learning_rate and grad_clip must be positive");
        }
        Ok(())
    }
}

/// Recurrent state: output part and memory part.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenState {
    pub output: Vec<f64>,
    pub memory: Vec<f64>,
}

impl HiddenState {
    pub fn zeros(size: usize) -> Self {
        Self { output: vec![0.0; size], memory: vec![0.0; size] }
    }

    /// Output and memory parts concatenated.
    pub fn features(&self) -> Vec<f64> {
        let mut v = self.output.clone();
        v.extend_from_slice(&self.memory);
        v
    }

    pub fn is_finite(&self) -> bool {
        self.output.iter().chain(&self.memory).all(|v| v.is_finite())
    }

    fn bind(&self, tape: &mut Tape) -> TapeState {
        let n = self.output.len();
        TapeState {
            h: tape.constant(Array::matrix(1, n, self.output.clone())),
            c: tape.constant(Array::matrix(1, n, self.memory.clone())),
        }
    }

    fn read(tape: &Tape, s: TapeState) -> Self {
        Self { output: tape.value(s.h).data().to_vec(), memory: tape.value(s.c).data().to_vec() }
    }
}

/// Per-dimension mixture parameters, each stored `[D, M]` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureParams {
    pub dims: usize,
    pub components: usize,
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub stddevs: Vec<f64>,
}

impl MixtureParams {
    pub fn dim(&self, d: usize) -> Mixture1D {
        let r = d * self.components..(d + 1) * self.components;
        Mixture1D {
            weights: self.weights[r.clone()].to_vec(),
            means: self.means[r.clone()].to_vec(),
            stddevs: self.stddevs[r].to_vec(),
        }
    }

    /// Mixture mean of every dimension.
    pub fn expected(&self) -> Vec<f64> {
        (0..self.dims)
            .map(|d| {
                let m = self.dim(d);
                m.weights.iter().zip(&m.means).map(|(a, b)| a * b).sum()
            })
            .collect()
    }
}

/// Decoder output on a tape. Each field is `[N·D, M]`; row `n·D + d`.
#[derive(Clone, Copy, Debug)]
pub struct TapeMixture {
    pub logits: Var,
    pub weights: Var,
    pub means: Var,
    pub stddevs: Var,
    pub rows: usize,
}

/// Layer layout of a PreCo model. Parameter values live in [`PrecoParams`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrecoModel {
    pub config: PrecoConfig,
    pub action_dim: usize,
    pub obs_dim: usize,
    control_embed: Mlp,
    sensor_embed: Mlp,
    predictor: LstmCell,
    corrector: LstmCell,
    mean_head: Mlp,
    stddev_head: Mlp,
    mixture_head: Mlp,
}

impl PrecoModel {
    /// Builds the layout and a freshly initialized parameter set.
    pub fn init(config: PrecoConfig, action_dim: usize, obs_dim: usize, seed: u64) -> Result<(Self, PrecoParams), PrecoError> {
        config.validate()?;
        let c = &config;
        let h = c.core_hidden_size;
        let dm = obs_dim * c.num_components;
        let mut init = Initializer::new(seed);
        let ce = c.control_embed;
        let se = c.sensor_embed;
        let control_embed = init.mlp("control_embed", action_dim, ce.depth, ce.hidden, ce.out, true);
        let sensor_embed = init.mlp("sensor_embed", obs_dim, se.depth, se.hidden, se.out, true);
        let predictor = init.lstm("predictor", ce.out, h);
        let corrector = init.lstm("corrector", se.out, h);
        let mean_head = init.mlp("mean_head", h, c.mean_head.depth, c.mean_head.hidden, dm, false);
        let stddev_head = init.mlp("stddev_head", h, c.stddev_head.depth, c.stddev_head.hidden, dm, false);
        let mixture_head = init.mlp("mixture_head", h, c.mixture_head.depth, c.mixture_head.hidden, dm, false);
        let model = Self {
            config,
            action_dim,
            obs_dim,
            control_embed,
            sensor_embed,
            predictor,
            corrector,
            mean_head,
            stddev_head,
            mixture_head,
        };
        Ok((model, init.params))
    }

    pub fn hidden_size(&self) -> usize {
        self.config.core_hidden_size
    }

    /// Checks that `params` has this model's names and shapes.
    pub fn check_params(&self, params: &PrecoParams) -> Result<(), PrecoError> {
        let (_, reference) = Self::init(self.config.clone(), self.action_dim, self.obs_dim, 0)?;
        if reference.names() != params.names() {
            return Err(PrecoError::LayoutMismatch("parameter names differ".into()));
        }
        for ((n, a), b) in reference.names().iter().zip(reference.arrays()).zip(params.arrays()) {
            if a.shape() != b.shape() {
                return Err(PrecoError::LayoutMismatch(format!("{n}: {:?} vs {:?}", a.shape(), b.shape())));
            }
        }
        Ok(())
    }

    pub fn zero_state(&self, tape: &mut Tape, rows: usize) -> TapeState {
        self.predictor.zero_state(tape, rows)
    }

    pub fn embed_controls(&self, tape: &mut Tape, p: &[Var], u: Var) -> Result<Var, DiffError> {
        self.control_embed.apply(tape, p, u)
    }

    pub fn embed_sensors(&self, tape: &mut Tape, p: &[Var], x: Var) -> Result<Var, DiffError> {
        self.sensor_embed.apply(tape, p, x)
    }

    /// Predictor core on an already embedded control.
    pub fn predict_embedded(&self, tape: &mut Tape, p: &[Var], s: TapeState, u_emb: Var) -> Result<TapeState, DiffError> {
        self.predictor.step(tape, p, s, u_emb)
    }

    /// Corrector core on an already embedded observation.
    pub fn correct_embedded(&self, tape: &mut Tape, p: &[Var], s: TapeState, x_emb: Var) -> Result<TapeState, DiffError> {
        self.corrector.step(tape, p, s, x_emb)
    }

    pub fn predict(&self, tape: &mut Tape, p: &[Var], s: TapeState, u: Var) -> Result<TapeState, DiffError> {
        let e = self.embed_controls(tape, p, u)?;
        self.predict_embedded(tape, p, s, e)
    }

    pub fn correct(&self, tape: &mut Tape, p: &[Var], s: TapeState, x: Var) -> Result<TapeState, DiffError> {
        let e = self.embed_sensors(tape, p, x)?;
        self.correct_embedded(tape, p, s, e)
    }

    /// Decodes `[N, H]` output states into per-dimension mixtures.
    pub fn decode_tape(&self, tape: &mut Tape, p: &[Var], h: Var) -> Result<TapeMixture, DiffError> {
        let n = tape.shape(h)[0];
        let m = self.config.num_components;
        let rows = n * self.obs_dim;
        let mu = self.mean_head.apply(tape, p, h)?;
        let means = tape.reshape(mu, &[rows, m])?;
        let raw_sd = self.stddev_head.apply(tape, p, h)?;
        let raw_sd = tape.reshape(raw_sd, &[rows, m])?;
        let sp = tape.softplus(raw_sd)?;
        let floor = tape.constant(Array::full(&[rows, m], self.config.stddev_floor));
        let stddevs = tape.add(sp, floor)?;
        let logits = self.mixture_head.apply(tape, p, h)?;
        let logits = tape.reshape(logits, &[rows, m])?;
        let weights = tape.softmax(logits)?;
        Ok(TapeMixture { logits, weights, means, stddevs, rows })
    }

    /// One predictor step on a single state.
    pub fn predictor_step(&self, params: &PrecoParams, h: &HiddenState, u: &[f64]) -> Result<HiddenState, PrecoError> {
        self.single_step(params, h, u, true)
    }

    /// One corrector step on a single state.
    pub fn corrector_step(&self, params: &PrecoParams, h: &HiddenState, x: &[f64]) -> Result<HiddenState, PrecoError> {
        self.single_step(params, h, x, false)
    }

    fn single_step(&self, params: &PrecoParams, h: &HiddenState, input: &[f64], predictor: bool) -> Result<HiddenState, PrecoError> {
        if !h.is_finite() || input.iter().any(|v| !v.is_finite()) {
            return Err(DiffError::NonFinite { node: "state input".into() }.into());
        }
        let mut tape = Tape::new();
        let p = params.bind_const(&mut tape);
        let s = h.bind(&mut tape);
        let x = tape.constant(Array::matrix(1, input.len(), input.to_vec()));
        let out = if predictor { self.predict(&mut tape, &p, s, x)? } else { self.correct(&mut tape, &p, s, x)? };
        Ok(HiddenState::read(&tape, out))
    }

    pub fn decode(&self, params: &PrecoParams, h: &HiddenState) -> Result<MixtureParams, PrecoError> {
        let mut tape = Tape::new();
        let p = params.bind_const(&mut tape);
        let s = h.bind(&mut tape);
        let mix = self.decode_tape(&mut tape, &p, s.h)?;
        Ok(MixtureParams {
            dims: self.obs_dim,
            components: self.config.num_components,
            weights: tape.value(mix.weights).data().to_vec(),
            means: tape.value(mix.means).data().to_vec(),
            stddevs: tape.value(mix.stddevs).data().to_vec(),
        })
    }

    /// Open-loop predictor rollout; returns the `k` predicted states.
    pub fn rollout(&self, params: &PrecoParams, h0: &HiddenState, controls: &[Vec<f64>]) -> Result<Vec<HiddenState>, PrecoError> {
        let mut out = Vec::with_capacity(controls.len());
        let mut h = h0.clone();
        for u in controls {
            h = self.predictor_step(params, &h, u)?;
            out.push(h.clone());
        }
        Ok(out)
    }

    /// Teacher-forced filter: returns `(h^p_{t,0}, h^c_t)` for every step.
    pub fn filter(&self, params: &PrecoParams, ep: &Episode<'_>) -> Result<Vec<(HiddenState, HiddenState)>, PrecoError> {
        let mut h = HiddenState::zeros(self.hidden_size());
        let mut out = Vec::with_capacity(ep.len());
        for (u, x) in ep.actions.iter().zip(ep.observations) {
            let hp = self.predictor_step(params, &h, u)?;
            h = self.corrector_step(params, &hp, x)?;
            out.push((hp, h.clone()));
        }
        Ok(out)
    }

    /// Batched teacher-forced filter. Returns, per episode, a `[T, 2H]` array
    /// of corrector states (output part then memory part).
    pub fn filter_states(&self, params: &PrecoParams, episodes: &[Episode<'_>]) -> Result<Vec<Array>, PrecoError> {
        let t_len = check_batch(episodes, self)?;
        let b = episodes.len();
        let hs = self.hidden_size();
        let mut tape = Tape::new();
        let p = params.bind_const(&mut tape);
        let (u_all, x_all) = stack_time_major(episodes, t_len);
        let u_all = tape.constant(u_all);
        let x_all = tape.constant(x_all);
        let u_emb = self.embed_controls(&mut tape, &p, u_all)?;
        let x_emb = self.embed_sensors(&mut tape, &p, x_all)?;
        let mut s = self.zero_state(&mut tape, b);
        let mut feats = vec![Vec::with_capacity(t_len * 2 * hs); b];
        for t in 0..t_len {
            let ue = tape.slice(u_emb, 0, t * b, (t + 1) * b)?;
            let hp = self.predict_embedded(&mut tape, &p, s, ue)?;
            let xe = tape.slice(x_emb, 0, t * b, (t + 1) * b)?;
            s = self.correct_embedded(&mut tape, &p, hp, xe)?;
            let (hv, cv) = (tape.value(s.h), tape.value(s.c));
            for (i, f) in feats.iter_mut().enumerate() {
                f.extend_from_slice(hv.row(i));
                f.extend_from_slice(cv.row(i));
            }
        }
        Ok(feats.into_iter().map(|f| Array::matrix(t_len, 2 * hs, f)).collect())
    }
}

/// Validates a batch and returns the shared episode length.
pub(crate) fn check_batch(episodes: &[Episode<'_>], model: &PrecoModel) -> Result<usize, PrecoError> {
    let first = episodes.first().ok_or(PrecoError::EmptyDataset)?;
    let t = first.len();
    if t == 0 {
        return Err(PrecoError::EmptyEpisode);
    }
    for ep in episodes {
        if ep.len() != t || ep.observations.len() != t {
            return Err(PrecoError::Ragged(format!("expected {t} steps")));
        }
        if ep.actions.iter().any(|u| u.len() != model.action_dim) || ep.observations.iter().any(|x| x.len() != model.obs_dim) {
            return Err(PrecoError::Ragged("action/observation width".into()));
        }
    }
    Ok(t)
}

/// Stacks a batch into `[T·B, F]` and `[T·B, D]`, row `t·B + b`.
pub(crate) fn stack_time_major(episodes: &[Episode<'_>], t_len: usize) -> (Array, Array) {
    let b = episodes.len();
    let f = episodes[0].actions[0].len();
    let d = episodes[0].observations[0].len();
    let mut u = Vec::with_capacity(t_len * b * f);
    let mut x = Vec::with_capacity(t_len * b * d);
    for t in 0..t_len {
        for ep in episodes {
            u.extend_from_slice(&ep.actions[t]);
            x.extend_from_slice(&ep.observations[t]);
        }
    }
    (Array::matrix(t_len * b, f, u), Array::matrix(t_len * b, d, x))
}

#[cfg(test)]
mod tests;
