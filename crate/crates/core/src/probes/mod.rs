//! Diagnostic readouts over frozen dynamics states, the supervised baselines,
//! and the statistics used to compare them.

mod eval;

pub use eval::{
    bootstrap_band, eval_report, median, median_margin, pooled_win, win_probability, CdfRow, EvalReport, ModelLosses,
    ReportRow, WinStat,
};

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{episodes, Trajectory};
use crate::diffcore::{Adam, AdamConfig, Array, DiffError, Tape, Var};
use crate::env::Shape;
use crate::nn::{Initializer, LstmCell, Mlp, ParamSet};
use crate::preco::{PrecoError, PrecoModel, PrecoParams};

#[derive(Debug, Error, PartialEq)]
pub enum ProbeError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Model(#[from] PrecoError),
    #[error("orientation probes need rect or ellipse episodes; only discs were given")]
    OnlyDiscs,
    #[error("no episodes to train or evaluate on")]
    Empty,
    #[error("unknown {what} '{value}'")]
    Unknown { what: &'static str, value: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeTask {
    /// Three-way object class.
    Shape,
    /// `(sin 2φ, cos 2φ)` of the object angle; discs excluded.
    Orientation,
}

impl FromStr for ProbeTask {
    type Err = ProbeError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "shape" => Ok(Self::Shape),
            "orientation" => Ok(Self::Orientation),
            other => Err(ProbeError::Unknown { what: "task", value: other.into() }),
        }
    }
}

impl ProbeTask {
    pub fn outputs(self) -> usize {
        match self {
            Self::Shape => Shape::ALL.len(),
            Self::Orientation => 2,
        }
    }

    /// Episodes the task is defined on.
    pub fn subset(self, data: &[Trajectory]) -> Result<Vec<Trajectory>, ProbeError> {
        if data.is_empty() {
            return Err(ProbeError::Empty);
        }
        match self {
            Self::Shape => Ok(data.to_vec()),
            Self::Orientation => {
                let kept: Vec<Trajectory> = data.iter().filter(|t| t.label.shape != Shape::Disc).cloned().collect();
                if kept.is_empty() {
                    return Err(ProbeError::OnlyDiscs);
                }
                Ok(kept)
            }
        }
    }

    /// Target encoding of one episode's label.
    pub fn target(self, traj: &Trajectory) -> Vec<f64> {
        match self {
            Self::Shape => {
                let mut v = vec![0.0; 3];
                v[traj.label.shape.class_index()] = 1.0;
                v
            }
            Self::Orientation => {
                let a = 2.0 * traj.label.angle;
                vec![a.sin(), a.cos()]
            }
        }
    }

    /// Loss of one prediction: cross-entropy on logits, or squared error.
    pub fn loss(self, output: &[f64], target: &[f64]) -> f64 {
        match self {
            Self::Shape => {
                let lse = crate::diffcore::logsumexp(output).expect("non-empty logits");
                let picked: f64 = output.iter().zip(target).map(|(o, t)| o * t).sum();
                lse - picked
            }
            Self::Orientation => output.iter().zip(target).map(|(o, t)| (o - t).powi(2)).sum(),
        }
    }
}

impl fmt::Display for ProbeTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Shape => "shape",
            Self::Orientation => "orientation",
        })
    }
}

/// Orientation error in `[0, π/2]` between an encoded prediction and the true angle.
pub fn angular_error(output: &[f64], angle: f64) -> f64 {
    let predicted = 0.5 * output[0].atan2(output[1]);
    let d = (predicted - angle).rem_euclid(std::f64::consts::PI);
    d.min(std::f64::consts::PI - d).min(FRAC_PI_2)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeKind {
    /// Readout on frozen PreCo corrector states.
    Preco,
    /// Per-timestep readout on raw sensors.
    Mlp,
    /// Recurrent classifier trained end to end on the sensor sequence.
    Lstm,
    /// Recurrent classifier with frozen random recurrent weights.
    RandLstm,
}

impl FromStr for ProbeKind {
    type Err = ProbeError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "preco" => Ok(Self::Preco),
            "mlp" => Ok(Self::Mlp),
            "lstm" => Ok(Self::Lstm),
            "randlstm" => Ok(Self::RandLstm),
            other => Err(ProbeError::Unknown { what: "probe model", value: other.into() }),
        }
    }
}

impl fmt::Display for ProbeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Preco => "preco",
            Self::Mlp => "mlp",
            Self::Lstm => "lstm",
            Self::RandLstm => "randlstm",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub readout_hidden: usize,
    pub lstm_hidden: usize,
    pub learning_rate: f64,
    /// Updates for per-timestep readouts.
    pub readout_steps: usize,
    /// Rows per readout minibatch.
    pub readout_batch: usize,
    /// Updates for the recurrent baselines.
    pub sequence_steps: usize,
    /// Episodes per recurrent minibatch.
    pub sequence_batch: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            readout_hidden: 64,
            lstm_hidden: 64,
            learning_rate: 3e-3,
            readout_steps: 2000,
            readout_batch: 128,
            sequence_steps: 400,
            sequence_batch: 16,
        }
    }
}

/// Per-feature affine standardization fitted on training rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Array]) -> Self {
        let f = rows[0].dims2().expect("[T, F]").1;
        let mut sum = vec![0.0; f];
        let mut sq = vec![0.0; f];
        let mut n = 0.0;
        for a in rows {
            for r in a.data().chunks(f) {
                for j in 0..f {
                    sum[j] += r[j];
                    sq[j] += r[j] * r[j];
                }
                n += 1.0;
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq.iter().zip(&mean).map(|(q, m)| (q / n - m * m).max(0.0).sqrt().max(1e-3)).collect();
        Self { mean, std }
    }

    pub fn apply(&self, a: &Array) -> Array {
        let f = self.mean.len();
        let mut out = a.clone();
        for r in out.data_mut().chunks_mut(f) {
            for j in 0..f {
                r[j] = (r[j] - self.mean[j]) / self.std[j];
            }
        }
        out
    }
}

/// What a probe reads from an episode.
#[derive(Clone, Debug, PartialEq)]
pub enum Encoder {
    /// Frozen corrector states `[h, c]` of a dynamics model.
    Dynamics { model: Box<PrecoModel>, params: PrecoParams },
    /// Raw observations.
    Sensors,
}

impl Encoder {
    pub fn features(&self, data: &[Trajectory]) -> Result<Vec<Array>, ProbeError> {
        match self {
            Self::Dynamics { model, params } => extract_states(model, params, data),
            Self::Sensors => Ok(sensor_features(data)),
        }
    }
}

/// Teacher-forced corrector states, `[T, 2H]` per episode.
pub fn extract_states(model: &PrecoModel, params: &PrecoParams, data: &[Trajectory]) -> Result<Vec<Array>, ProbeError> {
    let mut out = Vec::with_capacity(data.len());
    for chunk in data.chunks(64) {
        out.extend(model.filter_states(params, &episodes(chunk))?);
    }
    Ok(out)
}

/// Observations as `[T, D]` arrays.
pub fn sensor_features(data: &[Trajectory]) -> Vec<Array> {
    data.iter()
        .map(|t| Array::matrix(t.len(), t.observations[0].len(), t.observations.iter().flatten().copied().collect()))
        .collect()
}

/// A trained diagnostic or baseline.
#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    pub kind: ProbeKind,
    pub task: ProbeTask,
    pub encoder: Encoder,
    pub norm: Standardizer,
    pub params: ParamSet,
    pub readout: Mlp,
    pub lstm: Option<LstmCell>,
    /// Final training loss of each update.
    pub losses: Vec<f64>,
}

impl Probe {
    /// Raw outputs, `[T, outputs]` per episode.
    pub fn predict(&self, data: &[Trajectory]) -> Result<Vec<Array>, ProbeError> {
        let feats: Vec<Array> = self.encoder.features(data)?.iter().map(|a| self.norm.apply(a)).collect();
        let mut out = Vec::with_capacity(feats.len());
        for chunk in feats.chunks(64) {
            let mut tape = Tape::new();
            let p = self.params.bind_const(&mut tape);
            let y = self.forward(&mut tape, &p, chunk)?;
            let (t_len, b) = (chunk[0].dims2().expect("[T, F]").0, chunk.len());
            let v = tape.value(y);
            let c = self.task.outputs();
            match self.lstm {
                Some(_) => {
                    for e in 0..b {
                        let rows = (0..t_len).flat_map(|t| v.row(t * b + e).to_vec()).collect();
                        out.push(Array::matrix(t_len, c, rows));
                    }
                }
                None => {
                    for e in 0..b {
                        out.push(Array::matrix(t_len, c, v.data()[e * t_len * c..(e + 1) * t_len * c].to_vec()));
                    }
                }
            }
        }
        Ok(out)
    }

    /// Per-episode, per-timestep loss.
    pub fn step_losses(&self, data: &[Trajectory]) -> Result<Vec<Vec<f64>>, ProbeError> {
        let preds = self.predict(data)?;
        Ok(data
            .iter()
            .zip(&preds)
            .map(|(traj, y)| {
                let target = self.task.target(traj);
                (0..traj.len()).map(|t| self.task.loss(y.row(t), &target)).collect()
            })
            .collect())
    }

    /// Per-episode, per-timestep orientation error in radians.
    pub fn angular_errors(&self, data: &[Trajectory]) -> Result<Vec<Vec<f64>>, ProbeError> {
        let preds = self.predict(data)?;
        Ok(data
            .iter()
            .zip(&preds)
            .map(|(traj, y)| (0..traj.len()).map(|t| angular_error(y.row(t), traj.label.angle)).collect())
            .collect())
    }

    /// Outputs for standardized episodes. Readouts return rows episode-major,
    /// recurrent models time-major.
    fn forward(&self, tape: &mut Tape, p: &[Var], feats: &[Array]) -> Result<Var, DiffError> {
        match self.lstm {
            None => {
                let x = stack_rows(feats);
                let x = tape.constant(x);
                self.readout.apply(tape, p, x)
            }
            Some(cell) => {
                let (t_len, f) = feats[0].dims2().expect("[T, F]");
                let b = feats.len();
                let mut rows = Vec::with_capacity(t_len * b * f);
                for t in 0..t_len {
                    for a in feats {
                        rows.extend_from_slice(a.row(t));
                    }
                }
                let x = tape.constant(Array::matrix(t_len * b, f, rows));
                let mut s = cell.zero_state(tape, b);
                let mut hs = Vec::with_capacity(t_len);
                for t in 0..t_len {
                    let xt = tape.slice(x, 0, t * b, (t + 1) * b)?;
                    s = cell.step(tape, p, s, xt)?;
                    hs.push(s.h);
                }
                let h = tape.concat(&hs, 0)?;
                self.readout.apply(tape, p, h)
            }
        }
    }

    fn frozen(&self) -> Vec<bool> {
        let mut frozen = vec![false; self.params.len()];
        if let (ProbeKind::RandLstm, Some(cell)) = (self.kind, self.lstm) {
            frozen[cell.gates.weight] = true;
            frozen[cell.gates.bias] = true;
        }
        frozen
    }
}

fn stack_rows(feats: &[Array]) -> Array {
    let f = feats[0].dims2().expect("[T, F]").1;
    let data: Vec<f64> = feats.iter().flat_map(|a| a.data().iter().copied()).collect();
    Array::matrix(data.len() / f, f, data)
}

/// Mean task loss over rows of `y` against `targets` (`[N, C]`).
fn task_loss(tape: &mut Tape, task: ProbeTask, y: Var, targets: Array) -> Result<Var, DiffError> {
    let n = targets.dims2().expect("[N, C]").0;
    let c = targets.dims2().expect("[N, C]").1;
    let t = tape.constant(targets);
    match task {
        ProbeTask::Shape => {
            let lse = tape.logsumexp(y)?;
            let picked = tape.mul(y, t)?;
            let ones = tape.constant(Array::full(&[c, 1], 1.0));
            let picked = tape.matmul(picked, ones)?;
            let picked = tape.reshape(picked, &[n])?;
            let l = tape.sub(lse, picked)?;
            tape.mean(l)
        }
        ProbeTask::Orientation => {
            let d = tape.sub(y, t)?;
            let d2 = tape.mul(d, d)?;
            let s = tape.sum(d2)?;
            tape.scale(s, 1.0 / n as f64)
        }
    }
}

fn build(kind: ProbeKind, task: ProbeTask, encoder: Encoder, norm: Standardizer, input: usize, config: &ProbeConfig, seed: u64) -> Probe {
    let mut init = Initializer::new(seed);
    let (lstm, read_in) = match kind {
        ProbeKind::Lstm | ProbeKind::RandLstm => (Some(init.lstm("probe.lstm", input, config.lstm_hidden)), config.lstm_hidden),
        _ => (None, input),
    };
    let readout = init.mlp("probe.readout", read_in, 1, config.readout_hidden, task.outputs(), false);
    Probe { kind, task, encoder, norm, params: init.params, readout, lstm, losses: Vec::new() }
}

fn fit(probe: &mut Probe, feats: &[Array], targets: &[Vec<f64>], config: &ProbeConfig, seed: u64) -> Result<(), ProbeError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut adam = Adam::new(AdamConfig::with_lr(config.learning_rate));
    let frozen = probe.frozen();
    let feats: Vec<Array> = feats.iter().map(|a| probe.norm.apply(a)).collect();
    let c = probe.task.outputs();
    let recurrent = probe.lstm.is_some();
    // Every (episode, timestep) pair, for the per-timestep readouts.
    let pairs: Vec<(usize, usize)> =
        feats.iter().enumerate().flat_map(|(e, a)| (0..a.dims2().expect("[T, F]").0).map(move |t| (e, t))).collect();
    let steps = if recurrent { config.sequence_steps } else { config.readout_steps };
    for _ in 0..steps {
        let mut tape = Tape::new();
        let p: Vec<Var> = probe
            .params
            .names()
            .iter()
            .zip(probe.params.arrays())
            .zip(&frozen)
            .map(|((n, a), &fz)| if fz { Ok(tape.constant(a.clone())) } else { tape.input(n, a.clone()) })
            .collect::<Result<_, DiffError>>()?;
        let (y, tgt) = if recurrent {
            let eps: Vec<usize> = (0..config.sequence_batch).map(|_| rng.random_range(0..feats.len())).collect();
            let batch: Vec<Array> = eps.iter().map(|&e| feats[e].clone()).collect();
            let t_len = batch[0].dims2().expect("[T, F]").0;
            let tgt: Vec<f64> = (0..t_len).flat_map(|_| eps.iter().flat_map(|&e| targets[e].iter().copied())).collect();
            (probe.forward(&mut tape, &p, &batch)?, Array::matrix(t_len * eps.len(), c, tgt))
        } else {
            let rows: Vec<(usize, usize)> = (0..config.readout_batch).map(|_| pairs[rng.random_range(0..pairs.len())]).collect();
            let f = feats[0].dims2().expect("[T, F]").1;
            let x: Vec<f64> = rows.iter().flat_map(|&(e, t)| feats[e].row(t).to_vec()).collect();
            let tgt: Vec<f64> = rows.iter().flat_map(|&(e, _)| targets[e].iter().copied()).collect();
            let x = tape.constant(Array::matrix(rows.len(), f, x));
            (probe.readout.apply(&mut tape, &p, x)?, Array::matrix(rows.len(), c, tgt))
        };
        let loss = task_loss(&mut tape, probe.task, y, tgt)?;
        probe.losses.push(tape.value(loss).item());
        let mut g = tape.backward(loss)?;
        let grads: Vec<Array> = p.iter().zip(probe.params.arrays()).map(|(&v, a)| g.take_or_zeros(v, a.shape())).collect();
        adam.step(probe.params.arrays_mut(), &grads)?;
    }
    Ok(())
}

fn train_on(
    kind: ProbeKind,
    encoder: Encoder,
    data: &[Trajectory],
    task: ProbeTask,
    config: &ProbeConfig,
    seed: u64,
) -> Result<Probe, ProbeError> {
    let data = task.subset(data)?;
    let feats = encoder.features(&data)?;
    let targets: Vec<Vec<f64>> = data.iter().map(|t| task.target(t)).collect();
    let norm = Standardizer::fit(&feats);
    let input = feats[0].dims2().expect("[T, F]").1;
    let mut probe = build(kind, task, encoder, norm, input, config, seed);
    fit(&mut probe, &feats, &targets, config, seed)?;
    Ok(probe)
}

/// Readout on frozen dynamics states. The dynamics parameters are copied,
/// never updated.
pub fn train_diagnostic(
    model: &PrecoModel,
    params: &PrecoParams,
    data: &[Trajectory],
    task: ProbeTask,
    config: &ProbeConfig,
    seed: u64,
) -> Result<Probe, ProbeError> {
    model.check_params(params)?;
    let encoder = Encoder::Dynamics { model: Box::new(model.clone()), params: params.clone() };
    train_on(ProbeKind::Preco, encoder, data, task, config, seed)
}

/// Sensor-only baseline of the given kind.
pub fn train_baseline(kind: ProbeKind, data: &[Trajectory], task: ProbeTask, config: &ProbeConfig, seed: u64) -> Result<Probe, ProbeError> {
    if kind == ProbeKind::Preco {
        return Err(ProbeError::Unknown { what: "baseline", value: kind.to_string() });
    }
    train_on(kind, Encoder::Sensors, data, task, config, seed)
}

/// Copy of `data` with shape labels permuted across episodes.
pub fn shuffled_labels(data: &[Trajectory], seed: u64) -> Vec<Trajectory> {
    let mut labels: Vec<_> = data.iter().map(|t| t.label).collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    data.iter().zip(labels).map(|(t, label)| Trajectory { label, ..t.clone() }).collect()
}

/// Fraction of (episode, step) predictions whose arg-max class is correct.
pub fn accuracy(probe: &Probe, data: &[Trajectory]) -> Result<f64, ProbeError> {
    let preds = probe.predict(data)?;
    let (mut hit, mut n) = (0usize, 0usize);
    for (traj, y) in data.iter().zip(&preds) {
        for t in 0..traj.len() {
            let row = y.row(t);
            let arg = (0..row.len()).fold(0, |b, i| if row[i] > row[b] { i } else { b });
            hit += usize::from(arg == traj.label.shape.class_index());
            n += 1;
        }
    }
    Ok(hit as f64 / n as f64)
}

#[cfg(test)]
mod tests;
