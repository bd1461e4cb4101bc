use std::f64::consts::PI;

use super::{check_batch, stack_time_major, MixtureParams, PrecoError, PrecoModel, PrecoParams, TapeMixture};
use crate::data::Episode;
use crate::diffcore::{logsumexp, Array, DiffError, Tape, Var};

const HALF_LOG_TAU: f64 = 0.918_938_533_204_672_8; // ½ log 2π

/// Negative log-likelihood of `x` under independent per-dimension mixtures.
pub fn nll(m: &MixtureParams, x: &[f64]) -> f64 {
    assert_eq!(x.len(), m.dims, "observation width");
    (0..m.dims)
        .map(|d| {
            let mix = m.dim(d);
            let terms: Vec<f64> = (0..m.components)
                .map(|i| {
                    let z = (x[d] - mix.means[i]) / mix.stddevs[i];
                    mix.weights[i].ln() - 0.5 * z * z - mix.stddevs[i].ln() - HALF_LOG_TAU
                })
                .collect();
            -logsumexp(&terms).expect("at least one component")
        })
        .sum()
}

/// Per-(row, dimension) negative log-likelihood, `[N·D]`, of `targets` (`[N, D]`).
///
/// Uses `-log Σ α_i N_i = lse(logits) - lse(logits + log N_i)` so the mixture
/// weights never pass through a log.
pub fn mixture_nll(tape: &mut Tape, mix: &TapeMixture, targets: &Array) -> Result<Var, DiffError> {
    let m = tape.shape(mix.means)[1];
    let rows = mix.rows;
    if targets.len() != rows {
        return Err(DiffError::Shape {
            node: "mixture_nll targets".into(),
            detail: format!("{} targets for {rows} mixture rows", targets.len()),
        });
    }
    let repeated: Vec<f64> = targets.data().iter().flat_map(|&v| std::iter::repeat_n(v, m)).collect();
    let x = tape.constant(Array::matrix(rows, m, repeated));
    let diff = tape.sub(x, mix.means)?;
    let log_sd = tape.log(mix.stddevs)?;
    let neg_log_sd = tape.neg(log_sd)?;
    let inv_sd = tape.exp(neg_log_sd)?;
    let z = tape.mul(diff, inv_sd)?;
    let z2 = tape.mul(z, z)?;
    let half_z2 = tape.scale(z2, -0.5)?;
    let c = tape.constant(Array::full(&[rows, m], -HALF_LOG_TAU));
    let log_n = tape.add(half_z2, neg_log_sd)?;
    let log_n = tape.add(log_n, c)?;
    let joint = tape.add(mix.logits, log_n)?;
    let lse_joint = tape.logsumexp(joint)?;
    let lse_w = tape.logsumexp(mix.logits)?;
    tape.sub(lse_w, lse_joint)
}

impl PrecoModel {
    /// Number of likelihood terms in one episode of length `t_len`.
    pub fn prediction_terms(&self, t_len: usize, overshoot: usize) -> usize {
        let corr = if self.config.decode_corrector { t_len } else { 0 };
        corr + (0..overshoot.min(t_len)).map(|k| t_len - k).sum::<usize>()
    }

    /// Mean overshooting loss of a batch of equal-length episodes, recorded on `tape`.
    ///
    /// Rows are laid out time-major (`t·B + b`); a depth-`k` rollout from every
    /// start time is one batched predictor step over the rows whose target
    /// `t + k` is still inside the episode.
    pub fn overshoot_loss_tape(
        &self,
        tape: &mut Tape,
        p: &[Var],
        batch: &[Episode<'_>],
        overshoot: usize,
    ) -> Result<Var, PrecoError> {
        if overshoot == 0 {
            return Err(PrecoError::InvalidConfig("overshoot length must be >= 1".into()));
        }
        let t_len = check_batch(batch, self)?;
        let b = batch.len();
        let (u_all, x_all) = stack_time_major(batch, t_len);
        let d = self.obs_dim;
        let u_c = tape.constant(u_all);
        let x_c = tape.constant(x_all.clone());
        let u_emb = self.embed_controls(tape, p, u_c)?;
        let x_emb = self.embed_sensors(tape, p, x_c)?;

        let mut s = self.zero_state(tape, b);
        let (mut pre_h, mut pre_c, mut post_h) = (Vec::new(), Vec::new(), Vec::new());
        for t in 0..t_len {
            let ue = tape.slice(u_emb, 0, t * b, (t + 1) * b)?;
            let hp = self.predict_embedded(tape, p, s, ue)?;
            let xe = tape.slice(x_emb, 0, t * b, (t + 1) * b)?;
            s = self.correct_embedded(tape, p, hp, xe)?;
            pre_h.push(hp.h);
            pre_c.push(hp.c);
            post_h.push(s.h);
        }

        let mut outputs = Vec::new();
        let mut targets: Vec<f64> = Vec::new();
        let mut cur = crate::nn::TapeState { h: tape.concat(&pre_h, 0)?, c: tape.concat(&pre_c, 0)? };
        outputs.push(cur.h);
        targets.extend_from_slice(x_all.data());
        for k in 1..overshoot.min(t_len) {
            let rows = (t_len - k) * b;
            let h = tape.slice(cur.h, 0, 0, rows)?;
            let c = tape.slice(cur.c, 0, 0, rows)?;
            let ue = tape.slice(u_emb, 0, k * b, t_len * b)?;
            cur = self.predict_embedded(tape, p, crate::nn::TapeState { h, c }, ue)?;
            outputs.push(cur.h);
            targets.extend_from_slice(&x_all.data()[k * b * d..]);
        }
        if self.config.decode_corrector {
            outputs.push(tape.concat(&post_h, 0)?);
            targets.extend_from_slice(x_all.data());
        }
        let all_h = tape.concat(&outputs, 0)?;
        let n_rows = targets.len() / d;
        let mix = self.decode_tape(tape, p, all_h)?;
        let terms = mixture_nll(tape, &mix, &Array::matrix(n_rows, d, targets))?;
        let total = tape.sum(terms)?;
        let count = b * self.prediction_terms(t_len, overshoot);
        Ok(tape.scale(total, 1.0 / count as f64)?)
    }

    /// Overshooting loss of one episode.
    pub fn overshoot_loss(&self, params: &PrecoParams, ep: &Episode<'_>, overshoot: usize) -> Result<f64, PrecoError> {
        let mut tape = Tape::new();
        let p = params.bind_const(&mut tape);
        let l = self.overshoot_loss_tape(&mut tape, &p, std::slice::from_ref(ep), overshoot)?;
        Ok(tape.value(l).item())
    }

    /// Single-step filtering loss computed step by step: predict, decode,
    /// correct, decode. The reference that overshooting with `K = 1` reduces to.
    pub fn filter_loss(&self, params: &PrecoParams, ep: &Episode<'_>) -> Result<f64, PrecoError> {
        if ep.is_empty() {
            return Err(PrecoError::EmptyEpisode);
        }
        let mut total = 0.0;
        for ((pre, post), x) in self.filter(params, ep)?.iter().zip(ep.observations) {
            total += nll(&self.decode(params, pre)?, x);
            if self.config.decode_corrector {
                total += nll(&self.decode(params, post)?, x);
            }
        }
        Ok(total / self.prediction_terms(ep.len(), 1) as f64)
    }

    /// Per-step one-step-ahead predictive NLL (`decode(h^p_{t,0})` against `x_t`).
    pub fn step_nll(&self, params: &PrecoParams, episodes: &[Episode<'_>]) -> Result<Vec<Vec<f64>>, PrecoError> {
        let t_len = check_batch(episodes, self)?;
        let b = episodes.len();
        let d = self.obs_dim;
        let mut tape = Tape::new();
        let p = params.bind_const(&mut tape);
        let (u_all, x_all) = stack_time_major(episodes, t_len);
        let u_c = tape.constant(u_all);
        let x_c = tape.constant(x_all.clone());
        let u_emb = self.embed_controls(&mut tape, &p, u_c)?;
        let x_emb = self.embed_sensors(&mut tape, &p, x_c)?;
        let mut s = self.zero_state(&mut tape, b);
        let mut pre = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let ue = tape.slice(u_emb, 0, t * b, (t + 1) * b)?;
            let hp = self.predict_embedded(&mut tape, &p, s, ue)?;
            let xe = tape.slice(x_emb, 0, t * b, (t + 1) * b)?;
            s = self.correct_embedded(&mut tape, &p, hp, xe)?;
            pre.push(hp.h);
        }
        let all = tape.concat(&pre, 0)?;
        let mix = self.decode_tape(&mut tape, &p, all)?;
        let terms = mixture_nll(&mut tape, &mix, &x_all)?;
        let v = tape.value(terms).data();
        let mut out = vec![vec![0.0; t_len]; b];
        for t in 0..t_len {
            for (e, row) in out.iter_mut().enumerate() {
                let r = t * b + e;
                row[t] = v[r * d..(r + 1) * d].iter().sum();
            }
        }
        Ok(out)
    }
}

/// Per-dimension constant Gaussian fitted to the marginal of the training data.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginalBaseline {
    pub means: Vec<f64>,
    pub stddevs: Vec<f64>,
}

impl MarginalBaseline {
    /// Maximum-likelihood fit; stddevs are floored at `floor`.
    pub fn fit(episodes: &[Episode<'_>], floor: f64) -> Result<Self, PrecoError> {
        let first = episodes.first().and_then(|e| e.observations.first()).ok_or(PrecoError::EmptyDataset)?;
        let d = first.len();
        let mut sum = vec![0.0; d];
        let mut n = 0usize;
        for x in episodes.iter().flat_map(|e| e.observations) {
            for (s, v) in sum.iter_mut().zip(x) {
                *s += v;
            }
            n += 1;
        }
        let means: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let mut var = vec![0.0; d];
        for x in episodes.iter().flat_map(|e| e.observations) {
            for ((v, xi), m) in var.iter_mut().zip(x).zip(&means) {
                *v += (xi - m).powi(2);
            }
        }
        let stddevs = var.iter().map(|v| (v / n as f64).sqrt().max(floor)).collect();
        Ok(Self { means, stddevs })
    }

    pub fn nll(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.means.iter().zip(&self.stddevs))
            .map(|(&v, (&m, &s))| {
                let z = (v - m) / s;
                0.5 * z * z + s.ln() + 0.5 * (2.0 * PI).ln()
            })
            .sum()
    }
}
