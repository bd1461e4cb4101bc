//! Rényi-2 (collision) entropy of one-dimensional Gaussian mixtures.
//!
//! For `f = Σ α_i N(μ_i, σ_i²)`,
//! `H₂(f) = -log ∫ f² = -log Σ_ij α_i α_j N(μ_i - μ_j; 0, σ_i² + σ_j²)`.
//! The integral route ([`renyi2_quadrature_oracle`]) is kept alongside the
//! closed form as an independent check.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::diffcore::{Array, DiffError, Tape, Var};
use crate::preco::{HiddenState, MixtureParams, PrecoError, PrecoModel, PrecoParams, TapeMixture};

#[derive(Debug, Error, PartialEq)]
pub enum EntropyError {
    #[error("standard deviations must be positive, got {0}")]
    NonPositiveStd(f64),
    #[error("invalid mixture: {0}")]
    InvalidMixture(String),
}

/// One-dimensional Gaussian mixture.
#[derive(Clone, Debug, PartialEq)]
pub struct Mixture1D {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub stddevs: Vec<f64>,
}

impl Mixture1D {
    pub fn new(weights: Vec<f64>, means: Vec<f64>, stddevs: Vec<f64>) -> Result<Self, EntropyError> {
        let m = Self { weights, means, stddevs };
        m.validate()?;
        Ok(m)
    }

    pub fn single(mean: f64, stddev: f64) -> Self {
        Self { weights: vec![1.0], means: vec![mean], stddevs: vec![stddev] }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn validate(&self) -> Result<(), EntropyError> {
        let n = self.weights.len();
        if n == 0 || self.means.len() != n || self.stddevs.len() != n {
            return Err(EntropyError::InvalidMixture("component arrays must be nonempty and equal length".into()));
        }
        if let Some(&s) = self.stddevs.iter().find(|s| !(**s > 0.0)) {
            return Err(EntropyError::NonPositiveStd(s));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0)) || (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(EntropyError::InvalidMixture("weights must lie on the simplex".into()));
        }
        if self.means.iter().any(|m| !m.is_finite()) {
            return Err(EntropyError::InvalidMixture("non-finite mean".into()));
        }
        Ok(())
    }

    pub fn density(&self, x: f64) -> f64 {
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.stddevs)
            .map(|((w, m), s)| w * (-0.5 * ((x - m) / s).powi(2)).exp() / (s * (2.0 * PI).sqrt()))
            .sum()
    }

    fn support(&self, widths: f64) -> (f64, f64) {
        let smax = self.stddevs.iter().copied().fold(0.0, f64::max);
        let lo = self.means.iter().copied().fold(f64::INFINITY, f64::min) - widths * smax;
        let hi = self.means.iter().copied().fold(f64::NEG_INFINITY, f64::max) + widths * smax;
        (lo, hi)
    }
}

/// `∫ N(x; μi, σi²) N(x; μj, σj²) dx`.
pub fn pair_integral(mu_i: f64, sigma_i: f64, mu_j: f64, sigma_j: f64) -> Result<f64, EntropyError> {
    for s in [sigma_i, sigma_j] {
        if !(s > 0.0) {
            return Err(EntropyError::NonPositiveStd(s));
        }
    }
    let var = sigma_i * sigma_i + sigma_j * sigma_j;
    let d = mu_i - mu_j;
    Ok((-d * d / (2.0 * var)).exp() / (2.0 * PI * var).sqrt())
}

/// Closed-form Rényi-2 entropy.
pub fn renyi2(m: &Mixture1D) -> Result<f64, EntropyError> {
    m.validate()?;
    let mut total = 0.0;
    for i in 0..m.len() {
        for j in 0..m.len() {
            total += m.weights[i] * m.weights[j] * pair_integral(m.means[i], m.stddevs[i], m.means[j], m.stddevs[j])?;
        }
    }
    Ok(-total.ln())
}

/// `-log ∫ f²` by adaptive Simpson quadrature over `[min μ - 10 max σ, max μ + 10 max σ]`.
pub fn renyi2_quadrature_oracle(m: &Mixture1D) -> f64 {
    let (lo, hi) = m.support(10.0);
    let f2 = |x: f64| {
        let v = m.density(x);
        v * v
    };
    -adaptive_simpson(&f2, lo, hi, 1e-12).ln()
}

/// Adaptive Simpson integration to absolute tolerance `tol`.
pub fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    // Start from a uniform split so narrow peaks are not skipped by the first estimate.
    const PIECES: usize = 64;
    let h = (b - a) / PIECES as f64;
    (0..PIECES)
        .map(|k| {
            let (x0, x1) = (a + k as f64 * h, a + (k + 1) as f64 * h);
            let (f0, f1, fm) = (f(x0), f(x1), f(0.5 * (x0 + x1)));
            let whole = simpson(x0, x1, f0, fm, f1);
            simpson_rec(f, x0, x1, f0, fm, f1, whole, tol / PIECES as f64, 48)
        })
        .sum()
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec(f: &impl Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Per-row Rényi-2 entropies of mixtures held on a tape as `[R, M]` weight,
/// mean and stddev arrays. Returns `[R]`.
pub fn renyi2_rows(tape: &mut Tape, weights: Var, means: Var, stddevs: Var) -> Result<Var, DiffError> {
    let (rows, m) = tape.value(weights).dims2().expect("mixture arrays are [R, M]");
    let col = |tape: &mut Tape, v: Var, i: usize| tape.slice(v, 1, i, i + 1);
    let mut terms = Vec::new();
    for i in 0..m {
        let (ai, mi, si) = (col(tape, weights, i)?, col(tape, means, i)?, col(tape, stddevs, i)?);
        for j in i..m {
            let (aj, mj, sj) = (col(tape, weights, j)?, col(tape, means, j)?, col(tape, stddevs, j)?);
            let si2 = tape.mul(si, si)?;
            let sj2 = tape.mul(sj, sj)?;
            let var = tape.add(si2, sj2)?;
            // log N(μi - μj; 0, var) = -d²/(2 var) - ½ log(2π var)
            let two_var = tape.scale(var, 2.0)?;
            let log_two_var = tape.log(two_var)?;
            let tau_var = tape.scale(var, 2.0 * PI)?;
            let log_tau_var = tape.log(tau_var)?;
            let half_log = tape.scale(log_tau_var, 0.5)?;
            let log_n = if i == j {
                tape.neg(half_log)?
            } else {
                let d = tape.sub(mi, mj)?;
                let d2 = tape.mul(d, d)?;
                let inv = tape.neg(log_two_var)?;
                let inv = tape.exp(inv)?;
                let quad = tape.mul(d2, inv)?;
                let s = tape.add(quad, half_log)?;
                tape.neg(s)?
            };
            let n = tape.exp(log_n)?;
            let aa = tape.mul(ai, aj)?;
            let mut term = tape.mul(aa, n)?;
            if i != j {
                term = tape.scale(term, 2.0)?;
            }
            terms.push(term);
        }
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = tape.add(total, t)?;
    }
    let log_total = tape.log(total)?;
    let h = tape.neg(log_total)?;
    tape.reshape(h, &[rows])
}

/// Builds `[R, M]` constants from plain mixtures (for tests and tools).
pub fn mixtures_to_arrays(ms: &[Mixture1D]) -> (Array, Array, Array) {
    let m = ms[0].len();
    let flat = |f: fn(&Mixture1D) -> &Vec<f64>| Array::matrix(ms.len(), m, ms.iter().flat_map(|x| f(x).clone()).collect());
    (flat(|x| &x.weights), flat(|x| &x.means), flat(|x| &x.stddevs))
}

/// Per-row entropies of a decoded mixture, `[N·D]`.
pub fn mixture_entropies(tape: &mut Tape, mix: &TapeMixture) -> Result<Var, DiffError> {
    renyi2_rows(tape, mix.weights, mix.means, mix.stddevs)
}

/// Summed prediction entropy of the states in `h` (`[N, H]`), as a tape scalar.
pub fn prediction_entropy_tape(model: &PrecoModel, tape: &mut Tape, p: &[Var], h: Var) -> Result<Var, DiffError> {
    let mix = model.decode_tape(tape, p, h)?;
    let rows = mixture_entropies(tape, &mix)?;
    tape.sum(rows)
}

/// Sum over observation dimensions of the Rényi-2 entropy of decoded predictions.
pub fn prediction_entropy(model: &PrecoModel, params: &PrecoParams, h: &HiddenState) -> Result<f64, PrecoError> {
    Ok(mixture_params_entropy(&model.decode(params, h)?)?)
}

/// `Σ_d H₂(mix_d)` for plain mixture parameters.
pub fn mixture_params_entropy(mix: &MixtureParams) -> Result<f64, EntropyError> {
    (0..mix.dims).map(|d| renyi2(&mix.dim(d))).sum()
}

/// A mixture with 1 to 3 components, weights proportional to `U(0.05, 1)`,
/// means in `[-3, 3]` and standard deviations in `[0.1, 2]`.
pub fn random_mixture(rng: &mut impl Rng) -> Mixture1D {
    let m = rng.random_range(1..=3);
    let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.05..1.0)).collect();
    let z: f64 = raw.iter().sum();
    Mixture1D {
        weights: raw.iter().map(|w| w / z).collect(),
        means: (0..m).map(|_| rng.random_range(-3.0..3.0)).collect(),
        stddevs: (0..m).map(|_| rng.random_range(0.1..2.0)).collect(),
    }
}

/// Largest `|renyi2 - quadrature|` over `n` random mixtures.
pub fn oracle_discrepancy(n: usize, seed: u64) -> Result<f64, EntropyError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).try_fold(0.0f64, |worst, _| {
        let m = random_mixture(&mut rng);
        Ok(worst.max((renyi2(&m)? - renyi2_quadrature_oracle(&m)).abs()))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::grad_check;

    #[test]
    fn pair_integral_cases() {
        let s: f64 = 0.7;
        let v = pair_integral(1.0, s, 1.0, s).unwrap();
        assert!((v - 1.0 / (2.0 * s * PI.sqrt())).abs() < 1e-15);
        assert_eq!(pair_integral(0.2, 0.5, -1.0, 1.5).unwrap(), pair_integral(-1.0, 1.5, 0.2, 0.5).unwrap());
        let q = adaptive_simpson(
            &|x: f64| Mixture1D::single(0.0, 1.0).density(x) * Mixture1D::single(3.0, 1.0).density(x),
            -12.0,
            15.0,
            1e-14,
        );
        assert!((q - pair_integral(0.0, 1.0, 3.0, 1.0).unwrap()).abs() < 1e-10);
        assert_eq!(pair_integral(0.0, 0.0, 0.0, 1.0), Err(EntropyError::NonPositiveStd(0.0)));
    }

    #[test]
    fn renyi2_known_values() {
        let unit = Mixture1D::single(0.3, 1.0 / (2.0 * PI.sqrt()));
        assert!(renyi2(&unit).unwrap().abs() < 1e-14);

        let one = Mixture1D::single(0.0, 1.0);
        let dup = Mixture1D::new(vec![0.5, 0.5], vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        assert!((renyi2(&one).unwrap() - renyi2(&dup).unwrap()).abs() < 1e-14);
        assert!((renyi2(&one).unwrap() - (2.0 * PI.sqrt()).ln()).abs() < 1e-14);
        assert!((renyi2_quadrature_oracle(&one) - 1.265_512_123_484_645).abs() < 1e-10);

        let sep = Mixture1D::new(vec![0.5, 0.5], vec![-3.0, 3.0], vec![1.0, 1.0]).unwrap();
        let oracle = renyi2_quadrature_oracle(&sep);
        assert!((renyi2(&sep).unwrap() - oracle).abs() < 1e-8);
        // log 4 + ½ log π - log(1 + e^-9)
        assert!((oracle - 1.958_536).abs() < 1e-5, "{oracle}");
    }

    #[test]
    fn closed_form_matches_quadrature_on_random_mixtures() {
        let worst = oracle_discrepancy(300, 11).unwrap();
        assert!(worst < 1e-8, "{worst}");
        assert_eq!(worst, oracle_discrepancy(300, 11).unwrap());
    }

    #[test]
    fn scaling_adds_log_two() {
        let m = Mixture1D::new(vec![0.3, 0.7], vec![0.0, 0.0], vec![0.4, 1.3]).unwrap();
        let m2 = Mixture1D { stddevs: m.stddevs.iter().map(|s| 2.0 * s).collect(), ..m.clone() };
        assert!((renyi2(&m2).unwrap() - renyi2(&m).unwrap() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn invariances() {
        let m = Mixture1D::new(vec![0.2, 0.5, 0.3], vec![-1.0, 0.4, 2.0], vec![0.3, 1.1, 0.6]).unwrap();
        let perm = Mixture1D::new(vec![0.3, 0.2, 0.5], vec![2.0, -1.0, 0.4], vec![0.6, 0.3, 1.1]).unwrap();
        let split = Mixture1D::new(
            vec![0.2, 0.25, 0.25, 0.3],
            vec![-1.0, 0.4, 0.4, 2.0],
            vec![0.3, 1.1, 1.1, 0.6],
        )
        .unwrap();
        let h = renyi2(&m).unwrap();
        assert!((h - renyi2(&perm).unwrap()).abs() < 1e-12);
        assert!((h - renyi2(&split).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn merging_components_lowers_entropy() {
        let mut last = f64::INFINITY;
        for k in (0..=40).rev() {
            let s = k as f64 * 0.1;
            let m = Mixture1D::new(vec![0.5, 0.5], vec![-s / 2.0, s / 2.0], vec![0.7, 0.7]).unwrap();
            let h = renyi2(&m).unwrap();
            assert!(h <= last + 1e-15, "separation {s}: {h} > {last}");
            last = h;
        }
    }

    #[test]
    fn invalid_mixtures_are_rejected() {
        assert!(Mixture1D::new(vec![1.0], vec![0.0], vec![0.0]).is_err());
        assert!(Mixture1D::new(vec![0.6, 0.6], vec![0.0, 1.0], vec![1.0, 1.0]).is_err());
        assert!(Mixture1D::new(vec![], vec![], vec![]).is_err());
    }

    #[test]
    fn tape_rows_match_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ms: Vec<Mixture1D> = (0..6)
            .map(|_| {
                let a: f64 = rng.random_range(0.1..0.9);
                Mixture1D {
                    weights: vec![a, 1.0 - a],
                    means: vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)],
                    stddevs: vec![rng.random_range(0.2..1.5), rng.random_range(0.2..1.5)],
                }
            })
            .collect();
        let (w, mu, sd) = mixtures_to_arrays(&ms);
        let mut tape = Tape::new();
        let (w, mu, sd) = (tape.constant(w), tape.constant(mu), tape.constant(sd));
        let h = renyi2_rows(&mut tape, w, mu, sd).unwrap();
        for (got, m) in tape.value(h).data().iter().zip(&ms) {
            assert!((got - renyi2(m).unwrap()).abs() < 1e-12);
        }
    }

    fn small_model() -> (PrecoModel, PrecoParams) {
        use crate::preco::{EmbedShape, HeadShape, PrecoConfig};
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
        PrecoModel::init(config, 2, 3, 4).unwrap()
    }

    #[test]
    fn prediction_entropy_is_sum_over_dims() {
        let (m, p) = small_model();
        let h = m.predictor_step(&p, &HiddenState::zeros(5), &[0.4, -0.9]).unwrap();
        let mix = m.decode(&p, &h).unwrap();
        let manual: f64 = (0..3).map(|d| renyi2(&mix.dim(d)).unwrap()).sum();
        let got = prediction_entropy(&m, &p, &h).unwrap();
        assert!((manual - got).abs() < 1e-12);

        let mut tape = Tape::new();
        let pv = p.bind_const(&mut tape);
        let hv = tape.constant(Array::matrix(1, 5, h.output.clone()));
        let e = prediction_entropy_tape(&m, &mut tape, &pv, hv).unwrap();
        assert!((tape.value(e).item() - got).abs() < 1e-12);
    }

    #[test]
    fn prediction_entropy_gradient_in_state() {
        let (m, p) = small_model();
        let h0 = Array::matrix(1, 5, vec![0.3, -0.5, 0.8, 0.1, -0.2]);
        let err = grad_check(
            |t, v| {
                let pv = p.bind_const(t);
                prediction_entropy_tape(&m, t, &pv, v[0])
            },
            &[h0],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn doubling_every_stddev_adds_d_log_two() {
        let mix = MixtureParams {
            dims: 3,
            components: 2,
            weights: vec![0.3, 0.7, 0.5, 0.5, 0.9, 0.1],
            means: vec![0.0; 6],
            stddevs: vec![0.2, 0.5, 1.0, 0.3, 0.7, 1.9],
        };
        let doubled = MixtureParams { stddevs: mix.stddevs.iter().map(|s| 2.0 * s).collect(), ..mix.clone() };
        let gap = mixture_params_entropy(&doubled).unwrap() - mixture_params_entropy(&mix).unwrap();
        assert!((gap - 3.0 * 2f64.ln()).abs() < 1e-12);
    }
}
