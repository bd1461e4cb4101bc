use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ProbeError;

/// Losses of one model, indexed `[episode][timestep]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelLosses {
    pub name: String,
    pub losses: Vec<Vec<f64>>,
}

impl ModelLosses {
    pub fn new(name: impl Into<String>, losses: Vec<Vec<f64>>) -> Self {
        Self { name: name.into(), losses }
    }

    fn column(&self, t: usize) -> Vec<f64> {
        self.losses.iter().map(|l| l[t]).collect()
    }
}

pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty set");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `P(a < b)` over paired values, ties counted ½.
pub fn win_probability(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "paired samples");
    let score: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| if x < y { 1.0 } else if x == y { 0.5 } else { 0.0 })
        .sum();
    score / a.len() as f64
}

/// Percentile 95% band of `stat` over `n` bootstrap resamples of episode indices.
pub fn bootstrap_band(episodes: usize, n: usize, rng: &mut impl Rng, stat: impl Fn(&[usize]) -> f64) -> (f64, f64) {
    let mut values: Vec<f64> = (0..n)
        .map(|_| {
            let idx: Vec<usize> = (0..episodes).map(|_| rng.random_range(0..episodes)).collect();
            stat(&idx)
        })
        .collect();
    values.sort_by(f64::total_cmp);
    let at = |q: f64| values[((q * (n - 1) as f64).round() as usize).min(n - 1)];
    (at(0.025), at(0.975))
}

/// Win probability with its bootstrap band.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WinStat {
    pub p: f64,
    pub lo: f64,
    pub hi: f64,
}

impl WinStat {
    /// Band lies strictly above ½.
    pub fn significant(&self) -> bool {
        self.lo > 0.5
    }
}

/// `P(loss_a < loss_b)` pooled over the listed timesteps, bootstrapped over episodes.
pub fn pooled_win(a: &ModelLosses, b: &ModelLosses, steps: &[usize], bootstrap_n: usize, seed: u64) -> WinStat {
    let per_episode = |e: usize| -> (Vec<f64>, Vec<f64>) { steps.iter().map(|&t| (a.losses[e][t], b.losses[e][t])).unzip() };
    let stat = |idx: &[usize]| {
        let (xa, xb): (Vec<f64>, Vec<f64>) = idx.iter().map(|&e| per_episode(e)).fold((vec![], vec![]), |mut acc, (x, y)| {
            acc.0.extend(x);
            acc.1.extend(y);
            acc
        });
        win_probability(&xa, &xb)
    };
    let all: Vec<usize> = (0..a.losses.len()).collect();
    let p = stat(&all);
    let (lo, hi) = bootstrap_band(all.len(), bootstrap_n, &mut ChaCha8Rng::seed_from_u64(seed), stat);
    WinStat { p, lo, hi }
}

/// Median of `b - a` over the `(episode, timestep)` pairs selected by `mask`.
pub fn median_margin(a: &ModelLosses, b: &ModelLosses, mask: &[Vec<bool>]) -> Option<f64> {
    let diffs: Vec<f64> = mask
        .iter()
        .enumerate()
        .flat_map(|(e, m)| m.iter().enumerate().filter(|(_, &on)| on).map(move |(t, _)| b.losses[e][t] - a.losses[e][t]))
        .collect();
    (!diffs.is_empty()).then(|| median(&diffs))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub timestep: usize,
    pub model: String,
    pub statistic: String,
    pub value: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CdfRow {
    pub marker: usize,
    pub model: String,
    pub loss: f64,
    pub cumulative: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    pub cdfs: Vec<CdfRow>,
}

/// Per-timestep medians, win probability of the first model against each
/// other model, and loss CDFs at the marker timesteps.
pub fn eval_report(models: &[ModelLosses], markers: &[usize], bootstrap_n: usize, seed: u64) -> Result<EvalReport, ProbeError> {
    let first = models.first().ok_or(ProbeError::Empty)?;
    let n_ep = first.losses.len();
    if n_ep == 0 || models.iter().any(|m| m.losses.len() != n_ep) {
        return Err(ProbeError::Empty);
    }
    let t_len = first.losses[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for t in 0..t_len {
        for m in models {
            let col = m.column(t);
            let (lo, hi) = bootstrap_band(n_ep, bootstrap_n, &mut rng, |idx| median(&idx.iter().map(|&e| col[e]).collect::<Vec<_>>()));
            rows.push(ReportRow { timestep: t, model: m.name.clone(), statistic: "median_loss".into(), value: median(&col), ci_lo: lo, ci_hi: hi });
        }
        let a = first.column(t);
        for m in &models[1..] {
            let b = m.column(t);
            let stat = |idx: &[usize]| {
                let (xa, xb): (Vec<f64>, Vec<f64>) = idx.iter().map(|&e| (a[e], b[e])).unzip();
                win_probability(&xa, &xb)
            };
            let (lo, hi) = bootstrap_band(n_ep, bootstrap_n, &mut rng, stat);
            rows.push(ReportRow {
                timestep: t,
                model: first.name.clone(),
                statistic: format!("win_vs_{}", m.name),
                value: win_probability(&a, &b),
                ci_lo: lo,
                ci_hi: hi,
            });
        }
    }
    let mut cdfs = Vec::new();
    for &marker in markers.iter().filter(|&&t| t < t_len) {
        for m in models {
            let mut col = m.column(marker);
            col.sort_by(f64::total_cmp);
            for (i, loss) in col.iter().enumerate() {
                cdfs.push(CdfRow { marker, model: m.name.clone(), loss: *loss, cumulative: (i + 1) as f64 / n_ep as f64 });
            }
        }
    }
    Ok(EvalReport { rows, cdfs })
}

impl EvalReport {
    pub fn write_csv(&self, mut w: impl Write) -> io::Result<()> {
        writeln!(w, "timestep,model,statistic,value,ci_lo,ci_hi")?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{},{},{}", r.timestep, r.model, r.statistic, r.value, r.ci_lo, r.ci_hi)?;
        }
        Ok(())
    }

    pub fn write_cdf_csv(&self, mut w: impl Write) -> io::Result<()> {
        writeln!(w, "marker,model,loss,cumulative")?;
        for r in &self.cdfs {
            writeln!(w, "{},{},{},{}", r.marker, r.model, r.loss, r.cumulative)?;
        }
        Ok(())
    }
}
