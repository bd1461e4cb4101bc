use super::{Array, DiffError, Tape, Var};

/// Evaluates a tape-built scalar function at `point`.
fn eval_scalar<F>(f: &F, point: &[Array]) -> Result<f64, DiffError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, DiffError>,
{
    let mut tape = Tape::new();
    let vars = bind(&mut tape, point)?;
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out);
    if !v.shape().is_empty() {
        return Err(DiffError::NotScalar(v.shape().to_vec()));
    }
    Ok(v.item())
}

fn bind(tape: &mut Tape, point: &[Array]) -> Result<Vec<Var>, DiffError> {
    point.iter().enumerate().map(|(i, a)| tape.input(&format!("arg{i}"), a.clone())).collect()
}

/// Largest relative disagreement between reverse-mode gradient `a` and
/// central-difference gradient `n`, measured per argument as
/// `‖a - n‖ / max(1e-12, ‖a‖ + ‖n‖)` (Euclidean norms).
pub fn grad_check<F>(f: F, point: &[Array], eps: f64) -> Result<f64, DiffError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, DiffError>,
{
    let mut tape = Tape::new();
    let vars = bind(&mut tape, point)?;
    let out = f(&mut tape, &vars)?;
    let mut grads = tape.backward(out)?;
    let analytic: Vec<Array> = vars.iter().zip(point).map(|(&v, p)| grads.take_or_zeros(v, p.shape())).collect();

    let mut worst = 0.0f64;
    let mut probe = point.to_vec();
    for (arg, grad) in analytic.iter().enumerate() {
        let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
        for j in 0..point[arg].len() {
            let x0 = point[arg].data()[j];
            probe[arg].data_mut()[j] = x0 + eps;
            let up = eval_scalar(&f, &probe)?;
            probe[arg].data_mut()[j] = x0 - eps;
            let down = eval_scalar(&f, &probe)?;
            probe[arg].data_mut()[j] = x0;
            if !up.is_finite() || !down.is_finite() {
                return Err(DiffError::NonFinite { node: format!("grad_check arg {arg}[{j}]") });
            }
            let numeric = (up - down) / (2.0 * eps);
            let a = grad.data()[j];
            diff += (a - numeric).powi(2);
            na += a * a;
            nn += numeric * numeric;
        }
        worst = worst.max(diff.sqrt() / (na.sqrt() + nn.sqrt()).max(1e-12));
    }
    Ok(worst)
}

/// Central-difference gradient of a plain scalar function.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + eps;
            let up = f(&probe);
            probe[i] = x[i] - eps;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * eps)
        })
        .collect()
}
