//! Reverse-mode gradients on the tape, checked against central differences.
//!
//! `cargo run --release --example autodiff_gradcheck`

use proprio::cli::{overshoot_gradient_error, planner_gradient_errors, FD_STEP};
use proprio::diffcore::{grad_check, Array, Tape};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // f(W, x) = sum(tanh(x W))
    let w = Array::matrix(3, 2, vec![0.5, -0.3, 0.8, 0.1, -0.6, 0.4]);
    let x = Array::matrix(2, 3, vec![1.0, 2.0, -1.0, 0.5, -0.5, 0.25]);

    let mut tape = Tape::new();
    let wv = tape.input("w", w.clone())?;
    let xv = tape.input("x", x.clone())?;
    let z = tape.matmul(xv, wv)?;
    let a = tape.tanh(z)?;
    let f = tape.sum(a)?;
    let grads = tape.backward(f)?;
    println!("f = {:.6}", tape.value(f).item());
    println!("df/dW = {:?}", grads.get(wv).map(Array::data));

    let err = grad_check(
        |t, v| {
            let z = t.matmul(v[1], v[0])?;
            let a = t.tanh(z)?;
            t.sum(a)
        },
        &[w, x],
        FD_STEP,
    )?;
    println!("relative error, toy function:      {err:.2e}");
    println!("relative error, overshooting loss: {:.2e}", overshoot_gradient_error(0)?);
    for (kind, err) in planner_gradient_errors(0)? {
        println!("relative error, planner {kind:<12} {err:.2e}");
    }
    Ok(())
}
