//! Closed-form Rényi-2 entropy of Gaussian mixtures against quadrature, and
//! the entropy of a model's one-step prediction.
//!
//! `cargo run --release --example renyi_entropy`

use proprio::entropy::{oracle_discrepancy, prediction_entropy, renyi2, renyi2_quadrature_oracle, Mixture1D};
use proprio::preco::{HiddenState, PrecoConfig, PrecoModel};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let narrow = Mixture1D::single(0.0, 0.2);
    let wide = Mixture1D::single(0.0, 2.0);
    let split = Mixture1D::new(vec![0.5, 0.5], vec![-2.0, 2.0], vec![0.2, 0.2])?;
    for (name, m) in [("N(0, 0.2²)", &narrow), ("N(0, 2²)", &wide), ("two bumps at ±2", &split)] {
        println!("{name:<16} closed {:+.12}  quadrature {:+.12}", renyi2(m)?, renyi2_quadrature_oracle(m));
    }
    println!("max discrepancy over 1000 random mixtures: {:.2e}", oracle_discrepancy(1000, 0)?);

    let (model, params) = PrecoModel::init(PrecoConfig::compact(), 4, 16, 0)?;
    let h = HiddenState::zeros(model.hidden_size());
    println!("untrained model, entropy of the first prediction: {:.4}", prediction_entropy(&model, &params, &h)?);
    Ok(())
}
