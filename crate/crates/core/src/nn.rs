//! Parameter storage and the few layer types the models are built from.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Array, DiffError, Tape, Var};

/// Ordered, named parameter arrays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    names: Vec<String>,
    arrays: Vec<Array>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self { names: Vec::new(), arrays: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, value: Array) -> usize {
        self.names.push(name.into());
        self.arrays.push(value);
        self.arrays.len() - 1
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn arrays(&self) -> &[Array] {
        &self.arrays
    }

    pub fn arrays_mut(&mut self) -> &mut [Array] {
        &mut self.arrays
    }

    pub fn get(&self, name: &str) -> Option<&Array> {
        self.names.iter().position(|n| n == name).map(|i| &self.arrays[i])
    }

    pub fn num_scalars(&self) -> usize {
        self.arrays.iter().map(Array::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.arrays.iter().all(Array::is_finite)
    }

    /// Binds every array as a differentiable tape input.
    pub fn bind(&self, tape: &mut Tape) -> Result<Vec<Var>, DiffError> {
        self.names.iter().zip(&self.arrays).map(|(n, a)| tape.input(n, a.clone())).collect()
    }

    /// Binds every array as a constant (no gradients flow into parameters).
    pub fn bind_const(&self, tape: &mut Tape) -> Vec<Var> {
        self.arrays.iter().map(|a| tape.constant(a.clone())).collect()
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Array {
    let n = shape.iter().product();
    Array::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-bound..=bound)).collect()).unwrap()
}

/// Builder that allocates parameters with `Uniform(±1/√fan_in)` initialization.
pub struct Initializer {
    rng: ChaCha8Rng,
    pub params: ParamSet,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), params: ParamSet::new() }
    }

    pub fn linear(&mut self, name: &str, input: usize, output: usize) -> Linear {
        let bound = 1.0 / (input.max(1) as f64).sqrt();
        let w = uniform(&mut self.rng, &[input, output], bound);
        let b = uniform(&mut self.rng, &[output], bound);
        Linear {
            weight: self.params.push(format!("{name}.w"), w),
            bias: self.params.push(format!("{name}.b"), b),
        }
    }

    /// `depth` hidden layers of width `hidden`, then an output layer.
    pub fn mlp(&mut self, name: &str, input: usize, depth: usize, hidden: usize, output: usize, act_out: bool) -> Mlp {
        let mut layers = Vec::with_capacity(depth + 1);
        let mut width = input;
        for l in 0..depth {
            layers.push(self.linear(&format!("{name}.{l}"), width, hidden));
            width = hidden;
        }
        layers.push(self.linear(&format!("{name}.out"), width, output));
        Mlp { layers, act_out }
    }

    pub fn lstm(&mut self, name: &str, input: usize, hidden: usize) -> LstmCell {
        let lin = self.linear(name, input + hidden, 4 * hidden);
        // Forget-gate biases start at +1.
        let b = &mut self.params.arrays_mut()[lin.bias];
        for v in &mut b.data_mut()[hidden..2 * hidden] {
            *v = 1.0;
        }
        LstmCell { gates: lin, input, hidden }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: usize,
    pub bias: usize,
}

impl Linear {
    pub fn apply(&self, tape: &mut Tape, p: &[Var], x: Var) -> Result<Var, DiffError> {
        let y = tape.matmul(x, p[self.weight])?;
        tape.add_bias(y, p[self.bias])
    }
}

/// Tanh MLP. The output layer is linear unless `act_out`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub act_out: bool,
}

impl Mlp {
    pub fn apply(&self, tape: &mut Tape, p: &[Var], x: Var) -> Result<Var, DiffError> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            h = layer.apply(tape, p, h)?;
            if l < last || self.act_out {
                h = tape.tanh(h)?;
            }
        }
        Ok(h)
    }
}

/// Recurrent state on the tape: output part `h` and memory part `c`, each `[N, H]`.
#[derive(Clone, Copy, Debug)]
pub struct TapeState {
    pub h: Var,
    pub c: Var,
}

/// Single-layer LSTM cell; gate order is input, forget, candidate, output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LstmCell {
    pub gates: Linear,
    pub input: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn step(&self, tape: &mut Tape, p: &[Var], state: TapeState, x: Var) -> Result<TapeState, DiffError> {
        let hs = self.hidden;
        let xh = tape.concat(&[x, state.h], 1)?;
        let z = self.gates.apply(tape, p, xh)?;
        let zi = tape.slice(z, 1, 0, hs)?;
        let zf = tape.slice(z, 1, hs, 2 * hs)?;
        let zg = tape.slice(z, 1, 2 * hs, 3 * hs)?;
        let zo = tape.slice(z, 1, 3 * hs, 4 * hs)?;
        let i = tape.sigmoid(zi)?;
        let f = tape.sigmoid(zf)?;
        let g = tape.tanh(zg)?;
        let o = tape.sigmoid(zo)?;
        let keep = tape.mul(f, state.c)?;
        let write = tape.mul(i, g)?;
        let c = tape.add(keep, write)?;
        let tc = tape.tanh(c)?;
        let h = tape.mul(o, tc)?;
        Ok(TapeState { h, c })
    }

    pub fn zero_state(&self, tape: &mut Tape, rows: usize) -> TapeState {
        let h = tape.constant(Array::zeros(&[rows, self.hidden]));
        let c = tape.constant(Array::zeros(&[rows, self.hidden]));
        TapeState { h, c }
    }
}
