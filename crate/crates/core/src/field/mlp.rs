//! Fully connected ReLU networks with parameters in a [`ParamStore`].

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::math::{ParamId, ParamStore, Tape, Tensor, Var};

/// Layer parameters: weight `[in, out]` and bias `[1, out]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

/// `hidden_layers` hidden layers of `width` units between `inputs` and
/// `outputs`; no activation on the output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

impl Mlp {
    /// Registers the layers in `store`. Weights are uniform in
    /// `+-sqrt(6 / fan_in)` (`+-sqrt(1 / fan_in)` for the output layer),
    /// biases start at zero.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        width: usize,
        hidden_layers: usize,
        outputs: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut dims = vec![inputs];
        dims.extend(std::iter::repeat_n(width, hidden_layers));
        dims.push(outputs);
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|l| {
                let (fan_in, fan_out) = (dims[l], dims[l + 1]);
                let gain = if l + 1 == n { 1.0 } else { 6.0 };
                let bound = (gain / fan_in as f64).sqrt();
                let w: Vec<f64> = (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect();
                let weight = store.add(
                    format!("{name}.{l}.weight"),
                    name,
                    true,
                    Tensor::matrix(fan_in, fan_out, w).expect("sized"),
                );
                let bias = store.add(
                    format!("{name}.{l}.bias"),
                    name,
                    false,
                    Tensor::matrix(1, fan_out, vec![0.0; fan_out]).expect("sized"),
                );
                Layer {
                    weight,
                    bias,
                    inputs: fan_in,
                    outputs: fan_out,
                }
            })
            .collect();
        Self { layers }
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().expect("non-empty").outputs
    }

    /// Records the forward pass of a `[n, inputs]` batch. `bound` maps
    /// parameter ids to their tape variables.
    pub fn forward(&self, tape: &mut Tape, bound: &[Var], x: Var) -> Result<Var> {
        let mut h = x;
        for (i, l) in self.layers.iter().enumerate() {
            h = tape.linear(h, bound[l.weight.0], bound[l.bias.0], i + 1 < self.layers.len())?;
        }
        Ok(h)
    }
}
