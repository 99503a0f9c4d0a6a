use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::param::Parameter;
use crate::nn::he_uniform;
use crate::tensor::{matmul, matmul_at, matmul_bt, Tensor};

/// Fully connected layer: `y = x·Wᵀ + b` with `W` stored `[out, in]`.
#[derive(Clone, Debug)]
pub struct Dense {
    weight: Parameter,
    bias: Parameter,
    in_dim: usize,
    out_dim: usize,
    cached_input: Option<Tensor>,
}

impl Dense {
    pub fn new(name: &str, in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let w = he_uniform(rng, in_dim, out_dim * in_dim);
        let weight = Tensor::new(vec![out_dim, in_dim], w).expect("dense weight shape");
        Self {
            weight: Parameter::new(format!("{name}.weight"), weight),
            bias: Parameter::new(format!("{name}.bias"), Tensor::zeros(vec![out_dim])),
            in_dim,
            out_dim,
            cached_input: None,
        }
    }

    /// Test-friendly constructor with explicit weights.
    pub fn with_weights(name: &str, weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.shape().len() != 2 {
            return Err(Error::Config(format!(
                "dense weight must be 2-d, got {:?}",
                weight.shape()
            )));
        }
        let (out_dim, in_dim) = (weight.shape()[0], weight.shape()[1]);
        if bias.shape() != [out_dim] {
            return Err(Error::Config(format!(
                "dense bias must be [{out_dim}], got {:?}",
                bias.shape()
            )));
        }
        Ok(Self {
            weight: Parameter::new(format!("{name}.weight"), weight),
            bias: Parameter::new(format!("{name}.bias"), bias),
            in_dim,
            out_dim,
            cached_input: None,
        })
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        if x.shape().len() != 2 || x.shape()[1] != self.in_dim {
            return Err(Error::Config(format!(
                "dense {} expects [batch, {}], got {:?}",
                self.weight.path(),
                self.in_dim,
                x.shape()
            )));
        }
        let batch = x.shape()[0];
        let mut out = matmul_bt(
            x.values(),
            self.weight.value.values(),
            batch,
            self.in_dim,
            self.out_dim,
        );
        for b in 0..batch {
            for o in 0..self.out_dim {
                out[b * self.out_dim + o] += self.bias.value.values()[o];
            }
        }
        self.cached_input = Some(x.clone());
        Tensor::new(vec![batch, self.out_dim], out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let x = self
            .cached_input
            .as_ref()
            .ok_or_else(|| Error::Usage("dense backward before forward".into()))?;
        let batch = x.shape()[0];
        if grad_out.shape() != [batch, self.out_dim] {
            return Err(Error::Usage(format!(
                "dense backward expects [{batch}, {}], got {:?}",
                self.out_dim,
                grad_out.shape()
            )));
        }
        // dW = gᵀ·x, db = column sums of g, dx = g·W
        let dw = matmul_at(grad_out.values(), x.values(), batch, self.out_dim, self.in_dim);
        for (acc, d) in self.weight.grad.values_mut().iter_mut().zip(&dw) {
            *acc += d;
        }
        for b in 0..batch {
            for o in 0..self.out_dim {
                self.bias.grad.values_mut()[o] += grad_out.values()[b * self.out_dim + o];
            }
        }
        let dx = matmul(
            grad_out.values(),
            self.weight.value.values(),
            batch,
            self.out_dim,
            self.in_dim,
        );
        Tensor::new(vec![batch, self.in_dim], dx)
    }

    pub fn parameters(&self) -> Vec<&Parameter> {
        vec![&self.weight, &self.bias]
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.weight, &mut self.bias]
    }
}
