use crate::error::{Error, Result};
use crate::nn::param::Parameter;
use crate::tensor::Tensor;

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

/// Batch normalization over the channel axis (axis 1).
///
/// Accepts `[batch, ch]` or `[batch, ch, h, w]`. Training mode normalizes
/// with batch statistics (biased variance) and updates running averages;
/// eval mode uses the running averages. γ starts at 1 and is the canonical
/// importance signal the pruning side reads; β starts at 0.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    gamma: Parameter,
    beta: Parameter,
    channels: usize,
    running_mean: Vec<f64>,
    running_var: Vec<f64>,
    cache: Option<BnCache>,
}

#[derive(Clone, Debug)]
struct BnCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    shape: Vec<usize>,
}

impl BatchNorm {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            gamma: Parameter::new(format!("{name}.gamma"), Tensor::filled(vec![channels], 1.0)),
            beta: Parameter::new(format!("{name}.beta"), Tensor::zeros(vec![channels])),
            channels,
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            cache: None,
        }
    }

    /// (batch-stride layout) For `[b, c]` the per-channel group is the batch
    /// column; for `[b, c, h, w]` it is every spatial position of the channel.
    fn check_shape(&self, x: &Tensor) -> Result<(usize, usize)> {
        let s = x.shape();
        let ok = (s.len() == 2 || s.len() == 4) && s[1] == self.channels;
        if !ok {
            return Err(Error::Config(format!(
                "batchnorm {} expects [batch, {}] or [batch, {}, h, w], got {s:?}",
                self.gamma.path(),
                self.channels,
                self.channels
            )));
        }
        let spatial: usize = s[2..].iter().product();
        Ok((s[0], spatial))
    }

    /// Flat index for (sample, channel, spatial position).
    #[inline]
    fn at(&self, b: usize, c: usize, s: usize, spatial: usize) -> usize {
        (b * self.channels + c) * spatial + s
    }

    pub fn forward(&mut self, x: &Tensor, training: bool) -> Result<Tensor> {
        let (batch, spatial) = self.check_shape(x)?;
        let n = (batch * spatial) as f64;
        let xv = x.values();
        let gamma = self.gamma.value.values();
        let beta = self.beta.value.values();
        let mut out = vec![0.0; xv.len()];

        if training {
            let mut xhat = vec![0.0; xv.len()];
            let mut inv_std = vec![0.0; self.channels];
            for c in 0..self.channels {
                let mut mean = 0.0;
                for b in 0..batch {
                    for s in 0..spatial {
                        mean += xv[self.at(b, c, s, spatial)];
                    }
                }
                mean /= n;
                let mut var = 0.0;
                for b in 0..batch {
                    for s in 0..spatial {
                        let d = xv[self.at(b, c, s, spatial)] - mean;
                        var += d * d;
                    }
                }
                var /= n;
                let istd = 1.0 / (var + BN_EPS).sqrt();
                inv_std[c] = istd;
                for b in 0..batch {
                    for s in 0..spatial {
                        let i = self.at(b, c, s, spatial);
                        let h = (xv[i] - mean) * istd;
                        xhat[i] = h;
                        out[i] = gamma[c] * h + beta[c];
                    }
                }
                self.running_mean[c] = (1.0 - BN_MOMENTUM) * self.running_mean[c] + BN_MOMENTUM * mean;
                self.running_var[c] = (1.0 - BN_MOMENTUM) * self.running_var[c] + BN_MOMENTUM * var;
            }
            self.cache = Some(BnCache {
                xhat,
                inv_std,
                shape: x.shape().to_vec(),
            });
        } else {
            for c in 0..self.channels {
                let istd = 1.0 / (self.running_var[c] + BN_EPS).sqrt();
                for b in 0..batch {
                    for s in 0..spatial {
                        let i = self.at(b, c, s, spatial);
                        out[i] = gamma[c] * (xv[i] - self.running_mean[c]) * istd + beta[c];
                    }
                }
            }
            self.cache = None;
        }
        Tensor::new(x.shape().to_vec(), out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::Usage("batchnorm backward before training-mode forward".into()))?;
        if grad_out.shape() != cache.shape.as_slice() {
            return Err(Error::Usage(format!(
                "batchnorm backward expects {:?}, got {:?}",
                cache.shape,
                grad_out.shape()
            )));
        }
        let batch = cache.shape[0];
        let spatial: usize = cache.shape[2..].iter().product();
        let n = (batch * spatial) as f64;
        let gv = grad_out.values();
        let gamma = self.gamma.value.values().to_vec();
        let mut dx = vec![0.0; gv.len()];
        for c in 0..self.channels {
            let mut sum_g = 0.0;
            let mut sum_gx = 0.0;
            for b in 0..batch {
                for s in 0..spatial {
                    let i = self.at(b, c, s, spatial);
                    sum_g += gv[i];
                    sum_gx += gv[i] * cache.xhat[i];
                }
            }
            self.beta.grad.values_mut()[c] += sum_g;
            self.gamma.grad.values_mut()[c] += sum_gx;
            let istd = cache.inv_std[c];
            let g = gamma[c];
            for b in 0..batch {
                for s in 0..spatial {
                    let i = self.at(b, c, s, spatial);
                    dx[i] = g * istd / n * (n * gv[i] - sum_g - cache.xhat[i] * sum_gx);
                }
            }
        }
        Tensor::new(cache.shape.clone(), dx)
    }

    pub fn parameters(&self) -> Vec<&Parameter> {
        vec![&self.gamma, &self.beta]
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.gamma, &mut self.beta]
    }
}
