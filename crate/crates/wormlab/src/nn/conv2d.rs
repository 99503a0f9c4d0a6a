use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::param::Parameter;
use crate::nn::he_uniform;
use crate::tensor::Tensor;

/// 2-D convolution, stride 1, symmetric zero padding.
///
/// Input `[batch, in_ch, h, w]`, weight `[out_ch, in_ch, k, k]`, output
/// `[batch, out_ch, h + 2·pad − k + 1, w + 2·pad − k + 1]`.
#[derive(Clone, Debug)]
pub struct Conv2D {
    weight: Parameter,
    bias: Parameter,
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    pad: usize,
    cached_input: Option<Tensor>,
}

impl Conv2D {
    /// Square kernel, padding `(k−1)/2` so odd kernels preserve spatial dims.
    pub fn new(name: &str, in_ch: usize, out_ch: usize, kernel: usize, rng: &mut impl Rng) -> Self {
        let fan_in = in_ch * kernel * kernel;
        let w = he_uniform(rng, fan_in, out_ch * fan_in);
        let weight =
            Tensor::new(vec![out_ch, in_ch, kernel, kernel], w).expect("conv weight shape");
        Self {
            weight: Parameter::new(format!("{name}.weight"), weight),
            bias: Parameter::new(format!("{name}.bias"), Tensor::zeros(vec![out_ch])),
            in_ch,
            out_ch,
            kernel,
            pad: (kernel - 1) / 2,
            cached_input: None,
        }
    }

    pub fn with_weights(name: &str, weight: Tensor, bias: Tensor, pad: usize) -> Result<Self> {
        if weight.shape().len() != 4 || weight.shape()[2] != weight.shape()[3] {
            return Err(Error::Config(format!(
                "conv weight must be [out, in, k, k], got {:?}",
                weight.shape()
            )));
        }
        let (out_ch, in_ch, kernel) = (weight.shape()[0], weight.shape()[1], weight.shape()[2]);
        if bias.shape() != [out_ch] {
            return Err(Error::Config(format!(
                "conv bias must be [{out_ch}], got {:?}",
                bias.shape()
            )));
        }
        Ok(Self {
            weight: Parameter::new(format!("{name}.weight"), weight),
            bias: Parameter::new(format!("{name}.bias"), bias),
            in_ch,
            out_ch,
            kernel,
            pad,
            cached_input: None,
        })
    }

    fn out_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let oh = (h + 2 * self.pad).checked_sub(self.kernel - 1);
        let ow = (w + 2 * self.pad).checked_sub(self.kernel - 1);
        match (oh, ow) {
            (Some(oh), Some(ow)) if oh > 0 && ow > 0 => Ok((oh, ow)),
            _ => Err(Error::Config(format!(
                "conv kernel {} with pad {} does not fit input {h}x{w}",
                self.kernel, self.pad
            ))),
        }
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        if x.shape().len() != 4 || x.shape()[1] != self.in_ch {
            return Err(Error::Config(format!(
                "conv {} expects [batch, {}, h, w], got {:?}",
                self.weight.path(),
                self.in_ch,
                x.shape()
            )));
        }
        let (batch, h, w) = (x.shape()[0], x.shape()[2], x.shape()[3]);
        let (oh, ow) = self.out_hw(h, w)?;
        let k = self.kernel;
        let pad = self.pad as isize;
        let xv = x.values();
        let wv = self.weight.value.values();
        let bv = self.bias.value.values();
        let mut out = vec![0.0; batch * self.out_ch * oh * ow];
        for b in 0..batch {
            for o in 0..self.out_ch {
                for i in 0..oh {
                    for j in 0..ow {
                        let mut acc = bv[o];
                        for c in 0..self.in_ch {
                            for u in 0..k {
                                let xi = i as isize + u as isize - pad;
                                if xi < 0 || xi >= h as isize {
                                    continue;
                                }
                                for v in 0..k {
                                    let xj = j as isize + v as isize - pad;
                                    if xj < 0 || xj >= w as isize {
                                        continue;
                                    }
                                    acc += xv[((b * self.in_ch + c) * h + xi as usize) * w
                                        + xj as usize]
                                        * wv[((o * self.in_ch + c) * k + u) * k + v];
                                }
                            }
                        }
                        out[((b * self.out_ch + o) * oh + i) * ow + j] = acc;
                    }
                }
            }
        }
        self.cached_input = Some(x.clone());
        Tensor::new(vec![batch, self.out_ch, oh, ow], out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let x = self
            .cached_input
            .as_ref()
            .ok_or_else(|| Error::Usage("conv backward before forward".into()))?;
        let (batch, h, w) = (x.shape()[0], x.shape()[2], x.shape()[3]);
        let (oh, ow) = self.out_hw(h, w)?;
        if grad_out.shape() != [batch, self.out_ch, oh, ow] {
            return Err(Error::Usage(format!(
                "conv backward expects [{batch}, {}, {oh}, {ow}], got {:?}",
                self.out_ch,
                grad_out.shape()
            )));
        }
        let k = self.kernel;
        let pad = self.pad as isize;
        let xv = x.values();
        let gv = grad_out.values();
        let wv = self.weight.value.values().to_vec();
        let mut dx = vec![0.0; xv.len()];
        {
            let wg = self.weight.grad.values_mut();
            let bg = self.bias.grad.values_mut();
            for b in 0..batch {
                for o in 0..self.out_ch {
                    for i in 0..oh {
                        for j in 0..ow {
                            let g = gv[((b * self.out_ch + o) * oh + i) * ow + j];
                            if g == 0.0 {
                                continue;
                            }
                            bg[o] += g;
                            for c in 0..self.in_ch {
                                for u in 0..k {
                                    let xi = i as isize + u as isize - pad;
                                    if xi < 0 || xi >= h as isize {
                                        continue;
                                    }
                                    for v in 0..k {
                                        let xj = j as isize + v as isize - pad;
                                        if xj < 0 || xj >= w as isize {
                                            continue;
                                        }
                                        let xidx = ((b * self.in_ch + c) * h + xi as usize) * w
                                            + xj as usize;
                                        let widx = ((o * self.in_ch + c) * k + u) * k + v;
                                        wg[widx] += g * xv[xidx];
                                        dx[xidx] += g * wv[widx];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        Tensor::new(x.shape().to_vec(), dx)
    }

    pub fn parameters(&self) -> Vec<&Parameter> {
        vec![&self.weight, &self.bias]
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.weight, &mut self.bias]
    }
}
