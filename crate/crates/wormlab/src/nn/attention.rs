use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::param::Parameter;
use crate::nn::he_uniform;
use crate::tensor::{matmul, matmul_at, matmul_bt, Tensor};

/// Single-head scaled dot-product attention over the token axis.
///
/// Input `[batch, tokens, d]`; the four weight matrices are all `d×d`
/// (`w_q`, `w_k`, `w_v`, `w_o`), no biases. The query/key matrices double
/// as the representative parameters for attention architectures.
#[derive(Clone, Debug)]
pub struct SingleHeadAttention {
    w_q: Parameter,
    w_k: Parameter,
    w_v: Parameter,
    w_o: Parameter,
    d_model: usize,
    cache: Option<AttnCache>,
}

#[derive(Clone, Debug)]
struct AttnCache {
    x: Tensor,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    attn: Vec<f64>,
    z: Vec<f64>,
}

impl SingleHeadAttention {
    pub fn new(name: &str, d_model: usize, rng: &mut impl Rng) -> Self {
        let mut mat = |suffix: &str, rng: &mut dyn rand::RngCore| {
            let w = he_uniform(rng, d_model, d_model * d_model);
            Parameter::new(
                format!("{name}.{suffix}"),
                Tensor::new(vec![d_model, d_model], w).expect("attention weight shape"),
            )
        };
        Self {
            w_q: mat("w_q", rng),
            w_k: mat("w_k", rng),
            w_v: mat("w_v", rng),
            w_o: mat("w_o", rng),
            d_model,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        if x.shape().len() != 3 || x.shape()[2] != self.d_model {
            return Err(Error::Config(format!(
                "attention {} expects [batch, tokens, {}], got {:?}",
                self.w_q.path(),
                self.d_model,
                x.shape()
            )));
        }
        let (batch, tokens, d) = (x.shape()[0], x.shape()[1], self.d_model);
        let scale = 1.0 / (d as f64).sqrt();
        let mut q = vec![0.0; batch * tokens * d];
        let mut k = vec![0.0; batch * tokens * d];
        let mut v = vec![0.0; batch * tokens * d];
        let mut attn = vec![0.0; batch * tokens * tokens];
        let mut z = vec![0.0; batch * tokens * d];
        let mut out = vec![0.0; batch * tokens * d];
        for b in 0..batch {
            let xs = &x.values()[b * tokens * d..(b + 1) * tokens * d];
            let qb = matmul(xs, self.w_q.value.values(), tokens, d, d);
            let kb = matmul(xs, self.w_k.value.values(), tokens, d, d);
            let vb = matmul(xs, self.w_v.value.values(), tokens, d, d);
            // scores[i][j] = q_i · k_j / sqrt(d), softmax over j
            let mut scores = matmul_bt(&qb, &kb, tokens, d, tokens);
            for s in scores.iter_mut() {
                *s *= scale;
            }
            for i in 0..tokens {
                let row = &mut scores[i * tokens..(i + 1) * tokens];
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for s in row.iter_mut() {
                    *s = (*s - max).exp();
                    sum += *s;
                }
                for s in row.iter_mut() {
                    *s /= sum;
                }
            }
            let zb = matmul(&scores, &vb, tokens, tokens, d);
            let ob = matmul(&zb, self.w_o.value.values(), tokens, d, d);
            q[b * tokens * d..(b + 1) * tokens * d].copy_from_slice(&qb);
            k[b * tokens * d..(b + 1) * tokens * d].copy_from_slice(&kb);
            v[b * tokens * d..(b + 1) * tokens * d].copy_from_slice(&vb);
            attn[b * tokens * tokens..(b + 1) * tokens * tokens].copy_from_slice(&scores);
            z[b * tokens * d..(b + 1) * tokens * d].copy_from_slice(&zb);
            out[b * tokens * d..(b + 1) * tokens * d].copy_from_slice(&ob);
        }
        self.cache = Some(AttnCache {
            x: x.clone(),
            q,
            k,
            v,
            attn,
            z,
        });
        Tensor::new(vec![batch, tokens, d], out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::Usage("attention backward before forward".into()))?;
        let (batch, tokens, d) = (
            cache.x.shape()[0],
            cache.x.shape()[1],
            self.d_model,
        );
        if grad_out.shape() != [batch, tokens, d] {
            return Err(Error::Usage(format!(
                "attention backward expects [{batch}, {tokens}, {d}], got {:?}",
                grad_out.shape()
            )));
        }
        let scale = 1.0 / (d as f64).sqrt();
        let mut dx = vec![0.0; batch * tokens * d];
        let (mut dwq, mut dwk, mut dwv, mut dwo) = (
            vec![0.0; d * d],
            vec![0.0; d * d],
            vec![0.0; d * d],
            vec![0.0; d * d],
        );
        for b in 0..batch {
            let range_td = b * tokens * d..(b + 1) * tokens * d;
            let xs = &cache.x.values()[range_td.clone()];
            let qb = &cache.q[range_td.clone()];
            let kb = &cache.k[range_td.clone()];
            let vb = &cache.v[range_td.clone()];
            let ab = &cache.attn[b * tokens * tokens..(b + 1) * tokens * tokens];
            let zb = &cache.z[range_td.clone()];
            let gb = &grad_out.values()[range_td.clone()];

            // y = z·w_o
            let dz = matmul_bt(gb, self.w_o.value.values(), tokens, d, d);
            for (acc, dv) in dwo.iter_mut().zip(matmul_at(zb, gb, tokens, d, d)) {
                *acc += dv;
            }
            // z = attn·v
            let mut da = matmul_bt(&dz, vb, tokens, d, tokens);
            let dv = matmul_at(ab, &dz, tokens, tokens, d);
            // softmax rows: ds = a ⊙ (da − ⟨da, a⟩)
            for i in 0..tokens {
                let a_row = &ab[i * tokens..(i + 1) * tokens];
                let da_row = &mut da[i * tokens..(i + 1) * tokens];
                let dot: f64 = da_row.iter().zip(a_row).map(|(g, a)| g * a).sum();
                for (g, a) in da_row.iter_mut().zip(a_row) {
                    *g = a * (*g - dot);
                }
            }
            // scores = q·kᵀ·scale
            let mut dq = matmul(&da, kb, tokens, tokens, d);
            let mut dk = matmul_at(&da, qb, tokens, tokens, d);
            for g in dq.iter_mut() {
                *g *= scale;
            }
            for g in dk.iter_mut() {
                *g *= scale;
            }
            // q = x·w_q etc.
            for (acc, g) in dwq.iter_mut().zip(matmul_at(xs, &dq, tokens, d, d)) {
                *acc += g;
            }
            for (acc, g) in dwk.iter_mut().zip(matmul_at(xs, &dk, tokens, d, d)) {
                *acc += g;
            }
            for (acc, g) in dwv.iter_mut().zip(matmul_at(xs, &dv, tokens, d, d)) {
                *acc += g;
            }
            let dxq = matmul_bt(&dq, self.w_q.value.values(), tokens, d, d);
            let dxk = matmul_bt(&dk, self.w_k.value.values(), tokens, d, d);
            let dxv = matmul_bt(&dv, self.w_v.value.values(), tokens, d, d);
            let dxb = &mut dx[range_td];
            for i in 0..tokens * d {
                dxb[i] = dxq[i] + dxk[i] + dxv[i];
            }
        }
        for (p, g) in [
            (&mut self.w_q, dwq),
            (&mut self.w_k, dwk),
            (&mut self.w_v, dwv),
            (&mut self.w_o, dwo),
        ] {
            for (acc, d) in p.grad.values_mut().iter_mut().zip(g) {
                *acc += d;
            }
        }
        Tensor::new(cache.x.shape().to_vec(), dx)
    }

    pub fn parameters(&self) -> Vec<&Parameter> {
        vec![&self.w_q, &self.w_k, &self.w_v, &self.w_o]
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.w_q, &mut self.w_k, &mut self.w_v, &mut self.w_o]
    }
}
