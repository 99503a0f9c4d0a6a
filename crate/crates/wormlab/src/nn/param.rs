use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A named, trainable tensor with its gradient buffer.
///
/// `grad` always has the same shape as `value`. Elements may be frozen by
/// permanent pruning, in which case their gradient is forced to zero before
/// every update and the value stays exactly where pruning left it.
#[derive(Clone, Debug)]
pub struct Parameter {
    path: String,
    pub value: Tensor,
    pub grad: Tensor,
    frozen: Option<Vec<bool>>,
}

impl Parameter {
    pub fn new(path: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape().to_vec());
        Self {
            path: path.into(),
            value,
            grad,
            frozen: None,
        }
    }

    pub fn path(&self) -> &str {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        for g in self.grad.values_mut() {
            *g = 0.0;
        }
    }

    /// `value ← value − lr·grad`, then the gradient is zeroed. Frozen
    /// elements get their gradient forced to zero first, so they never move.
    pub fn sgd_update(&mut self, lr: f64) {
        if let Some(frozen) = &self.frozen {
            for (g, &f) in self.grad.values_mut().iter_mut().zip(frozen) {
                if f {
                    *g = 0.0;
                }
            }
        }
        for (v, g) in self.value.values_mut().iter_mut().zip(self.grad.values()) {
            *v -= lr * g;
        }
        self.zero_grad();
    }

    /// Marks the given elements as frozen (merged with any earlier freeze).
    pub fn freeze_where(&mut self, bits: &[bool]) -> Result<()> {
        if bits.len() != self.len() {
            return Err(Error::Usage(format!(
                "freeze mask for {} has {} bits, parameter has {} elements",
                self.path,
                bits.len(),
                self.len()
            )));
        }
        match &mut self.frozen {
            Some(frozen) => {
                for (f, &b) in frozen.iter_mut().zip(bits) {
                    *f |= b;
                }
            }
            None => self.frozen = Some(bits.to_vec()),
        }
        Ok(())
    }

    pub fn frozen(&self) -> Option<&[bool]> {
        self.frozen.as_deref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_update_moves_and_zeroes() {
        let mut p = Parameter::new("w", Tensor::new(vec![1], vec![1.0]).unwrap());
        p.grad.values_mut()[0] = 0.5;
        p.sgd_update(0.01);
        assert_eq!(p.value.values()[0], 0.995);
        assert_eq!(p.grad.values()[0], 0.0);
    }

    #[test]
    fn zero_lr_keeps_values() {
        let mut p = Parameter::new("w", Tensor::new(vec![2], vec![1.5, -2.0]).unwrap());
        p.grad.values_mut().copy_from_slice(&[3.0, 4.0]);
        p.sgd_update(0.0);
        assert_eq!(p.value.values(), &[1.5, -2.0]);
    }

    #[test]
    fn frozen_elements_do_not_move() {
        let mut p = Parameter::new("w", Tensor::new(vec![2], vec![0.0, 1.0]).unwrap());
        p.freeze_where(&[true, false]).unwrap();
        p.grad.values_mut().copy_from_slice(&[10.0, 1.0]);
        p.sgd_update(0.1);
        assert_eq!(p.value.values()[0], 0.0);
        assert!((p.value.values()[1] - 0.9).abs() < 1e-15);
    }
}
