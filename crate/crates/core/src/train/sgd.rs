use crate::error::{Error, Result};
use crate::model::ModelParams;

/// Momentum buffers, one per parameter group in `named()` order.
#[derive(Debug, Clone)]
pub struct SgdState {
    velocity: Vec<Vec<f64>>,
    names: Vec<String>,
}

impl SgdState {
    pub fn new(params: &ModelParams) -> Self {
        let named = params.named();
        SgdState {
            velocity: named.iter().map(|(_, a)| vec![0.0; a.data.len()]).collect(),
            names: named.into_iter().map(|(n, _)| n).collect(),
        }
    }

    /// v <- mu*v + g + wd*p;  p <- p - lr*v.
    /// Gradients must line up with the parameter order and be finite.
    pub fn step(
        &mut self,
        params: &mut ModelParams,
        grads: &[(String, Vec<f64>)],
        lr: f64,
        momentum: f64,
        weight_decay: f64,
    ) -> Result<()> {
        let mut named = params.named_mut();
        if grads.len() != named.len() {
            return Err(Error::Config(format!(
                "gradient count {} does not match parameter count {}",
                grads.len(),
                named.len()
            )));
        }
        for (i, (name, grad)) in grads.iter().enumerate() {
            if *name != self.names[i] {
                return Err(Error::Config(format!(
                    "gradient order mismatch: expected {}, got {name}",
                    self.names[i]
                )));
            }
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite gradient in {name}"
                )));
            }
            let p = &mut named[i].1.data;
            let v = &mut self.velocity[i];
            for j in 0..p.len() {
                v[j] = momentum * v[j] + grad[j] + weight_decay * p[j];
                p[j] -= lr * v[j];
            }
        }
        Ok(())
    }
}
