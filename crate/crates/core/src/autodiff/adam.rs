use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Adam optimizer state for one [`ParamStore`].
#[derive(Clone, Debug)]
pub struct AdamState {
    pub step_count: u64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon_hat: f64,
}

impl AdamState {
    /// Zero moments shaped like `params`, default betas and epsilon.
    pub fn new(params: &ParamStore, learning_rate: f64) -> Result<Self> {
        Self::with_hyper(params, learning_rate, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyper(
        params: &ParamStore,
        learning_rate: f64,
        beta1: f64,
        beta2: f64,
        epsilon_hat: f64,
    ) -> Result<Self> {
        if !(learning_rate > 0.0) {
            return Err(Error::Invalid(format!("learning rate {learning_rate} must be positive")));
        }
        for (name, b) in [("beta1", beta1), ("beta2", beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Invalid(format!("{name} = {b} outside (0, 1)")));
            }
        }
        let zeros: Vec<Tensor> = params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        Ok(AdamState {
            step_count: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
            learning_rate,
            beta1,
            beta2,
            epsilon_hat,
        })
    }

    /// One bias-corrected Adam update. `grads` is aligned with `params`.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Option<Tensor>]) -> Result<()> {
        if grads.len() != params.len() || self.first_moment.len() != params.len() {
            return Err(Error::Invalid(format!(
                "{} gradients / {} moments for {} parameters",
                grads.len(),
                self.first_moment.len(),
                params.len()
            )));
        }
        for (id, g) in params.ids().zip(grads) {
            match g {
                None => return Err(Error::MissingGradient(params.name(id).to_string())),
                Some(g) if g.shape() != params.get(id).shape() => {
                    return Err(Error::shape(
                        "adam_step",
                        format!("gradient {:?} for `{}` {:?}", g.shape(), params.name(id), params.get(id).shape()),
                    ))
                }
                _ => {}
            }
        }

        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon_hat);

        for (((_, p), g), (m, v)) in params
            .iter_mut()
            .zip(grads.iter().flatten())
            .zip(self.first_moment.iter_mut().zip(self.second_moment.iter_mut()))
        {
            let iter = p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
            for ((w, &gi), (mi, vi)) in iter {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
