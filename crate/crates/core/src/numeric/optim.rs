use super::{ParamStore, Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// AdamW with decoupled weight decay and bias-corrected moments.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamW {
    pub fn new<'a>(config: AdamWConfig, shapes: impl IntoIterator<Item = &'a [usize]>) -> Result<Self, TensorError> {
        let c = &config;
        let betas_ok = (0.0..1.0).contains(&c.beta1) && c.beta1 > 0.0 && c.beta2 > 0.0 && c.beta2 < 1.0;
        if !betas_ok || c.eps <= 0.0 || c.weight_decay < 0.0 || c.lr < 0.0 {
            return Err(TensorError::Contract(format!("invalid AdamW configuration {config:?}")));
        }
        let first: Vec<Tensor> = shapes.into_iter().map(Tensor::zeros).collect();
        let second = first.clone();
        Ok(Self {
            config,
            step: 0,
            first,
            second,
        })
    }

    pub fn for_store(config: AdamWConfig, store: &ParamStore) -> Result<Self, TensorError> {
        let shapes: Vec<Vec<usize>> = store.ids().map(|id| store.value(id).shape().to_vec()).collect();
        Self::new(config, shapes.iter().map(|s| s.as_slice()))
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    pub fn moments(&self, i: usize) -> (&Tensor, &Tensor) {
        (&self.first[i], &self.second[i])
    }

    /// One update over explicit parameter and gradient tensors.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<(), TensorError> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(TensorError::Contract(format!(
                "optimizer tracks {} parameters, got {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != self.first[i].shape() || g.shape() != p.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "adamw".into(),
                    left: p.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
        }
        self.step += 1;
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            self.update(i, p.data_mut(), g.data());
        }
        Ok(())
    }

    /// One update over every parameter in the store, using its gradients.
    pub fn step_store(&mut self, store: &mut ParamStore) -> Result<(), TensorError> {
        if store.len() != self.first.len() {
            return Err(TensorError::Contract(format!(
                "optimizer tracks {} parameters, store has {}",
                self.first.len(),
                store.len()
            )));
        }
        self.step += 1;
        let pairs: Vec<_> = store.split_mut().collect();
        for (i, (p, g)) in pairs.into_iter().enumerate() {
            if p.shape() != self.first[i].shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "adamw".into(),
                    left: p.shape().to_vec(),
                    right: self.first[i].shape().to_vec(),
                });
            }
            self.update(i, p.data_mut(), g);
        }
        Ok(())
    }

    fn update(&mut self, i: usize, w: &mut [f64], g: &[f64]) {
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let m = self.first[i].data_mut();
        let v = self.second[i].data_mut();
        for j in 0..w.len() {
            w[j] -= c.lr * c.weight_decay * w[j];
            m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
            v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
            let mh = m[j] / bc1;
            let vh = v[j] / bc2;
            w[j] -= c.lr * mh / (vh.sqrt() + c.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(lr: f64, wd: f64) -> AdamWConfig {
        AdamWConfig {
            lr,
            weight_decay: wd,
            ..AdamWConfig::default()
        }
    }

    #[test]
    fn decay_only_path() {
        let w0 = Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let mut params = vec![w0.clone()];
        let mut opt = AdamW::new(cfg(0.1, 0.01), [w0.shape()]).unwrap();
        opt.step(&mut params, &[Tensor::zeros(&[3])]).unwrap();
        for (a, b) in params[0].data().iter().zip(w0.data()) {
            assert_eq!(*a, b * (1.0 - 0.1 * 0.01));
        }
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn first_step_is_sign_scaled() {
        let w0 = Tensor::new(&[2], vec![0.3, 0.3]).unwrap();
        let g = Tensor::new(&[2], vec![2.5, -1e-3]).unwrap();
        let mut params = vec![w0.clone()];
        let c = cfg(0.01, 0.0);
        let mut opt = AdamW::new(c, [w0.shape()]).unwrap();
        opt.step(&mut params, &[g.clone()]).unwrap();
        for j in 0..2 {
            let gj = g.data()[j];
            let expected = w0.data()[j] - 0.01 * gj / (gj.abs() + c.eps);
            assert!((params[0].data()[j] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_grad_zero_decay_is_identity() {
        let w0 = Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut params = vec![w0.clone()];
        let mut opt = AdamW::new(cfg(0.5, 0.0), [w0.shape()]).unwrap();
        for _ in 0..5 {
            opt.step(&mut params, &[Tensor::zeros(&[2, 2])]).unwrap();
        }
        assert_eq!(params[0], w0);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let w0 = Tensor::zeros(&[2]);
        let mut params = vec![w0.clone()];
        let mut opt = AdamW::new(cfg(0.1, 0.0), [w0.shape()]).unwrap();
        assert!(opt.step(&mut params, &[Tensor::zeros(&[3])]).is_err());
        assert_eq!(opt.step_count(), 0);
    }
}
