//! AdamW with decoupled weight decay.

use indexmap::IndexMap;

use super::schedule::OptimConfig;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub struct AdamW {
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(cfg: &OptimConfig) -> Self {
        AdamW {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update of every parameter. `grads` is aligned with `params`;
    /// `None` means the parameter received no gradient and is treated as
    /// zero. A non-finite gradient aborts before anything is modified.
    pub fn step<T: Scalar>(
        &mut self,
        params: &mut IndexMap<String, Tensor<T>>,
        grads: &[Option<&[T]>],
        lr: f64,
    ) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::invalid(
                "grads",
                format!("{} gradients for {} parameters", grads.len(), params.len()),
            ));
        }
        for ((name, p), g) in params.iter().zip(grads) {
            if let Some(g) = g {
                if g.len() != p.len() {
                    return Err(Error::shape(
                        "adamw",
                        format!("`{name}` has {} values, gradient {}", p.len(), g.len()),
                    ));
                }
                if let Some(i) = g.iter().position(|x| !x.is_finite()) {
                    return Err(Error::Numeric {
                        op: "adamw",
                        detail: format!("gradient of `{name}` is {} at index {i} (step {})", g[i], self.step),
                    });
                }
            }
        }
        if self.m.is_empty() {
            self.m = params.values().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, (_, p)) in params.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, x) in p.data_mut().iter_mut().enumerate() {
                let g = grads[i].map_or(0.0, |g| g[j].as_f64());
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                let theta = x.as_f64();
                *x = T::lit(theta - lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * theta));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f32) -> IndexMap<String, Tensor<f32>> {
        let mut m = IndexMap::new();
        m.insert("w".to_string(), Tensor::new(vec![1], vec![v]).unwrap());
        m
    }

    #[test]
    fn first_step_moves_by_lr() {
        let cfg = OptimConfig {
            weight_decay: 0.0,
            ..OptimConfig::default()
        };
        let mut p: IndexMap<String, Tensor<f64>> = IndexMap::new();
        p.insert("w".into(), Tensor::new(vec![1], vec![0.5]).unwrap());
        AdamW::new(&cfg).step(&mut p, &[Some(&[1.0][..])], 1e-3).unwrap();
        assert!((p["w"].data()[0] - (0.5 - 1e-3)).abs() < 1e-9);
    }

    #[test]
    fn decay_only_shrinks() {
        let cfg = OptimConfig::default();
        let mut p = one(2.0);
        AdamW::new(&cfg).step(&mut p, &[Some(&[0.0][..])], 0.1).unwrap();
        assert!((p["w"].data()[0] - 2.0 * (1.0 - 0.1 * 0.01)).abs() < 1e-6);
    }

    #[test]
    fn nan_gradient_is_rejected() {
        let mut p = one(2.0);
        let err = AdamW::new(&OptimConfig::default())
            .step(&mut p, &[Some(&[f32::NAN][..])], 0.1)
            .unwrap_err();
        assert_eq!(err.kind(), "numeric");
        assert_eq!(p["w"].data()[0], 2.0);
    }
}
