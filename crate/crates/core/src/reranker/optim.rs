//! Parameter update rules and the warmup + cosine learning-rate schedule.

use std::f64::consts::PI;
use std::fmt;

use crate::error::{Error, Result};
use crate::registry::Registry;
use crate::tape::Matrix;

pub trait Optimizer: fmt::Debug + Send {
    fn name(&self) -> &'static str;

    /// Applies one update. `params` and `grads` are aligned and keep the same
    /// order and shapes across calls.
    fn step(&mut self, params: Vec<&mut Matrix>, grads: &[Matrix], lr: f64) -> Result<()>;
}

pub type OptimizerFactory = fn() -> Box<dyn Optimizer>;

pub fn optimizers() -> Registry<OptimizerFactory> {
    Registry::<OptimizerFactory>::new("optimizer")
        .with("sgd", || Box::new(Sgd))
        .with("adam", || Box::new(Adam::default()))
}

fn check_aligned(params: &[&mut Matrix], grads: &[Matrix]) -> Result<()> {
    if params.len() != grads.len() || params.iter().zip(grads).any(|(p, g)| p.dim() != g.dim()) {
        return Err(Error::ShapeMismatch("optimizer parameters and gradients".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Sgd;

impl Optimizer for Sgd {
    fn name(&self) -> &'static str {
        "sgd"
    }

    fn step(&mut self, mut params: Vec<&mut Matrix>, grads: &[Matrix], lr: f64) -> Result<()> {
        check_aligned(&params, grads)?;
        if lr == 0.0 {
            return Ok(());
        }
        for (p, g) in params.iter_mut().zip(grads) {
            p.scaled_add(-lr, g);
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

impl Optimizer for Adam {
    fn name(&self) -> &'static str {
        "adam"
    }

    fn step(&mut self, mut params: Vec<&mut Matrix>, grads: &[Matrix], lr: f64) -> Result<()> {
        check_aligned(&params, grads)?;
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| Matrix::zeros(g.dim())).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (i, g) in grads.iter().enumerate() {
            let (b1, b2) = (self.beta1, self.beta2);
            self.m[i].zip_mut_with(g, |m, &g| *m = b1 * *m + (1.0 - b1) * g);
            self.v[i].zip_mut_with(g, |v, &g| *v = b2 * *v + (1.0 - b2) * g * g);
            if lr == 0.0 {
                continue;
            }
            let eps = self.eps;
            let p = &mut *params[i];
            ndarray::Zip::from(p)
                .and(&self.m[i])
                .and(&self.v[i])
                .for_each(|p, &m, &v| {
                    *p -= lr * (m / c1) / ((v / c2).sqrt() + eps);
                });
        }
        Ok(())
    }
}

/// Linear warmup over the first `ceil(ratio · total)` steps, then cosine
/// decay to zero.
pub fn learning_rate(step: usize, total: usize, warmup_ratio: f64, base: f64) -> f64 {
    let warmup = (warmup_ratio * total as f64).ceil() as usize;
    if step < warmup {
        return base * (step + 1) as f64 / warmup as f64;
    }
    let span = total.saturating_sub(warmup).max(1);
    let progress = ((step - warmup) as f64 / span as f64).min(1.0);
    base * 0.5 * (1.0 + (PI * progress).cos())
}
