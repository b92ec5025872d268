//! Contrastive objectives over document–label cosines.

use std::fmt;

use crate::error::{Error, Result};
use crate::registry::Registry;

/// Loss value with its gradient with respect to each input cosine.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveValue {
    pub loss: f64,
    pub d_pos: Vec<f64>,
    pub d_neg: Vec<f64>,
}

pub trait ContrastiveObjective: fmt::Debug + Send + Sync {
    fn name(&self) -> &'static str;

    /// Loss from positive and negative cosines. Both lists are nonempty.
    fn evaluate(&self, pos: &[f64], neg: &[f64], tau: f64) -> ObjectiveValue;
}

pub type ObjectiveFactory = fn() -> Box<dyn ContrastiveObjective>;

pub fn objectives() -> Registry<ObjectiveFactory> {
    Registry::<ObjectiveFactory>::new("contrastive objective")
        .with("mean-cosine", || Box::new(MeanCosine))
        .with("temperature-scaled", || Box::new(TemperatureScaled))
        .with("per-positive", || Box::new(PerPositive))
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// ln(1 + e^x) without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `−ln((S/τ) / (S/τ + D/τ))` with `S = exp(mean pos)`, `D = exp(mean neg)`.
/// The temperature divides both terms and so has no effect.
#[derive(Debug, Clone, Copy)]
pub struct MeanCosine;

impl ContrastiveObjective for MeanCosine {
    fn name(&self) -> &'static str {
        "mean-cosine"
    }

    fn evaluate(&self, pos: &[f64], neg: &[f64], tau: f64) -> ObjectiveValue {
        let (mp, mn) = (mean(pos), mean(neg));
        let s = mp.exp() / tau;
        let d = mn.exp() / tau;
        let loss = -(s / (s + d)).ln();
        let g = sigmoid(mn - mp);
        ObjectiveValue {
            loss,
            d_pos: vec![-g / pos.len() as f64; pos.len()],
            d_neg: vec![g / neg.len() as f64; neg.len()],
        }
    }
}

/// Same structure with τ inside the exponentials: `S = exp(mean pos / τ)`.
#[derive(Debug, Clone, Copy)]
pub struct TemperatureScaled;

impl ContrastiveObjective for TemperatureScaled {
    fn name(&self) -> &'static str {
        "temperature-scaled"
    }

    fn evaluate(&self, pos: &[f64], neg: &[f64], tau: f64) -> ObjectiveValue {
        let x = (mean(neg) - mean(pos)) / tau;
        let g = sigmoid(x) / tau;
        ObjectiveValue {
            loss: softplus(x),
            d_pos: vec![-g / pos.len() as f64; pos.len()],
            d_neg: vec![g / neg.len() as f64; neg.len()],
        }
    }
}

/// Mean over positives of the single-positive loss against the shared
/// negative term.
#[derive(Debug, Clone, Copy)]
pub struct PerPositive;

impl ContrastiveObjective for PerPositive {
    fn name(&self) -> &'static str {
        "per-positive"
    }

    fn evaluate(&self, pos: &[f64], neg: &[f64], _tau: f64) -> ObjectiveValue {
        let mn = mean(neg);
        let p = pos.len() as f64;
        let mut loss = 0.0;
        let mut d_pos = Vec::with_capacity(pos.len());
        let mut d_mn = 0.0;
        for &c in pos {
            loss += softplus(mn - c) / p;
            let g = sigmoid(mn - c) / p;
            d_pos.push(-g);
            d_mn += g;
        }
        ObjectiveValue {
            loss,
            d_pos,
            d_neg: vec![d_mn / neg.len() as f64; neg.len()],
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Cosine and its gradients with respect to `u` and `v`.
pub fn cosine_grad(u: &[f64], v: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let c = dot / (nu * nv);
    let du = u
        .iter()
        .zip(v)
        .map(|(a, b)| b / (nu * nv) - c * a / (nu * nu))
        .collect();
    let dv = u
        .iter()
        .zip(v)
        .map(|(a, b)| a / (nu * nv) - c * b / (nv * nv))
        .collect();
    Ok((c, du, dv))
}

pub(crate) fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidParameter(format!("tau={tau} must be positive")));
    }
    Ok(())
}

/// Loss of one document against its positive and negative label vectors
/// under `objective`.
pub fn contrastive_loss_with(
    objective: &dyn ContrastiveObjective,
    doc_vec: &[f64],
    pos_vecs: &[&[f64]],
    neg_vecs: &[&[f64]],
    tau: f64,
) -> Result<f64> {
    check_tau(tau)?;
    if pos_vecs.is_empty() {
        return Err(Error::EmptyPositives);
    }
    if neg_vecs.is_empty() {
        return Err(Error::EmptyNegatives);
    }
    let pos = pos_vecs
        .iter()
        .map(|p| cosine(doc_vec, p))
        .collect::<Result<Vec<_>>>()?;
    let neg = neg_vecs
        .iter()
        .map(|n| cosine(doc_vec, n))
        .collect::<Result<Vec<_>>>()?;
    Ok(objective.evaluate(&pos, &neg, tau).loss)
}

/// Loss in the default mean-cosine form.
pub fn contrastive_loss(doc_vec: &[f64], pos_vecs: &[&[f64]], neg_vecs: &[&[f64]], tau: f64) -> Result<f64> {
    contrastive_loss_with(&MeanCosine, doc_vec, pos_vecs, neg_vecs, tau)
}
