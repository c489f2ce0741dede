//! Batch-averaged gradients for the predictor's own loss and for the
//! adversary's loss, the latter pulled back onto predictor weights through
//! the prediction.

use crate::data::{AnalogyExample, LabeledExample};
use crate::error::{Error, Result};
use crate::grad_engine::DebiasGradients;
use crate::numerics::{sigmoid, DenseVector};

use super::{logit_cross_entropy, AnalogyPredictor, ClassAdversary, EmbeddingAdversary};
use super::{clamp_probability, LogisticPredictor};

#[derive(Debug, Clone, PartialEq)]
pub struct BatchGradients {
    pub loss_p: f64,
    /// Absent when no adversary is attached.
    pub loss_a: Option<f64>,
    /// Number of examples the adversary terms were averaged over.
    pub adversary_batch: usize,
    pub grads: DebiasGradients,
}

fn ensure_finite(what: &str, values: &[f64]) -> Result<()> {
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{what}[{i}] = {}", values[i])));
    }
    Ok(())
}

fn finish(g: BatchGradients) -> Result<BatchGradients> {
    if !g.loss_p.is_finite() {
        return Err(Error::NonFinite(format!("predictor loss = {}", g.loss_p)));
    }
    if let Some(la) = g.loss_a {
        if !la.is_finite() {
            return Err(Error::NonFinite(format!("adversary loss = {la}")));
        }
    }
    ensure_finite("grad_p", &g.grads.grad_p)?;
    ensure_finite("grad_a_w", &g.grads.grad_a_w)?;
    ensure_finite("grad_a_u", &g.grads.grad_a_u)?;
    Ok(g)
}

/// Gradients for a logistic predictor with an optional classification
/// adversary. When `adversary_label` is set, adversary terms use only the
/// examples whose label equals it; an empty sub-batch yields zero adversary
/// terms.
pub fn classification_gradients(
    predictor: &LogisticPredictor,
    adversary: Option<&ClassAdversary>,
    batch: &[&LabeledExample],
    adversary_label: Option<f64>,
) -> Result<BatchGradients> {
    let n_w = predictor.dim() + 1;
    let mut grad_p = vec![0.0; n_w];
    let mut loss_p = 0.0;
    let mut logits = Vec::with_capacity(batch.len());

    for ex in batch {
        let a = predictor.logit(&ex.x)?;
        logits.push(a);
        loss_p += logit_cross_entropy(a, ex.y);
        let delta = sigmoid(a) - ex.y;
        let d = predictor.dim();
        ex.x.add_scaled_into(delta, &mut grad_p[..d])?;
        grad_p[d] += delta;
    }
    let n = batch.len().max(1) as f64;
    loss_p /= n;
    grad_p.iter_mut().for_each(|g| *g /= n);

    let Some(adversary) = adversary else {
        return finish(BatchGradients {
            loss_p,
            loss_a: None,
            adversary_batch: 0,
            grads: DebiasGradients::predictor_only(grad_p.into()),
        });
    };

    let n_u = adversary_param_len(adversary);
    let mut grad_a_w = vec![0.0; n_w];
    let mut grad_a_u = vec![0.0; n_u];
    let mut loss_a = 0.0;
    let mut used = 0usize;
    for (ex, &a) in batch.iter().zip(&logits) {
        if adversary_label.is_some_and(|label| ex.y != label) {
            continue;
        }
        used += 1;
        let y_hat = clamp_probability(sigmoid(a));
        let term = adversary.loss_grad(y_hat, ex.y, ex.z)?;
        loss_a += term.loss;
        for (g, t) in grad_a_u.iter_mut().zip(&term.grad_params) {
            *g += t;
        }
        predictor.accumulate_output_grad(&ex.x, a, term.grad_input, &mut grad_a_w)?;
    }
    if used > 0 {
        let m = used as f64;
        loss_a /= m;
        grad_a_w.iter_mut().for_each(|g| *g /= m);
        grad_a_u.iter_mut().for_each(|g| *g /= m);
    }
    finish(BatchGradients {
        loss_p,
        loss_a: (used > 0).then_some(loss_a),
        adversary_batch: used,
        grads: DebiasGradients {
            grad_p: grad_p.into(),
            grad_a_w: grad_a_w.into(),
            grad_a_u: grad_a_u.into(),
        },
    })
}

fn adversary_param_len(adversary: &ClassAdversary) -> usize {
    match adversary {
        ClassAdversary::Parity(_) => 2,
        ClassAdversary::Odds(_) => 5,
    }
}

/// Gradients for the analogy transform (squared error against the target
/// embedding) with an optional linear adversary predicting the target's
/// protected projection.
pub fn analogy_gradients(
    predictor: &AnalogyPredictor,
    adversary: Option<&EmbeddingAdversary>,
    batch: &[&AnalogyExample],
) -> Result<BatchGradients> {
    let d = predictor.dim();
    let mut grad_p = DenseVector::zeros(d);
    let mut grad_a_w = DenseVector::zeros(d);
    let mut grad_a_u = DenseVector::zeros(if adversary.is_some() { d } else { 0 });
    let mut loss_p = 0.0;
    let mut loss_a = 0.0;

    for ex in batch {
        let v = AnalogyPredictor::analogy_vector(&ex.x.x1, &ex.x.x2, &ex.x.x3)?;
        let y_hat = predictor.transform(&v)?;
        let resid = y_hat.sub(&ex.y)?;
        loss_p += resid.norm_sq();
        grad_p.axpy(1.0, &predictor.output_vjp(&v, &resid.scaled(2.0))?)?;

        if let Some(adv) = adversary {
            let term = adv.loss_grad(&y_hat, ex.z)?;
            loss_a += term.loss;
            for (g, t) in grad_a_u.iter_mut().zip(&term.grad_params) {
                *g += t;
            }
            grad_a_w.axpy(1.0, &predictor.output_vjp(&v, &term.grad_input)?)?;
        }
    }
    let n = batch.len().max(1) as f64;
    let inv = 1.0 / n;
    finish(BatchGradients {
        loss_p: loss_p * inv,
        loss_a: adversary.map(|_| loss_a * inv),
        adversary_batch: if adversary.is_some() { batch.len() } else { 0 },
        grads: DebiasGradients {
            grad_p: grad_p.scaled(inv),
            grad_a_w: grad_a_w.scaled(inv),
            grad_a_u: grad_a_u.scaled(inv),
        },
    })
}
