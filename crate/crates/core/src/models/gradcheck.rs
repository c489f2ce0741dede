//! Finite-difference checks of every analytic gradient in this module at
//! random parameter and input draws.

use serde::Serialize;

use crate::data::{AnalogyExample, AnalogyInput, LabeledExample};
use crate::error::Result;
use crate::grad_engine::{finite_diff_check, ParamVector};
use crate::numerics::{DenseVector, Features, SeededRng};

use super::{analogy_gradients, classification_gradients, Parameterized};
use super::{AnalogyPredictor, ClassAdversary, EmbeddingAdversary, LogisticPredictor};
use super::{OddsAdversary, ParityAdversary};

/// Step used for central differences.
pub const GRADCHECK_STEP: f64 = 1e-4;

/// A model/loss pairing whose gradients can be checked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GradCheckTarget {
    /// Logistic predictor, cross-entropy.
    Logistic,
    /// Parity adversary on the logistic predictor.
    Parity,
    /// Odds adversary on the logistic predictor.
    Odds,
    /// Parity adversary restricted to one label.
    Opportunity,
    /// Analogy transform, squared error.
    Analogy,
    /// Linear embedding adversary on the analogy transform.
    Embedding,
}

impl GradCheckTarget {
    pub const ALL: [GradCheckTarget; 6] = [
        GradCheckTarget::Logistic,
        GradCheckTarget::Parity,
        GradCheckTarget::Odds,
        GradCheckTarget::Opportunity,
        GradCheckTarget::Analogy,
        GradCheckTarget::Embedding,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GradCheckTarget::Logistic => "logistic",
            GradCheckTarget::Parity => "parity",
            GradCheckTarget::Odds => "odds",
            GradCheckTarget::Opportunity => "opportunity",
            GradCheckTarget::Analogy => "analogy",
            GradCheckTarget::Embedding => "embedding",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name() == name)
    }
}

/// Worst relative error for one gradient over all trials.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckOutcome {
    pub target: GradCheckTarget,
    /// `"W"` for predictor weights, `"U"` for adversary weights.
    pub wrt: &'static str,
    pub trials: usize,
    pub worst_error: f64,
}

const FEATURE_DIM: usize = 5;
const EMBED_DIM: usize = 4;
const BATCH: usize = 8;

fn normal_vec(rng: &mut SeededRng, n: usize, sd: f64) -> DenseVector {
    (0..n).map(|_| sd * rng.standard_normal()).collect()
}

fn classification_batch(rng: &mut SeededRng) -> Vec<LabeledExample> {
    (0..BATCH)
        .map(|i| LabeledExample {
            x: Features::Dense(normal_vec(rng, FEATURE_DIM, 1.0)),
            // Keep both labels present so label-filtered adversaries see data.
            y: if i == 0 {
                1.0
            } else if i == 1 {
                0.0
            } else {
                rng.bernoulli(0.5) as u8 as f64
            },
            z: rng.bernoulli(0.5) as u8 as f64,
        })
        .collect()
}

fn analogy_batch(rng: &mut SeededRng) -> Vec<AnalogyExample> {
    (0..BATCH)
        .map(|_| LabeledExample {
            x: AnalogyInput {
                x1: normal_vec(rng, EMBED_DIM, 1.0),
                x2: normal_vec(rng, EMBED_DIM, 1.0),
                x3: normal_vec(rng, EMBED_DIM, 1.0),
            },
            y: normal_vec(rng, EMBED_DIM, 1.0),
            z: rng.standard_normal(),
        })
        .collect()
}

fn random_logistic(rng: &mut SeededRng) -> LogisticPredictor {
    LogisticPredictor {
        w1: normal_vec(rng, FEATURE_DIM, 0.5),
        b: 0.5 * rng.standard_normal(),
    }
}

fn random_odds(rng: &mut SeededRng) -> OddsAdversary {
    // Stay away from c = 0 where |c| is not differentiable.
    let sign = if rng.bernoulli(0.5) { 1.0 } else { -1.0 };
    OddsAdversary {
        c: sign * (0.2 + 1.3 * rng.uniform()),
        b: rng.standard_normal(),
        w2: [rng.standard_normal(), rng.standard_normal(), rng.standard_normal()],
    }
}

fn check(
    loss: impl Fn(&ParamVector) -> f64,
    analytic: &DenseVector,
    at: &ParamVector,
    tamper: bool,
) -> Result<f64> {
    let analytic = if tamper {
        analytic.scaled(2.0)
    } else {
        analytic.clone()
    };
    finite_diff_check(loss, &analytic, at, GRADCHECK_STEP)
}

/// Runs `trials` random draws for `target` and reports the worst relative
/// error for each gradient involved. `tamper` doubles every analytic
/// gradient, which must make the check fail.
pub fn check_model_gradients(
    target: GradCheckTarget,
    seed: u64,
    trials: usize,
    tamper: bool,
) -> Result<Vec<GradCheckOutcome>> {
    let mut rng = SeededRng::new(seed);
    let mut worst_w: f64 = 0.0;
    let mut worst_u: Option<f64> = None;
    let nan = f64::NAN;

    for _ in 0..trials {
        match target {
            GradCheckTarget::Logistic => {
                let data = classification_batch(&mut rng);
                let batch: Vec<&LabeledExample> = data.iter().collect();
                let pred = random_logistic(&mut rng);
                let g = classification_gradients(&pred, None, &batch, None)?;
                let loss = |p: &ParamVector| {
                    pred.with_params(p)
                        .and_then(|m| classification_gradients(&m, None, &batch, None))
                        .map_or(nan, |g| g.loss_p)
                };
                worst_w = worst_w.max(check(loss, &g.grads.grad_p, &pred.to_params(), tamper)?);
            }
            GradCheckTarget::Parity | GradCheckTarget::Odds | GradCheckTarget::Opportunity => {
                let data = classification_batch(&mut rng);
                let batch: Vec<&LabeledExample> = data.iter().collect();
                let pred = random_logistic(&mut rng);
                let adv = match target {
                    GradCheckTarget::Odds => ClassAdversary::Odds(random_odds(&mut rng)),
                    _ => ClassAdversary::Parity(ParityAdversary {
                        u: 2.0 * rng.standard_normal(),
                        c0: rng.standard_normal(),
                    }),
                };
                let filter = (target == GradCheckTarget::Opportunity).then_some(1.0);
                let g = classification_gradients(&pred, Some(&adv), &batch, filter)?;
                let loss_w = |p: &ParamVector| {
                    pred.with_params(p)
                        .and_then(|m| classification_gradients(&m, Some(&adv), &batch, filter))
                        .map_or(nan, |g| g.loss_a.unwrap_or(nan))
                };
                worst_w = worst_w.max(check(loss_w, &g.grads.grad_a_w, &pred.to_params(), tamper)?);
                let loss_u = |p: &ParamVector| {
                    adv.with_params(p)
                        .and_then(|a| classification_gradients(&pred, Some(&a), &batch, filter))
                        .map_or(nan, |g| g.loss_a.unwrap_or(nan))
                };
                let e = check(loss_u, &g.grads.grad_a_u, &adv.to_params(), tamper)?;
                worst_u = Some(worst_u.unwrap_or(0.0).max(e));
            }
            GradCheckTarget::Analogy | GradCheckTarget::Embedding => {
                let data = analogy_batch(&mut rng);
                let batch: Vec<&AnalogyExample> = data.iter().collect();
                let pred = AnalogyPredictor::new(normal_vec(&mut rng, EMBED_DIM, 0.5));
                if target == GradCheckTarget::Analogy {
                    let g = analogy_gradients(&pred, None, &batch)?;
                    let loss = |p: &ParamVector| {
                        pred.with_params(p)
                            .and_then(|m| analogy_gradients(&m, None, &batch))
                            .map_or(nan, |g| g.loss_p)
                    };
                    worst_w =
                        worst_w.max(check(loss, &g.grads.grad_p, &pred.to_params(), tamper)?);
                } else {
                    let adv = EmbeddingAdversary {
                        w2: normal_vec(&mut rng, EMBED_DIM, 1.0),
                    };
                    let g = analogy_gradients(&pred, Some(&adv), &batch)?;
                    let loss_w = |p: &ParamVector| {
                        pred.with_params(p)
                            .and_then(|m| analogy_gradients(&m, Some(&adv), &batch))
                            .map_or(nan, |g| g.loss_a.unwrap_or(nan))
                    };
                    worst_w =
                        worst_w.max(check(loss_w, &g.grads.grad_a_w, &pred.to_params(), tamper)?);
                    let loss_u = |p: &ParamVector| {
                        adv.with_params(p)
                            .and_then(|a| analogy_gradients(&pred, Some(&a), &batch))
                            .map_or(nan, |g| g.loss_a.unwrap_or(nan))
                    };
                    let e = check(loss_u, &g.grads.grad_a_u, &adv.to_params(), tamper)?;
                    worst_u = Some(worst_u.unwrap_or(0.0).max(e));
                }
            }
        }
    }

    let mut out = vec![GradCheckOutcome {
        target,
        wrt: "W",
        trials,
        worst_error: worst_w,
    }];
    if let Some(e) = worst_u {
        out.push(GradCheckOutcome {
            target,
            wrt: "U",
            trials,
            worst_error: e,
        });
    }
    Ok(out)
}
