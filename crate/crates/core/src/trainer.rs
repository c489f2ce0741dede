//! The adversarial training loop.
//!
//! Each step computes the predictor and adversary gradients at the current
//! weights, moves the adversary down its own loss, then moves the predictor
//! along the debiasing direction built from those same gradients.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{AnalogyExample, BiasSubspace, LabeledExample};
use crate::error::{Error, Result};
use crate::fairness::{empirical_entropy, EntropyEstimate, FairnessReport, DEFAULT_THRESHOLD};
use crate::grad_engine::{
    adversary_alignment, compose_debias_direction, compose_debias_direction_per_segment,
    AdamConfig, AdamState, ScheduleSpec,
};
use crate::models::{
    analogy_gradients, classification_gradients, AnalogyPredictor, BatchGradients,
    ClassAdversary, EmbeddingAdversary, LogisticPredictor, OddsAdversary, ParityAdversary,
    Parameterized,
};
use crate::numerics::{DenseVector, SeededRng};

/// Which independence the adversary is asked to break.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FairnessMode {
    /// Adversary sees the prediction only.
    DemographicParity,
    /// Adversary sees the prediction and the true label.
    EqualityOfOdds,
    /// Adversary sees the prediction, trained only where `y == target_y`.
    EqualityOfOpportunity { target_y: u8 },
}

impl FairnessMode {
    pub fn name(self) -> &'static str {
        match self {
            FairnessMode::DemographicParity => "parity",
            FairnessMode::EqualityOfOdds => "odds",
            FairnessMode::EqualityOfOpportunity { .. } => "opportunity",
        }
    }

    pub fn initial_adversary(self) -> ClassAdversary {
        match self {
            FairnessMode::EqualityOfOdds => ClassAdversary::Odds(OddsAdversary::default()),
            _ => ClassAdversary::Parity(ParityAdversary::default()),
        }
    }

    /// Label the adversary's examples are restricted to, if any.
    pub fn adversary_label(self) -> Option<f64> {
        match self {
            FairnessMode::EqualityOfOpportunity { target_y } => Some(f64::from(target_y)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub predictor_lr: f64,
    pub adversary_lr: f64,
    pub schedule: ScheduleSpec,
    pub mode: FairnessMode,
    pub debias: bool,
    pub seed: u64,
    /// Abort when a loss exceeds this.
    pub loss_blowup_limit: f64,
    /// Project each parameter segment (weights, bias) separately.
    pub per_segment_projection: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 5000,
            batch_size: 128,
            predictor_lr: 0.01,
            adversary_lr: 0.01,
            schedule: ScheduleSpec::constant(0.1),
            mode: FairnessMode::DemographicParity,
            debias: false,
            seed: 0,
            loss_blowup_limit: 1e3,
            per_segment_projection: false,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.steps == 0 {
            return bad("steps must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        for (name, lr) in [("predictor_lr", self.predictor_lr), ("adversary_lr", self.adversary_lr)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("{name} must be a positive number, got {lr}"));
            }
        }
        if !(self.schedule.alpha0 >= 0.0) {
            return bad(format!("alpha0 must be >= 0, got {}", self.schedule.alpha0));
        }
        Ok(())
    }
}

/// One logged training step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: u64,
    pub loss_p: f64,
    pub loss_a: Option<f64>,
    pub alpha: f64,
    pub eta_scale: f64,
    /// Applied direction dotted with the adversary gradient on the weights.
    pub dir_dot_grad_a: Option<f64>,
    pub grad_a_norm_sq: Option<f64>,
    /// Euclidean norm of the applied direction.
    pub direction_norm: f64,
    pub adversary_batch: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Completed,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<StepRecord>,
    pub termination: Option<Termination>,
    pub wall_time_s: Option<f64>,
}

impl TrainLog {
    /// One JSON object per step, newline separated.
    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("plain record"));
            out.push('\n');
        }
        out
    }
}

/// A predictor/adversary pairing trained by the loop.
pub trait Task {
    type Example;
    type Predictor: Parameterized + Clone;
    type Adversary: Parameterized + Clone;

    fn init_predictor(&self, rng: &mut SeededRng) -> Self::Predictor;
    fn init_adversary(&self) -> Self::Adversary;
    fn gradients(
        &self,
        predictor: &Self::Predictor,
        adversary: Option<&Self::Adversary>,
        batch: &[&Self::Example],
    ) -> Result<BatchGradients>;
}

/// Logistic regression on tabular features with a classification adversary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassificationTask {
    pub dim: usize,
    pub mode: FairnessMode,
}

impl Task for ClassificationTask {
    type Example = LabeledExample;
    type Predictor = LogisticPredictor;
    type Adversary = ClassAdversary;

    fn init_predictor(&self, _rng: &mut SeededRng) -> LogisticPredictor {
        LogisticPredictor::zeros(self.dim)
    }

    fn init_adversary(&self) -> ClassAdversary {
        self.mode.initial_adversary()
    }

    fn gradients(
        &self,
        predictor: &LogisticPredictor,
        adversary: Option<&ClassAdversary>,
        batch: &[&LabeledExample],
    ) -> Result<BatchGradients> {
        classification_gradients(predictor, adversary, batch, self.mode.adversary_label())
    }
}

/// The analogy transform with a linear protected-projection adversary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalogyTask {
    pub dim: usize,
    /// Standard deviation of each initial weight; zero weights are a
    /// stationary point of both losses, so a small random start is needed.
    pub init_scale: f64,
}

impl Task for AnalogyTask {
    type Example = AnalogyExample;
    type Predictor = AnalogyPredictor;
    type Adversary = EmbeddingAdversary;

    fn init_predictor(&self, rng: &mut SeededRng) -> AnalogyPredictor {
        AnalogyPredictor::new((0..self.dim).map(|_| self.init_scale * rng.standard_normal()).collect())
    }

    fn init_adversary(&self) -> EmbeddingAdversary {
        EmbeddingAdversary::zeros(self.dim)
    }

    fn gradients(
        &self,
        predictor: &AnalogyPredictor,
        adversary: Option<&EmbeddingAdversary>,
        batch: &[&AnalogyExample],
    ) -> Result<BatchGradients> {
        analogy_gradients(predictor, adversary, batch)
    }
}

#[derive(Debug, Clone)]
pub struct AdversaryState<A> {
    pub model: A,
    pub optimizer: AdamState,
}

#[derive(Debug, Clone)]
pub struct TrainState<T: Task> {
    /// Completed steps.
    pub t: u64,
    pub predictor: T::Predictor,
    pub optimizer: AdamState,
    /// Present only when debiasing.
    pub adversary: Option<AdversaryState<T::Adversary>>,
    pub rng: SeededRng,
    pub log: TrainLog,
}

impl<T: Task> TrainState<T> {
    pub fn new(task: &T, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = SeededRng::new(cfg.seed);
        let predictor = task.init_predictor(&mut rng);
        let optimizer = AdamState::new(predictor.to_params().len(), AdamConfig::with_lr(cfg.predictor_lr))?;
        let adversary = if cfg.debias {
            let model = task.init_adversary();
            let optimizer = AdamState::new(model.to_params().len(), AdamConfig::with_lr(cfg.adversary_lr))?;
            Some(AdversaryState { model, optimizer })
        } else {
            None
        };
        Ok(TrainState {
            t: 0,
            predictor,
            optimizer,
            adversary,
            rng,
            log: TrainLog::default(),
        })
    }

    fn diverged(&mut self, reason: String) -> Error {
        self.log.termination = Some(Termination::Diverged);
        Error::Divergence {
            step: self.t + 1,
            reason,
            log: Box::new(self.log.clone()),
        }
    }
}

/// One simultaneous update of adversary and predictor on `batch`.
pub fn train_step<T: Task>(
    task: &T,
    state: &mut TrainState<T>,
    batch: &[&T::Example],
    cfg: &TrainConfig,
) -> Result<StepRecord> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty training batch".into()));
    }
    let g = match task.gradients(&state.predictor, state.adversary.as_ref().map(|a| &a.model), batch) {
        Ok(g) => g,
        Err(Error::NonFinite(reason)) => return Err(state.diverged(reason)),
        Err(e) => return Err(e),
    };
    for (name, loss) in [("predictor", Some(g.loss_p)), ("adversary", g.loss_a)] {
        if let Some(l) = loss {
            if !l.is_finite() || l > cfg.loss_blowup_limit {
                return Err(state.diverged(format!("{name} loss {l} exceeds {}", cfg.loss_blowup_limit)));
            }
        }
    }

    let (alpha, eta_scale) = cfg.schedule.values(state.t + 1);
    let mut params = state.predictor.to_params();
    let (direction, alignment) = match state.adversary.as_mut() {
        Some(adv) => {
            let mut u = adv.model.to_params();
            adv.optimizer.step(&mut u, &g.grads.grad_a_u, 1.0)?;
            adv.model.load_params(&u)?;
            let dir = if cfg.per_segment_projection {
                compose_debias_direction_per_segment(&g.grads, alpha, &params)?
            } else {
                compose_debias_direction(&g.grads, alpha)?
            };
            let alignment = adversary_alignment(&dir, &g.grads.grad_a_w)?;
            (dir, Some(alignment))
        }
        None => (g.grads.grad_p.clone(), None),
    };
    state.optimizer.step(&mut params, &direction, eta_scale)?;
    state.predictor.load_params(&params)?;
    state.t += 1;

    let record = StepRecord {
        t: state.t,
        loss_p: g.loss_p,
        loss_a: g.loss_a,
        alpha,
        eta_scale,
        dir_dot_grad_a: alignment.map(|a| a.0),
        grad_a_norm_sq: alignment.map(|a| a.1),
        direction_norm: direction.norm(),
        adversary_batch: g.adversary_batch,
    };
    state.log.records.push(record.clone());
    Ok(record)
}

/// Runs `cfg.steps` steps over seeded per-epoch shuffles of `train`,
/// keeping the final partial batch of each epoch.
pub fn fit<T: Task>(task: &T, cfg: &TrainConfig, train: &[T::Example]) -> Result<TrainState<T>> {
    if train.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let started = Instant::now();
    let mut state = TrainState::new(task, cfg)?;
    let mut order: Vec<usize> = (0..train.len()).collect();
    'epochs: loop {
        state.rng.shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size) {
            if state.t >= cfg.steps {
                break 'epochs;
            }
            let batch: Vec<&T::Example> = chunk.iter().map(|&i| &train[i]).collect();
            train_step(task, &mut state, &batch, cfg)?;
        }
    }
    state.log.termination = Some(Termination::Completed);
    state.log.wall_time_s = Some(started.elapsed().as_secs_f64());
    Ok(state)
}

/// Test-set measurements of a classification run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationEval {
    pub report: FairnessReport,
    /// Mean adversary cross-entropy on its test examples.
    pub adversary_bce: Option<f64>,
    /// Plug-in entropies over the same examples the adversary is scored on.
    pub entropy: EntropyEstimate,
}

pub fn evaluate_classification(
    predictor: &LogisticPredictor,
    adversary: Option<&ClassAdversary>,
    test: &[LabeledExample],
    mode: FairnessMode,
) -> Result<ClassificationEval> {
    if test.is_empty() {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    let y_hat = test
        .iter()
        .map(|ex| predictor.forward(&ex.x))
        .collect::<Result<Vec<f64>>>()?;
    let y: Vec<f64> = test.iter().map(|ex| ex.y).collect();
    let z: Vec<f64> = test.iter().map(|ex| ex.z).collect();
    let report = FairnessReport::from_predictions(&y_hat, &y, &z, DEFAULT_THRESHOLD)?;

    let keep: Vec<usize> = (0..test.len())
        .filter(|&i| mode.adversary_label().is_none_or(|l| y[i] == l))
        .collect();
    let ys: Vec<f64> = keep.iter().map(|&i| y[i]).collect();
    let zs: Vec<f64> = keep.iter().map(|&i| z[i]).collect();
    let entropy = if zs.is_empty() {
        empirical_entropy(&z, Some(&y))?
    } else {
        empirical_entropy(&zs, Some(&ys))?
    };
    let adversary_bce = match adversary {
        Some(adv) if !keep.is_empty() => {
            let mut total = 0.0;
            for &i in &keep {
                total += adv.loss_grad(y_hat[i], y[i], z[i])?.loss;
            }
            Some(total / keep.len() as f64)
        }
        _ => None,
    };
    Ok(ClassificationEval {
        report,
        adversary_bce,
        entropy,
    })
}

/// Held-out measurements of an analogy transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalogyEval {
    /// Mean squared distance between prediction and target embedding.
    pub heldout_loss: f64,
    pub w_dot_g: f64,
    pub w_norm: f64,
    pub adversary_loss: Option<f64>,
}

pub fn evaluate_analogy(
    predictor: &AnalogyPredictor,
    adversary: Option<&EmbeddingAdversary>,
    test: &[AnalogyExample],
    subspace: &BiasSubspace,
) -> Result<AnalogyEval> {
    let refs: Vec<&AnalogyExample> = test.iter().collect();
    let g = analogy_gradients(predictor, adversary, &refs)?;
    Ok(AnalogyEval {
        heldout_loss: g.loss_p,
        w_dot_g: predictor.w.dot(subspace.g())?,
        w_norm: predictor.w.norm(),
        adversary_loss: g.loss_a,
    })
}

/// Learned logistic coefficients with their feature names.
pub fn named_coefficients(predictor: &LogisticPredictor, names: &[&str]) -> Vec<(String, f64)> {
    let params = predictor.to_params();
    let values: &DenseVector = params.values();
    let mut out: Vec<(String, f64)> = names
        .iter()
        .zip(values.iter())
        .map(|(n, v)| (n.to_string(), *v))
        .collect();
    out.push(("bias".into(), values[values.len() - 1]));
    out
}
