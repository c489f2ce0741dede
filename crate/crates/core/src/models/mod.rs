//! Predictors and adversaries with closed-form forward passes and
//! hand-derived gradients.
//!
//! Predictors expose a vector-Jacobian product of their output so that an
//! adversary's loss can be pulled back onto predictor weights by the chain
//! rule.

mod gradcheck;
mod gradients;

pub use gradcheck::{check_model_gradients, GradCheckOutcome, GradCheckTarget};
pub use gradients::{analogy_gradients, classification_gradients, BatchGradients};

use serde::{Deserialize, Serialize};

use crate::data::AnalogyInput;
use crate::error::{Error, Result};
use crate::grad_engine::ParamVector;
use crate::numerics::{check_len, dot, logit, sigmoid, softplus, DenseVector, Features};

/// Probabilities are kept within `[LOGIT_CLAMP, 1 - LOGIT_CLAMP]`.
pub const LOGIT_CLAMP: f64 = 1e-7;

pub fn clamp_probability(p: f64) -> f64 {
    p.clamp(LOGIT_CLAMP, 1.0 - LOGIT_CLAMP)
}

/// Conversion between a model and its flat parameter vector.
pub trait Parameterized: Sized {
    fn to_params(&self) -> ParamVector;
    fn load_params(&mut self, params: &ParamVector) -> Result<()>;

    fn with_params(&self, params: &ParamVector) -> Result<Self>
    where
        Self: Clone,
    {
        let mut out = self.clone();
        out.load_params(params)?;
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    BinaryCrossEntropy,
    SquaredError,
}

/// `-[y ln p + (1-y) ln(1-p)]`
pub fn binary_cross_entropy(prediction: f64, target: f64) -> Result<f64> {
    if !(prediction > 0.0 && prediction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "cross-entropy needs a prediction in (0, 1), got {prediction}"
        )));
    }
    if target != 0.0 && target != 1.0 {
        return Err(Error::InvalidArgument(format!(
            "cross-entropy needs a 0/1 target, got {target}"
        )));
    }
    Ok(-(target * prediction.ln() + (1.0 - target) * (1.0 - prediction).ln()))
}

/// Cross-entropy of `sigmoid(logit)` against `target`, evaluated stably.
pub fn logit_cross_entropy(logit: f64, target: f64) -> f64 {
    softplus(logit) - target * logit
}

pub fn squared_error(prediction: &[f64], target: &[f64]) -> Result<f64> {
    check_len(prediction.len(), target.len())?;
    Ok(prediction
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum())
}

/// Loss of `prediction` against `target`; cross-entropy sums over entries.
pub fn loss(kind: LossKind, prediction: &[f64], target: &[f64]) -> Result<f64> {
    match kind {
        LossKind::SquaredError => squared_error(prediction, target),
        LossKind::BinaryCrossEntropy => {
            check_len(prediction.len(), target.len())?;
            prediction
                .iter()
                .zip(target)
                .map(|(&p, &t)| binary_cross_entropy(p, t))
                .sum()
        }
    }
}

/// `ŷ = σ(w1·x + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticPredictor {
    pub w1: DenseVector,
    pub b: f64,
}

impl LogisticPredictor {
    pub fn zeros(dim: usize) -> Self {
        LogisticPredictor {
            w1: DenseVector::zeros(dim),
            b: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.w1.len()
    }

    pub fn logit(&self, x: &Features) -> Result<f64> {
        Ok(x.dot(&self.w1)? + self.b)
    }

    /// Clamped probability.
    pub fn forward(&self, x: &Features) -> Result<f64> {
        Ok(clamp_probability(sigmoid(self.logit(x)?)))
    }

    /// Adds `upstream · ∂ŷ/∂(w1, b)` into `grad` (laid out as `[w1.., b]`).
    /// The derivative is zero where the output is clamped.
    pub fn accumulate_output_grad(
        &self,
        x: &Features,
        logit: f64,
        upstream: f64,
        grad: &mut [f64],
    ) -> Result<()> {
        check_len(self.dim() + 1, grad.len())?;
        let p = sigmoid(logit);
        if !(LOGIT_CLAMP..=1.0 - LOGIT_CLAMP).contains(&p) {
            return Ok(());
        }
        let scale = upstream * p * (1.0 - p);
        let d = self.dim();
        x.add_scaled_into(scale, &mut grad[..d])?;
        grad[d] += scale;
        Ok(())
    }
}

impl Parameterized for LogisticPredictor {
    fn to_params(&self) -> ParamVector {
        ParamVector::new(vec![("w1".into(), self.w1.to_vec()), ("b".into(), vec![self.b])])
            .expect("distinct segment names")
    }

    fn load_params(&mut self, params: &ParamVector) -> Result<()> {
        check_len(self.dim() + 1, params.len())?;
        self.w1 = DenseVector::from_slice(params.segment("w1")?);
        self.b = params.segment("b")?[0];
        Ok(())
    }
}

/// `v = x2 + x3 - x1`, `ŷ = v - w wᵀv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalogyPredictor {
    pub w: DenseVector,
}

impl AnalogyPredictor {
    pub fn new(w: DenseVector) -> Self {
        AnalogyPredictor { w }
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    pub fn analogy_vector(x1: &[f64], x2: &[f64], x3: &[f64]) -> Result<DenseVector> {
        check_len(x1.len(), x2.len())?;
        check_len(x1.len(), x3.len())?;
        Ok(x1
            .iter()
            .zip(x2)
            .zip(x3)
            .map(|((a, b), c)| b + c - a)
            .collect())
    }

    /// Removes the `w` component from an already-formed analogy vector.
    pub fn transform(&self, v: &[f64]) -> Result<DenseVector> {
        let p = dot(&self.w, v)?;
        Ok(v.iter().zip(self.w.iter()).map(|(vi, wi)| vi - wi * p).collect())
    }

    pub fn forward(&self, x1: &[f64], x2: &[f64], x3: &[f64]) -> Result<DenseVector> {
        check_len(self.dim(), x1.len())?;
        let v = Self::analogy_vector(x1, x2, x3)?;
        self.transform(&v)
    }

    pub fn forward_input(&self, input: &AnalogyInput) -> Result<DenseVector> {
        self.forward(&input.x1, &input.x2, &input.x3)
    }

    /// `upstreamᵀ ∂ŷ/∂w` for analogy vector `v`: `-(upstream·(wᵀv) + v·(wᵀupstream))`.
    pub fn output_vjp(&self, v: &[f64], upstream: &[f64]) -> Result<DenseVector> {
        let wv = dot(&self.w, v)?;
        let wg = dot(&self.w, upstream)?;
        Ok(upstream
            .iter()
            .zip(v)
            .map(|(g, vi)| -(g * wv + vi * wg))
            .collect())
    }
}

impl Parameterized for AnalogyPredictor {
    fn to_params(&self) -> ParamVector {
        ParamVector::new(vec![("w".into(), self.w.to_vec())]).expect("single segment")
    }

    fn load_params(&mut self, params: &ParamVector) -> Result<()> {
        check_len(self.dim(), params.len())?;
        self.w = DenseVector::from_slice(params.segment("w")?);
        Ok(())
    }
}

/// Loss, parameter gradient and input gradient of an adversary on one
/// example.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversaryTerm<I> {
    pub loss: f64,
    pub grad_params: Vec<f64>,
    pub grad_input: I,
}

/// `ẑ = σ(u·ŷ + c0)`; sees only the prediction.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ParityAdversary {
    pub u: f64,
    pub c0: f64,
}

impl ParityAdversary {
    pub fn logit(&self, y_hat: f64) -> f64 {
        self.u * y_hat + self.c0
    }

    pub fn forward(&self, y_hat: f64) -> f64 {
        sigmoid(self.logit(y_hat))
    }

    /// Cross-entropy against protected value `z`; `grad_params` is `[u, c0]`.
    pub fn loss_grad(&self, y_hat: f64, z: f64) -> AdversaryTerm<f64> {
        let a = self.logit(y_hat);
        let delta = sigmoid(a) - z;
        AdversaryTerm {
            loss: logit_cross_entropy(a, z),
            grad_params: vec![delta * y_hat, delta],
            grad_input: delta * self.u,
        }
    }
}

impl Parameterized for ParityAdversary {
    fn to_params(&self) -> ParamVector {
        ParamVector::new(vec![("u".into(), vec![self.u]), ("c0".into(), vec![self.c0])])
            .expect("distinct segment names")
    }

    fn load_params(&mut self, params: &ParamVector) -> Result<()> {
        check_len(2, params.len())?;
        self.u = params.segment("u")?[0];
        self.c0 = params.segment("c0")?[0];
        Ok(())
    }
}

/// Adversary for equality of odds:
/// `s = σ((1+|c|)·σ⁻¹(ŷ))`, `ẑ_logit = w2·[s, s·y, s·(1-y)] + b`.
///
/// Growing `|c|` sharpens `s` toward the thresholded prediction `[ŷ > 0.5]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OddsAdversary {
    pub c: f64,
    pub b: f64,
    pub w2: [f64; 3],
}

impl Default for OddsAdversary {
    fn default() -> Self {
        OddsAdversary {
            c: 0.0,
            b: 0.0,
            w2: [0.0; 3],
        }
    }
}

impl OddsAdversary {
    fn check_input(y_hat: f64) -> Result<()> {
        if !(LOGIT_CLAMP..=1.0 - LOGIT_CLAMP).contains(&y_hat) {
            return Err(Error::InvalidArgument(format!(
                "odds adversary needs a clamped probability, got {y_hat}"
            )));
        }
        Ok(())
    }

    pub fn sharpened(&self, y_hat: f64) -> Result<f64> {
        Self::check_input(y_hat)?;
        Ok(sigmoid((1.0 + self.c.abs()) * logit(y_hat)))
    }

    fn features(s: f64, y: f64) -> [f64; 3] {
        [s, s * y, s * (1.0 - y)]
    }

    pub fn logit(&self, y_hat: f64, y: f64) -> Result<f64> {
        let s = self.sharpened(y_hat)?;
        let f = Self::features(s, y);
        Ok(self.w2[0] * f[0] + self.w2[1] * f[1] + self.w2[2] * f[2] + self.b)
    }

    pub fn forward(&self, y_hat: f64, y: f64) -> Result<f64> {
        Ok(sigmoid(self.logit(y_hat, y)?))
    }

    /// Cross-entropy against `z`; `grad_params` is `[c, b, w2₀, w2₁, w2₂]`.
    pub fn loss_grad(&self, y_hat: f64, y: f64, z: f64) -> Result<AdversaryTerm<f64>> {
        Self::check_input(y_hat)?;
        let k = 1.0 + self.c.abs();
        let l = logit(y_hat);
        let s = sigmoid(k * l);
        let f = Self::features(s, y);
        let a = self.w2[0] * f[0] + self.w2[1] * f[1] + self.w2[2] * f[2] + self.b;
        let delta = sigmoid(a) - z;
        let d_s = delta * (self.w2[0] + self.w2[1] * y + self.w2[2] * (1.0 - y));
        let ds_dk = s * (1.0 - s) * l;
        // d|c|/dc taken as signum, so c = +0 moves like c > 0.
        let d_c = d_s * ds_dk * self.c.signum();
        let d_yhat = d_s * s * (1.0 - s) * k / (y_hat * (1.0 - y_hat));
        Ok(AdversaryTerm {
            loss: logit_cross_entropy(a, z),
            grad_params: vec![d_c, delta, delta * f[0], delta * f[1], delta * f[2]],
            grad_input: d_yhat,
        })
    }
}

impl Parameterized for OddsAdversary {
    fn to_params(&self) -> ParamVector {
        ParamVector::new(vec![
            ("c".into(), vec![self.c]),
            ("b".into(), vec![self.b]),
            ("w2".into(), self.w2.to_vec()),
        ])
        .expect("distinct segment names")
    }

    fn load_params(&mut self, params: &ParamVector) -> Result<()> {
        check_len(5, params.len())?;
        self.c = params.segment("c")?[0];
        self.b = params.segment("b")?[0];
        self.w2.copy_from_slice(params.segment("w2")?);
        Ok(())
    }
}

/// Linear read-out `ẑ = w2ᵀŷ` of the protected projection from an analogy
/// prediction, trained with squared error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingAdversary {
    pub w2: DenseVector,
}

impl EmbeddingAdversary {
    pub fn zeros(dim: usize) -> Self {
        EmbeddingAdversary {
            w2: DenseVector::zeros(dim),
        }
    }

    pub fn forward(&self, y_hat: &[f64]) -> Result<f64> {
        dot(&self.w2, y_hat)
    }

    pub fn loss_grad(&self, y_hat: &[f64], z: f64) -> Result<AdversaryTerm<DenseVector>> {
        let r = self.forward(y_hat)? - z;
        Ok(AdversaryTerm {
            loss: r * r,
            grad_params: y_hat.iter().map(|v| 2.0 * r * v).collect(),
            grad_input: self.w2.scaled(2.0 * r),
        })
    }
}

impl Parameterized for EmbeddingAdversary {
    fn to_params(&self) -> ParamVector {
        ParamVector::new(vec![("w2".into(), self.w2.to_vec())]).expect("single segment")
    }

    fn load_params(&mut self, params: &ParamVector) -> Result<()> {
        check_len(self.w2.len(), params.len())?;
        self.w2 = DenseVector::from_slice(params.segment("w2")?);
        Ok(())
    }
}

/// Adversary used by the classification task, chosen by fairness mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassAdversary {
    Parity(ParityAdversary),
    Odds(OddsAdversary),
}

impl ClassAdversary {
    /// Loss and gradients on one example with prediction `y_hat`.
    pub fn loss_grad(&self, y_hat: f64, y: f64, z: f64) -> Result<AdversaryTerm<f64>> {
        match self {
            ClassAdversary::Parity(a) => Ok(a.loss_grad(y_hat, z)),
            ClassAdversary::Odds(a) => a.loss_grad(y_hat, y, z),
        }
    }

    /// Predicted probability that `z = 1`.
    pub fn predict(&self, y_hat: f64, y: f64) -> Result<f64> {
        match self {
            ClassAdversary::Parity(a) => Ok(a.forward(y_hat)),
            ClassAdversary::Odds(a) => a.forward(y_hat, y),
        }
    }
}

impl Parameterized for ClassAdversary {
    fn to_params(&self) -> ParamVector {
        match self {
            ClassAdversary::Parity(a) => a.to_params(),
            ClassAdversary::Odds(a) => a.to_params(),
        }
    }

    fn load_params(&mut self, params: &ParamVector) -> Result<()> {
        match self {
            ClassAdversary::Parity(a) => a.load_params(params),
            ClassAdversary::Odds(a) => a.load_params(params),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn dense(v: &[f64]) -> Features {
        Features::Dense(DenseVector::from_slice(v))
    }

    #[test]
    fn logistic_forward_examples() {
        let m = LogisticPredictor::zeros(3);
        assert_eq!(m.forward(&dense(&[4.0, -2.0, 9.0])).unwrap(), 0.5);
        let m = LogisticPredictor {
            w1: DenseVector::new(vec![1.0]),
            b: 0.0,
        };
        assert_eq!(m.forward(&dense(&[0.0])).unwrap(), 0.5);
        let m = LogisticPredictor {
            w1: DenseVector::new(vec![2.0, -1.0]),
            b: 0.5,
        };
        let expected = 1.0 / (1.0 + (-1.5f64).exp());
        assert_abs_diff_eq!(m.forward(&dense(&[1.0, 1.0])).unwrap(), expected, epsilon = 1e-15);
        assert_abs_diff_eq!(expected, 0.817574, epsilon = 1e-6);
        assert!(m.forward(&dense(&[1.0])).is_err());
    }

    #[test]
    fn logistic_output_is_clamped() {
        let m = LogisticPredictor {
            w1: DenseVector::new(vec![100.0]),
            b: 0.0,
        };
        assert_eq!(m.forward(&dense(&[1.0])).unwrap(), 1.0 - LOGIT_CLAMP);
        assert_eq!(m.forward(&dense(&[-1.0])).unwrap(), LOGIT_CLAMP);
    }

    #[test]
    fn analogy_forward_examples() {
        let x1 = [1.0, 2.0];
        let x2 = [0.5, -1.0];
        let x3 = [3.0, 1.0];
        let v = [2.5, -2.0];
        let m = AnalogyPredictor::new(DenseVector::zeros(2));
        assert_eq!(m.forward(&x1, &x2, &x3).unwrap().as_slice(), &v);

        let m = AnalogyPredictor::new(DenseVector::new(vec![0.6, 0.8]));
        let y = m.transform(&[1.2, 1.6]).unwrap();
        assert!(y.norm() < 1e-12);

        // w = 2·e₁: explicit (I - wwᵀ) matrix gives (v₁ - 4v₁, v₂).
        let m = AnalogyPredictor::new(DenseVector::new(vec![2.0, 0.0]));
        let y = m.forward(&x1, &x2, &x3).unwrap();
        let mat = [[1.0 - 4.0, 0.0], [0.0, 1.0]];
        for i in 0..2 {
            let expect = mat[i][0] * v[0] + mat[i][1] * v[1];
            assert_abs_diff_eq!(y[i], expect, epsilon = 1e-12);
        }
        assert!(m.forward(&[1.0], &x2, &x3).is_err());
    }

    #[test]
    fn parity_adversary_examples() {
        let a = ParityAdversary { u: 0.0, c0: 0.3 };
        assert_eq!(a.forward(0.1), a.forward(0.9));
        let a = ParityAdversary { u: 1.0, c0: 0.0 };
        assert_abs_diff_eq!(a.forward(0.5), 0.622459, epsilon = 1e-6);
        let a = ParityAdversary { u: -4.0, c0: 2.0 };
        assert_eq!(a.forward(0.5), 0.5);
    }

    #[test]
    fn odds_adversary_examples() {
        let a = OddsAdversary::default();
        assert_abs_diff_eq!(a.sharpened(0.3).unwrap(), 0.3, epsilon = 1e-15);

        let big = OddsAdversary {
            c: 1e4,
            ..Default::default()
        };
        assert!(big.sharpened(0.7).unwrap() > 1.0 - 1e-12);

        let a = OddsAdversary {
            c: 1.0,
            b: 0.0,
            w2: [1.0, 1.0, 0.0],
        };
        let s = a.sharpened(0.7).unwrap();
        let expected_s = 1.0 / (1.0 + (-2.0 * (0.7f64 / 0.3).ln()).exp());
        assert_abs_diff_eq!(s, expected_s, epsilon = 1e-15);
        assert_abs_diff_eq!(s, 0.844828, epsilon = 1e-6);
        assert_abs_diff_eq!(a.logit(0.7, 1.0).unwrap(), 2.0 * s, epsilon = 1e-15);
        assert!(a.logit(0.0, 1.0).is_err());
    }

    #[test]
    fn embedding_adversary_examples() {
        let a = EmbeddingAdversary::zeros(3);
        assert_eq!(a.forward(&[1.0, 2.0, 3.0]).unwrap(), 0.0);
        let a = EmbeddingAdversary {
            w2: DenseVector::new(vec![1.0, 0.0]),
        };
        assert_eq!(a.forward(&[0.0, 5.0]).unwrap(), 0.0);
        let a = EmbeddingAdversary {
            w2: DenseVector::new(vec![1.0, 2.0]),
        };
        assert_eq!(a.forward(&[3.0, 4.0]).unwrap(), 11.0);
        assert!(a.forward(&[3.0]).is_err());
    }

    #[test]
    fn loss_examples() {
        assert_abs_diff_eq!(
            loss(LossKind::BinaryCrossEntropy, &[0.5], &[1.0]).unwrap(),
            std::f64::consts::LN_2,
            epsilon = 1e-15
        );
        assert_eq!(loss(LossKind::SquaredError, &[1.0, -2.0], &[1.0, -2.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(
            loss(LossKind::BinaryCrossEntropy, &[0.9], &[0.0]).unwrap(),
            -(0.1f64.ln()),
            epsilon = 1e-12
        );
        assert!(loss(LossKind::BinaryCrossEntropy, &[1.0], &[1.0]).is_err());
        assert!(loss(LossKind::BinaryCrossEntropy, &[0.5], &[0.5]).is_err());
    }

    #[test]
    fn logit_cross_entropy_matches_direct_form() {
        for &a in &[-3.0, -0.2, 0.0, 1.7, 6.0] {
            for &t in &[0.0, 1.0] {
                let direct = binary_cross_entropy(sigmoid(a), t).unwrap();
                assert_abs_diff_eq!(logit_cross_entropy(a, t), direct, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn params_round_trip() {
        let m = LogisticPredictor {
            w1: DenseVector::new(vec![1.0, 2.0]),
            b: 3.0,
        };
        let p = m.to_params();
        assert_eq!(p.values().as_slice(), &[1.0, 2.0, 3.0]);
        let back = LogisticPredictor::zeros(2).with_params(&p).unwrap();
        assert_eq!(back, m);

        let o = OddsAdversary {
            c: 0.5,
            b: -1.0,
            w2: [1.0, 2.0, 3.0],
        };
        assert_eq!(OddsAdversary::default().with_params(&o.to_params()).unwrap(), o);
    }
}
