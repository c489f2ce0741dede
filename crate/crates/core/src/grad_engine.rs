//! Flattened parameters, Adam, learning-rate and adversary-weight schedules,
//! the debiasing update direction, and finite-difference gradient checks.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{check_len, dot, project, DenseVector, PROJECTION_EPS};

/// A model's parameters as one flat vector split into named segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    segments: Vec<(String, usize)>,
    values: DenseVector,
}

impl ParamVector {
    pub fn new(segments: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let mut names: Vec<(String, usize)> = Vec::with_capacity(segments.len());
        let mut values = Vec::new();
        for (name, seg) in segments {
            if names.iter().any(|(n, _)| *n == name) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate parameter segment {name:?}"
                )));
            }
            names.push((name, seg.len()));
            values.extend(seg);
        }
        Ok(ParamVector {
            segments: names,
            values: DenseVector::new(values),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &DenseVector {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut DenseVector {
        &mut self.values
    }

    pub fn segments(&self) -> impl Iterator<Item = (&str, Range<usize>)> + '_ {
        let mut start = 0;
        self.segments.iter().map(move |(name, len)| {
            let range = start..start + len;
            start += len;
            (name.as_str(), range)
        })
    }

    pub fn range(&self, name: &str) -> Result<Range<usize>> {
        self.segments()
            .find(|(n, _)| *n == name)
            .map(|(_, r)| r)
            .ok_or_else(|| Error::InvalidArgument(format!("no parameter segment named {name:?}")))
    }

    pub fn segment(&self, name: &str) -> Result<&[f64]> {
        let r = self.range(name)?;
        Ok(&self.values[r])
    }

    pub fn set_segment(&mut self, name: &str, data: &[f64]) -> Result<()> {
        let r = self.range(name)?;
        check_len(r.len(), data.len())?;
        self.values[r].copy_from_slice(data);
        Ok(())
    }

    /// Same layout, new values.
    pub fn with_values(&self, values: DenseVector) -> Result<Self> {
        check_len(self.len(), values.len())?;
        Ok(ParamVector {
            segments: self.segments.clone(),
            values,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub base_lr: f64,
}

impl AdamConfig {
    pub fn with_lr(base_lr: f64) -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            base_lr,
        }
    }
}

/// Moment estimates for Adam.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    m: DenseVector,
    v: DenseVector,
    t: u64,
}

impl AdamState {
    pub fn new(len: usize, config: AdamConfig) -> Result<Self> {
        let c = &config;
        if !(0.0..1.0).contains(&c.beta1) || !(0.0..1.0).contains(&c.beta2) {
            return Err(Error::InvalidArgument("Adam betas must lie in [0, 1)".into()));
        }
        if !(c.eps > 0.0) || !(c.base_lr > 0.0) {
            return Err(Error::InvalidArgument(
                "Adam eps and learning rate must be positive".into(),
            ));
        }
        Ok(AdamState {
            config,
            m: DenseVector::zeros(len),
            v: DenseVector::zeros(len),
            t: 0,
        })
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &DenseVector {
        &self.m
    }

    pub fn second_moment(&self) -> &DenseVector {
        &self.v
    }

    /// One bias-corrected Adam update of `params` along `grad`, with the step
    /// size multiplied by `lr_scale`.
    pub fn step(&mut self, params: &mut ParamVector, grad: &[f64], lr_scale: f64) -> Result<()> {
        check_len(params.len(), grad.len())?;
        check_len(self.m.len(), grad.len())?;
        if !(lr_scale >= 0.0) || !lr_scale.is_finite() {
            return Err(Error::InvalidArgument(format!("lr_scale {lr_scale} must be >= 0")));
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient entry {i} = {}", grad[i])));
        }
        let AdamConfig {
            beta1,
            beta2,
            eps,
            base_lr,
        } = self.config;
        self.t += 1;
        let bc1 = 1.0 - beta1.powf(self.t as f64);
        let bc2 = 1.0 - beta2.powf(self.t as f64);
        let lr = base_lr * lr_scale;
        let values = params.values_mut();
        for (i, &g) in grad.iter().enumerate() {
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            if lr > 0.0 {
                let m_hat = self.m[i] / bc1;
                let v_hat = self.v[i] / bc2;
                values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtaMode {
    Constant,
    InverseT,
}

/// Adversary weight α(t) = alpha0·√t and predictor step scale η(t).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub alpha0: f64,
    pub eta_mode: EtaMode,
    pub t0: u64,
}

impl ScheduleSpec {
    pub fn constant(alpha0: f64) -> Self {
        ScheduleSpec {
            alpha0,
            eta_mode: EtaMode::Constant,
            t0: 1,
        }
    }

    pub fn inverse_t(alpha0: f64, t0: u64) -> Self {
        ScheduleSpec {
            alpha0,
            eta_mode: EtaMode::InverseT,
            t0,
        }
    }

    /// `(alpha, eta_scale)` at step `t` (counted from 1).
    pub fn values(&self, t: u64) -> (f64, f64) {
        let t = t.max(1);
        let alpha = self.alpha0 * (t as f64).sqrt();
        let eta = match self.eta_mode {
            EtaMode::Constant => 1.0,
            EtaMode::InverseT => (self.t0.max(1) as f64 / t as f64).min(1.0),
        };
        (alpha, eta)
    }
}

pub fn schedule_values(spec: &ScheduleSpec, t: u64) -> (f64, f64) {
    spec.values(t)
}

/// The three gradients combined into the predictor's update direction.
#[derive(Debug, Clone, PartialEq)]
pub struct DebiasGradients {
    /// Predictor loss w.r.t. predictor weights.
    pub grad_p: DenseVector,
    /// Adversary loss w.r.t. predictor weights (through the prediction).
    pub grad_a_w: DenseVector,
    /// Adversary loss w.r.t. adversary weights.
    pub grad_a_u: DenseVector,
}

impl DebiasGradients {
    /// Only the predictor's own gradient; adversary terms are zero.
    pub fn predictor_only(grad_p: DenseVector) -> Self {
        let n = grad_p.len();
        DebiasGradients {
            grad_p,
            grad_a_w: DenseVector::zeros(n),
            grad_a_u: DenseVector::default(),
        }
    }
}

/// `grad_p - proj_{grad_a_w}(grad_p) - alpha * grad_a_w`.
///
/// Descending along this direction removes every component of the
/// predictor's step that would lower the adversary's loss, and adds a push
/// of weight `alpha` that raises it.
pub fn compose_debias_direction(g: &DebiasGradients, alpha: f64) -> Result<DenseVector> {
    check_len(g.grad_p.len(), g.grad_a_w.len())?;
    if !(alpha >= 0.0) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} must be >= 0")));
    }
    if g.grad_a_w.norm_sq() < PROJECTION_EPS {
        return Ok(g.grad_p.clone());
    }
    let proj = project(&g.grad_p, &g.grad_a_w)?;
    Ok(g
        .grad_p
        .iter()
        .zip(proj.iter())
        .zip(g.grad_a_w.iter())
        .map(|((p, pr), a)| p - pr - alpha * a)
        .collect())
}

/// Like [`compose_debias_direction`], but projecting each named parameter
/// segment separately.
pub fn compose_debias_direction_per_segment(
    g: &DebiasGradients,
    alpha: f64,
    layout: &ParamVector,
) -> Result<DenseVector> {
    check_len(layout.len(), g.grad_p.len())?;
    check_len(layout.len(), g.grad_a_w.len())?;
    let mut out = DenseVector::zeros(layout.len());
    for (_, range) in layout.segments() {
        let part = DebiasGradients {
            grad_p: DenseVector::from_slice(&g.grad_p[range.clone()]),
            grad_a_w: DenseVector::from_slice(&g.grad_a_w[range.clone()]),
            grad_a_u: DenseVector::default(),
        };
        let dir = compose_debias_direction(&part, alpha)?;
        out[range].copy_from_slice(&dir);
    }
    Ok(out)
}

/// Relative error used by the gradient checker.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Central-difference gradient of `loss` at `params`.
pub fn numeric_gradient<F>(loss: F, params: &ParamVector, h: f64) -> Result<DenseVector>
where
    F: Fn(&ParamVector) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step h = {h} must be positive")));
    }
    let mut probe = params.clone();
    let mut out = DenseVector::zeros(params.len());
    for i in 0..params.len() {
        let orig = params.values()[i];
        probe.values_mut()[i] = orig + h;
        let plus = loss(&probe);
        probe.values_mut()[i] = orig - h;
        let minus = loss(&probe);
        probe.values_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss at coordinate {i} perturbation ({plus}, {minus})"
            )));
        }
        out[i] = (plus - minus) / (2.0 * h);
    }
    Ok(out)
}

/// Maximum relative error between `analytic_grad` and central differences of
/// `loss` over all coordinates.
pub fn finite_diff_check<F>(
    loss: F,
    analytic_grad: &[f64],
    params: &ParamVector,
    h: f64,
) -> Result<f64>
where
    F: Fn(&ParamVector) -> f64,
{
    check_len(params.len(), analytic_grad.len())?;
    let base = loss(params);
    if !base.is_finite() {
        return Err(Error::NonFinite(format!("loss at base point = {base}")));
    }
    let numeric = numeric_gradient(loss, params, h)?;
    Ok(analytic_grad
        .iter()
        .zip(numeric.iter())
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max))
}

/// `d · grad_a_w` and `‖grad_a_w‖²`; the first equals `-alpha` times the
/// second for any direction built by [`compose_debias_direction`].
pub fn adversary_alignment(direction: &[f64], grad_a_w: &[f64]) -> Result<(f64, f64)> {
    Ok((dot(direction, grad_a_w)?, dot(grad_a_w, grad_a_w)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn scalar_params(x: f64) -> ParamVector {
        ParamVector::new(vec![("x".into(), vec![x])]).unwrap()
    }

    #[test]
    fn param_vector_segments_round_trip() {
        let mut p = ParamVector::new(vec![
            ("w".into(), vec![1.0, 2.0, 3.0]),
            ("b".into(), vec![4.0]),
        ])
        .unwrap();
        assert_eq!(p.len(), 4);
        assert_eq!(p.segment("w").unwrap(), &[1.0, 2.0, 3.0]);
        p.set_segment("b", &[-1.5]).unwrap();
        assert_eq!(p.segment("b").unwrap(), &[-1.5]);
        assert!(p.set_segment("b", &[1.0, 2.0]).is_err());
        assert!(p.segment("nope").is_err());
        assert!(ParamVector::new(vec![("a".into(), vec![]), ("a".into(), vec![])]).is_err());
    }

    #[test]
    fn adam_zero_gradient_leaves_params() {
        let mut p = scalar_params(0.3);
        let mut s = AdamState::new(1, AdamConfig::with_lr(0.1)).unwrap();
        s.step(&mut p, &[0.0], 1.0).unwrap();
        assert_eq!(p.values()[0], 0.3);
        assert_eq!(s.steps(), 1);
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        // At t = 1 bias correction gives m̂ = g and v̂ = g², so the step is lr·g/(|g| + ε).
        let mut p = scalar_params(0.0);
        let mut s = AdamState::new(1, AdamConfig::with_lr(0.1)).unwrap();
        s.step(&mut p, &[1.0], 1.0).unwrap();
        assert_abs_diff_eq!(p.values()[0], -0.1 / (1.0 + 1e-8), epsilon = 1e-15);
    }

    #[test]
    fn adam_zero_scale_updates_moments_only() {
        let mut p = scalar_params(2.0);
        let mut s = AdamState::new(1, AdamConfig::with_lr(0.1)).unwrap();
        s.step(&mut p, &[0.5], 0.0).unwrap();
        assert_eq!(p.values()[0], 2.0);
        assert!(s.first_moment()[0] > 0.0);
        assert!(s.second_moment()[0] > 0.0);
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut p = scalar_params(0.0);
        let mut s = AdamState::new(1, AdamConfig::with_lr(0.1)).unwrap();
        assert!(matches!(
            s.step(&mut p, &[f64::NAN], 1.0),
            Err(Error::NonFinite(_))
        ));
        assert!(s.step(&mut p, &[1.0, 2.0], 1.0).is_err());
    }

    #[test]
    fn compose_examples() {
        let g = DebiasGradients::predictor_only(DenseVector::new(vec![0.3, -2.0]));
        assert_eq!(compose_debias_direction(&g, 5.0).unwrap(), g.grad_p);

        let g = DebiasGradients {
            grad_p: DenseVector::new(vec![1.0, 0.0]),
            grad_a_w: DenseVector::new(vec![1.0, 1.0]),
            grad_a_u: DenseVector::default(),
        };
        let d = compose_debias_direction(&g, 1.0).unwrap();
        assert_abs_diff_eq!(d[0], -0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(d[1], -1.5, epsilon = 1e-15);

        let g = DebiasGradients {
            grad_p: DenseVector::new(vec![2.0, 4.0]),
            grad_a_w: DenseVector::new(vec![1.0, 2.0]),
            grad_a_u: DenseVector::default(),
        };
        let d = compose_debias_direction(&g, 0.0).unwrap();
        assert!(d.norm() < 1e-15);

        let bad = DebiasGradients {
            grad_p: DenseVector::new(vec![1.0]),
            grad_a_w: DenseVector::new(vec![1.0, 0.0]),
            grad_a_u: DenseVector::default(),
        };
        assert!(compose_debias_direction(&bad, 1.0).is_err());
    }

    #[test]
    fn per_segment_composition_projects_within_segments() {
        let layout = ParamVector::new(vec![
            ("a".into(), vec![0.0, 0.0]),
            ("b".into(), vec![0.0]),
        ])
        .unwrap();
        let g = DebiasGradients {
            grad_p: DenseVector::new(vec![1.0, 0.0, 3.0]),
            grad_a_w: DenseVector::new(vec![1.0, 1.0, 0.0]),
            grad_a_u: DenseVector::default(),
        };
        let d = compose_debias_direction_per_segment(&g, 1.0, &layout).unwrap();
        assert_abs_diff_eq!(d[0], -0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(d[1], -1.5, epsilon = 1e-15);
        // Zero adversary gradient in segment b leaves it untouched.
        assert_eq!(d[2], 3.0);
    }

    #[test]
    fn schedule_examples() {
        let s = ScheduleSpec::inverse_t(1.0, 1);
        assert_eq!(s.values(4), (2.0, 0.25));
        let off = ScheduleSpec::inverse_t(0.0, 1);
        assert_eq!(off.values(17).0, 0.0);
        let late = ScheduleSpec::inverse_t(1.0, 100);
        assert_eq!(late.values(50).1, 1.0);
        assert_eq!(ScheduleSpec::constant(0.5).values(9), (1.5, 1.0));
    }

    #[test]
    fn alpha_eta_product_decays() {
        let s = ScheduleSpec::inverse_t(1.0, 1000);
        let mut prev = f64::INFINITY;
        for t in (1000..200_000).step_by(997) {
            let (a, e) = s.values(t);
            assert!(a * e <= prev + 1e-15);
            prev = a * e;
        }
        let (a, e) = s.values(10_000_000_000);
        assert!(a * e < 1.0);
    }

    #[test]
    fn finite_diff_quadratic() {
        let p = ParamVector::new(vec![("t".into(), vec![0.3, -1.2, 2.5])]).unwrap();
        let loss = |q: &ParamVector| q.values().norm_sq();
        let analytic: Vec<f64> = p.values().iter().map(|x| 2.0 * x).collect();
        let err = finite_diff_check(loss, &analytic, &p, 1e-4).unwrap();
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn finite_diff_detects_scaled_gradient() {
        let p = ParamVector::new(vec![("t".into(), vec![0.3, -1.2, 2.5])]).unwrap();
        let loss = |q: &ParamVector| q.values().norm_sq();
        let wrong: Vec<f64> = p.values().iter().map(|x| 4.0 * x).collect();
        let err = finite_diff_check(loss, &wrong, &p, 1e-4).unwrap();
        // |2g - g| / (|2g| + |g|) = 1/3
        assert_abs_diff_eq!(err, 1.0 / 3.0, epsilon = 1e-6);
    }

    #[test]
    fn finite_diff_constant_loss() {
        let p = ParamVector::new(vec![("t".into(), vec![0.3, -1.2])]).unwrap();
        let err = finite_diff_check(|_| 4.2, &[0.0, 0.0], &p, 1e-4).unwrap();
        assert!(err < 1e-8);
    }

    #[test]
    fn finite_diff_non_finite_loss() {
        let p = scalar_params(1.0);
        assert!(finite_diff_check(|_| f64::NAN, &[0.0], &p, 1e-4).is_err());
    }
}
