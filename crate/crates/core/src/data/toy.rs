use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{sample_normal, DenseVector, Features, SeededRng};

use super::LabeledExample;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub n: usize,
    pub seed: u64,
}

/// Synthetic task where the protected bit `r` leaks into the only other
/// feature.
///
/// Per example: `r ~ Bernoulli(1/2)`, `v ~ N(r, 1)`, `u, w ~ N(v, 1)`
/// independently; `x = (r, u)`, `y = [w > 0]`, `z = r`.
pub fn generate_toy(cfg: &ToyConfig) -> Result<Vec<LabeledExample>> {
    if cfg.n == 0 {
        return Err(Error::InvalidArgument("toy sample count must be >= 1".into()));
    }
    let mut rng = SeededRng::new(cfg.seed);
    (0..cfg.n)
        .map(|_| {
            let r = if rng.bernoulli(0.5) { 1.0 } else { 0.0 };
            let v = sample_normal(&mut rng, r, 1.0)?;
            let u = sample_normal(&mut rng, v, 1.0)?;
            let w = sample_normal(&mut rng, v, 1.0)?;
            Ok(LabeledExample {
                x: Features::Dense(DenseVector::new(vec![r, u])),
                y: if w > 0.0 { 1.0 } else { 0.0 },
                z: r,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(ex: &LabeledExample) -> &DenseVector {
        match &ex.x {
            Features::Dense(d) => d,
            Features::Sparse(_) => unreachable!(),
        }
    }

    #[test]
    fn toy_statistics() {
        let data = generate_toy(&ToyConfig { n: 100_000, seed: 11 }).unwrap();
        let n = data.len() as f64;
        let mean_z = data.iter().map(|e| e.z).sum::<f64>() / n;
        assert!((mean_z - 0.5).abs() < 0.01, "{mean_z}");

        let (mut s1, mut n1, mut s0, mut n0) = (0.0, 0.0, 0.0, 0.0);
        let mut diffs = Vec::with_capacity(data.len());
        for e in &data {
            let x = dense(e);
            assert_eq!(x[0], e.z);
            if e.z == 1.0 {
                s1 += x[1];
                n1 += 1.0;
            } else {
                s0 += x[1];
                n0 += 1.0;
            }
            diffs.push(x[1] - x[0]);
        }
        let gap = s1 / n1 - s0 / n0;
        assert!((gap - 1.0).abs() < 0.03, "E[u|r=1] - E[u|r=0] = {gap}");

        let m = diffs.iter().sum::<f64>() / n;
        let var = diffs.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var - 2.0).abs() < 0.05, "Var(u - r) = {var}");
    }

    #[test]
    fn toy_is_deterministic_per_seed() {
        let a = generate_toy(&ToyConfig { n: 50, seed: 3 }).unwrap();
        let b = generate_toy(&ToyConfig { n: 50, seed: 3 }).unwrap();
        let c = generate_toy(&ToyConfig { n: 50, seed: 4 }).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(generate_toy(&ToyConfig { n: 0, seed: 3 }).is_err());
    }
}
