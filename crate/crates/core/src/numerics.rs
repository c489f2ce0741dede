//! Dense and sparse vector primitives, projection, seeded sampling, PCA and
//! the standard normal CDF.

use std::ops::{Deref, DerefMut};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this squared norm a projection target is treated as the zero vector.
pub const PROJECTION_EPS: f64 = 1e-12;

/// A fixed-length vector of reals.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DenseVector(Vec<f64>);

impl DenseVector {
    pub fn new(values: Vec<f64>) -> Self {
        DenseVector(values)
    }

    pub fn zeros(len: usize) -> Self {
        DenseVector(vec![0.0; len])
    }

    pub fn from_slice(values: &[f64]) -> Self {
        DenseVector(values.to_vec())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &DenseVector) -> Result<f64> {
        dot(&self.0, &other.0)
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn scaled(&self, factor: f64) -> DenseVector {
        DenseVector(self.0.iter().map(|v| v * factor).collect())
    }

    /// `self += factor * other`
    pub fn axpy(&mut self, factor: f64, other: &DenseVector) -> Result<()> {
        check_len(self.len(), other.len())?;
        for (a, b) in self.0.iter_mut().zip(other.0.iter()) {
            *a += factor * b;
        }
        Ok(())
    }

    pub fn add(&self, other: &DenseVector) -> Result<DenseVector> {
        let mut out = self.clone();
        out.axpy(1.0, other)?;
        Ok(out)
    }

    pub fn sub(&self, other: &DenseVector) -> Result<DenseVector> {
        let mut out = self.clone();
        out.axpy(-1.0, other)?;
        Ok(out)
    }

    /// Unit vector in the same direction. Errors on the zero vector.
    pub fn normalized(&self) -> Result<DenseVector> {
        let n = self.norm();
        if n <= f64::MIN_POSITIVE || !n.is_finite() {
            return Err(Error::InvalidArgument(
                "cannot normalize a zero or non-finite vector".into(),
            ));
        }
        Ok(self.scaled(1.0 / n))
    }
}

impl Deref for DenseVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for DenseVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for DenseVector {
    fn from(values: Vec<f64>) -> Self {
        DenseVector(values)
    }
}

impl FromIterator<f64> for DenseVector {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        DenseVector(iter.into_iter().collect())
    }
}

/// Sparse feature vector with strictly increasing indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseFeatures {
    dim: usize,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseFeatures {
    pub fn new(dim: usize, entries: Vec<(usize, f64)>) -> Result<Self> {
        let mut indices = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        for (idx, value) in entries {
            if idx >= dim {
                return Err(Error::InvalidArgument(format!(
                    "sparse index {idx} out of range for dimension {dim}"
                )));
            }
            if let Some(&last) = indices.last() {
                if idx <= last {
                    return Err(Error::InvalidArgument(format!(
                        "sparse indices must be strictly increasing ({last} then {idx})"
                    )));
                }
            }
            indices.push(idx);
            values.push(value);
        }
        Ok(SparseFeatures {
            dim,
            indices,
            values,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    pub fn dot(&self, dense: &[f64]) -> Result<f64> {
        check_len(self.dim, dense.len())?;
        Ok(self.iter().map(|(i, v)| v * dense[i]).sum())
    }

    pub fn to_dense(&self) -> DenseVector {
        let mut out = DenseVector::zeros(self.dim);
        for (i, v) in self.iter() {
            out[i] = v;
        }
        out
    }
}

/// Either representation of a feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Features {
    Dense(DenseVector),
    Sparse(SparseFeatures),
}

impl Features {
    pub fn dim(&self) -> usize {
        match self {
            Features::Dense(d) => d.len(),
            Features::Sparse(s) => s.dim(),
        }
    }

    pub fn dot(&self, dense: &[f64]) -> Result<f64> {
        match self {
            Features::Dense(d) => dot(d, dense),
            Features::Sparse(s) => s.dot(dense),
        }
    }

    /// `out += factor * self`
    pub fn add_scaled_into(&self, factor: f64, out: &mut [f64]) -> Result<()> {
        check_len(self.dim(), out.len())?;
        match self {
            Features::Dense(d) => {
                for (o, v) in out.iter_mut().zip(d.iter()) {
                    *o += factor * v;
                }
            }
            Features::Sparse(s) => {
                for (i, v) in s.iter() {
                    out[i] += factor * v;
                }
            }
        }
        Ok(())
    }

    pub fn to_dense(&self) -> DenseVector {
        match self {
            Features::Dense(d) => d.clone(),
            Features::Sparse(s) => s.to_dense(),
        }
    }
}

impl From<DenseVector> for Features {
    fn from(v: DenseVector) -> Self {
        Features::Dense(v)
    }
}

impl From<SparseFeatures> for Features {
    fn from(v: SparseFeatures) -> Self {
        Features::Sparse(v)
    }
}

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

pub fn dot(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len(a.len(), b.len())?;
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum())
}

/// Projection of `x` onto the line spanned by `v`; zero when `v` is
/// (numerically) zero.
pub fn project(x: &[f64], v: &[f64]) -> Result<DenseVector> {
    let vv = dot(v, v)?;
    if vv < PROJECTION_EPS {
        return Ok(DenseVector::zeros(x.len()));
    }
    let coef = dot(x, v)? / vv;
    Ok(v.iter().map(|vi| coef * vi).collect())
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    p.ln() - (1.0 - p).ln()
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Deterministic pseudo-random source; one stream per seed.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.inner);
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// One draw from N(mean, stddev²).
pub fn sample_normal(rng: &mut SeededRng, mean: f64, stddev: f64) -> Result<f64> {
    if !(stddev >= 0.0) || !stddev.is_finite() || !mean.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "normal distribution needs finite mean and stddev >= 0 (got {mean}, {stddev})"
        )));
    }
    if stddev == 0.0 {
        return Ok(mean);
    }
    Ok(mean + stddev * rng.standard_normal())
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    use statrs::function::erf::erfc;
    // Evaluate the lower tail directly so that Φ(x) + Φ(-x) = 1 up to rounding.
    if x < 0.0 {
        0.5 * erfc(-x / std::f64::consts::SQRT_2)
    } else {
        1.0 - 0.5 * erfc(x / std::f64::consts::SQRT_2)
    }
}

/// Eigen-decomposition of a symmetric `n x n` row-major matrix by cyclic
/// Jacobi rotations. Returns eigenvalues and the matching unit eigenvectors,
/// unsorted.
pub fn symmetric_eigen(matrix: &[f64], n: usize) -> Result<(Vec<f64>, Vec<DenseVector>)> {
    check_len(n * n, matrix.len())?;
    let mut a = matrix.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let frob: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !frob.is_finite() {
        return Err(Error::NonFinite("matrix passed to eigensolver".into()));
    }
    let tol = 1e-15 * frob.max(f64::MIN_POSITIVE);

    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let values = (0..n).map(|i| a[i * n + i]).collect();
    let vectors = (0..n)
        .map(|j| (0..n).map(|i| v[i * n + j]).collect())
        .collect();
    Ok((values, vectors))
}

/// Flip `v` so that its entry of largest magnitude is positive.
pub fn canonical_sign(v: &mut DenseVector) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if !v.is_empty() && v[best] < 0.0 {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}

/// Top-`k` principal directions of mean-centred `rows`, as unit vectors
/// ordered by descending variance.
pub fn top_principal_components(rows: &[DenseVector], k: usize) -> Result<Vec<DenseVector>> {
    let n = rows.len();
    if n == 0 {
        return Err(Error::InvalidArgument("PCA needs at least one row".into()));
    }
    let d = rows[0].len();
    for row in rows {
        check_len(d, row.len())?;
        if !row.is_finite() {
            return Err(Error::NonFinite("PCA input row".into()));
        }
    }
    if k == 0 || k > n.min(d) {
        return Err(Error::InvalidArgument(format!(
            "k = {k} out of range for {n} rows of dimension {d}"
        )));
    }

    let mut mean = vec![0.0; d];
    for row in rows {
        for (m, x) in mean.iter_mut().zip(row.iter()) {
            *m += x;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let centered: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    let scale = rows.iter().map(|r| r.norm_sq()).fold(0.0, f64::max);

    let (values, vectors) = if d <= n {
        let mut cov = vec![0.0; d * d];
        for row in &centered {
            for i in 0..d {
                for j in i..d {
                    cov[i * d + j] += row[i] * row[j];
                }
            }
        }
        for i in 0..d {
            for j in i..d {
                cov[i * d + j] /= denom;
                cov[j * d + i] = cov[i * d + j];
            }
        }
        symmetric_eigen(&cov, d)?
    } else {
        // Gram route: eigenvectors of X Xᵀ mapped back through Xᵀ.
        let mut gram = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let g = dot(&centered[i], &centered[j])? / denom;
                gram[i * n + j] = g;
                gram[j * n + i] = g;
            }
        }
        let (vals, us) = symmetric_eigen(&gram, n)?;
        let vecs = us
            .iter()
            .map(|u| {
                let mut v = vec![0.0; d];
                for (row, ui) in centered.iter().zip(u.iter()) {
                    for (vj, xj) in v.iter_mut().zip(row) {
                        *vj += ui * xj;
                    }
                }
                DenseVector::new(v)
            })
            .collect();
        (vals, vecs)
    };

    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let lambda_max = values[order[0]].max(0.0);
    let tol = (1e-12 * lambda_max).max(1e-18 * scale).max(f64::MIN_POSITIVE);
    let achieved = values.iter().filter(|&&l| l > tol).count();
    if achieved < k {
        return Err(Error::Rank {
            requested: k,
            achieved,
        });
    }

    order
        .into_iter()
        .take(k)
        .map(|idx| {
            let mut v = vectors[idx].normalized()?;
            canonical_sign(&mut v);
            Ok(v)
        })
        .collect()
}
