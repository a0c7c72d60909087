//! Distribution calibration for one-shot classification.
//!
//! Base-class feature statistics are computed after a Tukey power transform.
//! Each novel support feature borrows the mean and covariance of its `k`
//! nearest base classes, synthetic features are drawn from the calibrated
//! Gaussian, and a multinomial logistic classifier is fit on them together
//! with the supports.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TUKEY_EPS: f64 = 1e-6;
/// Smallest ridge added when a calibrated covariance is not positive definite.
pub const ALPHA_MIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DcParams {
    /// Base classes borrowed per support.
    pub k: usize,
    /// Ridge added to the calibrated covariance.
    pub alpha: f64,
    /// Tukey exponent.
    pub lambda: f64,
    /// Synthetic features per novel class.
    pub n_samples: usize,
    /// Keep only the diagonal of base covariances.
    pub diagonal: bool,
    pub logistic: LogisticParams,
}

impl Default for DcParams {
    fn default() -> Self {
        Self {
            k: 2,
            alpha: 0.21,
            lambda: 0.5,
            n_samples: 200,
            diagonal: false,
            logistic: LogisticParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticParams {
    pub steps: usize,
    pub lr: f64,
    pub momentum: f64,
}

impl Default for LogisticParams {
    fn default() -> Self {
        Self {
            steps: 200,
            lr: 0.1,
            momentum: 0.9,
        }
    }
}

/// `x^lambda` for `lambda > 0`, `ln(x + eps)` for `lambda = 0`. Inputs must be nonnegative.
pub fn tukey_transform(v: &[f64], lambda: f64) -> Vec<f64> {
    if lambda == 0.0 {
        v.iter().map(|x| (x + TUKEY_EPS).ln()).collect()
    } else {
        v.iter().map(|x| x.powf(lambda)).collect()
    }
}

/// Shift making base features nonnegative: subtract the global base minimum, clamp at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TukeyShift {
    pub min: f64,
}

impl TukeyShift {
    pub fn fit(base: &[Vec<f64>]) -> Self {
        Self {
            min: base.iter().flatten().copied().fold(f64::INFINITY, f64::min).min(0.0),
        }
    }

    pub fn apply(&self, v: &[f64], lambda: f64) -> Vec<f64> {
        let shifted: Vec<f64> = v.iter().map(|x| (x - self.min).max(0.0)).collect();
        tukey_transform(&shifted, lambda)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaseStatistics {
    pub classes: Vec<usize>,
    pub means: Vec<DVector<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
    pub counts: Vec<usize>,
}

impl BaseStatistics {
    /// Per-class mean and unbiased covariance of already-transformed features.
    /// A class with a single sample gets a zero covariance.
    pub fn compute(features: &[Vec<f64>], labels: &[usize], diagonal: bool) -> Result<Self> {
        if features.is_empty() || features.len() != labels.len() {
            return Err(Error::Calibration("base statistics need matching, non-empty features and labels".into()));
        }
        let d = features[0].len();
        let mut groups: BTreeMap<usize, Vec<&Vec<f64>>> = BTreeMap::new();
        for (f, &l) in features.iter().zip(labels) {
            if f.len() != d {
                return Err(Error::Calibration("features of unequal width".into()));
            }
            groups.entry(l).or_default().push(f);
        }
        let mut out = Self {
            classes: Vec::new(),
            means: Vec::new(),
            covariances: Vec::new(),
            counts: Vec::new(),
        };
        for (c, rows) in groups {
            let n = rows.len();
            let mut mean = DVector::zeros(d);
            for r in &rows {
                mean += DVector::from_column_slice(r);
            }
            mean /= n as f64;
            let mut cov = DMatrix::zeros(d, d);
            if n > 1 {
                for r in &rows {
                    let x = DVector::from_column_slice(r) - &mean;
                    cov += &x * x.transpose();
                }
                cov /= (n - 1) as f64;
            }
            if diagonal {
                cov = DMatrix::from_diagonal(&cov.diagonal());
            }
            out.classes.push(c);
            out.means.push(mean);
            out.covariances.push(cov);
            out.counts.push(n);
        }
        Ok(out)
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, |m| m.len())
    }
}

/// Calibrated `(mean, covariance)` for one transformed support feature.
/// Nearest base means by Euclidean distance; ties go to the lower class index.
pub fn dc_calibrate(support: &[f64], stats: &BaseStatistics, k: usize, alpha: f64) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if stats.classes.is_empty() {
        return Err(Error::Calibration("empty base statistics".into()));
    }
    if k == 0 || k > stats.classes.len() {
        return Err(Error::Calibration(format!("k = {k} with {} base classes", stats.classes.len())));
    }
    if support.len() != stats.dim() {
        return Err(Error::Calibration(format!("support has {} dims, base statistics {}", support.len(), stats.dim())));
    }
    let x = DVector::from_column_slice(support);
    let mut order: Vec<(f64, usize)> = stats.means.iter().enumerate().map(|(i, m)| ((m - &x).norm(), i)).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let d = x.len();
    let mut mean = x.clone();
    let mut cov = DMatrix::zeros(d, d);
    for &(_, i) in &order[..k] {
        mean += &stats.means[i];
        cov += &stats.covariances[i];
    }
    mean /= (k + 1) as f64;
    cov /= k as f64;
    for i in 0..d {
        cov[(i, i)] += alpha;
    }
    Ok((mean, cov))
}

/// Indices of the `k` nearest base classes, for inspection.
pub fn nearest_base_classes(support: &[f64], stats: &BaseStatistics, k: usize) -> Vec<usize> {
    let x = DVector::from_column_slice(support);
    let mut order: Vec<(f64, usize)> = stats.means.iter().enumerate().map(|(i, m)| ((m - &x).norm(), i)).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    order.into_iter().take(k).map(|(_, i)| stats.classes[i]).collect()
}

fn cholesky_with_floor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(c) = Cholesky::new(cov.clone()) {
        return Ok(c.l());
    }
    let mut ridge = ALPHA_MIN;
    for _ in 0..12 {
        let mut m = cov.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += ridge;
        }
        if let Some(c) = Cholesky::new(m) {
            return Ok(c.l());
        }
        ridge *= 10.0;
    }
    Err(Error::Calibration("covariance is not positive definite even after regularization".into()))
}

/// Fits a multinomial logistic regression with full-batch gradient descent
/// with momentum from zero weights. Returns `(W: n_classes x d, b)`.
pub fn fit_logistic(x: &[Vec<f64>], y: &[usize], n_classes: usize, p: &LogisticParams) -> (DMatrix<f64>, DVector<f64>) {
    let d = x[0].len();
    let n = x.len() as f64;
    let mut w = DMatrix::zeros(n_classes, d);
    let mut b = DVector::zeros(n_classes);
    let mut vw = DMatrix::zeros(n_classes, d);
    let mut vb = DVector::zeros(n_classes);
    let xs: Vec<DVector<f64>> = x.iter().map(|r| DVector::from_column_slice(r)).collect();
    for _ in 0..p.steps {
        let mut gw = DMatrix::zeros(n_classes, d);
        let mut gb = DVector::zeros(n_classes);
        for (xi, &yi) in xs.iter().zip(y) {
            let logits = &w * xi + &b;
            let probs = crate::tensor::softmax(logits.as_slice());
            for c in 0..n_classes {
                let g = probs[c] - if c == yi { 1.0 } else { 0.0 };
                gb[c] += g;
                for j in 0..d {
                    gw[(c, j)] += g * xi[j];
                }
            }
        }
        gw /= n;
        gb /= n;
        vw = vw * p.momentum + gw;
        vb = vb * p.momentum + gb;
        w -= &vw * p.lr;
        b -= &vb * p.lr;
    }
    (w, b)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Predicted labels for `queries` given one transformed support per class.
/// Inputs must already be Tukey-transformed with the same shift as `stats`.
pub fn dc_classify(
    supports: &[(Vec<f64>, usize)],
    queries: &[Vec<f64>],
    stats: &BaseStatistics,
    params: &DcParams,
    seed: u64,
) -> Result<Vec<usize>> {
    if supports.is_empty() {
        return Err(Error::Calibration("no supports".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::with_capacity(supports.len() * (params.n_samples + 1));
    let mut ys = Vec::with_capacity(xs.capacity());
    for (ci, (s, _)) in supports.iter().enumerate() {
        xs.push(s.clone());
        ys.push(ci);
        if params.n_samples == 0 {
            continue;
        }
        let (mean, cov) = dc_calibrate(s, stats, params.k, params.alpha)?;
        let l = cholesky_with_floor(&cov)?;
        for _ in 0..params.n_samples {
            let z = DVector::from_iterator(mean.len(), (0..mean.len()).map(|_| StandardNormal.sample(&mut rng)));
            let sample = &mean + &l * z;
            xs.push(sample.as_slice().to_vec());
            ys.push(ci);
        }
    }
    let (w, b) = fit_logistic(&xs, &ys, supports.len(), &params.logistic);
    Ok(queries
        .iter()
        .map(|q| {
            let logits = &w * DVector::from_column_slice(q) + &b;
            supports[argmax(logits.as_slice())].1
        })
        .collect())
}
