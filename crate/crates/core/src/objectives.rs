//! Separability loss and the combined training objective.
//!
//! For a batch of latent rows `z` with labels `y`, classes present `P`,
//! class means `mu_i` and global mean `mu`:
//!
//! ```text
//! L_sep = lambda_bf * sum_r d(z_r, mu_{y_r}) / sum_{i in P} d(mu_i, mu)
//! d(u, v) = 1 - <u, v> / (max(|u|, eps) * max(|v|, eps))
//! lambda_bf = min_i |Y_i| / max_i |Y_i|
//! ```
//!
//! The guard makes `d` total: a vector shorter than `eps` is treated as
//! orthogonal to everything (`d = 1`). The denominator is floored at `eps`.
//! The loss ignores domain tags.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::LatentBatch;
use crate::scalar::Scalar;

pub const N_CLASSES: usize = 3;

#[derive(Debug, Error, PartialEq)]
pub enum ObjectiveError {
    #[error("balancing factor needs at least one positive class count")]
    AllZeroCounts,
    #[error("invalid separability config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BalancingSource {
    /// Class counts of the labelled target (or, lacking one, training) split.
    TargetCounts,
    /// Class counts of the classes present in each batch.
    BatchCounts,
}

/// Where the separability term is attached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeparabilityInput {
    /// Pooled encoder latent; gradients reach the encoder only.
    EncoderLatent,
    /// Hidden activations of the classifier head; gradients also reach the
    /// head's first layer.
    HeadHidden,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeparabilityConfig {
    pub epsilon: f64,
    pub alpha: f64,
    pub balancing_source: BalancingSource,
    /// Divide the within-class sum by the number of rows.
    pub normalize_rows: bool,
    pub input: SeparabilityInput,
}

impl Default for SeparabilityConfig {
    fn default() -> Self {
        SeparabilityConfig {
            epsilon: 1e-8,
            alpha: 1.0,
            balancing_source: BalancingSource::TargetCounts,
            normalize_rows: false,
            input: SeparabilityInput::EncoderLatent,
        }
    }
}

impl SeparabilityConfig {
    pub fn validate(&self) -> Result<(), ObjectiveError> {
        if !(self.epsilon > 0.0) {
            return Err(ObjectiveError::Config(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        if !(self.alpha >= 0.0) {
            return Err(ObjectiveError::Config(format!(
                "alpha must be ≥ 0, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

#[inline]
fn dot<T: Scalar>(u: ArrayView1<T>, v: ArrayView1<T>) -> T {
    u.dot(&v)
}

/// Guarded cosine dissimilarity, in `[0, 2]`.
pub fn cosine_dissim<T: Scalar>(u: ArrayView1<T>, v: ArrayView1<T>, eps: T) -> T {
    let gu = dot(u, u).sqrt().max(eps);
    let gv = dot(v, v).sqrt().max(eps);
    T::one() - dot(u, v) / (gu * gv)
}

/// `d(u, v)` with its partial derivatives with respect to `u` and `v`.
pub fn cosine_dissim_grad<T: Scalar>(
    u: ArrayView1<T>,
    v: ArrayView1<T>,
    eps: T,
) -> (T, Array1<T>, Array1<T>) {
    let nu = dot(u, u).sqrt();
    let nv = dot(v, v).sqrt();
    let gu = nu.max(eps);
    let gv = nv.max(eps);
    let s = dot(u, v);
    let inv = T::one() / (gu * gv);
    // Divide rather than multiply by `inv` so that d(u, u) rounds to 0.
    let d = T::one() - s / (gu * gv);
    // -v/(gu gv) + s u /(gu^3 gv) when |u| > eps (the guard is flat below).
    let mut du = v.mapv(|x| -x * inv);
    if nu > eps {
        let k = s * inv / (gu * gu);
        du.scaled_add(k, &u);
    }
    let mut dv = u.mapv(|x| -x * inv);
    if nv > eps {
        let k = s * inv / (gv * gv);
        dv.scaled_add(k, &v);
    }
    (d, du, dv)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaBf {
    pub value: f64,
    /// Some class count is zero, which zeroes the loss.
    pub degenerate: bool,
}

/// `min / max` over the given class counts.
pub fn lambda_bf(counts: &[usize]) -> Result<LambdaBf, ObjectiveError> {
    let max = counts.iter().copied().max().unwrap_or(0);
    if max == 0 {
        return Err(ObjectiveError::AllZeroCounts);
    }
    let min = counts.iter().copied().min().unwrap_or(0);
    let degenerate = min == 0;
    if degenerate {
        log::warn!("class with zero examples in balancing counts {counts:?}; separability loss is disabled");
    }
    Ok(LambdaBf {
        value: min as f64 / max as f64,
        degenerate,
    })
}

/// Per-class and global means of a batch.
#[derive(Debug, Clone)]
pub struct ClassStatistics<T> {
    pub class_means: Vec<Option<Array1<T>>>,
    pub global_mean: Array1<T>,
    pub members: Vec<Vec<usize>>,
    pub counts: Vec<usize>,
}

impl<T: Scalar> ClassStatistics<T> {
    pub fn compute(latents: ArrayView2<T>, labels: &[usize], n_classes: usize) -> Self {
        let dim = latents.ncols();
        let mut members = vec![Vec::new(); n_classes];
        for (r, &y) in labels.iter().enumerate() {
            members[y].push(r);
        }
        let class_means = members
            .iter()
            .map(|rows| {
                if rows.is_empty() {
                    return None;
                }
                let mut m = Array1::zeros(dim);
                for &r in rows {
                    m += &latents.row(r);
                }
                Some(m / T::c(rows.len() as f64))
            })
            .collect();
        let global_mean = latents
            .mean_axis(Axis(0))
            .unwrap_or_else(|| Array1::zeros(dim));
        let counts = members.iter().map(Vec::len).collect();
        ClassStatistics {
            class_means,
            global_mean,
            members,
            counts,
        }
    }

    pub fn present(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.counts.len()).filter(|&i| self.counts[i] > 0)
    }
}

#[derive(Debug, Clone)]
pub struct SepLoss<T> {
    pub value: T,
    /// Gradient with respect to every latent row.
    pub grad: Array2<T>,
    /// Fewer than two classes in the batch: the value is a flagged zero.
    pub skipped: bool,
}

/// Balancing factor for a batch according to the configured source.
pub fn resolve_lambda(
    cfg: &SeparabilityConfig,
    target_counts: Option<&[usize]>,
    labels: &[usize],
) -> f64 {
    match (cfg.balancing_source, target_counts) {
        (BalancingSource::TargetCounts, Some(c)) => lambda_bf(c).map(|l| l.value).unwrap_or(0.0),
        _ => {
            let mut c = [0usize; N_CLASSES];
            for &y in labels {
                c[y] += 1;
            }
            let present: Vec<usize> = c.iter().copied().filter(|&n| n > 0).collect();
            lambda_bf(&present).map(|l| l.value).unwrap_or(0.0)
        }
    }
}

/// Separability loss of a latent batch and its gradient.
pub fn separability_loss<T: Scalar>(
    batch: &LatentBatch<T>,
    lambda: T,
    cfg: &SeparabilityConfig,
) -> SepLoss<T> {
    separability_loss_raw(batch.latents.view(), &batch.labels, lambda, cfg)
}

pub fn separability_loss_raw<T: Scalar>(
    latents: ArrayView2<T>,
    labels: &[usize],
    lambda: T,
    cfg: &SeparabilityConfig,
) -> SepLoss<T> {
    let (n, dim) = latents.dim();
    let eps = T::c(cfg.epsilon);
    let n_classes = labels
        .iter()
        .copied()
        .max()
        .map_or(0, |m| m + 1)
        .max(N_CLASSES);
    let stats = ClassStatistics::compute(latents, labels, n_classes);
    let present: Vec<usize> = stats.present().collect();
    if n < 2 || present.len() < 2 {
        return SepLoss {
            value: T::zero(),
            grad: Array2::zeros((n, dim)),
            skipped: true,
        };
    }

    let row_scale = if cfg.normalize_rows {
        T::one() / T::c(n as f64)
    } else {
        T::one()
    };

    let mut num = T::zero();
    let mut g_rows = Array2::<T>::zeros((n, dim));
    let mut g_class: Vec<Array1<T>> = vec![Array1::zeros(dim); n_classes];
    for (r, &y) in labels.iter().enumerate() {
        let mu_y = stats.class_means[y].as_ref().expect("present class");
        let (d, du, dv) = cosine_dissim_grad(latents.row(r), mu_y.view(), eps);
        num += d;
        g_rows.row_mut(r).assign(&du);
        g_class[y] += &dv;
    }
    num *= row_scale;

    let mut den = T::zero();
    let mut g_class_den: Vec<Array1<T>> = vec![Array1::zeros(dim); n_classes];
    let mut g_global = Array1::<T>::zeros(dim);
    for &i in &present {
        let mu_i = stats.class_means[i].as_ref().expect("present class");
        let (d, du, dv) = cosine_dissim_grad(mu_i.view(), stats.global_mean.view(), eps);
        den += d;
        g_class_den[i] = du;
        g_global += &dv;
    }
    let den_active = den > eps;
    let den_g = den.max(eps);
    let value = lambda * num / den_g;

    // dL/dnum and dL/dden
    let a = lambda * row_scale / den_g;
    let b = if den_active {
        -lambda * num / (den_g * den_g)
    } else {
        T::zero()
    };

    let mut grad = g_rows * a;
    let mut g_mu: Vec<Array1<T>> = (0..n_classes)
        .map(|i| &g_class[i] * a + &g_class_den[i] * b)
        .collect();
    let g_global = g_global * b;
    for i in &present {
        g_mu[*i] /= T::c(stats.counts[*i] as f64);
    }
    let g_global = g_global / T::c(n as f64);
    for (r, &y) in labels.iter().enumerate() {
        let mut row = grad.row_mut(r);
        row += &g_mu[y];
        row += &g_global;
    }

    SepLoss {
        value,
        grad,
        skipped: false,
    }
}

/// Mean softmax cross-entropy over rows, with the gradient on the scores.
pub fn cross_entropy<T: Scalar>(scores: ArrayView2<T>, labels: &[usize]) -> (T, Array2<T>) {
    let (n, k) = scores.dim();
    let mut grad = Array2::<T>::zeros((n, k));
    if n == 0 {
        return (T::zero(), grad);
    }
    let inv_n = T::one() / T::c(n as f64);
    let mut total = T::zero();
    for (r, &y) in labels.iter().enumerate() {
        let row = scores.row(r);
        let m = row.fold(T::neg_infinity(), |a, &b| a.max(b));
        let mut z = T::zero();
        for &s in row.iter() {
            z += (s - m).exp();
        }
        let log_z = z.ln() + m;
        total += log_z - row[y];
        for c in 0..k {
            let p = (row[c] - log_z).exp();
            grad[[r, c]] = (p - if c == y { T::one() } else { T::zero() }) * inv_n;
        }
    }
    (total * inv_n, grad)
}

/// Row-wise softmax.
pub fn softmax<T: Scalar>(scores: ArrayView2<T>) -> Array2<T> {
    let mut out = scores.to_owned();
    for mut row in out.rows_mut() {
        let m = row.fold(T::neg_infinity(), |a, &b| a.max(b));
        row.mapv_inplace(|s| (s - m).exp());
        let z = row.sum();
        row.mapv_inplace(|s| s / z);
    }
    out
}

#[derive(Debug, Clone)]
pub struct TotalLoss<T> {
    pub value: T,
    pub cross_entropy: T,
    pub separability: T,
    pub separability_skipped: bool,
    pub grad_scores: Array2<T>,
    pub grad_latents: Array2<T>,
}

/// `cross_entropy + alpha * separability`.
pub fn total_loss<T: Scalar>(
    scores: ArrayView2<T>,
    labels: &[usize],
    batch: &LatentBatch<T>,
    lambda: T,
    cfg: &SeparabilityConfig,
) -> TotalLoss<T> {
    let (ce, grad_scores) = cross_entropy(scores, labels);
    let alpha = T::c(cfg.alpha);
    if cfg.alpha == 0.0 {
        return TotalLoss {
            value: ce,
            cross_entropy: ce,
            separability: T::zero(),
            separability_skipped: false,
            grad_scores,
            grad_latents: Array2::zeros(batch.latents.dim()),
        };
    }
    let sep = separability_loss(batch, lambda, cfg);
    TotalLoss {
        value: ce + alpha * sep.value,
        cross_entropy: ce,
        separability: sep.value,
        separability_skipped: sep.skipped,
        grad_scores,
        grad_latents: sep.grad * alpha,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn cosine_examples() {
        let e = 1e-8_f64;
        let u = array![3.0, 4.0];
        assert!(cosine_dissim(u.view(), u.view(), e).abs() < 1e-15);
        assert!(
            (cosine_dissim(array![1.0, 0.0].view(), array![0.0, 1.0].view(), e) - 1.0).abs()
                < 1e-15
        );
        assert!(
            (cosine_dissim(array![1.0, 0.0].view(), array![-1.0, 0.0].view(), e) - 2.0).abs()
                < 1e-15
        );
        assert!(
            (cosine_dissim(array![1.0, 0.0].view(), array![0.0, 0.0].view(), e) - 1.0).abs()
                < 1e-15
        );
    }

    #[test]
    fn lambda_examples() {
        assert_eq!(lambda_bf(&[100, 100, 100]).unwrap().value, 1.0);
        assert_eq!(lambda_bf(&[10, 25, 40]).unwrap().value, 0.25);
        let z = lambda_bf(&[0, 5, 10]).unwrap();
        assert_eq!(z.value, 0.0);
        assert!(z.degenerate);
        assert_eq!(lambda_bf(&[0, 0, 0]), Err(ObjectiveError::AllZeroCounts));
    }

    #[test]
    fn single_label_batch_is_skipped() {
        let z = array![[1.0, 2.0], [3.0, 1.0]];
        let s = separability_loss_raw(z.view(), &[0, 0], 1.0, &SeparabilityConfig::default());
        assert!(s.skipped);
        assert_eq!(s.value, 0.0);
    }

    #[test]
    fn alpha_zero_is_cross_entropy() {
        let scores = array![[0.0, 0.0, 0.0], [1.0, -1.0, 0.5]];
        let batch = LatentBatch::new(
            array![[1.0, 0.0], [0.0, 1.0]],
            vec![0, 1],
            vec!["d".into(), "d".into()],
        )
        .unwrap();
        let cfg = SeparabilityConfig {
            alpha: 0.0,
            ..Default::default()
        };
        let t = total_loss(scores.view(), &[0, 1], &batch, 1.0, &cfg);
        let (ce, _) = cross_entropy(scores.view(), &[0, 1]);
        assert_eq!(t.value, ce);
        let (u, _) = cross_entropy(array![[0.0, 0.0, 0.0]].view(), &[2]);
        assert!((u - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let p = softmax(array![[1.0f32, 2.0, 3.0], [-50.0, 0.0, 50.0]].view());
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-6);
        }
    }
}
