use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    apply_stage, ModelConfig, ModelError, ParamGroup, Parameterized, StanceModel, UnfreezeSchedule,
};
use crate::objectives::{lambda_bf, BalancingSource, SeparabilityConfig, N_CLASSES};
use crate::scalar::Scalar;

/// SGD with classical momentum.
#[derive(Debug, Clone, Default)]
pub struct Sgd<T> {
    pub momentum: f64,
    velocity: Vec<Vec<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(momentum: f64) -> Self {
        Sgd {
            momentum,
            velocity: Vec::new(),
        }
    }

    /// `lr(group)` of `None` leaves that group untouched (and its velocity at rest).
    pub fn step<P: Parameterized<T>>(
        &mut self,
        params: &mut P,
        grad: &P,
        lr: impl Fn(ParamGroup) -> Option<f64>,
    ) {
        let grads = grad.tensors();
        let mut tensors = params.tensors_mut();
        if self.velocity.len() != tensors.len() {
            self.velocity = tensors
                .iter()
                .map(|t| vec![T::zero(); t.data.len()])
                .collect();
        }
        let mu = T::c(self.momentum);
        for ((p, g), v) in tensors.iter_mut().zip(&grads).zip(&mut self.velocity) {
            let Some(rate) = lr(p.group) else { continue };
            let rate = T::c(rate);
            for ((w, &d), m) in p.data.iter_mut().zip(g.data).zip(v.iter_mut()) {
                *m = mu * *m + d;
                *w -= rate * *m;
            }
        }
    }
}

pub fn global_norm<T: Scalar, P: Parameterized<T>>(grad: &P) -> f64 {
    grad.tensors()
        .iter()
        .flat_map(|t| t.data.iter())
        .map(|v| {
            let x = v.as_f64();
            x * x
        })
        .sum::<f64>()
        .sqrt()
}

/// Rescales `grad` so its global L2 norm is at most `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm<T: Scalar, P: Parameterized<T>>(grad: &mut P, max_norm: f64) -> f64 {
    let norm = global_norm(grad);
    if norm > max_norm && norm > 0.0 {
        let k = T::c(max_norm / norm);
        for t in grad.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v *= k);
        }
    }
    norm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr_head: f64,
    pub lr_encoder: f64,
    pub momentum: f64,
    pub clip_norm: Option<f64>,
    pub schedule: UnfreezeSchedule,
    pub separability: SeparabilityConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            lr_head: 0.01,
            lr_encoder: 0.001,
            momentum: 0.9,
            clip_norm: Some(1.0),
            schedule: UnfreezeSchedule::default(),
            separability: SeparabilityConfig::default(),
            seed: 0,
        }
    }
}

/// Numericalized labelled sequences. `domains` tags each row with its origin
/// (source corpus or augmentation hop).
#[derive(Debug, Clone, Default)]
pub struct TrainingSet {
    pub seqs: Vec<Vec<usize>>,
    pub labels: Vec<usize>,
    pub domains: Vec<String>,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.seqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seqs.is_empty()
    }

    pub fn counts(&self) -> [usize; N_CLASSES] {
        let mut c = [0; N_CLASSES];
        for &y in &self.labels {
            c[y] += 1;
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierReport {
    /// `None` when λ_BF is recomputed per batch.
    pub lambda: Option<f64>,
    /// `"target-counts"`, `"training-counts"`, `"batch-counts"`, or `"unused"` when α = 0.
    pub lambda_source: String,
    pub lambda_degenerate: bool,
    pub epochs: usize,
    pub batches: usize,
    /// Batches where L_sep was zero because fewer than two classes were present.
    pub skipped_separability: usize,
    pub epoch_loss: Vec<f64>,
}

/// Fine-tunes `model` on `data` with gradual unfreezing. `target_counts` are
/// the class counts that fix λ_BF when balancing from target counts.
pub fn train_classifier<T: Scalar>(
    mut model: StanceModel<T>,
    data: &TrainingSet,
    target_counts: Option<[usize; N_CLASSES]>,
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
) -> Result<(StanceModel<T>, ClassifierReport), ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyCorpus);
    }
    if data.labels.len() != data.len() || data.domains.len() != data.len() {
        return Err(ModelError::Shape(
            "training set fields differ in length".into(),
        ));
    }
    cfg.separability
        .validate()
        .map_err(|e| ModelError::Config(e.to_string()))?;
    let sep = &cfg.separability;

    let (fixed_lambda, source, degenerate) = if sep.alpha == 0.0 {
        (Some(0.0), "unused", false)
    } else {
        match (sep.balancing_source, target_counts) {
            (BalancingSource::TargetCounts, Some(c)) => {
                let l = lambda_bf(&c).map_err(|e| ModelError::Config(e.to_string()))?;
                (Some(l.value), "target-counts", l.degenerate)
            }
            (BalancingSource::TargetCounts, None) => {
                let l = lambda_bf(&data.counts()).map_err(|e| ModelError::Config(e.to_string()))?;
                (Some(l.value), "training-counts", l.degenerate)
            }
            (BalancingSource::BatchCounts, _) => (None, "batch-counts", false),
        }
    };
    info!("lambda_bf source {source}, value {fixed_lambda:?}");

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Sgd::<T>::new(cfg.momentum);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut report = ClassifierReport {
        lambda: fixed_lambda,
        lambda_source: source.into(),
        lambda_degenerate: degenerate,
        epochs: 0,
        batches: 0,
        skipped_separability: 0,
        epoch_loss: Vec::new(),
    };
    for (stage, &epochs) in cfg.schedule.epochs_per_stage.iter().enumerate() {
        let mask = apply_stage(&cfg.schedule, stage)?;
        for _ in 0..epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            let mut nb = 0usize;
            for chunk in order.chunks(cfg.batch_size.max(1)) {
                let seqs: Vec<Vec<usize>> = chunk.iter().map(|&i| data.seqs[i].clone()).collect();
                let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
                let domains: Vec<String> = chunk.iter().map(|&i| data.domains[i].clone()).collect();
                let lambda = match fixed_lambda {
                    Some(l) => l,
                    None => crate::objectives::resolve_lambda(sep, None, &labels),
                };
                let mut out = model.loss_and_grad(
                    &seqs,
                    &labels,
                    &domains,
                    T::c(lambda),
                    sep,
                    &mask,
                    Some((model_cfg, &mut rng)),
                )?;
                if sep.alpha != 0.0 && out.loss.separability_skipped {
                    report.skipped_separability += 1;
                }
                if let Some(c) = cfg.clip_norm {
                    clip_global_norm(&mut out.grad, c);
                }
                opt.step(&mut model, &out.grad, |g| {
                    if !mask.contains(g) {
                        None
                    } else if g == ParamGroup::Head {
                        Some(cfg.lr_head)
                    } else {
                        Some(cfg.lr_encoder)
                    }
                });
                total += out.loss.value.as_f64();
                nb += 1;
            }
            report.epochs += 1;
            report.batches += nb;
            let mean = total / nb as f64;
            debug!("stage {stage} epoch {} loss {mean:.5}", report.epochs);
            report.epoch_loss.push(mean);
        }
    }
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> TrainingSet {
        // Class is signalled by the token right after <bos>.
        let mut t = TrainingSet::default();
        for i in 0..48 {
            let y = i % 3;
            t.seqs.push(vec![2, 4 + y, 7 + (i % 2), 3]);
            t.labels.push(y);
            t.domains.push("en".into());
        }
        t
    }

    fn mcfg() -> ModelConfig {
        ModelConfig {
            embedding_dim: 8,
            hidden_dim: 8,
            head_hidden_dim: 8,
            embedding_dropout: 0.0,
            layer_dropout: 0.0,
            head_dropout: 0.0,
            seed: 1,
        }
    }

    #[test]
    fn learns_a_trivial_task() {
        let data = toy();
        let cfg = TrainConfig {
            batch_size: 8,
            lr_head: 0.1,
            lr_encoder: 0.1,
            schedule: UnfreezeSchedule {
                epochs_per_stage: [2, 2, 2, 20],
            },
            ..Default::default()
        };
        let m = StanceModel::<f64>::new(10, &mcfg());
        let (m, rep) = train_classifier(m, &data, Some([16, 16, 16]), &cfg, &mcfg()).unwrap();
        assert_eq!(rep.lambda, Some(1.0));
        assert_eq!(rep.lambda_source, "target-counts");
        assert!(rep.epoch_loss.last().unwrap() < &rep.epoch_loss[0]);
        let pred = m.predict(&data.seqs, 16).unwrap();
        let acc = pred
            .iter()
            .zip(&data.labels)
            .filter(|(a, b)| a == b)
            .count();
        assert!(acc as f64 / 48.0 > 0.9, "accuracy {acc}/48");
    }

    #[test]
    fn frozen_encoder_is_untouched_in_stage_zero() {
        let data = toy();
        let cfg = TrainConfig {
            schedule: UnfreezeSchedule {
                epochs_per_stage: [1, 0, 0, 0],
            },
            ..Default::default()
        };
        let m0 = StanceModel::<f64>::new(10, &mcfg());
        let (m1, _) = train_classifier(m0.clone(), &data, None, &cfg, &mcfg()).unwrap();
        assert_eq!(m0.encoder, m1.encoder);
        assert_ne!(m0.head, m1.head);
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut g = StanceModel::<f64>::new(10, &mcfg());
        let before = clip_global_norm(&mut g, 0.5);
        assert!(before > 0.5);
        assert!((global_norm(&g) - 0.5).abs() < 1e-9);
    }
}
