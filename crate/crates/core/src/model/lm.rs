use log::info;
use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::train::{clip_global_norm, Sgd};
use super::{Encoder, ModelConfig, ModelError, ParamGroup, Parameterized, Tensor, TensorMut};
use crate::scalar::Scalar;
use crate::textprep::{Vocabulary, BOS_ID, EOS_ID, PAD_ID};

/// Output projection from the top LSTM layer to the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct LmDecoder<T> {
    pub w: Array2<T>,
    pub b: Array1<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LanguageModel<T> {
    pub encoder: Encoder<T>,
    pub decoder: LmDecoder<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LmConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub clip_norm: Option<f64>,
    pub heldout_fraction: f64,
    /// Longest document fed in one piece; longer ones are cut.
    pub max_len: usize,
    pub seed: u64,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            epochs: 1,
            batch_size: 32,
            lr: 0.1,
            momentum: 0.9,
            clip_norm: Some(1.0),
            heldout_fraction: 0.1,
            max_len: 70,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmReport {
    pub train_docs: usize,
    pub heldout_docs: usize,
    pub heldout_loss_before: f64,
    pub heldout_loss_after: f64,
    pub epochs: usize,
}

/// `<bos> ids <eos>`.
pub fn lm_document(ids: &[usize]) -> Vec<usize> {
    let mut d = Vec::with_capacity(ids.len() + 2);
    d.push(BOS_ID);
    d.extend_from_slice(ids);
    d.push(EOS_ID);
    d
}

impl<T: Scalar> LanguageModel<T> {
    pub fn new(vocab_size: usize, cfg: &ModelConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let encoder = Encoder::new(vocab_size, cfg, &mut rng);
        let k = 1.0 / (cfg.hidden_dim as f64).sqrt();
        let w = Array2::from_shape_fn((cfg.hidden_dim, vocab_size), |_| T::c(rng.gen_range(-k..k)));
        LanguageModel {
            encoder,
            decoder: LmDecoder {
                w,
                b: Array1::zeros(vocab_size),
            },
        }
    }

    pub fn zeros_like(&self) -> Self {
        LanguageModel {
            encoder: self.encoder.zeros_like(),
            decoder: LmDecoder {
                w: Array2::zeros(self.decoder.w.dim()),
                b: Array1::zeros(self.decoder.b.dim()),
            },
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.encoder.vocab_size()
    }

    /// Mean next-token cross-entropy over a batch of documents, with the
    /// gradient when `grad` is set.
    pub fn loss(
        &self,
        docs: &[Vec<usize>],
        dropout: Option<(&ModelConfig, &mut ChaCha8Rng)>,
        grad: Option<&mut LanguageModel<T>>,
    ) -> Result<f64, ModelError> {
        let docs: Vec<&Vec<usize>> = docs.iter().filter(|d| d.len() >= 2).collect();
        if docs.is_empty() {
            return Ok(0.0);
        }
        let inputs: Vec<Vec<usize>> = docs.iter().map(|d| d[..d.len() - 1].to_vec()).collect();
        let batch = inputs.len();
        let steps = inputs.iter().map(Vec::len).max().unwrap_or(0);
        let mut targets = vec![PAD_ID; steps * batch];
        for (b, d) in docs.iter().enumerate() {
            for t in 1..d.len() {
                targets[(t - 1) * batch + b] = d[t];
            }
        }
        let pass = self
            .encoder
            .run(&inputs, dropout.map(|(c, r)| (c.encoder_dropout(), r)))?;
        let top = Encoder::top_outputs(&pass);
        let mut logits = top.dot(&self.decoder.w);
        logits += &self.decoder.b;
        let count = targets.iter().filter(|&&t| t != PAD_ID).count();
        let inv = T::c(1.0 / count as f64);
        let mut total = 0.0;
        for (r, mut row) in logits.axis_iter_mut(Axis(0)).enumerate() {
            let y = targets[r];
            if y == PAD_ID {
                row.fill(T::zero());
                continue;
            }
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            row.mapv_inplace(|v| (v - m).exp());
            let z = row.sum();
            total -= (row[y] / z).ln().as_f64();
            row.mapv_inplace(|v| v / z * inv);
            row[y] -= inv;
        }
        if let Some(g) = grad {
            // `logits` now holds d loss / d logits.
            g.decoder.w += &top.t().dot(&logits);
            g.decoder.b += &logits.sum_axis(Axis(0));
            let d_top = logits
                .dot(&self.decoder.w.t())
                .into_shape_with_order((steps, batch, self.encoder.hidden_dim()))
                .expect("contiguous");
            self.encoder.backward(&pass, d_top, &mut g.encoder, 0, true);
        }
        Ok(total / count as f64)
    }

    /// Mean held-out loss, weighted by token count.
    pub fn evaluate(&self, docs: &[Vec<usize>], batch_size: usize) -> Result<f64, ModelError> {
        let mut sum = 0.0;
        let mut tokens = 0usize;
        for chunk in docs.chunks(batch_size.max(1)) {
            let n: usize = chunk.iter().map(|d| d.len().saturating_sub(1)).sum();
            if n == 0 {
                continue;
            }
            sum += self.loss(chunk, None, None)? * n as f64;
            tokens += n;
        }
        Ok(if tokens == 0 {
            f64::NAN
        } else {
            sum / tokens as f64
        })
    }

    /// Re-indexes the embedding and decoder onto `new` vocabulary. Tokens
    /// unknown to `old` start from the mean embedding row.
    pub fn remap_vocab(&self, old: &Vocabulary, new: &Vocabulary) -> Self {
        let e_dim = self.encoder.embedding.ncols();
        let mean_e = self
            .encoder
            .embedding
            .mean_axis(Axis(0))
            .expect("non-empty");
        let mean_w = self.decoder.w.mean_axis(Axis(1)).expect("non-empty");
        let mut emb = Array2::<T>::zeros((new.len(), e_dim));
        let mut w = Array2::<T>::zeros((self.decoder.w.nrows(), new.len()));
        let mut b = Array1::<T>::zeros(new.len());
        for id in 0..new.len() {
            let tok = new.token(id).expect("id in range");
            if old.contains(tok) {
                let o = old.id(tok);
                emb.row_mut(id).assign(&self.encoder.embedding.row(o));
                w.column_mut(id).assign(&self.decoder.w.column(o));
                b[id] = self.decoder.b[o];
            } else {
                emb.row_mut(id).assign(&mean_e);
                w.column_mut(id).assign(&mean_w);
            }
        }
        emb.row_mut(PAD_ID).fill(T::zero());
        let mut out = self.clone();
        out.encoder.embedding = emb;
        out.decoder = LmDecoder { w, b };
        out
    }
}

impl<T: Scalar> Parameterized<T> for LanguageModel<T> {
    fn tensors(&self) -> Vec<Tensor<'_, T>> {
        let mut v = self.encoder.tensors();
        v.push(Tensor::new(
            "decoder.w",
            ParamGroup::Decoder,
            &self.decoder.w,
        ));
        v.push(Tensor::new(
            "decoder.b",
            ParamGroup::Decoder,
            &self.decoder.b,
        ));
        v
    }

    fn tensors_mut(&mut self) -> Vec<TensorMut<'_, T>> {
        let mut v = self.encoder.tensors_mut();
        v.push(TensorMut::new(ParamGroup::Decoder, &mut self.decoder.w));
        v.push(TensorMut::new(ParamGroup::Decoder, &mut self.decoder.b));
        v
    }
}

fn prepare(docs: &[Vec<usize>], max_len: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for d in docs {
        if d.len() < 2 {
            continue;
        }
        // Overlap by one token so every transition is kept.
        let mut start = 0;
        while start + 1 < d.len() {
            let end = (start + max_len.max(2)).min(d.len());
            out.push(d[start..end].to_vec());
            start = end - 1;
        }
    }
    out
}

fn run_lm<T: Scalar>(
    mut lm: LanguageModel<T>,
    docs: &[Vec<usize>],
    model_cfg: &ModelConfig,
    cfg: &LmConfig,
) -> Result<(LanguageModel<T>, LmReport), ModelError> {
    let docs = prepare(docs, cfg.max_len);
    if docs.is_empty() {
        return Err(ModelError::EmptyCorpus);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut idx: Vec<usize> = (0..docs.len()).collect();
    idx.shuffle(&mut rng);
    let n_held = if docs.len() >= 10 {
        ((docs.len() as f64) * cfg.heldout_fraction).round() as usize
    } else {
        0
    };
    let (held_idx, train_idx) = idx.split_at(n_held);
    let held: Vec<Vec<usize>> = held_idx.iter().map(|&i| docs[i].clone()).collect();
    let mut train: Vec<Vec<usize>> = train_idx.iter().map(|&i| docs[i].clone()).collect();
    let eval_set = if held.is_empty() { &train } else { &held };
    let before = lm.evaluate(eval_set, cfg.batch_size)?;
    let mut opt = Sgd::<T>::new(cfg.momentum);
    for epoch in 0..cfg.epochs {
        train.shuffle(&mut rng);
        for chunk in train.chunks(cfg.batch_size.max(1)) {
            let mut g = lm.zeros_like();
            lm.loss(chunk, Some((model_cfg, &mut rng)), Some(&mut g))?;
            if let Some(c) = cfg.clip_norm {
                clip_global_norm(&mut g, c);
            }
            opt.step(&mut lm, &g, |_| Some(cfg.lr));
        }
        info!("lm epoch {} done", epoch + 1);
    }
    let eval_set = if held.is_empty() { &train } else { &held };
    let after = lm.evaluate(eval_set, cfg.batch_size)?;
    let report = LmReport {
        train_docs: train.len(),
        heldout_docs: held.len(),
        heldout_loss_before: before,
        heldout_loss_after: after,
        epochs: cfg.epochs,
    };
    Ok((lm, report))
}

/// General-domain language-model pretraining from a fresh initialization.
/// `docs` are framed with [`lm_document`].
pub fn pretrain_lm<T: Scalar>(
    docs: &[Vec<usize>],
    vocab_size: usize,
    model_cfg: &ModelConfig,
    cfg: &LmConfig,
) -> Result<(LanguageModel<T>, LmReport), ModelError> {
    model_cfg.validate()?;
    run_lm(
        LanguageModel::new(vocab_size, model_cfg),
        docs,
        model_cfg,
        cfg,
    )
}

/// Target-domain language-model fine-tuning.
pub fn finetune_lm<T: Scalar>(
    lm: LanguageModel<T>,
    docs: &[Vec<usize>],
    model_cfg: &ModelConfig,
    cfg: &LmConfig,
) -> Result<(LanguageModel<T>, LmReport), ModelError> {
    run_lm(lm, docs, model_cfg, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mcfg() -> ModelConfig {
        ModelConfig {
            embedding_dim: 8,
            hidden_dim: 8,
            head_hidden_dim: 4,
            embedding_dropout: 0.0,
            layer_dropout: 0.0,
            head_dropout: 0.0,
            seed: 5,
        }
    }

    fn docs() -> Vec<Vec<usize>> {
        (0..40)
            .map(|i| lm_document(&[4 + i % 3, 5 + i % 3, 6 + i % 3, 4]))
            .collect()
    }

    #[test]
    fn zero_epochs_is_identity() {
        let lm0 = LanguageModel::<f64>::new(10, &mcfg());
        let cfg = LmConfig {
            epochs: 0,
            ..Default::default()
        };
        let (lm1, rep) = finetune_lm(lm0.clone(), &docs(), &mcfg(), &cfg).unwrap();
        assert_eq!(lm0, lm1);
        assert_eq!(rep.heldout_loss_before, rep.heldout_loss_after);
    }

    #[test]
    fn finetuning_lowers_heldout_loss() {
        let lm0 = LanguageModel::<f64>::new(10, &mcfg());
        let cfg = LmConfig {
            epochs: 15,
            batch_size: 8,
            lr: 0.5,
            ..Default::default()
        };
        let (_, rep) = finetune_lm(lm0, &docs(), &mcfg(), &cfg).unwrap();
        assert_eq!(rep.heldout_docs, 4);
        assert!(rep.heldout_loss_after < rep.heldout_loss_before, "{rep:?}");
    }

    #[test]
    fn empty_corpus_rejected() {
        let r = pretrain_lm::<f32>(&[], 10, &mcfg(), &LmConfig::default());
        assert!(matches!(r, Err(ModelError::EmptyCorpus)));
    }

    #[test]
    fn long_documents_are_cut_with_overlap() {
        let d: Vec<usize> = (0..10).collect();
        let parts = prepare(&[d], 4);
        assert_eq!(
            parts,
            vec![vec![0, 1, 2, 3], vec![3, 4, 5, 6], vec![6, 7, 8, 9]]
        );
    }

    #[test]
    fn remap_keeps_shared_rows() {
        let a = Vocabulary::build([&["x", "x", "y", "y"][..]], &Default::default());
        let b = Vocabulary::build([&["y", "y", "z", "z"][..]], &Default::default());
        let lm = LanguageModel::<f64>::new(a.len(), &mcfg());
        let r = lm.remap_vocab(&a, &b);
        assert_eq!(r.vocab_size(), b.len());
        assert_eq!(
            r.encoder.embedding.row(b.id("y")),
            lm.encoder.embedding.row(a.id("y"))
        );
        assert_eq!(r.decoder.b.len(), b.len());
    }
}
