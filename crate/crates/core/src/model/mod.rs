//! ULMFiT-style network: embedding, three-layer LSTM encoder with
//! last/mean/max pooling (latent dimension `3H`), and a two-layer classifier
//! head. Gradients are computed by hand; there is no autograd.

mod checkpoint;
mod encoder;
mod head;
mod lm;
mod lstm;
mod train;
mod unfreeze;

use ndarray::{Array2, ArrayBase, Data, Dimension};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::objectives::{total_loss, SeparabilityConfig, SeparabilityInput, TotalLoss, N_CLASSES};
use crate::scalar::Scalar;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, Checkpoint,
    CheckpointMeta, StoredTensor, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use encoder::{Dropout, Encoder, EncoderPass, PoolCache};
pub use head::{ClassifierHead, HeadPass};
pub use lm::{finetune_lm, lm_document, pretrain_lm, LanguageModel, LmConfig, LmDecoder, LmReport};
pub use lstm::{LstmCache, LstmLayer};
pub use train::{
    clip_global_norm, global_norm, train_classifier, ClassifierReport, Sgd, TrainConfig,
    TrainingSet,
};
pub use unfreeze::{apply_stage, TrainableMask, UnfreezeSchedule, STAGES};

pub const ENCODER_LAYERS: usize = 3;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("sequence {0} contains only padding")]
    EmptySequence(usize),
    #[error("token id {id} outside vocabulary of size {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("unfreeze stage {0} out of range 0..=3")]
    StageOutOfRange(usize),
    #[error("row count mismatch: {0}")]
    Shape(String),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub head_hidden_dim: usize,
    pub embedding_dropout: f64,
    pub layer_dropout: f64,
    /// Dropout on the pooled latent before the head.
    pub head_dropout: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embedding_dim: 64,
            hidden_dim: 128,
            head_hidden_dim: 64,
            embedding_dropout: 0.2,
            layer_dropout: 0.2,
            head_dropout: 0.2,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 || self.hidden_dim == 0 || self.head_hidden_dim == 0 {
            return Err(ModelError::Config("dimensions must be positive".into()));
        }
        for p in [
            self.embedding_dropout,
            self.layer_dropout,
            self.head_dropout,
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(ModelError::Config(format!("dropout {p} not in [0, 1)")));
            }
        }
        Ok(())
    }

    pub fn encoder_dropout(&self) -> Dropout {
        Dropout {
            embedding: self.embedding_dropout,
            between_layers: self.layer_dropout,
        }
    }
}

/// Parameter groups, in unfreezing order from the top.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum ParamGroup {
    Head,
    Layer(usize),
    Embedding,
    Decoder,
}

pub struct Tensor<'a, T> {
    pub name: String,
    pub group: ParamGroup,
    pub shape: Vec<usize>,
    pub data: &'a [T],
}

impl<'a, T> Tensor<'a, T> {
    pub fn new<S: Data<Elem = T>, D: Dimension>(
        name: impl Into<String>,
        group: ParamGroup,
        a: &'a ArrayBase<S, D>,
    ) -> Self {
        Tensor {
            name: name.into(),
            group,
            shape: a.shape().to_vec(),
            data: a.as_slice().expect("parameters are in standard layout"),
        }
    }
}

pub struct TensorMut<'a, T> {
    pub group: ParamGroup,
    pub data: &'a mut [T],
}

impl<'a, T> TensorMut<'a, T> {
    pub fn new<S: ndarray::DataMut<Elem = T>, D: Dimension>(
        group: ParamGroup,
        a: &'a mut ArrayBase<S, D>,
    ) -> Self {
        TensorMut {
            group,
            data: a.as_slice_mut().expect("parameters are in standard layout"),
        }
    }
}

/// Uniform access to every trainable tensor, in a fixed order.
pub trait Parameterized<T> {
    fn tensors(&self) -> Vec<Tensor<'_, T>>;
    fn tensors_mut(&mut self) -> Vec<TensorMut<'_, T>>;

    fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }
}

/// Latent rows with aligned labels and domain tags.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBatch<T> {
    pub latents: Array2<T>,
    pub labels: Vec<usize>,
    pub domains: Vec<String>,
}

impl<T: Scalar> LatentBatch<T> {
    pub fn new(latents: Array2<T>, labels: Vec<usize>, domains: Vec<String>) -> Result<Self> {
        let n = latents.nrows();
        if labels.len() != n || domains.len() != n {
            return Err(ModelError::Shape(format!(
                "{} latent rows, {} labels, {} domain tags",
                n,
                labels.len(),
                domains.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= N_CLASSES) {
            return Err(ModelError::Shape(format!("label index {bad} out of range")));
        }
        Ok(LatentBatch {
            latents,
            labels,
            domains,
        })
    }

    /// Rows belonging to class `i`, across every domain.
    pub fn class_rows(&self, i: usize) -> Vec<usize> {
        (0..self.labels.len())
            .filter(|&r| self.labels[r] == i)
            .collect()
    }
}

/// Encoder plus classifier head.
#[derive(Debug, Clone, PartialEq)]
pub struct StanceModel<T> {
    pub encoder: Encoder<T>,
    pub head: ClassifierHead<T>,
}

impl<T: Scalar> Parameterized<T> for StanceModel<T> {
    fn tensors(&self) -> Vec<Tensor<'_, T>> {
        let mut v = self.encoder.tensors();
        v.extend(self.head.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<TensorMut<'_, T>> {
        let mut v = self.encoder.tensors_mut();
        v.extend(self.head.tensors_mut());
        v
    }
}

/// Result of one forward/backward pass.
pub struct StepOutput<T> {
    pub loss: TotalLoss<T>,
    pub grad: StanceModel<T>,
}

impl<T: Scalar> StanceModel<T> {
    pub fn new(vocab_size: usize, cfg: &ModelConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let encoder = Encoder::new(vocab_size, cfg, &mut rng);
        let head = ClassifierHead::new(encoder.latent_dim(), cfg.head_hidden_dim, &mut rng);
        StanceModel { encoder, head }
    }

    pub fn from_encoder(encoder: Encoder<T>, cfg: &ModelConfig) -> Self {
        // Head initialization draws from its own stream so it does not depend
        // on how many draws pretraining consumed.
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6865_6164);
        let head = ClassifierHead::new(encoder.latent_dim(), cfg.head_hidden_dim, &mut rng);
        StanceModel { encoder, head }
    }

    pub fn zeros_like(&self) -> Self {
        StanceModel {
            encoder: self.encoder.zeros_like(),
            head: self.head.zeros_like(),
        }
    }

    /// Pooled latents, no dropout.
    pub fn encode(&self, seqs: &[Vec<usize>]) -> Result<Array2<T>> {
        encode(&self.encoder, seqs)
    }

    /// Class scores, no dropout.
    pub fn classify(&self, latents: Array2<T>) -> Array2<T> {
        self.head.forward(latents).scores
    }

    pub fn predict(&self, seqs: &[Vec<usize>], batch_size: usize) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(seqs.len());
        for chunk in seqs.chunks(batch_size.max(1)) {
            let scores = self.classify(self.encode(chunk)?);
            for row in scores.rows() {
                let mut best = 0;
                for c in 1..row.len() {
                    if row[c] > row[best] {
                        best = c;
                    }
                }
                out.push(best);
            }
        }
        Ok(out)
    }

    /// Total loss on a batch and its gradient on the parameters in `mask`.
    pub fn loss_and_grad(
        &self,
        seqs: &[Vec<usize>],
        labels: &[usize],
        domains: &[String],
        lambda: T,
        sep: &SeparabilityConfig,
        mask: &TrainableMask,
        training: Option<(&ModelConfig, &mut ChaCha8Rng)>,
    ) -> Result<StepOutput<T>> {
        use rand::Rng;

        let (pass, head_drop) = match training {
            Some((cfg, rng)) => {
                let pass = self
                    .encoder
                    .run(seqs, Some((cfg.encoder_dropout(), &mut *rng)))?;
                let p = cfg.head_dropout;
                let drop = (p > 0.0).then(|| {
                    let keep = T::c(1.0 / (1.0 - p));
                    Array2::from_shape_fn((seqs.len(), self.encoder.latent_dim()), |_| {
                        if rng.gen::<f64>() < p {
                            T::zero()
                        } else {
                            keep
                        }
                    })
                });
                (pass, drop)
            }
            None => (self.encoder.run(seqs, None)?, None),
        };
        let (latent, pool_cache) = self.encoder.pool(&pass);
        let head_in = match &head_drop {
            Some(m) => &latent * m,
            None => latent.clone(),
        };
        let hp = self.head.forward(head_in);
        let sep_rows = match sep.input {
            SeparabilityInput::EncoderLatent => latent,
            SeparabilityInput::HeadHidden => hp.hidden.clone(),
        };
        let batch = LatentBatch::new(sep_rows, labels.to_vec(), domains.to_vec())?;
        let loss = total_loss(hp.scores.view(), labels, &batch, lambda, sep);

        let mut grad = self.zeros_like();
        let extra = match sep.input {
            SeparabilityInput::HeadHidden => Some(&loss.grad_latents),
            SeparabilityInput::EncoderLatent => None,
        };
        let mut d_latent = self
            .head
            .backward(&hp, &loss.grad_scores, extra, &mut grad.head);
        if let Some(m) = &head_drop {
            d_latent *= m;
        }
        if sep.input == SeparabilityInput::EncoderLatent {
            d_latent += &loss.grad_latents;
        }
        if let Some(lowest) = mask.lowest_layer() {
            let d_top = self.encoder.pool_backward(&pass, &pool_cache, &d_latent);
            self.encoder
                .backward(&pass, d_top, &mut grad.encoder, lowest, mask.embedding);
        }
        Ok(StepOutput { loss, grad })
    }
}

/// Pooled `3H` latents of a batch, evaluated without dropout.
pub fn encode<T: Scalar>(encoder: &Encoder<T>, seqs: &[Vec<usize>]) -> Result<Array2<T>> {
    let pass = encoder.run(seqs, None)?;
    Ok(encoder.pool(&pass).0)
}
