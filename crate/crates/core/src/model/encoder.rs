use ndarray::{s, Array2, Array3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::lstm::{LstmCache, LstmLayer};
use super::{
    ModelConfig, ModelError, ParamGroup, Parameterized, Tensor, TensorMut, ENCODER_LAYERS,
};
use crate::scalar::Scalar;
use crate::textprep::PAD_ID;

/// Embedding followed by a three-layer LSTM.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder<T> {
    pub embedding: Array2<T>,
    pub layers: Vec<LstmLayer<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropout {
    pub embedding: f64,
    pub between_layers: f64,
}

/// Forward activations of one batch.
#[derive(Debug, Clone)]
pub struct EncoderPass<T> {
    pub steps: usize,
    pub batch: usize,
    /// Token ids, time-major, `steps * batch`.
    pub ids: Vec<usize>,
    pub mask: Vec<Vec<bool>>,
    pub caches: Vec<LstmCache<T>>,
    /// Inverted-dropout multipliers applied to each layer's input.
    drop: Vec<Option<Array2<T>>>,
}

/// Bookkeeping for the last/mean/max pooling.
#[derive(Debug, Clone)]
pub struct PoolCache {
    lengths: Vec<usize>,
    argmax: Array2<usize>,
}

fn dropout_mask<T: Scalar>(
    rows: usize,
    cols: usize,
    p: f64,
    rng: &mut ChaCha8Rng,
) -> Option<Array2<T>> {
    if p <= 0.0 {
        return None;
    }
    let keep = T::c(1.0 / (1.0 - p));
    Some(Array2::from_shape_fn((rows, cols), |_| {
        if rng.gen::<f64>() < p {
            T::zero()
        } else {
            keep
        }
    }))
}

impl<T: Scalar> Encoder<T> {
    pub fn new<R: Rng>(vocab_size: usize, cfg: &ModelConfig, rng: &mut R) -> Self {
        // Unit-variance rows; smaller scales leave the top layer of an
        // untrained stack nearly input-independent.
        let k = 3f64.sqrt();
        let embedding = Array2::from_shape_fn((vocab_size, cfg.embedding_dim), |(i, _)| {
            if i == PAD_ID {
                T::zero()
            } else {
                T::c(rng.gen_range(-k..k))
            }
        });
        let mut layers = Vec::with_capacity(ENCODER_LAYERS);
        let mut input = cfg.embedding_dim;
        for _ in 0..ENCODER_LAYERS {
            layers.push(LstmLayer::new(input, cfg.hidden_dim, rng));
            input = cfg.hidden_dim;
        }
        Encoder { embedding, layers }
    }

    pub fn zeros_like(&self) -> Self {
        Encoder {
            embedding: Array2::zeros(self.embedding.dim()),
            layers: self.layers.iter().map(LstmLayer::zeros_like).collect(),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.layers[0].hidden()
    }

    pub fn latent_dim(&self) -> usize {
        3 * self.hidden_dim()
    }

    /// Pads `seqs` with `<pad>` to the longest length and runs the stack.
    pub fn run(
        &self,
        seqs: &[Vec<usize>],
        mut dropout: Option<(Dropout, &mut ChaCha8Rng)>,
    ) -> Result<EncoderPass<T>, ModelError> {
        let batch = seqs.len();
        let steps = seqs.iter().map(Vec::len).max().unwrap_or(0);
        for (i, s) in seqs.iter().enumerate() {
            if s.iter().all(|&t| t == PAD_ID) {
                return Err(ModelError::EmptySequence(i));
            }
            if let Some(&bad) = s.iter().find(|&&t| t >= self.vocab_size()) {
                return Err(ModelError::TokenOutOfRange {
                    id: bad,
                    vocab: self.vocab_size(),
                });
            }
        }
        let mut ids = vec![PAD_ID; steps * batch];
        let mut mask = vec![vec![false; batch]; steps];
        for (b, s) in seqs.iter().enumerate() {
            for (t, &id) in s.iter().enumerate() {
                ids[t * batch + b] = id;
                mask[t][b] = id != PAD_ID;
            }
        }
        let e_dim = self.embedding.ncols();
        let mut x = Array2::<T>::zeros((steps * batch, e_dim));
        for (r, &id) in ids.iter().enumerate() {
            x.row_mut(r).assign(&self.embedding.row(id));
        }
        let mut caches: Vec<LstmCache<T>> = Vec::with_capacity(self.layers.len());
        let mut drop = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let d = match dropout.as_mut() {
                Some((cfg, rng)) => {
                    let p = if l == 0 {
                        cfg.embedding
                    } else {
                        cfg.between_layers
                    };
                    dropout_mask::<T>(x.nrows(), x.ncols(), p, rng)
                }
                None => None,
            };
            if let Some(m) = &d {
                x *= m;
            }
            drop.push(d);
            let cache = layer.forward(x, &mask, batch);
            let h = layer.hidden();
            x = cache
                .outputs()
                .to_owned()
                .into_shape_with_order((steps * batch, h))
                .expect("contiguous outputs");
            caches.push(cache);
        }
        Ok(EncoderPass {
            steps,
            batch,
            ids,
            mask,
            caches,
            drop,
        })
    }

    /// Backpropagates a gradient on the top layer's outputs. Layers below
    /// `lowest_layer` receive nothing; the embedding only if `embedding`.
    pub fn backward(
        &self,
        pass: &EncoderPass<T>,
        d_top: Array3<T>,
        grad: &mut Encoder<T>,
        lowest_layer: usize,
        embedding: bool,
    ) {
        let n_layers = self.layers.len();
        let mut dh = d_top;
        for l in (lowest_layer..n_layers).rev() {
            let mut dx =
                self.layers[l].backward(&pass.caches[l], &pass.mask, &dh, &mut grad.layers[l]);
            if let Some(m) = &pass.drop[l] {
                dx *= m;
            }
            if l == 0 {
                if embedding {
                    for (r, &id) in pass.ids.iter().enumerate() {
                        if id != PAD_ID {
                            let mut g = grad.embedding.row_mut(id);
                            g += &dx.row(r);
                        }
                    }
                }
                break;
            }
            if l == lowest_layer {
                break;
            }
            let h = self.layers[l - 1].hidden();
            dh = dx
                .into_shape_with_order((pass.steps, pass.batch, h))
                .expect("contiguous gradient");
        }
    }

    /// `[last, mean, max]` over the unmasked positions of the top layer.
    pub fn pool(&self, pass: &EncoderPass<T>) -> (Array2<T>, PoolCache) {
        let top = pass.caches.last().expect("at least one layer");
        let out = top.outputs();
        let h = self.hidden_dim();
        let batch = pass.batch;
        let mut latent = Array2::<T>::zeros((batch, 3 * h));
        let mut argmax = Array2::<usize>::zeros((batch, h));
        let mut lengths = vec![0usize; batch];
        for b in 0..batch {
            let mut sum = vec![T::zero(); h];
            let mut best = vec![T::neg_infinity(); h];
            for t in 0..pass.steps {
                if !pass.mask[t][b] {
                    continue;
                }
                lengths[b] += 1;
                for j in 0..h {
                    let v = out[[t, b, j]];
                    sum[j] += v;
                    if v > best[j] {
                        best[j] = v;
                        argmax[[b, j]] = t;
                    }
                }
            }
            let n = T::c(lengths[b] as f64);
            let last = top.final_hidden();
            for j in 0..h {
                latent[[b, j]] = last[[b, j]];
                latent[[b, h + j]] = sum[j] / n;
                latent[[b, 2 * h + j]] = best[j];
            }
        }
        (latent, PoolCache { lengths, argmax })
    }

    /// Spreads a latent gradient back over the top layer's outputs.
    pub fn pool_backward(
        &self,
        pass: &EncoderPass<T>,
        cache: &PoolCache,
        d_latent: &Array2<T>,
    ) -> Array3<T> {
        let h = self.hidden_dim();
        let mut d = Array3::<T>::zeros((pass.steps, pass.batch, h));
        for b in 0..pass.batch {
            let n = T::c(cache.lengths[b] as f64);
            // The final state equals the state at the last unmasked step.
            let last_t = (0..pass.steps)
                .rev()
                .find(|&t| pass.mask[t][b])
                .expect("non-empty row");
            for j in 0..h {
                d[[last_t, b, j]] += d_latent[[b, j]];
                let dm = d_latent[[b, h + j]] / n;
                for t in 0..pass.steps {
                    if pass.mask[t][b] {
                        d[[t, b, j]] += dm;
                    }
                }
                d[[cache.argmax[[b, j]], b, j]] += d_latent[[b, 2 * h + j]];
            }
        }
        d
    }

    /// Top-layer outputs as `(steps * batch) x H`, time-major.
    pub fn top_outputs(pass: &EncoderPass<T>) -> Array2<T> {
        let top = pass.caches.last().expect("at least one layer");
        let h = top.h.dim().2;
        top.h
            .slice(s![1.., .., ..])
            .to_owned()
            .into_shape_with_order((pass.steps * pass.batch, h))
            .expect("contiguous")
    }
}

impl<T: Scalar> Parameterized<T> for Encoder<T> {
    fn tensors(&self) -> Vec<Tensor<'_, T>> {
        let mut v = vec![Tensor::new(
            "encoder.embedding",
            ParamGroup::Embedding,
            &self.embedding,
        )];
        for (l, layer) in self.layers.iter().enumerate() {
            let g = ParamGroup::Layer(l);
            v.push(Tensor::new(format!("encoder.lstm{l}.w_ih"), g, &layer.w_ih));
            v.push(Tensor::new(format!("encoder.lstm{l}.w_hh"), g, &layer.w_hh));
            v.push(Tensor::new(format!("encoder.lstm{l}.bias"), g, &layer.bias));
        }
        v
    }

    fn tensors_mut(&mut self) -> Vec<TensorMut<'_, T>> {
        let mut v = vec![TensorMut::new(ParamGroup::Embedding, &mut self.embedding)];
        for (l, layer) in self.layers.iter_mut().enumerate() {
            let g = ParamGroup::Layer(l);
            v.push(TensorMut::new(g, &mut layer.w_ih));
            v.push(TensorMut::new(g, &mut layer.w_hh));
            v.push(TensorMut::new(g, &mut layer.bias));
        }
        v
    }
}
