use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use super::{ParamGroup, Parameterized, Tensor, TensorMut};
use crate::objectives::N_CLASSES;
use crate::scalar::Scalar;

/// `latent -> affine -> ReLU -> affine -> 3 scores`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead<T> {
    pub w1: Array2<T>,
    pub b1: Array1<T>,
    pub w2: Array2<T>,
    pub b2: Array1<T>,
}

#[derive(Debug, Clone)]
pub struct HeadPass<T> {
    pub input: Array2<T>,
    pub hidden: Array2<T>,
    pub scores: Array2<T>,
}

impl<T: Scalar> ClassifierHead<T> {
    pub fn new<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let k1 = (6.0 / input as f64).sqrt();
        let k2 = (6.0 / (hidden + N_CLASSES) as f64).sqrt();
        ClassifierHead {
            w1: Array2::from_shape_fn((input, hidden), |_| T::c(rng.gen_range(-k1..k1))),
            b1: Array1::zeros(hidden),
            w2: Array2::from_shape_fn((hidden, N_CLASSES), |_| T::c(rng.gen_range(-k2..k2))),
            b2: Array1::zeros(N_CLASSES),
        }
    }

    pub fn zeros_like(&self) -> Self {
        ClassifierHead {
            w1: Array2::zeros(self.w1.dim()),
            b1: Array1::zeros(self.b1.dim()),
            w2: Array2::zeros(self.w2.dim()),
            b2: Array1::zeros(self.b2.dim()),
        }
    }

    pub fn forward(&self, input: Array2<T>) -> HeadPass<T> {
        let mut hidden = input.dot(&self.w1);
        hidden += &self.b1;
        hidden.mapv_inplace(|v| v.max(T::zero()));
        let mut scores = hidden.dot(&self.w2);
        scores += &self.b2;
        HeadPass {
            input,
            hidden,
            scores,
        }
    }

    /// Returns the gradient on the head input. `d_hidden_extra` is an
    /// additional gradient on the post-ReLU hidden activations.
    pub fn backward(
        &self,
        pass: &HeadPass<T>,
        d_scores: &Array2<T>,
        d_hidden_extra: Option<&Array2<T>>,
        grad: &mut ClassifierHead<T>,
    ) -> Array2<T> {
        grad.w2 += &pass.hidden.t().dot(d_scores);
        grad.b2 += &d_scores.sum_axis(Axis(0));
        let mut d_hidden = d_scores.dot(&self.w2.t());
        if let Some(extra) = d_hidden_extra {
            d_hidden += extra;
        }
        ndarray::Zip::from(&mut d_hidden)
            .and(&pass.hidden)
            .for_each(|d, &h| {
                if h <= T::zero() {
                    *d = T::zero();
                }
            });
        grad.w1 += &pass.input.t().dot(&d_hidden);
        grad.b1 += &d_hidden.sum_axis(Axis(0));
        d_hidden.dot(&self.w1.t())
    }
}

impl<T: Scalar> Parameterized<T> for ClassifierHead<T> {
    fn tensors(&self) -> Vec<Tensor<'_, T>> {
        vec![
            Tensor::new("head.w1", ParamGroup::Head, &self.w1),
            Tensor::new("head.b1", ParamGroup::Head, &self.b1),
            Tensor::new("head.w2", ParamGroup::Head, &self.w2),
            Tensor::new("head.b2", ParamGroup::Head, &self.b2),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<TensorMut<'_, T>> {
        vec![
            TensorMut::new(ParamGroup::Head, &mut self.w1),
            TensorMut::new(ParamGroup::Head, &mut self.b1),
            TensorMut::new(ParamGroup::Head, &mut self.w2),
            TensorMut::new(ParamGroup::Head, &mut self.b2),
        ]
    }
}
