use ndarray::{s, Array1, Array2, Array3, Axis, Zip};
use rand::Rng;

use crate::scalar::Scalar;

/// Gate blocks are laid out `[input, forget, cell, output]` along the last axis.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer<T> {
    pub w_ih: Array2<T>,
    pub w_hh: Array2<T>,
    pub bias: Array1<T>,
}

/// Activations kept for the backward pass. Time is the leading axis.
#[derive(Debug, Clone)]
pub struct LstmCache<T> {
    /// Layer input, `(steps * batch) x input`.
    pub x: Array2<T>,
    /// Post-nonlinearity gates, `steps x batch x 4H`.
    gates: Array3<T>,
    /// Cell states, `(steps + 1) x batch x H`; index 0 is the initial state.
    c: Array3<T>,
    /// Hidden states, `(steps + 1) x batch x H`.
    pub h: Array3<T>,
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

impl<T: Scalar> LstmLayer<T> {
    pub fn new<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let k = 1.0 / (hidden as f64).sqrt();
        let mut u = |_| T::c(rng.gen_range(-k..k));
        let w_ih = Array2::from_shape_fn((input, 4 * hidden), |ix| u(ix));
        let w_hh = Array2::from_shape_fn((hidden, 4 * hidden), |ix| u(ix));
        let mut bias = Array1::zeros(4 * hidden);
        bias.slice_mut(s![hidden..2 * hidden]).fill(T::one());
        LstmLayer { w_ih, w_hh, bias }
    }

    pub fn zeros_like(&self) -> Self {
        LstmLayer {
            w_ih: Array2::zeros(self.w_ih.dim()),
            w_hh: Array2::zeros(self.w_hh.dim()),
            bias: Array1::zeros(self.bias.dim()),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.nrows()
    }

    /// Runs the layer over `steps` time steps. `x` is `(steps * batch) x input`
    /// in time-major order; `mask[t][b]` false means the state is carried over
    /// unchanged at that position.
    pub fn forward(&self, x: Array2<T>, mask: &[Vec<bool>], batch: usize) -> LstmCache<T> {
        let steps = mask.len();
        let h_dim = self.hidden();
        let mut pre = x.dot(&self.w_ih);
        pre += &self.bias;
        let mut gates = Array3::<T>::zeros((steps, batch, 4 * h_dim));
        let mut c = Array3::<T>::zeros((steps + 1, batch, h_dim));
        let mut h = Array3::<T>::zeros((steps + 1, batch, h_dim));
        for t in 0..steps {
            let mut a = pre.slice(s![t * batch..(t + 1) * batch, ..]).to_owned();
            a += &h.index_axis(Axis(0), t).dot(&self.w_hh);
            for b in 0..batch {
                let c_prev = c.slice(s![t, b, ..]).to_owned();
                let h_prev = h.slice(s![t, b, ..]).to_owned();
                if !mask[t][b] {
                    c.slice_mut(s![t + 1, b, ..]).assign(&c_prev);
                    h.slice_mut(s![t + 1, b, ..]).assign(&h_prev);
                    continue;
                }
                let row = a.row(b);
                let mut g = gates.slice_mut(s![t, b, ..]);
                for j in 0..h_dim {
                    let i_g = sigmoid(row[j]);
                    let f_g = sigmoid(row[h_dim + j]);
                    let c_g = row[2 * h_dim + j].tanh();
                    let o_g = sigmoid(row[3 * h_dim + j]);
                    g[j] = i_g;
                    g[h_dim + j] = f_g;
                    g[2 * h_dim + j] = c_g;
                    g[3 * h_dim + j] = o_g;
                    let c_new = f_g * c_prev[j] + i_g * c_g;
                    c[[t + 1, b, j]] = c_new;
                    h[[t + 1, b, j]] = o_g * c_new.tanh();
                }
            }
        }
        LstmCache { x, gates, c, h }
    }

    /// Backpropagates `dh_out` (gradient on the emitted hidden states, shape
    /// `steps x batch x H`) plus `dh_final` on the last state. Accumulates
    /// parameter gradients into `grad` and returns the gradient on `x`.
    pub fn backward(
        &self,
        cache: &LstmCache<T>,
        mask: &[Vec<bool>],
        dh_out: &Array3<T>,
        grad: &mut LstmLayer<T>,
    ) -> Array2<T> {
        let steps = mask.len();
        let batch = dh_out.dim().1;
        let h_dim = self.hidden();
        let mut d_pre = Array2::<T>::zeros((steps * batch, 4 * h_dim));
        let mut dh_next = Array2::<T>::zeros((batch, h_dim));
        let mut dc_next = Array2::<T>::zeros((batch, h_dim));
        let one = T::one();
        for t in (0..steps).rev() {
            let mut dh = dh_out.index_axis(Axis(0), t).to_owned();
            dh += &dh_next;
            let mut da = d_pre.slice_mut(s![t * batch..(t + 1) * batch, ..]);
            let mut dc_prev = Array2::<T>::zeros((batch, h_dim));
            let mut dh_carry = Array2::<T>::zeros((batch, h_dim));
            for b in 0..batch {
                if !mask[t][b] {
                    // h and c were copied from t-1.
                    dh_carry.row_mut(b).assign(&dh.row(b));
                    dc_prev.row_mut(b).assign(&dc_next.row(b));
                    continue;
                }
                let g = cache.gates.slice(s![t, b, ..]);
                for j in 0..h_dim {
                    let (i_g, f_g, c_g, o_g) =
                        (g[j], g[h_dim + j], g[2 * h_dim + j], g[3 * h_dim + j]);
                    let c_t = cache.c[[t + 1, b, j]];
                    let c_p = cache.c[[t, b, j]];
                    let tc = c_t.tanh();
                    let dh_j = dh[[b, j]];
                    let d_o = dh_j * tc;
                    let dc = dc_next[[b, j]] + dh_j * o_g * (one - tc * tc);
                    let d_i = dc * c_g;
                    let d_f = dc * c_p;
                    let d_c = dc * i_g;
                    dc_prev[[b, j]] = dc * f_g;
                    da[[b, j]] = d_i * i_g * (one - i_g);
                    da[[b, h_dim + j]] = d_f * f_g * (one - f_g);
                    da[[b, 2 * h_dim + j]] = d_c * (one - c_g * c_g);
                    da[[b, 3 * h_dim + j]] = d_o * o_g * (one - o_g);
                }
            }
            let h_prev = cache.h.index_axis(Axis(0), t);
            grad.w_hh += &h_prev.t().dot(&da);
            dh_next = da.dot(&self.w_hh.t());
            dh_next += &dh_carry;
            dc_next = dc_prev;
        }
        grad.w_ih += &cache.x.t().dot(&d_pre);
        Zip::from(&mut grad.bias)
            .and(d_pre.sum_axis(Axis(0)).view())
            .for_each(|g, &d| *g += d);
        d_pre.dot(&self.w_ih.t())
    }
}

impl<T: Scalar> LstmCache<T> {
    /// Hidden states emitted at each step, `steps x batch x H`.
    pub fn outputs(&self) -> ndarray::ArrayView3<'_, T> {
        self.h.slice(s![1.., .., ..])
    }

    /// State after the last step.
    pub fn final_hidden(&self) -> ndarray::ArrayView2<'_, T> {
        let steps = self.h.dim().0 - 1;
        self.h.index_axis(Axis(0), steps)
    }
}
