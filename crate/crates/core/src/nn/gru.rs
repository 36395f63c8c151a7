use rand::Rng;

use super::{uniform, Parameters};
use crate::linalg::Mat;
use crate::scalar::{sigmoid, Real};

/// Gated recurrent cell. Gate rows are stacked `[reset; update; candidate]`.
///
/// ```text
/// r  = σ(W_ir x + b_ir + W_hr h + b_hr)
/// z  = σ(W_iz x + b_iz + W_hz h + b_hz)
/// n  = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))
/// h' = (1 - z) ⊙ n + z ⊙ h
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct Gru<T> {
    pub wi: Mat<T>,
    pub wh: Mat<T>,
    pub bi: Vec<T>,
    pub bh: Vec<T>,
}

/// Intermediate values of one [`Gru::step`], needed for the backward pass.
#[derive(Clone, Debug)]
pub struct GruStep<T> {
    pub x: Vec<T>,
    pub h_prev: Vec<T>,
    r: Vec<T>,
    z: Vec<T>,
    n: Vec<T>,
    hn: Vec<T>,
    pub h: Vec<T>,
}

impl<T: Real> Gru<T> {
    pub fn new<R: Rng>(n_in: usize, hidden: usize, rng: &mut R) -> Self {
        let s = 1.0 / (hidden as f64).sqrt();
        Self {
            wi: Mat::from_vec(3 * hidden, n_in, uniform(rng, 3 * hidden * n_in, s)),
            wh: Mat::from_vec(3 * hidden, hidden, uniform(rng, 3 * hidden * hidden, s)),
            bi: uniform(rng, 3 * hidden, s),
            bh: uniform(rng, 3 * hidden, s),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            wi: Mat::zeros(self.wi.rows(), self.wi.cols()),
            wh: Mat::zeros(self.wh.rows(), self.wh.cols()),
            bi: vec![T::zero(); self.bi.len()],
            bh: vec![T::zero(); self.bh.len()],
        }
    }

    pub fn hidden(&self) -> usize {
        self.wh.cols()
    }

    pub fn n_in(&self) -> usize {
        self.wi.cols()
    }

    pub fn step(&self, x: &[T], h: &[T]) -> GruStep<T> {
        let nh = self.hidden();
        let gi = self.wi.matvec(x);
        let gh = self.wh.matvec(h);
        let mut r = vec![T::zero(); nh];
        let mut z = vec![T::zero(); nh];
        let mut n = vec![T::zero(); nh];
        let mut hn = vec![T::zero(); nh];
        let mut out = vec![T::zero(); nh];
        for k in 0..nh {
            r[k] = sigmoid(gi[k] + self.bi[k] + gh[k] + self.bh[k]);
            z[k] = sigmoid(gi[nh + k] + self.bi[nh + k] + gh[nh + k] + self.bh[nh + k]);
            hn[k] = gh[2 * nh + k] + self.bh[2 * nh + k];
            n[k] = (gi[2 * nh + k] + self.bi[2 * nh + k] + r[k] * hn[k]).tanh();
            out[k] = (T::one() - z[k]) * n[k] + z[k] * h[k];
        }
        GruStep { x: x.to_vec(), h_prev: h.to_vec(), r, z, n, hn, h: out }
    }

    /// Returns `(dL/dx, dL/dh_prev)` given `dL/dh`; accumulates into `grads`.
    pub fn step_backward(&self, s: &GruStep<T>, dh: &[T], grads: Option<&mut Gru<T>>) -> (Vec<T>, Vec<T>) {
        let nh = self.hidden();
        let mut g_in = vec![T::zero(); 3 * nh];
        let mut g_h = vec![T::zero(); 3 * nh];
        let mut dh_prev = vec![T::zero(); nh];
        for k in 0..nh {
            let (r, z, n) = (s.r[k], s.z[k], s.n[k]);
            let dn = dh[k] * (T::one() - z);
            let dz = dh[k] * (s.h_prev[k] - n);
            dh_prev[k] = dh[k] * z;
            let dan = dn * (T::one() - n * n);
            let dr = dan * s.hn[k];
            let dar = dr * r * (T::one() - r);
            let daz = dz * z * (T::one() - z);
            g_in[k] = dar;
            g_in[nh + k] = daz;
            g_in[2 * nh + k] = dan;
            g_h[k] = dar;
            g_h[nh + k] = daz;
            g_h[2 * nh + k] = dan * r;
        }
        if let Some(g) = grads {
            for row in 0..3 * nh {
                let (a, b) = (g_in[row], g_h[row]);
                g.bi[row] = g.bi[row] + a;
                g.bh[row] = g.bh[row] + b;
                if a != T::zero() {
                    for (w, &xv) in g.wi.row_mut(row).iter_mut().zip(&s.x) {
                        *w = *w + a * xv;
                    }
                }
                if b != T::zero() {
                    for (w, &hv) in g.wh.row_mut(row).iter_mut().zip(&s.h_prev) {
                        *w = *w + b * hv;
                    }
                }
            }
        }
        let dx = self.wi.tr_matvec(&g_in);
        let back = self.wh.tr_matvec(&g_h);
        for (d, b) in dh_prev.iter_mut().zip(back) {
            *d = *d + b;
        }
        (dx, dh_prev)
    }
}

impl<T: Real> Parameters<T> for Gru<T> {
    fn slices(&self) -> Vec<&[T]> {
        vec![self.wi.as_slice(), self.wh.as_slice(), &self.bi, &self.bh]
    }

    fn slices_mut(&mut self) -> Vec<&mut [T]> {
        vec![self.wi.as_mut_slice(), self.wh.as_mut_slice(), &mut self.bi, &mut self.bh]
    }
}
