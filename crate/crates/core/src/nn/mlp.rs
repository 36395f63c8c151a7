use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{uniform, Parameters};
use crate::linalg::Mat;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation output `y`.
    #[inline]
    fn grad_from_output<T: Real>(self, y: T) -> T {
        match self {
            Activation::Tanh => T::one() - y * y,
            Activation::Identity => T::one(),
        }
    }
}

/// Affine layer `y = W x + b`, `W` is `out × in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub w: Mat<T>,
    pub b: Vec<T>,
}

impl<T: Real> Dense<T> {
    pub fn new<R: Rng>(n_in: usize, n_out: usize, rng: &mut R) -> Self {
        let s = 1.0 / (n_in as f64).sqrt();
        Self { w: Mat::from_vec(n_out, n_in, uniform(rng, n_in * n_out, s)), b: uniform(rng, n_out, s) }
    }

    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Self { w: Mat::zeros(n_out, n_in), b: vec![T::zero(); n_out] }
    }

    pub fn n_in(&self) -> usize {
        self.w.cols()
    }

    pub fn n_out(&self) -> usize {
        self.w.rows()
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        let mut y = self.w.matvec(x);
        for (yi, &bi) in y.iter_mut().zip(&self.b) {
            *yi = *yi + bi;
        }
        y
    }
}

/// Fully connected network; every layer but the last applies `hidden`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    pub layers: Vec<Dense<T>>,
    pub hidden: Activation,
}

/// Layer outputs recorded by [`Mlp::forward_trace`]; `values[0]` is the input.
#[derive(Clone, Debug)]
pub struct MlpTrace<T> {
    pub values: Vec<Vec<T>>,
}

impl<T> MlpTrace<T> {
    pub fn output(&self) -> &[T] {
        self.values.last().map(|v| v.as_slice()).unwrap_or(&[])
    }
}

impl<T: Real> Mlp<T> {
    pub fn new<R: Rng>(sizes: &[usize], hidden: Activation, rng: &mut R) -> Self {
        let layers = sizes.windows(2).map(|w| Dense::new(w[0], w[1], rng)).collect();
        Self { layers, hidden }
    }

    pub fn zeros_like(&self) -> Self {
        Self { layers: self.layers.iter().map(|l| Dense::zeros(l.n_in(), l.n_out())).collect(), hidden: self.hidden }
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.layers.iter().map(|l| l.n_in()).collect();
        if let Some(l) = self.layers.last() {
            s.push(l.n_out());
        }
        s
    }

    fn act(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            Activation::Identity
        } else {
            self.hidden
        }
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        let mut v = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let a = self.act(i);
            v = layer.forward(&v).into_iter().map(|y| a.apply(y)).collect();
        }
        v
    }

    pub fn forward_trace(&self, x: &[T]) -> MlpTrace<T> {
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(x.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let a = self.act(i);
            let y = layer.forward(values.last().unwrap()).into_iter().map(|y| a.apply(y)).collect();
            values.push(y);
        }
        MlpTrace { values }
    }

    /// Backpropagates `d_out`; accumulates parameter gradients into `grads`
    /// when given and returns the gradient with respect to the input.
    pub fn backward(&self, trace: &MlpTrace<T>, d_out: &[T], mut grads: Option<&mut Mlp<T>>) -> Vec<T> {
        let mut delta = d_out.to_vec();
        for i in (0..self.layers.len()).rev() {
            let a = self.act(i);
            let y = &trace.values[i + 1];
            for (d, &yi) in delta.iter_mut().zip(y) {
                *d = *d * a.grad_from_output(yi);
            }
            let x = &trace.values[i];
            if let Some(g) = grads.as_deref_mut() {
                let gl = &mut g.layers[i];
                for (r, &dr) in delta.iter().enumerate() {
                    if dr == T::zero() {
                        continue;
                    }
                    gl.b[r] = gl.b[r] + dr;
                    for (gw, &xc) in gl.w.row_mut(r).iter_mut().zip(x) {
                        *gw = *gw + dr * xc;
                    }
                }
            }
            delta = self.layers[i].w.tr_matvec(&delta);
        }
        delta
    }
}

impl<T: Real> Parameters<T> for Mlp<T> {
    fn slices(&self) -> Vec<&[T]> {
        self.layers.iter().flat_map(|l| [l.w.as_slice(), l.b.as_slice()]).collect()
    }

    fn slices_mut(&mut self) -> Vec<&mut [T]> {
        self.layers.iter_mut().flat_map(|l| [l.w.as_mut_slice(), l.b.as_mut_slice()]).collect()
    }
}
