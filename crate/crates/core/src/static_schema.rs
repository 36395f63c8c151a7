//! Static body schema: a masked autoencoder over joint angles, muscle tensions
//! and muscle lengths.
//!
//! The input is `[θ, f, l, m]` (z-scored, masked blocks zero-filled, three
//! mask scalars appended); the output reconstructs all of `[θ, f, l]`. Control
//! runs gradient descent on the latent code so that the decoded posture hits a
//! target with little tension and, optionally, a target joint stiffness.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};
use crate::linalg::Mat;
use crate::nn::persist::{self, KIND_STATIC};
use crate::nn::{Activation, Adam, Dense, Mlp, Parameters};
use crate::plant::{distribute_tension, ArmPlant};
use crate::scalar::{c, Real};

/// Which blocks of `(θ, f, l)` are provided.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mask {
    /// `(1, 1, 0)`: predict lengths, used for control.
    AnglesTensions,
    /// `(0, 1, 1)`: estimate the posture from tensions and lengths.
    TensionsLengths,
    /// `(1, 0, 1)`: predict tensions.
    AnglesLengths,
}

impl Mask {
    pub const ALL: [Mask; 3] = [Mask::AnglesTensions, Mask::TensionsLengths, Mask::AnglesLengths];

    pub fn bits(self) -> [bool; 3] {
        match self {
            Mask::AnglesTensions => [true, true, false],
            Mask::TensionsLengths => [false, true, true],
            Mask::AnglesLengths => [true, false, true],
        }
    }

    pub fn from_bits(bits: [u8; 3]) -> Result<Self> {
        match bits {
            [1, 1, 0] => Ok(Mask::AnglesTensions),
            [0, 1, 1] => Ok(Mask::TensionsLengths),
            [1, 0, 1] => Ok(Mask::AnglesLengths),
            other => usage(format!("mask {other:?} is not one of (1,1,0), (0,1,1), (1,0,1)")),
        }
    }

    /// Index of the block this mask hides (0 = θ, 1 = f, 2 = l).
    pub fn hidden_block(self) -> usize {
        self.bits().iter().position(|b| !b).unwrap()
    }
}

/// A proprioceptive reading. `mask` marks the provided blocks; stored
/// datasets use `[1, 1, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorTriple<T> {
    pub theta: Vec<T>,
    pub f: Vec<T>,
    pub l: Vec<T>,
    pub mask: [u8; 3],
}

impl<T: Real> SensorTriple<T> {
    pub fn full(theta: Vec<T>, f: Vec<T>, l: Vec<T>) -> Self {
        Self { theta, f, l, mask: [1, 1, 1] }
    }

    pub fn with_mask(&self, mask: Mask) -> Self {
        let b = mask.bits();
        Self { mask: [b[0] as u8, b[1] as u8, b[2] as u8], ..self.clone() }
    }

    fn concat(&self) -> Vec<T> {
        self.theta.iter().chain(&self.f).chain(&self.l).copied().collect()
    }
}

/// Full prediction returned by [`StaticNet::complete`].
#[derive(Clone, Debug, PartialEq)]
pub struct Completion<T> {
    pub theta: Vec<T>,
    pub f: Vec<T>,
    pub l: Vec<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StaticConfig {
    pub latent_dim: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// Joint angles are sampled uniformly in `±theta_range`.
    pub theta_range: f64,
    /// Per-joint co-contraction floor range, N.
    pub cocontraction: [f64; 2],
    pub holdout_fraction: f64,
}

impl Default for StaticConfig {
    fn default() -> Self {
        Self {
            latent_dim: 8,
            hidden: 64,
            epochs: 60,
            batch: 64,
            lr: 3e-3,
            theta_range: 1.1,
            cocontraction: [3.0, 40.0],
            holdout_fraction: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlOptions {
    pub iters: usize,
    pub step: f64,
    /// Weight on squared tensions, N⁻².
    pub w_f: f64,
    /// Weight on the stiffness error.
    pub w_k: f64,
    /// Penalty keeping predicted tensions above `f_floor`.
    pub w_floor: f64,
    pub f_floor: f64,
}

impl Default for ControlOptions {
    fn default() -> Self {
        Self { iters: 50, step: 0.05, w_f: 1e-6, w_k: 1e-2, w_floor: 1e-2, f_floor: 3.0 }
    }
}

#[derive(Clone, Debug)]
pub struct ControlResult<T> {
    /// Muscle length command.
    pub l_ref: Vec<T>,
    pub prediction: Completion<T>,
    pub z: Vec<T>,
    /// Loss at initialisation followed by the loss after each accepted step.
    pub loss_history: Vec<T>,
}

/// Masked-block RMSE in physical units, one row per mask.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Evaluation {
    /// `[θ rad, f N, l m]` RMSE for each of the three masks (order of [`Mask::ALL`]).
    pub per_mask: Vec<[f64; 3]>,
    /// Same in normalised units.
    pub per_mask_normalized: Vec<[f64; 3]>,
}

impl Evaluation {
    pub fn theta_rmse(&self) -> f64 {
        self.per_mask[1][0]
    }
    pub fn f_rmse(&self) -> f64 {
        self.per_mask[2][1]
    }
    pub fn l_rmse(&self) -> f64 {
        self.per_mask[0][2]
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub loss_history: Vec<f64>,
    pub holdout: Evaluation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization<T> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
}

impl<T: Real> Normalization<T> {
    pub fn fit(rows: &[Vec<T>]) -> Self {
        let d = rows[0].len();
        let n = c::<T>(rows.len() as f64);
        let mut mean = vec![T::zero(); d];
        for r in rows {
            for (m, &v) in mean.iter_mut().zip(r) {
                *m = *m + v;
            }
        }
        mean.iter_mut().for_each(|m| *m = *m / n);
        let mut std = vec![T::zero(); d];
        for r in rows {
            for ((s, &v), &m) in std.iter_mut().zip(r).zip(&mean) {
                *s = *s + (v - m) * (v - m);
            }
        }
        std.iter_mut().for_each(|s| *s = (*s / n).sqrt().max(c(1e-9)));
        Self { mean, std }
    }

    pub fn apply(&self, x: &[T]) -> Vec<T> {
        x.iter().zip(&self.mean).zip(&self.std).map(|((&v, &m), &s)| (v - m) / s).collect()
    }

    pub fn invert(&self, x: &[T]) -> Vec<T> {
        x.iter().zip(&self.mean).zip(&self.std).map(|((&v, &m), &s)| v * s + m).collect()
    }

    fn identity(d: usize) -> Self {
        Self { mean: vec![T::zero(); d], std: vec![T::one(); d] }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StaticNet<T> {
    pub n_joints: usize,
    pub n_muscles: usize,
    pub encoder: Mlp<T>,
    pub decoder: Mlp<T>,
    pub norm: Normalization<T>,
}

#[derive(Serialize, Deserialize)]
struct StaticMeta {
    n_joints: usize,
    n_muscles: usize,
    encoder_sizes: Vec<usize>,
    decoder_sizes: Vec<usize>,
    activation: Activation,
    mean: Vec<f64>,
    std: Vec<f64>,
}

/// Samples equilibrium triples from the plant: random posture, random
/// co-contraction per joint, least-tension gravity compensation on top.
pub fn generate_samples<T: Real>(
    plant: &ArmPlant<T>,
    n: usize,
    cfg: &StaticConfig,
    rng: &mut impl Rng,
) -> Result<Vec<SensorTriple<T>>> {
    let nj = plant.n_joints;
    let g0 = plant.moment_arm_matrix(&vec![T::zero(); nj]);
    let owner: Vec<usize> = (0..plant.n_muscles)
        .map(|i| (0..nj).max_by(|&a, &b| g0[(i, a)].abs().partial_cmp(&g0[(i, b)].abs()).unwrap()).unwrap())
        .collect();
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0;
    while out.len() < n {
        attempts += 1;
        if attempts > 20 * n + 100 {
            return Err(Error::Solver { iterations: attempts, residual: f64::NAN });
        }
        let theta: Vec<T> = (0..nj).map(|_| c(rng.gen_range(-cfg.theta_range..=cfg.theta_range))).collect();
        let co: Vec<T> = (0..nj).map(|_| c(rng.gen_range(cfg.cocontraction[0]..=cfg.cocontraction[1]))).collect();
        let floor: Vec<T> = owner.iter().map(|&j| co[j]).collect();
        let tau_nec: Vec<T> = plant.gravity_torque(&theta, T::zero()).into_iter().map(|v| -v).collect();
        let g = plant.moment_arm_matrix(&theta);
        let f = distribute_tension(&g, &tau_nec, &floor)?;
        let l = plant.lengths_for_tensions(&theta, &f);
        let Ok(eq) = plant.quasi_static_solve_from(&theta, &l, &vec![T::zero(); nj], T::zero()) else {
            continue;
        };
        out.push(SensorTriple::full(eq.theta, eq.tensions, l));
    }
    Ok(out)
}

impl<T: Real> StaticNet<T> {
    pub fn new(n_joints: usize, n_muscles: usize, cfg: &StaticConfig, rng: &mut impl Rng) -> Self {
        let d = n_joints + 2 * n_muscles;
        let (h, z) = (cfg.hidden, cfg.latent_dim);
        Self {
            n_joints,
            n_muscles,
            encoder: Mlp::new(&[d + 3, h, h, z], Activation::Tanh, rng),
            decoder: Mlp::new(&[z, h, h, d], Activation::Tanh, rng),
            norm: Normalization::identity(d),
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.decoder.layers[0].n_in()
    }

    pub fn data_dim(&self) -> usize {
        self.n_joints + 2 * self.n_muscles
    }

    fn block_ranges(&self) -> [std::ops::Range<usize>; 3] {
        let (nj, nm) = (self.n_joints, self.n_muscles);
        [0..nj, nj..nj + nm, nj + nm..nj + 2 * nm]
    }

    fn normalize(&self, x: &[T]) -> Vec<T> {
        x.iter().zip(&self.norm.mean).zip(&self.norm.std).map(|((&v, &m), &s)| (v - m) / s).collect()
    }

    fn denormalize(&self, x: &[T]) -> Vec<T> {
        x.iter().zip(&self.norm.mean).zip(&self.norm.std).map(|((&v, &m), &s)| v * s + m).collect()
    }

    fn encoder_input(&self, normalized: &[T], mask: Mask) -> Vec<T> {
        let bits = mask.bits();
        let mut x = normalized.to_vec();
        for (b, range) in self.block_ranges().into_iter().enumerate() {
            if !bits[b] {
                x[range].iter_mut().for_each(|v| *v = T::zero());
            }
        }
        x.extend(bits.iter().map(|&b| if b { T::one() } else { T::zero() }));
        x
    }

    /// Encoder + decoder on an already normalised, masked input (mask scalars
    /// included); output is normalised.
    pub fn forward_normalized(&self, input: &[T]) -> Vec<T> {
        self.decoder.forward(&self.encoder.forward(input))
    }

    fn check_triple(&self, t: &SensorTriple<T>) -> Result<()> {
        if t.theta.len() != self.n_joints || t.f.len() != self.n_muscles || t.l.len() != self.n_muscles {
            return usage("sensor triple does not match the network dimensions");
        }
        Ok(())
    }

    pub fn encode(&self, triple: &SensorTriple<T>) -> Result<Vec<T>> {
        self.check_triple(triple)?;
        let mask = Mask::from_bits(triple.mask)?;
        Ok(self.encoder.forward(&self.encoder_input(&self.normalize(&triple.concat()), mask)))
    }

    pub fn decode(&self, z: &[T]) -> Completion<T> {
        self.split(&self.denormalize(&self.decoder.forward(z)))
    }

    fn split(&self, v: &[T]) -> Completion<T> {
        let [a, b, cc] = self.block_ranges();
        Completion { theta: v[a].to_vec(), f: v[b].to_vec(), l: v[cc].to_vec() }
    }

    /// Fills in the masked block (and reconstructs the provided ones).
    pub fn complete(&self, triple: &SensorTriple<T>) -> Result<Completion<T>> {
        let z = self.encode(triple)?;
        Ok(self.decode(&z))
    }

    /// Minibatch training with one random mask per sample per epoch and a
    /// cosine learning-rate decay. Returns the mean loss of every epoch.
    pub fn fit(
        &mut self,
        data: &[SensorTriple<T>],
        epochs: usize,
        lr: f64,
        batch: usize,
        rng: &mut impl Rng,
    ) -> Result<Vec<f64>> {
        if data.is_empty() {
            return usage("empty training set");
        }
        let targets: Vec<Vec<T>> = data.iter().map(|t| self.normalize(&t.concat())).collect();
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut opt = Adam::new(c::<T>(lr));
        let mut ge = self.encoder.zeros_like();
        let mut gd = self.decoder.zeros_like();
        let mut history = Vec::with_capacity(epochs);
        for epoch in 0..epochs {
            let cosine = 0.5 * (1.0 + (std::f64::consts::PI * epoch as f64 / epochs.max(1) as f64).cos());
            opt.lr = c(lr * cosine);
            order.shuffle(rng);
            let mut total = 0.0;
            for chunk in order.chunks(batch.max(1)) {
                ge.fill_zero();
                gd.fill_zero();
                let scale = c::<T>(2.0 / (chunk.len() * self.data_dim()) as f64);
                for &i in chunk {
                    let mask = Mask::ALL[rng.gen_range(0..3)];
                    total += self.accumulate(&targets[i], mask, scale, &mut ge, &mut gd);
                }
                self.apply(&mut opt, &ge, &gd);
            }
            let mean = total / data.len() as f64;
            if !mean.is_finite() {
                return Err(Error::Training { epoch });
            }
            history.push(mean);
        }
        Ok(history)
    }

    /// Squared-error loss of one sample; adds `scale · ∂loss/∂params` to the grads.
    fn accumulate(&self, target: &[T], mask: Mask, scale: T, ge: &mut Mlp<T>, gd: &mut Mlp<T>) -> f64 {
        let input = self.encoder_input(target, mask);
        let et = self.encoder.forward_trace(&input);
        let dt = self.decoder.forward_trace(et.output());
        let out = dt.output();
        let mut loss = T::zero();
        let d: Vec<T> = out
            .iter()
            .zip(target)
            .map(|(&o, &t)| {
                loss = loss + (o - t) * (o - t);
                (o - t) * scale
            })
            .collect();
        let dz = self.decoder.backward(&dt, &d, Some(gd));
        self.encoder.backward(&et, &dz, Some(ge));
        loss.to_f64_lossy() / self.data_dim() as f64
    }

    fn apply(&mut self, opt: &mut Adam<T>, ge: &Mlp<T>, gd: &Mlp<T>) {
        let mut params = self.encoder.slices_mut();
        params.extend(self.decoder.slices_mut());
        let mut grads = ge.slices();
        grads.extend(gd.slices());
        opt.step(params, grads);
    }

    /// Masked-block errors on a dataset of full triples.
    pub fn evaluate(&self, data: &[SensorTriple<T>]) -> Evaluation {
        let mut eval = Evaluation::default();
        for mask in Mask::ALL {
            let mut se = [0.0; 3];
            let mut sen = [0.0; 3];
            for t in data {
                let x = t.concat();
                let xn = self.normalize(&x);
                let on = self.forward_normalized(&self.encoder_input(&xn, mask));
                let o = self.denormalize(&on);
                for (b, range) in self.block_ranges().into_iter().enumerate() {
                    for k in range {
                        se[b] += (o[k] - x[k]).to_f64_lossy().powi(2);
                        sen[b] += (on[k] - xn[k]).to_f64_lossy().powi(2);
                    }
                }
            }
            let sizes = [self.n_joints, self.n_muscles, self.n_muscles];
            let n = data.len().max(1) as f64;
            eval.per_mask.push(std::array::from_fn(|b| (se[b] / (n * sizes[b] as f64)).sqrt()));
            eval.per_mask_normalized.push(std::array::from_fn(|b| (sen[b] / (n * sizes[b] as f64)).sqrt()));
        }
        eval
    }

    /// Builds a network, samples `n_samples` equilibrium triples from the
    /// plant, trains on 90 % and reports errors on the rest.
    pub fn train_initial(
        plant: &ArmPlant<T>,
        n_samples: usize,
        cfg: &StaticConfig,
        seed: u64,
    ) -> Result<(Self, TrainReport)> {
        if n_samples < 1000 {
            return usage("train_initial needs at least 1000 samples");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = generate_samples(plant, n_samples, cfg, &mut rng)?;
        let n_hold = ((n_samples as f64) * cfg.holdout_fraction).round() as usize;
        let (train, hold) = data.split_at(n_samples - n_hold);
        let mut net = Self::new(plant.n_joints, plant.n_muscles, cfg, &mut rng);
        net.norm = Normalization::fit(&train.iter().map(|t| t.concat()).collect::<Vec<_>>());
        let loss_history = net.fit(train, cfg.epochs, cfg.lr, cfg.batch, &mut rng)?;
        let holdout = net.evaluate(hold);
        Ok((net, TrainReport { loss_history, holdout }))
    }

    /// A few plain gradient steps on a batch of measured triples, every mask
    /// per sample. Plain SGD keeps updates proportional to the error, so data
    /// the network already fits barely moves it.
    pub fn train_online(&mut self, batch: &[SensorTriple<T>], steps: usize, lr: f64) -> Result<Vec<f64>> {
        if batch.is_empty() {
            return usage("train_online needs a nonempty batch");
        }
        for t in batch {
            self.check_triple(t)?;
        }
        let targets: Vec<Vec<T>> = batch.iter().map(|t| self.normalize(&t.concat())).collect();
        let mut ge = self.encoder.zeros_like();
        let mut gd = self.decoder.zeros_like();
        let scale = c::<T>(2.0 / (3 * batch.len() * self.data_dim()) as f64);
        let mut history = Vec::with_capacity(steps);
        for step in 0..steps {
            ge.fill_zero();
            gd.fill_zero();
            let mut total = 0.0;
            for t in &targets {
                for mask in Mask::ALL {
                    total += self.accumulate(t, mask, scale, &mut ge, &mut gd);
                }
            }
            let loss = total / (3 * batch.len()) as f64;
            if !loss.is_finite() {
                return Err(Error::Training { epoch: step });
            }
            history.push(loss);
            let lr = c::<T>(lr);
            let mut params = self.encoder.slices_mut();
            params.extend(self.decoder.slices_mut());
            let mut grads = ge.slices();
            grads.extend(gd.slices());
            for (p, g) in params.into_iter().zip(grads) {
                for (pi, &gi) in p.iter_mut().zip(g) {
                    *pi = *pi - lr * gi;
                }
            }
        }
        Ok(history)
    }

    /// Control loss and its gradient with respect to the latent code.
    pub fn control_loss_grad(
        &self,
        z: &[T],
        theta_ref: &[T],
        k_ref: Option<T>,
        plant: &ArmPlant<T>,
        opts: &ControlOptions,
    ) -> (T, Vec<T>, Completion<T>) {
        let trace = self.decoder.forward_trace(z);
        let o = self.denormalize(trace.output());
        let pred = self.split(&o);
        let (nj, nm) = (self.n_joints, self.n_muscles);
        let (w_f, w_floor, floor) = (c::<T>(opts.w_f), c::<T>(opts.w_floor), c::<T>(opts.f_floor));
        let two = c::<T>(2.0);
        let mut d = vec![T::zero(); o.len()];
        let mut loss = T::zero();
        for j in 0..nj {
            let e = pred.theta[j] - theta_ref[j];
            loss = loss + e * e;
            d[j] = two * e;
        }
        for i in 0..nm {
            let f = pred.f[i];
            let short = (floor - f).max(T::zero());
            loss = loss + w_f * f * f + w_floor * short * short;
            d[nj + i] = two * w_f * f - two * w_floor * short;
        }
        if let Some(k_ref) = k_ref {
            let g = plant.moment_arm_matrix(theta_ref);
            let eps2 = c::<T>(1e-6);
            let w_k = c::<T>(opts.w_k);
            let half = c::<T>(0.5);
            let mut kk = vec![T::zero(); nm];
            let mut dkk = vec![T::zero(); nm];
            for i in 0..nm {
                let f = pred.f[i];
                let root = (f * f + eps2).sqrt();
                let fp = half * (f + root);
                let ki = plant.elastic_k[i];
                kk[i] = two * (ki * fp).sqrt();
                dkk[i] = ki.sqrt() / fp.sqrt() * half * (T::one() + f / root);
            }
            for j in 0..nj {
                let kj: T = (0..nm).map(|i| g[(i, j)] * g[(i, j)] * kk[i]).sum();
                let e = kj - k_ref;
                loss = loss + w_k * e * e;
                for i in 0..nm {
                    d[nj + i] = d[nj + i] + two * w_k * e * g[(i, j)] * g[(i, j)] * dkk[i];
                }
            }
        }
        let dn: Vec<T> = d.iter().zip(&self.norm.std).map(|(&a, &s)| a * s).collect();
        let grad = self.decoder.backward(&trace, &dn, None);
        (loss, grad, pred)
    }

    /// Latent-space gradient descent with backtracking: the step halves on
    /// any increase and grows by 1.2 after each accepted step.
    pub fn solve_control(
        &self,
        plant: &ArmPlant<T>,
        theta_ref: &[T],
        k_ref: Option<T>,
        current: &SensorTriple<T>,
        opts: &ControlOptions,
    ) -> Result<ControlResult<T>> {
        if opts.iters == 0 {
            return usage("solve_control needs iters >= 1");
        }
        if theta_ref.len() != self.n_joints || plant.n_muscles != self.n_muscles {
            return usage("theta_ref or plant does not match the network");
        }
        if !plant.within_limits(theta_ref) {
            return Err(Error::Domain(format!("theta_ref {theta_ref:?} outside the workspace")));
        }
        let start = SensorTriple {
            theta: theta_ref.to_vec(),
            f: current.f.clone(),
            l: vec![T::zero(); self.n_muscles],
            mask: [1, 1, 0],
        };
        let mut z = self.encode(&start)?;
        let (mut loss, mut grad, mut pred) = self.control_loss_grad(&z, theta_ref, k_ref, plant, opts);
        if !loss.is_finite() {
            return Err(Error::Optimization { iteration: 0 });
        }
        let mut history = vec![loss];
        let mut step = c::<T>(opts.step);
        let tiny = c::<T>(1e-12);
        for it in 0..opts.iters {
            let mut accepted = false;
            while step > tiny {
                let trial: Vec<T> = z.iter().zip(&grad).map(|(&a, &g)| a - step * g).collect();
                let (l2, g2, p2) = self.control_loss_grad(&trial, theta_ref, k_ref, plant, opts);
                if !l2.is_finite() {
                    return Err(Error::Optimization { iteration: it + 1 });
                }
                if l2 <= loss {
                    z = trial;
                    loss = l2;
                    grad = g2;
                    pred = p2;
                    accepted = true;
                    break;
                }
                step = step * c(0.5);
            }
            if !accepted {
                break;
            }
            history.push(loss);
            step = step * c(1.2);
        }
        Ok(ControlResult { l_ref: pred.l.clone(), prediction: pred, z, loss_history: history })
    }

    /// Adds `n_new` muscles: new input columns and output rows get small
    /// random weights, everything else is copied. With the new channels fed
    /// zeros the old outputs are unchanged.
    pub fn grow_dimensions(&self, n_new: usize, seed: u64) -> Result<Self> {
        if n_new == 0 {
            return usage("grow_dimensions needs at least one new muscle");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (nj, nm) = (self.n_joints, self.n_muscles);
        let nm2 = nm + n_new;
        let d2 = nj + 2 * nm2;
        // old channel index -> new channel index
        let map = |k: usize| -> usize {
            if k < nj + nm {
                k
            } else if k < nj + 2 * nm {
                k + n_new
            } else {
                k + 2 * n_new
            }
        };
        let small = 0.01;

        let mut encoder = self.encoder.clone();
        let first = &self.encoder.layers[0];
        let mut w = Mat::zeros(first.n_out(), d2 + 3);
        for r in 0..first.n_out() {
            for col in 0..d2 + 3 {
                w[(r, col)] = c(rng.gen_range(-small..=small));
            }
            for k in 0..first.n_in() {
                w[(r, map(k))] = first.w[(r, k)];
            }
        }
        encoder.layers[0] = Dense { w, b: first.b.clone() };

        let mut decoder = self.decoder.clone();
        let last_idx = decoder.layers.len() - 1;
        let last = &self.decoder.layers[last_idx];
        let mut w = Mat::zeros(d2, last.n_in());
        let mut b = vec![T::zero(); d2];
        for r in 0..d2 {
            for col in 0..last.n_in() {
                w[(r, col)] = c(rng.gen_range(-small..=small));
            }
        }
        for k in 0..last.n_out() {
            w.row_mut(map(k)).copy_from_slice(last.w.row(k));
            b[map(k)] = last.b[k];
        }
        decoder.layers[last_idx] = Dense { w, b };

        let avg = |v: &[T], range: std::ops::Range<usize>| {
            let n = c::<T>(range.len() as f64);
            v[range].iter().copied().sum::<T>() / n
        };
        let mut mean = vec![T::zero(); d2];
        let mut std = vec![T::one(); d2];
        for k in 0..nj + 2 * nm {
            mean[map(k)] = self.norm.mean[k];
            std[map(k)] = self.norm.std[k];
        }
        for i in 0..n_new {
            mean[nj + nm + i] = avg(&self.norm.mean, nj..nj + nm);
            std[nj + nm + i] = avg(&self.norm.std, nj..nj + nm);
            mean[nj + 2 * nm + n_new + i] = avg(&self.norm.mean, nj + nm..nj + 2 * nm);
            std[nj + 2 * nm + n_new + i] = avg(&self.norm.std, nj + nm..nj + 2 * nm);
        }
        Ok(Self { n_joints: nj, n_muscles: nm2, encoder, decoder, norm: Normalization { mean, std } })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut blocks = Vec::new();
        let biases: Vec<Mat<T>> = self
            .encoder
            .layers
            .iter()
            .chain(&self.decoder.layers)
            .map(|l| Mat::from_vec(1, l.b.len(), l.b.clone()))
            .collect();
        for (k, l) in self.encoder.layers.iter().chain(&self.decoder.layers).enumerate() {
            blocks.push(&l.w);
            blocks.push(&biases[k]);
        }
        let meta = StaticMeta {
            n_joints: self.n_joints,
            n_muscles: self.n_muscles,
            encoder_sizes: self.encoder.sizes(),
            decoder_sizes: self.decoder.sizes(),
            activation: self.encoder.hidden,
            mean: self.norm.mean.iter().map(|v| v.to_f64_lossy()).collect(),
            std: self.norm.std.iter().map(|v| v.to_f64_lossy()).collect(),
        };
        persist::save(path, KIND_STATIC, &blocks, &meta)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (blocks, meta): (Vec<Mat<T>>, StaticMeta) = persist::load(path, KIND_STATIC)?;
        let ne = meta.encoder_sizes.len().saturating_sub(1);
        let nd = meta.decoder_sizes.len().saturating_sub(1);
        if blocks.len() != 2 * (ne + nd) {
            return Err(Error::Format { offset: 8, msg: "block count does not match the sidecar".into() });
        }
        let mut layers = Vec::new();
        for pair in blocks.chunks(2) {
            layers.push(Dense { w: pair[0].clone(), b: pair[1].as_slice().to_vec() });
        }
        let decoder_layers = layers.split_off(ne);
        let net = Self {
            n_joints: meta.n_joints,
            n_muscles: meta.n_muscles,
            encoder: Mlp { layers, hidden: meta.activation },
            decoder: Mlp { layers: decoder_layers, hidden: meta.activation },
            norm: Normalization {
                mean: meta.mean.iter().map(|&v| c(v)).collect(),
                std: meta.std.iter().map(|&v| c(v)).collect(),
            },
        };
        if net.encoder.sizes() != meta.encoder_sizes || net.decoder.sizes() != meta.decoder_sizes {
            return Err(Error::Format { offset: 12, msg: "block shapes do not match the sidecar".into() });
        }
        Ok(net)
    }
}

/// Sum of tensions above the least-tension distribution that holds the same
/// posture: a plant-side measure of co-contraction.
pub fn cocontraction<T: Real>(plant: &ArmPlant<T>, theta: &[T], f: &[T]) -> Result<T> {
    let tau_nec: Vec<T> = plant.gravity_torque(theta, T::zero()).into_iter().map(|v| -v).collect();
    let g = plant.moment_arm_matrix(theta);
    let least = distribute_tension(&g, &tau_nec, &vec![T::zero(); plant.n_muscles])?;
    Ok(f.iter().copied().sum::<T>() - least.iter().copied().sum::<T>())
}
