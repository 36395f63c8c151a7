//! Recurrent dynamic body schema with parametric bias.
//!
//! `s_{t+1} = s_t + W_o h_{t+1} + b_o`, `h_{t+1} = GRU([s_t, u_t, p], h_t)`,
//! everything in per-channel normalised units. The parametric bias `p` is a
//! small constant input that absorbs what differs between objects; at run
//! time only `p` is adapted.

mod swing;

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};
use crate::linalg::Mat;
use crate::nn::persist::{self, KIND_DYNAMIC};
use crate::nn::{Adam, Dense, Gru, GruStep, Parameters};
use crate::scalar::{c, Real};
use crate::static_schema::Normalization;

pub use swing::{
    swing_dataset, CompareOptions, RefineOptions, Refinement, StiffnessComparison, SwingConfig, SwingRollout,
    SwingTask, CONTROL_DIM, STATE_DIM, TIP_VELOCITY,
};

/// One recorded sequence: `s` has one more entry than `u`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory<T> {
    pub object_id: u32,
    pub s: Vec<Vec<T>>,
    pub u: Vec<Vec<T>>,
}

impl<T: Real> Trajectory<T> {
    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    /// Steps `start..start + len` as a trajectory of their own.
    pub fn window(&self, start: usize, len: usize) -> Self {
        Self {
            object_id: self.object_id,
            s: self.s[start..=start + len].to_vec(),
            u: self.u[start..start + len].to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynConfig {
    pub hidden: usize,
    pub pb_dim: usize,
    pub epochs: usize,
    pub lr: f64,
    pub pb_lr: f64,
    pub pb_decay: f64,
    pub batch: usize,
    /// Training windows: each visit to a trajectory uses a random slice of
    /// this many steps, starting from a zero hidden state (0: whole sequence).
    pub window: usize,
    /// Every `holdout_every`-th trajectory is held out (0 disables).
    pub holdout_every: usize,
}

impl Default for DynConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            pb_dim: 2,
            epochs: 600,
            lr: 3e-3,
            pb_lr: 3.0,
            pb_decay: 1e-3,
            batch: 8,
            window: 10,
            holdout_every: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynTrainReport {
    pub loss_history: Vec<f64>,
    /// Trained bias of every training trajectory, with its object id.
    pub trajectory_pb: Vec<(u32, Vec<f64>)>,
    pub train_indices: Vec<usize>,
    pub holdout_indices: Vec<usize>,
}

/// Squared-error target on selected state channels (raw units).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Goal<T> {
    pub channels: Vec<usize>,
    pub target: Vec<T>,
    /// Rollout step the target applies to (1-based); `None` means the last one.
    pub step: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanOptions<T> {
    pub knot_every: usize,
    pub iters: usize,
    /// Initial step size γ.
    pub gamma: T,
    /// Weight on squared control increments.
    pub w_u: T,
    pub lower: Vec<T>,
    pub upper: Vec<T>,
    /// Control channels held at their initial knot values.
    pub frozen: Vec<usize>,
}

/// Result of [`DynamicsNet::optimize_controls`].
#[derive(Clone, Debug, PartialEq)]
pub struct Plan<T> {
    pub knots: Vec<Vec<T>>,
    pub u: Vec<Vec<T>>,
    /// Loss after every accepted step, starting with the initial loss.
    pub loss_history: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DynamicsNet<T> {
    pub cell: Gru<T>,
    pub out: Dense<T>,
    pub s_dim: usize,
    pub u_dim: usize,
    pub pb_dim: usize,
    pub s_norm: Normalization<T>,
    pub u_norm: Normalization<T>,
    /// Mean trained bias per object id.
    pub pb_table: BTreeMap<u32, Vec<T>>,
    /// Training window length; online recognition scores windows in chunks
    /// of this size, each from a zero hidden state (0: no chunking).
    pub window: usize,
    /// Weight of the `‖p‖²` prior, in training and recognition alike.
    pub pb_decay: f64,
}

struct Forward<T> {
    steps: Vec<GruStep<T>>,
    preds: Vec<Vec<T>>,
}

struct Backward<T> {
    du: Vec<Vec<T>>,
    dp: Vec<T>,
}

#[derive(Serialize, Deserialize)]
struct DynMeta {
    s_dim: usize,
    u_dim: usize,
    pb_dim: usize,
    hidden: usize,
    s_mean: Vec<f64>,
    s_std: Vec<f64>,
    u_mean: Vec<f64>,
    u_std: Vec<f64>,
    pb_table: BTreeMap<u32, Vec<f64>>,
    window: usize,
    pb_decay: f64,
}

/// Control sequence of length `horizon` linearly interpolated between knots
/// placed every `every` steps.
pub fn interpolate_knots<T: Real>(knots: &[Vec<T>], every: usize, horizon: usize) -> Vec<Vec<T>> {
    (0..horizon)
        .map(|t| {
            let (i, a) = knot_weights(t, every, knots.len());
            let j = (i + 1).min(knots.len() - 1);
            knots[i].iter().zip(&knots[j]).map(|(&x, &y)| (T::one() - a) * x + a * y).collect()
        })
        .collect()
}

fn knot_weights<T: Real>(t: usize, every: usize, n_knots: usize) -> (usize, T) {
    let i = (t / every).min(n_knots - 1);
    (i, c::<T>((t % every) as f64 / every as f64))
}

pub fn knot_count(horizon: usize, every: usize) -> usize {
    horizon.div_ceil(every) + 1
}

impl<T: Real> DynamicsNet<T> {
    pub fn new(s_dim: usize, u_dim: usize, hidden: usize, pb_dim: usize, rng: &mut impl rand::Rng) -> Self {
        Self {
            cell: Gru::new(s_dim + u_dim + pb_dim, hidden, rng),
            out: Dense::new(hidden, s_dim, rng),
            s_dim,
            u_dim,
            pb_dim,
            s_norm: Normalization { mean: vec![T::zero(); s_dim], std: vec![T::one(); s_dim] },
            u_norm: Normalization { mean: vec![T::zero(); u_dim], std: vec![T::one(); u_dim] },
            pb_table: BTreeMap::new(),
            window: 0,
            pb_decay: 0.0,
        }
    }

    pub fn hidden(&self) -> usize {
        self.cell.hidden()
    }

    /// All recurrent and output weights, flattened (everything `p` is not).
    pub fn weights(&self) -> Vec<T> {
        let mut w = self.cell.flat();
        w.extend(self.out.w.as_slice());
        w.extend(&self.out.b);
        w
    }

    fn check_p(&self, p: &[T]) -> Result<()> {
        if p.len() != self.pb_dim {
            return usage(format!("parametric bias has {} entries, expected {}", p.len(), self.pb_dim));
        }
        Ok(())
    }

    /// Runs the cell on normalised data. With `teacher` the recorded states
    /// are fed back; otherwise the predictions are.
    fn run(&self, s0: &[T], u: &[Vec<T>], p: &[T], teacher: Option<&[Vec<T>]>) -> Forward<T> {
        let mut h = vec![T::zero(); self.hidden()];
        let mut s = s0.to_vec();
        let mut steps = Vec::with_capacity(u.len());
        let mut preds = Vec::with_capacity(u.len());
        for (t, ut) in u.iter().enumerate() {
            let x: Vec<T> = s.iter().chain(ut).chain(p).copied().collect();
            let step = self.cell.step(&x, &h);
            let delta = self.out.forward(&step.h);
            let next: Vec<T> = s.iter().zip(&delta).map(|(&a, &b)| a + b).collect();
            h = step.h.clone();
            steps.push(step);
            s = match teacher {
                Some(data) => data[t + 1].clone(),
                None => next.clone(),
            };
            preds.push(next);
        }
        Forward { steps, preds }
    }

    /// Backpropagates `d_preds` (gradient per prediction). In free-running
    /// mode the gradient also flows through the fed-back states.
    fn backward(
        &self,
        fwd: &Forward<T>,
        d_preds: &[Vec<T>],
        free_running: bool,
        mut grads: Option<(&mut Gru<T>, &mut Dense<T>)>,
    ) -> Backward<T> {
        let (ds, du) = (self.s_dim, self.u_dim);
        let n = fwd.steps.len();
        let mut dh_next = vec![T::zero(); self.hidden()];
        let mut ds_carry = vec![T::zero(); ds];
        let mut du_all = vec![vec![T::zero(); du]; n];
        let mut dp = vec![T::zero(); self.pb_dim];
        for t in (0..n).rev() {
            let mut dpred = d_preds[t].clone();
            if free_running {
                for (a, &b) in dpred.iter_mut().zip(&ds_carry) {
                    *a = *a + b;
                }
            }
            let step = &fwd.steps[t];
            if let Some((_, gout)) = grads.as_mut() {
                for (r, &d) in dpred.iter().enumerate() {
                    gout.b[r] = gout.b[r] + d;
                    for (w, &hv) in gout.w.row_mut(r).iter_mut().zip(&step.h) {
                        *w = *w + d * hv;
                    }
                }
            }
            let back = self.out.w.tr_matvec(&dpred);
            let dh: Vec<T> = dh_next.iter().zip(&back).map(|(&a, &b)| a + b).collect();
            let (dx, dh_prev) = self.cell.step_backward(step, &dh, grads.as_mut().map(|g| &mut *g.0));
            dh_next = dh_prev;
            du_all[t] = dx[ds..ds + du].to_vec();
            for (a, &b) in dp.iter_mut().zip(&dx[ds + du..]) {
                *a = *a + b;
            }
            ds_carry = dpred.iter().zip(&dx[..ds]).map(|(&a, &b)| a + b).collect();
        }
        Backward { du: du_all, dp }
    }

    fn normalized(&self, traj: &Trajectory<T>) -> (Vec<Vec<T>>, Vec<Vec<T>>) {
        (traj.s.iter().map(|s| self.s_norm.apply(s)).collect(), traj.u.iter().map(|u| self.u_norm.apply(u)).collect())
    }

    /// Mean squared one-step error (normalised units) with teacher forcing.
    pub fn one_step_mse(&self, traj: &Trajectory<T>, p: &[T]) -> f64 {
        let (sn, un) = self.normalized(traj);
        let fwd = self.run(&sn[0], &un, p, Some(&sn));
        let mut se = 0.0;
        for (t, pred) in fwd.preds.iter().enumerate() {
            for (a, b) in pred.iter().zip(&sn[t + 1]) {
                se += (*a - *b).to_f64_lossy().powi(2);
            }
        }
        se / (fwd.preds.len() * self.s_dim).max(1) as f64
    }

    /// Root of the pooled one-step error over `trajs`, each using its
    /// object's table entry.
    pub fn one_step_rmse(&self, trajs: &[Trajectory<T>]) -> Result<f64> {
        let mut total = 0.0;
        for tr in trajs {
            let p = self.pb_for(tr.object_id)?;
            total += self.one_step_mse(tr, &p);
        }
        Ok((total / trajs.len().max(1) as f64).sqrt())
    }

    pub fn pb_for(&self, object_id: u32) -> Result<Vec<T>> {
        self.pb_table
            .get(&object_id)
            .cloned()
            .ok_or_else(|| Error::Usage(format!("no parametric bias recorded for object {object_id}")))
    }

    /// Trains weights and one bias per trajectory jointly, then averages the
    /// biases per object into the table.
    pub fn train(trajs: &[Trajectory<T>], cfg: &DynConfig, seed: u64) -> Result<(Self, DynTrainReport)> {
        let mut ids: Vec<u32> = trajs.iter().map(|t| t.object_id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() < 2 {
            return usage("training needs trajectories from at least two objects");
        }
        if trajs.iter().any(|t| t.len() < 20 || t.s.len() != t.u.len() + 1) {
            return usage("every trajectory needs at least 20 steps and one more state than controls");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s_dim = trajs[0].s[0].len();
        let u_dim = trajs[0].u[0].len();
        let mut net = Self::new(s_dim, u_dim, cfg.hidden, cfg.pb_dim, &mut rng);
        net.window = cfg.window;
        net.pb_decay = cfg.pb_decay;
        let (train_idx, hold_idx): (Vec<usize>, Vec<usize>) =
            (0..trajs.len()).partition(|&i| cfg.holdout_every == 0 || i % cfg.holdout_every != cfg.holdout_every - 1);
        let all_s: Vec<Vec<T>> = train_idx.iter().flat_map(|&i| trajs[i].s.clone()).collect();
        let all_u: Vec<Vec<T>> = train_idx.iter().flat_map(|&i| trajs[i].u.clone()).collect();
        net.s_norm = Normalization::fit(&all_s);
        net.u_norm = Normalization::fit(&all_u);
        let data: Vec<_> = train_idx.iter().map(|&i| net.normalized(&trajs[i])).collect();

        let mut pbs = vec![T::zero(); train_idx.len() * cfg.pb_dim];
        let mut opt = Adam::new(c::<T>(cfg.lr));
        let mut g_cell = net.cell.zeros_like();
        let mut g_out = Dense::zeros(net.hidden(), s_dim);
        let mut order: Vec<usize> = (0..train_idx.len()).collect();
        let mut history = Vec::with_capacity(cfg.epochs);
        for epoch in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for chunk in order.chunks(cfg.batch.max(1)) {
                g_cell.fill_zero();
                g_out.w.as_mut_slice().iter_mut().for_each(|v| *v = T::zero());
                g_out.b.iter_mut().for_each(|v| *v = T::zero());
                let mut g_pb = vec![T::zero(); pbs.len()];
                for &k in chunk {
                    let (sn, un) = &data[k];
                    let (sn, un) = if cfg.window > 0 && un.len() > cfg.window {
                        let start = rng.gen_range(0..=un.len() - cfg.window);
                        (&sn[start..=start + cfg.window], &un[start..start + cfg.window])
                    } else {
                        (&sn[..], &un[..])
                    };
                    let p = &pbs[k * cfg.pb_dim..(k + 1) * cfg.pb_dim];
                    let fwd = net.run(&sn[0], un, p, Some(sn));
                    let scale = c::<T>(2.0 / (un.len() * s_dim * chunk.len()) as f64);
                    let mut loss = 0.0;
                    let d: Vec<Vec<T>> = fwd
                        .preds
                        .iter()
                        .zip(&sn[1..])
                        .map(|(pr, tg)| {
                            pr.iter()
                                .zip(tg)
                                .map(|(&a, &b)| {
                                    loss += (a - b).to_f64_lossy().powi(2);
                                    (a - b) * scale
                                })
                                .collect()
                        })
                        .collect();
                    total += loss / (un.len() * s_dim) as f64;
                    let back = net.backward(&fwd, &d, false, Some((&mut g_cell, &mut g_out)));
                    let decay = c::<T>(2.0 * cfg.pb_decay / chunk.len() as f64);
                    for (j, &g) in back.dp.iter().enumerate() {
                        g_pb[k * cfg.pb_dim + j] = g + decay * p[j];
                    }
                }
                let mut params = net.cell.slices_mut();
                params.push(net.out.w.as_mut_slice());
                params.push(&mut net.out.b);
                let mut grads = g_cell.slices();
                grads.push(g_out.w.as_slice());
                grads.push(&g_out.b);
                opt.step(params, grads);
                let pb_rate = c::<T>(cfg.pb_lr * chunk.len() as f64);
                for (a, &g) in pbs.iter_mut().zip(&g_pb) {
                    *a = *a - pb_rate * g;
                }
            }
            let mean = total / train_idx.len() as f64;
            if !mean.is_finite() {
                return Err(Error::Training { epoch });
            }
            history.push(mean);
        }

        let mut sums: BTreeMap<u32, (Vec<T>, usize)> = BTreeMap::new();
        let mut trajectory_pb = Vec::new();
        for (k, &i) in train_idx.iter().enumerate() {
            let p = &pbs[k * cfg.pb_dim..(k + 1) * cfg.pb_dim];
            let e = sums.entry(trajs[i].object_id).or_insert((vec![T::zero(); cfg.pb_dim], 0));
            for (a, &b) in e.0.iter_mut().zip(p) {
                *a = *a + b;
            }
            e.1 += 1;
            trajectory_pb.push((trajs[i].object_id, p.iter().map(|v| v.to_f64_lossy()).collect()));
        }
        net.pb_table =
            sums.into_iter().map(|(id, (s, n))| (id, s.into_iter().map(|v| v / c(n as f64)).collect())).collect();
        let report = DynTrainReport {
            loss_history: history,
            trajectory_pb,
            train_indices: train_idx,
            holdout_indices: hold_idx,
        };
        Ok((net, report))
    }

    /// Recognises the current object: gradient descent on `p` alone over the
    /// one-step error of `window`, halving the rate whenever the loss would
    /// rise. Returns the new bias and the loss after every iteration.
    pub fn update_pb_online(
        &self,
        window: &Trajectory<T>,
        p0: &[T],
        iters: usize,
        rate: T,
    ) -> Result<(Vec<T>, Vec<f64>)> {
        self.check_p(p0)?;
        if window.len() < 5 {
            return usage("online recognition needs a window of at least 5 steps");
        }
        let (sn, un) = self.normalized(window);
        let chunk = if self.window > 0 { self.window } else { un.len() };
        let scale = c::<T>(2.0 / (un.len() * self.s_dim) as f64);
        let eval = |p: &[T]| -> (f64, Vec<T>) {
            let mut loss = 0.0;
            let mut dp = vec![T::zero(); self.pb_dim];
            for start in (0..un.len()).step_by(chunk) {
                let end = (start + chunk).min(un.len());
                let fwd = self.run(&sn[start], &un[start..end], p, Some(&sn[start..=end]));
                let d: Vec<Vec<T>> = fwd
                    .preds
                    .iter()
                    .zip(&sn[start + 1..=end])
                    .map(|(pr, tg)| {
                        pr.iter()
                            .zip(tg)
                            .map(|(&a, &b)| {
                                loss += (a - b).to_f64_lossy().powi(2);
                                (a - b) * scale
                            })
                            .collect()
                    })
                    .collect();
                for (a, &b) in dp.iter_mut().zip(&self.backward(&fwd, &d, false, None).dp) {
                    *a = *a + b;
                }
            }
            let mut loss = loss / (un.len() * self.s_dim) as f64;
            let decay = c::<T>(self.pb_decay);
            for (a, &b) in dp.iter_mut().zip(p) {
                *a = *a + c::<T>(2.0) * decay * b;
                loss += (decay * b * b).to_f64_lossy();
            }
            (loss, dp)
        };
        let mut p = p0.to_vec();
        let (mut loss, mut grad) = eval(&p);
        let mut history = vec![loss];
        let mut step = rate;
        for _ in 0..iters {
            loop {
                let trial: Vec<T> = p.iter().zip(&grad).map(|(&a, &g)| a - step * g).collect();
                let (l2, g2) = eval(&trial);
                if l2 <= loss {
                    p = trial;
                    loss = l2;
                    grad = g2;
                    break;
                }
                step = step / c(2.0);
                if step < c(1e-12) {
                    break;
                }
            }
            history.push(loss);
        }
        Ok((p, history))
    }

    /// Free-running prediction in raw units; the result starts with `s0`.
    pub fn predict_rollout(&self, s0: &[T], u_seq: &[Vec<T>], p: &[T]) -> Result<Vec<Vec<T>>> {
        self.check_p(p)?;
        let un: Vec<Vec<T>> = u_seq.iter().map(|u| self.u_norm.apply(u)).collect();
        let fwd = self.run(&self.s_norm.apply(s0), &un, p, None);
        let mut out = vec![s0.to_vec()];
        out.extend(fwd.preds.iter().map(|s| self.s_norm.invert(s)));
        Ok(out)
    }

    /// Planning loss `Σ (s_goal − target)² + w_u Σ ‖u_t − u_{t−1}‖²` and its
    /// gradient with respect to every control in `u_seq` (raw units).
    /// `u_prev` is the control applied before the sequence starts.
    pub fn loss_and_grad(
        &self,
        s0: &[T],
        u_prev: &[T],
        u_seq: &[Vec<T>],
        p: &[T],
        goal: &Goal<T>,
        w_u: T,
    ) -> Result<(T, Vec<Vec<T>>)> {
        self.check_p(p)?;
        let n = u_seq.len();
        if n == 0 {
            return usage("empty control sequence");
        }
        let at = goal.step.unwrap_or(n);
        if at == 0 || at > n || goal.channels.len() != goal.target.len() {
            return usage("goal step or channels are inconsistent");
        }
        let un: Vec<Vec<T>> = u_seq.iter().map(|u| self.u_norm.apply(u)).collect();
        let fwd = self.run(&self.s_norm.apply(s0), &un, p, None);
        let mut loss = T::zero();
        let mut d = vec![vec![T::zero(); self.s_dim]; n];
        let pred = self.s_norm.invert(&fwd.preds[at - 1]);
        for (&ch, &tg) in goal.channels.iter().zip(&goal.target) {
            let e = pred[ch] - tg;
            loss = loss + e * e;
            d[at - 1][ch] = c::<T>(2.0) * e * self.s_norm.std[ch];
        }
        let back = self.backward(&fwd, &d, true, None);
        let mut grad: Vec<Vec<T>> =
            back.du.iter().map(|g| g.iter().zip(&self.u_norm.std).map(|(&a, &s)| a / s).collect()).collect();
        for t in 0..n {
            let prev = if t == 0 { u_prev } else { &u_seq[t - 1] };
            for k in 0..self.u_dim {
                let e = u_seq[t][k] - prev[k];
                loss = loss + w_u * e * e;
                grad[t][k] = grad[t][k] + c::<T>(2.0) * w_u * e;
                if t > 0 {
                    grad[t - 1][k] = grad[t - 1][k] - c::<T>(2.0) * w_u * e;
                }
            }
        }
        if !loss.is_finite() {
            return Err(Error::Optimization { iteration: 0 });
        }
        Ok((loss, grad))
    }

    /// [`Self::loss_and_grad`] for a knot parameterisation: the gradient is
    /// taken with respect to every knot. `knots[0]` doubles as the control
    /// in force before the sequence.
    pub fn knot_loss_grad(
        &self,
        s0: &[T],
        knots: &[Vec<T>],
        p: &[T],
        goal: &Goal<T>,
        horizon: usize,
        opts: &PlanOptions<T>,
    ) -> Result<(T, Vec<Vec<T>>)> {
        let u = interpolate_knots(knots, opts.knot_every, horizon);
        let (loss, gu) = self.loss_and_grad(s0, &knots[0], &u, p, goal, opts.w_u)?;
        let mut gk = vec![vec![T::zero(); self.u_dim]; knots.len()];
        for (t, g) in gu.iter().enumerate() {
            let (i, a) = knot_weights::<T>(t, opts.knot_every, knots.len());
            let j = (i + 1).min(knots.len() - 1);
            for k in 0..self.u_dim {
                gk[i][k] = gk[i][k] + (T::one() - a) * g[k];
                gk[j][k] = gk[j][k] + a * g[k];
            }
        }
        Ok((loss, gk))
    }

    /// Projected gradient descent on control knots with backtracking: the
    /// first knot (the control in force now) and the `frozen` channels stay
    /// put, every step is projected onto `[lower, upper]`, and a step is only
    /// taken if it does not raise the loss.
    pub fn optimize_controls(
        &self,
        s0: &[T],
        goal: &Goal<T>,
        p: &[T],
        horizon: usize,
        init_knots: Vec<Vec<T>>,
        opts: &PlanOptions<T>,
    ) -> Result<Plan<T>> {
        if horizon == 0 {
            return usage("horizon must be at least 1");
        }
        if init_knots.len() != knot_count(horizon, opts.knot_every) || init_knots.iter().any(|k| k.len() != self.u_dim)
        {
            return usage(format!("expected {} knots of size {}", knot_count(horizon, opts.knot_every), self.u_dim));
        }
        let project = |k: &mut Vec<T>| {
            for (i, v) in k.iter_mut().enumerate() {
                *v = v.max(opts.lower[i]).min(opts.upper[i]);
            }
        };
        let mut knots = init_knots;
        knots.iter_mut().skip(1).for_each(project);
        let (mut loss, mut grad) = self.knot_loss_grad(s0, &knots, p, goal, horizon, opts)?;
        let mut history = vec![loss];
        let mut gamma = opts.gamma;
        for iteration in 0..opts.iters {
            for g in grad.iter_mut() {
                for &ch in &opts.frozen {
                    g[ch] = T::zero();
                }
            }
            let mut accepted = false;
            while gamma > c(1e-10) {
                let mut trial = knots.clone();
                for (k, g) in trial.iter_mut().zip(&grad).skip(1) {
                    for (v, &gv) in k.iter_mut().zip(g) {
                        *v = *v - gamma * gv;
                    }
                    project(k);
                }
                let (l2, g2) = match self.knot_loss_grad(s0, &trial, p, goal, horizon, opts) {
                    Ok(v) => v,
                    Err(Error::Optimization { .. }) => return Err(Error::Optimization { iteration }),
                    Err(e) => return Err(e),
                };
                if l2 <= loss {
                    knots = trial;
                    loss = l2;
                    grad = g2;
                    accepted = true;
                    gamma = gamma * c(1.5);
                    break;
                }
                gamma = gamma / c(2.0);
            }
            if !accepted {
                break;
            }
            history.push(loss);
        }
        let u = interpolate_knots(&knots, opts.knot_every, horizon);
        Ok(Plan { knots, u, loss_history: history })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let cell_b = [
            Mat::from_vec(1, self.cell.bi.len(), self.cell.bi.clone()),
            Mat::from_vec(1, self.cell.bh.len(), self.cell.bh.clone()),
        ];
        let out_b = Mat::from_vec(1, self.out.b.len(), self.out.b.clone());
        let blocks = [&self.cell.wi, &self.cell.wh, &cell_b[0], &cell_b[1], &self.out.w, &out_b];
        let f = |v: &[T]| v.iter().map(|x| x.to_f64_lossy()).collect::<Vec<f64>>();
        let meta = DynMeta {
            s_dim: self.s_dim,
            u_dim: self.u_dim,
            pb_dim: self.pb_dim,
            hidden: self.hidden(),
            s_mean: f(&self.s_norm.mean),
            s_std: f(&self.s_norm.std),
            u_mean: f(&self.u_norm.mean),
            u_std: f(&self.u_norm.std),
            pb_table: self.pb_table.iter().map(|(k, v)| (*k, f(v))).collect(),
            window: self.window,
            pb_decay: self.pb_decay,
        };
        persist::save(path, KIND_DYNAMIC, &blocks, &meta)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (mut blocks, meta): (Vec<Mat<T>>, DynMeta) = persist::load(path, KIND_DYNAMIC)?;
        if blocks.len() != 6 {
            return Err(Error::Format { offset: 8, msg: format!("expected 6 blocks, found {}", blocks.len()) });
        }
        let g = |v: &[f64]| v.iter().map(|&x| c::<T>(x)).collect::<Vec<T>>();
        let out_b = blocks.pop().unwrap().as_slice().to_vec();
        let out_w = blocks.pop().unwrap();
        let bh = blocks.pop().unwrap().as_slice().to_vec();
        let bi = blocks.pop().unwrap().as_slice().to_vec();
        let wh = blocks.pop().unwrap();
        let wi = blocks.pop().unwrap();
        let h = meta.hidden;
        if wi.rows() != 3 * h
            || wi.cols() != meta.s_dim + meta.u_dim + meta.pb_dim
            || wh.cols() != h
            || out_w.rows() != meta.s_dim
        {
            return Err(Error::Format { offset: 12, msg: "block shapes do not match the sidecar".into() });
        }
        Ok(Self {
            cell: Gru { wi, wh, bi, bh },
            out: Dense { w: out_w, b: out_b },
            s_dim: meta.s_dim,
            u_dim: meta.u_dim,
            pb_dim: meta.pb_dim,
            s_norm: Normalization { mean: g(&meta.s_mean), std: g(&meta.s_std) },
            u_norm: Normalization { mean: g(&meta.u_mean), std: g(&meta.u_std) },
            pb_table: meta.pb_table.iter().map(|(k, v)| (*k, g(v))).collect(),
            window: meta.window,
            pb_decay: meta.pb_decay,
        })
    }
}
