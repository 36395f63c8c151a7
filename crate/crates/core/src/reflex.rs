//! Reflex layer: muscle relaxation and motor thermal protection.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};
use crate::linalg::Mat;
use crate::plant::ArmPlant;
use crate::qp::{kkt_residual, solve_bounded_qp};
use crate::scalar::{c, Real};

/// `minimize xᵀW₁x + (Gᵀx + τ_nec)ᵀW₂(Gᵀx + τ_nec)` subject to `x ≥ f_min`.
/// `w1` and `w2` hold the diagonals.
#[derive(Clone, Debug, PartialEq)]
pub struct RelaxProblem<T> {
    pub tau_nec: Vec<T>,
    pub g: Mat<T>,
    pub f_min: Vec<T>,
    pub w1: Vec<T>,
    pub w2: Vec<T>,
}

impl<T: Real> RelaxProblem<T> {
    /// Problem for holding the plant's current posture against gravity and payload.
    pub fn for_posture(plant: &ArmPlant<T>, theta: &[T], f_min: T, w1: T, w2: T) -> Self {
        Self {
            tau_nec: plant.gravity_torque(theta, T::zero()).into_iter().map(|v| -v).collect(),
            g: plant.moment_arm_matrix(theta),
            f_min: vec![f_min; plant.n_muscles],
            w1: vec![w1; plant.n_muscles],
            w2: vec![w2; plant.n_joints],
        }
    }

    fn check(&self) -> Result<()> {
        let (m, n) = (self.g.rows(), self.g.cols());
        if self.tau_nec.len() != n || self.w2.len() != n || self.f_min.len() != m || self.w1.len() != m {
            return usage(format!(
                "relaxation problem dimensions disagree: G is {m}x{n}, tau {}, f_min {}, W1 {}, W2 {}",
                self.tau_nec.len(),
                self.f_min.len(),
                self.w1.len(),
                self.w2.len()
            ));
        }
        if self.w1.iter().chain(&self.w2).any(|&w| w <= T::zero()) || self.f_min.iter().any(|&f| f < T::zero()) {
            return Err(Error::Domain("weights must be positive and f_min non-negative".into()));
        }
        Ok(())
    }

    /// `(H, c)` of the equivalent `½xᵀHx + cᵀx`.
    pub fn quadratic_form(&self) -> (Mat<T>, Vec<T>) {
        let (m, n) = (self.g.rows(), self.g.cols());
        let two = c::<T>(2.0);
        let mut h = Mat::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                let mut s = T::zero();
                for k in 0..n {
                    s = s + self.g[(i, k)] * self.w2[k] * self.g[(j, k)];
                }
                h[(i, j)] = two * s;
            }
            h[(i, i)] = h[(i, i)] + two * self.w1[i];
        }
        let wt: Vec<T> = self.tau_nec.iter().zip(&self.w2).map(|(&t, &w)| two * t * w).collect();
        (h, self.g.matvec(&wt))
    }

    pub fn objective(&self, x: &[T]) -> T {
        let mut s = T::zero();
        for (i, &xi) in x.iter().enumerate() {
            s = s + self.w1[i] * xi * xi;
        }
        let r = self.g.tr_matvec(x);
        for k in 0..r.len() {
            let e = r[k] + self.tau_nec[k];
            s = s + self.w2[k] * e * e;
        }
        s
    }
}

/// Necessary tensions: the unique minimiser of the relaxation QP.
pub fn solve_necessary_tension<T: Real>(prob: &RelaxProblem<T>) -> Result<Vec<T>> {
    prob.check()?;
    let (h, lin) = prob.quadratic_form();
    Ok(solve_bounded_qp(&h, &lin, &prob.f_min)?.x)
}

/// KKT residual of `x` for `prob`, scaled by the size of the gradient terms.
pub fn relative_kkt_residual<T: Real>(prob: &RelaxProblem<T>, x: &[T]) -> T {
    let (h, lin) = prob.quadratic_form();
    let scale = T::one() + h.max_abs() * crate::linalg::norm_inf(x) + crate::linalg::norm_inf(&lin);
    kkt_residual(&h, &lin, &prob.f_min, x) / scale
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelaxOptions {
    /// Tension kept above `f_nec`, N.
    pub margin: f64,
    /// Lengthening per inner step, m.
    pub increment: f64,
    /// Largest allowed posture change per joint, rad.
    pub posture_tol: f64,
    pub max_sweeps: usize,
}

impl Default for RelaxOptions {
    fn default() -> Self {
        Self { margin: 2.0, increment: 5e-4, posture_tol: 0.02, max_sweeps: 60 }
    }
}

/// Length offsets (≥ 0) that slacken muscles in ascending order of necessary
/// tension without moving the posture by more than `posture_tol`.
///
/// `l_current` is the present length command and `theta` the posture it
/// holds. Each candidate offset is checked on the plant's quasi-static model;
/// steps that would move the posture or raise the total tension are refused.
/// Sweeps repeat until nothing more can be relaxed.
pub fn relax_step<T: Real>(
    plant: &ArmPlant<T>,
    theta: &[T],
    f_nec: &[T],
    f_current: &[T],
    l_current: &[T],
    opts: &RelaxOptions,
) -> Result<Vec<T>> {
    let m = plant.n_muscles;
    if f_nec.len() != m || f_current.len() != m || l_current.len() != m || theta.len() != plant.n_joints {
        return usage("relax_step vectors do not match the plant");
    }
    let margin = c::<T>(opts.margin);
    let inc = c::<T>(opts.increment);
    let tol = c::<T>(opts.posture_tol);
    let mut offsets = vec![T::zero(); m];
    if f_current.iter().zip(f_nec).all(|(&f, &n)| f <= n + margin) {
        return Ok(offsets);
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| f_nec[a].partial_cmp(&f_nec[b]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));

    let zero_ext = vec![T::zero(); plant.n_joints];
    let mut tensions = f_current.to_vec();
    let mut total: T = tensions.iter().copied().sum();
    let mut posture = theta.to_vec();
    for _ in 0..opts.max_sweeps {
        let mut moved = false;
        for &i in &order {
            while tensions[i] > f_nec[i] + margin {
                let mut trial = offsets.clone();
                trial[i] = trial[i] + inc;
                let cmd: Vec<T> = l_current.iter().zip(&trial).map(|(&l, &o)| l + o).collect();
                let Ok(eq) = plant.quasi_static_solve_from(&posture, &cmd, &zero_ext, T::zero()) else {
                    break;
                };
                let shifted = eq.theta.iter().zip(theta).any(|(&a, &b)| (a - b).abs() >= tol);
                let new_total: T = eq.tensions.iter().copied().sum();
                if shifted || new_total > total {
                    break;
                }
                offsets = trial;
                tensions = eq.tensions;
                total = new_total;
                posture = eq.theta;
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
    Ok(offsets)
}

/// Relaxation and variable-stiffness control fight over the same tensions,
/// so only one may be active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReflexMode {
    Relaxation,
    VariableStiffness,
}

impl ReflexMode {
    /// Rejects a stiffness target while relaxation is active.
    pub fn check_command<T>(self, k_ref: Option<T>) -> Result<()> {
        if self == ReflexMode::Relaxation && k_ref.is_some() {
            return usage("a stiffness target cannot be commanded while muscle relaxation is active");
        }
        Ok(())
    }
}

const MAX_LOG_STEP: f64 = 0.1;
// ln 1000
const MAX_LOG_DRIFT: f64 = 6.907_755_278_982_137;

/// Online two-node motor model.
///
/// ```text
/// ċ₁ = P₁ (P₅ I² − P₃ (c₁ − c₂))
/// ċ₂ = P₂ (P₃ (c₁ − c₂) − P₄ (c₂ − c_amb))
/// ```
///
/// `P = (1/C_core, 1/C_housing, K_core-housing, K_housing-ambient, R_winding)`,
/// kept in log space so it stays positive. Only `c₂` is measured; `c₁` is
/// estimated by integrating the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThermalParams<T> {
    pub log_p: [T; 5],
    pub c1_est: T,
    pub rated: T,
    pub ambient: T,
    /// Normalised step size of the parameter update.
    pub rate: T,
    /// Last measured housing temperature.
    pub c2_last: Option<T>,
    /// Last one-step prediction error `c₂_pred − c₂_meas`.
    pub last_error: T,
    sens: [T; 5],
    log_p0: [T; 5],
}

impl<T: Real> ThermalParams<T> {
    pub fn new(p: [T; 5], ambient: T, rated: T) -> Result<Self> {
        if p.iter().any(|&v| !(v > T::zero()) || !v.is_finite()) {
            return Err(Error::Domain("thermal parameters must be positive".into()));
        }
        let log_p = p.map(|v| v.ln());
        Ok(Self {
            log_p,
            log_p0: log_p,
            c1_est: ambient,
            rated,
            ambient,
            rate: c(0.05),
            c2_last: None,
            last_error: T::zero(),
            sens: [T::zero(); 5],
        })
    }

    pub fn p(&self) -> [T; 5] {
        self.log_p.map(|v| v.exp())
    }

    fn derivs(&self, c1: T, c2: T, current: T) -> (T, T) {
        let [a, b, k12, k2a, r] = self.p();
        let flow = k12 * (c1 - c2);
        (a * (r * current * current - flow), b * (flow - k2a * (c2 - self.ambient)))
    }

    /// Housing temperature the model predicts `dt` after the last measurement.
    pub fn predict_c2(&self, current: T, dt: T) -> Option<T> {
        self.c2_last.map(|c2| c2 + dt * self.derivs(self.c1_est, c2, current).1)
    }

    /// Feeds one housing measurement taken `dt` after the previous one, with
    /// `current` applied in between. Returns the prediction error.
    pub fn thermal_update(&mut self, c2_meas: T, current: T, dt: T) -> Result<T> {
        if !(dt > T::zero() && dt <= T::one()) {
            return Err(Error::Domain(format!("thermal dt must lie in (0, 1] s, got {}", dt.to_f64_lossy())));
        }
        if !c2_meas.is_finite() || !current.is_finite() {
            return Err(Error::Domain("non-finite thermal measurement".into()));
        }
        let Some(c2) = self.c2_last else {
            self.c2_last = Some(c2_meas);
            return Ok(T::zero());
        };
        let [a, b, k12, k2a, r] = self.p();
        let c1 = self.c1_est;
        let (d1, d2) = self.derivs(c1, c2, current);
        let e = c2 + dt * d2 - c2_meas;

        // ∂c₂_pred/∂log P, including the path through the c₁ estimate
        let mut g = [T::zero(); 5];
        g[1] = dt * d2;
        g[2] = dt * b * k12 * (c1 - c2);
        g[3] = -dt * b * k2a * (c2 - self.ambient);
        for (gi, &s) in g.iter_mut().zip(&self.sens) {
            *gi = *gi + dt * b * k12 * s;
        }

        let mut ds = [T::zero(); 5];
        ds[0] = dt * d1;
        ds[2] = -dt * a * k12 * (c1 - c2);
        ds[4] = dt * a * r * current * current;
        let decay = T::one() - dt * a * k12;
        for (s, d) in self.sens.iter_mut().zip(ds) {
            *s = *s * decay + d;
        }

        let floor = c2_meas.min(self.ambient) - T::one();
        self.c1_est = (c1 + dt * d1).max(floor);
        // each step is clipped, and the estimate may not drift more than a
        // factor 1000 from the prior, so wild measurements cannot overflow it
        let gg = g.iter().fold(c::<T>(1e-4), |s, &v| s + v * v);
        let (max_step, max_drift) = (c::<T>(MAX_LOG_STEP), c::<T>(MAX_LOG_DRIFT));
        for k in 0..5 {
            let step = (self.rate * e * g[k] / gg).max(-max_step).min(max_step);
            self.log_p[k] = (self.log_p[k] - step).max(self.log_p0[k] - max_drift).min(self.log_p0[k] + max_drift);
        }
        if self.sens.iter().any(|s| !s.is_finite()) {
            self.sens = [T::zero(); 5];
        }
        self.c2_last = Some(c2_meas);
        self.last_error = e;
        Ok(e)
    }

    /// Highest core temperature the model reaches within `horizon` seconds
    /// (1 s Euler steps) at constant `current`.
    pub fn peak_core(&self, c1: T, c2: T, current: T, horizon: T) -> T {
        let steps = horizon.ceil().to_f64_lossy().max(1.0) as usize;
        let dt = horizon / c(steps as f64);
        let (mut c1, mut c2, mut peak) = (c1, c2, c1);
        for _ in 0..steps {
            let (d1, d2) = self.derivs(c1, c2, current);
            c1 = c1 + dt * d1;
            c2 = c2 + dt * d2;
            peak = peak.max(c1);
        }
        peak
    }

    /// Largest constant current keeping the modelled core at or below the
    /// rated temperature over `horizon`, starting from `c1_est` and `c2`.
    pub fn thermal_limit(&self, c2: T, horizon: T) -> Result<T> {
        if !(self.rated > self.ambient) {
            return Err(Error::Domain("rated temperature must exceed ambient".into()));
        }
        if !(horizon > T::zero()) {
            return Err(Error::Domain("horizon must be positive".into()));
        }
        let slack = c::<T>(1e-9) * (T::one() + self.rated.abs());
        let ok = |i: T| self.peak_core(self.c1_est, c2, i, horizon) <= self.rated + slack;
        if !ok(T::zero()) {
            return Ok(T::zero());
        }
        let (mut lo, mut hi) = (T::zero(), T::one());
        while ok(hi) && hi < c(1e6) {
            lo = hi;
            hi = hi + hi;
        }
        for _ in 0..100 {
            let mid = (lo + hi) / c(2.0);
            if mid <= lo || mid >= hi {
                break;
            }
            if ok(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(lo)
    }

    /// Current that holds the modelled core exactly at `c1` with the housing at `c2`.
    pub fn holding_current(&self, c1: T, c2: T) -> T {
        let [_, _, k12, _, r] = self.p();
        (k12 * (c1 - c2) / r).max(T::zero()).sqrt()
    }
}

/// Appends thermal estimator snapshots as CSV rows
/// `time,p1,p2,p3,p4,p5,c1_est,c2,current`.
pub struct ThermalLog<W: Write> {
    writer: csv::Writer<W>,
}

impl<W: Write> ThermalLog<W> {
    pub fn new(inner: W) -> Result<Self> {
        let mut writer = csv::Writer::from_writer(inner);
        writer.write_record(["time", "p1", "p2", "p3", "p4", "p5", "c1_est", "c2", "current"])?;
        Ok(Self { writer })
    }

    pub fn record<T: Real>(&mut self, time: f64, params: &ThermalParams<T>, c2: T, current: T) -> Result<()> {
        let mut row = vec![time.to_string()];
        row.extend(params.p().iter().map(|v| v.to_f64_lossy().to_string()));
        row.push(params.c1_est.to_f64_lossy().to_string());
        row.push(c2.to_f64_lossy().to_string());
        row.push(current.to_f64_lossy().to_string());
        self.writer.write_record(&row)?;
        Ok(())
    }

    pub fn into_inner(self) -> Result<W> {
        self.writer.into_inner().map_err(|e| Error::Io(e.into_error()))
    }
}
