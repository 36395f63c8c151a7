//! The swing task: the arm holds a hanging object (pendulum or two-mass
//! chain) and moves it through posture and stiffness targets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{interpolate_knots, knot_count, DynamicsNet, Goal, PlanOptions, Trajectory};
use crate::error::{usage, Result};
use crate::plant::{step_dynamics, tip_direction, tip_point, ArmPlant, FlexibleObject, GeometricCommander, SimState};
use crate::scalar::{c, Real};

/// `[sin φ, −cos φ, φ̇ cos φ, φ̇ sin φ, ẋ, ẏ, f₁..f₄, l₁..l₄]`: direction and
/// rate of the last object link (φ its absolute angle), object tip velocity
/// (m/s), then tensions and muscle lengths.
pub const STATE_DIM: usize = 14;
pub const TIP_VELOCITY: [usize; 2] = [4, 5];
/// `[θ₁_ref, θ₂_ref, k_ref]`.
pub const CONTROL_DIM: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SwingConfig {
    pub control_dt: f64,
    pub substeps: usize,
    pub settle_steps: usize,
    pub settle_dt: f64,
    /// Minimum commanded tension, N.
    pub tension_floor: f64,
    /// Motor winding speed limit, m/s.
    pub max_winding_speed: f64,
    /// Tension at which the motor back-drives, N.
    pub max_tension: f64,
    pub theta_bound: f64,
    pub k_bounds: [f64; 2],
    pub knot_every: usize,
}

impl Default for SwingConfig {
    fn default() -> Self {
        Self {
            control_dt: 0.02,
            substeps: 10,
            settle_steps: 500,
            settle_dt: 0.002,
            tension_floor: 0.5,
            max_winding_speed: 0.15,
            max_tension: 80.0,
            theta_bound: 0.8,
            k_bounds: [0.5, 6.0],
            knot_every: 5,
        }
    }
}

/// Trial-and-error refinement of a swing on the plant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineOptions {
    /// Plant executions allowed.
    pub trials: usize,
    /// Initial step, as a fraction of each control range.
    pub step: f64,
    /// The model is asked for this multiple of the current peak velocity.
    pub gain: f64,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self { trials: 40, step: 0.2, gain: 1.2 }
    }
}

#[derive(Clone, Debug)]
pub struct Refinement<T> {
    pub knots: Vec<Vec<T>>,
    pub peak_tip_speed: T,
    pub accepted: usize,
}

/// Peak tip speed under the best constant stiffness and under a time-varying one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StiffnessComparison {
    pub best_fixed_k: f64,
    pub fixed_peak: f64,
    pub variable_peak: f64,
    /// Posture and stiffness knots of the refined constant-stiffness plan.
    pub fixed_knots: Vec<Vec<f64>>,
    /// Stiffness knots of the variable plan.
    pub variable_k: Vec<f64>,
    /// Posture and stiffness knots of the variable plan.
    pub variable_knots: Vec<Vec<f64>>,
}

impl StiffnessComparison {
    pub fn gain_percent(&self) -> f64 {
        100.0 * (self.variable_peak / self.fixed_peak - 1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareOptions {
    pub horizon: usize,
    /// Constant stiffness values tried, evenly spread over the stiffness bounds.
    pub k_candidates: usize,
    /// Schema planning iterations per candidate.
    pub plan_iters: usize,
    /// Rollout step whose tip velocity the schema plan aims at.
    pub goal_step: usize,
    /// Tip velocity the schema plan aims at, m/s.
    pub goal_velocity: [f64; 2],
    /// Initial posture knots are drawn in `±init_spread`.
    pub init_spread: f64,
    pub refine: RefineOptions,
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self {
            horizon: 20,
            k_candidates: 8,
            plan_iters: 100,
            goal_step: 15,
            goal_velocity: [5.0, 0.0],
            init_spread: 0.3,
            refine: RefineOptions::default(),
        }
    }
}

/// Random swings alternating over `tasks`; trajectory `n` uses task `n % tasks.len()`
/// and carries that index as its object id.
pub fn swing_dataset<T: Real>(tasks: &[SwingTask<T>], n: usize, steps: usize, seed: u64) -> Result<Vec<Trajectory<T>>> {
    if tasks.is_empty() {
        return usage("swing_dataset needs at least one task");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let id = i % tasks.len();
            let u = tasks[id].random_controls(&mut rng, steps);
            tasks[id].trajectory(id as u32, u)
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct SwingTask<T> {
    pub plant: ArmPlant<T>,
    pub object: FlexibleObject<T>,
    pub commander: GeometricCommander<T>,
    pub cfg: SwingConfig,
}

/// Plant response to a control sequence.
#[derive(Clone, Debug)]
pub struct SwingRollout<T> {
    /// Observations, one more than controls.
    pub s: Vec<Vec<T>>,
    /// Object tip speed after every control step, m/s.
    pub tip_speed: Vec<T>,
    /// Height of the object tip above the hand after every control step, m.
    pub tip_rise: Vec<T>,
    pub final_state: SimState<T>,
}

impl<T: Real> SwingRollout<T> {
    pub fn peak_tip_speed(&self) -> T {
        self.tip_speed.iter().copied().fold(T::zero(), T::max)
    }

    pub fn final_tip_rise(&self) -> T {
        *self.tip_rise.last().unwrap_or(&T::zero())
    }
}

impl<T: Real> SwingTask<T> {
    pub fn new(plant: &ArmPlant<T>, object: FlexibleObject<T>, cfg: SwingConfig) -> Result<Self> {
        object.validate()?;
        let mut plant = plant.clone();
        plant.actuator.max_winding_speed = Some(c(cfg.max_winding_speed));
        plant.actuator.max_tension = Some(c(cfg.max_tension));
        let commander = GeometricCommander::new(plant.clone(), object.total_mass(), c(cfg.tension_floor));
        Ok(Self { plant, object, commander, cfg })
    }

    pub fn lower(&self) -> Vec<T> {
        let b = c::<T>(self.cfg.theta_bound);
        vec![-b, -b, c(self.cfg.k_bounds[0])]
    }

    pub fn upper(&self) -> Vec<T> {
        let b = c::<T>(self.cfg.theta_bound);
        vec![b, b, c(self.cfg.k_bounds[1])]
    }

    pub fn observe(&self, state: &SimState<T>) -> Vec<T> {
        let (_, vel) = tip_point(&self.plant, &self.object, state);
        let mut s = tip_direction(state).to_vec();
        s.extend(vel);
        s.extend(self.plant.tensions(&state.theta, &state.lengths));
        s.extend(state.lengths.iter().copied());
        s
    }

    fn lengths_for(&self, u: &[T]) -> Result<Vec<T>> {
        if u.len() != CONTROL_DIM {
            return usage("swing controls are [theta1, theta2, k]");
        }
        Ok(self.commander.command(&u[..2], Some(u[2]))?.lengths)
    }

    /// Hanging at rest, holding `θ = 0` with stiffness `k0`.
    pub fn settled(&self, k0: T) -> Result<SimState<T>> {
        let l = self.lengths_for(&[T::zero(), T::zero(), k0])?;
        let mut state = SimState::at_rest(&self.plant, &self.object, &[T::zero(), T::zero()], &l);
        let dt = c::<T>(self.cfg.settle_dt);
        for _ in 0..self.cfg.settle_steps {
            state = step_dynamics(&self.plant, &self.object, &state, &l, dt)?;
        }
        state.time = T::zero();
        Ok(state)
    }

    /// Settles with the stiffness of the first control, then applies the
    /// sequence, one control per `control_dt`.
    pub fn rollout(&self, u: &[Vec<T>]) -> Result<SwingRollout<T>> {
        let k0 = u.first().map(|u| u[2]).unwrap_or(c(self.cfg.k_bounds[0]));
        let mut state = self.settled(k0)?;
        let dt = c::<T>(self.cfg.control_dt / self.cfg.substeps as f64);
        let mut s = vec![self.observe(&state)];
        let mut tip_speed = Vec::with_capacity(u.len());
        let mut tip_rise = Vec::with_capacity(u.len());
        for ut in u {
            let l = self.lengths_for(ut)?;
            for _ in 0..self.cfg.substeps {
                state = step_dynamics(&self.plant, &self.object, &state, &l, dt)?;
            }
            let obs = self.observe(&state);
            let [vx, vy] = TIP_VELOCITY.map(|i| obs[i]);
            tip_speed.push((vx * vx + vy * vy).sqrt());
            tip_rise.push(self.tip_rise(&state));
            s.push(obs);
        }
        Ok(SwingRollout { s, tip_speed, tip_rise, final_state: state })
    }

    pub fn tip_rise(&self, state: &SimState<T>) -> T {
        let mut phi: T = state.theta.iter().copied().sum();
        let mut rise = T::zero();
        for (&a, &len) in state.object_angles.iter().zip(&self.object.lengths) {
            phi = phi + a;
            rise = rise - len * phi.cos();
        }
        rise
    }

    pub fn trajectory(&self, object_id: u32, u: Vec<Vec<T>>) -> Result<Trajectory<T>> {
        let r = self.rollout(&u)?;
        Ok(Trajectory { object_id, s: r.s, u })
    }

    /// Uniform random knots within bounds, first posture knot at zero.
    pub fn random_knots(&self, rng: &mut impl Rng, horizon: usize) -> Vec<Vec<T>> {
        let b = self.cfg.theta_bound;
        let [k_lo, k_hi] = self.cfg.k_bounds;
        let mut knots: Vec<Vec<T>> = (0..knot_count(horizon, self.cfg.knot_every))
            .map(|_| vec![c(rng.gen_range(-b..=b)), c(rng.gen_range(-b..=b)), c(rng.gen_range(k_lo..=k_hi))])
            .collect();
        knots[0][0] = T::zero();
        knots[0][1] = T::zero();
        knots
    }

    /// [`Self::random_knots`] interpolated to `horizon` steps.
    pub fn random_controls(&self, rng: &mut impl Rng, horizon: usize) -> Vec<Vec<T>> {
        let knots = self.random_knots(rng, horizon);
        interpolate_knots(&knots, self.cfg.knot_every, horizon)
    }

    fn peak_of(&self, knots: &[Vec<T>], horizon: usize) -> Result<(T, usize, Vec<T>)> {
        let r = self.rollout(&interpolate_knots(knots, self.cfg.knot_every, horizon))?;
        let mut at = 0;
        for (i, &v) in r.tip_speed.iter().enumerate() {
            if v > r.tip_speed[at] {
                at = i;
            }
        }
        Ok((r.tip_speed[at], at + 1, r.s[at + 1].clone()))
    }

    /// Raises the peak tip speed of a knot plan by trials on the plant. Each
    /// trial asks the schema for the direction that scales up the velocity at
    /// the current peak, steps along it (all knots, then one knot at a time,
    /// in turn) and keeps the result only if the executed peak improves.
    /// Channels in `frozen` never move.
    pub fn refine_peak_speed(
        &self,
        net: &DynamicsNet<T>,
        p: &[T],
        knots: Vec<Vec<T>>,
        frozen: &[usize],
        opts: &RefineOptions,
    ) -> Result<Refinement<T>> {
        let n = knots.len();
        if n < 2 {
            return usage("a plan needs at least two knots");
        }
        let horizon = (n - 1) * self.cfg.knot_every;
        let (lo, hi) = (self.lower(), self.upper());
        let plan_opts = PlanOptions {
            knot_every: self.cfg.knot_every,
            iters: 0,
            gamma: T::zero(),
            w_u: T::zero(),
            lower: lo.clone(),
            upper: hi.clone(),
            frozen: frozen.to_vec(),
        };
        let mut knots = knots;
        let (mut best, mut at, mut s_at) = self.peak_of(&knots, horizon)?;
        let mut steps = vec![c::<T>(opts.step); n];
        let gain = c::<T>(opts.gain);
        let mut accepted = 0;
        for trial in 0..opts.trials {
            let block = trial % n;
            let s0 = self.observe(&self.settled(knots[0][2])?);
            let goal = Goal {
                channels: TIP_VELOCITY.to_vec(),
                target: TIP_VELOCITY.iter().map(|&i| s_at[i] * gain).collect(),
                step: Some(at),
            };
            let (_, mut g) = net.knot_loss_grad(&s0, &knots, p, &goal, horizon, &plan_opts)?;
            for gk in g.iter_mut() {
                for &ch in frozen {
                    gk[ch] = T::zero();
                }
            }
            let sel: Vec<usize> = if block == 0 { (1..n).collect() } else { vec![block] };
            let range: Vec<T> = lo.iter().zip(&hi).map(|(&a, &b)| b - a).collect();
            let mut norm = T::zero();
            for &i in &sel {
                for (ch, &r) in range.iter().enumerate() {
                    norm = norm + (g[i][ch] * r).powi(2);
                }
            }
            let norm = norm.sqrt();
            if !(norm > c(1e-12)) {
                continue;
            }
            let mut trial_knots = knots.clone();
            for &i in &sel {
                for (ch, &r) in range.iter().enumerate() {
                    let v = trial_knots[i][ch] - steps[block] * g[i][ch] * r * r / (norm * c(2.0));
                    trial_knots[i][ch] = v.max(lo[ch]).min(hi[ch]);
                }
            }
            let (v, a2, s2) = self.peak_of(&trial_knots, horizon)?;
            if v > best {
                best = v;
                at = a2;
                s_at = s2;
                knots = trial_knots;
                accepted += 1;
                steps[block] = steps[block] * c(1.5);
            } else {
                steps[block] = steps[block] / c(2.0);
            }
        }
        Ok(Refinement { knots, peak_tip_speed: best, accepted })
    }
}

impl SwingTask<f64> {
    /// Every constant stiffness candidate is planned on the schema and refined
    /// on the plant with its stiffness frozen. The best plan is then refined
    /// once more twice with the same trial budget: stiffness frozen and
    /// stiffness free.
    pub fn compare_stiffness(
        &self,
        net: &DynamicsNet<f64>,
        p: &[f64],
        opts: &CompareOptions,
        seed: u64,
    ) -> Result<StiffnessComparison> {
        if opts.k_candidates < 2 || opts.goal_step == 0 || opts.goal_step > opts.horizon {
            return usage("compare_stiffness needs two candidates and a goal step inside the horizon");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_knots = knot_count(opts.horizon, self.cfg.knot_every);
        let [k_lo, k_hi] = self.cfg.k_bounds;
        let spread = opts.init_spread;
        let mut best: Option<(f64, f64, Vec<Vec<f64>>)> = None;
        for i in 0..opts.k_candidates {
            let k = k_lo + (k_hi - k_lo) * i as f64 / (opts.k_candidates - 1) as f64;
            let mut knots: Vec<Vec<f64>> =
                (0..n_knots).map(|_| vec![rng.gen_range(-spread..spread), rng.gen_range(-spread..spread), k]).collect();
            knots[0][0] = 0.0;
            knots[0][1] = 0.0;
            let s0 = self.observe(&self.settled(k)?);
            let goal = Goal {
                channels: TIP_VELOCITY.to_vec(),
                target: opts.goal_velocity.to_vec(),
                step: Some(opts.goal_step),
            };
            let plan_opts = PlanOptions {
                knot_every: self.cfg.knot_every,
                iters: opts.plan_iters,
                gamma: 0.01,
                w_u: 0.0,
                lower: self.lower(),
                upper: self.upper(),
                frozen: vec![2],
            };
            let plan = net.optimize_controls(&s0, &goal, p, opts.horizon, knots, &plan_opts)?;
            let r = self.refine_peak_speed(net, p, plan.knots, &[2], &opts.refine)?;
            if best.as_ref().is_none_or(|b| r.peak_tip_speed > b.0) {
                best = Some((r.peak_tip_speed, k, r.knots));
            }
        }
        let (_, k, knots) = best.expect("at least two candidates");
        let fixed = self.refine_peak_speed(net, p, knots.clone(), &[2], &opts.refine)?;
        let variable = self.refine_peak_speed(net, p, knots, &[], &opts.refine)?;
        Ok(StiffnessComparison {
            best_fixed_k: k,
            fixed_peak: fixed.peak_tip_speed,
            variable_peak: variable.peak_tip_speed,
            fixed_knots: fixed.knots,
            variable_k: variable.knots.iter().map(|k| k[2]).collect(),
            variable_knots: variable.knots,
        })
    }
}
