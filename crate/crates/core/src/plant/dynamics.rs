use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};
use crate::plant::arm::ArmPlant;
use crate::plant::chain::Chain;
use crate::scalar::{c, Real};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    #[default]
    None,
    PendulumMass,
    TwoMassChain,
}

/// Flexible object hanging from the hand, modelled as a chain of point masses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlexibleObject<T> {
    pub kind: ObjectKind,
    #[serde(default)]
    pub lengths: Vec<T>,
    #[serde(default)]
    pub masses: Vec<T>,
    /// Viscous drag on each mass relative to its pivot, N·s/m.
    #[serde(default)]
    pub damping: T,
    /// A detached object is ignored by the simulator.
    #[serde(default = "yes")]
    pub attach_hand: bool,
}

fn yes() -> bool {
    true
}

impl<T: Real> FlexibleObject<T> {
    pub fn none() -> Self {
        Self { kind: ObjectKind::None, lengths: vec![], masses: vec![], damping: T::zero(), attach_hand: true }
    }

    pub fn pendulum(length: T, mass: T, damping: T) -> Self {
        Self { kind: ObjectKind::PendulumMass, lengths: vec![length], masses: vec![mass], damping, attach_hand: true }
    }

    pub fn two_mass_chain(lengths: [T; 2], masses: [T; 2], damping: T) -> Self {
        Self {
            kind: ObjectKind::TwoMassChain,
            lengths: lengths.to_vec(),
            masses: masses.to_vec(),
            damping,
            attach_hand: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let want = match self.kind {
            ObjectKind::None => return Ok(()),
            ObjectKind::PendulumMass => 1,
            ObjectKind::TwoMassChain => 2,
        };
        if self.lengths.len() != want || self.masses.len() != want {
            return usage(format!("{:?} needs {want} lengths and masses", self.kind));
        }
        if self.lengths.iter().chain(&self.masses).any(|&v| v <= T::zero()) {
            return usage("object lengths and masses must be positive");
        }
        if self.damping < T::zero() {
            return usage("object damping must be non-negative");
        }
        Ok(())
    }

    /// Number of simulated object joints.
    pub fn dof(&self) -> usize {
        if self.attach_hand {
            match self.kind {
                ObjectKind::None => 0,
                ObjectKind::PendulumMass => 1,
                ObjectKind::TwoMassChain => 2,
            }
        } else {
            0
        }
    }

    pub fn total_mass(&self) -> T {
        self.masses.iter().take(self.dof()).copied().sum()
    }
}

/// Full simulator state. Object angles are relative to the preceding link.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimState<T> {
    pub theta: Vec<T>,
    pub theta_dot: Vec<T>,
    pub object_angles: Vec<T>,
    pub object_rates: Vec<T>,
    /// Motor-side muscle lengths actually applied (after actuator limits).
    pub lengths: Vec<T>,
    pub time: T,
}

impl<T: Real> SimState<T> {
    /// At rest with the object hanging straight down from the hand.
    pub fn at_rest(plant: &ArmPlant<T>, obj: &FlexibleObject<T>, theta: &[T], lengths: &[T]) -> Self {
        let phi: T = theta.iter().copied().sum();
        let mut object_angles = vec![T::zero(); obj.dof()];
        if let Some(first) = object_angles.first_mut() {
            *first = -phi;
        }
        Self {
            theta: theta.to_vec(),
            theta_dot: vec![T::zero(); plant.n_joints],
            object_angles,
            object_rates: vec![T::zero(); obj.dof()],
            lengths: lengths.to_vec(),
            time: T::zero(),
        }
    }

    fn q(&self) -> Vec<T> {
        self.theta.iter().chain(&self.object_angles).copied().collect()
    }

    fn qd(&self) -> Vec<T> {
        self.theta_dot.iter().chain(&self.object_rates).copied().collect()
    }
}

/// Extra inputs for [`step_dynamics_with`].
#[derive(Clone, Debug, Default)]
pub struct StepOptions<T> {
    /// Clamp the arm joints (zero velocity); only the object moves.
    pub lock_arm: bool,
    pub external_torque: Option<Vec<T>>,
}

pub(crate) fn full_chain<T: Real>(plant: &ArmPlant<T>, obj: &FlexibleObject<T>) -> Chain<T> {
    let mut chain = plant.arm_chain(T::zero());
    for k in 0..obj.dof() {
        chain.push_point_mass(obj.lengths[k], obj.masses[k]);
    }
    chain
}

/// One semi-implicit Euler step (`dt ≤ 0.01 s`).
pub fn step_dynamics<T: Real>(
    plant: &ArmPlant<T>,
    obj: &FlexibleObject<T>,
    state: &SimState<T>,
    l_ref: &[T],
    dt: T,
) -> Result<SimState<T>> {
    step_dynamics_with(plant, obj, state, l_ref, dt, &StepOptions::default())
}

pub fn step_dynamics_with<T: Real>(
    plant: &ArmPlant<T>,
    obj: &FlexibleObject<T>,
    state: &SimState<T>,
    l_ref: &[T],
    dt: T,
    opts: &StepOptions<T>,
) -> Result<SimState<T>> {
    if !(dt > T::zero() && dt <= c(0.01)) {
        return Err(Error::Domain(format!("dt = {dt} outside (0, 0.01]")));
    }
    let (nj, no) = (plant.n_joints, obj.dof());
    if l_ref.len() != plant.n_muscles
        || state.lengths.len() != plant.n_muscles
        || state.theta.len() != nj
        || state.object_angles.len() != no
    {
        return usage("step_dynamics: state or command has the wrong dimension");
    }

    if l_ref.iter().chain(&state.lengths).chain(&state.theta).chain(&state.theta_dot).any(|v| !v.is_finite()) {
        return Err(Error::Integration { time: state.time.to_f64_lossy() });
    }
    let mut lengths = state.lengths.clone();
    for (l, &target) in lengths.iter_mut().zip(l_ref) {
        *l = match plant.actuator.max_winding_speed {
            Some(v) => {
                let span = v * dt;
                *l + (target - *l).max(-span).min(span)
            }
            None => target,
        };
    }
    if let Some(fmax) = plant.actuator.max_tension {
        let g = plant.path_lengths(&state.theta);
        for i in 0..plant.n_muscles {
            lengths[i] = lengths[i].max(g[i] - (fmax / plant.elastic_k[i]).sqrt());
        }
    }

    let chain = full_chain(plant, obj);
    let q = state.q();
    let qd = state.qd();
    let (mass, mut force) = chain.mass_matrix_and_forces(&q, &qd);
    let f = plant.tensions(&state.theta, &lengths);
    let tm = plant.muscle_torque(&state.theta, &f);
    for j in 0..nj {
        force[j] = force[j] + tm[j] - plant.damping[j] * qd[j];
        if let Some(ext) = &opts.external_torque {
            force[j] = force[j] + ext[j];
        }
    }
    for k in 0..no {
        let l = obj.lengths[k];
        force[nj + k] = force[nj + k] - obj.damping * l * l * qd[nj + k];
    }

    let n = nj + no;
    let qdd = if opts.lock_arm {
        let sub = crate::linalg::Mat::from_vec(
            no,
            no,
            (0..no).flat_map(|a| (0..no).map(move |b| (a, b))).map(|(a, b)| mass[(nj + a, nj + b)]).collect(),
        );
        let rhs: Vec<T> = (0..no).map(|k| force[nj + k]).collect();
        let mut acc = vec![T::zero(); nj];
        acc.extend(sub.solve(&rhs).ok_or(Error::Integration { time: state.time.to_f64_lossy() })?);
        acc
    } else {
        mass.solve(&force).ok_or(Error::Integration { time: state.time.to_f64_lossy() })?
    };

    let mut next = state.clone();
    next.lengths = lengths;
    for i in 0..n {
        let v = if opts.lock_arm && i < nj { T::zero() } else { qd[i] + dt * qdd[i] };
        let p = q[i] + dt * v;
        if i < nj {
            next.theta_dot[i] = v;
            next.theta[i] = p;
        } else {
            next.object_rates[i - nj] = v;
            next.object_angles[i - nj] = p;
        }
    }
    next.time = state.time + dt;
    if next.q().iter().chain(&next.qd()).any(|v| !v.is_finite()) {
        return Err(Error::Integration { time: next.time.to_f64_lossy() });
    }
    Ok(next)
}

/// Kinetic + gravitational + elastic energy of the whole system.
pub fn mechanical_energy<T: Real>(plant: &ArmPlant<T>, obj: &FlexibleObject<T>, state: &SimState<T>) -> T {
    let chain = full_chain(plant, obj);
    let q = state.q();
    chain.kinetic_energy(&q, &state.qd())
        + chain.potential_energy(&q)
        + plant.elastic_energy(&state.theta, &state.lengths)
}

/// World-frame position and velocity of the hand (end of the arm).
pub fn hand_point<T: Real>(plant: &ArmPlant<T>, obj: &FlexibleObject<T>, state: &SimState<T>) -> ([T; 2], [T; 2]) {
    full_chain(plant, obj).point(&state.q(), &state.qd(), plant.n_joints - 1)
}

/// World-frame position and velocity of the object tip (the hand when there is no object).
pub fn tip_point<T: Real>(plant: &ArmPlant<T>, obj: &FlexibleObject<T>, state: &SimState<T>) -> ([T; 2], [T; 2]) {
    let chain = full_chain(plant, obj);
    chain.point(&state.q(), &state.qd(), chain.dof() - 1)
}

/// Length-free tip descriptor: direction of the last object link in the world
/// frame and its rate, `[sin φ, -cos φ, φ̇ cos φ, φ̇ sin φ]`.
pub fn tip_direction<T: Real>(state: &SimState<T>) -> [T; 4] {
    let phi: T = state.theta.iter().chain(&state.object_angles).copied().sum();
    let w: T = state.theta_dot.iter().chain(&state.object_rates).copied().sum();
    [phi.sin(), -phi.cos(), phi.cos() * w, phi.sin() * w]
}
