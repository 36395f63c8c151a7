//! Model-based muscle commands from the plant's own geometry. Used to generate
//! training data and as a baseline controller.

use crate::error::{usage, Result};
use crate::linalg::Mat;
use crate::plant::arm::ArmPlant;
use crate::qp::solve_bounded_qp;
use crate::scalar::{c, Real};

const TORQUE_WEIGHT: f64 = 1e8;

/// Tension distribution `min ‖x‖² + w‖Gᵀx + τ‖²` subject to `x ≥ floor`.
pub fn distribute_tension<T: Real>(g: &Mat<T>, tau_nec: &[T], floor: &[T]) -> Result<Vec<T>> {
    let nm = g.rows();
    let w = c::<T>(TORQUE_WEIGHT);
    let two = c::<T>(2.0);
    let ggt = g.matmul(&g.transpose());
    let mut h = ggt.scale(two * w);
    for i in 0..nm {
        h[(i, i)] = h[(i, i)] + two;
    }
    let lin: Vec<T> = g.matvec(tau_nec).into_iter().map(|v| two * w * v).collect();
    Ok(solve_bounded_qp(&h, &lin, floor)?.x)
}

#[derive(Clone, Debug)]
pub struct Command<T> {
    pub lengths: Vec<T>,
    pub tensions: Vec<T>,
}

/// Holds posture `θ_ref` against gravity with the least tension, then adds
/// co-contraction until the mean diagonal joint stiffness reaches `k_ref`.
#[derive(Clone, Debug)]
pub struct GeometricCommander<T> {
    pub plant: ArmPlant<T>,
    /// Extra mass hanging at the hand (an attached object), kg.
    pub extra_tip_mass: T,
    /// Lower bound on every tension, N.
    pub floor: T,
}

impl<T: Real> GeometricCommander<T> {
    pub fn new(plant: ArmPlant<T>, extra_tip_mass: T, floor: T) -> Self {
        Self { plant, extra_tip_mass, floor }
    }

    pub fn mean_diag_stiffness(&self, theta: &[T], tensions: &[T]) -> T {
        let k = self.plant.joint_stiffness(theta, tensions);
        let n = self.plant.n_joints;
        (0..n).map(|j| k[(j, j)]).sum::<T>() / c(n as f64)
    }

    pub fn command(&self, theta_ref: &[T], k_ref: Option<T>) -> Result<Command<T>> {
        let p = &self.plant;
        if theta_ref.len() != p.n_joints {
            return usage("theta_ref has the wrong dimension");
        }
        let g = p.moment_arm_matrix(theta_ref);
        let tau_nec: Vec<T> = p.gravity_torque(theta_ref, self.extra_tip_mass).into_iter().map(|v| -v).collect();
        let floor = vec![self.floor; p.n_muscles];
        let base = distribute_tension(&g, &tau_nec, &floor)?;
        let mut tensions = base.clone();
        if let Some(k_ref) = k_ref {
            if self.mean_diag_stiffness(theta_ref, &base) < k_ref {
                let dir = distribute_tension(&g, &vec![T::zero(); p.n_joints], &vec![T::one(); p.n_muscles])?;
                let at = |s: T| -> Vec<T> { base.iter().zip(&dir).map(|(&b, &d)| b + s * d).collect() };
                let (mut lo, mut hi) = (T::zero(), T::one());
                while self.mean_diag_stiffness(theta_ref, &at(hi)) < k_ref && hi < c(1e7) {
                    hi = hi * c(2.0);
                }
                for _ in 0..80 {
                    let mid = c::<T>(0.5) * (lo + hi);
                    if self.mean_diag_stiffness(theta_ref, &at(mid)) < k_ref {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                tensions = at(hi);
            }
        }
        let lengths = p.lengths_for_tensions(theta_ref, &tensions);
        Ok(Command { lengths, tensions })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn commanded_posture_is_the_equilibrium() {
        let p = ArmPlant::<f64>::default_arm();
        let cmd = GeometricCommander::new(p.clone(), 0.0, 3.0);
        let theta = [0.5, -0.4];
        let out = cmd.command(&theta, Some(2.0)).unwrap();
        let eq = p.quasi_static_solve_from(&theta, &out.lengths, &[0.0, 0.0], 0.0).unwrap();
        assert!((eq.theta[0] - theta[0]).abs() < 1e-4 && (eq.theta[1] - theta[1]).abs() < 1e-4);
        assert!((cmd.mean_diag_stiffness(&theta, &out.tensions) - 2.0).abs() < 1e-6);
    }
}
