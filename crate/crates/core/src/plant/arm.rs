use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};
use crate::linalg::{norm_inf, Mat};
use crate::plant::chain::Chain;
use crate::scalar::{c, Real};

/// Muscle routing: `G(θ)[i][j] = base[i][j] + slope[i][j]·θ_j`.
///
/// Entries are `∂l_i/∂θ_j`; a flexor of joint `j` has a negative entry (it
/// shortens as the joint flexes).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentArms<T> {
    pub base: Vec<Vec<T>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope: Option<Vec<Vec<T>>>,
}

/// Actuator-side limits of the muscle motors. `None` means ideal.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActuatorLimits<T> {
    /// Motors back-drive instead of exceeding this tension (N).
    #[serde(default)]
    pub max_tension: Option<T>,
    /// Winding speed limit on the motor-side muscle length (m/s).
    #[serde(default)]
    pub max_winding_speed: Option<T>,
}

fn default_gravity<T: Real>() -> T {
    c(9.81)
}

/// Planar tendon-driven arm hanging from a fixed shoulder. `θ = 0` points the
/// whole arm straight down; positive angles rotate counter-clockwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound(deserialize = "T: Real"))]
pub struct ArmPlant<T> {
    pub n_joints: usize,
    pub n_muscles: usize,
    pub moment_arms: MomentArms<T>,
    /// Quadratic elasticity coefficients, N/m².
    pub elastic_k: Vec<T>,
    /// Muscle path length at θ = 0, m.
    pub rest_lengths: Vec<T>,
    pub link_lengths: Vec<T>,
    pub link_masses: Vec<T>,
    /// Joint viscous damping, N·m·s/rad.
    pub damping: Vec<T>,
    /// Point mass carried at the hand, kg.
    pub payload_mass: T,
    pub joint_limits: Vec<[T; 2]>,
    #[serde(default = "default_gravity")]
    pub gravity: T,
    #[serde(default)]
    pub actuator: ActuatorLimits<T>,
}

/// Result of [`ArmPlant::quasi_static_solve`].
#[derive(Clone, Debug)]
pub struct Equilibrium<T> {
    pub theta: Vec<T>,
    pub tensions: Vec<T>,
    /// Infinity norm of the torque residual, N·m.
    pub residual: T,
    pub iterations: usize,
}

pub const DEFAULT_MOMENT_ARM: f64 = 0.02;
pub const ADDED_MOMENT_ARM: f64 = 0.035;

impl<T: Real> ArmPlant<T> {
    /// Two joints, two antagonist pairs with constant 2 cm moment arms.
    pub fn default_arm() -> Self {
        let r = DEFAULT_MOMENT_ARM;
        let rows = vec![vec![-r, 0.0], vec![r, 0.0], vec![0.0, -r], vec![0.0, r]];
        Self {
            n_joints: 2,
            n_muscles: 4,
            moment_arms: MomentArms { base: lit_rows(&rows), slope: None },
            elastic_k: vec![c(5.0e4); 4],
            rest_lengths: vec![c(0.3); 4],
            link_lengths: vec![c(0.25), c(0.20)],
            link_masses: vec![c(0.4), c(0.3)],
            damping: vec![c(0.1); 2],
            payload_mass: T::zero(),
            joint_limits: vec![[c(-1.4), c(1.4)]; 2],
            gravity: default_gravity(),
            actuator: ActuatorLimits::default(),
        }
    }

    /// One joint driven by a flexor (row 0) and an extensor (row 1) with
    /// moment arm `r`, massless link.
    pub fn single_joint(r: T) -> Self {
        Self {
            n_joints: 1,
            n_muscles: 2,
            moment_arms: MomentArms { base: vec![vec![-r], vec![r]], slope: None },
            elastic_k: vec![c(5.0e4); 2],
            rest_lengths: vec![c(0.3); 2],
            link_lengths: vec![c(0.25)],
            link_masses: vec![T::zero()],
            damping: vec![c(0.1)],
            payload_mass: T::zero(),
            joint_limits: vec![[c(-1.4), c(1.4)]],
            gravity: default_gravity(),
            actuator: ActuatorLimits::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let plant: Self = serde_json::from_str(text)?;
        plant.validate()?;
        Ok(plant)
    }

    pub fn validate(&self) -> Result<()> {
        let (nj, nm) = (self.n_joints, self.n_muscles);
        if nj == 0 || nm == 0 {
            return usage("plant needs at least one joint and one muscle");
        }
        let rows_ok = |rows: &Vec<Vec<T>>| rows.len() == nm && rows.iter().all(|r| r.len() == nj);
        if !rows_ok(&self.moment_arms.base) || !self.moment_arms.slope.as_ref().is_none_or(rows_ok) {
            return usage(format!("moment arms must be {nm} x {nj}"));
        }
        for (name, len, want) in [
            ("elastic_k", self.elastic_k.len(), nm),
            ("rest_lengths", self.rest_lengths.len(), nm),
            ("link_lengths", self.link_lengths.len(), nj),
            ("link_masses", self.link_masses.len(), nj),
            ("damping", self.damping.len(), nj),
            ("joint_limits", self.joint_limits.len(), nj),
        ] {
            if len != want {
                return usage(format!("{name} has {len} entries, expected {want}"));
            }
        }
        if self.elastic_k.iter().any(|&k| k <= T::zero()) {
            return usage("elastic_k must be positive");
        }
        if self.link_lengths.iter().any(|&l| l <= T::zero()) {
            return usage("link lengths must be positive");
        }
        if self.link_masses.iter().chain(&self.damping).any(|&v| v < T::zero()) || self.payload_mass < T::zero() {
            return usage("masses and damping must be non-negative");
        }
        if self.joint_limits.iter().any(|[lo, hi]| lo >= hi) {
            return usage("joint limits must satisfy lo < hi");
        }
        Ok(())
    }

    /// Appends a muscle with the given routing row.
    pub fn with_added_muscle(&self, row: Vec<T>, elastic_k: T, rest_length: T) -> Result<Self> {
        if row.len() != self.n_joints {
            return usage("new muscle row must have one entry per joint");
        }
        let mut p = self.clone();
        p.n_muscles += 1;
        p.moment_arms.base.push(row);
        if let Some(slope) = p.moment_arms.slope.as_mut() {
            slope.push(vec![T::zero(); self.n_joints]);
        }
        p.elastic_k.push(elastic_k);
        p.rest_lengths.push(rest_length);
        Ok(p)
    }

    /// The muscle-addition variant used for heavy loads: an extra shoulder
    /// flexor with a 3.5 cm moment arm.
    pub fn with_assist_flexor(&self) -> Result<Self> {
        let mut row = vec![T::zero(); self.n_joints];
        row[0] = -c::<T>(ADDED_MOMENT_ARM);
        self.with_added_muscle(row, self.elastic_k[0], self.rest_lengths[0])
    }

    pub fn within_limits(&self, theta: &[T]) -> bool {
        theta.len() == self.n_joints && theta.iter().zip(&self.joint_limits).all(|(&t, [lo, hi])| t >= *lo && t <= *hi)
    }

    fn check_theta(&self, theta: &[T]) -> Result<()> {
        if theta.len() != self.n_joints {
            return usage(format!("expected {} joint angles, got {}", self.n_joints, theta.len()));
        }
        if !self.within_limits(theta) {
            return Err(Error::Domain(format!("joint angles {theta:?} outside limits")));
        }
        Ok(())
    }

    /// Muscle path lengths `g(θ)`; errors outside the joint limits.
    pub fn muscle_lengths(&self, theta: &[T]) -> Result<Vec<T>> {
        self.check_theta(theta)?;
        Ok(self.path_lengths(theta))
    }

    /// `g(θ)` without the joint-limit check.
    pub fn path_lengths(&self, theta: &[T]) -> Vec<T> {
        let half = c::<T>(0.5);
        (0..self.n_muscles)
            .map(|i| {
                let mut l = self.rest_lengths[i];
                for (j, &t) in theta.iter().enumerate() {
                    l = l + self.moment_arms.base[i][j] * t;
                    if let Some(s) = &self.moment_arms.slope {
                        l = l + half * s[i][j] * t * t;
                    }
                }
                l
            })
            .collect()
    }

    /// Muscle Jacobian `G(θ) = ∂g/∂θ`, `n_muscles × n_joints`.
    pub fn moment_arm_matrix(&self, theta: &[T]) -> Mat<T> {
        let mut g = Mat::from_rows(&self.moment_arms.base);
        if let Some(s) = &self.moment_arms.slope {
            for i in 0..self.n_muscles {
                for (j, &t) in theta.iter().enumerate() {
                    g[(i, j)] = g[(i, j)] + s[i][j] * t;
                }
            }
        }
        g
    }

    /// Per-muscle stretch `g(θ) - l`.
    pub fn stretch(&self, theta: &[T], lengths: &[T]) -> Vec<T> {
        self.path_lengths(theta).iter().zip(lengths).map(|(&g, &l)| g - l).collect()
    }

    /// One-sided quadratic elastic law `f = k·max(0, δ)²`.
    pub fn tensions(&self, theta: &[T], lengths: &[T]) -> Vec<T> {
        self.stretch(theta, lengths)
            .iter()
            .zip(&self.elastic_k)
            .map(|(&d, &k)| {
                let d = d.max(T::zero());
                k * d * d
            })
            .collect()
    }

    /// Motor-side length that produces tension `f` at posture `θ`.
    pub fn lengths_for_tensions(&self, theta: &[T], tensions: &[T]) -> Vec<T> {
        self.path_lengths(theta)
            .iter()
            .zip(tensions)
            .zip(&self.elastic_k)
            .map(|((&g, &f), &k)| g - (f.max(T::zero()) / k).sqrt())
            .collect()
    }

    /// Joint torque produced by tensions: `-G(θ)ᵀ f`.
    pub fn muscle_torque(&self, theta: &[T], tensions: &[T]) -> Vec<T> {
        self.moment_arm_matrix(theta).tr_matvec(tensions).into_iter().map(|v| -v).collect()
    }

    /// Elastic potential `Σ k δ⁺³ / 3`.
    pub fn elastic_energy(&self, theta: &[T], lengths: &[T]) -> T {
        self.stretch(theta, lengths)
            .iter()
            .zip(&self.elastic_k)
            .map(|(&d, &k)| {
                let d = d.max(T::zero());
                k * d * d * d / c(3.0)
            })
            .sum()
    }

    pub(crate) fn arm_chain(&self, extra_tip_mass: T) -> Chain<T> {
        Chain::arm(&self.link_lengths, &self.link_masses, self.payload_mass + extra_tip_mass, self.gravity)
    }

    /// Static gravity load on the joints (generalized force) with an extra
    /// point mass hanging at the hand.
    pub fn gravity_torque(&self, theta: &[T], extra_tip_mass: T) -> Vec<T> {
        self.arm_chain(extra_tip_mass).gravity_forces(theta)
    }

    /// Joint stiffness `K = Gᵀ diag(∂f/∂δ) G` with `∂f/∂δ = 2√(k f)`.
    pub fn joint_stiffness(&self, theta: &[T], tensions: &[T]) -> Mat<T> {
        let g = self.moment_arm_matrix(theta);
        let two = c::<T>(2.0);
        let dfd: Vec<T> =
            tensions.iter().zip(&self.elastic_k).map(|(&f, &k)| two * (k * f.max(T::zero())).sqrt()).collect();
        let nj = self.n_joints;
        let mut kmat = Mat::zeros(nj, nj);
        for (i, &d) in dfd.iter().enumerate() {
            for a in 0..nj {
                for b in 0..nj {
                    kmat[(a, b)] = kmat[(a, b)] + g[(i, a)] * d * g[(i, b)];
                }
            }
        }
        kmat
    }

    fn static_residual(&self, theta: &[T], l_ref: &[T], ext: &[T], extra: T) -> Vec<T> {
        let f = self.tensions(theta, l_ref);
        let tm = self.muscle_torque(theta, &f);
        let tg = self.gravity_torque(theta, extra);
        (0..self.n_joints).map(|j| tm[j] + tg[j] + ext[j]).collect()
    }

    fn static_jacobian(&self, theta: &[T], l_ref: &[T], extra: T) -> Mat<T> {
        let nj = self.n_joints;
        let f = self.tensions(theta, l_ref);
        let mut jac = self.joint_stiffness(theta, &f).scale(-T::one());
        if let Some(s) = &self.moment_arms.slope {
            for j in 0..nj {
                let extra_diag: T = (0..self.n_muscles).map(|i| s[i][j] * f[i]).sum();
                jac[(j, j)] = jac[(j, j)] - extra_diag;
            }
        }
        let h = c::<T>(1e-6);
        let chain = self.arm_chain(extra);
        let mut tp = theta.to_vec();
        for j in 0..nj {
            tp[j] = theta[j] + h;
            let gp = chain.gravity_forces(&tp);
            tp[j] = theta[j] - h;
            let gm = chain.gravity_forces(&tp);
            tp[j] = theta[j];
            for a in 0..nj {
                jac[(a, j)] = jac[(a, j)] + (gp[a] - gm[a]) / (h + h);
            }
        }
        jac
    }

    /// Equilibrium posture for commanded motor-side lengths.
    pub fn quasi_static_solve(&self, l_ref: &[T], external_torque: &[T]) -> Result<Equilibrium<T>> {
        self.quasi_static_solve_from(&vec![T::zero(); self.n_joints], l_ref, external_torque, T::zero())
    }

    /// [`Self::quasi_static_solve`] with a warm start and an extra point mass
    /// hanging at the hand.
    pub fn quasi_static_solve_from(
        &self,
        theta0: &[T],
        l_ref: &[T],
        external_torque: &[T],
        extra_tip_mass: T,
    ) -> Result<Equilibrium<T>> {
        if l_ref.len() != self.n_muscles || external_torque.len() != self.n_joints || theta0.len() != self.n_joints {
            return usage("quasi_static_solve: dimension mismatch");
        }
        if l_ref.iter().chain(external_torque).any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite command".into()));
        }
        let tol = T::epsilon().sqrt() * c(1e-2);
        let max_iter = 200;
        let mut theta = theta0.to_vec();
        let mut r = self.static_residual(&theta, l_ref, external_torque, extra_tip_mass);
        let mut rn = norm_inf(&r);
        let mut mu = T::zero();
        for it in 0..max_iter {
            if rn <= tol {
                return self.finish_equilibrium(theta, l_ref, rn, it);
            }
            let jac = self.static_jacobian(&theta, l_ref, extra_tip_mass);
            let neg_r: Vec<T> = r.iter().map(|&v| -v).collect();
            let step = if mu == T::zero() { jac.solve(&neg_r) } else { None }.or_else(|| {
                // Levenberg-Marquardt step when the Jacobian is singular or Newton stalls.
                let jt = jac.transpose();
                let mut a = jt.matmul(&jac);
                let m = mu.max(c::<T>(1e-9) * (T::one() + a.max_abs()));
                for k in 0..self.n_joints {
                    a[(k, k)] = a[(k, k)] + m;
                }
                a.solve(&jt.matvec(&neg_r))
            });
            let Some(step) = step else {
                break;
            };
            let mut alpha = T::one();
            let mut accepted = false;
            for _ in 0..40 {
                let trial: Vec<T> = theta.iter().zip(&step).map(|(&t, &s)| t + alpha * s).collect();
                let rt = self.static_residual(&trial, l_ref, external_torque, extra_tip_mass);
                let rtn = norm_inf(&rt);
                if rtn.is_finite() && rtn < rn {
                    theta = trial;
                    r = rt;
                    rn = rtn;
                    accepted = true;
                    break;
                }
                alpha = alpha * c(0.5);
            }
            if accepted {
                mu = T::zero();
            } else {
                mu = if mu == T::zero() { c(1e-3) } else { mu * c(10.0) };
                if mu > c(1e12) {
                    break;
                }
            }
        }
        if rn <= tol {
            return self.finish_equilibrium(theta, l_ref, rn, max_iter);
        }
        Err(Error::Solver { iterations: max_iter, residual: rn.to_f64_lossy() })
    }

    fn finish_equilibrium(&self, theta: Vec<T>, l_ref: &[T], residual: T, iterations: usize) -> Result<Equilibrium<T>> {
        if !self.within_limits(&theta) {
            return Err(Error::Domain(format!("equilibrium {theta:?} lies outside the joint limits")));
        }
        let tensions = self.tensions(&theta, l_ref);
        Ok(Equilibrium { theta, tensions, residual, iterations })
    }
}

fn lit_rows<T: Real>(rows: &[Vec<f64>]) -> Vec<Vec<T>> {
    rows.iter().map(|r| r.iter().map(|&v| c(v)).collect()).collect()
}
