//! Mecanum base: wheel-speed allocation, pseudo-inverse odometry and a
//! waypoint follower.
//!
//! Wheel order is front-left, front-right, rear-left, rear-right; speeds are
//! rim linear speeds (m/s). Divide by `wheel_radius` for angular speeds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::scalar::{c, wrap_angle, Real};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseGeometry<T> {
    /// Half track width, m.
    pub a: T,
    /// Half wheelbase, m.
    pub b: T,
    pub wheel_radius: T,
}

impl<T: Real> Default for BaseGeometry<T> {
    fn default() -> Self {
        Self { a: c(0.25), b: c(0.30), wheel_radius: c(0.1015) }
    }
}

impl<T: Real> BaseGeometry<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > T::zero() && self.b > T::zero() && self.wheel_radius > T::zero()) {
            return Err(Error::Domain("base geometry must be positive".into()));
        }
        Ok(())
    }

    /// The 4×3 allocation matrix `R` with `v_wheel = R ẋ`.
    pub fn allocation(&self) -> Mat<T> {
        let s = self.a + self.b;
        let o = T::one();
        Mat::from_rows(&[[o, o, s], [o, -o, -s], [o, o, -s], [o, -o, s]])
    }

    /// `R⁺ = (RᵀR)⁻¹Rᵀ`. The columns of `R` are orthogonal, so `RᵀR` is
    /// `diag(4, 4, 4(a+b)²)`.
    pub fn pseudo_inverse(&self) -> Mat<T> {
        let s = self.a + self.b;
        let q = c::<T>(0.25);
        let w = q / s;
        Mat::from_rows(&[[q, q, q, q], [q, -q, q, -q], [w, -w, -w, w]])
    }

    /// Wheel-speed pattern that produces no body motion.
    pub fn null_direction(&self) -> [T; 4] {
        let o = T::one();
        [o, o, -o, -o]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct BasePose<T> {
    pub x: T,
    pub y: T,
    pub psi: T,
    pub t: T,
}

impl<T: Real> BasePose<T> {
    pub fn new(x: T, y: T, psi: T) -> Self {
        Self { x, y, psi: wrap_angle(psi), t: T::zero() }
    }
}

/// `R ẋ` for a body twist `(ẋ, ẏ, ψ̇)`.
pub fn wheel_speeds<T: Real>(geom: &BaseGeometry<T>, twist: [T; 3]) -> [T; 4] {
    let v = geom.allocation().matvec(&twist);
    [v[0], v[1], v[2], v[3]]
}

/// Body twist recovered from wheel speeds, `R⁺ v_wheel`.
pub fn body_twist<T: Real>(geom: &BaseGeometry<T>, v_wheel: [T; 4]) -> [T; 3] {
    let t = geom.pseudo_inverse().matvec(&v_wheel);
    [t[0], t[1], t[2]]
}

/// Integrates one odometry step. The body-frame displacement `R⁺ v dt` is
/// rotated by the heading at the middle of the step.
pub fn odometry_step<T: Real>(
    geom: &BaseGeometry<T>,
    pose: &BasePose<T>,
    v_wheel: [T; 4],
    dt: T,
) -> Result<BasePose<T>> {
    if !(dt > T::zero()) {
        return Err(Error::Domain("odometry dt must be positive".into()));
    }
    let [vx, vy, w] = body_twist(geom, v_wheel);
    let mid = pose.psi + w * dt / c(2.0);
    let (s, co) = mid.sin_cos();
    Ok(BasePose {
        x: pose.x + (co * vx - s * vy) * dt,
        y: pose.y + (s * vx + co * vy) * dt,
        psi: wrap_angle(pose.psi + w * dt),
        t: pose.t + dt,
    })
}

/// A target pose. Intermediate waypoints only need the position.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Waypoint<T> {
    pub x: T,
    pub y: T,
    pub psi: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FollowerConfig {
    pub v_max: f64,
    pub w_max: f64,
    pub k_pos: f64,
    pub k_psi: f64,
    /// Final position tolerance, m.
    pub pos_tol: f64,
    /// Final heading tolerance, rad.
    pub psi_tol: f64,
    /// Distance at which an intermediate waypoint counts as passed, m.
    pub pass_tol: f64,
}

impl Default for FollowerConfig {
    fn default() -> Self {
        Self { v_max: 0.5, w_max: 1.0, k_pos: 2.0, k_psi: 2.0, pos_tol: 0.02, psi_tol: 0.05, pass_tol: 0.05 }
    }
}

/// Proportional waypoint follower: feed it poses, get body twists back.
#[derive(Clone, Debug)]
pub struct WaypointFollower<T> {
    waypoints: Vec<Waypoint<T>>,
    next: usize,
    cfg: FollowerConfig,
}

impl<T: Real> WaypointFollower<T> {
    pub fn new(waypoints: Vec<Waypoint<T>>, cfg: FollowerConfig) -> Result<Self> {
        if waypoints.is_empty() {
            return Err(Error::Usage("at least one waypoint is required".into()));
        }
        Ok(Self { waypoints, next: 0, cfg })
    }

    pub fn current_target(&self) -> &Waypoint<T> {
        &self.waypoints[self.next]
    }

    /// Twist command for `pose`, or `None` once the final waypoint is reached.
    pub fn command(&mut self, pose: &BasePose<T>) -> Option<[T; 3]> {
        loop {
            let wp = self.waypoints[self.next];
            let (ex, ey) = (wp.x - pose.x, wp.y - pose.y);
            let dist = (ex * ex + ey * ey).sqrt();
            let epsi = wrap_angle(wp.psi - pose.psi);
            let last = self.next + 1 == self.waypoints.len();
            if last {
                if dist <= c(self.cfg.pos_tol) && epsi.abs() <= c(self.cfg.psi_tol) {
                    return None;
                }
            } else if dist <= c(self.cfg.pass_tol) {
                self.next += 1;
                continue;
            }
            let (s, co) = pose.psi.sin_cos();
            let bx = co * ex + s * ey;
            let by = -s * ex + co * ey;
            let k = c::<T>(self.cfg.k_pos);
            let (mut vx, mut vy) = (k * bx, k * by);
            let speed = (vx * vx + vy * vy).sqrt();
            let v_max = c::<T>(self.cfg.v_max);
            if speed > v_max {
                vx = vx * v_max / speed;
                vy = vy * v_max / speed;
            }
            let w_max = c::<T>(self.cfg.w_max);
            let w = if last { (c::<T>(self.cfg.k_psi) * epsi).max(-w_max).min(w_max) } else { T::zero() };
            return Some([vx, vy, w]);
        }
    }
}

/// Outcome of [`follow_waypoints`].
#[derive(Clone, Debug)]
pub struct FollowReport<T> {
    pub pose: BasePose<T>,
    pub commands: Vec<[T; 3]>,
}

/// Drives a kinematic base through `waypoints`. `actuate` turns commanded
/// wheel speeds into the speeds the wheels actually reach (noise, slip);
/// odometry integrates the actual speeds. Fails with a navigation error if
/// the goal is not reached within `timeout` seconds.
pub fn follow_waypoints<T: Real>(
    geom: &BaseGeometry<T>,
    start: BasePose<T>,
    waypoints: Vec<Waypoint<T>>,
    cfg: FollowerConfig,
    dt: T,
    timeout: T,
    mut actuate: impl FnMut([T; 4]) -> [T; 4],
) -> Result<FollowReport<T>> {
    let mut follower = WaypointFollower::new(waypoints, cfg)?;
    let mut pose = start;
    let mut commands = Vec::new();
    while let Some(twist) = follower.command(&pose) {
        if pose.t - start.t >= timeout {
            return Err(Error::Navigation {
                x: pose.x.to_f64_lossy(),
                y: pose.y.to_f64_lossy(),
                psi: pose.psi.to_f64_lossy(),
            });
        }
        commands.push(twist);
        let actual = actuate(wheel_speeds(geom, twist));
        pose = odometry_step(geom, &pose, actual, dt)?;
    }
    commands.push([T::zero(); 3]);
    Ok(FollowReport { pose, commands })
}
