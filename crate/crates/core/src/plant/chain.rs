//! Planar serial chain hanging under gravity. Joint coordinates are relative
//! angles; link `k` points along `e(φ_k) = (sin φ_k, -cos φ_k)` where `φ_k` is
//! the sum of the first `k + 1` joint angles.

use crate::linalg::Mat;
use crate::scalar::{c, Real};

#[derive(Clone, Debug)]
pub(crate) struct Link<T> {
    pub len: T,
    pub mass: T,
    /// Distance from the proximal joint to the centre of mass.
    pub com: T,
    /// Moment of inertia about the centre of mass.
    pub inertia: T,
}

#[derive(Clone, Debug)]
pub(crate) struct Chain<T> {
    pub links: Vec<Link<T>>,
    pub gravity: T,
}

#[inline]
fn e<T: Real>(phi: T) -> [T; 2] {
    [phi.sin(), -phi.cos()]
}

#[inline]
fn e_prime<T: Real>(phi: T) -> [T; 2] {
    [phi.cos(), phi.sin()]
}

impl<T: Real> Chain<T> {
    /// Uniform rods with a point mass merged into the last link.
    pub fn arm(lengths: &[T], masses: &[T], tip_mass: T, gravity: T) -> Self {
        let n = lengths.len();
        let twelfth = c::<T>(1.0 / 12.0);
        let half = c::<T>(0.5);
        let mut links: Vec<Link<T>> = lengths
            .iter()
            .zip(masses)
            .map(|(&l, &m)| Link { len: l, mass: m, com: half * l, inertia: twelfth * m * l * l })
            .collect();
        if n > 0 && tip_mass > T::zero() {
            let last = &mut links[n - 1];
            let (m, l, cr) = (last.mass, last.len, last.com);
            let total = m + tip_mass;
            let com = (m * cr + tip_mass * l) / total;
            let inertia = last.inertia + m * (cr - com) * (cr - com) + tip_mass * (l - com) * (l - com);
            *last = Link { len: l, mass: total, com, inertia };
        }
        Self { links, gravity }
    }

    pub fn push_point_mass(&mut self, len: T, mass: T) {
        self.links.push(Link { len, mass, com: len, inertia: T::zero() });
    }

    pub fn dof(&self) -> usize {
        self.links.len()
    }

    fn absolute(q: &[T]) -> Vec<T> {
        let mut acc = T::zero();
        q.iter()
            .map(|&v| {
                acc = acc + v;
                acc
            })
            .collect()
    }

    /// Jacobian of the centre of mass of link `k` (2 × n, row-major pair).
    fn com_jacobian(&self, phi: &[T], k: usize) -> Vec<[T; 2]> {
        let n = self.dof();
        let mut jac = vec![[T::zero(); 2]; n];
        for i in 0..=k {
            let li = if i < k { self.links[i].len } else { self.links[k].com };
            let d = e_prime(phi[i]);
            for col in jac.iter_mut().take(i + 1) {
                col[0] = col[0] + li * d[0];
                col[1] = col[1] + li * d[1];
            }
        }
        jac
    }

    /// Generalized gravity forces `Σ J_kᵀ (0, -m_k g)`.
    pub fn gravity_forces(&self, q: &[T]) -> Vec<T> {
        let phi = Self::absolute(q);
        let mut out = vec![T::zero(); self.dof()];
        for k in 0..self.dof() {
            let w = self.links[k].mass * self.gravity;
            for (o, col) in out.iter_mut().zip(self.com_jacobian(&phi, k)) {
                *o = *o - col[1] * w;
            }
        }
        out
    }

    /// Mass matrix and generalized forces from gravity and velocity products.
    pub fn mass_matrix_and_forces(&self, q: &[T], qd: &[T]) -> (Mat<T>, Vec<T>) {
        let n = self.dof();
        let phi = Self::absolute(q);
        let phid = Self::absolute(qd);
        let mut m = Mat::zeros(n, n);
        let mut force = vec![T::zero(); n];
        for k in 0..n {
            let link = &self.links[k];
            let jac = self.com_jacobian(&phi, k);
            let mut bias = [T::zero(); 2];
            for i in 0..=k {
                let li = if i < k { self.links[i].len } else { link.com };
                let d = e(phi[i]);
                let w2 = phid[i] * phid[i];
                bias[0] = bias[0] - li * d[0] * w2;
                bias[1] = bias[1] - li * d[1] * w2;
            }
            for a in 0..n {
                for b in 0..n {
                    let rot = if a <= k && b <= k { link.inertia } else { T::zero() };
                    m[(a, b)] = m[(a, b)] + link.mass * (jac[a][0] * jac[b][0] + jac[a][1] * jac[b][1]) + rot;
                }
                force[a] = force[a]
                    - link.mass * (jac[a][0] * bias[0] + jac[a][1] * bias[1])
                    - jac[a][1] * link.mass * self.gravity;
            }
        }
        (m, force)
    }

    pub fn kinetic_energy(&self, q: &[T], qd: &[T]) -> T {
        let (m, _) = self.mass_matrix_and_forces(q, qd);
        let mv = m.matvec(qd);
        c::<T>(0.5) * qd.iter().zip(&mv).map(|(&a, &b)| a * b).sum::<T>()
    }

    pub fn potential_energy(&self, q: &[T]) -> T {
        let phi = Self::absolute(q);
        let mut y_base = T::zero();
        let mut v = T::zero();
        for (k, link) in self.links.iter().enumerate() {
            let d = e(phi[k]);
            v = v + link.mass * self.gravity * (y_base + link.com * d[1]);
            y_base = y_base + link.len * d[1];
        }
        v
    }

    /// Position and velocity of the distal end of link `k`.
    pub fn point(&self, q: &[T], qd: &[T], k: usize) -> ([T; 2], [T; 2]) {
        let phi = Self::absolute(q);
        let phid = Self::absolute(qd);
        let mut p = [T::zero(); 2];
        let mut v = [T::zero(); 2];
        for i in 0..=k {
            let l = self.links[i].len;
            let d = e(phi[i]);
            let dp = e_prime(phi[i]);
            p[0] = p[0] + l * d[0];
            p[1] = p[1] + l * d[1];
            v[0] = v[0] + l * dp[0] * phid[i];
            v[1] = v[1] + l * dp[1] * phid[i];
        }
        (p, v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gravity_forces_are_minus_potential_gradient() {
        let mut chain = Chain::<f64>::arm(&[0.25, 0.2], &[0.4, 0.3], 0.5, 9.81);
        chain.push_point_mass(0.3, 0.1);
        let q = [0.3, -0.7, 1.1];
        let gf = chain.gravity_forces(&q);
        let h = 1e-6;
        for j in 0..3 {
            let mut qp = q;
            let mut qm = q;
            qp[j] += h;
            qm[j] -= h;
            let fd = -(chain.potential_energy(&qp) - chain.potential_energy(&qm)) / (2.0 * h);
            assert!((fd - gf[j]).abs() < 1e-7, "joint {j}: {fd} vs {}", gf[j]);
        }
    }

    #[test]
    fn single_point_pendulum_mass_matrix() {
        let mut chain = Chain::<f64>::arm(&[], &[], 0.0, 9.81);
        chain.push_point_mass(0.5, 2.0);
        let (m, f) = chain.mass_matrix_and_forces(&[0.4], &[0.0]);
        assert!((m[(0, 0)] - 2.0 * 0.25).abs() < 1e-14);
        assert!((f[0] + 2.0 * 9.81 * 0.5 * 0.4_f64.sin()).abs() < 1e-12);
    }
}
