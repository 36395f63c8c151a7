//! Strictly convex quadratic programs with lower bounds:
//!
//! ```text
//! minimize ½ xᵀ H x + cᵀ x   subject to  x ≥ lb
//! ```
//!
//! Solved by a primal active-set method; a projected-gradient loop takes over
//! if the active set ever cycles.

use crate::error::{usage, Error, Result};
use crate::linalg::{norm_inf, Mat};
use crate::scalar::Real;

/// Outcome of [`solve_bounded_qp`].
#[derive(Clone, Debug)]
pub struct QpSolution<T> {
    pub x: Vec<T>,
    /// Indices sitting on their bound at the solution.
    pub active: Vec<usize>,
    pub iterations: usize,
    /// Natural KKT residual `max_i |min(x_i - lb_i, ∇f_i)|`.
    pub kkt_residual: T,
}

pub fn objective<T: Real>(h: &Mat<T>, c: &[T], x: &[T]) -> T {
    let hx = h.matvec(x);
    x.iter().zip(&hx).zip(c).fold(T::zero(), |s, ((&xi, &hxi), &ci)| s + T::lit(0.5) * xi * hxi + ci * xi)
}

pub fn gradient<T: Real>(h: &Mat<T>, c: &[T], x: &[T]) -> Vec<T> {
    let mut g = h.matvec(x);
    for (gi, &ci) in g.iter_mut().zip(c) {
        *gi = *gi + ci;
    }
    g
}

pub fn kkt_residual<T: Real>(h: &Mat<T>, c: &[T], lb: &[T], x: &[T]) -> T {
    let g = gradient(h, c, x);
    x.iter().zip(lb).zip(&g).fold(T::zero(), |m, ((&xi, &li), &gi)| m.max((xi - li).min(gi).abs()))
}

pub fn solve_bounded_qp<T: Real>(h: &Mat<T>, c: &[T], lb: &[T]) -> Result<QpSolution<T>> {
    let n = c.len();
    if h.rows() != n || h.cols() != n || lb.len() != n {
        return usage(format!(
            "qp dimensions disagree: H is {}x{}, c has {}, lb has {}",
            h.rows(),
            h.cols(),
            n,
            lb.len()
        ));
    }
    if n == 0 {
        return Ok(QpSolution { x: vec![], active: vec![], iterations: 0, kkt_residual: T::zero() });
    }
    let scale = T::one() + h.max_abs() * norm_inf(lb).max(T::one()) + norm_inf(c);
    let tol = scale * T::epsilon() * T::lit(64.0);

    let mut x = lb.to_vec();
    let mut active = vec![true; n];
    let max_iter = 20 * n + 50;
    for it in 0..max_iter {
        let g = gradient(h, c, &x);
        let free: Vec<usize> = (0..n).filter(|&i| !active[i]).collect();
        let step = if free.is_empty() {
            Some(vec![])
        } else {
            let hff = Mat::from_vec(
                free.len(),
                free.len(),
                free.iter().flat_map(|&i| free.iter().map(move |&j| (i, j))).map(|(i, j)| h[(i, j)]).collect(),
            );
            let rhs: Vec<T> = free.iter().map(|&i| -g[i]).collect();
            hff.solve(&rhs)
        };
        let Some(p_free) = step else {
            break;
        };
        let p_norm = norm_inf(&p_free);
        let x_scale = T::one() + norm_inf(&x);
        if p_norm <= T::epsilon() * T::lit(16.0) * x_scale {
            // Stationary on the current face: check multipliers of the active bounds.
            let worst =
                (0..n).filter(|&i| active[i]).map(|i| (i, g[i])).fold(None::<(usize, T)>, |acc, cur| match acc {
                    Some(a) if a.1 <= cur.1 => Some(a),
                    _ => Some(cur),
                });
            match worst {
                Some((i, gi)) if gi < -tol => active[i] = false,
                _ => return Ok(finish(h, c, lb, x, it + 1)),
            }
            continue;
        }
        let mut alpha = T::one();
        let mut blocking = None;
        for (k, &i) in free.iter().enumerate() {
            let pk = p_free[k];
            if pk < T::zero() {
                let a = (lb[i] - x[i]) / pk;
                if a < alpha {
                    alpha = a.max(T::zero());
                    blocking = Some(i);
                }
            }
        }
        for (k, &i) in free.iter().enumerate() {
            x[i] = x[i] + alpha * p_free[k];
        }
        if let Some(i) = blocking {
            x[i] = lb[i];
            active[i] = true;
        }
    }
    projected_gradient_fallback(h, c, lb, x)
}

fn finish<T: Real>(h: &Mat<T>, c: &[T], lb: &[T], x: Vec<T>, iterations: usize) -> QpSolution<T> {
    let active = x.iter().zip(lb).enumerate().filter(|(_, (a, b))| a == b).map(|(i, _)| i).collect();
    let kkt_residual = kkt_residual(h, c, lb, &x);
    QpSolution { x, active, iterations, kkt_residual }
}

fn projected_gradient_fallback<T: Real>(h: &Mat<T>, c: &[T], lb: &[T], mut x: Vec<T>) -> Result<QpSolution<T>> {
    // Gershgorin bound on the largest eigenvalue gives a safe step.
    let n = c.len();
    let lip = (0..n)
        .map(|i| h.row(i).iter().fold(T::zero(), |s, &v| s + v.abs()))
        .fold(T::zero(), T::max)
        .max(T::min_positive_value());
    let step = T::one() / lip;
    let max_iter = 2_000_000;
    for it in 0..max_iter {
        let g = gradient(h, c, &x);
        let mut moved = T::zero();
        for i in 0..n {
            let xi = (x[i] - step * g[i]).max(lb[i]);
            moved = moved.max((xi - x[i]).abs());
            x[i] = xi;
        }
        if moved <= T::epsilon() * (T::one() + norm_inf(&x)) {
            return Ok(finish(h, c, lb, x, it + 1));
        }
    }
    let residual = kkt_residual(h, c, lb, &x).to_f64_lossy();
    Err(Error::Solver { iterations: max_iter, residual })
}
