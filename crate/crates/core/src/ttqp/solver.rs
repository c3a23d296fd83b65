//! Convex quadratic programs with nonnegativity bounds:
//! minimize `(1/2) x'Qx + c'x` subject to `x >= 0`, `Q` positive definite.
//!
//! The default method is a primal active-set iteration in the style of
//! Lawson–Hanson NNLS: it solves the equality-constrained problem on the
//! current free set with a Cholesky factorization, steps back to the
//! feasible region when a free variable would turn negative, and frees the
//! bound variable with the most negative gradient until the KKT conditions
//! hold. It terminates in finitely many steps and is exact up to rounding.
//!
//! A diagonally preconditioned accelerated projected-gradient method is
//! available as an alternative. Both report the same KKT residual.

use super::linalg::{dot, DenseMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QpMethod {
    #[default]
    ActiveSet,
    ProjectedGradient,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SolveFailure {
    NotPositiveDefinite,
    NoConvergence { best: Vec<f64>, residual: f64 },
}

/// Largest violation of the KKT conditions for the bound-constrained
/// problem: `|g_i|` on positive coordinates, `max(0, -g_i)` on zeros.
pub fn kkt_residual(q: &DenseMatrix, c: &[f64], x: &[f64]) -> f64 {
    let g = gradient(q, c, x);
    x.iter()
        .zip(&g)
        .map(|(&xi, &gi)| if xi > 0.0 { gi.abs() } else { (-gi).max(0.0) })
        .fold(0.0, f64::max)
}

pub fn objective(q: &DenseMatrix, c: &[f64], x: &[f64]) -> f64 {
    0.5 * q.quad_form(x) + dot(c, x)
}

fn gradient(q: &DenseMatrix, c: &[f64], x: &[f64]) -> Vec<f64> {
    let mut g = q.mul_vec(x);
    for (gi, ci) in g.iter_mut().zip(c) {
        *gi += ci;
    }
    g
}

pub fn solve(
    q: &DenseMatrix,
    c: &[f64],
    method: QpMethod,
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>, SolveFailure> {
    if q.cholesky().is_none() {
        return Err(SolveFailure::NotPositiveDefinite);
    }
    match method {
        QpMethod::ActiveSet => active_set(q, c, tol, max_iter),
        QpMethod::ProjectedGradient => projected_gradient(q, c, tol, max_iter),
    }
}

/// Minimizer over the free coordinates `free`, all others pinned at zero.
fn face_minimizer(q: &DenseMatrix, c: &[f64], free: &[usize]) -> Result<Vec<f64>, SolveFailure> {
    let n = c.len();
    let mut z = vec![0.0; n];
    if free.is_empty() {
        return Ok(z);
    }
    let sub = q.select(free);
    let chol = sub.cholesky().ok_or(SolveFailure::NotPositiveDefinite)?;
    let rhs: Vec<f64> = free.iter().map(|&i| -c[i]).collect();
    let mut sol = chol.solve(&rhs);
    // One step of iterative refinement.
    let r: Vec<f64> = sub.mul_vec(&sol).iter().zip(&rhs).map(|(a, b)| b - a).collect();
    for (s, d) in sol.iter_mut().zip(chol.solve(&r)) {
        *s += d;
    }
    for (&i, v) in free.iter().zip(sol) {
        z[i] = v;
    }
    Ok(z)
}

fn active_set(q: &DenseMatrix, c: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>, SolveFailure> {
    let n = c.len();
    let all: Vec<usize> = (0..n).collect();

    // Warm start: the unconstrained minimizer restricted to its positive part.
    let mut is_free = vec![false; n];
    let mut x = vec![0.0; n];
    let z = face_minimizer(q, c, &all)?;
    if z.iter().all(|v| *v > 0.0) {
        x = z;
        is_free.iter_mut().for_each(|f| *f = true);
    } else {
        let free: Vec<usize> = all.iter().copied().filter(|&i| z[i] > 0.0).collect();
        let z = face_minimizer(q, c, &free)?;
        if free.iter().all(|&i| z[i] > 0.0) {
            x = z;
            for &i in &free {
                is_free[i] = true;
            }
        }
    }

    let mut iterations = 0;
    loop {
        let g = gradient(q, c, &x);
        let entering = (0..n)
            .filter(|&i| !is_free[i] && g[i] < -tol)
            .min_by(|&a, &b| g[a].total_cmp(&g[b]));
        let Some(entering) = entering else {
            let residual = kkt_residual(q, c, &x);
            return if residual <= tol {
                Ok(x)
            } else {
                Err(SolveFailure::NoConvergence { best: x, residual })
            };
        };
        is_free[entering] = true;

        loop {
            iterations += 1;
            if iterations > max_iter {
                let residual = kkt_residual(q, c, &x);
                return Err(SolveFailure::NoConvergence { best: x, residual });
            }
            let free: Vec<usize> = (0..n).filter(|&i| is_free[i]).collect();
            let z = face_minimizer(q, c, &free)?;
            if free.iter().all(|&i| z[i] > 0.0) {
                x = z;
                break;
            }
            // Step from x toward z until the first free coordinate hits zero.
            let mut alpha = 1.0f64;
            for &i in &free {
                if z[i] <= 0.0 {
                    let denom = x[i] - z[i];
                    if denom > 0.0 {
                        alpha = alpha.min(x[i] / denom);
                    } else {
                        alpha = 0.0;
                    }
                }
            }
            for &i in &free {
                x[i] += alpha * (z[i] - x[i]);
            }
            let mut released = false;
            for &i in &free {
                if x[i] <= 0.0 || (z[i] <= 0.0 && x[i] <= f64::EPSILON * (1.0 + x[i].abs())) {
                    x[i] = 0.0;
                    is_free[i] = false;
                    released = true;
                }
            }
            if !released {
                // Rounding kept every coordinate positive; pin the blocking one.
                if let Some(&i) = free
                    .iter()
                    .filter(|&&i| z[i] <= 0.0)
                    .min_by(|&&a, &&b| x[a].total_cmp(&x[b]))
                {
                    x[i] = 0.0;
                    is_free[i] = false;
                }
            }
        }
    }
}

fn projected_gradient(
    q: &DenseMatrix,
    c: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>, SolveFailure> {
    let n = c.len();
    // Jacobi scaling: work with y = D^{1/2} x so the scaled Hessian has unit diagonal.
    let d: Vec<f64> = (0..n).map(|i| q[(i, i)].sqrt()).collect();
    let mut qs = DenseMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            qs[(i, j)] = q[(i, j)] / (d[i] * d[j]);
        }
    }
    let cs: Vec<f64> = c.iter().zip(&d).map(|(ci, di)| ci / di).collect();

    // Largest eigenvalue by power iteration, padded for safety.
    let mut v = vec![1.0; n];
    let mut lmax = 1.0;
    for _ in 0..200 {
        let w = qs.mul_vec(&v);
        let norm = dot(&w, &w).sqrt();
        if norm == 0.0 {
            break;
        }
        lmax = norm / dot(&v, &v).sqrt();
        v = w.iter().map(|x| x / norm).collect();
    }
    let step = 1.0 / (1.01 * lmax);

    let to_x = |y: &[f64]| -> Vec<f64> { y.iter().zip(&d).map(|(yi, di)| yi / di).collect() };
    let mut y = vec![0.0; n];
    let mut y_prev = y.clone();
    let mut momentum = 1.0f64;
    for it in 0..max_iter {
        let next_momentum = (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt()) / 2.0;
        let beta = (momentum - 1.0) / next_momentum;
        let w: Vec<f64> = y.iter().zip(&y_prev).map(|(a, b)| a + beta * (a - b)).collect();
        let g = gradient(&qs, &cs, &w);
        let y_next: Vec<f64> = w.iter().zip(&g).map(|(wi, gi)| (wi - step * gi).max(0.0)).collect();
        // Restart momentum when the objective goes up.
        if objective(&qs, &cs, &y_next) > objective(&qs, &cs, &y) {
            momentum = 1.0;
            y_prev = y.clone();
        } else {
            momentum = next_momentum;
            y_prev = std::mem::replace(&mut y, y_next);
        }
        if it % 16 == 0 && kkt_residual(q, c, &to_x(&y)) <= tol {
            return Ok(to_x(&y));
        }
    }
    let x = to_x(&y);
    let residual = kkt_residual(q, c, &x);
    if residual <= tol {
        Ok(x)
    } else {
        Err(SolveFailure::NoConvergence { best: x, residual })
    }
}
