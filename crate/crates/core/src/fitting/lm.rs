//! Box-constrained Levenberg-Marquardt for small least-squares problems.
//!
//! Parameters sitting on a bound whose gradient points outward are frozen
//! for the step (a simple active-set rule); the trial point is projected
//! back into the box.

use nalgebra::{DMatrix, DVector};

pub(crate) trait Problem {
    fn n_residuals(&self) -> usize;
    fn residuals(&self, p: &[f64], out: &mut [f64]);
    fn jacobian(&self, p: &[f64], out: &mut DMatrix<f64>);
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LmOptions {
    pub max_iter: usize,
    pub rtol: f64,
    pub xtol: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct LmOutcome {
    pub params: Vec<f64>,
    pub rss: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

fn clamp_into(p: &mut [f64], bounds: &[(f64, f64)]) {
    for (v, &(lo, hi)) in p.iter_mut().zip(bounds) {
        *v = v.clamp(lo, hi);
    }
}

pub(crate) fn minimize<P: Problem>(problem: &P, start: &[f64], bounds: &[(f64, f64)], opts: LmOptions) -> LmOutcome {
    let np = start.len();
    let m = problem.n_residuals();
    let mut x = start.to_vec();
    clamp_into(&mut x, bounds);

    let mut r = vec![0.0; m];
    problem.residuals(&x, &mut r);
    let mut f = sum_sq(&r);
    if !f.is_finite() {
        return LmOutcome { params: x, rss: f, iterations: 0, converged: false };
    }

    let mut jac = DMatrix::zeros(m, np);
    let mut lambda = 1e-3;
    let mut trial = vec![0.0; np];
    let mut r_trial = vec![0.0; m];

    for iter in 0..opts.max_iter {
        if f == 0.0 {
            return LmOutcome { params: x, rss: f, iterations: iter, converged: true };
        }
        problem.jacobian(&x, &mut jac);
        let rv = DVector::from_column_slice(&r);
        let g = jac.transpose() * &rv;
        let a = jac.transpose() * &jac;

        let free: Vec<usize> = (0..np)
            .filter(|&i| {
                let (lo, hi) = bounds[i];
                !((x[i] <= lo && g[i] > 0.0) || (x[i] >= hi && g[i] < 0.0))
            })
            .collect();
        if free.is_empty() || free.iter().all(|&i| g[i] == 0.0) {
            return LmOutcome { params: x, rss: f, iterations: iter, converged: true };
        }

        let nf = free.len();
        loop {
            let mut lhs = DMatrix::zeros(nf, nf);
            let mut rhs = DVector::zeros(nf);
            for (ii, &i) in free.iter().enumerate() {
                rhs[ii] = -g[i];
                for (jj, &j) in free.iter().enumerate() {
                    lhs[(ii, jj)] = a[(i, j)];
                }
                lhs[(ii, ii)] += lambda * a[(i, i)].max(1e-12);
            }
            let step = lhs.lu().solve(&rhs);
            let Some(step) = step else {
                lambda *= 4.0;
                if lambda > 1e16 {
                    return LmOutcome { params: x, rss: f, iterations: iter, converged: true };
                }
                continue;
            };

            trial.copy_from_slice(&x);
            for (ii, &i) in free.iter().enumerate() {
                trial[i] += step[ii];
            }
            clamp_into(&mut trial, bounds);
            problem.residuals(&trial, &mut r_trial);
            let f_trial = sum_sq(&r_trial);

            let step_norm: f64 = x.iter().zip(&trial).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let x_norm: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();

            if f_trial.is_finite() && f_trial < f {
                let rel = (f - f_trial) / f;
                std::mem::swap(&mut x, &mut trial);
                std::mem::swap(&mut r, &mut r_trial);
                f = f_trial;
                lambda = (lambda / 3.0).max(1e-15);
                if rel < opts.rtol || step_norm < opts.xtol * (x_norm + opts.xtol) {
                    return LmOutcome { params: x, rss: f, iterations: iter + 1, converged: true };
                }
                break;
            }

            lambda *= 4.0;
            // no improving step exists at machine precision
            if lambda > 1e16 || step_norm < opts.xtol * 1e-3 * (x_norm + opts.xtol) {
                return LmOutcome { params: x, rss: f, iterations: iter + 1, converged: true };
            }
        }
    }

    LmOutcome { params: x, rss: f, iterations: opts.max_iter, converged: false }
}
