//! Derivative-free maximisation and finite-difference Hessians.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapOptions {
    /// Simplex iteration cap.
    pub max_iter: usize,
    /// Convergence threshold on the objective spread and per-pass change.
    pub ftol: f64,
    /// Initial simplex edge length.
    pub initial_step: f64,
    /// Cap on coordinate-polish passes.
    pub max_polish_passes: usize,
}

impl Default for MapOptions {
    fn default() -> Self {
        Self { max_iter: 2000, ftol: 1e-8, initial_step: 0.5, max_polish_passes: 200 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapResult {
    pub theta: Vec<f64>,
    pub value: f64,
    /// False when the iteration cap was reached first.
    pub converged: bool,
    pub iterations: usize,
    pub evaluations: usize,
}

struct Counted<'a, F> {
    f: &'a F,
    evals: usize,
}

impl<F: Fn(&[f64]) -> f64> Counted<'_, F> {
    fn eval(&mut self, x: &[f64]) -> Result<f64> {
        self.evals += 1;
        let v = (self.f)(x);
        if v.is_nan() || v == f64::INFINITY {
            return Err(Error::NonFinite(format!("objective returned {v} at {x:?}")));
        }
        Ok(v)
    }
}

/// Local maximiser of `log_post`: Nelder–Mead simplex search followed by a
/// coordinate-wise parabolic polish.
pub fn find_map<F: Fn(&[f64]) -> f64>(log_post: &F, init: &[f64], opts: &MapOptions) -> Result<MapResult> {
    let mut f = Counted { f: log_post, evals: 0 };
    let f0 = f.eval(init)?;
    if !f0.is_finite() {
        return Err(Error::NonFinite(format!("objective is {f0} at the initial point")));
    }
    let n = init.len();
    if n == 0 {
        return Ok(MapResult { theta: vec![], value: f0, converged: true, iterations: 0, evaluations: 1 });
    }

    // minimise the negated objective
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((init.to_vec(), -f0));
    for i in 0..n {
        let mut x = init.to_vec();
        let step = opts.initial_step * x[i].abs().max(1.0);
        x[i] += step;
        let mut v = -f.eval(&x)?;
        if !v.is_finite() {
            x[i] = init[i] - step;
            v = -f.eval(&x)?;
        }
        simplex.push((x, v));
    }

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        if worst.is_finite() && (worst - best).abs() < opts.ftol {
            converged = true;
            break;
        }
        iterations += 1;
        let centroid: Vec<f64> = (0..n).map(|j| simplex[..n].iter().map(|p| p.0[j]).sum::<f64>() / n as f64).collect();
        let along = |t: f64| -> Vec<f64> {
            centroid.iter().zip(&simplex[n].0).map(|(c, w)| c + t * (c - w)).collect()
        };
        let xr = along(alpha);
        let fr = -f.eval(&xr)?;
        if fr < simplex[0].1 {
            let xe = along(gamma);
            let fe = -f.eval(&xe)?;
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < simplex[n].1 {
            let xc = along(rho * alpha);
            let fc = -f.eval(&xc)?;
            (xc, fc)
        } else {
            let xc = along(-rho);
            let fc = -f.eval(&xc)?;
            (xc, fc)
        };
        if fc < simplex[n].1.min(fr) {
            simplex[n] = (xc, fc);
            continue;
        }
        let x0 = simplex[0].0.clone();
        for p in simplex.iter_mut().skip(1) {
            for j in 0..n {
                p.0[j] = x0[j] + sigma * (p.0[j] - x0[j]);
            }
            p.1 = -f.eval(&p.0)?;
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (mut x, neg) = simplex.swap_remove(0);
    let mut fx = -neg;

    // coordinate polish: parabolic steps with shrinking brackets
    let mut h: Vec<f64> = x.iter().map(|v| 1e-2 * v.abs().max(1.0)).collect();
    let scale_of = |v: f64| v.abs().max(1.0);
    for _ in 0..opts.max_polish_passes {
        let start = fx;
        let mut max_move = 0.0f64;
        for i in 0..n {
            let xi = x[i];
            x[i] = xi + h[i];
            let fp = f.eval(&x)?;
            x[i] = xi - h[i];
            let fm = f.eval(&x)?;
            x[i] = xi;
            let curv = fp + fm - 2.0 * fx;
            let mut cand = [(xi, fx), (xi + h[i], fp), (xi - h[i], fm)];
            if curv < 0.0 && curv.is_finite() {
                let delta = h[i] * (fp - fm) / (-2.0 * curv);
                if delta.abs() <= 10.0 * h[i] {
                    x[i] = xi + delta;
                    let fv = f.eval(&x)?;
                    x[i] = xi;
                    cand[0] = if fv > fx { (xi + delta, fv) } else { (xi, fx) };
                }
            }
            let (bx, bf) = cand.iter().copied().fold((xi, fx), |acc, c| if c.1 > acc.1 { c } else { acc });
            max_move = max_move.max((bx - xi).abs());
            x[i] = bx;
            fx = bf;
            // track the size of the last move
            h[i] = (4.0 * (bx - xi).abs()).clamp(1e-5 * scale_of(bx), 0.1 * scale_of(bx));
        }
        if (fx - start).abs() < opts.ftol && max_move < 1e-8 * (1.0 + x.iter().fold(0.0f64, |m, v| m.max(v.abs()))) {
            break;
        }
    }

    Ok(MapResult { theta: x, value: fx, converged, iterations, evaluations: f.evals })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HessianResult {
    /// Hessian of `-log_post`.
    pub matrix: DMatrix<f64>,
    /// True when eigenvalues were floored to make the matrix positive definite.
    pub floored: bool,
}

/// Smallest eigenvalue kept when projecting a Hessian to positive definite.
pub const EIGEN_FLOOR: f64 = 1e-8;

/// Central-difference Hessian of `-log_post` at `theta`, with per-coordinate
/// steps `max(1e-4, 1e-4 |theta_i|)`, symmetrised and floored to be
/// positive definite.
pub fn hessian_fd<F: Fn(&[f64]) -> f64>(log_post: &F, theta: &[f64]) -> Result<HessianResult> {
    let n = theta.len();
    let h: Vec<f64> = theta.iter().map(|t| (1e-4 * t.abs()).max(1e-4)).collect();
    let mut x = theta.to_vec();
    let eval = |x: &[f64]| -> Result<f64> {
        let v = log_post(x);
        if v.is_finite() {
            Ok(-v)
        } else {
            Err(Error::NonFinite(format!("log posterior {v} inside the Hessian stencil at {x:?}")))
        }
    };
    let f0 = eval(&x)?;
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        x[i] = theta[i] + h[i];
        let fp = eval(&x)?;
        x[i] = theta[i] - h[i];
        let fm = eval(&x)?;
        x[i] = theta[i];
        m[(i, i)] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
        for j in 0..i {
            let mut corner = |si: f64, sj: f64| -> Result<f64> {
                x[i] = theta[i] + si * h[i];
                x[j] = theta[j] + sj * h[j];
                let v = eval(&x);
                x[i] = theta[i];
                x[j] = theta[j];
                v
            };
            let v = (corner(1.0, 1.0)? - corner(1.0, -1.0)? - corner(-1.0, 1.0)? + corner(-1.0, -1.0)?) / (4.0 * h[i] * h[j]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    let m = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(m.clone());
    if eig.eigenvalues.iter().all(|&l| l >= EIGEN_FLOOR) {
        return Ok(HessianResult { matrix: m, floored: false });
    }
    let floored = eig.eigenvalues.map(|l| l.max(EIGEN_FLOOR));
    let q = &eig.eigenvectors;
    let p = q * DMatrix::from_diagonal(&floored) * q.transpose();
    Ok(HessianResult { matrix: (&p + p.transpose()) * 0.5, floored: true })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_normal_mode() {
        let r = find_map(&|t: &[f64]| -0.5 * t[0] * t[0], &[1.7], &MapOptions::default()).unwrap();
        assert!(r.theta[0].abs() < 1e-6, "{:?}", r);
        assert!(r.converged);
    }

    #[test]
    fn conjugate_normal_mode() {
        // prior N(1, 2^2), five observations with unit variance
        let y = [0.3, 1.1, -0.4, 2.2, 0.9];
        let lp = |t: &[f64]| -0.5 * ((t[0] - 1.0) / 2.0).powi(2) - 0.5 * y.iter().map(|v| (v - t[0]).powi(2)).sum::<f64>();
        let post_mean = (1.0 / 4.0 + y.iter().sum::<f64>()) / (0.25 + 5.0);
        let r = find_map(&lp, &[0.0], &MapOptions::default()).unwrap();
        assert!((r.theta[0] - post_mean).abs() < 1e-6);
    }

    #[test]
    fn correlated_quadratic_mode() {
        let lp = |t: &[f64]| {
            let (a, b, c) = (t[0] - 1.0, t[1] + 2.0, t[2] - 0.5);
            -(2.0 * a * a + b * b + 1.5 * c * c + 1.2 * a * b - 0.4 * b * c)
        };
        let r = find_map(&lp, &[0.0, 0.0, 0.0], &MapOptions::default()).unwrap();
        for (v, e) in r.theta.iter().zip([1.0, -2.0, 0.5]) {
            assert!((v - e).abs() < 1e-6, "{:?}", r.theta);
        }
    }

    #[test]
    fn nan_objective_errors() {
        assert!(find_map(&|_: &[f64]| f64::NAN, &[0.0], &MapOptions::default()).is_err());
        assert!(find_map(&|_: &[f64]| f64::NEG_INFINITY, &[0.0], &MapOptions::default()).is_err());
    }

    #[test]
    fn iteration_cap_flags_non_convergence() {
        let opts = MapOptions { max_iter: 3, max_polish_passes: 0, ..Default::default() };
        let lp = |t: &[f64]| -(t[0] - 50.0).powi(2) - (t[1] + 30.0).powi(2);
        let r = find_map(&lp, &[0.0, 0.0], &opts).unwrap();
        assert!(!r.converged);
        assert_eq!(r.iterations, 3);
    }

    #[test]
    fn identity_hessian() {
        let h = hessian_fd(&|t: &[f64]| -0.5 * (t[0] * t[0] + t[1] * t[1]), &[0.3, -0.2]).unwrap();
        assert!((h.matrix.clone() - DMatrix::identity(2, 2)).amax() < 1e-4);
        assert!(!h.floored);
    }

    #[test]
    fn scaled_hessian() {
        let h = hessian_fd(&|t: &[f64]| -0.5 * (t[0] / 2.0).powi(2), &[0.0]).unwrap();
        assert!((h.matrix[(0, 0)] - 0.25).abs() < 1e-4);
    }

    #[test]
    fn indefinite_hessian_is_floored() {
        let h = hessian_fd(&|t: &[f64]| 0.5 * t[0] * t[0] - 0.5 * t[1] * t[1], &[0.0, 0.0]).unwrap();
        assert!(h.floored);
        let eig = SymmetricEigen::new(h.matrix).eigenvalues;
        assert!(eig.iter().all(|&l| l >= EIGEN_FLOOR * 0.999));
    }

    #[test]
    fn non_finite_stencil_errors() {
        let lp = |t: &[f64]| if t[0] > 0.0 { f64::NEG_INFINITY } else { -t[0] * t[0] };
        assert!(hessian_fd(&lp, &[0.0]).is_err());
    }
}
