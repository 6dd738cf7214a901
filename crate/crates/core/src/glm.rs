//! Maximum-likelihood solvers for the node-wise regressions: QR-based
//! least squares for Gaussian nodes and Newton/IRLS with canonical links
//! for Bernoulli (logit) and Poisson (log) nodes, plus the degrees-of-
//! freedom trace and loss evaluation used by the estimators.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::dataset::Family;
use crate::error::{Error, Result};

const IRLS_MAX_ITER: usize = 100;
const IRLS_GRAD_TOL: f64 = 1e-8;
const ETA_CLAMP: f64 = 250.0;
const MIN_WEIGHT: f64 = 1e-10;

/// Outcome of one regression fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub coefficients: DVector<f64>,
    pub converged: bool,
    /// SSE for least squares, exponential-family negative log-likelihood
    /// (constant-dropped) for IRLS.
    pub objective: f64,
    pub irls_iters: usize,
}

/// Least-squares solve of a tall design via Householder QR.
///
/// Rank deficiency is reported with the index of the first dependent
/// column.
pub fn fit_ols(design: &DMatrix<f64>, outcome: &DVector<f64>) -> Result<FitResult> {
    let coefficients = qr_solve(design, outcome)?;
    let resid = outcome - design * &coefficients;
    Ok(FitResult {
        objective: resid.norm_squared(),
        coefficients,
        converged: true,
        irls_iters: 0,
    })
}

fn qr_solve(design: &DMatrix<f64>, outcome: &DVector<f64>) -> Result<DVector<f64>> {
    let (m, n) = design.shape();
    if m < n {
        return Err(Error::SingularDesign { column: m });
    }
    let qr = design.clone().qr();
    let mut qtb = outcome.clone();
    qr.q_tr_mul(&mut qtb);
    let r = qr.unpack_r();
    let max_diag = (0..n).map(|i| r[(i, i)].abs()).fold(0.0f64, f64::max);
    let tol = max_diag * (m.max(n) as f64) * f64::EPSILON;
    for i in 0..n {
        if r[(i, i)].abs() <= tol {
            return Err(Error::SingularDesign { column: i });
        }
    }
    let head = qtb.rows(0, n).into_owned();
    r.solve_upper_triangular(&head)
        .ok_or(Error::SingularDesign { column: 0 })
}

/// Log-partition function B of the canonical exponential family.
fn log_partition(family: Family, eta: f64) -> f64 {
    match family {
        Family::Gaussian => 0.5 * eta * eta,
        Family::Bernoulli => {
            // softplus, stable on both tails
            eta.max(0.0) + (-eta.abs()).exp().ln_1p()
        }
        Family::Poisson => eta.clamp(-ETA_CLAMP, ETA_CLAMP).exp(),
    }
}

/// Mean function B'.
fn mean_fn(family: Family, eta: f64) -> f64 {
    match family {
        Family::Gaussian => eta,
        Family::Bernoulli => 1.0 / (1.0 + (-eta).exp()),
        Family::Poisson => eta.clamp(-ETA_CLAMP, ETA_CLAMP).exp(),
    }
}

/// Variance function B''.
pub fn variance_fn(family: Family, eta: f64) -> f64 {
    match family {
        Family::Gaussian => 1.0,
        Family::Bernoulli => {
            let mu = mean_fn(Family::Bernoulli, eta);
            mu * (1.0 - mu)
        }
        Family::Poisson => mean_fn(Family::Poisson, eta),
    }
}

/// Exponential-family negative log-likelihood sum(B(eta) - y*eta) with the
/// carrier term dropped; valid for non-integer working responses.
pub fn exp_family_nll(
    family: Family,
    design: &DMatrix<f64>,
    outcome: &DVector<f64>,
    coefficients: &DVector<f64>,
) -> f64 {
    let eta = design * coefficients;
    eta.iter()
        .zip(outcome.iter())
        .map(|(&e, &y)| log_partition(family, e) - y * e)
        .sum()
}

/// The loss evaluated by the stopping rules: SSE for Gaussian outcomes,
/// constant-dropped negative log-likelihood otherwise.
pub fn negloglik(
    family: Family,
    design: &DMatrix<f64>,
    outcome: &DVector<f64>,
    coefficients: &DVector<f64>,
) -> f64 {
    match family {
        Family::Gaussian => {
            let resid = outcome - design * coefficients;
            resid.norm_squared()
        }
        _ => exp_family_nll(family, design, outcome, coefficients),
    }
}

/// Newton/IRLS fit with the canonical link, step-halving on objective
/// increase. Returns the last iterate with `converged = false` instead of
/// failing when separation or divergence stalls the gradient.
pub fn fit_irls(
    design: &DMatrix<f64>,
    outcome: &DVector<f64>,
    family: Family,
) -> Result<FitResult> {
    if family == Family::Gaussian {
        return fit_ols(design, outcome);
    }
    let (m, n) = design.shape();
    let mut beta = DVector::zeros(n);
    let mut objective = exp_family_nll(family, design, outcome, &beta);
    let mut converged = false;
    let mut iters = 0;

    let mut weighted = DMatrix::zeros(m, n);
    for it in 0..IRLS_MAX_ITER {
        iters = it + 1;
        let eta = design * &beta;
        let mut grad_inf = 0.0f64;
        let mut z = DVector::zeros(m);
        for i in 0..m {
            let w = variance_fn(family, eta[i]).max(MIN_WEIGHT);
            let mu = mean_fn(family, eta[i]);
            let sw = w.sqrt();
            for c in 0..n {
                weighted[(i, c)] = sw * design[(i, c)];
            }
            z[i] = sw * (eta[i] + (outcome[i] - mu) / w);
        }
        // gradient of the NLL is X'(mu - y)
        let mu_minus_y = eta.map_with_location(|i, _, e| mean_fn(family, e) - outcome[i]);
        let grad = design.transpose() * mu_minus_y;
        for g in grad.iter() {
            grad_inf = grad_inf.max(g.abs());
        }
        if grad_inf < IRLS_GRAD_TOL {
            converged = true;
            break;
        }

        let mut candidate = qr_solve(&weighted, &z)?;
        let mut cand_obj = exp_family_nll(family, design, outcome, &candidate);
        let mut halvings = 0;
        while !cand_obj.is_finite()
            || (cand_obj > objective + 1e-12 * objective.abs().max(1.0) && halvings < 30)
        {
            candidate = (&candidate + &beta) * 0.5;
            cand_obj = exp_family_nll(family, design, outcome, &candidate);
            halvings += 1;
        }
        if (objective - cand_obj).abs() < 1e-14 * objective.abs().max(1.0) && halvings >= 30 {
            break; // stalled
        }
        beta = candidate;
        objective = cand_obj;
    }

    Ok(FitResult {
        coefficients: beta,
        converged,
        objective,
        irls_iters: iters,
    })
}

/// Ridge-penalized fit, used to seed the iteration and as the consistent
/// reference estimate for the adaptive lasso. Gaussian solves augment the
/// design with sqrt(kappa) I rows; GLM families add kappa I to each Newton
/// system.
pub fn fit_ridge(
    design: &DMatrix<f64>,
    outcome: &DVector<f64>,
    family: Family,
    kappa: f64,
) -> Result<FitResult> {
    let (m, n) = design.shape();
    let sk = kappa.sqrt();
    let stack = |w: Option<(&DMatrix<f64>, &DVector<f64>)>| -> (DMatrix<f64>, DVector<f64>) {
        let (base, y) = w.unwrap_or((design, outcome));
        let mut d = DMatrix::zeros(m + n, n);
        d.rows_mut(0, m).copy_from(base);
        for i in 0..n {
            d[(m + i, i)] = sk;
        }
        let mut o = DVector::zeros(m + n);
        o.rows_mut(0, m).copy_from(y);
        (d, o)
    };

    if family == Family::Gaussian {
        let (d, o) = stack(None);
        let coefficients = qr_solve(&d, &o)?;
        let resid = outcome - design * &coefficients;
        return Ok(FitResult {
            objective: resid.norm_squared() + kappa * coefficients.norm_squared(),
            coefficients,
            converged: true,
            irls_iters: 0,
        });
    }

    let penalized = |beta: &DVector<f64>| {
        exp_family_nll(family, design, outcome, beta) + 0.5 * kappa * beta.norm_squared()
    };
    let mut beta = DVector::zeros(n);
    let mut objective = penalized(&beta);
    let mut converged = false;
    let mut iters = 0;
    let mut weighted = DMatrix::zeros(m, n);
    for it in 0..IRLS_MAX_ITER {
        iters = it + 1;
        let eta = design * &beta;
        let mut z = DVector::zeros(m);
        for i in 0..m {
            let w = variance_fn(family, eta[i]).max(MIN_WEIGHT);
            let mu = mean_fn(family, eta[i]);
            let sw = w.sqrt();
            for c in 0..n {
                weighted[(i, c)] = sw * design[(i, c)];
            }
            z[i] = sw * (eta[i] + (outcome[i] - mu) / w);
        }
        let mu_minus_y = eta.map_with_location(|i, _, e| mean_fn(family, e) - outcome[i]);
        let grad = design.transpose() * mu_minus_y + kappa * &beta;
        if grad.amax() < IRLS_GRAD_TOL {
            converged = true;
            break;
        }
        let (d, o) = stack(Some((&weighted, &z)));
        let mut candidate = qr_solve(&d, &o)?;
        let mut cand_obj = penalized(&candidate);
        let mut halvings = 0;
        while !cand_obj.is_finite()
            || (cand_obj > objective + 1e-12 * objective.abs().max(1.0) && halvings < 30)
        {
            candidate = (&candidate + &beta) * 0.5;
            cand_obj = penalized(&candidate);
            halvings += 1;
        }
        beta = candidate;
        objective = cand_obj;
    }
    Ok(FitResult {
        coefficients: beta,
        converged,
        objective,
        irls_iters: iters,
    })
}

/// Degrees of freedom: trace of the observed-row hat matrix on the
/// augmented design, trace(X_obs (X'X)^-1 X_obs').
pub fn hat_trace_df(design: &DMatrix<f64>, obs_rows: usize) -> Result<f64> {
    let gram = design.transpose() * design;
    let obs = design.rows(0, obs_rows);
    let gram_obs = obs.transpose() * obs;
    hat_trace_from_grams(&gram, &gram_obs)
}

/// Same trace from precomputed Gram matrices.
pub fn hat_trace_from_grams(gram: &DMatrix<f64>, gram_obs: &DMatrix<f64>) -> Result<f64> {
    let chol = Cholesky::new(gram.clone()).ok_or(Error::SingularGram)?;
    let solved = chol.solve(gram_obs);
    Ok(solved.trace())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, StreamDomain};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn randn_mat(r: usize, c: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = stream(seed, StreamDomain::Simulation, 0, 0);
        DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn orthonormal_design_gives_projection_coefficients() {
        let x = randn_mat(40, 5, 1);
        let q = x.qr().q();
        let y = randn_mat(40, 1, 2).column(0).into_owned();
        let fit = fit_ols(&q, &y).unwrap();
        let direct = q.transpose() * &y;
        assert!((fit.coefficients - direct).amax() < 1e-12);
    }

    #[test]
    fn exact_model_is_recovered() {
        let x = randn_mat(60, 6, 3);
        let beta = DVector::from_fn(6, |i, _| (i as f64 - 2.5) * 0.3);
        let y = &x * &beta;
        let fit = fit_ols(&x, &y).unwrap();
        assert!((fit.coefficients - beta).amax() < 1e-10);
        assert!(fit.objective < 1e-18);
    }

    #[test]
    fn ols_matches_independent_normal_equations() {
        let x = randn_mat(200, 10, 4);
        let y = randn_mat(200, 1, 5).column(0).into_owned();
        let fit = fit_ols(&x, &y).unwrap();
        // independent route: LU solve of the normal equations
        let gram = x.transpose() * &x;
        let rhs = x.transpose() * &y;
        let oracle = gram.lu().solve(&rhs).unwrap();
        assert!((&fit.coefficients - &oracle).amax() < 1e-8);
        // normal-equations residual
        let ne_resid = x.transpose() * (&y - &x * &fit.coefficients);
        assert!(ne_resid.norm() < 1e-8 * y.norm());
    }

    #[test]
    fn ols_is_equivariant_under_column_scaling() {
        let x = randn_mat(80, 4, 6);
        let y = randn_mat(80, 1, 7).column(0).into_owned();
        let base = fit_ols(&x, &y).unwrap();
        let mut xs = x.clone();
        let c = 37.5;
        xs.column_mut(2).scale_mut(c);
        let scaled = fit_ols(&xs, &y).unwrap();
        for i in 0..4 {
            let expect = if i == 2 {
                base.coefficients[i] / c
            } else {
                base.coefficients[i]
            };
            assert!((scaled.coefficients[i] - expect).abs() < 1e-10);
        }
    }

    #[test]
    fn duplicate_column_reports_offender() {
        let mut x = randn_mat(30, 4, 8);
        let dup = x.column(1).into_owned();
        x.set_column(3, &dup);
        let y = randn_mat(30, 1, 9).column(0).into_owned();
        match fit_ols(&x, &y) {
            Err(Error::SingularDesign { column }) => assert_eq!(column, 3),
            other => panic!("expected singularity, got {other:?}"),
        }
    }

    #[test]
    fn poisson_intercept_only_is_log_mean() {
        let x = DMatrix::from_element(50, 1, 1.0);
        let y = DVector::from_fn(50, |i, _| (i % 5) as f64);
        let fit = fit_irls(&x, &y, Family::Poisson).unwrap();
        assert!(fit.converged);
        let mean = y.sum() / 50.0;
        assert!((fit.coefficients[0] - mean.ln()).abs() < 1e-8);
    }

    #[test]
    fn balanced_bernoulli_with_symmetric_covariate_is_null() {
        // (x, y) pairs symmetric under x -> -x for both outcome classes.
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 1.0, 1.0, -1.0, 1.0, -1.0, 1.0]);
        let y = DVector::from_column_slice(&[0.0, 1.0, 0.0, 1.0]);
        let fit = fit_irls(&x, &y, Family::Bernoulli).unwrap();
        assert!(fit.converged);
        assert!(fit.coefficients.amax() < 1e-8);
    }

    /// Plain gradient descent with backtracking: an independent route to
    /// the same maximum-likelihood solution.
    fn descend(
        design: &DMatrix<f64>,
        outcome: &DVector<f64>,
        family: Family,
        iters: usize,
    ) -> DVector<f64> {
        let n = design.ncols();
        let mut beta = DVector::zeros(n);
        let mut obj = exp_family_nll(family, design, outcome, &beta);
        for _ in 0..iters {
            let eta = design * &beta;
            let resid = eta.map_with_location(|i, _, e| mean_fn(family, e) - outcome[i]);
            let grad = design.transpose() * resid;
            if grad.amax() < 1e-12 {
                break;
            }
            let mut step = 1.0 / design.nrows() as f64;
            loop {
                let cand = &beta - step * &grad;
                let cand_obj = exp_family_nll(family, design, outcome, &cand);
                if cand_obj < obj || step < 1e-18 {
                    beta = cand;
                    obj = cand_obj;
                    break;
                }
                step *= 0.5;
            }
        }
        beta
    }

    #[test]
    fn irls_matches_generic_optimizer_on_poisson() {
        let mut rng = stream(10, StreamDomain::Simulation, 0, 0);
        let x = DMatrix::from_fn(100, 3, |_, c| {
            if c == 0 {
                1.0
            } else {
                rng.sample::<f64, _>(StandardNormal) * 0.4
            }
        });
        let beta_true = DVector::from_column_slice(&[0.3, 0.5, -0.2]);
        let y = (&x * &beta_true).map(|e| {
            // deterministic pseudo-counts near the conditional mean
            (e.exp() * 1.7).round().max(0.0)
        });
        let fit = fit_irls(&x, &y, Family::Poisson).unwrap();
        assert!(fit.converged);
        let oracle = descend(&x, &y, Family::Poisson, 60_000);
        assert!(
            (&fit.coefficients - &oracle).amax() < 1e-6,
            "irls {:?} vs descent {:?}",
            fit.coefficients,
            oracle
        );
    }

    #[test]
    fn irls_gradient_vanishes_and_matches_finite_differences() {
        let mut rng = stream(11, StreamDomain::Simulation, 0, 0);
        let x = DMatrix::from_fn(60, 3, |_, c| {
            if c == 0 {
                1.0
            } else {
                rng.sample::<f64, _>(StandardNormal) * 0.5
            }
        });
        let y = DVector::from_fn(60, |i, _| ((i * 7 + 3) % 2) as f64);
        let fit = fit_irls(&x, &y, Family::Bernoulli).unwrap();
        assert!(fit.converged);

        // analytic gradient at the optimum
        let eta = &x * &fit.coefficients;
        let resid = eta.map_with_location(|i, _, e| mean_fn(Family::Bernoulli, e) - y[i]);
        let grad = x.transpose() * resid;
        assert!(grad.amax() < 1e-6);

        // central finite differences at a non-optimal point
        let beta = DVector::from_column_slice(&[0.1, -0.2, 0.3]);
        let eta = &x * &beta;
        let resid = eta.map_with_location(|i, _, e| mean_fn(Family::Bernoulli, e) - y[i]);
        let grad = x.transpose() * resid;
        let h = 1e-5;
        for c in 0..3 {
            let mut up = beta.clone();
            let mut dn = beta.clone();
            up[c] += h;
            dn[c] -= h;
            let fd = (exp_family_nll(Family::Bernoulli, &x, &y, &up)
                - exp_family_nll(Family::Bernoulli, &x, &y, &dn))
                / (2.0 * h);
            assert!(
                (fd - grad[c]).abs() <= 1e-4 * grad[c].abs().max(1e-8),
                "fd {fd} vs analytic {}",
                grad[c]
            );
        }
    }

    #[test]
    fn objective_matches_negloglik_at_the_mle() {
        let mut rng = stream(12, StreamDomain::Simulation, 0, 0);
        let x = DMatrix::from_fn(40, 2, |_, c| {
            if c == 0 {
                1.0
            } else {
                rng.sample::<f64, _>(StandardNormal)
            }
        });
        let y = DVector::from_fn(40, |i, _| (i % 3) as f64);
        let fit = fit_irls(&x, &y, Family::Poisson).unwrap();
        let direct = negloglik(Family::Poisson, &x, &y, &fit.coefficients);
        assert!((fit.objective - direct).abs() < 1e-10);
    }

    #[test]
    fn perfect_gaussian_fit_has_zero_loss() {
        let x = randn_mat(20, 3, 13);
        let beta = DVector::from_column_slice(&[1.0, -2.0, 0.5]);
        let y = &x * &beta;
        assert!(negloglik(Family::Gaussian, &x, &y, &beta) < 1e-20);
    }

    #[test]
    fn poisson_loss_counts_exp_eta_per_row() {
        // eta = 0 rows with outcome 0 contribute B(0) = 1 each.
        let x = DMatrix::zeros(5, 2);
        let y = DVector::zeros(5);
        let beta = DVector::from_column_slice(&[0.7, -0.3]);
        let loss = negloglik(Family::Poisson, &x, &y, &beta);
        assert!((loss - 5.0).abs() < 1e-12);
    }

    #[test]
    fn ridge_shrinks_toward_zero_and_recovers_ols_at_zero() {
        let x = randn_mat(50, 4, 19);
        let y = randn_mat(50, 1, 20).column(0).into_owned();
        let ols = fit_ols(&x, &y).unwrap();
        let r0 = fit_ridge(&x, &y, Family::Gaussian, 1e-12).unwrap();
        assert!((&r0.coefficients - &ols.coefficients).amax() < 1e-8);
        let r_big = fit_ridge(&x, &y, Family::Gaussian, 1e6).unwrap();
        assert!(r_big.coefficients.amax() < 1e-2);

        let yb = DVector::from_fn(50, |i, _| ((i * 3 + 1) % 2) as f64);
        let rb = fit_ridge(&x, &yb, Family::Bernoulli, 0.5).unwrap();
        assert!(rb.converged);
        // penalized gradient vanishes
        let eta = &x * &rb.coefficients;
        let resid = eta.map_with_location(|i, _, e| mean_fn(Family::Bernoulli, e) - yb[i]);
        let grad = x.transpose() * resid + 0.5 * &rb.coefficients;
        assert!(grad.amax() < 1e-6);
    }

    #[test]
    fn hat_trace_equals_rank_without_noise_rows() {
        let x = randn_mat(12, 12, 14);
        let nu = hat_trace_df(&x, 12).unwrap();
        assert!((nu - 12.0).abs() < 1e-8);
        // tall full-rank case: projection trace is the column count
        let x = randn_mat(40, 6, 15);
        let nu = hat_trace_df(&x, 40).unwrap();
        assert!((nu - 6.0).abs() < 1e-8);
    }

    #[test]
    fn huge_noise_rows_shrink_degrees_of_freedom() {
        let x = randn_mat(30, 4, 16);
        let mut prev = f64::INFINITY;
        for scale in [0.0, 3.0, 30.0, 300.0] {
            let noise = randn_mat(50, 4, 17) * scale;
            let mut aug = DMatrix::zeros(80, 4);
            aug.rows_mut(0, 30).copy_from(&x);
            aug.rows_mut(30, 50).copy_from(&noise);
            let nu = hat_trace_df(&aug, 30).unwrap();
            assert!(nu <= prev + 1e-9, "df should shrink, got {nu} after {prev}");
            prev = nu;
        }
        assert!(prev < 0.01, "df should approach zero, got {prev}");
    }

    #[test]
    fn hat_trace_matches_spectral_oracle() {
        let x = randn_mat(25, 5, 18);
        let nu = hat_trace_df(&x, 10).unwrap();
        // independent route: eigenvalue sum of the explicit hat matrix
        let gram = x.transpose() * &x;
        let inv = gram.try_inverse().unwrap();
        let obs = x.rows(0, 10).into_owned();
        let hat = &obs * inv * obs.transpose();
        let eigsum: f64 = hat.symmetric_eigenvalues().iter().sum();
        assert!((nu - eigsum).abs() < 1e-8);
    }
}
