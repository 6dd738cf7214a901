//! The coupling noises applied outside graphical models: a single
//! regression whose predictors come in groups, with lasso noise inside
//! groups and either group-level sparsity (sparse group lasso) or
//! within-group fusion (sparse fused ridge).

use nalgebra::{DMatrix, DVector};

use super::{check_convergence, Convergence, NodeMa};
use crate::dataset::Family;
use crate::error::{Error, Result};
use crate::glm::{exp_family_nll, fit_irls, fit_ols, fit_ridge, negloglik, FitResult};
use crate::noise::{grouped_regression_noise, GroupedKind};
use crate::rng::{stream, StreamDomain};

/// Parameters for a grouped-regression fit.
#[derive(Debug, Clone)]
pub struct GroupedConfig {
    pub kind: GroupedKind,
    pub family: Family,
    /// Per-group lasso tuning values.
    pub lambda1: Vec<f64>,
    pub lambda2: f64,
    pub n_e1: usize,
    pub n_e2: usize,
    pub max_iter: usize,
    pub ma_window: usize,
    pub convergence: Convergence,
    pub theta_floor: f64,
    pub seed: u64,
}

impl GroupedConfig {
    pub fn new(kind: GroupedKind, family: Family, lambda1: Vec<f64>, lambda2: f64) -> Self {
        GroupedConfig {
            kind,
            family,
            lambda1,
            lambda2,
            n_e1: 1000,
            n_e2: 1000,
            max_iter: 40,
            ma_window: 2,
            convergence: Convergence::default(),
            theta_floor: 1e-6,
            seed: 0,
        }
    }
}

/// Iterative noise-augmented fit of one grouped regression. `groups` are
/// the group sizes in predictor order and must sum to the column count of
/// `design`.
pub fn fit_grouped_regression(
    design: &DMatrix<f64>,
    outcome: &DVector<f64>,
    groups: &[usize],
    config: &GroupedConfig,
) -> Result<FitResult> {
    let n = design.nrows();
    let p: usize = groups.iter().sum();
    if p != design.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "groups sum to {p}, design has {} columns",
            design.ncols()
        )));
    }
    if config.lambda1.len() != groups.len() {
        return Err(Error::InvalidConfig(
            "one lambda1 per predictor group required".into(),
        ));
    }

    let y_mean = outcome.sum() / n as f64;
    let init = fit_ridge(design, outcome, config.family, 1e-2 * n as f64)?;
    let mut theta: Vec<f64> = init.coefficients.iter().copied().collect();
    let mut ma = NodeMa::new(config.ma_window);
    let mut loss_trace = Vec::new();
    let mut converged = false;
    let mut iters = 0;

    for t in 1..=config.max_iter {
        let mut rng = stream(config.seed, StreamDomain::NoiseDraw, t as u64, 0);
        let (e1, e2) = grouped_regression_noise(
            groups,
            &theta,
            &config.lambda1,
            config.lambda2,
            config.kind,
            config.n_e1,
            config.n_e2,
            config.theta_floor,
            &mut rng,
        )?;
        let rows = n + e1.nrows() + e2.nrows();
        let mut aug = DMatrix::zeros(rows, p);
        aug.rows_mut(0, n).copy_from(design);
        aug.rows_mut(n, e1.nrows()).copy_from(&e1);
        aug.rows_mut(n + e1.nrows(), e2.nrows()).copy_from(&e2);
        let mut y_aug = DVector::from_element(rows, y_mean);
        y_aug.rows_mut(0, n).copy_from(outcome);

        let fit = match config.family {
            Family::Gaussian => fit_ols(&aug, &y_aug)?,
            fam => fit_irls(&aug, &y_aug, fam)?,
        };
        let (bar, _) = ma.push(vec![fit.coefficients.iter().copied().collect()], 0.0);
        theta = bar[0].clone();

        let bar_vec = DVector::from_column_slice(&theta);
        let loss = match config.family {
            Family::Gaussian => negloglik(Family::Gaussian, &aug, &y_aug, &bar_vec),
            fam => exp_family_nll(fam, &aug, &y_aug, &bar_vec),
        };
        loss_trace.push(loss);
        iters = t;
        if check_convergence(&loss_trace, &config.convergence) {
            converged = true;
            break;
        }
    }
    if matches!(config.convergence, Convergence::FixedIterations) {
        converged = true;
    }

    let coefficients = DVector::from_column_slice(&theta);
    let objective = *loss_trace.last().unwrap_or(&f64::NAN);
    Ok(FitResult {
        coefficients,
        converged,
        objective,
        irls_iters: iters,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, StreamDomain};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn regression_instance(n: usize, p: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
        let mut rng = stream(seed, StreamDomain::Simulation, 0, 0);
        let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let beta = DVector::from_fn(p, |i, _| if i % 2 == 0 { 0.8 } else { 0.0 });
        let noise = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = &x * beta + 0.3 * noise;
        (x, y)
    }

    #[test]
    fn zero_tuning_reduces_to_plain_mle() {
        let (x, y) = regression_instance(100, 4, 51);
        let mut cfg = GroupedConfig::new(
            GroupedKind::SparseGroupLasso,
            Family::Gaussian,
            vec![0.0, 0.0],
            0.0,
        );
        cfg.n_e1 = 0;
        cfg.n_e2 = 0;
        cfg.max_iter = 4;
        cfg.ma_window = 1;
        cfg.convergence = Convergence::FixedIterations;
        let fit = fit_grouped_regression(&x, &y, &[2, 2], &cfg).unwrap();
        let ols = fit_ols(&x, &y).unwrap();
        assert!((&fit.coefficients - &ols.coefficients).amax() < 1e-6);
    }

    #[test]
    fn group_norm_shrinks_monotonically_in_lambda2() {
        let (x, y) = regression_instance(120, 4, 52);
        let mut norms = Vec::new();
        for lambda2 in [0.0, 0.3, 1.2, 5.0, 20.0] {
            let mut cfg = GroupedConfig::new(
                GroupedKind::SparseGroupLasso,
                Family::Gaussian,
                vec![0.0],
                lambda2,
            );
            cfg.n_e1 = 0;
            cfg.n_e2 = 800;
            cfg.max_iter = 12;
            cfg.ma_window = 3;
            cfg.convergence = Convergence::FixedIterations;
            cfg.seed = 52;
            let fit = fit_grouped_regression(&x, &y, &[4], &cfg).unwrap();
            norms.push(fit.coefficients.norm());
        }
        for w in norms.windows(2) {
            assert!(w[1] < w[0] + 1e-3, "norms not decreasing: {norms:?}");
        }
        assert!(norms.last().unwrap() < &(0.8 * norms[0]));
    }

    #[test]
    fn fusion_pulls_equal_effects_together() {
        // Two predictors with equal true effects; the fused coupling must
        // shrink their estimated difference monotonically.
        let mut rng = stream(53, StreamDomain::Simulation, 0, 0);
        let n = 150;
        let x = DMatrix::from_fn(n, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let noise = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = x.column(0) * 0.6 + x.column(1) * 0.6 + 0.8 * noise;

        let mut gaps = Vec::new();
        for lambda2 in [0.0, 0.5, 2.0, 10.0] {
            let mut cfg = GroupedConfig::new(
                GroupedKind::SparseFusedRidge,
                Family::Gaussian,
                vec![0.0],
                lambda2,
            );
            cfg.n_e1 = 0;
            cfg.n_e2 = 800;
            cfg.max_iter = 12;
            cfg.ma_window = 3;
            cfg.convergence = Convergence::FixedIterations;
            cfg.seed = 53;
            let fit = fit_grouped_regression(&x, &y, &[2], &cfg).unwrap();
            gaps.push((fit.coefficients[0] - fit.coefficients[1]).abs());
        }
        for w in gaps.windows(2) {
            assert!(w[1] <= w[0] + 1e-3, "gaps not decreasing: {gaps:?}");
        }
        assert!(gaps.last().unwrap() < &(0.5 * gaps[0].max(1e-6)));
    }
}
