//! Joint estimation through node-wise GLM regressions on the combined
//! noise-augmented data. Handles every node family; for all-Gaussian
//! datasets it also recovers the precision matrices from the regression
//! coefficients and residual variances.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{
    banked_mean, check_convergence, magnitude_min, no_edge_decision, signed_extreme_product,
    trajectory, Convergence, EstimatorConfig, JointEstimate, NodeMa,
};
use crate::augment::assemble_ns;
use crate::dataset::{Family, MultiGraphDataset, StandardizeMode};
use crate::error::{Error, Result};
use crate::glm::{exp_family_nll, fit_irls, fit_ols, fit_ridge, hat_trace_df, negloglik};
use crate::rng::{stream, StreamDomain};
use crate::state::{CoefLayout, ParameterState};

struct NodeOut {
    theta_bar: Vec<Vec<f64>>,
    intercept_bar: f64,
    loss: f64,
    sigma2: Option<f64>,
}

struct NsContext<'a> {
    graphs: &'a [DMatrix<f64>],
    family: &'a [Family],
    means: Option<&'a [Vec<f64>]>,
    outcome_values: &'a [f64],
    intercept: bool,
    all_gaussian: bool,
    total_n: usize,
}

fn fit_node(
    ctx: &NsContext,
    config: &EstimatorConfig,
    state: &ParameterState,
    ref_state: &ParameterState,
    ma: &mut NodeMa,
    j: usize,
    t: u64,
    with_sigma: bool,
) -> Result<NodeOut> {
    let q = ctx.graphs.len();
    let p = ctx.family.len();
    let d = p - 1;
    let mut rng = stream(config.seed, StreamDomain::NoiseDraw, t, j as u64);
    let e1 = crate::noise::sample_e1(&config.noise, state, ref_state, j, &mut rng);
    let e2 = crate::noise::sample_e2(&config.noise, state, j, &mut rng)?;
    let ad = assemble_ns(
        ctx.graphs,
        j,
        &e1,
        &e2,
        ctx.outcome_values[j],
        ctx.means,
        ctx.intercept,
    )?;
    let fit = match ctx.family[j] {
        Family::Gaussian => fit_ols(&ad.design, &ad.outcome)?,
        fam => fit_irls(&ad.design, &ad.outcome, fam)?,
    };
    let mut theta_hat = vec![vec![0.0; d]; q];
    for l in 0..q {
        for s in 0..d {
            theta_hat[l][s] = fit.coefficients[l * d + s];
        }
    }
    let intercept_hat = if ctx.intercept {
        fit.coefficients[q * d]
    } else {
        0.0
    };
    let (theta_bar, intercept_bar) = ma.push(theta_hat, intercept_hat);

    // Loss at the smoothed coefficients on this iteration's design.
    let mut coef_bar = DVector::zeros(ad.layout.num_cols());
    for l in 0..q {
        for s in 0..d {
            coef_bar[l * d + s] = theta_bar[l][s];
        }
    }
    if ctx.intercept {
        coef_bar[q * d] = intercept_bar;
    }
    let loss = if ctx.all_gaussian {
        negloglik(Family::Gaussian, &ad.design, &ad.outcome, &coef_bar)
    } else {
        exp_family_nll(ctx.family[j], &ad.design, &ad.outcome, &coef_bar)
    };

    let sigma2 = if with_sigma && ctx.all_gaussian {
        let mut sse = 0.0;
        for (l, g) in ctx.graphs.iter().enumerate() {
            for i in 0..g.nrows() {
                let mut eta = 0.0;
                for k in 0..p {
                    if k == j {
                        continue;
                    }
                    let s = if k < j { k } else { k - 1 };
                    eta += g[(i, k)] * theta_bar[l][s];
                }
                let r = g[(i, j)] - eta;
                sse += r * r;
            }
        }
        let nu = hat_trace_df(&ad.design, ad.obs_rows)?;
        Some(sse / (ctx.total_n as f64 - nu).max(1.0))
    } else {
        None
    };

    Ok(NodeOut {
        theta_bar,
        intercept_bar,
        loss,
        sigma2,
    })
}

/// Ridge fits per graph and node: the iteration seed and the reference
/// estimate for the adaptive-lasso variance.
fn ridge_init(ctx: &NsContext) -> Result<ParameterState> {
    let q = ctx.graphs.len();
    let p = ctx.family.len();
    let mut st = ParameterState::zeros(CoefLayout::AllOthers, q, p);
    for (l, g) in ctx.graphs.iter().enumerate() {
        let n = g.nrows();
        let kappa = 1e-2 * n as f64;
        for j in 0..p {
            let cols = p - 1 + usize::from(ctx.intercept);
            let mut x = DMatrix::zeros(n, cols);
            for k in 0..p {
                if k == j {
                    continue;
                }
                let s = if k < j { k } else { k - 1 };
                for i in 0..n {
                    let mut v = g[(i, k)];
                    if let Some(means) = ctx.means {
                        v -= means[l][k];
                    }
                    x[(i, s)] = v;
                }
            }
            if ctx.intercept {
                x.column_mut(p - 1).fill(1.0);
            }
            let y = g.column(j).into_owned();
            let fit = fit_ridge(&x, &y, ctx.family[j], kappa)?;
            for s in 0..p - 1 {
                st.theta[l][j][s] = fit.coefficients[s];
            }
        }
    }
    Ok(st)
}

/// Recover precision matrices from regression coefficients and residual
/// variances: omega_jj = 1/sigma_j^2 and omega_jk = -theta_jk * omega_jj,
/// symmetrized by keeping the smaller magnitude (zero on sign conflict).
pub fn recover_precision_ns(state: &ParameterState) -> Vec<DMatrix<f64>> {
    let q = state.num_graphs();
    let p = state.num_nodes();
    let mut out = Vec::with_capacity(q);
    for l in 0..q {
        let mut omega = DMatrix::zeros(p, p);
        for j in 0..p {
            omega[(j, j)] = 1.0 / state.sigma2_nodes[l][j];
        }
        for j in 0..p {
            for k in 0..p {
                if j == k {
                    continue;
                }
                let raw_jk = -state.coef(l, j, k) * omega[(j, j)];
                let raw_kj = -state.coef(l, k, j) * omega[(k, k)];
                if j < k {
                    let v = magnitude_min(raw_jk, raw_kj);
                    omega[(j, k)] = v;
                    omega[(k, j)] = v;
                }
            }
        }
        out.push(omega);
    }
    out
}

/// Run the node-wise backend.
///
/// All-Gaussian datasets are standardized per graph and fitted without
/// intercepts (outcome noise is zero); otherwise covariates are centered
/// inside each regression, outcomes stay raw, and a shared intercept
/// column is appended.
pub fn run_ns(config: &EstimatorConfig, dataset: &MultiGraphDataset) -> Result<JointEstimate> {
    dataset.validate()?;
    let q = dataset.num_graphs();
    let p = dataset.num_nodes();
    config.validate(q)?;
    config
        .noise
        .check_feasible(dataset.total_samples(), q, p)?;
    let coupling_active = config.noise.lambda2 > 0.0 && config.noise.n_e2 > 0;
    if q < 2 && coupling_active {
        return Err(Error::InvalidConfig(
            "cross-graph coupling needs q >= 2; disable e2 for single-graph runs".into(),
        ));
    }

    let all_gaussian = dataset.is_all_gaussian();
    let prepared = if all_gaussian {
        if dataset.standardized() == Some(StandardizeMode::StandardizeAll) {
            dataset.clone()
        } else {
            dataset.standardize(StandardizeMode::StandardizeAll)?
        }
    } else {
        dataset.clone()
    };
    let means_store: Vec<Vec<f64>> = if all_gaussian {
        Vec::new()
    } else {
        prepared.column_means()
    };
    let means: Option<&[Vec<f64>]> = (!all_gaussian).then_some(&means_store[..]);
    let intercept = !all_gaussian;
    let outcome_values: Vec<f64> = (0..p)
        .map(|j| if all_gaussian { 0.0 } else { prepared.pooled_mean(j) })
        .collect();
    let ctx = NsContext {
        graphs: prepared.graphs(),
        family: prepared.family(),
        means,
        outcome_values: &outcome_values,
        intercept,
        all_gaussian,
        total_n: prepared.total_samples(),
    };

    let ref_state = ridge_init(&ctx)?;
    let mut state = ref_state.clone();
    let mut ma: Vec<NodeMa> = (0..p).map(|_| NodeMa::new(config.ma_window)).collect();

    let mut loss_trace = Vec::new();
    let mut converged = false;
    let mut iterations_used = 0;
    let mut t = 0u64;
    for _ in 0..config.max_iter {
        t += 1;
        let outs: Result<Vec<NodeOut>> = ma
            .par_iter_mut()
            .enumerate()
            .map(|(j, ma_j)| fit_node(&ctx, config, &state, &ref_state, ma_j, j, t, false))
            .collect();
        let outs = outs?;
        let mut loss = 0.0;
        for (j, out) in outs.into_iter().enumerate() {
            for l in 0..q {
                state.theta[l][j] = out.theta_bar[l].clone();
            }
            state.intercepts[j] = out.intercept_bar;
            loss += out.loss;
        }
        loss_trace.push(loss);
        iterations_used = t as usize;
        if check_convergence(&loss_trace, &config.convergence) {
            converged = true;
            break;
        }
    }
    if matches!(config.convergence, Convergence::FixedIterations) {
        converged = true;
    }

    // Bank r further iterates for the thresholding rule.
    let mut banked = Vec::with_capacity(config.bank);
    for _ in 0..config.bank {
        t += 1;
        let outs: Result<Vec<NodeOut>> = ma
            .par_iter_mut()
            .enumerate()
            .map(|(j, ma_j)| fit_node(&ctx, config, &state, &ref_state, ma_j, j, t, true))
            .collect();
        let outs = outs?;
        for (j, out) in outs.into_iter().enumerate() {
            for l in 0..q {
                state.theta[l][j] = out.theta_bar[l].clone();
            }
            state.intercepts[j] = out.intercept_bar;
            if let Some(s2) = out.sigma2 {
                for l in 0..q {
                    state.sigma2_nodes[l][j] = s2.max(f64::MIN_POSITIVE);
                }
            }
        }
        banked.push(state.clone());
    }

    // Point estimates, edge decisions, diagnostics.
    let mut final_state = banked.last().cloned().unwrap();
    for l in 0..q {
        for j in 0..p {
            final_state.theta[l][j] = banked_mean(&banked, l, j);
        }
    }
    for l in 0..q {
        for j in 0..p {
            let mut acc = 0.0;
            for st in &banked {
                acc += st.sigma2_nodes[l][j];
            }
            final_state.sigma2_nodes[l][j] = acc / banked.len() as f64;
        }
    }

    let mut adjacency = vec![DMatrix::<u8>::zeros(p, p); q];
    let mut edge_product = vec![DMatrix::<f64>::zeros(p, p); q];
    for l in 0..q {
        for j in 0..p {
            for k in (j + 1)..p {
                let s_jk = CoefLayout::AllOthers.slot(j, k, p).unwrap();
                let s_kj = CoefLayout::AllOthers.slot(k, j, p).unwrap();
                let traj_jk = trajectory(&banked, l, j, s_jk);
                let traj_kj = trajectory(&banked, l, k, s_kj);
                edge_product[l][(j, k)] = signed_extreme_product(&traj_jk);
                edge_product[l][(k, j)] = signed_extreme_product(&traj_kj);
                let drop = no_edge_decision(&traj_jk, config.tau0)
                    || no_edge_decision(&traj_kj, config.tau0);
                if drop {
                    final_state.theta[l][j][s_jk] = 0.0;
                    final_state.theta[l][k][s_kj] = 0.0;
                } else {
                    adjacency[l][(j, k)] = 1;
                    adjacency[l][(k, j)] = 1;
                }
            }
        }
    }

    let precision = all_gaussian.then(|| recover_precision_ns(&final_state));

    Ok(JointEstimate {
        state: final_state,
        banked,
        adjacency,
        precision,
        loss_trace,
        iterations_used,
        converged,
        edge_product,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::Backend;
    use crate::noise::NoiseSpec;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn quick_config(lambda1: Vec<f64>, lambda2: f64, n_e1: usize, n_e2: usize) -> EstimatorConfig {
        let mut cfg = EstimatorConfig::new(Backend::Ns, NoiseSpec::lasso(lambda1, lambda2, n_e1, n_e2));
        cfg.max_iter = 4;
        cfg.bank = 3;
        cfg.convergence = Convergence::FixedIterations;
        cfg.seed = 5;
        cfg
    }

    #[test]
    fn zero_noise_single_graph_matches_per_node_ols() {
        let mut rng = stream(1, StreamDomain::Simulation, 0, 0);
        let g = DMatrix::from_fn(200, 6, |_, _| rng.sample::<f64, _>(StandardNormal));
        let ds = MultiGraphDataset::gaussian(vec![g]).unwrap();
        let cfg = quick_config(vec![0.0], 0.0, 0, 0);
        let est = run_ns(&cfg, &ds).unwrap();

        let std = ds.standardize(StandardizeMode::StandardizeAll).unwrap();
        for j in 0..6 {
            let mut x = DMatrix::zeros(200, 5);
            let mut s = 0;
            for k in 0..6 {
                if k == j {
                    continue;
                }
                x.set_column(s, &std.graph(0).column(k));
                s += 1;
            }
            let y = std.graph(0).column(j).into_owned();
            let ols = fit_ols(&x, &y).unwrap();
            for s in 0..5 {
                assert!(
                    (est.state.theta[0][j][s] - ols.coefficients[s]).abs() < 1e-6,
                    "node {j} slot {s}"
                );
            }
        }
    }

    #[test]
    fn published_tuning_settings_are_accepted() {
        // gamma=1, lambda2 = lambda1/4, T=80, n_e = 4000/4000, m=1, tau0=1e-4
        let lambda1 = 0.1;
        let mut cfg = EstimatorConfig::new(
            Backend::Ns,
            NoiseSpec::lasso(vec![lambda1; 3], lambda1 / 4.0, 4000, 4000),
        );
        cfg.max_iter = 80;
        cfg.ma_window = 1;
        cfg.tau0 = 1e-4;
        cfg.validate(3).unwrap();
    }

    #[test]
    fn precision_recovery_formula() {
        let mut st = ParameterState::zeros(CoefLayout::AllOthers, 1, 2);
        st.theta[0][0][0] = 0.5; // theta_12
        st.theta[0][1][0] = 0.6; // theta_21
        st.sigma2_nodes[0] = vec![2.0, 2.0];
        let omega = recover_precision_ns(&st);
        assert!((omega[0][(0, 0)] - 0.5).abs() < 1e-12);
        // raw omega_12 = -0.5*0.5 = -0.25, raw omega_21 = -0.6*0.5 = -0.30
        assert!((omega[0][(0, 1)] + 0.25).abs() < 1e-12);
        assert!((omega[0][(1, 0)] + 0.25).abs() < 1e-12);

        // all-zero coefficients give a diagonal matrix
        let st0 = ParameterState {
            sigma2_nodes: vec![vec![4.0, 4.0]],
            ..ParameterState::zeros(CoefLayout::AllOthers, 1, 2)
        };
        let omega0 = recover_precision_ns(&st0);
        assert_eq!(omega0[0][(0, 1)], 0.0);
        assert!((omega0[0][(0, 0)] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn bivariate_precision_is_recovered_at_large_n() {
        // X ~ N(0, Sigma) with corr rho: precision (1-rho^2)^-1 [[1,-rho],[-rho,1]].
        let rho: f64 = 0.6;
        let n = 100_000;
        let mut rng = stream(2, StreamDomain::Simulation, 0, 0);
        let g = DMatrix::from_fn(n, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut data = DMatrix::zeros(n, 2);
        for i in 0..n {
            data[(i, 0)] = g[(i, 0)];
            data[(i, 1)] = rho * g[(i, 0)] + (1.0 - rho * rho).sqrt() * g[(i, 1)];
        }
        let ds = MultiGraphDataset::gaussian(vec![data]).unwrap();
        let cfg = quick_config(vec![0.0], 0.0, 0, 0);
        let est = run_ns(&cfg, &ds).unwrap();
        let omega = &est.precision.unwrap()[0];
        let scale = 1.0 / (1.0 - rho * rho);
        let expect = [[scale, -rho * scale], [-rho * scale, scale]];
        for j in 0..2 {
            for k in 0..2 {
                let rel = (omega[(j, k)] - expect[j][k]).abs() / expect[j][k].abs();
                assert!(rel < 0.05, "omega[{j},{k}] = {} vs {}", omega[(j, k)], expect[j][k]);
            }
        }
    }

    #[test]
    fn adjacency_is_symmetric_with_zero_diagonal() {
        let mut rng = stream(3, StreamDomain::Simulation, 0, 0);
        let gs: Vec<DMatrix<f64>> = (0..2)
            .map(|_| DMatrix::from_fn(60, 5, |_, _| rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let ds = MultiGraphDataset::gaussian(gs).unwrap();
        let cfg = quick_config(vec![0.05, 0.05], 0.01, 200, 200);
        let est = run_ns(&cfg, &ds).unwrap();
        for a in &est.adjacency {
            for j in 0..5 {
                assert_eq!(a[(j, j)], 0);
                for k in 0..5 {
                    assert_eq!(a[(j, k)], a[(k, j)]);
                }
            }
        }
    }

    #[test]
    fn shrinkage_is_monotone_in_lambda1() {
        let mut rng = stream(4, StreamDomain::Simulation, 0, 0);
        let gs: Vec<DMatrix<f64>> = (0..2)
            .map(|_| DMatrix::from_fn(80, 5, |_, _| rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let ds = MultiGraphDataset::gaussian(gs).unwrap();
        let mut norms = Vec::new();
        for lambda1 in [0.0, 0.05, 0.2, 0.8, 3.2] {
            let cfg = quick_config(vec![lambda1; 2], 0.0, 400, 0);
            let est = run_ns(&cfg, &ds).unwrap();
            let norm: f64 = est
                .banked
                .last()
                .unwrap()
                .theta
                .iter()
                .flat_map(|g| g.iter())
                .flat_map(|v| v.iter())
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt();
            norms.push(norm);
        }
        let scale = norms[0].max(1e-12);
        for w in norms.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-3 * scale,
                "coefficient norm not weakly decreasing: {norms:?}"
            );
        }
    }

    #[test]
    fn poisson_nodes_run_through_irls_path() {
        // Sparse counts; mostly a smoke test that the mixed machinery holds
        // together: intercept column, raw outcomes, pooled-mean noise.
        let mut rng = stream(6, StreamDomain::Simulation, 0, 0);
        let gs: Vec<DMatrix<f64>> = (0..2)
            .map(|_| DMatrix::from_fn(80, 4, |_, _| (rng.random_range(0..4)) as f64))
            .collect();
        let ds = MultiGraphDataset::new(
            gs,
            vec![Family::Poisson; 4],
            Vec::new(),
        )
        .unwrap();
        let mut cfg = quick_config(vec![0.05, 0.05], 0.0125, 200, 200);
        cfg.max_iter = 3;
        cfg.bank = 2;
        let est = run_ns(&cfg, &ds).unwrap();
        assert!(est.precision.is_none());
        assert_eq!(est.loss_trace.len(), 3);
        for a in &est.adjacency {
            for j in 0..4 {
                assert_eq!(a[(j, j)], 0);
            }
        }
    }
}
