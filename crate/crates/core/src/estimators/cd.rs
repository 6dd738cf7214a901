//! Joint Gaussian estimation through the LDL variant of the Cholesky
//! decomposition: node j is regressed on nodes 1..j-1, the residual
//! variances fill D, the negated coefficients fill the unit lower
//! triangle L, and each precision matrix is rebuilt as L' D^-1 L, which
//! is positive semidefinite by construction.

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::{
    banked_mean, check_convergence, no_edge_decision, signed_extreme_product, trajectory,
    Convergence, EstimatorConfig, JointEstimate, NodeMa,
};
use crate::augment::assemble_cd;
use crate::dataset::{Family, MultiGraphDataset, StandardizeMode};
use crate::error::{Error, Result};
use crate::glm::{fit_ols, fit_ridge, hat_trace_from_grams};
use crate::noise::sample_cd_noise;
use crate::rng::{stream, StreamDomain};
use crate::state::{CoefLayout, ParameterState};

struct NodeOut {
    theta_bar: Vec<Vec<f64>>,
    /// Residual variances per graph, 1/n convention during the loop and
    /// df-corrected during banking.
    sigma2: Vec<f64>,
}

fn residual_sse(graphs: &[DMatrix<f64>], theta_bar: &[Vec<f64>], j: usize) -> Vec<f64> {
    graphs
        .iter()
        .enumerate()
        .map(|(l, g)| {
            let mut sse = 0.0;
            for i in 0..g.nrows() {
                let mut eta = 0.0;
                for k in 0..j {
                    eta += g[(i, k)] * theta_bar[l][k];
                }
                let r = g[(i, j)] - eta;
                sse += r * r;
            }
            sse
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn fit_node(
    graphs: &[DMatrix<f64>],
    config: &EstimatorConfig,
    global: &ParameterState,
    ref_state: &ParameterState,
    ma: &mut NodeMa,
    j: usize,
    t: u64,
    banking: bool,
) -> Result<NodeOut> {
    let q = graphs.len();
    let mut local = global.clone();
    let mut rng = stream(config.seed, StreamDomain::NoiseDraw, t, j as u64);
    let mut theta_bar = Vec::new();
    let mut sigma2 = vec![0.0; q];
    let mut last_design = None;
    for _inner in 0..config.inner_loops {
        let (e1, e2) = sample_cd_noise(&config.noise, &local, ref_state, j, &mut rng)?;
        let ad = assemble_cd(graphs, j, &e1, &e2)?;
        let fit = fit_ols(&ad.design, &ad.outcome)?;
        let mut theta_hat = vec![vec![0.0; j]; q];
        for l in 0..q {
            for s in 0..j {
                theta_hat[l][s] = fit.coefficients[l * j + s];
            }
        }
        let (bar, _) = ma.push(theta_hat, 0.0);
        theta_bar = bar;
        let sse = residual_sse(graphs, &theta_bar, j);
        for l in 0..q {
            sigma2[l] = (sse[l] / graphs[l].nrows() as f64).max(f64::MIN_POSITIVE);
            local.theta[l][j] = theta_bar[l].clone();
            local.sigma2_nodes[l][j] = sigma2[l];
        }
        last_design = Some(ad);
    }

    if banking {
        // Degrees-of-freedom corrected variances over the final design.
        let ad = last_design.unwrap();
        let gram = ad.design.transpose() * &ad.design;
        let sse = residual_sse(graphs, &theta_bar, j);
        let mut offset = 0;
        for (l, g) in graphs.iter().enumerate() {
            let n_l = g.nrows();
            let obs = ad.design.rows(offset, n_l);
            let gram_obs = obs.transpose() * obs;
            let nu = hat_trace_from_grams(&gram, &gram_obs)?;
            sigma2[l] = (sse[l] / (n_l as f64 - nu).max(1.0)).max(f64::MIN_POSITIVE);
            offset += n_l;
        }
    }

    Ok(NodeOut { theta_bar, sigma2 })
}

/// Run the decomposition backend (all-Gaussian, standardized internally).
pub fn run_cd(config: &EstimatorConfig, dataset: &MultiGraphDataset) -> Result<JointEstimate> {
    dataset.validate()?;
    if !dataset.is_all_gaussian() {
        return Err(Error::InvalidConfig(
            "the decomposition backend requires an all-gaussian dataset".into(),
        ));
    }
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

    let prepared = if dataset.standardized() == Some(StandardizeMode::StandardizeAll) {
        dataset.clone()
    } else {
        dataset.standardize(StandardizeMode::StandardizeAll)?
    };
    let graphs = prepared.graphs();

    // Seed state: ridge fits on the growing regressions; sigma2 from the
    // per-graph second moment. Node 1 never changes.
    let mut state = ParameterState::zeros(CoefLayout::Preceding, q, p);
    for (l, g) in graphs.iter().enumerate() {
        let n = g.nrows();
        for j in 0..p {
            let m2 = g.column(j).iter().map(|x| x * x).sum::<f64>() / n as f64;
            state.sigma2_nodes[l][j] = m2.max(f64::MIN_POSITIVE);
        }
        let kappa = 1e-2 * n as f64;
        for j in 1..p {
            let x = g.columns(0, j).into_owned();
            let y = g.column(j).into_owned();
            let fit = fit_ridge(&x, &y, Family::Gaussian, kappa)?;
            for s in 0..j {
                state.theta[l][j][s] = fit.coefficients[s];
            }
        }
    }
    let ref_state = state.clone();
    let sigma2_first: Vec<f64> = (0..q).map(|l| state.sigma2_nodes[l][0]).collect();

    let mut ma: Vec<NodeMa> = (0..p).map(|_| NodeMa::new(config.ma_window)).collect();
    let sizes = prepared.sample_sizes();
    let loss_of = |state: &ParameterState| -> f64 {
        let mut loss = 0.0;
        for l in 0..q {
            for j in 0..p {
                loss += sizes[l] as f64 * state.sigma2_nodes[l][j];
            }
        }
        loss
    };

    let mut loss_trace = Vec::new();
    let mut converged = false;
    let mut iterations_used = 0;
    let mut t = 0u64;
    let apply = |state: &mut ParameterState, outs: Vec<NodeOut>| {
        for (idx, out) in outs.into_iter().enumerate() {
            let j = idx + 1;
            for l in 0..q {
                state.theta[l][j] = out.theta_bar[l].clone();
                state.sigma2_nodes[l][j] = out.sigma2[l];
            }
        }
        for l in 0..q {
            state.sigma2_nodes[l][0] = sigma2_first[l];
        }
    };

    for _ in 0..config.max_iter {
        t += 1;
        let outs: Result<Vec<NodeOut>> = ma[1..]
            .par_iter_mut()
            .enumerate()
            .map(|(idx, ma_j)| {
                fit_node(graphs, config, &state, &ref_state, ma_j, idx + 1, t, false)
            })
            .collect();
        apply(&mut state, outs?);
        loss_trace.push(loss_of(&state));
        iterations_used = t as usize;
        if check_convergence(&loss_trace, &config.convergence) {
            converged = true;
            break;
        }
    }
    if matches!(config.convergence, Convergence::FixedIterations) {
        converged = true;
    }

    let mut banked = Vec::with_capacity(config.bank);
    for _ in 0..config.bank {
        t += 1;
        let outs: Result<Vec<NodeOut>> = ma[1..]
            .par_iter_mut()
            .enumerate()
            .map(|(idx, ma_j)| {
                fit_node(graphs, config, &state, &ref_state, ma_j, idx + 1, t, true)
            })
            .collect();
        apply(&mut state, outs?);
        banked.push(state.clone());
    }

    // Banked means, one-directional thresholding, then L' D^-1 L.
    let mut final_state = banked.last().cloned().unwrap();
    for l in 0..q {
        for j in 1..p {
            final_state.theta[l][j] = banked_mean(&banked, l, j);
        }
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
    let mut precision = Vec::with_capacity(q);
    for l in 0..q {
        for j in 1..p {
            for k in 0..j {
                let traj = trajectory(&banked, l, j, k);
                edge_product[l][(j, k)] = signed_extreme_product(&traj);
                if no_edge_decision(&traj, config.tau0) {
                    final_state.theta[l][j][k] = 0.0;
                } else {
                    adjacency[l][(j, k)] = 1;
                    adjacency[l][(k, j)] = 1;
                }
            }
        }
        let mut lmat = DMatrix::<f64>::identity(p, p);
        for j in 1..p {
            for k in 0..j {
                lmat[(j, k)] = -final_state.theta[l][j][k];
            }
        }
        let dinv = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(p, |j, _| {
            1.0 / final_state.sigma2_nodes[l][j]
        }));
        precision.push(lmat.transpose() * dinv * lmat);
    }

    Ok(JointEstimate {
        state: final_state,
        banked,
        adjacency,
        precision: Some(precision),
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
    use rand_distr::StandardNormal;
    use rand::Rng;

    fn quick_config(lambda1: Vec<f64>, lambda2: f64, n_e1: usize, n_e2: usize) -> EstimatorConfig {
        let mut cfg =
            EstimatorConfig::new(Backend::Cd, NoiseSpec::lasso(lambda1, lambda2, n_e1, n_e2));
        cfg.max_iter = 4;
        cfg.bank = 3;
        cfg.inner_loops = 2;
        cfg.convergence = Convergence::FixedIterations;
        cfg.seed = 31;
        cfg
    }

    #[test]
    fn two_node_zero_noise_recovers_sample_precision() {
        let rho: f64 = 0.5;
        let n = 10_000;
        let mut rng = stream(7, StreamDomain::Simulation, 0, 0);
        let mut data = DMatrix::zeros(n, 2);
        for i in 0..n {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            data[(i, 0)] = a;
            data[(i, 1)] = rho * a + (1.0 - rho * rho).sqrt() * b;
        }
        let ds = MultiGraphDataset::gaussian(vec![data]).unwrap();
        let cfg = quick_config(vec![0.0], 0.0, 0, 0);
        let est = run_cd(&cfg, &ds).unwrap();

        // theta_21 approaches cov(x1,x2)/var(x1) on the standardized data.
        let std = ds.standardize(StandardizeMode::StandardizeAll).unwrap();
        let g = std.graph(0);
        let sxy = g.column(0).dot(&g.column(1));
        let sxx = g.column(0).dot(&g.column(0));
        assert!((est.state.theta[0][1][0] - sxy / sxx).abs() < 1e-6);

        // Omega = L' D^-1 L reproduces the inverse sample covariance to 5%.
        let cov = g.transpose() * g / (n as f64 - 1.0);
        let prec = cov.try_inverse().unwrap();
        let omega = &est.precision.unwrap()[0];
        for j in 0..2 {
            for k in 0..2 {
                let rel = (omega[(j, k)] - prec[(j, k)]).abs() / prec[(j, k)].abs().max(0.1);
                assert!(rel < 0.05, "omega[{j},{k}] {} vs {}", omega[(j, k)], prec[(j, k)]);
            }
        }
    }

    #[test]
    fn precision_estimates_are_positive_semidefinite() {
        let mut rng = stream(8, StreamDomain::Simulation, 0, 0);
        for trial in 0..5u64 {
            let gs: Vec<DMatrix<f64>> = (0..2)
                .map(|_| DMatrix::from_fn(40, 5, |_, _| rng.sample::<f64, _>(StandardNormal)))
                .collect();
            let ds = MultiGraphDataset::gaussian(gs).unwrap();
            let mut cfg = quick_config(vec![0.1, 0.1], 0.025, 150, 150);
            cfg.seed = trial;
            let est = run_cd(&cfg, &ds).unwrap();
            for omega in est.precision.as_ref().unwrap() {
                let eig = omega.clone().symmetric_eigenvalues();
                for v in eig.iter() {
                    assert!(*v >= -1e-10, "eigenvalue {v} in trial {trial}");
                }
            }
        }
    }

    #[test]
    fn published_cd_settings_are_accepted() {
        // T=150, n_e = 2000/2000
        let mut cfg = EstimatorConfig::new(
            Backend::Cd,
            NoiseSpec::lasso(vec![0.1; 3], 0.025, 2000, 2000),
        );
        cfg.max_iter = 150;
        cfg.validate(3).unwrap();
    }

    #[test]
    fn rejects_non_gaussian_dataset() {
        let g = DMatrix::from_fn(30, 3, |i, j| ((i + j) % 3) as f64);
        let ds = MultiGraphDataset::new(
            vec![g],
            vec![Family::Poisson, Family::Poisson, Family::Poisson],
            Vec::new(),
        )
        .unwrap();
        let cfg = quick_config(vec![0.1], 0.0, 50, 0);
        assert!(run_cd(&cfg, &ds).is_err());
    }
}
