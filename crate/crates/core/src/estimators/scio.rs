//! Joint Gaussian estimation through closed-form column solves of the
//! quadratic column-inverse objective: each iteration recomputes
//! Theta_j = n (x~' x~)^-1 Xi_j on the freshly augmented design.

use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;

use super::{
    banked_mean, check_convergence, magnitude_min, no_edge_decision, signed_extreme_product,
    trajectory, Convergence, EstimatorConfig, JointEstimate, NodeMa,
};
use crate::augment::assemble_scio;
use crate::dataset::{MultiGraphDataset, StandardizeMode};
use crate::error::{Error, Result};
use crate::noise::sample_scio_noise;
use crate::rng::{stream, StreamDomain};
use crate::state::{CoefLayout, ParameterState};

struct NodeOut {
    theta_bar: Vec<Vec<f64>>,
    loss: f64,
}

fn fit_node(
    graphs: &[DMatrix<f64>],
    config: &EstimatorConfig,
    state: &ParameterState,
    ref_state: &ParameterState,
    ma: &mut NodeMa,
    j: usize,
    t: u64,
    n: usize,
) -> Result<NodeOut> {
    let q = graphs.len();
    let p = graphs[0].ncols();
    let mut rng = stream(config.seed, StreamDomain::NoiseDraw, t, j as u64);
    let (e1, e2) = sample_scio_noise(&config.noise, state, ref_state, j, n, &mut rng)?;
    let ad = assemble_scio(graphs, j, &e1, &e2)?;
    let gram = ad.design.transpose() * &ad.design;
    let chol = Cholesky::new(gram.clone()).ok_or(Error::SingularGram)?;
    let solved = chol.solve(&ad.outcome) * n as f64;

    let mut theta_hat = vec![vec![0.0; p]; q];
    for l in 0..q {
        for s in 0..p {
            theta_hat[l][s] = solved[l * p + s];
        }
    }
    let (theta_bar, _) = ma.push(theta_hat, 0.0);

    let mut bar = DVector::zeros(q * p);
    for l in 0..q {
        for s in 0..p {
            bar[l * p + s] = theta_bar[l][s];
        }
    }
    let loss = (bar.transpose() * &gram * &bar)[(0, 0)] / (2.0 * n as f64) - bar.dot(&ad.outcome);

    Ok(NodeOut { theta_bar, loss })
}

/// Run the column-inverse backend. Requires an all-Gaussian dataset with
/// equal per-graph sample sizes (the closed form shares one n across the
/// combined design); data are standardized internally.
pub fn run_scio(config: &EstimatorConfig, dataset: &MultiGraphDataset) -> Result<JointEstimate> {
    dataset.validate()?;
    if !dataset.is_all_gaussian() {
        return Err(Error::InvalidConfig(
            "the column-inverse backend requires an all-gaussian dataset".into(),
        ));
    }
    let q = dataset.num_graphs();
    let p = dataset.num_nodes();
    config.validate(q)?;
    config
        .noise
        .check_feasible(dataset.total_samples(), q, p)?;
    let sizes = dataset.sample_sizes();
    let n = sizes[0];
    if sizes.iter().any(|&s| s != n) {
        return Err(Error::InvalidConfig(
            "the column-inverse backend needs equal per-graph sample sizes".into(),
        ));
    }
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

    // Seed with lightly ridged per-graph precision columns.
    let mut state = ParameterState::zeros(CoefLayout::FullColumn, q, p);
    for (l, g) in graphs.iter().enumerate() {
        let gram = g.transpose() * g;
        let ridged = &gram + DMatrix::identity(p, p) * (1e-2 * n as f64);
        let chol = Cholesky::new(ridged).ok_or(Error::SingularGram)?;
        for j in 0..p {
            let mut unit = DVector::zeros(p);
            unit[j] = 1.0;
            let col = chol.solve(&unit) * n as f64;
            for s in 0..p {
                state.theta[l][j][s] = col[s];
            }
        }
    }
    let ref_state = state.clone();
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
            .map(|(j, ma_j)| fit_node(graphs, config, &state, &ref_state, ma_j, j, t, n))
            .collect();
        let outs = outs?;
        let mut loss = 0.0;
        for (j, out) in outs.into_iter().enumerate() {
            for l in 0..q {
                state.theta[l][j] = out.theta_bar[l].clone();
            }
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

    let mut banked = Vec::with_capacity(config.bank);
    for _ in 0..config.bank {
        t += 1;
        let outs: Result<Vec<NodeOut>> = ma
            .par_iter_mut()
            .enumerate()
            .map(|(j, ma_j)| fit_node(graphs, config, &state, &ref_state, ma_j, j, t, n))
            .collect();
        for (j, out) in outs?.into_iter().enumerate() {
            for l in 0..q {
                state.theta[l][j] = out.theta_bar[l].clone();
            }
        }
        banked.push(state.clone());
    }

    // Banked means; both-direction thresholding with min-magnitude
    // symmetrization of the kept entries.
    let mut final_state = banked.last().cloned().unwrap();
    for l in 0..q {
        for j in 0..p {
            final_state.theta[l][j] = banked_mean(&banked, l, j);
        }
    }

    let mut adjacency = vec![DMatrix::<u8>::zeros(p, p); q];
    let mut edge_product = vec![DMatrix::<f64>::zeros(p, p); q];
    let mut precision = Vec::with_capacity(q);
    for l in 0..q {
        let mut omega = DMatrix::<f64>::zeros(p, p);
        for j in 0..p {
            omega[(j, j)] = final_state.theta[l][j][j];
        }
        for j in 0..p {
            for k in (j + 1)..p {
                let traj_jk = trajectory(&banked, l, j, k);
                let traj_kj = trajectory(&banked, l, k, j);
                edge_product[l][(j, k)] = signed_extreme_product(&traj_jk);
                edge_product[l][(k, j)] = signed_extreme_product(&traj_kj);
                let drop = no_edge_decision(&traj_jk, config.tau0)
                    || no_edge_decision(&traj_kj, config.tau0);
                let value = if drop {
                    0.0
                } else {
                    magnitude_min(final_state.theta[l][j][k], final_state.theta[l][k][j])
                };
                final_state.theta[l][j][k] = value;
                final_state.theta[l][k][j] = value;
                omega[(j, k)] = value;
                omega[(k, j)] = value;
                if value != 0.0 {
                    adjacency[l][(j, k)] = 1;
                    adjacency[l][(k, j)] = 1;
                }
            }
        }
        for j in 0..p {
            final_state.sigma2_nodes[l][j] = (1.0 / omega[(j, j)].max(1e-12)).max(f64::MIN_POSITIVE);
        }
        precision.push(omega);
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
