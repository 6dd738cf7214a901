//! Naive differencing baseline: every graph is fitted separately with the
//! per-graph noise only, and edge patterns are compared post hoc. This is
//! the reference the joint estimators are measured against.

use super::{run_ns, EstimatorConfig, JointEstimate};
use crate::dataset::MultiGraphDataset;
use crate::error::Result;
use crate::rng::{stream_seed, StreamDomain};
use crate::state::{CoefLayout, ParameterState};

/// Fit each graph on its own (coupling noise disabled) and collect the
/// per-graph results into one estimate for pairwise comparison.
pub fn run_naive(config: &EstimatorConfig, dataset: &MultiGraphDataset) -> Result<JointEstimate> {
    let q = dataset.num_graphs();
    let p = dataset.num_nodes();
    let mut state = ParameterState::zeros(CoefLayout::AllOthers, q, p);
    let mut adjacency = Vec::with_capacity(q);
    let mut edge_product = Vec::with_capacity(q);
    let mut precision = dataset.is_all_gaussian().then(Vec::new);
    let mut loss_trace: Vec<f64> = Vec::new();
    let mut converged = true;
    let mut iterations_used = 0;

    for l in 0..q {
        let mut cfg = config.clone();
        cfg.noise.lambda1 = vec![config.noise.lambda1[l]];
        cfg.noise.lambda2 = 0.0;
        cfg.noise.n_e2 = 0;
        cfg.seed = stream_seed(config.seed, StreamDomain::Init, l as u64, 0);
        let single = dataset.single(l);
        let est = run_ns(&cfg, &single)?;

        state.theta[l] = est.state.theta[0].clone();
        state.sigma2_nodes[l] = est.state.sigma2_nodes[0].clone();
        adjacency.push(est.adjacency[0].clone());
        edge_product.push(est.edge_product[0].clone());
        if let (Some(acc), Some(prec)) = (precision.as_mut(), est.precision) {
            acc.push(prec[0].clone());
        }
        for (i, v) in est.loss_trace.iter().enumerate() {
            if i < loss_trace.len() {
                loss_trace[i] += v;
            } else {
                loss_trace.push(*v);
            }
        }
        converged &= est.converged;
        iterations_used = iterations_used.max(est.iterations_used);
    }

    Ok(JointEstimate {
        state,
        banked: Vec::new(),
        adjacency,
        precision,
        loss_trace,
        iterations_used,
        converged,
        edge_product,
    })
}
