//! Per-graph, per-node coefficient state iterated by all estimators.

use crate::error::{Error, Result};

/// How each node's coefficient vector indexes the other nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoefLayout {
    /// Node j regresses on all other nodes: p-1 slots, node k maps to slot
    /// k (k < j) or k-1 (k > j). Used by the regression backend.
    AllOthers,
    /// Node j regresses on nodes 1..j: j-1 slots (node k < j at slot k).
    /// Used by the decomposition backend.
    Preceding,
    /// Full precision column: p slots including the diagonal entry at j.
    /// Used by the column-inverse backend.
    FullColumn,
}

impl CoefLayout {
    /// Number of coefficient slots for outcome node `j` (0-based) with `p` nodes.
    pub fn coef_count(&self, j: usize, p: usize) -> usize {
        match self {
            CoefLayout::AllOthers => p - 1,
            CoefLayout::Preceding => j,
            CoefLayout::FullColumn => p,
        }
    }

    /// Slot of covariate node `k` in outcome node `j`'s vector, if present.
    pub fn slot(&self, j: usize, k: usize, p: usize) -> Option<usize> {
        match self {
            CoefLayout::AllOthers => {
                if k == j || k >= p {
                    None
                } else if k < j {
                    Some(k)
                } else {
                    Some(k - 1)
                }
            }
            CoefLayout::Preceding => (k < j).then_some(k),
            CoefLayout::FullColumn => (k < p).then_some(k),
        }
    }

    /// Inverse of `slot`: which node a slot refers to.
    pub fn node_of_slot(&self, j: usize, s: usize) -> usize {
        match self {
            CoefLayout::AllOthers => {
                if s < j {
                    s
                } else {
                    s + 1
                }
            }
            CoefLayout::Preceding | CoefLayout::FullColumn => s,
        }
    }
}

/// Coefficient vectors theta[graph][node][slot], the per-node intercepts,
/// and the per-graph per-node residual variances.
///
/// Only the sum of per-graph intercepts is identifiable (the fit uses one
/// shared intercept column), so a single combined intercept is stored per
/// node. Residual variances are per graph for the decomposition backend;
/// the regression backend fills the same value across graphs.
#[derive(Debug, Clone)]
pub struct ParameterState {
    pub layout: CoefLayout,
    pub theta: Vec<Vec<Vec<f64>>>,
    pub intercepts: Vec<f64>,
    pub sigma2_nodes: Vec<Vec<f64>>,
}

impl ParameterState {
    /// All-zero state for `q` graphs over `p` nodes, unit variances.
    pub fn zeros(layout: CoefLayout, q: usize, p: usize) -> Self {
        let theta = (0..q)
            .map(|_| (0..p).map(|j| vec![0.0; layout.coef_count(j, p)]).collect())
            .collect();
        ParameterState {
            layout,
            theta,
            intercepts: vec![0.0; p],
            sigma2_nodes: vec![vec![1.0; p]; q],
        }
    }

    pub fn num_graphs(&self) -> usize {
        self.theta.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.intercepts.len()
    }

    /// Coefficient theta^(l)_{jk}; zero when node k has no slot for outcome j.
    pub fn coef(&self, l: usize, j: usize, k: usize) -> f64 {
        match self.layout.slot(j, k, self.num_nodes()) {
            Some(s) => self.theta[l][j][s],
            None => 0.0,
        }
    }

    /// Check finiteness and per-layout lengths.
    pub fn validate(&self) -> Result<()> {
        let p = self.num_nodes();
        for (l, graph) in self.theta.iter().enumerate() {
            if graph.len() != p {
                return Err(Error::DimensionMismatch(format!(
                    "state graph {} has {} nodes, expected {}",
                    l,
                    graph.len(),
                    p
                )));
            }
            for (j, v) in graph.iter().enumerate() {
                if v.len() != self.layout.coef_count(j, p) {
                    return Err(Error::DimensionMismatch(format!(
                        "state graph {l} node {j}: {} coefficients, expected {}",
                        v.len(),
                        self.layout.coef_count(j, p)
                    )));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::InvalidConfig(format!(
                        "non-finite coefficient at graph {l} node {j}"
                    )));
                }
            }
        }
        for row in &self.sigma2_nodes {
            if row.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
                return Err(Error::InvalidConfig("sigma2_nodes must be positive".into()));
            }
        }
        Ok(())
    }
}
