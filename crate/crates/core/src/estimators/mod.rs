//! The three joint estimation backends plus the naive per-graph baseline
//! and the grouped-regression mode.
//!
//! All backends share one loop shape: redraw the augmentation noise with
//! the current smoothed coefficients plugged into its variances, refit
//! every node, smooth with a trailing moving average, and watch the loss
//! trace. After the stopping rule fires, `bank` further iterates are
//! recorded; an edge is dropped when its banked trajectory straddles zero
//! with a small max*min product.

mod cd;
mod grouped;
mod naive;
mod ns;
mod scio;

pub use cd::run_cd;
pub use grouped::{fit_grouped_regression, GroupedConfig};
pub use naive::run_naive;
pub use ns::run_ns;
pub use scio::run_scio;

use std::collections::VecDeque;

use nalgebra::DMatrix;

use crate::dataset::MultiGraphDataset;
use crate::error::{Error, Result};
use crate::noise::NoiseSpec;
use crate::state::ParameterState;

/// Estimation backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    /// Node-wise GLM regressions (all node families).
    Ns,
    /// Sequential regressions through the LDL decomposition (Gaussian only,
    /// positive semidefinite precision by construction).
    Cd,
    /// Closed-form column-inverse solves (Gaussian only).
    Scio,
}

impl Backend {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ns" => Ok(Backend::Ns),
            "cd" => Ok(Backend::Cd),
            "scio" => Ok(Backend::Scio),
            other => Err(Error::InvalidConfig(format!("unknown backend `{other}`"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Backend::Ns => "ns",
            Backend::Cd => "cd",
            Backend::Scio => "scio",
        }
    }
}

/// Stopping rule applied to the loss trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Convergence {
    /// Stop once |l(t+1)-l(t)|/|l(t)| < tol for `window` consecutive steps.
    RelativeChange { tol: f64, window: usize },
    /// Run exactly `max_iter` iterations.
    FixedIterations,
}

impl Default for Convergence {
    fn default() -> Self {
        Convergence::RelativeChange {
            tol: 1e-3,
            window: 3,
        }
    }
}

/// Algorithm parameters shared by every backend.
#[derive(Debug, Clone)]
pub struct EstimatorConfig {
    pub backend: Backend,
    pub noise: NoiseSpec,
    /// Maximum iterations T.
    pub max_iter: usize,
    /// Trailing moving-average window m.
    pub ma_window: usize,
    /// Post-convergence iterates banked for thresholding, r.
    pub bank: usize,
    /// Edge threshold tau0.
    pub tau0: f64,
    /// Inner alternations between coefficients and residual variances
    /// (decomposition backend only).
    pub inner_loops: usize,
    pub convergence: Convergence,
    pub seed: u64,
}

impl EstimatorConfig {
    pub fn new(backend: Backend, noise: NoiseSpec) -> Self {
        EstimatorConfig {
            backend,
            noise,
            max_iter: 80,
            ma_window: 1,
            bank: 10,
            tau0: 1e-4,
            inner_loops: 3,
            convergence: Convergence::default(),
            seed: 0,
        }
    }

    pub fn validate(&self, q: usize) -> Result<()> {
        self.noise.validate(q)?;
        if self.ma_window < 1 || self.max_iter <= self.ma_window {
            return Err(Error::InvalidConfig(
                "need max_iter > ma_window >= 1".into(),
            ));
        }
        if self.bank < 1 {
            return Err(Error::InvalidConfig("bank must be >= 1".into()));
        }
        if !(self.tau0 > 0.0) {
            return Err(Error::InvalidConfig("tau0 must be > 0".into()));
        }
        if self.inner_loops < 1 {
            return Err(Error::InvalidConfig("inner_loops must be >= 1".into()));
        }
        Ok(())
    }
}

/// Result of one joint estimation run.
#[derive(Debug, Clone)]
pub struct JointEstimate {
    /// Final point estimates (banked means, thresholded to exact zeros).
    pub state: ParameterState,
    /// The r banked post-convergence snapshots.
    pub banked: Vec<ParameterState>,
    /// Symmetric zero-diagonal adjacency per graph.
    pub adjacency: Vec<DMatrix<u8>>,
    /// Recovered precision matrices (Gaussian backends only).
    pub precision: Option<Vec<DMatrix<f64>>>,
    /// Loss value per main-loop iteration.
    pub loss_trace: Vec<f64>,
    pub iterations_used: usize,
    pub converged: bool,
    /// Diagnostics: signed max*min of the banked trajectory for each
    /// directed coefficient (j, k), per graph.
    pub edge_product: Vec<DMatrix<f64>>,
}

/// Dispatch on the configured backend.
pub fn estimate(config: &EstimatorConfig, dataset: &MultiGraphDataset) -> Result<JointEstimate> {
    match config.backend {
        Backend::Ns => run_ns(config, dataset),
        Backend::Cd => run_cd(config, dataset),
        Backend::Scio => run_scio(config, dataset),
    }
}

/// True once the relative loss change stayed below tolerance for the
/// required number of consecutive steps. `FixedIterations` never stops the
/// loop early; the run reports converged when the budget is exhausted.
pub fn check_convergence(loss_trace: &[f64], criterion: &Convergence) -> bool {
    match criterion {
        Convergence::FixedIterations => false,
        Convergence::RelativeChange { tol, window } => {
            if loss_trace.len() < window + 1 {
                return false;
            }
            loss_trace
                .windows(2)
                .rev()
                .take(*window)
                .all(|w| (w[1] - w[0]).abs() / w[0].abs().max(f64::MIN_POSITIVE) < *tol)
        }
    }
}

/// max * min over a banked trajectory.
pub fn signed_extreme_product(traj: &[f64]) -> f64 {
    let mut mx = f64::NEG_INFINITY;
    let mut mn = f64::INFINITY;
    for &v in traj {
        mx = mx.max(v);
        mn = mn.min(v);
    }
    mx * mn
}

/// One-direction no-edge rule: the trajectory crossed zero and the product
/// of its extremes is below tau0. A trajectory that touched zero exactly
/// counts as no-edge; small same-sign trajectories are kept.
pub fn no_edge_decision(traj: &[f64], tau0: f64) -> bool {
    let prod = signed_extreme_product(traj);
    prod == 0.0 || (prod < 0.0 && prod.abs() < tau0)
}

/// Edge decision from both directed trajectories: no edge when either
/// direction says so.
pub fn threshold_edges(traj_jk: &[f64], traj_kj: &[f64], tau0: f64) -> bool {
    !(no_edge_decision(traj_jk, tau0) || no_edge_decision(traj_kj, tau0))
}

/// Symmetrize two directed estimates: keep the smaller magnitude with the
/// shared sign; conflicting signs collapse to zero.
pub fn magnitude_min(a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 || a.signum() != b.signum() {
        0.0
    } else if a.abs() <= b.abs() {
        a
    } else {
        b
    }
}

/// Trailing moving-average buffer for one node's coefficients (all graphs)
/// plus its intercept.
pub(crate) struct NodeMa {
    window: usize,
    hist: VecDeque<(Vec<Vec<f64>>, f64)>,
}

impl NodeMa {
    pub(crate) fn new(window: usize) -> Self {
        NodeMa {
            window,
            hist: VecDeque::with_capacity(window + 1),
        }
    }

    /// Push a fresh estimate and return the average over the trailing
    /// window (fewer entries while warming up).
    pub(crate) fn push(&mut self, theta: Vec<Vec<f64>>, intercept: f64) -> (Vec<Vec<f64>>, f64) {
        self.hist.push_back((theta, intercept));
        if self.hist.len() > self.window {
            self.hist.pop_front();
        }
        let count = self.hist.len() as f64;
        let (first, _) = &self.hist[0];
        let mut avg: Vec<Vec<f64>> = first
            .iter()
            .map(|v| vec![0.0; v.len()])
            .collect();
        let mut a0 = 0.0;
        for (th, ic) in &self.hist {
            for (l, v) in th.iter().enumerate() {
                for (s, x) in v.iter().enumerate() {
                    avg[l][s] += x;
                }
            }
            a0 += ic;
        }
        for v in avg.iter_mut() {
            for x in v.iter_mut() {
                *x /= count;
            }
        }
        (avg, a0 / count)
    }
}

/// Mean of each coefficient over banked snapshots, for one (graph, node).
pub(crate) fn banked_mean(banked: &[ParameterState], l: usize, j: usize) -> Vec<f64> {
    let len = banked[0].theta[l][j].len();
    let mut out = vec![0.0; len];
    for st in banked {
        for (s, x) in st.theta[l][j].iter().enumerate() {
            out[s] += x;
        }
    }
    for x in out.iter_mut() {
        *x /= banked.len() as f64;
    }
    out
}

/// The banked trajectory of one directed coefficient.
pub(crate) fn trajectory(banked: &[ParameterState], l: usize, j: usize, slot: usize) -> Vec<f64> {
    banked.iter().map(|st| st.theta[l][j][slot]).collect()
}
