//! Assembly of noise-augmented design matrices.
//!
//! Observed rows are block-diagonal across graphs: a row from graph l has
//! zeros in every other graph's column block. Noise rows are dense across
//! all q blocks, which is what couples the graphs in a single regression.
//! Columns are ordered graph-major, then by coefficient slot.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::state::CoefLayout;

/// Column bookkeeping for one assembled design.
#[derive(Debug, Clone)]
pub struct DesignLayout {
    pub q: usize,
    pub p: usize,
    /// Outcome node (0-based).
    pub node: usize,
    /// Coefficient slots per graph.
    pub d: usize,
    pub coef_layout: CoefLayout,
    /// Whether a shared intercept column is appended after the q*d block.
    pub intercept: bool,
}

impl DesignLayout {
    /// Column index of (graph l, covariate node k), if that node has a slot.
    pub fn col(&self, l: usize, k: usize) -> Option<usize> {
        self.coef_layout.slot(self.node, k, self.p).map(|s| l * self.d + s)
    }

    /// Inverse of `col`: (graph, covariate node) of a coefficient column.
    pub fn pair_at(&self, col: usize) -> (usize, usize) {
        let l = col / self.d;
        let s = col % self.d;
        (l, self.coef_layout.node_of_slot(self.node, s))
    }

    pub fn num_cols(&self) -> usize {
        self.q * self.d + usize::from(self.intercept)
    }
}

/// A combined design matrix and outcome for one node's regression.
///
/// For the column-inverse backend `outcome` holds the linear-term vector of
/// the quadratic objective (length = column count) rather than a row-wise
/// response.
#[derive(Debug, Clone)]
pub struct AugmentedDesign {
    pub design: DMatrix<f64>,
    pub outcome: DVector<f64>,
    /// Count of observed (non-noise) rows.
    pub obs_rows: usize,
    pub layout: DesignLayout,
}

fn check_noise_cols(e: &DMatrix<f64>, cols: usize, what: &str) -> Result<()> {
    if e.nrows() > 0 && e.ncols() != cols {
        return Err(Error::DimensionMismatch(format!(
            "{what} noise has {} columns, layout wants {cols}",
            e.ncols()
        )));
    }
    Ok(())
}

/// Assemble the all-others design for outcome node `j`.
///
/// `covariate_means[l][k]`, when given, is subtracted from covariate
/// entries of graph l's observed rows (outcomes stay raw). `outcome_value`
/// fills the outcome entry of every noise row.
#[allow(clippy::too_many_arguments)]
pub fn assemble_ns(
    graphs: &[DMatrix<f64>],
    j: usize,
    e1: &DMatrix<f64>,
    e2: &DMatrix<f64>,
    outcome_value: f64,
    covariate_means: Option<&[Vec<f64>]>,
    intercept: bool,
) -> Result<AugmentedDesign> {
    let q = graphs.len();
    let p = graphs[0].ncols();
    let d = p - 1;
    let layout = DesignLayout {
        q,
        p,
        node: j,
        d,
        coef_layout: CoefLayout::AllOthers,
        intercept,
    };
    check_noise_cols(e1, q * d, "e1")?;
    check_noise_cols(e2, q * d, "e2")?;

    let n_obs: usize = graphs.iter().map(|g| g.nrows()).sum();
    let rows = n_obs + e1.nrows() + e2.nrows();
    let cols = layout.num_cols();
    let mut design = DMatrix::zeros(rows, cols);
    let mut outcome = DVector::zeros(rows);

    let mut row = 0;
    for (l, g) in graphs.iter().enumerate() {
        for i in 0..g.nrows() {
            for k in 0..p {
                if k == j {
                    continue;
                }
                let mut x = g[(i, k)];
                if let Some(means) = covariate_means {
                    x -= means[l][k];
                }
                design[(row, layout.col(l, k).unwrap())] = x;
            }
            outcome[row] = g[(i, j)];
            row += 1;
        }
    }
    for e in [e1, e2] {
        for i in 0..e.nrows() {
            for c in 0..q * d {
                design[(row, c)] = e[(i, c)];
            }
            outcome[row] = outcome_value;
            row += 1;
        }
    }
    if intercept {
        design.column_mut(cols - 1).fill(1.0);
    }
    Ok(AugmentedDesign {
        design,
        outcome,
        obs_rows: n_obs,
        layout,
    })
}

/// Assemble the growing design of the decomposition backend: node `j`
/// (0-based, j >= 1) regressed on nodes 0..j, q*j columns. Data must be
/// standardized, so the noise outcome entries are zero.
pub fn assemble_cd(
    graphs: &[DMatrix<f64>],
    j: usize,
    e1: &DMatrix<f64>,
    e2: &DMatrix<f64>,
) -> Result<AugmentedDesign> {
    if j == 0 {
        return Err(Error::InvalidConfig(
            "node 1 has no covariates; its variance is the sample variance".into(),
        ));
    }
    let q = graphs.len();
    let p = graphs[0].ncols();
    let d = j;
    let layout = DesignLayout {
        q,
        p,
        node: j,
        d,
        coef_layout: CoefLayout::Preceding,
        intercept: false,
    };
    check_noise_cols(e1, q * d, "e1")?;
    check_noise_cols(e2, q * d, "e2")?;

    let n_obs: usize = graphs.iter().map(|g| g.nrows()).sum();
    let rows = n_obs + e1.nrows() + e2.nrows();
    let mut design = DMatrix::zeros(rows, layout.num_cols());
    let mut outcome = DVector::zeros(rows);

    let mut row = 0;
    for (l, g) in graphs.iter().enumerate() {
        for i in 0..g.nrows() {
            for k in 0..j {
                design[(row, layout.col(l, k).unwrap())] = g[(i, k)];
            }
            outcome[row] = g[(i, j)];
            row += 1;
        }
    }
    for e in [e1, e2] {
        for i in 0..e.nrows() {
            for c in 0..q * d {
                design[(row, c)] = e[(i, c)];
            }
            row += 1;
        }
    }
    Ok(AugmentedDesign {
        design,
        outcome,
        obs_rows: n_obs,
        layout,
    })
}

/// Assemble the column-inverse design for column `j`: all p columns per
/// graph (the diagonal is a coefficient too), with pre-scaled noise rows.
/// `outcome` is the stacked indicator vector with a one at each graph's
/// position `j`.
pub fn assemble_scio(
    graphs: &[DMatrix<f64>],
    j: usize,
    e1: &DMatrix<f64>,
    e2: &DMatrix<f64>,
) -> Result<AugmentedDesign> {
    let q = graphs.len();
    let p = graphs[0].ncols();
    let layout = DesignLayout {
        q,
        p,
        node: j,
        d: p,
        coef_layout: CoefLayout::FullColumn,
        intercept: false,
    };
    check_noise_cols(e1, q * p, "e1")?;
    check_noise_cols(e2, q * p, "e2")?;

    let n_obs: usize = graphs.iter().map(|g| g.nrows()).sum();
    let rows = n_obs + e1.nrows() + e2.nrows();
    let mut design = DMatrix::zeros(rows, q * p);
    let mut row = 0;
    for (l, g) in graphs.iter().enumerate() {
        for i in 0..g.nrows() {
            for k in 0..p {
                design[(row, l * p + k)] = g[(i, k)];
            }
            row += 1;
        }
    }
    for e in [e1, e2] {
        for i in 0..e.nrows() {
            for c in 0..q * p {
                design[(row, c)] = e[(i, c)];
            }
            row += 1;
        }
    }
    let mut xi = DVector::zeros(q * p);
    for l in 0..q {
        xi[l * p + j] = 1.0;
    }
    Ok(AugmentedDesign {
        design,
        outcome: xi,
        obs_rows: n_obs,
        layout,
    })
}
