//! Multi-condition datasets: q data matrices over a shared set of p nodes,
//! with per-node distribution families, validation, and the centering /
//! standardization preprocessing the estimators run on.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Conditional distribution family of one node given the others.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Gaussian,
    Bernoulli,
    Poisson,
}

impl Family {
    /// Parse a family tag as used in CLI flags and config files.
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(Family::Gaussian),
            "bernoulli" | "binary" => Ok(Family::Bernoulli),
            "poisson" | "count" => Ok(Family::Poisson),
            other => Err(Error::InvalidConfig(format!("unknown family `{other}`"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::Bernoulli => "bernoulli",
            Family::Poisson => "poisson",
        }
    }
}

/// Preprocessing applied to every graph, column by column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StandardizeMode {
    /// Subtract per-graph column means from every column.
    CenterCovariates,
    /// Center and scale every column to unit sample standard deviation
    /// (all-Gaussian datasets only).
    StandardizeAll,
}

/// Observed samples for q graphs sharing the same p nodes.
///
/// Rows are observations, columns are nodes. All graphs must agree on the
/// column count and on the per-node family tags; sample sizes may differ.
#[derive(Debug, Clone)]
pub struct MultiGraphDataset {
    graphs: Vec<DMatrix<f64>>,
    family: Vec<Family>,
    labels: Vec<String>,
    standardized: Option<StandardizeMode>,
}

impl MultiGraphDataset {
    /// Build and validate a dataset. Labels default to `V1..Vp` when empty.
    pub fn new(
        graphs: Vec<DMatrix<f64>>,
        family: Vec<Family>,
        labels: Vec<String>,
    ) -> Result<Self> {
        let labels = if labels.is_empty() && !family.is_empty() {
            (1..=family.len()).map(|i| format!("V{i}")).collect()
        } else {
            labels
        };
        let ds = MultiGraphDataset {
            graphs,
            family,
            labels,
            standardized: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Shorthand for an all-Gaussian dataset with default labels.
    pub fn gaussian(graphs: Vec<DMatrix<f64>>) -> Result<Self> {
        let p = graphs.first().map(|g| g.ncols()).unwrap_or(0);
        Self::new(graphs, vec![Family::Gaussian; p], Vec::new())
    }

    /// Check every type invariant, reporting the first violation.
    pub fn validate(&self) -> Result<()> {
        if self.graphs.is_empty() {
            return Err(Error::DimensionMismatch("no graphs supplied".into()));
        }
        let p = self.family.len();
        if p == 0 {
            return Err(Error::DimensionMismatch("no nodes (p = 0)".into()));
        }
        if self.labels.len() != p {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {} nodes",
                self.labels.len(),
                p
            )));
        }
        for (l, g) in self.graphs.iter().enumerate() {
            if g.nrows() == 0 {
                return Err(Error::DimensionMismatch(format!("graph {} is empty", l + 1)));
            }
            if g.ncols() != p {
                return Err(Error::DimensionMismatch(format!(
                    "graph {} has {} columns, expected {}",
                    l + 1,
                    g.ncols(),
                    p
                )));
            }
            for v in g.iter() {
                if !v.is_finite() {
                    return Err(Error::FamilyViolation(format!(
                        "graph {} contains a non-finite value",
                        l + 1
                    )));
                }
            }
            // Value constraints only apply to raw data; centering/scaling
            // intentionally moves discrete columns off their support.
            if self.standardized.is_none() {
                for (j, fam) in self.family.iter().enumerate() {
                    let col = g.column(j);
                    match fam {
                        Family::Gaussian => {}
                        Family::Bernoulli => {
                            if col.iter().any(|&x| x != 0.0 && x != 1.0) {
                                return Err(Error::FamilyViolation(format!(
                                    "graph {} column {} (bernoulli) has values outside {{0,1}}",
                                    l + 1,
                                    j + 1
                                )));
                            }
                        }
                        Family::Poisson => {
                            if col.iter().any(|&x| x < 0.0 || x.fract() != 0.0) {
                                return Err(Error::FamilyViolation(format!(
                                    "graph {} column {} (poisson) has a negative or non-integer value",
                                    l + 1,
                                    j + 1
                                )));
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Number of graphs q.
    pub fn num_graphs(&self) -> usize {
        self.graphs.len()
    }

    /// Number of nodes p.
    pub fn num_nodes(&self) -> usize {
        self.family.len()
    }

    /// Per-graph sample sizes n^(l).
    pub fn sample_sizes(&self) -> Vec<usize> {
        self.graphs.iter().map(|g| g.nrows()).collect()
    }

    /// Total observed sample size across graphs.
    pub fn total_samples(&self) -> usize {
        self.graphs.iter().map(|g| g.nrows()).sum()
    }

    pub fn graphs(&self) -> &[DMatrix<f64>] {
        &self.graphs
    }

    pub fn graph(&self, l: usize) -> &DMatrix<f64> {
        &self.graphs[l]
    }

    pub fn family(&self) -> &[Family] {
        &self.family
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Which preprocessing has been applied, if any.
    pub fn standardized(&self) -> Option<StandardizeMode> {
        self.standardized
    }

    pub fn is_all_gaussian(&self) -> bool {
        self.family.iter().all(|f| *f == Family::Gaussian)
    }

    /// Per-graph column means of the observed data.
    pub fn column_means(&self) -> Vec<Vec<f64>> {
        self.graphs
            .iter()
            .map(|g| {
                (0..g.ncols())
                    .map(|j| g.column(j).sum() / g.nrows() as f64)
                    .collect()
            })
            .collect()
    }

    /// Pooled mean of node `j` over all graphs' observations.
    pub fn pooled_mean(&self, j: usize) -> f64 {
        let total: f64 = self.graphs.iter().map(|g| g.column(j).sum()).sum();
        total / self.total_samples() as f64
    }

    /// Center or fully standardize every column, per graph independently.
    ///
    /// Standard deviations use the n-1 denominator. `StandardizeAll` rejects
    /// non-Gaussian datasets and zero-variance columns.
    pub fn standardize(&self, mode: StandardizeMode) -> Result<Self> {
        self.validate()?;
        if mode == StandardizeMode::StandardizeAll && !self.is_all_gaussian() {
            return Err(Error::InvalidConfig(
                "standardize_all requires an all-gaussian dataset".into(),
            ));
        }
        let mut graphs = Vec::with_capacity(self.graphs.len());
        for (l, g) in self.graphs.iter().enumerate() {
            let n = g.nrows();
            let mut out = g.clone();
            for j in 0..g.ncols() {
                let mean = g.column(j).sum() / n as f64;
                let mut col = out.column_mut(j);
                col.add_scalar_mut(-mean);
                if mode == StandardizeMode::StandardizeAll {
                    let ss: f64 = col.iter().map(|x| x * x).sum();
                    let sd = if n > 1 { (ss / (n - 1) as f64).sqrt() } else { 0.0 };
                    if sd <= f64::EPSILON * mean.abs().max(1.0) {
                        return Err(Error::ZeroVariance { graph: l, column: j });
                    }
                    col.scale_mut(1.0 / sd);
                }
            }
            graphs.push(out);
        }
        Ok(MultiGraphDataset {
            graphs,
            family: self.family.clone(),
            labels: self.labels.clone(),
            standardized: Some(mode),
        })
    }

    /// Dataset containing only graph `l`, for single-graph baselines.
    pub fn single(&self, l: usize) -> Self {
        MultiGraphDataset {
            graphs: vec![self.graphs[l].clone()],
            family: self.family.clone(),
            labels: self.labels.clone(),
            standardized: self.standardized,
        }
    }
}
