//! Noise-generating distributions.
//!
//! Two families of augmented noise drive all regularization in this crate.
//! The first (`e1`) is drawn independently per graph and per coefficient
//! with a variance that is a function of the current coefficient estimate;
//! its choice selects the per-graph penalty (bridge, elastic-net, adaptive
//! lasso). The second (`e2`) couples the q coefficients sitting at the same
//! position across graphs: i.i.d. entries scaled by the inverse group norm
//! yield a group-lasso coupling (jgl), while a singular circulant covariance
//! built from the difference operator `T` yields a fused-ridge coupling
//! (jfr). Expectations of the augmented loss over these draws produce the
//! corresponding penalties exactly for Gaussian losses and to second order
//! otherwise.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::dataset::MultiGraphDataset;
use crate::error::{Error, Result};
use crate::state::ParameterState;

/// Per-graph regularization noise family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum E1Kind {
    /// N(0, lambda |theta|^-gamma); gamma = 1 is lasso, gamma = 2 is ridge.
    Bridge,
    /// N(0, lambda |theta|^-1 + sigma2).
    ElasticNet,
    /// N(0, lambda |theta|^-1 |theta_ref|^-gamma) with a fixed reference
    /// estimate.
    AdaptiveLasso,
}

/// Cross-graph similarity noise family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum E2Kind {
    /// Structural similarity: shared zero patterns (group lasso coupling).
    GroupLasso,
    /// Numerical similarity: equal coefficient values (fused ridge coupling).
    FusedRidge,
}

impl E1Kind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bridge" | "lasso" => Ok(E1Kind::Bridge),
            "enet" | "elastic_net" | "elastic-net" => Ok(E1Kind::ElasticNet),
            "adalasso" | "adaptive_lasso" | "adaptive-lasso" => Ok(E1Kind::AdaptiveLasso),
            other => Err(Error::InvalidConfig(format!("unknown e1 kind `{other}`"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            E1Kind::Bridge => "bridge",
            E1Kind::ElasticNet => "enet",
            E1Kind::AdaptiveLasso => "adalasso",
        }
    }
}

impl E2Kind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "jgl" => Ok(E2Kind::GroupLasso),
            "jfr" => Ok(E2Kind::FusedRidge),
            other => Err(Error::InvalidConfig(format!("unknown e2 kind `{other}`"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            E2Kind::GroupLasso => "jgl",
            E2Kind::FusedRidge => "jfr",
        }
    }
}

/// Noise selection and tuning parameters for one estimation run.
#[derive(Debug, Clone)]
pub struct NoiseSpec {
    pub e1_kind: E1Kind,
    /// Bridge exponent, in (0, 2].
    pub gamma: f64,
    /// Per-graph tuning values lambda1^(l) >= 0.
    pub lambda1: Vec<f64>,
    /// Ridge component of the elastic-net variance.
    pub sigma2: f64,
    pub e2_kind: E2Kind,
    pub lambda2: f64,
    /// Rows of e1 noise.
    pub n_e1: usize,
    /// Rows of e2 noise.
    pub n_e2: usize,
    /// Lower bound applied to |theta| inside variance denominators.
    pub theta_floor: f64,
}

impl NoiseSpec {
    /// Lasso-type defaults: bridge gamma = 1, group-lasso coupling.
    pub fn lasso(lambda1: Vec<f64>, lambda2: f64, n_e1: usize, n_e2: usize) -> Self {
        NoiseSpec {
            e1_kind: E1Kind::Bridge,
            gamma: 1.0,
            lambda1,
            sigma2: 0.0,
            e2_kind: E2Kind::GroupLasso,
            lambda2,
            n_e1,
            n_e2,
            theta_floor: 1e-6,
        }
    }

    pub fn with_e2(mut self, kind: E2Kind) -> Self {
        self.e2_kind = kind;
        self
    }

    pub fn validate(&self, q: usize) -> Result<()> {
        if self.lambda1.len() != q {
            return Err(Error::InvalidConfig(format!(
                "lambda1 has {} entries for {} graphs",
                self.lambda1.len(),
                q
            )));
        }
        if self.lambda1.iter().any(|&l| l < 0.0 || !l.is_finite()) {
            return Err(Error::InvalidConfig("lambda1 must be >= 0".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 2.0) {
            return Err(Error::InvalidConfig("gamma must lie in (0, 2]".into()));
        }
        if self.sigma2 < 0.0 || self.lambda2 < 0.0 {
            return Err(Error::InvalidConfig("sigma2 and lambda2 must be >= 0".into()));
        }
        if !(self.theta_floor > 0.0) {
            return Err(Error::InvalidConfig("theta_floor must be > 0".into()));
        }
        Ok(())
    }

    /// Remark-2 feasibility: total rows must exceed q*p for unique MLEs.
    pub fn check_feasible(&self, total_obs: usize, q: usize, p: usize) -> Result<()> {
        let rows = total_obs + self.n_e1 + self.n_e2;
        if rows <= q * p {
            return Err(Error::Infeasible { rows, cols: q * p });
        }
        Ok(())
    }
}

/// Variance of one e1 noise entry for coefficient `theta`.
///
/// `theta_hat` is the reference estimate used by the adaptive-lasso kind.
/// Magnitudes are floored at `floor` so the variance stays finite at zero.
pub fn e1_variance(
    kind: E1Kind,
    gamma: f64,
    lambda1: f64,
    sigma2: f64,
    theta: f64,
    theta_hat: f64,
    floor: f64,
) -> f64 {
    let at = theta.abs().max(floor);
    match kind {
        E1Kind::Bridge => lambda1 * at.powf(-gamma),
        E1Kind::ElasticNet => lambda1 / at + sigma2,
        E1Kind::AdaptiveLasso => {
            let ah = theta_hat.abs().max(floor);
            lambda1 / at * ah.powf(-gamma)
        }
    }
}

/// The q x q difference operator behind the fused-ridge coupling:
/// T[s][s] = 1 and T[(s+1) mod q][s] = -1.
///
/// T T' has diagonal 2 and -1 at the circulant off-diagonals (collapsing to
/// -2 when q = 2); it is positive semidefinite with rank q-1.
pub fn build_t(q: usize) -> Result<DMatrix<f64>> {
    if q < 2 {
        return Err(Error::InvalidConfig("fused ridge requires q >= 2".into()));
    }
    let mut t = DMatrix::zeros(q, q);
    for s in 0..q {
        t[(s, s)] = 1.0;
        t[((s + 1) % q, s)] += -1.0;
    }
    Ok(t)
}

/// Euclidean norm of the cross-graph coefficient vector at (j, slot).
fn group_norm(state: &ParameterState, j: usize, slot: usize) -> f64 {
    state
        .theta
        .iter()
        .map(|g| g[j][slot] * g[j][slot])
        .sum::<f64>()
        .sqrt()
}

/// Sample a fused-ridge q-vector as sqrt(lambda2) * T z with z ~ N(0, I),
/// optionally scaled per graph; covariance lambda2 * D T T' D.
fn sample_fused_vector<R: Rng>(
    t: &DMatrix<f64>,
    lambda2: f64,
    graph_scale: Option<&[f64]>,
    rng: &mut R,
    out: &mut [f64],
) {
    let q = t.nrows();
    debug_assert_eq!(out.len(), q);
    let sqrt_l2 = lambda2.sqrt();
    // z_s enters rows s and (s+1) mod q of T z.
    for o in out.iter_mut() {
        *o = 0.0;
    }
    for s in 0..q {
        let z: f64 = rng.sample(StandardNormal);
        out[s] += z;
        out[(s + 1) % q] -= z;
    }
    for (l, o) in out.iter_mut().enumerate() {
        *o *= sqrt_l2;
        if let Some(scale) = graph_scale {
            *o *= scale[l];
        }
    }
}

/// Per-graph regularization noise for outcome node `j` in the all-others
/// layout: `n_e1` rows by q*(p-1) columns, entry (i, graph l, slot s)
/// independently N(0, V(theta^(l)_{j,s})).
///
/// `ref_state` supplies the adaptive-lasso reference estimates; pass the
/// current state for the other kinds.
pub fn sample_e1<R: Rng>(
    spec: &NoiseSpec,
    state: &ParameterState,
    ref_state: &ParameterState,
    j: usize,
    rng: &mut R,
) -> DMatrix<f64> {
    let q = state.num_graphs();
    let p = state.num_nodes();
    let d = state.layout.coef_count(j, p);
    let mut sd = vec![0.0; q * d];
    for l in 0..q {
        for s in 0..d {
            let v = e1_variance(
                spec.e1_kind,
                spec.gamma,
                spec.lambda1[l],
                spec.sigma2,
                state.theta[l][j][s],
                ref_state.theta[l][j][s],
                spec.theta_floor,
            );
            sd[l * d + s] = v.sqrt();
        }
    }
    DMatrix::from_fn(spec.n_e1, q * d, |_, c| {
        if sd[c] == 0.0 {
            0.0
        } else {
            sd[c] * rng.sample::<f64, _>(StandardNormal)
        }
    })
}

/// Cross-graph similarity noise for outcome node `j`: `n_e2` rows by
/// q*(p-1) columns.
///
/// Group-lasso coupling draws independent entries with variance
/// lambda2 / ||theta_{j,s}||; fused-ridge coupling draws each q-vector with
/// covariance lambda2 T T' (every vector sums to zero exactly).
pub fn sample_e2<R: Rng>(
    spec: &NoiseSpec,
    state: &ParameterState,
    j: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let q = state.num_graphs();
    let p = state.num_nodes();
    let d = state.layout.coef_count(j, p);
    let mut out = DMatrix::zeros(spec.n_e2, q * d);
    if spec.lambda2 == 0.0 || spec.n_e2 == 0 {
        return Ok(out);
    }
    match spec.e2_kind {
        E2Kind::GroupLasso => {
            let mut sd = vec![0.0; d];
            for (s, v) in sd.iter_mut().enumerate() {
                *v = (spec.lambda2 / group_norm(state, j, s).max(spec.theta_floor)).sqrt();
            }
            for i in 0..spec.n_e2 {
                for l in 0..q {
                    for s in 0..d {
                        out[(i, l * d + s)] = sd[s] * rng.sample::<f64, _>(StandardNormal);
                    }
                }
            }
        }
        E2Kind::FusedRidge => {
            let t = build_t(q)?;
            let mut vec_q = vec![0.0; q];
            for i in 0..spec.n_e2 {
                for s in 0..d {
                    sample_fused_vector(&t, spec.lambda2, None, rng, &mut vec_q);
                    for l in 0..q {
                        out[(i, l * d + s)] = vec_q[l];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Value placed in the outcome column of every noise row: the pooled mean
/// of node `j`'s observed data across graphs (zero for centered data).
pub fn outcome_noise(dataset: &MultiGraphDataset, j: usize) -> f64 {
    dataset.pooled_mean(j)
}

/// Noise for the decomposition backend at outcome node `j` (0-based,
/// j >= 1): covariates are restricted to nodes before `j` and every
/// variance carries the current residual variance sigma_j^(l)2 of its
/// graph. Outcome noise is zero on standardized data.
pub fn sample_cd_noise<R: Rng>(
    spec: &NoiseSpec,
    state: &ParameterState,
    ref_state: &ParameterState,
    j: usize,
    rng: &mut R,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if j == 0 {
        return Err(Error::InvalidConfig(
            "node 1 has no regression; its variance comes from the sample".into(),
        ));
    }
    let q = state.num_graphs();
    let d = j;
    let mut sd1 = vec![0.0; q * d];
    for l in 0..q {
        let s2 = state.sigma2_nodes[l][j];
        for s in 0..d {
            let v = s2 * e1_variance(
                spec.e1_kind,
                spec.gamma,
                spec.lambda1[l],
                spec.sigma2,
                state.theta[l][j][s],
                ref_state.theta[l][j][s],
                spec.theta_floor,
            );
            sd1[l * d + s] = v.sqrt();
        }
    }
    let e1 = DMatrix::from_fn(spec.n_e1, q * d, |_, c| {
        if sd1[c] == 0.0 {
            0.0
        } else {
            sd1[c] * rng.sample::<f64, _>(StandardNormal)
        }
    });

    let mut e2 = DMatrix::zeros(spec.n_e2, q * d);
    if spec.lambda2 > 0.0 && spec.n_e2 > 0 {
        match spec.e2_kind {
            E2Kind::GroupLasso => {
                for i in 0..spec.n_e2 {
                    for s in 0..d {
                        let base = spec.lambda2 / group_norm(state, j, s).max(spec.theta_floor);
                        for l in 0..q {
                            let sd = (base * state.sigma2_nodes[l][j]).sqrt();
                            e2[(i, l * d + s)] = sd * rng.sample::<f64, _>(StandardNormal);
                        }
                    }
                }
            }
            E2Kind::FusedRidge => {
                let t = build_t(q)?;
                let scale: Vec<f64> =
                    (0..q).map(|l| state.sigma2_nodes[l][j].sqrt()).collect();
                let mut vec_q = vec![0.0; q];
                for i in 0..spec.n_e2 {
                    for s in 0..d {
                        sample_fused_vector(&t, spec.lambda2, Some(&scale), rng, &mut vec_q);
                        for l in 0..q {
                            e2[(i, l * d + s)] = vec_q[l];
                        }
                    }
                }
            }
        }
    }
    Ok((e1, e2))
}

/// Noise for the column-inverse backend at column `j`: full-column layout
/// (q*p columns) with a zero column at each graph's diagonal position, all
/// entries scaled by sqrt(2n) where `n` is the common per-graph sample
/// size. The residual-variance factor of the coupling noise is absorbed
/// into lambda2 (standardized data).
pub fn sample_scio_noise<R: Rng>(
    spec: &NoiseSpec,
    state: &ParameterState,
    ref_state: &ParameterState,
    j: usize,
    n: usize,
    rng: &mut R,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let q = state.num_graphs();
    let p = state.num_nodes();
    let scale = (2.0 * n as f64).sqrt();

    let mut sd1 = vec![0.0; q * p];
    for l in 0..q {
        for s in 0..p {
            if s == j {
                continue;
            }
            let v = e1_variance(
                spec.e1_kind,
                spec.gamma,
                spec.lambda1[l],
                spec.sigma2,
                state.theta[l][j][s],
                ref_state.theta[l][j][s],
                spec.theta_floor,
            );
            sd1[l * p + s] = v.sqrt();
        }
    }
    let e1 = DMatrix::from_fn(spec.n_e1, q * p, |_, c| {
        if sd1[c] == 0.0 {
            0.0
        } else {
            scale * sd1[c] * rng.sample::<f64, _>(StandardNormal)
        }
    });

    let mut e2 = DMatrix::zeros(spec.n_e2, q * p);
    if spec.lambda2 > 0.0 && spec.n_e2 > 0 {
        match spec.e2_kind {
            E2Kind::GroupLasso => {
                for i in 0..spec.n_e2 {
                    for s in 0..p {
                        if s == j {
                            continue;
                        }
                        let sd =
                            (spec.lambda2 / group_norm(state, j, s).max(spec.theta_floor)).sqrt();
                        for l in 0..q {
                            e2[(i, l * p + s)] =
                                scale * sd * rng.sample::<f64, _>(StandardNormal);
                        }
                    }
                }
            }
            E2Kind::FusedRidge => {
                let t = build_t(q)?;
                let mut vec_q = vec![0.0; q];
                for i in 0..spec.n_e2 {
                    for s in 0..p {
                        if s == j {
                            continue;
                        }
                        sample_fused_vector(&t, spec.lambda2, None, rng, &mut vec_q);
                        for l in 0..q {
                            e2[(i, l * p + s)] = scale * vec_q[l];
                        }
                    }
                }
            }
        }
    }
    Ok((e1, e2))
}

/// Grouped-regression noise kinds for general (non-graphical) regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupedKind {
    /// Lasso within groups plus group-level sparsity (sparse group lasso).
    SparseGroupLasso,
    /// Lasso within groups plus within-group fusion (sparse fused ridge).
    SparseFusedRidge,
}

/// Noise matrices for a single regression whose predictors are partitioned
/// into groups. `theta` is ordered group-major; `lambda1[l]` applies to
/// group `l`. Returns (e1, e2), each n_e x p_total.
pub fn grouped_regression_noise<R: Rng>(
    group_sizes: &[usize],
    theta: &[f64],
    lambda1: &[f64],
    lambda2: f64,
    kind: GroupedKind,
    n_e1: usize,
    n_e2: usize,
    floor: f64,
    rng: &mut R,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if group_sizes.iter().any(|&s| s == 0) {
        return Err(Error::InvalidConfig("empty predictor group".into()));
    }
    let p_total: usize = group_sizes.iter().sum();
    if theta.len() != p_total || lambda1.len() != group_sizes.len() {
        return Err(Error::DimensionMismatch(
            "grouped noise: theta/lambda1 lengths disagree with group sizes".into(),
        ));
    }

    let mut sd1 = vec![0.0; p_total];
    let mut offset = 0;
    for (l, &pl) in group_sizes.iter().enumerate() {
        for s in 0..pl {
            sd1[offset + s] = (lambda1[l] / theta[offset + s].abs().max(floor)).sqrt();
        }
        offset += pl;
    }
    let e1 = DMatrix::from_fn(n_e1, p_total, |_, c| {
        if sd1[c] == 0.0 {
            0.0
        } else {
            sd1[c] * rng.sample::<f64, _>(StandardNormal)
        }
    });

    let mut e2 = DMatrix::zeros(n_e2, p_total);
    if lambda2 > 0.0 && n_e2 > 0 {
        match kind {
            GroupedKind::SparseGroupLasso => {
                let mut offset = 0;
                for &pl in group_sizes {
                    let norm: f64 = theta[offset..offset + pl]
                        .iter()
                        .map(|t| t * t)
                        .sum::<f64>()
                        .sqrt();
                    let sd = (lambda2 / norm.max(floor)).sqrt();
                    for i in 0..n_e2 {
                        for s in 0..pl {
                            e2[(i, offset + s)] = sd * rng.sample::<f64, _>(StandardNormal);
                        }
                    }
                    offset += pl;
                }
            }
            GroupedKind::SparseFusedRidge => {
                let mut offset = 0;
                for &pl in group_sizes {
                    // Nothing to fuse inside a singleton group.
                    if pl >= 2 {
                        let t = build_t(pl)?;
                        let mut vec_p = vec![0.0; pl];
                        for i in 0..n_e2 {
                            sample_fused_vector(&t, lambda2, None, rng, &mut vec_p);
                            for s in 0..pl {
                                e2[(i, offset + s)] = vec_p[s];
                            }
                        }
                    }
                    offset += pl;
                }
            }
        }
    }
    Ok((e1, e2))
}
