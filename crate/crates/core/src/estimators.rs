//! Per-cluster least squares, the cluster-average estimator, superblock
//! averages, and the pooled OLS baseline.
//!
//! Least-squares solves go through a thin QR factorization of the design.
//! A [`ClusterSolver`] caches that factorization so a fixed design can be
//! refit against many responses, which is what the Monte Carlo engine does.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dataset::{Cluster, ClusteredDataset};
use crate::error::{Error, Result};
use crate::linalg::{singular_value_ratio, symmetrize, RANK_TOLERANCE};

/// QR-based least-squares operator for one fixed design matrix.
#[derive(Debug, Clone)]
pub struct ClusterSolver {
    /// `R⁻¹ Q₁'`, the `k × n` map from responses to coefficients.
    projector: DMatrix<f64>,
    gram_inv: DMatrix<f64>,
}

impl ClusterSolver {
    /// Factorizes `x`; `None` when it has fewer rows than columns or its
    /// singular-value ratio is below [`RANK_TOLERANCE`].
    pub fn new(x: &DMatrix<f64>) -> Option<Self> {
        let (n, k) = x.shape();
        if n < k || k == 0 {
            return None;
        }
        let qr = x.clone().qr();
        let r = qr.r();
        let ratio = singular_value_ratio(&r);
        if ratio.is_nan() || ratio < RANK_TOLERANCE {
            return None;
        }
        let q = qr.q();
        let projector = r.solve_upper_triangular(&q.transpose())?;
        let r_inv = r.solve_upper_triangular(&DMatrix::identity(k, k))?;
        let mut gram_inv = &r_inv * r_inv.transpose();
        symmetrize(&mut gram_inv);
        Some(Self {
            projector,
            gram_inv,
        })
    }

    pub fn k(&self) -> usize {
        self.projector.nrows()
    }

    pub fn n(&self) -> usize {
        self.projector.ncols()
    }

    pub fn solve(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.projector * y
    }

    /// `(X'X)⁻¹`.
    pub fn gram_inv(&self) -> &DMatrix<f64> {
        &self.gram_inv
    }

    /// `(X'X)⁻¹X'`.
    pub fn projector(&self) -> &DMatrix<f64> {
        &self.projector
    }
}

/// OLS fit of one cluster.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterFit {
    pub cluster_id: String,
    pub beta_hat: DVector<f64>,
    /// `(X_g'X_g)⁻¹`
    pub gram_inv: DMatrix<f64>,
    pub n: usize,
}

fn singular(id: &str) -> Error {
    Error::SingularClusters {
        ids: vec![id.to_string()],
    }
}

pub fn fit_cluster(c: &Cluster) -> Result<ClusterFit> {
    let solver = ClusterSolver::new(&c.x).ok_or_else(|| singular(&c.id))?;
    Ok(fit_with(&solver, c))
}

fn fit_with(solver: &ClusterSolver, c: &Cluster) -> ClusterFit {
    ClusterFit {
        cluster_id: c.id.clone(),
        beta_hat: solver.solve(&c.y),
        gram_inv: solver.gram_inv.clone(),
        n: c.len(),
    }
}

/// The unweighted mean of per-cluster OLS coefficients.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AverageEstimate {
    pub beta_bar_hat: DVector<f64>,
    pub per_cluster: Vec<ClusterFit>,
}

impl AverageEstimate {
    pub fn from_fits(per_cluster: Vec<ClusterFit>) -> Result<Self> {
        let first = per_cluster
            .first()
            .ok_or_else(|| Error::EmptyInput("no cluster fits to average".into()))?;
        let mut sum = DVector::zeros(first.beta_hat.len());
        for f in &per_cluster {
            sum += &f.beta_hat;
        }
        let beta_bar_hat = sum / per_cluster.len() as f64;
        Ok(Self {
            beta_bar_hat,
            per_cluster,
        })
    }

    /// Number of clusters `G`.
    pub fn num_clusters(&self) -> usize {
        self.per_cluster.len()
    }
}

/// Fits every cluster and averages the coefficients in dataset order.
///
/// All clusters that cannot be fit are reported together.
pub fn cluster_average(ds: &ClusteredDataset) -> Result<AverageEstimate> {
    let mut fits = Vec::with_capacity(ds.num_clusters());
    let mut bad = Vec::new();
    for c in ds.clusters() {
        match fit_cluster(c) {
            Ok(f) => fits.push(f),
            Err(_) => bad.push(c.id.clone()),
        }
    }
    if !bad.is_empty() {
        return Err(Error::SingularClusters { ids: bad });
    }
    AverageEstimate::from_fits(fits)
}

/// Solvers for every cluster of a fixed design, reusable across responses.
#[derive(Debug, Clone)]
pub struct PreparedDesign {
    solvers: Vec<ClusterSolver>,
    pooled: PooledSolver,
}

impl PreparedDesign {
    pub fn new(ds: &ClusteredDataset) -> Result<Self> {
        let mut solvers = Vec::with_capacity(ds.num_clusters());
        let mut bad = Vec::new();
        for c in ds.clusters() {
            match ClusterSolver::new(&c.x) {
                Some(s) => solvers.push(s),
                None => bad.push(c.id.clone()),
            }
        }
        if !bad.is_empty() {
            return Err(Error::SingularClusters { ids: bad });
        }
        Ok(Self {
            solvers,
            pooled: PooledSolver::new(ds)?,
        })
    }

    fn check(&self, ds: &ClusteredDataset) -> Result<()> {
        let ok = ds.num_clusters() == self.solvers.len()
            && ds
                .clusters()
                .iter()
                .zip(&self.solvers)
                .all(|(c, s)| c.len() == s.n() && c.x.ncols() == s.k());
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(
                "dataset does not match the prepared design".into(),
            ))
        }
    }

    /// Same result as [`cluster_average`] for a dataset sharing this design.
    pub fn cluster_average(&self, ds: &ClusteredDataset) -> Result<AverageEstimate> {
        self.check(ds)?;
        let fits = ds
            .clusters()
            .iter()
            .zip(&self.solvers)
            .map(|(c, s)| fit_with(s, c))
            .collect();
        AverageEstimate::from_fits(fits)
    }

    /// Same result as [`pols_fit`] for a dataset sharing this design.
    pub fn pols_fit(&self, ds: &ClusteredDataset) -> Result<PolsEstimate> {
        self.check(ds)?;
        Ok(self.pooled.fit(ds))
    }
}

/// Average of the cluster estimates inside one superblock.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuperblockEstimate {
    pub label: String,
    pub beta_tilde: DVector<f64>,
    pub members: Vec<ClusterFit>,
    /// Dataset indices of the member clusters.
    pub member_index: Vec<usize>,
}

impl SuperblockEstimate {
    /// Number of member clusters `P_l`.
    pub fn size(&self) -> usize {
        self.members.len()
    }
}

pub fn superblock_averages(ds: &ClusteredDataset) -> Result<Vec<SuperblockEstimate>> {
    let groups = ds
        .superblocks()
        .ok_or_else(|| Error::Configuration("dataset has no superblock column".into()))?;
    let avg = cluster_average(ds)?;
    superblock_averages_from(ds, &avg, &groups)
}

/// Builds superblock averages from fits that were already computed.
pub fn superblock_averages_from(
    ds: &ClusteredDataset,
    avg: &AverageEstimate,
    groups: &[crate::dataset::SuperblockGroup],
) -> Result<Vec<SuperblockEstimate>> {
    if avg.per_cluster.len() != ds.num_clusters() {
        return Err(Error::Shape("estimate does not match dataset".into()));
    }
    let k = ds.k();
    Ok(groups
        .iter()
        .map(|g| {
            let mut sum = DVector::zeros(k);
            for &i in &g.members {
                sum += &avg.per_cluster[i].beta_hat;
            }
            SuperblockEstimate {
                label: g.label.clone(),
                beta_tilde: sum / g.members.len() as f64,
                members: g
                    .members
                    .iter()
                    .map(|&i| avg.per_cluster[i].clone())
                    .collect(),
                member_index: g.members.clone(),
            }
        })
        .collect())
}

/// Pooled OLS on the stacked data.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolsEstimate {
    pub beta_pols: DVector<f64>,
    /// `X'X = Σ_g X_g'X_g`
    pub xtx: DMatrix<f64>,
    pub xtx_inv: DMatrix<f64>,
    pub n_total: usize,
}

/// Thin-QR solver for the stacked design, split into per-cluster blocks.
#[derive(Debug, Clone)]
struct PooledSolver {
    /// `(X'X)⁻¹X_g'` for each cluster.
    blocks: Vec<DMatrix<f64>>,
    xtx: DMatrix<f64>,
    xtx_inv: DMatrix<f64>,
    n_total: usize,
}

impl PooledSolver {
    fn new(ds: &ClusteredDataset) -> Result<Self> {
        let k = ds.k();
        let n_total = ds.total_observations();
        let mut stacked = DMatrix::zeros(n_total, k);
        let mut row = 0;
        for c in ds.clusters() {
            stacked.rows_mut(row, c.len()).copy_from(&c.x);
            row += c.len();
        }
        let solver = ClusterSolver::new(&stacked).ok_or(Error::SingularDesign)?;
        let mut xtx = DMatrix::zeros(k, k);
        for c in ds.clusters() {
            xtx += c.x.tr_mul(&c.x);
        }
        symmetrize(&mut xtx);
        let mut blocks = Vec::with_capacity(ds.num_clusters());
        let mut col = 0;
        for c in ds.clusters() {
            blocks.push(solver.projector.columns(col, c.len()).into_owned());
            col += c.len();
        }
        Ok(Self {
            blocks,
            xtx,
            xtx_inv: solver.gram_inv,
            n_total,
        })
    }

    fn fit(&self, ds: &ClusteredDataset) -> PolsEstimate {
        let mut beta = DVector::zeros(self.xtx.nrows());
        for (block, c) in self.blocks.iter().zip(ds.clusters()) {
            beta.gemv(1.0, block, &c.y, 1.0);
        }
        PolsEstimate {
            beta_pols: beta,
            xtx: self.xtx.clone(),
            xtx_inv: self.xtx_inv.clone(),
            n_total: self.n_total,
        }
    }
}

pub fn pols_fit(ds: &ClusteredDataset) -> Result<PolsEstimate> {
    Ok(PooledSolver::new(ds)?.fit(ds))
}
