//! Synthetic clustered designs for the Monte Carlo experiments.
//!
//! A [`DgpConfig`] is turned once into a [`FrozenDesign`]: cluster sizes,
//! regressor matrices and error-covariance factors. Each replication then
//! only redraws errors (and random coefficients), keyed by
//! `(seed, cluster, replication)` so that any replication can be generated
//! independently of all others.
//!
//! Strong dependence follows the `Ω_g = M_gM_g'` construction with
//! `Unif[−5, 10]` entries. The weak, semi-strong and independent kinds are
//! extensions used to exercise other dependence regimes:
//!
//! * weak: `Ω_ij = 0.5^|i−j|` (AR(1)), bounded largest eigenvalue;
//! * semi-strong(a): `Ω = I + n^(a−1) 𝟙𝟙'`, largest eigenvalue `1 + n^a`;
//! * independent: `Ω = I`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{Cluster, ClusteredDataset};
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};

/// AR(1) correlation used for weak dependence.
pub const WEAK_CORRELATION: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DependenceKind {
    Strong,
    /// `λ_max(Ω_g) ≍ N_g^exponent`, exponent in (0, 1).
    SemiStrong {
        exponent: f64,
    },
    Weak,
    Independent,
}

/// Distribution of each component of a superblock coefficient deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CoefficientDistribution {
    /// `u ≡ 0`
    Degenerate,
    /// `Unif[−half_width, half_width]`
    Uniform { half_width: f64 },
    /// `N(0, variance)`
    Normal { variance: f64 },
}

impl CoefficientDistribution {
    /// Variance of one component.
    pub fn variance(&self) -> f64 {
        match *self {
            CoefficientDistribution::Degenerate => 0.0,
            CoefficientDistribution::Uniform { half_width } => half_width * half_width / 3.0,
            CoefficientDistribution::Normal { variance } => variance,
        }
    }

    pub fn label(&self) -> String {
        match *self {
            CoefficientDistribution::Degenerate => "u=0".into(),
            CoefficientDistribution::Uniform { half_width } => {
                format!("Unif[-{half_width},{half_width}]")
            }
            CoefficientDistribution::Normal { variance } => format!("N(0,{variance})"),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            CoefficientDistribution::Degenerate => true,
            CoefficientDistribution::Uniform { half_width } => {
                half_width.is_finite() && half_width > 0.0
            }
            CoefficientDistribution::Normal { variance } => variance.is_finite() && variance > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Configuration(format!(
                "invalid coefficient distribution {self:?}"
            )))
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R, k: usize) -> DVector<f64> {
        match *self {
            CoefficientDistribution::Degenerate => DVector::zeros(k),
            CoefficientDistribution::Uniform { half_width } => {
                let u = Uniform::new_inclusive(-half_width, half_width).expect("validated");
                DVector::from_fn(k, |_, _| u.sample(rng))
            }
            CoefficientDistribution::Normal { variance } => {
                let sd = variance.sqrt();
                DVector::from_fn(k, |_, _| sd * rng.sample::<f64, _>(StandardNormal))
            }
        }
    }
}

/// Superblock structure with coefficients `β + u_l` shared inside block `l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heterogeneity {
    /// `P_l` for each superblock, in cluster order.
    pub block_sizes: Vec<usize>,
    pub distribution: CoefficientDistribution,
}

/// How the non-intercept regressors are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegressorScheme {
    /// Large clusters get `c_j · sgn(p_max)_j` from the top eigenvector of
    /// their `Ω`; small clusters get `N(μ_g, ω_g²)` draws.
    EigenvectorLarge,
    /// Every cluster gets `N(μ_g, ω_g²)` draws.
    Normal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    /// Number of clusters `G`.
    pub num_clusters: usize,
    /// Sizes of the leading (large) clusters.
    pub large_cluster_sizes: Vec<usize>,
    /// Inclusive range for the remaining cluster sizes.
    pub small_size_range: (usize, usize),
    /// Regressors including the intercept.
    pub k: usize,
    pub beta: Vec<f64>,
    pub dependence: DependenceKind,
    pub regressors: RegressorScheme,
    pub heterogeneity: Option<Heterogeneity>,
    pub seed: u64,
    #[serde(default)]
    pub regenerate_x_per_rep: bool,
}

impl DgpConfig {
    /// One large cluster of size `n1` among `g` clusters, strong dependence,
    /// `β = (1, 0.5)`.
    pub fn table1(g: usize, n1: usize, seed: u64) -> Self {
        Self {
            num_clusters: g,
            large_cluster_sizes: vec![n1],
            small_size_range: (25, 50),
            k: 2,
            beta: vec![1.0, 0.5],
            dependence: DependenceKind::Strong,
            regressors: RegressorScheme::EigenvectorLarge,
            heterogeneity: None,
            seed,
            regenerate_x_per_rep: false,
        }
    }

    /// `d` superblocks of `p` clusters each, strong dependence, `β = (1, 2)`,
    /// homogeneous coefficients.
    pub fn table2(p: usize, d: usize, seed: u64) -> Self {
        Self {
            num_clusters: p * d,
            large_cluster_sizes: Vec::new(),
            small_size_range: (25, 50),
            k: 2,
            beta: vec![1.0, 2.0],
            dependence: DependenceKind::Strong,
            regressors: RegressorScheme::Normal,
            heterogeneity: Some(Heterogeneity {
                block_sizes: vec![p; d],
                distribution: CoefficientDistribution::Degenerate,
            }),
            seed,
            regenerate_x_per_rep: false,
        }
    }

    /// Cluster-specific random coefficients (every cluster its own block)
    /// with one dominant cluster of size `n1`.
    pub fn random_coefficients(
        g: usize,
        n1: usize,
        dependence: DependenceKind,
        distribution: CoefficientDistribution,
        seed: u64,
    ) -> Self {
        Self {
            num_clusters: g,
            large_cluster_sizes: vec![n1],
            small_size_range: (25, 50),
            k: 2,
            beta: vec![1.0, 0.5],
            dependence,
            regressors: RegressorScheme::Normal,
            heterogeneity: Some(Heterogeneity {
                block_sizes: vec![1; g],
                distribution,
            }),
            seed,
            regenerate_x_per_rep: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Configuration(m));
        if self.num_clusters == 0 {
            return bad("G must be at least 1".into());
        }
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.beta.len() != self.k {
            return bad(format!(
                "beta has {} entries, k = {}",
                self.beta.len(),
                self.k
            ));
        }
        if self.beta.iter().any(|b| !b.is_finite()) {
            return bad("beta must be finite".into());
        }
        if self.large_cluster_sizes.len() > self.num_clusters {
            return bad("more large clusters than clusters".into());
        }
        let (lo, hi) = self.small_size_range;
        if lo > hi {
            return bad(format!("empty size range {lo}..={hi}"));
        }
        let has_small = self.large_cluster_sizes.len() < self.num_clusters;
        if has_small && lo < self.k {
            return bad(format!("cluster sizes must be at least k = {}", self.k));
        }
        if self.large_cluster_sizes.iter().any(|&n| n < self.k) {
            return bad(format!("cluster sizes must be at least k = {}", self.k));
        }
        if let DependenceKind::SemiStrong { exponent } = self.dependence {
            if !(exponent > 0.0 && exponent < 1.0) {
                return bad(format!("semi-strong exponent {exponent} outside (0, 1)"));
            }
        }
        if self.regressors == RegressorScheme::EigenvectorLarge
            && self.dependence != DependenceKind::Strong
            && !self.large_cluster_sizes.is_empty()
        {
            return bad("eigenvector regressors require strong dependence".into());
        }
        if let Some(h) = &self.heterogeneity {
            if h.block_sizes.contains(&0) {
                return bad("superblocks must contain at least one cluster".into());
            }
            let total: usize = h.block_sizes.iter().sum();
            if total != self.num_clusters {
                return bad(format!(
                    "superblock sizes sum to {total}, but G = {}",
                    self.num_clusters
                ));
            }
            h.distribution.validate()?;
        }
        Ok(())
    }

    /// Same design with a different coefficient distribution.
    pub fn with_distribution(&self, distribution: CoefficientDistribution) -> Self {
        let mut out = self.clone();
        if let Some(h) = out.heterogeneity.as_mut() {
            h.distribution = distribution;
        }
        out
    }

    pub fn with_beta(&self, beta: Vec<f64>) -> Self {
        Self {
            beta,
            ..self.clone()
        }
    }
}

/// Square-root factor `F` of an error covariance, `Ω = FF'`.
#[derive(Debug, Clone, PartialEq)]
pub enum CovarianceFactor {
    Identity,
    /// AR(1) correlation `rho^|i−j|`; its Cholesky factor applied by recursion.
    Ar1 {
        rho: f64,
    },
    /// `Ω = I + loading² 𝟙𝟙'`, applied as `z + loading·f·𝟙`.
    OneFactor {
        loading: f64,
    },
    /// Lower-triangular Cholesky factor; `jitter` is the diagonal shift that
    /// was needed to factor `Ω` (zero when none was).
    Dense {
        lower: DMatrix<f64>,
        jitter: f64,
    },
}

impl CovarianceFactor {
    /// Draws `ε ~ N(0, Ω)` of length `n`.
    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> DVector<f64> {
        let mut z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        match self {
            CovarianceFactor::Identity => z,
            CovarianceFactor::Ar1 { rho } => {
                let scale = (1.0 - rho * rho).sqrt();
                for i in 1..n {
                    z[i] = rho * z[i - 1] + scale * z[i];
                }
                z
            }
            CovarianceFactor::OneFactor { loading } => {
                let f: f64 = rng.sample(StandardNormal);
                z.add_scalar_mut(loading * f);
                z
            }
            CovarianceFactor::Dense { lower, .. } => {
                let mut out = DVector::zeros(n);
                for j in 0..n {
                    let zj = z[j];
                    let col = lower.column(j);
                    for i in j..n {
                        out[i] += col[i] * zj;
                    }
                }
                out
            }
        }
    }

    /// `Ω` implied by the factor.
    pub fn covariance(&self, n: usize) -> DMatrix<f64> {
        match self {
            CovarianceFactor::Identity => DMatrix::identity(n, n),
            CovarianceFactor::Ar1 { rho } => {
                DMatrix::from_fn(n, n, |i, j| rho.powi((i as i32 - j as i32).abs()))
            }
            CovarianceFactor::OneFactor { loading } => {
                let c = loading * loading;
                DMatrix::from_fn(n, n, |i, j| c + if i == j { 1.0 } else { 0.0 })
            }
            CovarianceFactor::Dense { lower, .. } => lower * lower.transpose(),
        }
    }

    /// An explicit matrix `F` with `FF' = Ω` (`n × (n+1)` for the one-factor case).
    pub fn factor_matrix(&self, n: usize) -> DMatrix<f64> {
        match self {
            CovarianceFactor::Identity => DMatrix::identity(n, n),
            CovarianceFactor::Ar1 { rho } => {
                let scale = (1.0 - rho * rho).sqrt();
                DMatrix::from_fn(n, n, |i, j| {
                    if j > i {
                        0.0
                    } else if j == 0 {
                        rho.powi(i as i32)
                    } else {
                        scale * rho.powi((i - j) as i32)
                    }
                })
            }
            CovarianceFactor::OneFactor { loading } => {
                let mut f = DMatrix::zeros(n, n + 1);
                f.view_mut((0, 0), (n, n)).fill_with_identity();
                f.column_mut(n).fill(*loading);
                f
            }
            CovarianceFactor::Dense { lower, .. } => lower.clone(),
        }
    }

    fn hash_into(&self, h: &mut Sha256) {
        match self {
            CovarianceFactor::Identity => h.update([0u8]),
            CovarianceFactor::Ar1 { rho } => {
                h.update([1u8]);
                h.update(rho.to_le_bytes());
            }
            CovarianceFactor::OneFactor { loading } => {
                h.update([2u8]);
                h.update(loading.to_le_bytes());
            }
            CovarianceFactor::Dense { lower, jitter } => {
                h.update([3u8]);
                h.update(jitter.to_le_bytes());
                for v in lower.iter() {
                    h.update(v.to_le_bytes());
                }
            }
        }
    }
}

/// `M` with i.i.d. `Unif[−5, 10]` entries; `Ω = MM'`.
pub fn gen_strong_cov<R: Rng>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let u = Uniform::new_inclusive(-5.0, 10.0).expect("valid bounds");
    DMatrix::from_fn(n, n, |_, _| u.sample(rng))
}

/// Cholesky factor of `omega`, retrying with a growing diagonal jitter
/// (starting at `1e-10·trace/n`) when the plain factorization fails.
pub fn cholesky_with_jitter(omega: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    if let Some(c) = omega.clone().cholesky() {
        return Ok((c.l(), 0.0));
    }
    let n = omega.nrows().max(1);
    let mut jitter = 1e-10 * omega.trace() / n as f64;
    for _ in 0..8 {
        let shifted = omega + DMatrix::identity(omega.nrows(), omega.nrows()) * jitter;
        if let Some(c) = shifted.cholesky() {
            log::debug!("covariance factored with diagonal jitter {jitter:e}");
            return Ok((c.l(), jitter));
        }
        jitter *= 10.0;
    }
    Err(Error::Conditioning(
        "error covariance could not be factored even with jitter".into(),
    ))
}

/// Error-covariance factor of size `n` for the given dependence kind.
pub fn gen_dependence_cov<R: Rng>(
    n: usize,
    kind: DependenceKind,
    rng: &mut R,
) -> Result<CovarianceFactor> {
    Ok(match kind {
        DependenceKind::Independent => CovarianceFactor::Identity,
        DependenceKind::Weak => CovarianceFactor::Ar1 {
            rho: WEAK_CORRELATION,
        },
        DependenceKind::SemiStrong { exponent } => CovarianceFactor::OneFactor {
            loading: (n as f64).powf(exponent - 1.0).sqrt(),
        },
        DependenceKind::Strong => {
            let m = gen_strong_cov(n, rng);
            let omega = &m * m.transpose();
            let (lower, jitter) = cholesky_with_jitter(&omega)?;
            CovarianceFactor::Dense { lower, jitter }
        }
    })
}

/// `sgn` of the eigenvector for the largest eigenvalue of `omega`, signed so
/// that its largest-magnitude component is positive, with `sgn(0) = +1`.
pub fn principal_sign_pattern(omega: &DMatrix<f64>) -> DVector<f64> {
    let eig = SymmetricEigen::new(omega.clone());
    let top = eig.eigenvalues.imax();
    let v = eig.eigenvectors.column(top).into_owned();
    let pivot = v.iamax();
    let flip = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
    v.map(|c| if c * flip < 0.0 { -1.0 } else { 1.0 })
}

/// One cluster of a frozen design.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenCluster {
    pub x: DMatrix<f64>,
    pub factor: CovarianceFactor,
    /// Superblock index, when the design has superblocks.
    pub superblock: Option<usize>,
    /// Eigenvector sign pattern for eigenvector-based regressors.
    pub sign_pattern: Option<DVector<f64>>,
}

impl FrozenCluster {
    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }
}

/// Regressors and covariance factors held fixed across replications.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenDesign {
    pub clusters: Vec<FrozenCluster>,
    pub num_superblocks: usize,
    /// Diagnostics recorded while building (e.g. Cholesky jitter).
    pub notes: Vec<String>,
    checksum: u64,
}

impl FrozenDesign {
    pub fn checksum(&self) -> u64 {
        self.checksum
    }

    pub fn checksum_hex(&self) -> String {
        format!("{:016x}", self.checksum)
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        self.clusters.iter().map(FrozenCluster::len).collect()
    }

    fn compute_checksum(clusters: &[FrozenCluster]) -> u64 {
        let mut h = Sha256::new();
        h.update((clusters.len() as u64).to_le_bytes());
        for c in clusters {
            h.update((c.x.nrows() as u64).to_le_bytes());
            h.update((c.x.ncols() as u64).to_le_bytes());
            for v in c.x.iter() {
                h.update(v.to_le_bytes());
            }
            c.factor.hash_into(&mut h);
            h.update(c.superblock.map_or(u64::MAX, |s| s as u64).to_le_bytes());
        }
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }
}

fn cluster_sizes(config: &DgpConfig) -> Vec<usize> {
    let (lo, hi) = config.small_size_range;
    (0..config.num_clusters)
        .map(|g| match config.large_cluster_sizes.get(g) {
            Some(&n) => n,
            None => {
                let mut rng = stream(config.seed, Purpose::ClusterSize, g as u64, 0);
                rng.random_range(lo..=hi)
            }
        })
        .collect()
}

/// Intercept plus `k − 1` columns of `N(μ, ω²)` draws with
/// `μ ~ Unif(10, 100)` and `ω² ~ Unif(200, 300)` per column.
fn normal_regressors<R: Rng>(n: usize, k: usize, rng: &mut R) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(n, k);
    x.column_mut(0).fill(1.0);
    for j in 1..k {
        let mu = rng.random_range(10.0..100.0);
        let var: f64 = rng.random_range(200.0..300.0);
        let normal = Normal::new(mu, var.sqrt()).expect("positive variance");
        for i in 0..n {
            x[(i, j)] = normal.sample(rng);
        }
    }
    x
}

/// Intercept, `c_j · sign_j` with `c_j ~ Unif(2, 10)`, then any further
/// columns as in [`normal_regressors`].
fn eigenvector_regressors<R: Rng>(signs: &DVector<f64>, k: usize, rng: &mut R) -> DMatrix<f64> {
    let n = signs.len();
    let mut x = normal_regressors(n, k, rng);
    if k >= 2 {
        for i in 0..n {
            x[(i, 1)] = rng.random_range(2.0..10.0) * signs[i];
        }
    }
    x
}

fn superblock_index(config: &DgpConfig) -> Vec<Option<usize>> {
    match &config.heterogeneity {
        None => vec![None; config.num_clusters],
        Some(h) => h
            .block_sizes
            .iter()
            .enumerate()
            .flat_map(|(l, &p)| std::iter::repeat_n(Some(l), p))
            .collect(),
    }
}

fn draw_regressors(
    config: &DgpConfig,
    g: usize,
    n: usize,
    signs: Option<&DVector<f64>>,
    slot: u64,
) -> DMatrix<f64> {
    match signs {
        Some(s) => {
            let mut rng = stream(config.seed, Purpose::RegressorScale, g as u64, slot);
            eigenvector_regressors(s, config.k, &mut rng)
        }
        None => {
            let mut rng = stream(config.seed, Purpose::Regressors, g as u64, slot);
            normal_regressors(n, config.k, &mut rng)
        }
    }
}

/// Builds the frozen design for the eigenvector regressor scheme: large
/// clusters `[𝟙, c∘sgn(p_max(Ω))]`, small clusters `[𝟙, N(μ_g, ω_g²)]`.
pub fn gen_regressors_table1(config: &DgpConfig) -> Result<FrozenDesign> {
    if config.dependence != DependenceKind::Strong {
        return Err(Error::Configuration(
            "eigenvector regressors require strong dependence".into(),
        ));
    }
    let cfg = DgpConfig {
        regressors: RegressorScheme::EigenvectorLarge,
        ..config.clone()
    };
    build_design(&cfg)
}

/// Builds the frozen design described by `config`.
pub fn build_design(config: &DgpConfig) -> Result<FrozenDesign> {
    config.validate()?;
    let sizes = cluster_sizes(config);
    let blocks = superblock_index(config);
    let mut notes = Vec::new();
    let mut clusters = Vec::with_capacity(config.num_clusters);
    for (g, &n) in sizes.iter().enumerate() {
        let mut cov_rng = stream(config.seed, Purpose::Covariance, g as u64, 0);
        let large = g < config.large_cluster_sizes.len();
        let (factor, signs) = if large && config.regressors == RegressorScheme::EigenvectorLarge {
            let m = gen_strong_cov(n, &mut cov_rng);
            let omega = &m * m.transpose();
            let signs = principal_sign_pattern(&omega);
            let (lower, jitter) = cholesky_with_jitter(&omega)?;
            (CovarianceFactor::Dense { lower, jitter }, Some(signs))
        } else {
            (
                gen_dependence_cov(n, config.dependence, &mut cov_rng)?,
                None,
            )
        };
        if let CovarianceFactor::Dense { jitter, .. } = &factor {
            if *jitter > 0.0 {
                notes.push(format!("cluster {g}: covariance jitter {jitter:e}"));
            }
        }
        let x = draw_regressors(config, g, n, signs.as_ref(), 0);
        clusters.push(FrozenCluster {
            x,
            factor,
            superblock: blocks[g],
            sign_pattern: signs,
        });
    }
    let checksum = FrozenDesign::compute_checksum(&clusters);
    Ok(FrozenDesign {
        clusters,
        num_superblocks: config
            .heterogeneity
            .as_ref()
            .map_or(0, |h| h.block_sizes.len()),
        notes,
        checksum,
    })
}

/// Errors for one replication, one vector per cluster.
pub fn draw_errors(design: &FrozenDesign, seed: u64, rep_index: u64) -> Vec<DVector<f64>> {
    design
        .clusters
        .iter()
        .enumerate()
        .map(|(g, c)| {
            let mut rng = stream(seed, Purpose::Errors, g as u64, rep_index);
            c.factor.sample(c.len(), &mut rng)
        })
        .collect()
}

/// Assembles `Y_g = X_g(β + u_l) + ε_g` from pre-drawn errors.
pub fn assemble_dataset(
    design: &FrozenDesign,
    config: &DgpConfig,
    errors: &[DVector<f64>],
    rep_index: u64,
) -> Result<ClusteredDataset> {
    if errors.len() != design.clusters.len() {
        return Err(Error::Shape("one error vector per cluster expected".into()));
    }
    let beta = DVector::from_column_slice(&config.beta);
    let deviations: Vec<DVector<f64>> = match &config.heterogeneity {
        None => Vec::new(),
        Some(h) => (0..h.block_sizes.len())
            .map(|l| {
                let mut rng = stream(config.seed, Purpose::Coefficients, l as u64, rep_index);
                h.distribution.sample(&mut rng, config.k)
            })
            .collect(),
    };
    let mut clusters = Vec::with_capacity(design.clusters.len());
    for (g, (c, e)) in design.clusters.iter().zip(errors).enumerate() {
        let x = if config.regenerate_x_per_rep {
            draw_regressors(config, g, c.len(), c.sign_pattern.as_ref(), rep_index + 1)
        } else {
            c.x.clone()
        };
        let coef = match c.superblock {
            Some(l) if !deviations.is_empty() => &beta + &deviations[l],
            _ => beta.clone(),
        };
        let y = &x * coef + e;
        clusters.push(Cluster::new(format!("g{}", g + 1), x, y)?);
    }
    let labels = config.heterogeneity.as_ref().map(|_| {
        design
            .clusters
            .iter()
            .map(|c| format!("s{}", c.superblock.map_or(0, |l| l + 1)))
            .collect()
    });
    ClusteredDataset::new(clusters, labels)
}

/// Replication `rep_index` of the design: fresh errors (and coefficient
/// deviations), fixed regressors and covariances.
pub fn gen_dataset(
    design: &FrozenDesign,
    config: &DgpConfig,
    rep_index: u64,
) -> Result<ClusteredDataset> {
    let errors = draw_errors(design, config.seed, rep_index);
    assemble_dataset(design, config, &errors, rep_index)
}
