//! Sandwich variance estimators.
//!
//! Three estimators with three different normalizations:
//!
//! * [`vhat_cluster_average`] returns `V̂_G`, the variance of `√G·β̄̂`
//!   (divide by `G` for the variance of `β̄̂` itself). The same matrix serves
//!   the random-coefficients model, where it estimates `G·V*`.
//! * [`crve_pols`] returns the cluster-robust `Σ̂`, the variance of `β̂_POLS`.
//! * [`vhat_superblock`] returns `Ṽ_l`, the variance of the superblock mean
//!   `β̃_l` (note the `1/P_l²` prefactor).
//!
//! Every returned matrix passes through [`repair_psd`].

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dataset::ClusteredDataset;
use crate::error::{Error, Result};
use crate::estimators::{AverageEstimate, PolsEstimate, SuperblockEstimate};
use crate::linalg::repair_psd;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovarianceKind {
    ClusterAverage,
    CrvePols,
    Superblock,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovarianceEstimate {
    pub matrix: DMatrix<f64>,
    pub kind: CovarianceKind,
    pub scale_note: String,
    /// Superblock label for [`CovarianceKind::Superblock`] estimates.
    pub label: Option<String>,
}

impl CovarianceEstimate {
    pub fn k(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Small-sample scaling applied to the CRVE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CrveCorrection {
    #[default]
    None,
    /// `G/(G−1) · (N−1)/(N−k)`
    SmallSample,
}

/// `(X'X)⁻¹X'e` for one cluster.
fn score(gram_inv: &DMatrix<f64>, x: &DMatrix<f64>, e: &DVector<f64>) -> DVector<f64> {
    gram_inv * x.tr_mul(e)
}

fn check_alignment(fits: usize, ds: &ClusteredDataset) -> Result<()> {
    if fits != ds.num_clusters() {
        return Err(Error::Shape(format!(
            "estimate built from {fits} clusters, dataset has {}",
            ds.num_clusters()
        )));
    }
    Ok(())
}

/// `V̂_G = (1/G) Σ_g (X_g'X_g)⁻¹X_g'e_g e_g'X_g(X_g'X_g)⁻¹` with
/// `e_g = Y_g − X_g β̄̂`.
pub fn vhat_cluster_average(
    est: &AverageEstimate,
    ds: &ClusteredDataset,
) -> Result<CovarianceEstimate> {
    check_alignment(est.per_cluster.len(), ds)?;
    let k = ds.k();
    let mut v = DMatrix::zeros(k, k);
    for (fit, c) in est.per_cluster.iter().zip(ds.clusters()) {
        let e = &c.y - &c.x * &est.beta_bar_hat;
        let s = score(&fit.gram_inv, &c.x, &e);
        v.syger(1.0, &s, &s, 1.0);
    }
    v /= ds.num_clusters() as f64;
    Ok(CovarianceEstimate {
        matrix: repair_psd(lower_to_full(v))?,
        kind: CovarianceKind::ClusterAverage,
        scale_note:
            "variance of sqrt(G) * cluster-average estimate; divide by G for the estimate itself"
                .into(),
        label: None,
    })
}

/// `Σ̂ = (X'X)⁻¹ (Σ_g X_g'ε̂_g ε̂_g'X_g) (X'X)⁻¹` with `ε̂_g = Y_g − X_g β̂_POLS`.
pub fn crve_pols(
    est: &PolsEstimate,
    ds: &ClusteredDataset,
    correction: CrveCorrection,
) -> Result<CovarianceEstimate> {
    let k = ds.k();
    if est.beta_pols.len() != k {
        return Err(Error::Shape("POLS estimate does not match dataset".into()));
    }
    let mut meat = DMatrix::zeros(k, k);
    for c in ds.clusters() {
        let e = &c.y - &c.x * &est.beta_pols;
        let s = c.x.tr_mul(&e);
        meat.syger(1.0, &s, &s, 1.0);
    }
    let meat = lower_to_full(meat);
    let mut sigma = &est.xtx_inv * meat * &est.xtx_inv;
    let mut note = String::from("variance of the pooled OLS estimate");
    if correction == CrveCorrection::SmallSample {
        let g = ds.num_clusters() as f64;
        let n = est.n_total as f64;
        if ds.num_clusters() < 2 || est.n_total <= k {
            return Err(Error::Configuration(
                "small-sample CRVE correction needs G >= 2 and N > k".into(),
            ));
        }
        sigma *= g / (g - 1.0) * (n - 1.0) / (n - k as f64);
        note.push_str("; scaled by G/(G-1) * (N-1)/(N-k)");
    }
    Ok(CovarianceEstimate {
        matrix: repair_psd(sigma)?,
        kind: CovarianceKind::CrvePols,
        scale_note: note,
        label: None,
    })
}

/// `Ṽ_l = (1/P_l²) Σ_{g∈S_l} (X_g'X_g)⁻¹X_g'e*_g e*_g'X_g(X_g'X_g)⁻¹` with
/// `e*_g = Y_g − X_g β̃_l`.
///
/// A superblock of a single cluster has identically zero `Ṽ_l` and is
/// rejected.
pub fn vhat_superblock(
    sb: &SuperblockEstimate,
    ds: &ClusteredDataset,
) -> Result<CovarianceEstimate> {
    if sb.size() < 2 {
        return Err(Error::DegenerateSuperblocks {
            labels: vec![sb.label.clone()],
        });
    }
    let k = ds.k();
    let mut v = DMatrix::zeros(k, k);
    for (fit, &g) in sb.members.iter().zip(&sb.member_index) {
        let c = ds
            .clusters()
            .get(g)
            .ok_or_else(|| Error::Shape(format!("superblock member {g} out of range")))?;
        let e = &c.y - &c.x * &sb.beta_tilde;
        let s = score(&fit.gram_inv, &c.x, &e);
        v.syger(1.0, &s, &s, 1.0);
    }
    let p = sb.size() as f64;
    v /= p * p;
    Ok(CovarianceEstimate {
        matrix: repair_psd(lower_to_full(v))?,
        kind: CovarianceKind::Superblock,
        scale_note: format!("variance of the average over superblock '{}'", sb.label),
        label: Some(sb.label.clone()),
    })
}

/// `syger` only fills the lower triangle.
fn lower_to_full(mut m: DMatrix<f64>) -> DMatrix<f64> {
    m.fill_upper_triangle_with_lower_triangle();
    m
}

/// Population variances for fixed designs with known error covariances.
pub mod population {
    use nalgebra::DMatrix;

    use crate::error::{Error, Result};

    /// A fixed cluster design and its error covariance `Ω_g`.
    #[derive(Debug, Clone)]
    pub struct KnownCluster {
        pub x: DMatrix<f64>,
        pub omega: DMatrix<f64>,
    }

    fn inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        m.clone()
            .try_inverse()
            .ok_or_else(|| Error::Conditioning("Gram matrix is singular".into()))
    }

    /// `V = (1/G²) Σ_g (X_g'X_g)⁻¹ X_g'Ω_gX_g (X_g'X_g)⁻¹`
    pub fn cluster_average_variance(clusters: &[KnownCluster]) -> Result<DMatrix<f64>> {
        let first = clusters
            .first()
            .ok_or_else(|| Error::EmptyInput("no clusters".into()))?;
        let k = first.x.ncols();
        let mut v = DMatrix::zeros(k, k);
        for c in clusters {
            let a = inverse(&c.x.tr_mul(&c.x))?;
            v += &a * c.x.tr_mul(&(&c.omega * &c.x)) * &a;
        }
        let g = clusters.len() as f64;
        Ok(v / (g * g))
    }

    /// `Σ = (X'X)⁻¹ (Σ_g X_g'Ω_gX_g) (X'X)⁻¹`
    pub fn pols_variance(clusters: &[KnownCluster]) -> Result<DMatrix<f64>> {
        let first = clusters
            .first()
            .ok_or_else(|| Error::EmptyInput("no clusters".into()))?;
        let k = first.x.ncols();
        let mut xtx = DMatrix::zeros(k, k);
        let mut meat = DMatrix::zeros(k, k);
        for c in clusters {
            xtx += c.x.tr_mul(&c.x);
            meat += c.x.tr_mul(&(&c.omega * &c.x));
        }
        let inv = inverse(&xtx)?;
        Ok(&inv * meat * &inv)
    }

    /// Closed form of `V` for `X_g = 𝟙` and `Ω_g = (a−b)I + b𝟙𝟙'`.
    pub fn equicorrelated_cluster_average_variance(a: f64, b: f64, sizes: &[usize]) -> f64 {
        let g = sizes.len() as f64;
        let inv_sum: f64 = sizes.iter().map(|&n| 1.0 / n as f64).sum();
        (a - b) / (g * g) * inv_sum + b / g
    }

    /// Closed form of `Σ` for `X_g = 𝟙` and `Ω_g = (a−b)I + b𝟙𝟙'`.
    pub fn equicorrelated_pols_variance(a: f64, b: f64, sizes: &[usize]) -> f64 {
        let total: f64 = sizes.iter().map(|&n| n as f64).sum();
        let sq: f64 = sizes.iter().map(|&n| (n as f64).powi(2)).sum();
        (a - b) / total + b * sq / (total * total)
    }

    /// Equicorrelated covariance `(a−b)I + b𝟙𝟙'` of size `n`.
    pub fn equicorrelated(n: usize, a: f64, b: f64) -> DMatrix<f64> {
        DMatrix::from_fn(n, n, |i, j| if i == j { a } else { b })
    }
}

#[cfg(test)]
mod tests {
    use super::population::*;
    use super::*;
    use crate::dataset::Cluster;
    use crate::estimators::{cluster_average, pols_fit, superblock_averages};

    fn ds_from(clusters: Vec<(&[f64], &[f64])>, k: usize) -> ClusteredDataset {
        let cs = clusters
            .into_iter()
            .enumerate()
            .map(|(i, (x, y))| {
                Cluster::new(
                    format!("c{i}"),
                    DMatrix::from_row_slice(y.len(), k, x),
                    DVector::from_column_slice(y),
                )
                .unwrap()
            })
            .collect();
        ClusteredDataset::new(cs, None).unwrap()
    }

    #[test]
    fn single_cluster_uses_ols_residuals() {
        let x = [1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 4.0];
        let y = [1.0, 2.5, 2.0, 5.0];
        let ds = ds_from(vec![(&x, &y)], 2);
        let avg = cluster_average(&ds).unwrap();
        let v = vhat_cluster_average(&avg, &ds).unwrap();
        let c = &ds.clusters()[0];
        let e = &c.y - &c.x * &avg.per_cluster[0].beta_hat;
        let a = c.x.tr_mul(&c.x).try_inverse().unwrap();
        let xe = c.x.tr_mul(&e);
        let direct = &a * &xe * xe.transpose() * &a;
        assert!((v.matrix - direct).norm() < 1e-12);
    }

    #[test]
    fn exact_fits_give_zero_variance() {
        let x = [1.0, 0.0, 1.0, 1.0, 1.0, 2.0];
        let y = [1.0, 3.0, 5.0];
        let x2 = [1.0, 5.0, 1.0, -1.0, 1.0, 3.0];
        let y2 = [11.0, -1.0, 7.0];
        let ds = ds_from(vec![(&x, &y), (&x2, &y2)], 2);
        let avg = cluster_average(&ds).unwrap();
        let v = vhat_cluster_average(&avg, &ds).unwrap();
        assert!(v.matrix.amax() < 1e-20);
        let pols = pols_fit(&ds).unwrap();
        let s = crve_pols(&pols, &ds, CrveCorrection::None).unwrap();
        assert!(s.matrix.amax() < 1e-20);
    }

    #[test]
    fn singleton_clusters_give_hc0() {
        let xs = [[1.0, 0.5], [1.0, -1.0], [1.0, 2.0], [1.0, 3.5], [1.0, 0.0]];
        let ys = [1.0, 0.2, 2.9, 3.1, 0.7];
        let clusters: Vec<(&[f64], &[f64])> = xs
            .iter()
            .zip(ys.iter())
            .map(|(x, y)| (x.as_slice(), std::slice::from_ref(y)))
            .collect();
        let ds = ds_from(clusters, 2);
        let pols = pols_fit(&ds).unwrap();
        let s = crve_pols(&pols, &ds, CrveCorrection::None).unwrap();
        let mut meat = DMatrix::zeros(2, 2);
        for c in ds.clusters() {
            let xi = c.x.row(0).transpose();
            let e = c.y[0] - xi.dot(&pols.beta_pols);
            meat += &xi * xi.transpose() * (e * e);
        }
        let hc0 = &pols.xtx_inv * meat * &pols.xtx_inv;
        assert!((&s.matrix - &hc0).norm() < 1e-12 * hc0.norm());
    }

    #[test]
    fn small_sample_correction_scales() {
        let x = [1.0, 0.0, 1.0, 1.0, 1.0, 2.0];
        let y = [1.0, 3.5, 5.0];
        let x2 = [1.0, 5.0, 1.0, -1.0, 1.0, 3.0];
        let y2 = [10.0, -1.0, 7.5];
        let ds = ds_from(vec![(&x, &y), (&x2, &y2)], 2);
        let pols = pols_fit(&ds).unwrap();
        let raw = crve_pols(&pols, &ds, CrveCorrection::None).unwrap();
        let adj = crve_pols(&pols, &ds, CrveCorrection::SmallSample).unwrap();
        let factor = 2.0 / 1.0 * 5.0 / 4.0;
        assert!((adj.matrix - raw.matrix * factor).norm() < 1e-12);
    }

    #[test]
    fn degenerate_superblock_is_flagged() {
        let x = [1.0, 0.0, 1.0, 1.0, 1.0, 2.0];
        let y = [1.0, 3.5, 5.0];
        let cs = vec![Cluster::new(
            "a",
            DMatrix::from_row_slice(3, 2, &x),
            DVector::from_column_slice(&y),
        )
        .unwrap()];
        let ds = ClusteredDataset::new(cs, Some(vec!["s".into()])).unwrap();
        let sbs = superblock_averages(&ds).unwrap();
        match vhat_superblock(&sbs[0], &ds) {
            Err(Error::DegenerateSuperblocks { labels }) => assert_eq!(labels, vec!["s"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn identical_superblock_members() {
        let x = [1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0];
        let y = [1.0, 3.5, 5.0, 6.5];
        let p = 4;
        let cs = (0..p)
            .map(|i| {
                Cluster::new(
                    format!("c{i}"),
                    DMatrix::from_row_slice(4, 2, &x),
                    DVector::from_column_slice(&y),
                )
                .unwrap()
            })
            .collect();
        let ds = ClusteredDataset::new(cs, Some(vec!["s".into(); p])).unwrap();
        let sbs = superblock_averages(&ds).unwrap();
        let v = vhat_superblock(&sbs[0], &ds).unwrap();
        let single = ds_from(vec![(&x, &y)], 2);
        let avg = cluster_average(&single).unwrap();
        let one = vhat_cluster_average(&avg, &single).unwrap();
        assert!((v.matrix - one.matrix / p as f64).norm() < 1e-12);
    }

    #[test]
    fn result_two_closed_forms_match_matrix_route() {
        let (a, b) = (2.0, 0.7);
        let sizes = [12usize, 3, 4, 5];
        let clusters: Vec<KnownCluster> = sizes
            .iter()
            .map(|&n| KnownCluster {
                x: DMatrix::from_element(n, 1, 1.0),
                omega: equicorrelated(n, a, b),
            })
            .collect();
        let v = cluster_average_variance(&clusters).unwrap()[(0, 0)];
        let s = pols_variance(&clusters).unwrap()[(0, 0)];
        assert!((v - equicorrelated_cluster_average_variance(a, b, &sizes)).abs() < 1e-13);
        assert!((s - equicorrelated_pols_variance(a, b, &sizes)).abs() < 1e-13);
    }
}
