//! Wald tests of `H₀: Rβ = r`, the superblock parameter-constancy test, and
//! size-corrected critical values.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Serialize, Serializer};

use crate::covariance::{vhat_superblock, CovarianceEstimate, CovarianceKind};
use crate::dataset::ClusteredDataset;
use crate::distributions::{chi_squared_sf, normal_sf};
use crate::error::{Error, Result};
use crate::estimators::{AverageEstimate, PolsEstimate, SuperblockEstimate};
use crate::linalg::{inverse_quadratic_form, singular_value_ratio, RANK_TOLERANCE};

/// Significance levels reported in every [`TestResult`].
pub const REPORT_LEVELS: [f64; 3] = [0.10, 0.05, 0.01];

/// `H₀: Rβ = r` with `R` of full row rank.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHypothesis {
    restrictions: DMatrix<f64>,
    target: DVector<f64>,
}

impl LinearHypothesis {
    pub fn new(restrictions: DMatrix<f64>, target: DVector<f64>) -> Result<Self> {
        let (q, k) = restrictions.shape();
        if q == 0 || k == 0 {
            return Err(Error::Hypothesis(
                "R must have at least one row and column".into(),
            ));
        }
        if q > k {
            return Err(Error::Hypothesis(format!(
                "{q} restrictions on {k} coefficients"
            )));
        }
        if target.len() != q {
            return Err(Error::Hypothesis(format!(
                "R has {q} rows but r has {} entries",
                target.len()
            )));
        }
        if restrictions
            .iter()
            .chain(target.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::Hypothesis("non-finite entry".into()));
        }
        if singular_value_ratio(&restrictions) < RANK_TOLERANCE {
            return Err(Error::Hypothesis(format!(
                "R does not have full row rank {q}"
            )));
        }
        Ok(Self {
            restrictions,
            target,
        })
    }

    /// `H₀: β = β₀`.
    pub fn full_vector(beta0: &DVector<f64>) -> Result<Self> {
        Self::new(DMatrix::identity(beta0.len(), beta0.len()), beta0.clone())
    }

    /// Parses `"R row; R row; ...; r"`: rows separated by `;`, entries by
    /// whitespace, the last block holding `r`.
    ///
    /// `"0 1; 0.5"` is `β₂ = 0.5` for `k = 2`.
    pub fn parse(text: &str, k: usize) -> Result<Self> {
        let mut blocks: Vec<(usize, Vec<f64>)> = Vec::new();
        let mut start = 0;
        for piece in text.split(';') {
            let mut values = Vec::new();
            let mut offset = 0;
            for token in piece.split_whitespace() {
                let at = start + offset + piece[offset..].find(token).unwrap_or(0);
                offset = at - start + token.len();
                let v: f64 = token.parse().map_err(|_| {
                    Error::Hypothesis(format!(
                        "at position {}: '{token}' is not a number\n  {text}\n  {}^",
                        at + 1,
                        " ".repeat(at)
                    ))
                })?;
                values.push(v);
            }
            if values.is_empty() {
                return Err(Error::Hypothesis(format!(
                    "at position {}: empty block\n  {text}\n  {}^",
                    start + 1,
                    " ".repeat(start)
                )));
            }
            blocks.push((start, values));
            start += piece.len() + 1;
        }
        if blocks.len() < 2 {
            return Err(Error::Hypothesis(format!(
                "expected at least one row of R followed by r, e.g. \"0 1; 0.5\"; got '{text}'"
            )));
        }
        let (r_at, r_values) = blocks.pop().unwrap();
        let q = blocks.len();
        for (at, row) in &blocks {
            if row.len() != k {
                return Err(Error::Hypothesis(format!(
                    "at position {}: row of R has {} entries, expected {k}\n  {text}\n  {}^",
                    at + 1,
                    row.len(),
                    " ".repeat(*at)
                )));
            }
        }
        if r_values.len() != q {
            return Err(Error::Hypothesis(format!(
                "at position {}: r has {} entries, expected {q}\n  {text}\n  {}^",
                r_at + 1,
                r_values.len(),
                " ".repeat(r_at)
            )));
        }
        let flat: Vec<f64> = blocks.into_iter().flat_map(|(_, row)| row).collect();
        Self::new(
            DMatrix::from_row_slice(q, k, &flat),
            DVector::from_vec(r_values),
        )
    }

    /// `(AR, Ar)`: an equivalent hypothesis for nonsingular `A`.
    pub fn transformed(&self, a: &DMatrix<f64>) -> Result<Self> {
        Self::new(a * &self.restrictions, a * &self.target)
    }

    pub fn restrictions(&self) -> &DMatrix<f64> {
        &self.restrictions
    }

    pub fn target(&self) -> &DVector<f64> {
        &self.target
    }

    /// Number of restrictions `q`.
    pub fn q(&self) -> usize {
        self.restrictions.nrows()
    }

    pub fn k(&self) -> usize {
        self.restrictions.ncols()
    }

    fn discrepancy(&self, beta: &DVector<f64>) -> Result<DVector<f64>> {
        if beta.len() != self.k() {
            return Err(Error::Shape(format!(
                "hypothesis is on {} coefficients, estimate has {}",
                self.k(),
                beta.len()
            )));
        }
        Ok(&self.restrictions * beta - &self.target)
    }

    fn sandwich(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        &self.restrictions * v * self.restrictions.transpose()
    }
}

impl fmt::Display for LinearHypothesis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for row in self.restrictions.row_iter() {
            let items: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            write!(f, "{}; ", items.join(" "))?;
        }
        let items: Vec<String> = self.target.iter().map(|v| v.to_string()).collect();
        f.write_str(&items.join(" "))
    }
}

/// Which tail(s) of the standard normal reject the constancy hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tail {
    #[default]
    Upper,
    TwoSided,
}

/// Limiting distribution of a statistic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Reference {
    ChiSquared { df: usize },
    StandardNormal { tail: Tail },
}

impl Reference {
    pub fn p_value(self, statistic: f64) -> f64 {
        match self {
            Reference::ChiSquared { df } => chi_squared_sf(statistic, df),
            Reference::StandardNormal { tail: Tail::Upper } => normal_sf(statistic),
            Reference::StandardNormal {
                tail: Tail::TwoSided,
            } => (2.0 * normal_sf(statistic.abs())).min(1.0),
        }
    }
}

impl Serialize for Reference {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Reference::ChiSquared { df } => s.serialize_u64(*df as u64),
            Reference::StandardNormal { .. } => s.serialize_str("standard-normal"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Decision {
    pub level: f64,
    pub reject: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestResult {
    pub method: String,
    pub statistic: f64,
    #[serde(rename = "df")]
    pub reference: Reference,
    pub p_value: f64,
    pub decisions: Vec<Decision>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub details: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl TestResult {
    fn new(method: &str, statistic: f64, reference: Reference) -> Self {
        let p_value = reference.p_value(statistic);
        Self {
            method: method.to_string(),
            statistic,
            reference,
            p_value,
            decisions: REPORT_LEVELS
                .iter()
                .map(|&level| Decision {
                    level,
                    reject: p_value <= level,
                })
                .collect(),
            details: BTreeMap::new(),
            warnings: Vec::new(),
        }
    }

    pub fn rejects_at(&self, level: f64) -> bool {
        self.p_value <= level
    }
}

fn require_kind(v: &CovarianceEstimate, kind: CovarianceKind) -> Result<()> {
    if v.kind != kind {
        return Err(Error::Configuration(format!(
            "expected a {kind:?} covariance estimate, got {:?}",
            v.kind
        )));
    }
    Ok(())
}

/// `T = G (Rβ̄̂ − r)'(R V̂_G R')⁻¹(Rβ̄̂ − r)`, referred to `χ²_q`.
pub fn wald_cluster_average(
    est: &AverageEstimate,
    vhat: &CovarianceEstimate,
    hyp: &LinearHypothesis,
) -> Result<TestResult> {
    require_kind(vhat, CovarianceKind::ClusterAverage)?;
    let d = hyp.discrepancy(&est.beta_bar_hat)?;
    let quad = inverse_quadratic_form(&hyp.sandwich(&vhat.matrix), &d, "R V_G R'")?;
    let t = est.num_clusters() as f64 * quad;
    Ok(TestResult::new(
        "cluster-average-wald",
        t,
        Reference::ChiSquared { df: hyp.q() },
    ))
}

/// `T = (Rβ̂ − r)'(R Σ̂ R')⁻¹(Rβ̂ − r)`; `Σ̂` already targets `Var(β̂_POLS)`.
pub fn wald_pols(
    est: &PolsEstimate,
    sigma: &CovarianceEstimate,
    hyp: &LinearHypothesis,
) -> Result<TestResult> {
    require_kind(sigma, CovarianceKind::CrvePols)?;
    let d = hyp.discrepancy(&est.beta_pols)?;
    let t = inverse_quadratic_form(&hyp.sandwich(&sigma.matrix), &d, "R Sigma R'")?;
    Ok(TestResult::new(
        "pols-crve-wald",
        t,
        Reference::ChiSquared { df: hyp.q() },
    ))
}

/// Ratio `D / min P_l` above which the normal approximation is flagged.
pub const CONSTANCY_RATIO_WARNING: f64 = 0.5;

/// `Z = (T_SB − kD)/√(2kD)` with `T_SB = Σ_l (β̃_l − β̄̂)'Ṽ_l⁻¹(β̃_l − β̄̂)`.
///
/// Heterogeneity pushes `T_SB` up, so the default rejects in the upper tail.
pub fn superblock_constancy(
    sbs: &[SuperblockEstimate],
    vs: &[CovarianceEstimate],
    avg: &AverageEstimate,
    tail: Tail,
) -> Result<TestResult> {
    let d = sbs.len();
    if d < 2 {
        return Err(Error::Configuration(format!(
            "parameter constancy needs at least 2 superblocks, found {d}"
        )));
    }
    if vs.len() != d {
        return Err(Error::Shape(format!(
            "{d} superblocks but {} covariance estimates",
            vs.len()
        )));
    }
    let degenerate: Vec<String> = sbs
        .iter()
        .filter(|s| s.size() < 2)
        .map(|s| s.label.clone())
        .collect();
    if !degenerate.is_empty() {
        return Err(Error::DegenerateSuperblocks { labels: degenerate });
    }
    let k = avg.beta_bar_hat.len();
    let mut t_sb = 0.0;
    for (sb, v) in sbs.iter().zip(vs) {
        require_kind(v, CovarianceKind::Superblock)?;
        if v.label.as_deref().is_some_and(|l| l != sb.label) {
            return Err(Error::Shape(format!(
                "covariance for '{}' paired with superblock '{}'",
                v.label.as_deref().unwrap_or_default(),
                sb.label
            )));
        }
        let diff = &sb.beta_tilde - &avg.beta_bar_hat;
        t_sb += inverse_quadratic_form(
            &v.matrix,
            &diff,
            &format!("superblock '{}' covariance", sb.label),
        )?;
    }
    let kd = (k * d) as f64;
    let z = (t_sb - kd) / (2.0 * kd).sqrt();
    let mut result = TestResult::new(
        "superblock-constancy",
        z,
        Reference::StandardNormal { tail },
    );
    let min_p = sbs.iter().map(SuperblockEstimate::size).min().unwrap_or(0);
    result.details.insert("t_sb".into(), t_sb);
    result.details.insert("superblocks".into(), d as f64);
    result
        .details
        .insert("min_clusters_per_superblock".into(), min_p as f64);
    let ratio = d as f64 / min_p as f64;
    if ratio > CONSTANCY_RATIO_WARNING {
        let msg = format!(
            "D / min P_l = {ratio:.3} exceeds {CONSTANCY_RATIO_WARNING}; the normal approximation may over-reject"
        );
        log::warn!("{msg}");
        result.warnings.push(msg);
    }
    Ok(result)
}

/// Everything computed by [`constancy_test`].
#[derive(Debug, Clone)]
pub struct ConstancyOutcome {
    pub average: AverageEstimate,
    pub superblocks: Vec<SuperblockEstimate>,
    pub covariances: Vec<CovarianceEstimate>,
    pub test: TestResult,
}

/// Runs the constancy test end to end from an already fitted average,
/// reporting every degenerate superblock at once.
pub fn constancy_test_from(
    ds: &ClusteredDataset,
    average: AverageEstimate,
    tail: Tail,
) -> Result<ConstancyOutcome> {
    let groups = ds
        .superblocks()
        .ok_or_else(|| Error::Configuration("dataset has no superblock column".into()))?;
    if groups.len() < 2 {
        return Err(Error::Configuration(format!(
            "parameter constancy needs at least 2 superblocks, found {}",
            groups.len()
        )));
    }
    let superblocks = crate::estimators::superblock_averages_from(ds, &average, &groups)?;
    let degenerate: Vec<String> = superblocks
        .iter()
        .filter(|s| s.size() < 2)
        .map(|s| s.label.clone())
        .collect();
    if !degenerate.is_empty() {
        return Err(Error::DegenerateSuperblocks { labels: degenerate });
    }
    let covariances = superblocks
        .iter()
        .map(|sb| vhat_superblock(sb, ds))
        .collect::<Result<Vec<_>>>()?;
    let test = superblock_constancy(&superblocks, &covariances, &average, tail)?;
    Ok(ConstancyOutcome {
        average,
        superblocks,
        covariances,
        test,
    })
}

pub fn constancy_test(ds: &ClusteredDataset, tail: Tail) -> Result<ConstancyOutcome> {
    let average = crate::estimators::cluster_average(ds)?;
    constancy_test_from(ds, average, tail)
}

/// Empirical `(1 − level)`-quantile of null statistics: the order statistic
/// at 1-based index `⌈(1 − level)·n⌉`.
pub fn size_corrected_critical_value(null_stats: &[f64], level: f64) -> Result<f64> {
    if null_stats.is_empty() {
        return Err(Error::Input("no null statistics".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Input(format!("level {level} outside (0, 1)")));
    }
    if null_stats.iter().any(|v| v.is_nan()) {
        return Err(Error::Input("null statistics contain NaN".into()));
    }
    let mut sorted = null_stats.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    // the tiny offset keeps products like 0.95 * 100 from rounding up a slot
    let index = ((1.0 - level) * n as f64 - 1e-9).ceil().max(1.0) as usize;
    Ok(sorted[index.min(n) - 1])
}
