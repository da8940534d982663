//! Monte Carlo size and power studies.
//!
//! Replications run in parallel, each drawing from its own keyed random
//! streams; statistics are collected in replication order and reduced by a
//! single thread, so reports do not depend on the worker count.

use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::{crve_pols, vhat_cluster_average, CrveCorrection};
use crate::dataset::ClusteredDataset;
use crate::dgp::{
    assemble_dataset, build_design, draw_errors, CoefficientDistribution, DgpConfig, FrozenDesign,
};
use crate::distributions::{chi_squared_quantile, normal_quantile};
use crate::error::{Error, Result};
use crate::estimators::PreparedDesign;
use crate::hypothesis::{
    constancy_test_from, size_corrected_critical_value, wald_cluster_average, wald_pols,
    LinearHypothesis, Tail,
};

/// Smallest replication count accepted for a reported rate.
pub const MIN_REPS: usize = 100;
/// Replications used unless asked otherwise.
pub const DEFAULT_REPS: usize = 2000;
/// Replication count of the published tables.
pub const PUBLISHED_REPS: usize = 10_000;
/// Largest tolerated share of failed replications.
pub const MAX_FAILURE_SHARE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub dgp: DgpConfig,
    pub reps: usize,
    pub level: f64,
    /// True coefficients under the null (size/power protocol).
    pub beta_null: Vec<f64>,
    /// Rows of `R` in `H₀: Rβ = Rβ₀`; `None` tests the full vector.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub restrictions: Option<Vec<Vec<f64>>>,
    /// True coefficients for the power runs of the size/power protocol.
    #[serde(default)]
    pub beta_alt: Vec<Vec<f64>>,
    /// Coefficient distributions for the power runs of the constancy protocol.
    #[serde(default)]
    pub alternatives: Vec<CoefficientDistribution>,
    pub workers: usize,
    #[serde(default)]
    pub tail: Tail,
    /// Index of the first replication; disjoint ranges give independent
    /// runs on the same design.
    #[serde(default)]
    pub first_replication: u64,
}

impl McConfig {
    /// One large cluster among `g`: `H₀: β = (1, 0.5)`, power at `(1, 1.6)`.
    pub fn table1(g: usize, n1: usize, reps: usize, seed: u64) -> Self {
        let dgp = DgpConfig::table1(g, n1, seed);
        Self {
            beta_null: dgp.beta.clone(),
            beta_alt: vec![vec![1.0, 1.6]],
            restrictions: None,
            alternatives: Vec::new(),
            dgp,
            reps,
            level: 0.05,
            workers: 1,
            tail: Tail::Upper,
            first_replication: 0,
        }
    }

    /// `d` superblocks of `p` clusters; power under `u_l ~ Unif[−0.2, 0.2]`.
    pub fn table2(p: usize, d: usize, reps: usize, seed: u64) -> Self {
        let dgp = DgpConfig::table2(p, d, seed);
        Self {
            beta_null: dgp.beta.clone(),
            beta_alt: Vec::new(),
            restrictions: None,
            alternatives: vec![CoefficientDistribution::Uniform { half_width: 0.2 }],
            dgp,
            reps,
            level: 0.05,
            workers: 1,
            tail: Tail::Upper,
            first_replication: 0,
        }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.dgp.validate()?;
        if self.reps < MIN_REPS {
            return Err(Error::Configuration(format!(
                "at least {MIN_REPS} replications are required, got {}",
                self.reps
            )));
        }
        if !(self.level > 0.0 && self.level <= 1.0) {
            return Err(Error::Configuration(format!(
                "level {} outside (0, 1]",
                self.level
            )));
        }
        if self.workers == 0 {
            return Err(Error::Configuration("workers must be at least 1".into()));
        }
        let k = self.dgp.k;
        if self.beta_null.len() != k || self.beta_alt.iter().any(|b| b.len() != k) {
            return Err(Error::Configuration(format!(
                "coefficient vectors must have k = {k} entries"
            )));
        }
        self.hypothesis()?;
        Ok(())
    }

    /// `H₀: Rβ = Rβ₀`, or `β = β₀` without restrictions.
    pub fn hypothesis(&self) -> Result<LinearHypothesis> {
        let beta0 = DVector::from_column_slice(&self.beta_null);
        match &self.restrictions {
            None => LinearHypothesis::full_vector(&beta0),
            Some(rows) => {
                let k = self.dgp.k;
                if rows.is_empty() || rows.iter().any(|r| r.len() != k) {
                    return Err(Error::Configuration(format!(
                        "restriction rows must have k = {k} entries"
                    )));
                }
                let r = DMatrix::from_fn(rows.len(), k, |i, j| rows[i][j]);
                let target = &r * beta0;
                LinearHypothesis::new(r, target)
            }
        }
    }
}

/// Which simulation protocol produced a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    SizePower,
    Constancy,
}

/// Design cell in the layout of the published tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "layout", rename_all = "kebab-case")]
pub enum Cell {
    Table1 { g: usize, n1: usize },
    Table2 { p: usize, d: usize },
    Custom { g: usize },
}

impl Cell {
    fn of(protocol: Protocol, dgp: &DgpConfig) -> Self {
        match protocol {
            Protocol::SizePower if dgp.large_cluster_sizes.len() == 1 => Cell::Table1 {
                g: dgp.num_clusters,
                n1: dgp.large_cluster_sizes[0],
            },
            Protocol::Constancy => match &dgp.heterogeneity {
                Some(h) if h.block_sizes.windows(2).all(|w| w[0] == w[1]) => Cell::Table2 {
                    p: h.block_sizes[0],
                    d: h.block_sizes.len(),
                },
                _ => Cell::Custom {
                    g: dgp.num_clusters,
                },
            },
            _ => Cell::Custom {
                g: dgp.num_clusters,
            },
        }
    }

    pub fn label(&self) -> String {
        match *self {
            Cell::Table1 { g, n1 } => format!("({g}, {n1})"),
            Cell::Table2 { p, d } => format!("({p}, {d})"),
            Cell::Custom { g } => format!("G={g}"),
        }
    }
}

/// A rejection frequency with its binomial standard error `√(p̂(1−p̂)/n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub estimate: f64,
    pub std_error: f64,
}

impl Rate {
    pub fn from_counts(hits: usize, n: usize) -> Self {
        let p = hits as f64 / n as f64;
        Self {
            estimate: p,
            std_error: (p * (1.0 - p) / n as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerRate {
    pub alternative: String,
    pub power: Rate,
    /// Power at the empirical null critical value.
    pub size_corrected_power: Option<Rate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRates {
    pub method: String,
    pub size: Rate,
    pub critical_value_asymptotic: f64,
    pub critical_value_empirical: Option<f64>,
    pub power: Vec<PowerRate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub protocol: Protocol,
    pub cell: Cell,
    pub reps: usize,
    pub first_replication: u64,
    pub reps_used: usize,
    pub failures: usize,
    pub level: f64,
    pub seed: u64,
    pub design_checksum: String,
    pub methods: Vec<MethodRates>,
    /// Seconds spent; kept out of serialized reports so they stay reproducible.
    #[serde(skip)]
    pub wall_time: f64,
}

impl McReport {
    pub fn method(&self, name: &str) -> Option<&MethodRates> {
        self.methods.iter().find(|m| m.method == name)
    }
}

/// Statistics for one replication, indexed `[method][scenario]` with
/// scenario 0 the null.
type RepStats = Vec<Vec<f64>>;

fn run_parallel<F>(first: u64, reps: usize, workers: usize, f: F) -> Result<Vec<Result<RepStats>>>
where
    F: Fn(u64) -> Result<RepStats> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Configuration(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| {
        (first..first + reps as u64)
            .into_par_iter()
            .map(&f)
            .collect()
    }))
}

/// Reduces per-replication statistics. `transform` maps a statistic to the
/// scale on which `stat > critical` means rejection.
fn reduce(
    protocol: Protocol,
    cfg: &McConfig,
    design: &FrozenDesign,
    methods: &[&str],
    alt_labels: &[String],
    critical: f64,
    outcomes: Vec<Result<RepStats>>,
) -> Result<McReport> {
    let reps = outcomes.len();
    let mut rows = Vec::with_capacity(reps);
    let mut failures = 0;
    for (r, out) in outcomes.into_iter().enumerate() {
        match out {
            Ok(stats) if stats.iter().flatten().all(|v| v.is_finite()) => rows.push(stats),
            Ok(_) => {
                log::debug!("replication {r}: non-finite statistic");
                failures += 1;
            }
            Err(e) => {
                log::debug!("replication {r}: {e}");
                failures += 1;
            }
        }
    }
    if failures as f64 > MAX_FAILURE_SHARE * reps as f64 || rows.is_empty() {
        return Err(Error::TooManyFailures { failures, reps });
    }
    if failures > 0 {
        log::warn!("{failures} of {reps} replications failed and were excluded");
    }
    let used = rows.len();
    let mut rates = Vec::with_capacity(methods.len());
    for (m, name) in methods.iter().enumerate() {
        let null: Vec<f64> = rows.iter().map(|s| s[m][0]).collect();
        let size_hits = null.iter().filter(|&&t| t > critical).count();
        let empirical = if cfg.level < 1.0 {
            Some(size_corrected_critical_value(&null, cfg.level)?)
        } else {
            None
        };
        let power = alt_labels
            .iter()
            .enumerate()
            .map(|(a, label)| {
                let alt: Vec<f64> = rows.iter().map(|s| s[m][a + 1]).collect();
                let power = Rate::from_counts(alt.iter().filter(|&&t| t > critical).count(), used);
                let sc = empirical
                    .map(|c| Rate::from_counts(alt.iter().filter(|&&t| t > c).count(), used));
                if let (Some(c), Some(sc)) = (empirical, sc) {
                    if c > critical {
                        assert!(sc.estimate <= power.estimate);
                    }
                }
                PowerRate {
                    alternative: label.clone(),
                    power,
                    size_corrected_power: sc,
                }
            })
            .collect();
        rates.push(MethodRates {
            method: name.to_string(),
            size: Rate::from_counts(size_hits, used),
            critical_value_asymptotic: critical,
            critical_value_empirical: empirical,
            power,
        });
    }
    Ok(McReport {
        protocol,
        cell: Cell::of(protocol, &cfg.dgp),
        reps,
        first_replication: cfg.first_replication,
        reps_used: used,
        failures,
        level: cfg.level,
        seed: cfg.dgp.seed,
        design_checksum: design.checksum_hex(),
        methods: rates,
        wall_time: 0.0,
    })
}

fn prepare(design: &FrozenDesign, dgp: &DgpConfig) -> Result<PreparedDesign> {
    let template = assemble_dataset(design, dgp, &draw_errors(design, dgp.seed, 0), 0)?;
    PreparedDesign::new(&template)
}

fn wald_pair(
    prepared: &PreparedDesign,
    ds: &ClusteredDataset,
    hyp: &LinearHypothesis,
) -> Result<(f64, f64)> {
    let avg = prepared.cluster_average(ds)?;
    let vhat = vhat_cluster_average(&avg, ds)?;
    let t = wald_cluster_average(&avg, &vhat, hyp)?.statistic;
    let pols = prepared.pols_fit(ds)?;
    let sigma = crve_pols(&pols, ds, CrveCorrection::None)?;
    let t_pols = wald_pols(&pols, &sigma, hyp)?.statistic;
    Ok((t, t_pols))
}

/// Method names reported by [`run_size_power`].
pub const SIZE_POWER_METHODS: [&str; 2] = ["cluster-average", "pols-crve"];
/// Method name reported by [`run_constancy`].
pub const CONSTANCY_METHOD: &str = "superblock-constancy";

/// Wald tests of `H₀: Rβ = Rβ₀` (by default `R = I`) for the cluster-average and POLS
/// estimators. Null and alternative data in one replication share the same
/// errors.
pub fn run_size_power(cfg: &McConfig) -> Result<McReport> {
    cfg.validate()?;
    let start = Instant::now();
    let null_dgp = cfg.dgp.with_beta(cfg.beta_null.clone());
    let design = build_design(&null_dgp)?;
    let prepared = prepare(&design, &null_dgp)?;
    let hyp = cfg.hypothesis()?;
    let scenarios: Vec<DgpConfig> = std::iter::once(null_dgp.clone())
        .chain(cfg.beta_alt.iter().map(|b| cfg.dgp.with_beta(b.clone())))
        .collect();
    let outcomes = run_parallel(cfg.first_replication, cfg.reps, cfg.workers, |rep| {
        let errors = draw_errors(&design, null_dgp.seed, rep);
        let mut stats: Vec<Vec<f64>> = (0..2)
            .map(|_| Vec::with_capacity(scenarios.len()))
            .collect();
        for dgp in &scenarios {
            let ds = assemble_dataset(&design, dgp, &errors, rep)?;
            let (t, t_pols) = wald_pair(&prepared, &ds, &hyp)?;
            stats[0].push(t);
            stats[1].push(t_pols);
        }
        Ok(stats)
    })?;
    let critical = chi_squared_quantile(1.0 - cfg.level, hyp.q());
    let labels: Vec<String> = cfg.beta_alt.iter().map(|b| format!("beta={b:?}")).collect();
    let mut report = reduce(
        Protocol::SizePower,
        cfg,
        &design,
        &SIZE_POWER_METHODS,
        &labels,
        critical,
        outcomes,
    )?;
    report.wall_time = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Superblock constancy test: size under `u_l ≡ 0`, power under each
/// configured coefficient distribution.
pub fn run_constancy(cfg: &McConfig) -> Result<McReport> {
    cfg.validate()?;
    if cfg.dgp.heterogeneity.is_none() {
        return Err(Error::Configuration(
            "the constancy protocol needs superblocks".into(),
        ));
    }
    let start = Instant::now();
    let null_dgp = cfg
        .dgp
        .with_distribution(CoefficientDistribution::Degenerate);
    let design = build_design(&null_dgp)?;
    let prepared = prepare(&design, &null_dgp)?;
    let scenarios: Vec<DgpConfig> = std::iter::once(null_dgp.clone())
        .chain(
            cfg.alternatives
                .iter()
                .map(|&d| cfg.dgp.with_distribution(d)),
        )
        .collect();
    let tail = cfg.tail;
    let outcomes = run_parallel(cfg.first_replication, cfg.reps, cfg.workers, |rep| {
        let errors = draw_errors(&design, null_dgp.seed, rep);
        let mut stats = Vec::with_capacity(scenarios.len());
        for dgp in &scenarios {
            let ds = assemble_dataset(&design, dgp, &errors, rep)?;
            let avg = prepared.cluster_average(&ds)?;
            let z = constancy_test_from(&ds, avg, tail)?.test.statistic;
            stats.push(match tail {
                Tail::Upper => z,
                Tail::TwoSided => z.abs(),
            });
        }
        Ok(vec![stats])
    })?;
    let critical = match tail {
        Tail::Upper => normal_quantile(1.0 - cfg.level),
        Tail::TwoSided => normal_quantile(1.0 - cfg.level / 2.0),
    };
    let labels: Vec<String> = cfg.alternatives.iter().map(|d| d.label()).collect();
    let mut report = reduce(
        Protocol::Constancy,
        cfg,
        &design,
        &[CONSTANCY_METHOD],
        &labels,
        critical,
        outcomes,
    )?;
    report.wall_time = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Reports flattened into rows in the layout of the published tables.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

const SUMMARY_COLUMNS: [&str; 11] = [
    "protocol",
    "cell",
    "method",
    "size",
    "size_se",
    "critical_value",
    "critical_value_empirical",
    "alternative",
    "power",
    "size_corrected_power",
    "reps_used",
];

fn fmt_rate(r: Option<Rate>) -> String {
    r.map_or_else(|| "-".into(), |r| format!("{:.3}", r.estimate))
}

/// One row per method and alternative, sorted by protocol then design cell.
pub fn summarize(reports: &[McReport]) -> Result<SummaryTable> {
    if reports.is_empty() {
        return Err(Error::Input("no reports to summarize".into()));
    }
    let mut sorted: Vec<&McReport> = reports.iter().collect();
    sorted.sort_by_key(|r| (r.protocol, r.cell));
    let mut rows = Vec::new();
    for r in sorted {
        let protocol = match r.protocol {
            Protocol::SizePower => "size-power",
            Protocol::Constancy => "constancy",
        };
        for m in &r.methods {
            let base = |alt: &str, power: Option<Rate>, sc: Option<Rate>| {
                vec![
                    protocol.to_string(),
                    r.cell.label(),
                    m.method.clone(),
                    format!("{:.3}", m.size.estimate),
                    format!("{:.4}", m.size.std_error),
                    format!("{:.3}", m.critical_value_asymptotic),
                    m.critical_value_empirical
                        .map_or_else(|| "-".into(), |c| format!("{c:.3}")),
                    alt.to_string(),
                    fmt_rate(power),
                    fmt_rate(sc),
                    r.reps_used.to_string(),
                ]
            };
            if m.power.is_empty() {
                rows.push(base("-", None, None));
            }
            for p in &m.power {
                rows.push(base(&p.alternative, Some(p.power), p.size_corrected_power));
            }
        }
    }
    Ok(SummaryTable {
        columns: SUMMARY_COLUMNS.iter().map(|s| s.to_string()).collect(),
        rows,
    })
}

impl SummaryTable {
    /// Whitespace-aligned text.
    pub fn to_text(&self) -> String {
        let widths: Vec<usize> = (0..self.columns.len())
            .map(|j| {
                self.rows
                    .iter()
                    .map(|r| r[j].len())
                    .chain(std::iter::once(self.columns[j].len()))
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let mut out = String::new();
        for line in std::iter::once(&self.columns).chain(&self.rows) {
            let cells: Vec<String> = line
                .iter()
                .zip(&widths)
                .map(|(c, &w)| format!("{c:<w$}"))
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        out
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Input(format!("csv buffer: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::Input(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_table1(level: f64) -> McConfig {
        let mut cfg = McConfig::table1(8, 60, 100, 3);
        cfg.level = level;
        cfg
    }

    #[test]
    fn rate_standard_error() {
        let r = Rate::from_counts(50, 1000);
        assert_eq!(r.estimate, 0.05);
        assert!((r.std_error - (0.05f64 * 0.95 / 1000.0).sqrt()).abs() < 1e-15);
        assert_eq!(Rate::from_counts(0, 100).std_error, 0.0);
    }

    #[test]
    fn too_few_reps_rejected() {
        let mut cfg = small_table1(0.05);
        cfg.reps = 50;
        assert!(matches!(run_size_power(&cfg), Err(Error::Configuration(_))));
    }

    #[test]
    fn level_one_always_rejects() {
        let report = run_size_power(&small_table1(1.0)).unwrap();
        for m in &report.methods {
            assert_eq!(m.size.estimate, 1.0);
            assert!(m.critical_value_empirical.is_none());
        }
    }

    #[test]
    fn report_accounting() {
        let report = run_size_power(&small_table1(0.05)).unwrap();
        assert_eq!(report.reps_used + report.failures, report.reps);
        assert_eq!(report.cell, Cell::Table1 { g: 8, n1: 60 });
        assert_eq!(report.methods.len(), 2);
        for m in &report.methods {
            assert!((0.0..=1.0).contains(&m.size.estimate));
            assert_eq!(m.power.len(), 1);
            assert!(m.power[0].size_corrected_power.is_some());
        }
    }

    #[test]
    fn constancy_needs_superblocks() {
        let mut cfg = McConfig::table2(4, 3, 100, 1);
        cfg.dgp.heterogeneity = None;
        assert!(run_constancy(&cfg).is_err());
    }

    #[test]
    fn summary_ordering_and_empty_input() {
        assert!(matches!(summarize(&[]), Err(Error::Input(_))));
        let a = run_size_power(&McConfig::table1(10, 40, 100, 1)).unwrap();
        let b = run_size_power(&McConfig::table1(6, 40, 100, 1)).unwrap();
        let table = summarize(&[a, b]).unwrap();
        assert_eq!(table.rows.len(), 4);
        assert_eq!(table.rows[0][1], "(6, 40)");
        assert_eq!(table.rows[3][1], "(10, 40)");
        let text = table.to_text();
        assert_eq!(text.lines().count(), 5);
        let csv = table.to_csv().unwrap();
        assert!(csv.starts_with("protocol,cell,method"));
    }
}
