mod args;

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use cluster_infer::covariance::CrveCorrection;
use cluster_infer::montecarlo::{DEFAULT_REPS, PUBLISHED_REPS};
use cluster_infer::{
    cluster_average, constancy_test_from, crve_pols, engel_dataset, load_csv, pols_fit,
    read_engel_table, run_constancy, run_size_power, summarize, vhat_cluster_average,
    wald_cluster_average, wald_pols, ClusteredDataset, CsvSchema, EngelModel, EngelSchema, Error,
    ErrorCategory, LinearHypothesis, McConfig, McReport, ModelSpec, Result, Tail,
};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use serde_json::{json, Value};

use args::{AnalyzeArgs, Cli, Command, ConstancyArgs, Correction, InputArgs, SimulateArgs};

#[derive(Debug, Serialize)]
struct RunManifest {
    command: &'static str,
    config: Value,
    seed: u64,
    design_checksum: Option<String>,
    version: &'static str,
    workers: usize,
    wall_time_secs: f64,
}

struct Output {
    data: Value,
    /// Printed instead of JSON when set.
    text: Option<String>,
    config: Value,
    design_checksum: Option<String>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn vec_of(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

/// A dataset, the names of its coefficients and the clusters dropped for
/// being too small.
struct Loaded {
    ds: ClusteredDataset,
    names: Vec<String>,
    dropped: Vec<String>,
}

fn filter(ds: ClusteredDataset, names: Vec<String>, min: Option<usize>) -> Result<Loaded> {
    let min = min.unwrap_or(ds.k() + 1);
    let dropped = ds
        .clusters()
        .iter()
        .filter(|c| c.len() < min)
        .map(|c| c.id.clone())
        .collect::<Vec<_>>();
    if !dropped.is_empty() {
        log::warn!(
            "dropping {} clusters with fewer than {min} observations",
            dropped.len()
        );
    }
    let ds = ds.filter_min_cluster_size(min)?;
    Ok(Loaded { ds, names, dropped })
}

fn load_raw(input: &InputArgs) -> Result<Loaded> {
    let schema = CsvSchema {
        cluster_col: input.cluster_col.clone(),
        superblock_col: input.superblock_col.clone(),
        y_col: input.y_col.clone(),
        x_cols: input.x_cols.clone(),
        intercept: !input.no_intercept,
    };
    let ds = load_csv(&input.input, &schema)?;
    let mut names: Vec<String> = Vec::new();
    if schema.intercept {
        names.push("intercept".into());
    }
    names.extend(schema.x_cols.iter().cloned());
    filter(ds, names, input.min_cluster_size)
}

fn engel_schema(input: &InputArgs) -> EngelSchema {
    EngelSchema {
        cluster_col: input.cluster_col.clone(),
        superblock_col: input.superblock_col.clone(),
        food_col: input.food_col.clone(),
        total_col: input.total_col.clone(),
        hhsize_col: input.hhsize.then(|| input.hhsize_col.clone()),
    }
}

fn engel_names(model: EngelModel, input: &InputArgs) -> Vec<String> {
    let total = match model {
        EngelModel::DoubleLog | EngelModel::WorkingLeser => format!("ln({})", input.total_col),
        _ => input.total_col.clone(),
    };
    let mut names = vec!["intercept".to_string(), total];
    if input.hhsize {
        names.push(input.hhsize_col.clone());
    }
    names
}

fn parse_models(names: &[String]) -> Result<Vec<EngelModel>> {
    names.iter().map(|m| m.parse::<EngelModel>()).collect()
}

fn default_hypothesis(k: usize, intercept: bool) -> Result<LinearHypothesis> {
    let skip = usize::from(intercept);
    if k == skip {
        return Err(Error::Hypothesis(
            "no slope coefficients to test; pass --hypothesis".into(),
        ));
    }
    let q = k - skip;
    let r = DMatrix::from_fn(q, k, |i, j| if j == i + skip { 1.0 } else { 0.0 });
    LinearHypothesis::new(r, DVector::zeros(q))
}

fn analyze(a: &AnalyzeArgs) -> Result<Output> {
    let model = a
        .model
        .as_deref()
        .map(str::parse::<EngelModel>)
        .transpose()?;
    let loaded = match model {
        Some(model) if !a.input.raw => {
            let schema = engel_schema(&a.input);
            let table = read_engel_table(&a.input.input, &schema)?;
            let spec = ModelSpec {
                model,
                include_hhsize: a.input.hhsize,
            };
            let ds = engel_dataset(&table, &schema, spec)?;
            filter(ds, engel_names(model, &a.input), a.input.min_cluster_size)?
        }
        _ => load_raw(&a.input)?,
    };
    let ds = &loaded.ds;
    let k = ds.k();
    let intercept = model.is_some() || !a.input.no_intercept;
    let hypothesis = match &a.hypothesis {
        Some(text) => LinearHypothesis::parse(text, k)?,
        None => default_hypothesis(k, intercept)?,
    };
    let correction = match a.crve_correction {
        Correction::None => CrveCorrection::None,
        Correction::SmallSample => CrveCorrection::SmallSample,
    };

    let avg = cluster_average(ds)?;
    let vhat = vhat_cluster_average(&avg, ds)?;
    let pols = pols_fit(ds)?;
    let sigma = crve_pols(&pols, ds, correction)?;
    let t_avg = wald_cluster_average(&avg, &vhat, &hypothesis)?;
    let t_pols = wald_pols(&pols, &sigma, &hypothesis)?;
    let g = ds.num_clusters() as f64;

    let data = json!({
        "command": "analyze",
        "model": model.map(|m| m.name()),
        "clusters": ds.num_clusters(),
        "observations": ds.total_observations(),
        "dropped_clusters": loaded.dropped,
        "coefficients": loaded.names,
        "beta_bar_hat": vec_of(&avg.beta_bar_hat),
        "beta_pols": vec_of(&pols.beta_pols),
        "vhat_over_g": rows(&(&vhat.matrix / g)),
        "sigma_hat": rows(&sigma.matrix),
        "hypothesis": hypothesis.to_string(),
        "wald_cluster_average": t_avg,
        "wald_pols": t_pols,
    });
    let config = json!({
        "input": a.input.input,
        "model": model.map(|m| m.name()),
        "hypothesis": hypothesis.to_string(),
        "crve_correction": format!("{:?}", a.crve_correction),
        "min_cluster_size": a.input.min_cluster_size.unwrap_or(k + 1),
    });
    Ok(Output {
        data,
        text: None,
        config,
        design_checksum: None,
    })
}

fn constancy(a: &ConstancyArgs) -> Result<Output> {
    if a.input.superblock_col.is_none() {
        return Err(Error::Schema(
            "the constancy test needs --superblock-col".into(),
        ));
    }
    let tail = if a.two_sided {
        Tail::TwoSided
    } else {
        Tail::Upper
    };
    let mut datasets: Vec<(String, Loaded)> = Vec::new();
    if a.input.raw {
        datasets.push(("raw".into(), load_raw(&a.input)?));
    } else {
        let models = if a.model.is_empty() {
            EngelModel::ALL.to_vec()
        } else {
            parse_models(&a.model)?
        };
        let schema = engel_schema(&a.input);
        let table = read_engel_table(&a.input.input, &schema)?;
        for model in models {
            let spec = ModelSpec {
                model,
                include_hhsize: a.input.hhsize,
            };
            let ds = engel_dataset(&table, &schema, spec)?;
            let loaded = filter(ds, engel_names(model, &a.input), a.input.min_cluster_size)?;
            datasets.push((model.name().to_string(), loaded));
        }
    }

    let mut out = Vec::new();
    for (name, loaded) in &datasets {
        let ds = &loaded.ds;
        let avg = cluster_average(ds)?;
        let pols = pols_fit(ds)?;
        let outcome = constancy_test_from(ds, avg, tail)?;
        out.push(json!({
            "model": name,
            "clusters": ds.num_clusters(),
            "superblocks": outcome.superblocks.len(),
            "dropped_clusters": loaded.dropped,
            "coefficients": loaded.names,
            "beta_bar_hat": vec_of(&outcome.average.beta_bar_hat),
            "beta_pols": vec_of(&pols.beta_pols),
            "z": outcome.test.statistic,
            "p_value": outcome.test.p_value,
            "test": outcome.test,
        }));
    }
    let data = json!({ "command": "constancy", "tail": tail, "rows": out });
    let config = json!({
        "input": a.input.input,
        "models": datasets.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>(),
        "tail": tail,
    });
    Ok(Output {
        data,
        text: None,
        config,
        design_checksum: None,
    })
}

fn required(v: Option<usize>, flag: &str, table: u8) -> Result<usize> {
    v.ok_or_else(|| Error::Configuration(format!("--table {table} needs {flag}")))
}

fn simulate(a: &SimulateArgs, seed: u64, workers: usize) -> Result<Output> {
    let reps = if a.paper_scale {
        PUBLISHED_REPS
    } else {
        a.reps
    };
    if reps != DEFAULT_REPS {
        log::info!("running {reps} replications");
    }
    let mut cfg = match a.table {
        1 => {
            if a.p.is_some() || a.d.is_some() {
                return Err(Error::Configuration("--P/--D belong to --table 2".into()));
            }
            let mut cfg = McConfig::table1(
                required(a.g, "--G", 1)?,
                required(a.n1, "--N1", 1)?,
                reps,
                seed,
            );
            if a.slope_only {
                cfg.restrictions = Some(vec![vec![0.0, 1.0]]);
            }
            cfg
        }
        _ => {
            if a.g.is_some() || a.n1.is_some() {
                return Err(Error::Configuration("--G/--N1 belong to --table 1".into()));
            }
            let (p, d) = (required(a.p, "--P", 2)?, required(a.d, "--D", 2)?);
            if d < 2 {
                return Err(Error::Configuration(
                    "parameter constancy needs --D of at least 2".into(),
                ));
            }
            let mut cfg = McConfig::table2(p, d, reps, seed);
            if a.two_sided {
                cfg.tail = Tail::TwoSided;
            }
            cfg
        }
    };
    cfg.level = a.level;
    cfg.workers = workers;
    cfg.validate()?;
    let report: McReport = if a.table == 1 {
        run_size_power(&cfg)?
    } else {
        run_constancy(&cfg)?
    };
    let text = a
        .text
        .then(|| summarize(std::slice::from_ref(&report)).map(|t| t.to_text()))
        .transpose()?;
    let design_checksum = Some(report.design_checksum.clone());
    let mut config = serde_json::to_value(&cfg)?;
    // the worker count lives in the manifest only
    if let Some(obj) = config.as_object_mut() {
        obj.remove("workers");
    }
    Ok(Output {
        data: serde_json::to_value(&report)?,
        text,
        config,
        design_checksum,
    })
}

fn write_outputs(dir: &Path, name: &str, data: &Value, manifest: &RunManifest) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut with_ref = data.clone();
    if let Some(obj) = with_ref.as_object_mut() {
        obj.insert("manifest".into(), json!("manifest.json"));
    }
    std::fs::write(
        dir.join(name),
        serde_json::to_string_pretty(&with_ref)? + "\n",
    )?;
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(manifest)? + "\n",
    )?;
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let start = Instant::now();
    let (command, result_file, out) = match &cli.command {
        Command::Analyze(a) => ("analyze", "analysis.json", analyze(a)?),
        Command::Constancy(a) => ("constancy", "constancy.json", constancy(a)?),
        Command::Simulate(a) => (
            "simulate",
            "report.json",
            simulate(a, cli.seed, cli.workers)?,
        ),
    };
    match &out.text {
        Some(text) => print!("{text}"),
        None => println!("{}", serde_json::to_string_pretty(&out.data)?),
    }
    if let Some(dir) = &cli.out {
        let manifest = RunManifest {
            command,
            config: out.config,
            seed: cli.seed,
            design_checksum: out.design_checksum,
            version: env!("CARGO_PKG_VERSION"),
            workers: cli.workers,
            wall_time_secs: start.elapsed().as_secs_f64(),
        };
        write_outputs(dir, result_file, &out.data, &manifest)?;
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e.category() {
        ErrorCategory::Usage => 2,
        ErrorCategory::Singular => 3,
        ErrorCategory::Conditioning => 4,
        ErrorCategory::Runtime => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if cli.workers == 0 {
        eprintln!("error: --workers must be at least 1");
        return ExitCode::from(2);
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
