use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use pibic::cache::{CriticalValueCache, CACHE_DIR_ENV};
use pibic::harness::{run_local_power_study, to_csv_string};
use pibic::null_dist::critical_values;
use pibic::{
    analyze_dataset, run_lindley_study, run_power_study, run_type1_study, select_trend, star_bootstrap, AlternativeSpec,
    AnalysisSpec, BasisKind, Dataset, ExperimentConfig, ReferenceSource, TestName,
};

#[derive(Parser)]
#[command(name = "pibic", version, about = "BIC-based lack-of-fit tests and their simulation studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run lack-of-fit tests on one dataset (CSV with x1.., y).
    Test(TestArgs),
    /// Simulate critical values of a test's null law.
    SimulateCritical(CriticalArgs),
    /// Type I error study under the normal-response null.
    Type1Study(StudyArgs),
    /// Power curves over single or nested effects, or local power.
    PowerStudy(StudyArgs),
    /// Lindley percentile curves.
    Lindley(LindleyArgs),
    /// Trend degree selection for a pseudo-period series (CSV with j, y).
    StarTrend(StarArgs),
}

#[derive(Args)]
struct CacheArgs {
    /// Directory for cached critical values.
    #[arg(long, env = CACHE_DIR_ENV)]
    cache_dir: Option<PathBuf>,
}

impl CacheArgs {
    fn cache(&self) -> Option<CriticalValueCache> {
        self.cache_dir.as_ref().map(CriticalValueCache::new)
    }
}

#[derive(Args)]
struct TestArgs {
    #[arg(long)]
    input: PathBuf,
    /// Response family: gaussian, poisson or bernoulli.
    #[arg(long, default_value = "gaussian")]
    family: String,
    #[arg(long = "K", default_value_t = 10)]
    k: usize,
    #[arg(long, default_value = "legendre")]
    basis: BasisKind,
    #[arg(long, default_value_t = 0)]
    null_degree: usize,
    /// Comma-separated test names (L_a, L_b, B_N, B_S, M_S, N_A, S_n, R_n, pi_singleton).
    #[arg(long, value_delimiter = ',', default_value = "L_a,L_b,B_N,B_S,M_S,N_A")]
    tests: Vec<TestName>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// asymptotic, simulated or bootstrap; `--bootstrap` implies bootstrap.
    #[arg(long, default_value = "simulated")]
    reference: String,
    #[arg(long, default_value_t = 30_000)]
    reps: usize,
    /// Parametric bootstrap replicates.
    #[arg(long)]
    bootstrap: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Cap π thresholds at ½.
    #[arg(long)]
    lindley_safe: bool,
    #[command(flatten)]
    cache: CacheArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CriticalArgs {
    #[arg(long, value_delimiter = ',', default_value = "B_S")]
    tests: Vec<TestName>,
    #[arg(long = "K", default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.05,0.01")]
    alpha: Vec<f64>,
    #[arg(long, default_value_t = 30_000)]
    reps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[command(flatten)]
    cache: CacheArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StudyArgs {
    /// Flat key = value config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long = "K")]
    k: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    /// Comma-separated levels.
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated test names.
    #[arg(long, alias = "family")]
    tests: Option<String>,
    /// null, single:M, nested:M or local:G1:G2:PHI1,PHI2,…
    #[arg(long)]
    alt: Option<String>,
    #[arg(long)]
    basis: Option<String>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    amplitude: Option<f64>,
    #[arg(long)]
    critical_reps: Option<usize>,
    #[arg(long)]
    null_reps: Option<usize>,
    #[command(flatten)]
    cache: CacheArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl StudyArgs {
    fn config(&self, default_alt: Option<&str>) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::from_path(path).with_context(|| format!("reading {}", path.display()))?,
            None => ExperimentConfig::default(),
        };
        if self.config.is_none() {
            if let Some(alt) = default_alt {
                config.set("alt", alt)?;
            }
        }
        let overrides: [(&str, Option<String>); 12] = [
            ("n", self.n.map(|v| v.to_string())),
            ("K", self.k.map(|v| v.to_string())),
            ("reps", self.reps.map(|v| v.to_string())),
            ("alpha", self.alpha.clone()),
            ("seed", self.seed.map(|v| v.to_string())),
            ("tests", self.tests.clone()),
            ("alt", self.alt.clone()),
            ("basis", self.basis.clone()),
            ("eta", self.eta.map(|v| v.to_string())),
            ("amplitude", self.amplitude.map(|v| v.to_string())),
            ("critical_reps", self.critical_reps.map(|v| v.to_string())),
            ("null_reps", self.null_reps.map(|v| v.to_string())),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                config.set(key, &v)?;
            }
        }
        if let Some(out) = &self.out {
            config.out = Some(out.clone());
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args)]
struct LindleyArgs {
    #[arg(long = "K", value_delimiter = ',', default_value = "1,5,10,20")]
    k: Vec<usize>,
    /// Grid of √n values.
    #[arg(long, value_delimiter = ',')]
    sqrt_n: Option<Vec<usize>>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 100_000)]
    reps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StarArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 15)]
    max_degree: usize,
    /// Parametric bootstrap replicates for the π statistics.
    #[arg(long)]
    bootstrap: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Include the bootstrap null samples in the output.
    #[arg(long)]
    null_samples: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
        }
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn emit_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    emit(&text, out)
}

fn run_test(args: TestArgs) -> Result<()> {
    let data = Dataset::from_csv_path(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    let reference = if args.bootstrap.is_some() {
        ReferenceSource::Bootstrap
    } else {
        match args.reference.to_ascii_lowercase().as_str() {
            "asymptotic" => ReferenceSource::Asymptotic,
            "simulated" => ReferenceSource::Simulated,
            "bootstrap" => ReferenceSource::Bootstrap,
            other => bail!("unknown reference `{other}`"),
        }
    };
    let spec = AnalysisSpec {
        family: args.family,
        k: args.k,
        basis: args.basis,
        null_degree: args.null_degree,
        tests: args.tests,
        alpha: args.alpha,
        reference,
        reps: args.reps,
        bootstrap: args.bootstrap.unwrap_or(1000),
        seed: args.seed,
        lindley_safe: args.lindley_safe,
    };
    let analysis = analyze_dataset(&data, &spec, args.cache.cache().as_ref())?;
    emit_json(&analysis, args.out.as_deref())
}

#[derive(Serialize)]
struct CriticalRow {
    test: TestName,
    law: &'static str,
    #[serde(rename = "K")]
    k: Option<usize>,
    n: Option<usize>,
    alpha: f64,
    reps: usize,
    seed: u64,
    quantile: f64,
    mc_stderr: f64,
    threshold: f64,
    source: ReferenceSource,
}

fn run_critical(args: CriticalArgs) -> Result<()> {
    let cache = args.cache.cache();
    let mut rows = Vec::new();
    for &test in &args.tests {
        for cv in critical_values(test, args.k, args.n, &args.alpha, args.reps, args.seed, cache.as_ref())? {
            rows.push(CriticalRow {
                test,
                law: cv.law.kind_name(),
                k: cv.k,
                n: cv.n,
                alpha: cv.alpha,
                reps: cv.reps,
                seed: cv.seed,
                quantile: cv.quantile,
                mc_stderr: cv.mc_stderr,
                threshold: cv.threshold,
                source: cv.source,
            });
        }
    }
    emit(&to_csv_string(&rows)?, args.out.as_deref())
}

fn run_type1(args: StudyArgs) -> Result<()> {
    let config = args.config(None)?;
    let rows = run_type1_study(&config, args.cache.cache().as_ref())?;
    emit(&to_csv_string(&rows)?, config.out.as_deref())
}

fn run_power(args: StudyArgs) -> Result<()> {
    let config = args.config(Some("single:10"))?;
    let text = if matches!(config.alternative, AlternativeSpec::Local { .. }) {
        to_csv_string(&run_local_power_study(&config, args.cache.cache().as_ref())?)?
    } else {
        to_csv_string(&run_power_study(&config)?)?
    };
    emit(&text, config.out.as_deref())
}

fn run_lindley(args: LindleyArgs) -> Result<()> {
    let grid = args.sqrt_n.unwrap_or_else(|| (2..=80).collect());
    let rows = run_lindley_study(&args.k, &grid, args.alpha, args.reps, args.seed)?;
    emit(&to_csv_string(&rows)?, args.out.as_deref())
}

#[derive(serde::Deserialize)]
struct SeriesRow {
    j: f64,
    y: f64,
}

fn read_series(path: &Path) -> Result<Vec<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut rows: Vec<SeriesRow> = Vec::new();
    for (i, row) in reader.deserialize().enumerate() {
        rows.push(row.with_context(|| format!("row {}", i + 1))?);
    }
    if rows.windows(2).any(|w| !(w[1].j > w[0].j)) {
        bail!("column j must be strictly increasing");
    }
    Ok(rows.into_iter().map(|r| r.y).collect())
}

#[derive(Serialize)]
struct DegreeRow {
    degree: usize,
    loglik: f64,
    bic: f64,
    boundary: bool,
    rho: f64,
    sigma_z2: f64,
    v0: f64,
    v1: f64,
    beta: Vec<f64>,
    std_errors: Option<[f64; 4]>,
}

#[derive(Serialize)]
struct BootstrapSummary {
    replicates: usize,
    seed: u64,
    v1: f64,
    failures: usize,
    p_pi_bic: f64,
    p_pi_singleton: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    null_pi_bic: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    null_pi_singleton: Option<Vec<f64>>,
}

#[derive(Serialize)]
struct StarReport {
    n: usize,
    max_degree: usize,
    bic_degree: usize,
    pi_bic: f64,
    pi_singleton: f64,
    degrees: Vec<DegreeRow>,
    bootstrap: Option<BootstrapSummary>,
}

fn run_star(args: StarArgs) -> Result<()> {
    let y = read_series(&args.input)?;
    let selection = select_trend(&y, args.max_degree)?;
    let bootstrap = match args.bootstrap {
        Some(b) => {
            let boot = star_bootstrap(&selection, b, args.seed)?;
            Some(BootstrapSummary {
                replicates: boot.replicates,
                seed: boot.seed,
                v1: boot.v1,
                failures: boot.failures,
                p_pi_bic: boot.p_pi_bic,
                p_pi_singleton: boot.p_pi_singleton,
                null_pi_bic: args.null_samples.then(|| boot.null_pi_bic.clone()),
                null_pi_singleton: args.null_samples.then(|| boot.null_pi_singleton.clone()),
            })
        }
        None => None,
    };
    let report = StarReport {
        n: y.len(),
        max_degree: args.max_degree,
        bic_degree: selection.bic_degree,
        pi_bic: selection.pi_bic.value,
        pi_singleton: selection.pi_singleton.value,
        degrees: selection
            .fits
            .iter()
            .zip(&selection.bic)
            .map(|(f, &bic)| DegreeRow {
                degree: f.model.degree,
                loglik: f.max_loglik,
                bic,
                boundary: f.boundary,
                rho: f.model.rho,
                sigma_z2: f.model.sigma_z2,
                v0: f.model.v0,
                v1: f.model.v1,
                beta: f.model.beta.clone(),
                std_errors: f.std_errors,
            })
            .collect(),
        bootstrap,
    };
    emit_json(&report, args.out.as_deref())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Test(a) => run_test(a),
        Command::SimulateCritical(a) => run_critical(a),
        Command::Type1Study(a) => run_type1(a),
        Command::PowerStudy(a) => run_power(a),
        Command::Lindley(a) => run_lindley(a),
        Command::StarTrend(a) => run_star(a),
    }
}
