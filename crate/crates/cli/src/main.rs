use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use clustdiag::bootstrap::BootstrapConfig;
use clustdiag::data::{build_design, load_csv, ModelSpec};
use clustdiag::report::{analyze, render_csv, render_text, to_json, AnalysisOptions};
use clustdiag::sim::{run_batch, summarize_batch, write_csv, BatchConfig, ErrorModel, SimConfig};

#[derive(Parser)]
#[command(name = "clustdiag", version, about = "Cluster leverage, influence and jackknife inference for OLS")]
struct Cli {
    /// Worker threads (default: all cores)
    #[arg(long, global = true, env = "CLUSTDIAG_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Regression output, cluster variability and optional extras for one coefficient
    Summclust(SummclustArgs),
    /// Rejection-frequency experiment on simulated unbalanced designs
    Sim(SimArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
    Csv,
}

#[derive(Args)]
struct SummclustArgs {
    /// Regressor whose coefficient is examined
    coef: String,
    /// Input CSV with a header row
    #[arg(long)]
    data: PathBuf,
    /// Dependent variable
    #[arg(long)]
    y: String,
    /// Cluster identifier
    #[arg(long)]
    cluster: String,
    /// Additional regressors
    #[arg(long = "x", num_args = 1.., value_delimiter = ',')]
    xvars: Vec<String>,
    /// Categorical variables expanded into dummies (drops the constant)
    #[arg(long = "fevar", num_args = 1.., value_delimiter = ',')]
    fevars: Vec<String>,
    /// Categorical variable partialed out by within transformation
    #[arg(long)]
    absorb: Option<String>,
    /// Row filter such as "age >= 25 & race == 1"
    #[arg(long)]
    sample: Option<String>,
    /// Omit the constant term
    #[arg(long)]
    no_constant: bool,
    /// Add the CV3J row
    #[arg(long)]
    jackknife: bool,
    /// Print the cluster-by-cluster table
    #[arg(long)]
    table: bool,
    /// Print harmonic, geometric and quadratic means
    #[arg(long)]
    svars: bool,
    /// Print G*(0) and, when valid, G*(1)
    #[arg(long)]
    gstar: bool,
    /// Also compute G*(rho); rho must be in [0,1]
    #[arg(long, allow_negative_numbers = true)]
    rho: Option<f64>,
    /// Confidence level
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Write output here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
    /// Wild cluster restricted bootstrap p value
    #[arg(long)]
    wcr: bool,
    #[arg(long, default_value_t = 999)]
    boot_reps: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Null value for the bootstrap test
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    beta0: f64,
    /// Invert the bootstrap test for a confidence interval
    #[arg(long)]
    wcr_ci: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ErrorKind {
    Iid,
    Equicorrelated,
}

#[derive(Args)]
struct SimArgs {
    #[arg(long = "G", default_value_t = 20)]
    g: usize,
    #[arg(long = "N", default_value_t = 2000)]
    n: usize,
    /// Cluster-size imbalance
    #[arg(long, conflicts_with = "gamma_range")]
    gamma: Option<f64>,
    /// Draw gamma uniformly from [LO, HI] for each case
    #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
    gamma_range: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1)]
    cases: usize,
    /// Cluster activation probabilities, cycled over cases
    #[arg(long, value_delimiter = ',', default_value = "0.5")]
    pc: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    regressors: usize,
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    /// Bootstrap replications (0 skips the bootstrap)
    #[arg(long = "B", default_value_t = 399)]
    boot_reps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Nominal test size
    #[arg(long, default_value_t = 0.05)]
    level: f64,
    #[arg(long, value_enum, default_value_t = ErrorKind::Equicorrelated)]
    error: ErrorKind,
    /// Within-cluster error correlation for the equicorrelated model
    #[arg(long, default_value_t = 0.5)]
    rho_u: f64,
    /// Print mean rejection frequencies to stderr
    #[arg(long)]
    summary: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn emit(out: &Option<PathBuf>, body: &[u8]) -> Result<()> {
    match out {
        Some(p) => fs::write(p, body).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(body)?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn summclust(a: SummclustArgs) -> Result<()> {
    if let Some(r) = a.rho {
        if !(0.0..=1.0).contains(&r) {
            return Err(clustdiag::Error::InvalidRho(r).into());
        }
    }
    let mut spec = ModelSpec::new(&a.coef, &a.y, &a.cluster)
        .xvars(a.xvars.iter().cloned())
        .fevars(a.fevars.iter().cloned())
        .constant(!a.no_constant);
    if let Some(v) = &a.absorb {
        spec = spec.absorb(v);
    }
    if let Some(s) = &a.sample {
        spec = spec.sample(s);
    }
    let data = load_csv(&a.data, &spec.used_columns()?)?;
    if data.dropped() > 0 {
        eprintln!("note: {} rows with missing values dropped", data.dropped());
    }
    let design = build_design(&data, &spec)?;
    let opts = AnalysisOptions {
        jackknife: a.jackknife,
        table: a.table,
        svars: a.svars,
        gstar: a.gstar,
        rho: a.rho,
        level: a.level,
        wcr: (a.wcr || a.wcr_ci).then(|| BootstrapConfig {
            reps: a.boot_reps,
            seed: a.seed,
            beta0: a.beta0,
            ci: a.wcr_ci,
            level: a.level,
            ..Default::default()
        }),
    };
    let bundle = analyze(&design, &opts)?;
    let body = match a.format {
        Format::Text => render_text(&bundle, &a.cluster),
        Format::Json => {
            for w in &bundle.warnings {
                eprintln!("warning: {w}");
            }
            let mut s = serde_json::to_string_pretty(&to_json(&bundle)?)?;
            s.push('\n');
            s
        }
        Format::Csv => {
            for w in &bundle.warnings {
                eprintln!("warning: {w}");
            }
            render_csv(&bundle, &a.cluster)?
        }
    };
    emit(&a.out, body.as_bytes())
}

fn sim(a: SimArgs) -> Result<()> {
    let gamma_range = match &a.gamma_range {
        Some(v) => Some((v[0], v[1])),
        None => None,
    };
    let error_model = match a.error {
        ErrorKind::Iid => ErrorModel::IidNormal,
        ErrorKind::Equicorrelated => ErrorModel::Equicorrelated { rho: a.rho_u },
    };
    if a.pc.is_empty() {
        bail!("--pc needs at least one value");
    }
    let batch = BatchConfig {
        base: SimConfig {
            g: a.g,
            n: a.n,
            gamma: a.gamma.unwrap_or(2.0),
            p_c: a.pc[0],
            n_regressors: a.regressors,
            reps: a.reps,
            boot_reps: a.boot_reps,
            level: a.level,
            seed: a.seed,
            error_model,
        },
        cases: a.cases,
        gamma_range,
        pc_values: a.pc.clone(),
    };
    let results = run_batch(&batch)?;
    let mut buf = Vec::new();
    write_csv(&results, &mut buf)?;
    emit(&a.out, &buf)?;
    if a.summary {
        let s = summarize_batch(&results);
        eprintln!(
            "cases {} (dropped {}): mean rejection CV1 {:.4}, CV3 {:.4}, WCR {:.4}",
            s.cases, s.dropped, s.cv1, s.cv3, s.wcr
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    let res = match cli.command {
        Command::Summclust(a) => summclust(a),
        Command::Sim(a) => sim(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
