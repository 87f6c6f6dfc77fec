use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use fairhash::datasets::{gen_gaussian, gen_uniform, ingest_files, write_canonical, Column, IngestMode, IngestOptions};
use fairhash::error::Error;
use fairhash::harness::{run_experiment, ExperimentConfig, MANIFEST_FILE};
use fairhash::metrics::{rho_advisor, write_advisor_csv, AdvisorOptions, AdvisorValues, DEFAULT_ADVISOR_USERS};
use fairhash::protocols::{derive_g, HashFamily, DEFAULT_MAX_DRAWS};
use fairhash::seeding::{global_rng, purpose};

const EXIT_CONFIG: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Parser)]
#[command(name = "fairhash", about = "OLH / Fair-OLH experiment driver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset in canonical form.
    GenData(GenData),
    /// Convert a raw delimited file into a canonical dataset.
    Ingest(Ingest),
    /// Run the experiment described by a JSON config file.
    Run(Run),
    /// Tabulate preimage-size statistics for candidate fairness thresholds.
    AdviseRho(AdviseRho),
    /// Print the version.
    Version,
}

#[derive(Clone, Copy, ValueEnum)]
enum Generator {
    Gaussian,
    Uniform,
}

#[derive(clap::Args)]
struct GenData {
    #[arg(long, value_enum, default_value = "gaussian")]
    kind: Generator,
    #[arg(long, default_value_t = fairhash::datasets::DEFAULT_USERS)]
    n_users: usize,
    #[arg(long, default_value_t = fairhash::datasets::DEFAULT_DOMAIN)]
    domain_size: usize,
    #[arg(long, default_value_t = fairhash::datasets::GAUSSIAN_MU)]
    mu: f64,
    #[arg(long, default_value_t = fairhash::datasets::GAUSSIAN_SIGMA)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Categorical,
    Transactions,
    CrossProduct,
}

#[derive(clap::Args)]
struct Ingest {
    /// Raw input files, read in order as one table.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, value_enum)]
    mode: Mode,
    /// Value column (categorical mode), by index or header name.
    #[arg(long)]
    column: Option<String>,
    /// First and second column (cross-product mode).
    #[arg(long)]
    first: Option<String>,
    #[arg(long)]
    second: Option<String>,
    /// User and item columns for (user, item) pair rows (transactions mode).
    #[arg(long)]
    user_column: Option<String>,
    #[arg(long)]
    item_column: Option<String>,
    #[arg(long)]
    top_k: Option<usize>,
    /// Field delimiter; a space or tab splits on any whitespace.
    #[arg(long, default_value_t = ',')]
    delimiter: char,
    #[arg(long)]
    header: bool,
    #[arg(long, default_value_t = 0)]
    skip_lines: usize,
    /// Extra field values treated as missing (besides the empty string).
    #[arg(long, default_values_t = vec!["?".to_string()])]
    missing: Vec<String>,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct Run {
    config: PathBuf,
    /// Overrides `output_dir` from the config.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(clap::Args)]
struct AdviseRho {
    #[arg(long)]
    domain_size: usize,
    #[arg(long)]
    epsilon: f64,
    #[arg(long, value_delimiter = ',', default_values_t = fairhash::metrics::DEFAULT_RHO_CANDIDATES.to_vec())]
    rhos: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_ADVISOR_USERS)]
    sample_users: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    g: Option<u32>,
    /// Restrict hash seeds to 0..size.
    #[arg(long)]
    hash_family_size: Option<u64>,
    #[arg(long, default_value_t = DEFAULT_MAX_DRAWS)]
    max_draws: u64,
    /// Sample true values from this canonical dataset instead of uniformly.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Output CSV; stdout when omitted.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) | Error::File { .. } | Error::Csv(_) | Error::Json(_) | Error::Parse { .. } => EXIT_IO,
        _ => EXIT_CONFIG,
    }
}

fn gen_data(a: GenData) -> Result<(), Error> {
    let mut rng = global_rng(a.seed, 0, purpose::DATASET);
    let ds = match a.kind {
        Generator::Gaussian => gen_gaussian(a.mu, a.sigma, a.n_users, a.domain_size, &mut rng)?,
        Generator::Uniform => gen_uniform(a.n_users, a.domain_size, &mut rng)?,
    };
    write_canonical(&a.out, &ds)?;
    eprintln!("wrote {} users over {} items to {}", ds.n_users(), ds.domain_size(), a.out.display());
    Ok(())
}

fn ingest(a: Ingest) -> Result<(), Error> {
    let need = |v: Option<String>, flag: &str| {
        v.map(|s| Column::from(s.as_str()))
            .ok_or_else(|| Error::Config(format!("--{flag} is required in this mode")))
    };
    let mode = match a.mode {
        Mode::Categorical => IngestMode::Categorical { column: need(a.column, "column")?, top_k: a.top_k },
        Mode::Transactions => IngestMode::Transactions {
            top_k: a.top_k,
            user_column: a.user_column.as_deref().map(Column::from),
            item_column: a.item_column.as_deref().map(Column::from),
        },
        Mode::CrossProduct => IngestMode::CrossProduct {
            first: need(a.first, "first")?,
            second: need(a.second, "second")?,
        },
    };
    let opts = IngestOptions {
        mode,
        has_header: a.header,
        delimiter: a.delimiter,
        skip_lines: a.skip_lines,
        missing: a.missing,
    };
    let ds = ingest_files(&a.inputs, &opts)?;
    write_canonical(&a.out, &ds)?;
    eprintln!("wrote {} users over {} items to {}", ds.n_users(), ds.domain_size(), a.out.display());
    Ok(())
}

fn run(a: Run) -> Result<bool, Error> {
    let mut cfg = ExperimentConfig::from_path(&a.config)?;
    if a.output_dir.is_some() {
        cfg.output_dir = a.output_dir;
    }
    if a.threads.is_some() {
        cfg.threads = a.threads;
    }
    let out = run_experiment(&cfg)?;
    let m = &out.manifest;
    for p in &m.points {
        for f in &p.failures {
            eprintln!("eps={} rho={:?}: {}", p.epsilon, p.rho, f.message);
        }
    }
    if let Some(dir) = &cfg.output_dir {
        eprintln!(
            "wrote {} and {} to {} in {:.1}s",
            m.result_files.join(", "),
            MANIFEST_FILE,
            dir.display(),
            m.total_wall_seconds
        );
    }
    Ok(!m.all_points_failed())
}

fn advise(a: AdviseRho) -> Result<bool, Error> {
    let dataset = a.dataset.as_ref().map(fairhash::datasets::read_canonical).transpose()?;
    let opts = AdvisorOptions {
        sample_users: a.sample_users,
        values: dataset.as_ref().map_or(AdvisorValues::Uniform, AdvisorValues::Dataset),
        family: a.hash_family_size.map_or(HashFamily::Full, |size| HashFamily::Finite { size }),
        max_draws: a.max_draws,
        g: a.g,
        master_seed: a.seed,
    };
    let rows = rho_advisor(a.domain_size, a.epsilon, &a.rhos, &opts)?;
    let g = a.g.unwrap_or_else(|| derive_g(a.epsilon));
    match &a.out {
        Some(path) => {
            let file = std::fs::File::create(path).map_err(|e| Error::File { path: path.clone(), source: e })?;
            write_advisor_csv(file, &rows, a.domain_size, g)?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            write_advisor_csv(&mut lock, &rows, a.domain_size, g)?;
            lock.flush()?;
        }
    }
    Ok(rows.iter().skip(1).any(|r| !r.infeasible) || a.rhos.is_empty())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => gen_data(a).map(|_| true),
        Command::Ingest(a) => ingest(a).map(|_| true),
        Command::Run(a) => run(a),
        Command::AdviseRho(a) => advise(a),
        Command::Version => {
            println!("fairhash {}", fairhash::harness::SOFTWARE_VERSION);
            Ok(true)
        }
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: every sweep point was infeasible");
            ExitCode::from(EXIT_INFEASIBLE)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
