use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};

mod commands;

#[derive(Parser, Debug)]
#[command(
    name = "yieldtrack",
    version,
    about = "Village maize yield diagnostics against the SDG 2.3 doubling target"
)]
pub struct Cli {
    /// Worker threads for data-parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct DataDir {
    /// Snapshot directory written by `ingest` or `synth`.
    #[arg(long = "data-dir", alias = "data", env = "YIELDTRACK_DATA")]
    pub data_dir: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct BandArgs {
    #[arg(long, default_value = "mean", value_parser = ["mean", "lower", "upper"])]
    pub band: String,
    /// Prediction interval confidence for the lower/upper bands.
    #[arg(long, default_value_t = 0.95)]
    pub confidence: f64,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a deterministic synthetic snapshot.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        villages: usize,
        #[arg(long, default_value_t = 12)]
        zones: usize,
        #[arg(long, default_value_t = 2015)]
        seed: u64,
        #[arg(long)]
        no_boundaries: bool,
        /// Also write this many Gaussian residuals to residuals.csv.
        #[arg(long)]
        residuals: Option<usize>,
        /// Residual and pixel noise, kg/ha.
        #[arg(long, default_value_t = 700.0)]
        sigma: f64,
        /// Also write this many pixel records to pixels.bin.
        #[arg(long)]
        pixels: Option<usize>,
    },
    /// Validate raw inputs and write a snapshot directory.
    Ingest {
        #[arg(long)]
        villages: PathBuf,
        #[arg(long)]
        yields: PathBuf,
        #[arg(long)]
        aez: PathBuf,
        /// Pixel records, binary (`YTPX`) or CSV `village_id,yield_kg_ha`.
        #[arg(long)]
        pixels: Option<PathBuf>,
        #[arg(long)]
        boundaries: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-village trends and doubling ratios.
    Trend {
        #[command(flatten)]
        data: DataDir,
        #[arg(long, default_value_t = 2019)]
        from: i32,
        #[arg(long, default_value_t = 2023)]
        to: i32,
        #[arg(long)]
        include_preliminary: bool,
        #[command(flatten)]
        band: BandArgs,
        /// Continue when some villages cannot be fitted.
        #[arg(long)]
        allow_excluded: bool,
        /// Trend CSV (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
        /// National trajectory CSV.
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Decile cohort means and top/bottom inequality.
    Equality {
        #[command(flatten)]
        data: DataDir,
        #[arg(long, default_value_t = 2019)]
        cohort_year: i32,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Evaluate a scenario: sc1..sc7, `all`, `custom-uniform G` or `custom-target Y`.
    Scenario {
        #[command(flatten)]
        data: DataDir,
        #[arg(long, num_args = 1..=2, value_names = ["KIND", "VALUE"], required = true)]
        kind: Vec<String>,
        #[arg(long)]
        aez_cap: bool,
        #[command(flatten)]
        band: BandArgs,
        #[arg(long)]
        include_preliminary: bool,
        /// Writes `<scenario>.json` and `<scenario>.villages.csv`; JSON goes
        /// to stdout otherwise.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Bootstrapped aggregation error and convergence of the mean.
    Bootstrap {
        /// CSV with a `residual_kg_ha` column.
        #[arg(long, conflicts_with = "sigma")]
        residuals: Option<PathBuf>,
        /// Synthesize Gaussian residuals with this sigma instead.
        #[arg(long)]
        sigma: Option<f64>,
        /// Number of synthetic residuals.
        #[arg(long, default_value_t = 1153)]
        count: usize,
        #[arg(long, default_value_t = 1153)]
        n: usize,
        #[arg(long, default_value_t = 2000)]
        replicates: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 40.0)]
        tolerance: f64,
        /// Length of the convergence curve (default: every residual).
        #[arg(long)]
        max_n: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Convergence curve CSV `n,running_mean`.
        #[arg(long)]
        curve: Option<PathBuf>,
    },
    /// Choropleth GeoJSON of doubling ratios.
    ExportMap {
        #[command(flatten)]
        data: DataDir,
        #[arg(long, default_value = "current")]
        scenario: String,
        /// Growth or target for the custom scenarios.
        #[arg(long)]
        value: Option<f64>,
        #[arg(long)]
        aez_cap: bool,
        #[command(flatten)]
        band: BandArgs,
        /// Boundary FeatureCollection; defaults to the snapshot's, then to centroids.
        #[arg(long)]
        boundaries: Option<PathBuf>,
        /// Comma-separated ratio class edges.
        #[arg(long, default_value = "1.0,1.5,2.0")]
        breaks: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the JSON API (and the UI bundle, if given).
    Serve {
        #[command(flatten)]
        data: DataDir,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value = "1.0,1.5,2.0")]
        breaks: String,
        #[arg(long)]
        ui_dir: Option<PathBuf>,
    },
}

/// Reports a usage problem found after parsing and exits with status 2.
pub fn usage_error(msg: impl std::fmt::Display) -> ! {
    Cli::command().error(clap::error::ErrorKind::InvalidValue, msg).exit()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    msg = format!("{msg}: {c}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
