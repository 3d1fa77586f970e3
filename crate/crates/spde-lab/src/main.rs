//! Command-line surface of the laboratory.
//!
//! Four verbs over one declarative config format: `simulate` runs Monte
//! Carlo ensembles into a result bundle, `oracle` writes the exact
//! Ornstein-Uhlenbeck series tables for additive models, `verify-assumptions`
//! audits the standing assumptions, and `analyze` turns bundles into a
//! regularity verdict. Exit codes: 0 pass, 2 verdict fail, 1 error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use spde_lab::config::{
    analyze_bundles, assumption_report, load_bundle, moment_csv, oracle_csv, verdict_json,
    CsvContext, ExperimentConfig, OracleRecord, ResultBundle, RunManifest, ASSUMPTIONS_FILE,
    INCREMENTS_FILE, MANIFEST_FILE, MOMENTS_FILE, ORACLE_INCREMENTS_FILE, ORACLE_MOMENTS_FILE,
    PRESET_NAMES, VERDICT_FILE,
};
use spde_lab::simulator::{
    ensemble_increment_moments, ensemble_moments, ou_oracle_moment, ou_oracle_time_increment,
};
use spde_lab::{Error, Result};

#[derive(Parser)]
#[command(
    name = "spde-lab",
    version,
    about = "Spectral Galerkin laboratory for semilinear stochastic heat equations"
)]
struct Cli {
    /// Output directory for the result bundle (default: ./<label>-<verb>)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for trajectory parallelism; results are invariant
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Override run.n_traj
    #[arg(long, global = true)]
    traj: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the Monte Carlo ensembles of a config into a result bundle
    Simulate {
        /// Path to a config TOML, or the name of a shipped preset
        config: String,
    },
    /// Exact series tables for the additive models (f = 0, state-independent b)
    Oracle {
        /// Path to a config TOML, or the name of a shipped preset
        config: String,
        /// Append stationary (t = infinity) rows
        #[arg(long)]
        stationary: bool,
    },
    /// Audit trace class, eigenfunction sums, growth bounds, boundary
    /// compatibility, semigroup bounds, and norm-equivalence stability
    VerifyAssumptions {
        /// Path to a config TOML, or the name of a shipped preset
        config: String,
    },
    /// Estimate regularity exponents from result bundles and emit a verdict
    Analyze {
        /// Bundle directories written by `simulate` or `oracle`
        bundles: Vec<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(workers) = cli.workers {
        if workers == 0 {
            return Err(Error::Config("--workers must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
            .map_err(|err| Error::Config(format!("worker pool: {err}")))?;
    }
    match &cli.command {
        Command::Simulate { config } => simulate(&cli, config),
        Command::Oracle { config, stationary } => oracle(&cli, config, *stationary),
        Command::VerifyAssumptions { config } => verify_assumptions(&cli, config),
        Command::Analyze { bundles } => analyze(&cli, bundles),
    }
}

/// Loads a config from a path or a shipped preset name and applies CLI
/// overrides.
fn resolve_config(cli: &Cli, argument: &str) -> Result<ExperimentConfig> {
    let path = Path::new(argument);
    let mut config = if path.exists() {
        ExperimentConfig::from_path(path)?
    } else if let Ok(preset) = spde_lab::config::load_preset(argument) {
        preset
    } else {
        return Err(Error::Config(format!(
            "{argument:?} is neither a config file nor a shipped preset \
             (presets: {})",
            PRESET_NAMES.join(", ")
        )));
    };
    if let Some(traj) = cli.traj {
        config.run.n_traj = traj;
    }
    config.validate()?;
    Ok(config)
}

fn out_dir(cli: &Cli, config: &ExperimentConfig, verb: &str) -> Result<PathBuf> {
    let dir = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}-{verb}", config.label())));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_bundle_manifest(
    dir: &Path,
    config: &ExperimentConfig,
    command: &str,
    started: Instant,
    diverged: usize,
    files: Vec<String>,
) -> Result<()> {
    let manifest = RunManifest {
        run_id: config.run_id()?,
        command: command.to_string(),
        label: config.label().to_string(),
        config_hash: config.config_hash()?,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        wall_time_seconds: started.elapsed().as_secs_f64(),
        diverged,
        files,
        config_toml: config.canonical_toml()?,
    };
    spde_lab::config::write_manifest(dir, &manifest)
}

fn simulate(cli: &Cli, argument: &str) -> Result<ExitCode> {
    let config = resolve_config(cli, argument)?;
    let sim = config.simulation()?;
    let dir = out_dir(cli, &config, "simulate")?;
    let started = Instant::now();
    let r_list = config.r_list();

    let table = ensemble_moments(&sim, &r_list)?;
    let ctx = CsvContext {
        run_id: config.run_id()?,
        n_modes: table.n_modes,
        j_modes: table.j_modes,
        dt: table.dt,
        seed: config.run.seed,
    };
    fs::write(dir.join(MOMENTS_FILE), moment_csv(&ctx, &table.rows))?;
    let mut files = vec![MOMENTS_FILE.to_string()];
    let mut diverged = table.diverged;
    eprintln!(
        "wrote {} ({} rows)",
        dir.join(MOMENTS_FILE).display(),
        table.rows.len()
    );

    let h_list = config.analysis().h_list;
    if !h_list.is_empty() {
        let increments = ensemble_increment_moments(&sim, &r_list, config.base_t(), &h_list)?;
        fs::write(
            dir.join(INCREMENTS_FILE),
            moment_csv(&ctx, &increments.rows),
        )?;
        files.push(INCREMENTS_FILE.to_string());
        diverged = diverged.max(increments.diverged);
        eprintln!(
            "wrote {} ({} rows)",
            dir.join(INCREMENTS_FILE).display(),
            increments.rows.len()
        );
    }

    write_bundle_manifest(&dir, &config, "simulate", started, diverged, files)?;
    if diverged > 0 {
        eprintln!("warning: {diverged} trajectories diverged and were excluded");
    }
    eprintln!("bundle: {}", dir.display());
    Ok(ExitCode::SUCCESS)
}

fn oracle(cli: &Cli, argument: &str, stationary: bool) -> Result<ExitCode> {
    let config = resolve_config(cli, argument)?;
    let kind = config.oracle_kind()?;
    let op = config.operator()?;
    let dir = out_dir(cli, &config, "oracle")?;
    let started = Instant::now();
    let analysis = config.analysis();

    let mut times = config.checkpoints();
    if stationary {
        times.push(f64::INFINITY);
    }
    let orders = if analysis.gamma_grid.is_empty() {
        config.r_list()
    } else {
        analysis.gamma_grid.clone()
    };
    let levels = if analysis.n_list.is_empty() {
        vec![config.run.n_modes]
    } else {
        analysis.n_list.clone()
    };

    let mut rows = Vec::with_capacity(times.len() * orders.len() * levels.len());
    for &n in &levels {
        let j = if config.couples_noise() {
            n
        } else {
            config.effective_j()
        };
        let spectrum = config.spectrum_with(j)?;
        for &t in &times {
            for &gamma in &orders {
                let value = ou_oracle_moment(&spectrum, &op, gamma, t, kind, n)?;
                rows.push(OracleRecord::from_value(&value, j, false));
            }
        }
    }
    let run_id = config.run_id()?;
    fs::write(
        dir.join(ORACLE_MOMENTS_FILE),
        oracle_csv(&run_id, config.run.seed, &rows),
    )?;
    let mut files = vec![ORACLE_MOMENTS_FILE.to_string()];
    eprintln!(
        "wrote {} ({} rows)",
        dir.join(ORACLE_MOMENTS_FILE).display(),
        rows.len()
    );

    if !analysis.h_list.is_empty() {
        let n = config.run.n_modes;
        let j = config.effective_j();
        let spectrum = config.spectrum_with(j)?;
        let base_t = config.base_t();
        let mut increment_rows = Vec::new();
        for &r in &config.r_list() {
            for &h in &analysis.h_list {
                let value = ou_oracle_time_increment(&spectrum, &op, r, base_t, h, kind, n)?;
                increment_rows.push(OracleRecord::from_value(&value, j, true));
            }
        }
        fs::write(
            dir.join(ORACLE_INCREMENTS_FILE),
            oracle_csv(&run_id, config.run.seed, &increment_rows),
        )?;
        files.push(ORACLE_INCREMENTS_FILE.to_string());
        eprintln!(
            "wrote {} ({} rows)",
            dir.join(ORACLE_INCREMENTS_FILE).display(),
            increment_rows.len()
        );
    }

    write_bundle_manifest(&dir, &config, "oracle", started, 0, files)?;
    eprintln!("bundle: {}", dir.display());
    Ok(ExitCode::SUCCESS)
}

fn verify_assumptions(cli: &Cli, argument: &str) -> Result<ExitCode> {
    let config = resolve_config(cli, argument)?;
    let report = assumption_report(&config)?;
    let text = serde_json::to_string_pretty(&report)
        .map_err(|err| Error::Data(format!("report: {err}")))?;
    println!("{text}");
    if let Some(dir) = &cli.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(ASSUMPTIONS_FILE), text + "\n")?;
        eprintln!("report: {}", dir.join(ASSUMPTIONS_FILE).display());
    }
    Ok(if report.pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn analyze(cli: &Cli, paths: &[PathBuf]) -> Result<ExitCode> {
    if paths.is_empty() {
        return Err(Error::Config(
            "analyze needs at least one bundle directory".into(),
        ));
    }
    let bundles: Vec<ResultBundle> = paths
        .iter()
        .map(|path| {
            if !path.join(MANIFEST_FILE).exists() {
                return Err(Error::Data(format!(
                    "{}: not a result bundle (missing {MANIFEST_FILE})",
                    path.display()
                )));
            }
            load_bundle(path)
        })
        .collect::<Result<_>>()?;
    let outcome = analyze_bundles(&bundles)?;
    let value = verdict_json(&outcome.verdict);
    let text = serde_json::to_string_pretty(&value)
        .map_err(|err| Error::Data(format!("verdict: {err}")))?;
    println!("{text}");

    let dir = cli.out.clone().unwrap_or_else(|| paths[0].clone());
    fs::create_dir_all(&dir)?;
    fs::write(dir.join(VERDICT_FILE), text + "\n")?;
    eprintln!("verdict: {}", dir.join(VERDICT_FILE).display());
    Ok(if outcome.verdict.pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}
