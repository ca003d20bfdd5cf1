use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hypograd::cli_io::{
    control_statistics, run_experiment, simulate, validate_suite, write_outputs, CliError, ExperimentConfig,
    OutputFormat, ValidationError,
};
use hypograd::zoo;

#[derive(Parser)]
#[command(name = "hypograd", version, about = "Monte Carlo derivatives of diffusion semigroups and harmonic functions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List the built-in models and their parameters.
    ZooList {
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Write trajectories, Jacobians and pulled-back fields as CSV.
    Simulate(Common),
    /// Run the configured estimator.
    Estimate(Common),
    /// Build the configured control on every path and report termination.
    Control(Common),
    /// Run the invariant suites; exits with 4 if any fails.
    Validate(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON). Optional for `validate`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the path count.
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    /// Directory for output files.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Structured,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => OutputFormat::Csv,
            Format::Structured => OutputFormat::Structured,
        }
    }
}

fn load(common: &Common) -> Result<ExperimentConfig, CliError> {
    let Some(path) = &common.config else {
        return Err(ValidationError::new("config", "--config is required").into());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| ValidationError::new("config", format!("cannot read {}: {e}", path.display())))?;
    let mut cfg = ExperimentConfig::from_json(&text)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(p) = common.paths {
        cfg.paths = p;
    }
    if let Some(w) = common.workers {
        cfg.workers = w;
    }
    if let Some(d) = &common.out_dir {
        cfg.output.dir = Some(d.display().to_string());
    }
    if let Some(f) = common.format {
        cfg.output.format = f.into();
    }
    Ok(cfg)
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Io { path: path.display().to_string(), source: e })
}

fn zoo_list(format: Format) {
    let catalog = zoo::catalog();
    match format {
        Format::Structured => println!("{}", serde_json::to_string_pretty(&catalog).expect("catalog serializes")),
        Format::Csv => {
            for fam in catalog {
                println!("{:<14} {}", fam.name, fam.summary);
                for p in fam.params {
                    println!("{:<14}   {} = {}  ({})", "", p.name, p.default, p.help);
                }
            }
        }
    }
}

fn cmd_simulate(common: &Common) -> Result<(), CliError> {
    let cfg = load(common)?;
    let paths = simulate(&cfg)?;
    let structured = common.format == Some(Format::Structured);
    match &cfg.output.dir {
        None if paths.len() == 1 => {
            if structured {
                println!("{}", serde_json::to_string_pretty(&paths[0]).expect("path serializes"));
            } else {
                print!("{}", paths[0].to_csv());
            }
        }
        None => return Err(ValidationError::new("out_dir", "simulating more than one path needs --out-dir").into()),
        Some(dir) => {
            let dir = PathBuf::from(dir);
            fs::create_dir_all(&dir).map_err(|e| CliError::Io { path: dir.display().to_string(), source: e })?;
            for p in &paths {
                if structured {
                    let text = serde_json::to_string_pretty(p).expect("path serializes");
                    write_file(&dir.join(format!("trajectory_{}.json", p.index)), &text)?;
                } else {
                    write_file(&dir.join(format!("trajectory_{}.csv", p.index)), &p.to_csv())?;
                }
            }
            eprintln!("wrote {} trajectories to {}", paths.len(), dir.display());
        }
    }
    Ok(())
}

fn cmd_estimate(common: &Common) -> Result<(), CliError> {
    let cfg = load(common)?;
    let (report, est) = run_experiment(&cfg)?;
    for f in write_outputs(&report, est.as_ref(), &cfg.output)? {
        eprintln!("wrote {}", f.display());
    }
    match cfg.output.format {
        OutputFormat::Structured => println!("{}", report.to_json()),
        OutputFormat::Csv => print!("{}", report.summary_csv()),
    }
    Ok(())
}

fn cmd_control(common: &Common) -> Result<(), CliError> {
    let cfg = load(common)?;
    let report = control_statistics(&cfg)?;
    for f in write_outputs(&report, None, &cfg.output)? {
        eprintln!("wrote {}", f.display());
    }
    match cfg.output.format {
        OutputFormat::Structured => println!("{}", report.to_json()),
        OutputFormat::Csv => print!("{}", report.diagnostics.control.as_ref().expect("control stats").to_csv()),
    }
    Ok(())
}

fn cmd_validate(common: &Common) -> Result<(), CliError> {
    if common.config.is_some() {
        load(common)?.resolve()?;
    }
    let report = validate_suite(common.seed.unwrap_or(20_240_601), common.workers.unwrap_or(1), common.paths.unwrap_or(2000));
    let text = match common.format.unwrap_or(Format::Csv) {
        Format::Structured => serde_json::to_string_pretty(&report).expect("report serializes") + "\n",
        Format::Csv => report.to_csv(),
    };
    if let Some(dir) = &common.out_dir {
        fs::create_dir_all(dir).map_err(|e| CliError::Io { path: dir.display().to_string(), source: e })?;
        let name = if common.format == Some(Format::Structured) { "validate.json" } else { "validate.csv" };
        write_file(&dir.join(name), &text)?;
    }
    print!("{text}");
    if report.pass {
        Ok(())
    } else {
        let failed: Vec<&str> = report.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
        Err(CliError::Acceptance(failed.join(", ")))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::ZooList { format } => {
            zoo_list(*format);
            Ok(())
        }
        Command::Simulate(c) => cmd_simulate(c),
        Command::Estimate(c) => cmd_estimate(c),
        Command::Control(c) => cmd_control(c),
        Command::Validate(c) => cmd_validate(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
