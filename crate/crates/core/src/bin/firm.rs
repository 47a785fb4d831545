use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use firm::registry::Registry;
use firm::sim::{self, Scenario};
use firm::topology::Topology;
use firm::Error;

#[derive(Parser)]
#[command(name = "firm", version, about = "Congestion-aware service composition simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario.
    Run(RunArgs),
    /// Run all three modes over a sweep of request counts.
    Compare {
        #[command(flatten)]
        common: RunArgs,
        /// Request counts to sweep.
        #[arg(long, value_delimiter = ',', default_value = "50,200,800")]
        counts: Vec<usize>,
    },
    /// Parse a registry file and print its catalog.
    ValidateRegistry {
        #[arg(long)]
        registry: PathBuf,
        /// Accept composition members that name undefined services.
        #[arg(long)]
        allow_unresolved: bool,
        #[arg(long, value_enum, default_value_t = Format::Summary)]
        format: Format,
    },
    /// Alternative-path bound of one composition (or all of them).
    Bound {
        #[arg(long)]
        registry: PathBuf,
        #[arg(long)]
        composition: Option<String>,
    },
    /// Dump a fat tree as JSON.
    Topology {
        #[arg(long, default_value_t = 4)]
        k: usize,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Replaces the scenario's registry file.
    #[arg(long)]
    registry: Option<PathBuf>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    requests: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    frequency: Option<f64>,
    #[arg(long)]
    threshold: Option<f64>,
    /// Write output files here instead of printing.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Summary)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Summary,
}

fn read_registry(path: &Path) -> Result<Registry, Error> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(text.parse()?)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Error> {
    fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn json<T: serde::Serialize>(value: &T) -> Result<String, Error> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Invariant(e.to_string()))
}

fn load_scenario(args: &RunArgs) -> Result<Scenario, Error> {
    let mut s = Scenario::load(&args.scenario)?;
    if let Some(path) = &args.registry {
        s.registry = read_registry(path)?;
    }
    if let Some(m) = &args.mode {
        s.mode = m.clone();
    }
    if let Some(k) = args.k {
        s.k = k;
    }
    if let Some(n) = args.requests {
        s.requests = n;
    }
    if let Some(seed) = args.seed {
        s.seed = seed;
    }
    if let Some(f) = args.frequency {
        s.frequency = f;
    }
    if let Some(t) = args.threshold {
        s.threshold = Some(t);
    }
    s.validate()?;
    Ok(s)
}

fn run(args: &RunArgs) -> Result<(), Error> {
    let scenario = load_scenario(args)?;
    let out = sim::run(&scenario)?;
    let mut records = Vec::new();
    sim::write_records_csv(&out.records, &mut records)?;
    let summary = json(&out.summary)?;
    match &args.out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|source| Error::Io {
                path: dir.display().to_string(),
                source,
            })?;
            write_file(&dir.join("records.csv"), &records)?;
            write_file(&dir.join("events.csv"), out.log.to_text().as_bytes())?;
            write_file(&dir.join("summary.json"), summary.as_bytes())?;
        }
        None => match args.format {
            Format::Csv => io::stdout().write_all(&records).map_err(stdout_error)?,
            Format::Summary => println!("{summary}"),
        },
    }
    Ok(())
}

fn compare(args: &RunArgs, counts: &[usize]) -> Result<(), Error> {
    let scenario = load_scenario(args)?;
    let rows = sim::compare_modes(&scenario, counts)?;
    let mut csv = Vec::new();
    sim::write_comparison_csv(&rows, &mut csv)?;
    let summary = json(&rows)?;
    match &args.out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|source| Error::Io {
                path: dir.display().to_string(),
                source,
            })?;
            write_file(&dir.join("comparison.csv"), &csv)?;
            write_file(&dir.join("comparison.json"), summary.as_bytes())?;
        }
        None => match args.format {
            Format::Csv => io::stdout().write_all(&csv).map_err(stdout_error)?,
            Format::Summary => println!("{summary}"),
        },
    }
    Ok(())
}

fn stdout_error(source: io::Error) -> Error {
    Error::Io {
        path: "<stdout>".into(),
        source,
    }
}

fn validate_registry(path: &Path, allow_unresolved: bool, format: Format) -> Result<(), Error> {
    let registry = read_registry(path)?;
    if let Err(e) = registry.check_references() {
        if !allow_unresolved {
            return Err(e.into());
        }
        eprintln!("warning: {e}");
    }
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(io::stdout());
            for r in registry.catalog() {
                w.serialize(r).map_err(|e| Error::Scenario(e.to_string()))?;
            }
            w.flush().map_err(stdout_error)?;
        }
        Format::Summary => {
            for s in registry.services() {
                let counts: Vec<String> = s
                    .implementations
                    .iter()
                    .map(|i| format!("{}={}", i.name, i.deployments.len()))
                    .collect();
                println!("service {}: {} deployments ({})", s.name, s.total_deployments(), counts.join(", "));
            }
            for c in registry.compositions() {
                let members: Vec<String> = c
                    .members
                    .iter()
                    .map(|m| format!("{}#{}{}", m.service, m.order, if m.serialized { "" } else { " (parallel)" }))
                    .collect();
                println!("composition {} at {}: {}", c.name, c.entry_point, members.join(", "));
            }
        }
    }
    Ok(())
}

fn bound(path: &Path, composition: Option<&str>) -> Result<(), Error> {
    let registry = read_registry(path)?;
    match composition {
        Some(name) => println!("{}", registry.alternative_path_bound(name)?),
        None => {
            for c in registry.compositions() {
                println!("{} {}", c.name, registry.alternative_path_bound(&c.name)?);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => run(args),
        Command::Compare { common, counts } => compare(common, counts),
        Command::ValidateRegistry {
            registry,
            allow_unresolved,
            format,
        } => validate_registry(registry, *allow_unresolved, *format),
        Command::Bound {
            registry,
            composition,
        } => bound(registry, composition.as_deref()),
        Command::Topology { k } => Topology::fat_tree(*k)
            .map_err(Error::from)
            .and_then(|t| json(&t.export()))
            .map(|s| println!("{s}")),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_invariant_violation() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
