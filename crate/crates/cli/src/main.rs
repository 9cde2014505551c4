use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cvgp::bench::OperandSet;
use cvgp::config::RunConfig;
use cvgp::cvgp::Engine;
use cvgp_cli::{count, manifest, report, runner, seeds, write_atomic, CliError};
use serde::Deserialize;

#[derive(Parser)]
#[command(name = "cvgp", version, about = "Control variable genetic programming benchmarks")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args)]
struct Global {
    /// TOML file with run settings (`bench gen` reads families from it).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seeds, e.g. `0..10`, `0..=9` or `1,4,9`.
    #[arg(long, global = true)]
    seeds: Option<String>,
    /// Engines to run, comma separated.
    #[arg(long, global = true, value_delimiter = ',', default_value = "cvgp")]
    engine: Vec<Engine>,
    /// Noise levels, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    noise: Option<Vec<f64>>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Concurrent runs.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Benchmark manifests.
    Bench {
        #[command(subcommand)]
        cmd: BenchCommand,
    },
    /// Run every manifest entry for each engine, noise level and master seed.
    Run { manifest: PathBuf },
    /// Aggregate metrics.csv files found below the given directories.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
    },
    /// Print exact expression-space sizes.
    Count {
        #[arg(long, default_value_t = 21)]
        l_max: usize,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
        m: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        o: Vec<usize>,
    },
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Generate a truth manifest (JSON lines).
    Gen {
        /// Operand set, e.g. `inv,+,-,*`.
        #[arg(long)]
        operands: Option<OperandSet>,
        /// A family as `a,b,c`; repeatable.
        #[arg(long)]
        abc: Vec<String>,
    },
}

/// `bench gen --config` file.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BenchFile {
    family: Vec<Family>,
    seeds: Option<String>,
    noise: Option<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Family {
    operands: OperandSet,
    abc: [usize; 3],
}

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn parse_abc(s: &str) -> Result<(usize, usize, usize), CliError> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Config(format!("--abc `{s}` is not a,b,c")))?;
    match parts[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => Err(CliError::Config(format!("--abc `{s}` is not a,b,c"))),
    }
}

fn seed_list(spec: Option<&str>) -> Result<Option<Vec<u64>>, CliError> {
    spec.map(seeds::parse_seeds).transpose().map_err(CliError::Config)
}

fn bench_gen(g: &Global, operands: Option<OperandSet>, abc: &[String]) -> Result<(), CliError> {
    let file: Option<BenchFile> = g.config.as_deref().map(read_toml).transpose()?;
    let mut families = Vec::new();
    if let Some(f) = &file {
        families.extend(f.family.iter().map(|f| (f.operands.clone(), (f.abc[0], f.abc[1], f.abc[2]))));
    }
    if !abc.is_empty() {
        let ops = operands.ok_or_else(|| CliError::Config("--abc needs --operands".into()))?;
        for s in abc {
            families.push((ops.clone(), parse_abc(s)?));
        }
    }
    if families.is_empty() {
        return Err(CliError::Config("no families: pass --operands and --abc, or --config".into()));
    }
    let seeds = match seed_list(g.seeds.as_deref())? {
        Some(s) => s,
        None => seed_list(file.as_ref().and_then(|f| f.seeds.as_deref()))?.unwrap_or_else(|| (0..10).collect()),
    };
    let sigmas = g
        .noise
        .clone()
        .or_else(|| file.and_then(|f| f.noise))
        .unwrap_or_else(|| vec![0.0]);
    let entries = manifest::generate(&families, &sigmas, &seeds).map_err(|e| CliError::Config(e.to_string()))?;
    let text = manifest::to_jsonl(&entries);
    match &g.out {
        Some(path) => write_atomic(path, text.as_bytes()).map_err(|e| CliError::io(path, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(g: &Global, manifest_path: &Path) -> Result<(), CliError> {
    let cfg: RunConfig = match &g.config {
        Some(p) => read_toml(p)?,
        None => RunConfig::default(),
    };
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let masters = match seed_list(g.seeds.as_deref())? {
        Some(s) => s,
        None => match std::env::var("CVGP_SEED") {
            Ok(v) => vec![v
                .trim()
                .parse()
                .map_err(|_| CliError::Config(format!("CVGP_SEED `{v}` is not an integer")))?],
            Err(_) => vec![cfg.master_seed],
        },
    };
    if let Some(bad) = g.noise.iter().flatten().find(|s| !(s.is_finite() && **s >= 0.0)) {
        return Err(CliError::Config(format!("noise level {bad} is invalid")));
    }
    let entries = manifest::read(manifest_path)?;
    let out = g.out.clone().unwrap_or_else(|| PathBuf::from("results"));
    let jobs = runner::plan(&entries, g.noise.as_deref(), &g.engine, &masters);
    let done = runner::run_all(&jobs, &cfg, &out, g.jobs)?;
    eprintln!("{} runs, {} failed, results in {}", done.runs.len(), done.failures(), out.display());
    match done.failures() {
        0 => Ok(()),
        n => Err(CliError::RunFailures(n)),
    }
}

fn report_cmd(g: &Global, dirs: &[PathBuf]) -> Result<(), CliError> {
    let rows = report::collect(dirs)?;
    let rep = report::aggregate(&rows)?;
    let out = g.out.clone().unwrap_or_else(|| PathBuf::from("report"));
    for p in report::write(&rep, &out)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let g = &cli.global;
    let result = match &cli.cmd {
        Command::Bench {
            cmd: BenchCommand::Gen { operands, abc },
        } => bench_gen(g, operands.clone(), abc),
        Command::Run { manifest } => run(g, manifest),
        Command::Report { dirs } => report_cmd(g, dirs),
        Command::Count { l_max, m, o } => {
            if o.iter().any(|&o| o == 0 || o > 3) || *l_max == 0 {
                Err(CliError::Config("need l-max >= 1 and 1 <= o <= 3".into()))
            } else {
                print!("{}", count::table(*l_max, m, o));
                Ok(())
            }
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
