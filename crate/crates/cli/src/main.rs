use clap::{Args, Parser, Subcommand};
use nrloc_core::estimators::NlosPolicy;
use nrloc_core::grid5g::{grid_check, GridConfig};
use nrloc_core::sim::{run_static, run_track, write_outputs, Level, Method, MetricsReport, RunSpec, SimError};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "nrloc", version, about = "5G NR positioning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte-Carlo snapshot positioning of the scenario's UE points.
    Static(RunArgs),
    /// EKF tracking along the scenario's trajectory.
    Track(RunArgs),
    /// Validate a PRS/SRS/SSB grid configuration and print collisions as JSON.
    GridCheck {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// dl_tdoa, multi_rtt, ul_aoa, dl_aod or fused.
    #[arg(long)]
    method: Method,
    /// geometric or linklevel.
    #[arg(long, default_value = "geometric")]
    level: Level,
    #[arg(long, default_value_t = 1)]
    mu: u8,
    #[arg(long, default_value_t = 1)]
    runs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for report.json, errors.csv and cdf.csv.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    /// Tracking NLOS policy: none, oracle, gate or gate=<k>.
    #[arg(long, value_parser = parse_nlos)]
    nlos: Option<NlosPolicy>,
    /// Epoch interval in seconds for tracking.
    #[arg(long)]
    interval: Option<f64>,
}

fn parse_nlos(s: &str) -> Result<NlosPolicy, String> {
    match s {
        "none" => Ok(NlosPolicy::None),
        "oracle" => Ok(NlosPolicy::Oracle),
        "gate" => Ok(NlosPolicy::InnovationGate { threshold: 3.0 }),
        _ => match s.strip_prefix("gate=").map(str::parse::<f64>) {
            Some(Ok(threshold)) if threshold > 0.0 => Ok(NlosPolicy::InnovationGate { threshold }),
            _ => Err(format!("unknown NLOS policy '{s}'")),
        },
    }
}

impl RunArgs {
    fn spec(&self) -> RunSpec {
        RunSpec {
            level: self.level,
            mu: self.mu,
            runs: self.runs,
            seed: self.seed,
            out: self.out.clone(),
            threads: self.threads,
            nlos: self.nlos,
            interval_s: self.interval,
            ..RunSpec::new(&self.scenario, self.method)
        }
    }
}

fn finish(report: Result<MetricsReport, SimError>, out: Option<&PathBuf>) -> ExitCode {
    let result = report.and_then(|r| {
        if let Some(dir) = out {
            write_outputs(&r, dir)?;
        }
        Ok(r)
    });
    match result {
        Ok(r) => {
            println!("{}", serde_json::to_string_pretty(&r).expect("report serialises"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Static(args) => finish(run_static(&args.spec()), args.out.as_ref()),
        Command::Track(args) => finish(run_track(&args.spec()), args.out.as_ref()),
        Command::GridCheck { config } => {
            let config = match std::fs::read_to_string(&config)
                .map_err(|e| e.to_string())
                .and_then(|t| GridConfig::from_toml(&t).map_err(|e| e.to_string()))
            {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            let report = grid_check(&config);
            println!("{}", serde_json::to_string_pretty(&report).expect("report serialises"));
            if report.valid {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
    }
}
