use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use softmc_sim::campaign::{run_campaign, CampaignConfig, CampaignError, ExperimentRequest};
use softmc_sim::geometry::DeviceGeometry;
use softmc_sim::isa::read_stream;
use softmc_sim::routines::{find_experiment, RefreshMode, RowSelection};
use softmc_sim::timing::{parse_trace, validate, TimingParams, TimingViolation};

#[derive(Parser)]
#[command(name = "softmc-sim", version, about = "Simulated DRAM characterization campaigns")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment: retention, trcd or tras.
    Run(RunArgs),
    /// Run every experiment listed in a campaign config file.
    Campaign {
        config: PathBuf,
        /// Overrides the config's worker count.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Check a command trace against timing parameters; prints violations as CSV.
    ValidateTrace {
        trace: PathBuf,
        /// JSON object of timing parameters; missing keys take DDR3 defaults.
        params: Option<PathBuf>,
    },
    /// Print a binary instruction stream in text form.
    Disasm { file: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    experiment: String,
    /// Campaign config to start from; the flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Preset name (A, B, C) or profile JSON path.
    #[arg(long)]
    profile: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Degrees Celsius.
    #[arg(long)]
    temperature: Option<f64>,
    /// Comma-separated milliseconds.
    #[arg(long, value_delimiter = ',')]
    intervals: Option<Vec<f64>>,
    /// Comma-separated cycles; `a-b` ranges are accepted.
    #[arg(long, value_delimiter = ',', value_parser = parse_timing)]
    timing_values: Option<Vec<Vec<u32>>>,
    /// Comma-separated bytes, decimal or 0x-prefixed hex.
    #[arg(long, value_delimiter = ',', value_parser = parse_pattern)]
    patterns: Option<Vec<u8>>,
    /// Test the first N rows of bank 0.
    #[arg(long)]
    rows: Option<u32>,
    #[arg(long, value_parser = parse_refresh)]
    refresh: Option<RefreshMode>,
    #[arg(long)]
    interleave: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
}

fn parse_timing(s: &str) -> Result<Vec<u32>, String> {
    let num = |v: &str| v.trim().parse::<u32>().map_err(|e| format!("`{v}`: {e}"));
    match s.split_once('-') {
        Some((a, b)) => {
            let (a, b) = (num(a)?, num(b)?);
            if a > b {
                return Err(format!("empty range {s}"));
            }
            Ok((a..=b).collect())
        }
        None => Ok(vec![num(s)?]),
    }
}

fn parse_pattern(s: &str) -> Result<u8, String> {
    let s = s.trim();
    let parsed = match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u8::from_str_radix(hex, 16),
        None => s.parse(),
    };
    parsed.map_err(|e| format!("`{s}`: {e}"))
}

fn parse_refresh(s: &str) -> Result<RefreshMode, String> {
    RefreshMode::parse(s).ok_or_else(|| format!("`{s}`: expected manual or auto"))
}

fn build_run_config(args: RunArgs) -> Result<CampaignConfig, CampaignError> {
    let exp = find_experiment(&args.experiment)?;
    let mut config = match &args.config {
        Some(path) => CampaignConfig::from_file(path)?,
        None => CampaignConfig {
            geometry: DeviceGeometry::default(),
            profile: "A".into(),
            temperature_c: None,
            seed: 0,
            experiments: vec![],
            out_dir: PathBuf::from("results"),
            jobs: 1,
        },
    };
    let mut plan = config
        .experiments
        .iter()
        .find(|r| r.name == exp.name())
        .and_then(|r| r.plan.clone())
        .unwrap_or_else(|| exp.default_plan(&config.geometry));
    if let Some(v) = args.intervals {
        plan.intervals_ms = v;
    }
    if let Some(v) = args.timing_values {
        plan.timing_values = v.into_iter().flatten().collect();
    }
    if let Some(v) = args.patterns {
        plan.patterns = v;
    }
    if let Some(n) = args.rows {
        plan.rows = RowSelection::bank_prefix(0, n);
    }
    if let Some(m) = args.refresh {
        plan.refresh = m;
    }
    if let Some(w) = args.interleave {
        plan.interleave_width = w;
    }
    config.experiments = vec![ExperimentRequest {
        name: exp.name().to_string(),
        plan: Some(plan),
    }];
    if let Some(p) = args.profile {
        config.profile = p;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(t) = args.temperature {
        config.temperature_c = Some(t);
    }
    if let Some(o) = args.out {
        config.out_dir = o;
    }
    if let Some(j) = args.jobs {
        config.jobs = j;
    }
    Ok(config)
}

fn campaign(config: Result<CampaignConfig, CampaignError>) -> Result<ExitCode, CampaignError> {
    let report = run_campaign(&config?)?;
    for f in &report.csv_files {
        println!("wrote {}", f.display());
    }
    println!("wrote {}", report.summary_file.display());
    Ok(ExitCode::SUCCESS)
}

/// A failure with its exit status.
struct Failure(u8, String);

impl From<CampaignError> for Failure {
    fn from(e: CampaignError) -> Self {
        Failure(e.exit_code(), e.to_string())
    }
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| Failure(3, format!("{}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String, Failure> {
    String::from_utf8(read(path)?).map_err(|e| Failure(2, format!("{}: {e}", path.display())))
}

fn validate_trace(trace: &Path, params: Option<&Path>) -> Result<ExitCode, Failure> {
    let text = read_text(trace)?;
    let params: TimingParams = match params {
        Some(p) => serde_json::from_str(&read_text(p)?)
            .map_err(|e| Failure(2, format!("{}: {e}", p.display())))?,
        None => TimingParams::default(),
    };
    params
        .validate()
        .map_err(|e| Failure(2, format!("timing parameters: {e}")))?;
    let trace = parse_trace(&text).map_err(|e| Failure(2, format!("{}: {e}", trace.display())))?;
    let violations = validate(&trace, &params);
    println!("{}", TimingViolation::csv_header());
    for v in &violations {
        println!("{}", v.to_csv());
    }
    Ok(if violations.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn disasm(file: &Path) -> Result<ExitCode, Failure> {
    let bytes = read(file)?;
    let program = read_stream(&bytes).map_err(|e| Failure(2, format!("{}: {e}", file.display())))?;
    for instr in program {
        println!("{instr}");
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => campaign(build_run_config(args)).map_err(Failure::from),
        Command::Campaign { config, jobs } => {
            let config = CampaignConfig::from_file(&config).map(|mut c| {
                if let Some(j) = jobs {
                    c.jobs = j;
                }
                c
            });
            campaign(config).map_err(Failure::from)
        }
        Command::ValidateTrace { trace, params } => validate_trace(&trace, params.as_deref()),
        Command::Disasm { file } => disasm(&file),
    };
    match outcome {
        Ok(code) => code,
        Err(Failure(code, message)) => {
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}
