use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use delayfactor::adversaries::{run_broadcast, run_unicast, AdversaryError};
use delayfactor::model::{instance_to_json, parse_instance, InstanceError};
use delayfactor::oracles::OracleError;
use delayfactor::trace::ScheduleTrace;
use delayfactor::{delay_factor, Instance, Mode, Rational};
use delayfactor_cli::check::{check, CheckOptions};
use delayfactor_cli::experiment::{compare, oracle, run_experiment, ExperimentError, ExperimentSpec, OracleSettings, RatioRow, SchedulerKind};
use delayfactor_cli::gen::{generate, GenParams, Profile};
use delayfactor_cli::sweep::{run_sweep, GridSpec};
use serde_json::json;

#[derive(Parser)]
#[command(name = "delayfactor", version, about = "Simulate online schedulers and measure their maximum delay factor")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scheduler on an instance; write the trace and the report.
    Run(RunArgs),
    /// Compare schedulers against the offline optimum; one CSV row per instance.
    Compare(CompareArgs),
    /// Generate a random instance.
    Gen(GenArgs),
    /// Check a trace against every applicable invariant.
    Check(CheckArgs),
    /// Run compare over a grid of parameters; resumable.
    Sweep(SweepArgs),
    /// Bracket the offline optimum of an instance.
    Oracle(OracleArgs),
    /// Run a lower-bound construction against a scheduler at speed 1.
    Adversary(AdversaryArgs),
}

#[derive(Args)]
struct SchedulerArgs {
    /// One of: ssf, ssf-np, ssf-id, ssfw, ssfw-varying, fifo
    #[arg(long)]
    scheduler: String,
    /// Machine speed, as an integer, fraction or decimal
    #[arg(long, default_value = "1")]
    speed: Rational,
    /// Wait constant c for ssfw and ssfw-varying
    #[arg(long)]
    wait_c: Option<Rational>,
    /// Machine count; defaults to the instance's
    #[arg(long)]
    machines: Option<usize>,
}

impl SchedulerArgs {
    fn spec(&self) -> Result<ExperimentSpec, Failure> {
        let kind: SchedulerKind = self.scheduler.parse().map_err(|e: ExperimentError| Failure::Usage(e.to_string()))?;
        if kind.needs_c() && self.wait_c.is_none() {
            return Err(Failure::Usage(ExperimentError::MissingC(kind).to_string()));
        }
        Ok(ExperimentSpec {
            scheduler: kind,
            c: self.wait_c.clone(),
            speed: self.speed.clone(),
            machines: self.machines,
        })
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    instance: PathBuf,
    #[command(flatten)]
    scheduler: SchedulerArgs,
    /// JSON-lines trace output
    #[arg(long)]
    trace: Option<PathBuf>,
    /// JSON report output; stdout when absent
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct OracleOpts {
    /// Bracket width for the unicast binary search
    #[arg(long, default_value = "1/1024")]
    tolerance: Rational,
    /// Slot length for the broadcast search; derived from the instance when absent
    #[arg(long)]
    slot: Option<Rational>,
}

impl OracleOpts {
    fn settings(&self) -> OracleSettings {
        OracleSettings {
            tolerance: self.tolerance.clone(),
            slot: self.slot.clone(),
        }
    }
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long, required = true, num_args = 1..)]
    instance: Vec<PathBuf>,
    #[command(flatten)]
    scheduler: SchedulerArgs,
    #[command(flatten)]
    oracle: OracleOpts,
    /// CSV output; stdout when absent
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit with code 3 when any row exceeds its bound
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    seed: u64,
    /// unicast-random, broadcast-random or bursty-page
    #[arg(long, long_help = PROFILES)]
    profile: Profile,
    #[arg(long, default_value_t = 20)]
    requests: usize,
    #[arg(long, default_value_t = 4)]
    pages: usize,
    #[arg(long, default_value_t = 1)]
    machines: usize,
    /// Latest arrival; defaults to the request count
    #[arg(long)]
    span: Option<u32>,
    #[arg(long, default_value_t = 6)]
    max_slack: u32,
    /// Page lengths drawn from {1, 2, 3}
    #[arg(long)]
    varying: bool,
    /// Instance output; stdout when absent
    #[arg(long)]
    out: Option<PathBuf>,
}

const PROFILES: &str = "Instance distribution:
  unicast-random    arrivals on quarter points of [0, span]; lengths in {1/4, ..., 2};
                    slack = length + {0, 1/4, ..., 4}
  broadcast-random  uniform pages; integer arrivals in [0, span]; integer slack in
                    [1, max-slack]; unit pages unless --varying (lengths in {1, 2, 3})
  bursty-page       bursts of 2 to 4 requests for one page, half a unit apart, from a
                    uniform integer start in [0, span]; at least two requests per
                    requested page";

#[derive(Clone, Copy, ValueEnum)]
enum Rules {
    Unicast,
    Broadcast,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long)]
    trace: PathBuf,
    /// Rule set; defaults to the instance's mode
    #[arg(long, value_enum)]
    rules: Option<Rules>,
    /// Wait constant of the scheduler that produced a broadcast trace
    #[arg(long)]
    wait_c: Option<Rational>,
}

#[derive(Args)]
struct SweepArgs {
    /// JSON grid: profile, params, schedulers, eps, c, seeds, tolerance, slot
    #[arg(long)]
    grid: PathBuf,
    /// CSV output; rows already present are skipped
    #[arg(long)]
    out: PathBuf,
    /// Worker threads
    #[arg(long, env = "DELAYFACTOR_THREADS")]
    threads: Option<usize>,
    /// Exit with code 3 when any row exceeds its bound
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long)]
    machines: Option<usize>,
    #[command(flatten)]
    oracle: OracleOpts,
    /// JSON-lines output for the witness schedule
    #[arg(long)]
    witness: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Construction {
    Unicast,
    Broadcast,
}

#[derive(Args)]
struct AdversaryArgs {
    #[arg(value_enum)]
    construction: Construction,
    /// Length ratio P for the unicast construction
    #[arg(long, default_value = "1024")]
    p: Rational,
    /// Page count n for the broadcast construction
    #[arg(long, default_value_t = 8)]
    n: usize,
    /// One of: ssf, ssf-np, ssf-id, ssfw, ssfw-varying, fifo
    #[arg(long)]
    scheduler: String,
    #[arg(long)]
    wait_c: Option<Rational>,
    /// JSON-lines output for the online trace
    #[arg(long)]
    trace: Option<PathBuf>,
    /// JSON-lines output for the certificate schedule
    #[arg(long)]
    certificate: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Validation(serde_json::Value),
    Bound(String),
    Guard(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Validation(_) => 2,
            Failure::Bound(_) => 3,
            Failure::Guard(_) => 4,
        }
    }

    fn body(&self) -> serde_json::Value {
        match self {
            Failure::Usage(m) => json!({"error": "usage", "message": m}),
            Failure::Validation(v) => v.clone(),
            Failure::Bound(m) => json!({"error": "bound-violation", "message": m}),
            Failure::Guard(m) => json!({"error": "oracle-guard", "message": m}),
        }
    }
}

fn invalid(kind: &str, message: impl ToString) -> Failure {
    Failure::Validation(json!({"error": kind, "message": message.to_string()}))
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| invalid("io", format!("{}: {}", path.display(), e)))
}

fn write_out(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| invalid("io", format!("{}: {}", p.display(), e))),
        None => io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| invalid("io", e)),
    }
}

fn load_instance(path: &Path) -> Result<Instance, Failure> {
    parse_instance(&read(path)?).map_err(|e| match e {
        InstanceError::Parse(e) => invalid("parse", format!("{}: {}", path.display(), e)),
        InstanceError::Invalid(v) => Failure::Validation(json!({
            "error": "validation",
            "instance": path.display().to_string(),
            "violations": v.iter().map(|v| v.to_string()).collect::<Vec<_>>(),
        })),
    })
}

fn experiment_failure(e: ExperimentError) -> Failure {
    match e {
        ExperimentError::UnknownScheduler(_) | ExperimentError::MissingC(_) => Failure::Usage(e.to_string()),
        _ => invalid("validation", e),
    }
}

fn oracle_failure(e: OracleError) -> Failure {
    match e {
        OracleError::Guard { .. } | OracleError::TooManyRequests(..) => Failure::Guard(e.to_string()),
        _ => invalid("oracle", e),
    }
}

fn pretty(v: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(v).unwrap_or_default() + "\n"
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let spec = args.scheduler.spec()?;
    let inst = load_instance(&args.instance)?;
    let (outcome, report) = run_experiment(&inst, &spec).map_err(experiment_failure)?;
    if let Some(p) = &args.trace {
        write_out(Some(p), &outcome.trace.to_jsonl(&outcome.instance))?;
    }
    write_out(args.report.as_deref(), &(report.to_json() + "\n"))
}

fn cmd_compare(args: CompareArgs) -> Result<(), Failure> {
    let spec = args.scheduler.spec()?;
    let settings = args.oracle.settings();
    let mut rows = Vec::new();
    for path in &args.instance {
        let inst = load_instance(path)?;
        spec.validate(&inst).map_err(experiment_failure)?;
        let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        rows.push(compare(&id, &inst, &spec, &settings));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RatioRow::COLUMNS).map_err(|e| invalid("io", e))?;
    for row in &rows {
        w.write_record(row.values()).map_err(|e| invalid("io", e))?;
    }
    let bytes = w.into_inner().map_err(|e| invalid("io", e))?;
    write_out(args.out.as_deref(), &String::from_utf8_lossy(&bytes))?;
    let failed: Vec<&str> = rows.iter().filter(|r| r.failed()).map(|r| r.instance.as_str()).collect();
    if args.strict && !failed.is_empty() {
        return Err(Failure::Bound(format!("ratio above bound on {}", failed.join(", "))));
    }
    Ok(())
}

fn cmd_gen(args: GenArgs) -> Result<(), Failure> {
    let params = GenParams {
        requests: args.requests,
        pages: args.pages,
        machines: args.machines,
        span: args.span,
        max_slack: args.max_slack,
        varying: args.varying,
    };
    let inst = generate(args.seed, args.profile, &params);
    write_out(args.out.as_deref(), &(instance_to_json(&inst) + "\n"))
}

fn cmd_check(args: CheckArgs) -> Result<(), Failure> {
    let inst = load_instance(&args.instance)?;
    let trace = ScheduleTrace::from_jsonl(&read(&args.trace)?, &inst).map_err(|e| {
        Failure::Validation(json!({"error": "trace-parse", "line": e.line, "message": e.message}))
    })?;
    let options = CheckOptions {
        rules: args.rules.map(|r| match r {
            Rules::Unicast => Mode::Unicast,
            Rules::Broadcast => Mode::Broadcast,
        }),
        wait_c: args.wait_c,
    };
    let report = check(&inst, &trace, &options).map_err(|e| invalid("mode-mismatch", e))?;
    write_out(None, &pretty(&report))?;
    if report.is_clean() {
        Ok(())
    } else {
        Err(Failure::Validation(json!({"error": "violations", "count": report.count()})))
    }
}

fn cmd_sweep(args: SweepArgs) -> Result<(), Failure> {
    let grid: GridSpec = serde_json::from_str(&read(&args.grid)?).map_err(|e| invalid("parse", e))?;
    let summary = run_sweep(&grid, &args.out, args.threads).map_err(|e| invalid("sweep", e))?;
    write_out(None, &pretty(&summary))?;
    if args.strict && summary.bound_violations > 0 {
        return Err(Failure::Bound(format!("{} rows above bound", summary.bound_violations)));
    }
    Ok(())
}

fn cmd_oracle(args: OracleArgs) -> Result<(), Failure> {
    let mut inst = load_instance(&args.instance)?;
    if let Some(m) = args.machines {
        inst.machines = m;
    }
    let report = oracle(&inst, inst.machines, &args.oracle.settings()).map_err(oracle_failure)?;
    if let Some(p) = &args.witness {
        write_out(Some(p), &report.witness.to_jsonl(&inst))?;
    }
    write_out(None, &pretty(&report))
}

fn cmd_adversary(args: AdversaryArgs) -> Result<(), Failure> {
    let kind: SchedulerKind = args.scheduler.parse().map_err(|e: ExperimentError| Failure::Usage(e.to_string()))?;
    let spec = ExperimentSpec {
        scheduler: kind,
        c: args.wait_c.clone(),
        speed: Rational::one(),
        machines: Some(1),
    };
    let wanted = match args.construction {
        Construction::Unicast => Mode::Unicast,
        Construction::Broadcast => Mode::Broadcast,
    };
    let probe = Instance::new(wanted, 1, Default::default(), Vec::new());
    spec.validate(&probe).map_err(experiment_failure)?;
    let mut scheduler = spec.build().map_err(experiment_failure)?;
    let run = match args.construction {
        Construction::Unicast => run_unicast(args.p.clone(), scheduler.as_mut()),
        Construction::Broadcast => run_broadcast(args.n, scheduler.as_mut()),
    }
    .map_err(|e| match e {
        AdversaryError::Precondition(_) => Failure::Usage(e.to_string()),
        _ => invalid("adversary", e),
    })?;
    let inst = &run.outcome.instance;
    let online = delay_factor(inst, &run.outcome.trace).map_err(|e| invalid("adversary", e))?;
    let t = &run.transcript;
    let ratio = &online.overall / &t.certificate_factor;
    if let Some(p) = &args.trace {
        write_out(Some(p), &run.outcome.trace.to_jsonl(inst))?;
    }
    if let Some(p) = &args.certificate {
        write_out(Some(p), &t.certificate.to_jsonl(inst))?;
    }
    let body = json!({
        "scheduler": kind.name(),
        "online_factor": online.overall,
        "online_witness": online.witness,
        "ratio": ratio,
        "ratio_decimal": ratio.approx(6),
        "truncated": run.outcome.truncated,
        "transcript": t,
    });
    write_out(None, &pretty(&body))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Gen(a) => cmd_gen(a),
        Command::Check(a) => cmd_check(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::Adversary(a) => cmd_adversary(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", serde_json::to_string(&f.body()).unwrap_or_default());
            ExitCode::from(f.code())
        }
    }
}
