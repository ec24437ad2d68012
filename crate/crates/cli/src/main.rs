use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use undervolt_lab::harness::{bundled_source, VictimProgram};
use undervolt_lab::isa::parse_program;
use undervolt_lab::msr::{self, Command, Domain, MailboxCommand, PState, VoltagePayload};
use undervolt_lab::orchestrator::{
    phase1_find_window, phase2_probe_cores, phase3_attack, setup_system, AttackConfig, OrchestratorError,
    Phase1Options, ProbeOptions, ProbeReport, VoltagePlan,
};
use undervolt_lab::processor::{bundled_profile, bundled_profile_names, load_profile_file, ProcessorProfile};
use undervolt_lab::report;
use undervolt_lab::scanner::scan;
use undervolt_lab::scenario::Scenario;
use undervolt_lab::stressor::StressorKind;

#[derive(Parser)]
#[command(name = "uvlab", version, about = "Simulated undervolting fault-injection laboratory")]
struct Cli {
    /// Worker threads for parallel trials (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build an OC mailbox (MSR 0x150) word.
    EncodeMsr(EncodeArgs),
    /// Break an OC mailbox word into its fields.
    DecodeMsr {
        /// Hexadecimal word, with or without 0x.
        word: String,
        #[arg(long)]
        json: bool,
    },
    /// List VP1/VP2 patterns in a mini-ISA program.
    Scan {
        /// Program file, or the name of a bundled program.
        program: String,
    },
    /// Offline voltage-window search on every core.
    Window(PlanArgs),
    /// Window search followed by per-core fault probing.
    Probe {
        #[command(flatten)]
        plan: PlanArgs,
        #[arg(long, default_value_t = 10_000)]
        tries: usize,
    },
    /// Attack campaign against one victim on one core.
    Campaign(CampaignArgs),
    /// Fault-shape tables sampled from a profile.
    Report {
        #[command(subcommand)]
        kind: ReportKind,
    },
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long, value_enum, default_value_t = DomainArg::Cores)]
    domain: DomainArg,
    #[arg(long, value_enum, default_value_t = CommandArg::Write)]
    command: CommandArg,
    /// Signed offset in mV.
    #[arg(
        long,
        allow_hyphen_values = true,
        conflicts_with = "static_units",
        required_unless_present = "static_units"
    )]
    offset_mv: Option<i16>,
    /// Absolute voltage in 1/1024 V units.
    #[arg(long)]
    static_units: Option<u16>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct PlanArgs {
    /// Profile JSON file or bundled model name.
    #[arg(long)]
    profile: String,
    /// P-state ratio in hex.
    #[arg(long, value_parser = parse_pstate)]
    pstate: PState,
    #[arg(long, value_enum, default_value_t = StressorArg::Listing2)]
    stressor: StressorArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct CampaignArgs {
    /// Profile JSON file or bundled model name.
    #[arg(long)]
    profile: String,
    #[arg(long, value_enum)]
    victim: VictimArg,
    #[arg(long)]
    core: usize,
    #[arg(long, value_enum, default_value_t = StressorArg::Listing2)]
    stressor: StressorArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    runs: usize,
    #[arg(long, default_value_t = 10_000)]
    tries_per_run: usize,
    #[arg(long, value_parser = parse_pstate, default_value = "0x1b")]
    pstate: PState,
    /// Skip the window search and undervolt by this many mV.
    #[arg(long, allow_hyphen_values = true)]
    offset_mv: Option<i16>,
    /// Also write a one-row results table here.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Write machine-check records of every run here as JSON lines.
    #[arg(long)]
    mce_log: Option<PathBuf>,
}

#[derive(Subcommand)]
enum ReportKind {
    /// Flipped bits per byte position, one row per core.
    Heatmap(ReportArgs),
    /// Faults by number of flipped bits, one row per core.
    Multiplicity(ReportArgs),
}

#[derive(Args)]
struct ReportArgs {
    /// Profile JSON file or bundled model name.
    #[arg(long)]
    profile: String,
    #[arg(long, default_value_t = 1000)]
    faults: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum DomainArg {
    Cores,
    Gpu,
    Cache,
    Uncore,
}

#[derive(Clone, Copy, ValueEnum)]
enum CommandArg {
    Read,
    Write,
}

#[derive(Clone, Copy, ValueEnum)]
enum StressorArg {
    Listing2,
    Twofish,
    None,
}

#[derive(Clone, Copy, ValueEnum)]
enum VictimArg {
    Poc,
    Hmac32,
    Hmac1k,
}

impl From<DomainArg> for Domain {
    fn from(d: DomainArg) -> Self {
        match d {
            DomainArg::Cores => Domain::Cores,
            DomainArg::Gpu => Domain::CoreGpu,
            DomainArg::Cache => Domain::LlcRing,
            DomainArg::Uncore => Domain::SystemAgent,
        }
    }
}

impl From<StressorArg> for StressorKind {
    fn from(s: StressorArg) -> Self {
        match s {
            StressorArg::Listing2 => StressorKind::Listing2ShiftLoop,
            StressorArg::Twofish => StressorKind::TwofishAvx,
            StressorArg::None => StressorKind::None,
        }
    }
}

impl From<VictimArg> for Scenario {
    fn from(v: VictimArg) -> Self {
        match v {
            VictimArg::Poc => Scenario::Poc,
            VictimArg::Hmac32 => Scenario::Hmac32,
            VictimArg::Hmac1k => Scenario::Hmac1k,
        }
    }
}

fn parse_pstate(s: &str) -> Result<PState, String> {
    let v = msr::parse_hex_u64(s).ok_or_else(|| format!("{s:?} is not hexadecimal"))?;
    let ratio = u8::try_from(v).map_err(|_| format!("ratio {v:#x} exceeds 0xff"))?;
    PState::new(ratio).map_err(|e| e.to_string())
}

fn load_profile(arg: &str) -> Result<ProcessorProfile> {
    let path = Path::new(arg);
    if path.exists() {
        return load_profile_file(path).with_context(|| format!("loading {arg}"));
    }
    bundled_profile(arg).map_err(|_| {
        let names: Vec<_> = bundled_profile_names().collect();
        anyhow!("{arg}: no such file or bundled profile (bundled: {})", names.join(", "))
    })
}

#[derive(Serialize)]
struct MsrJson {
    msr: String,
    domain: Domain,
    command: Command,
    mode: msr::Mode,
    #[serde(skip_serializing_if = "Option::is_none")]
    offset_mv: Option<i16>,
    #[serde(skip_serializing_if = "Option::is_none")]
    static_units: Option<u16>,
}

fn msr_json(word: u64, cmd: &MailboxCommand) -> MsrJson {
    let (offset_mv, static_units) = match cmd.payload {
        VoltagePayload::Offset { mv } => (Some(mv), None),
        VoltagePayload::Static { units } => (None, Some(units)),
    };
    MsrJson {
        msr: format!("{word:#018x}"),
        domain: cmd.domain,
        command: cmd.command,
        mode: cmd.mode(),
        offset_mv,
        static_units,
    }
}

fn print_msr(word: u64, cmd: &MailboxCommand, json: bool) -> Result<()> {
    if json {
        println!("{}", serde_json::to_string_pretty(&msr_json(word, cmd))?);
        return Ok(());
    }
    println!("{word:#018x}");
    println!("  domain   {:?}", cmd.domain);
    println!("  command  {:?}", cmd.command);
    match cmd.payload {
        VoltagePayload::Offset { mv } => println!("  offset   {mv} mV"),
        VoltagePayload::Static { units } => println!("  static   {units}/1024 V ({:.4} V)", f64::from(units) / 1024.0),
    }
    Ok(())
}

fn plan_for(args: &PlanArgs, profile: &ProcessorProfile) -> Result<VoltagePlan> {
    let opts = Phase1Options {
        stressor: args.stressor.into(),
        seed: args.seed,
        ..Phase1Options::default()
    };
    Ok(phase1_find_window(
        profile,
        &VictimProgram::test_loop_xor(),
        args.pstate,
        &opts,
    )?)
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

#[derive(Serialize)]
struct ProbeOutput {
    plan: VoltagePlan,
    report: ProbeReport,
}

fn campaign(args: &CampaignArgs) -> Result<ExitCode> {
    let profile = load_profile(&args.profile)?;
    let stressor: StressorKind = args.stressor.into();
    let plan = match args.offset_mv {
        Some(_) => VoltagePlan {
            pstate: args.pstate,
            step_mv: 5,
            cores: Vec::new(),
        },
        None => plan_for(
            &PlanArgs {
                profile: args.profile.clone(),
                pstate: args.pstate,
                stressor: args.stressor,
                seed: args.seed,
            },
            &profile,
        )?,
    };
    let (state, _, _) = setup_system(&profile, args.pstate, args.core, stressor)?;
    let mut cfg = AttackConfig::new(args.victim.into(), args.core, args.seed);
    cfg.runs = args.runs;
    cfg.tries_per_run = args.tries_per_run;
    cfg.offset_override_mv = args.offset_mv;
    let (campaign, aborted) = match phase3_attack(&profile, &state, &plan, &cfg) {
        Ok(c) => (c, false),
        Err(OrchestratorError::AbortedByCrash(c)) => (*c, true),
        Err(e) => return Err(e.into()),
    };
    print_json(&campaign.result)?;
    if let Some(path) = &args.csv {
        let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        report::write_campaign_csv(std::slice::from_ref(&campaign.result), f)?;
    }
    if let Some(path) = &args.mce_log {
        let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut w = BufWriter::new(f);
        for log in &campaign.mce_logs {
            log.write_jsonl(&mut w)?;
        }
        w.flush()?;
    }
    if aborted {
        eprintln!(
            "campaign aborted: crash budget exhausted after {} crashes",
            campaign.result.crashes
        );
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Cmd::EncodeMsr(a) => {
            let payload = match (a.offset_mv, a.static_units) {
                (Some(mv), _) => VoltagePayload::Offset { mv },
                (None, Some(units)) => VoltagePayload::Static { units },
                (None, None) => bail!("either --offset-mv or --static-units is required"),
            };
            let command = match a.command {
                CommandArg::Read => Command::ReadVoltage,
                CommandArg::Write => Command::WriteVoltage,
            };
            let cmd = MailboxCommand {
                domain: a.domain.into(),
                command,
                payload,
            };
            let word = msr::encode_mailbox(&cmd)?;
            print_msr(word, &cmd, a.json)?;
        }
        Cmd::DecodeMsr { word, json } => {
            let w = msr::parse_hex_u64(&word).ok_or_else(|| anyhow!("{word:?} is not a hexadecimal word"))?;
            let cmd = msr::decode_mailbox(w)?;
            print_msr(w, &cmd, json)?;
        }
        Cmd::Scan { program } => {
            let text = match std::fs::read_to_string(&program) {
                Ok(t) => t,
                Err(e) => match bundled_source(&program) {
                    Some(s) => s.to_string(),
                    None => return Err(anyhow!(e).context(format!("reading {program}"))),
                },
            };
            let parsed = parse_program(&text).with_context(|| format!("parsing {program}"))?;
            print_json(&scan(&parsed))?;
        }
        Cmd::Window(a) => {
            let profile = load_profile(&a.profile)?;
            print_json(&plan_for(&a, &profile)?)?;
        }
        Cmd::Probe { plan: a, tries } => {
            let profile = load_profile(&a.profile)?;
            let plan = plan_for(&a, &profile)?;
            let opts = ProbeOptions {
                tries_per_core: tries,
                stressor: a.stressor.into(),
                seed: a.seed,
                ..ProbeOptions::default()
            };
            let report = match phase2_probe_cores(&profile, &plan, &VictimProgram::test_loop_xor(), &opts) {
                Ok(r) => r,
                Err(OrchestratorError::ProbeAborted(r)) => *r,
                Err(e) => return Err(e.into()),
            };
            let aborted = report.aborted;
            print_json(&ProbeOutput { plan, report })?;
            if aborted {
                return Ok(ExitCode::from(3));
            }
        }
        Cmd::Campaign(a) => return campaign(&a),
        Cmd::Report { kind } => {
            let (a, heat) = match &kind {
                ReportKind::Heatmap(a) => (a, true),
                ReportKind::Multiplicity(a) => (a, false),
            };
            let profile = load_profile(&a.profile)?;
            let rows = report::summarize_profile(&profile, a.faults, a.seed)?;
            let out = io::stdout().lock();
            if heat {
                report::write_heatmap_csv(&rows, out)?;
            } else {
                report::write_multiplicity_csv(&rows, out)?;
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
