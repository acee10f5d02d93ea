use std::fs;
use std::io::Write;
use std::net::ToSocketAddrs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use modgrid_core::attack::{run_attack, AttackParams};
use modgrid_core::feeder::{FeederModel, Phase};
use modgrid_core::mitigate::{run_mitigation, ControlOptions, SearchOptions, Weights};
use modgrid_core::modbus::{
    relay, serve, ModbusLink, RefreshPolicy, Simulation, VoltageSource, DEFAULT_PORT,
};
use modgrid_core::powerflow::VoltageBand;
use modgrid_core::regmap::{register_map_markdown, MeterMap, WordOrder};
use modgrid_core::scenario::{emit_report, run_scenario, AttackMode, ScenarioConfig};

#[derive(Parser)]
#[command(name = "modgrid", version, about = "Feeder testbed over Modbus/TCP: server, attacker, defender and scenario runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve the simulated feeder over Modbus/TCP.
    Serve(ServeArgs),
    /// Forward Modbus/TCP traffic to another server unchanged.
    Relay(RelayArgs),
    /// Run the adaptive load-altering attack against a server.
    Attack(AttackArgs),
    /// Run the topology-control defender against a server.
    Mitigate(MitigateArgs),
    /// Run the six-case experiment end to end and write the report.
    Scenario(ScenarioArgs),
    /// Print or write the register map reference.
    Regmap(RegmapArgs),
}

#[derive(Args)]
struct FeederArg {
    /// Feeder description file (defaults to the bundled IEEE 123-bus-like feeder).
    #[arg(long)]
    feeder: Option<PathBuf>,
}

impl FeederArg {
    fn load(&self) -> Result<FeederModel> {
        match &self.feeder {
            Some(p) => FeederModel::from_file(p).with_context(|| format!("loading {}", p.display())),
            None => Ok(FeederModel::bundled()),
        }
    }
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    feeder: FeederArg,
    #[arg(long, default_value_t = format!("127.0.0.1:{DEFAULT_PORT}"))]
    bind: String,
    /// `on-write` re-solves before answering a write; `tick:<ms>` re-solves periodically.
    #[arg(long, default_value = "on-write")]
    refresh: RefreshPolicy,
    /// Word order of the FLOAT32 mirror: hi-lo or lo-hi.
    #[arg(long, default_value = "hi-lo")]
    float_order: WordOrder,
}

#[derive(Args)]
struct RelayArgs {
    #[arg(long)]
    bind: String,
    /// Server to forward to.
    #[arg(long)]
    upstream: String,
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long)]
    server: String,
    /// Phase group to overload: A, B or C.
    #[arg(long, value_parser = parse_phase)]
    mode: Phase,
    /// Attack parameters (JSON). Defaults apply when omitted.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    trace_out: Option<PathBuf>,
    #[command(flatten)]
    feeder: FeederArg,
    /// `scaled`, `float` or `float:lo-hi`.
    #[arg(long, default_value = "scaled")]
    voltage_source: VoltageSource,
}

#[derive(Args)]
struct MitigateArgs {
    #[arg(long)]
    server: String,
    #[command(flatten)]
    feeder: FeederArg,
    /// Control interval between observation rounds.
    #[arg(long, default_value_t = 500)]
    interval: u64,
    /// Run one round and exit.
    #[arg(long)]
    once: bool,
    /// Stop after this many rounds.
    #[arg(long)]
    max_rounds: Option<usize>,
    /// Plan with the exhaustive search instead of the best-response sweep.
    #[arg(long)]
    oracle: bool,
    /// Accept configurations with loops (both ties closed).
    #[arg(long)]
    allow_meshed: bool,
    #[arg(long, default_value_t = 1000.0)]
    w_violations: f64,
    #[arg(long, default_value_t = 1.0)]
    w_cost: f64,
    #[arg(long)]
    plan_out: Option<PathBuf>,
    #[arg(long, default_value = "scaled")]
    voltage_source: VoltageSource,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario configuration (JSON); built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run a single case (1-6).
    #[arg(long, conflicts_with = "all")]
    case: Option<u8>,
    /// Run all six cases.
    #[arg(long)]
    all: bool,
    /// Write each case's terminal setpoints directly.
    #[arg(long, conflicts_with = "live")]
    replay: bool,
    /// Run the adaptive attack loop.
    #[arg(long)]
    live: bool,
    /// Use the exhaustive search as the defender.
    #[arg(long)]
    oracle: bool,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct RegmapArgs {
    #[command(flatten)]
    feeder: FeederArg,
    /// Write to this file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_phase(s: &str) -> Result<Phase, String> {
    let mut chars = s.chars();
    match (chars.next().map(|c| c.to_ascii_uppercase()).and_then(Phase::from_char), chars.next()) {
        (Some(p), None) => Ok(p),
        _ => Err(format!("`{s}` is not a phase (A, B or C)")),
    }
}

fn resolve(addr: &str) -> Result<std::net::SocketAddr> {
    addr.to_socket_addrs()
        .with_context(|| format!("resolving {addr}"))?
        .next()
        .ok_or_else(|| anyhow!("{addr} resolves to nothing"))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

/// Prints the bound address so scripts can find an ephemeral port.
fn announce(what: &str, addr: std::net::SocketAddr) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{what} listening on {addr}");
    let _ = out.flush();
}

fn cmd_serve(a: ServeArgs) -> Result<ExitCode> {
    let model = Arc::new(a.feeder.load()?);
    let sim = Simulation::new(model, a.float_order)?;
    let handle = serve(sim, a.bind.as_str(), a.refresh).with_context(|| format!("binding {}", a.bind))?;
    announce("modbus server", handle.addr());
    handle.wait();
    Ok(ExitCode::SUCCESS)
}

fn cmd_relay(a: RelayArgs) -> Result<ExitCode> {
    let handle = relay(a.bind.as_str(), resolve(&a.upstream)?).with_context(|| format!("binding {}", a.bind))?;
    announce("relay", handle.addr());
    handle.wait();
    Ok(ExitCode::SUCCESS)
}

fn cmd_attack(a: AttackArgs) -> Result<ExitCode> {
    let model = a.feeder.load()?;
    let map = MeterMap::for_model(&model)?;
    let params = match &a.params {
        Some(p) => AttackParams::from_json(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
        None => AttackParams::default(),
    };
    let mut link = ModbusLink::connect(a.server.as_str(), map.clone(), a.voltage_source)
        .with_context(|| format!("connecting to {}", a.server))?;
    let trace = run_attack(&mut link, &model, &map, &params, a.mode)?;
    if let Some(path) = &a.trace_out {
        trace.save_csv(path).with_context(|| format!("writing {}", path.display()))?;
    }
    let last = trace.rows.last();
    println!(
        "attack on phase {}: {} after {} steps, violations {}, unbalance {:.3}%, budget {:.4} MW",
        a.mode,
        trace.status.as_str(),
        trace.rows.len(),
        last.map_or(trace.initial_violations, |r| r.violations),
        last.map_or(trace.initial_unbalance_pct, |r| r.unbalance_pct),
        trace.budget_spent()
    );
    if let Some(e) = &trace.error {
        bail!("attack stopped: {e}");
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_mitigate(a: MitigateArgs) -> Result<ExitCode> {
    let model = a.feeder.load()?;
    let map = MeterMap::for_model(&model)?;
    let weights = Weights {
        violations: a.w_violations,
        cost: a.w_cost,
    };
    if !(weights.violations > 0.0 && weights.cost > 0.0) {
        bail!("weights must be positive");
    }
    let opts = SearchOptions {
        allow_meshed: a.allow_meshed,
        band: VoltageBand::default(),
        ..SearchOptions::default()
    };
    let ctl = ControlOptions {
        interval: Duration::from_millis(a.interval),
        once: a.once,
        oracle: a.oracle,
        max_rounds: a.max_rounds,
        ..ControlOptions::default()
    };
    let mut link = ModbusLink::connect(a.server.as_str(), map.clone(), a.voltage_source)
        .with_context(|| format!("connecting to {}", a.server))?;
    let rounds = run_mitigation(&mut link, &model, &map, weights, &opts, &ctl)?;
    for r in &rounds {
        println!(
            "round {}: violations {} -> {}, toggled [{}]",
            r.round,
            r.observed_violations,
            r.post_violations,
            r.coil_writes.join(", ")
        );
    }
    if let Some(path) = &a.plan_out {
        write_json(path, &rounds)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_scenario(a: ScenarioArgs) -> Result<ExitCode> {
    let mut cfg = match &a.config {
        Some(p) => ScenarioConfig::from_file(p)?,
        None => ScenarioConfig::default(),
    };
    if let Some(c) = a.case {
        cfg.cases = vec![c];
    } else if a.all {
        cfg.cases = (1..=6).collect();
    }
    if a.replay {
        cfg.mode = AttackMode::Replay;
    } else if a.live {
        cfg.mode = AttackMode::Live;
    }
    cfg.oracle |= a.oracle;
    let report = run_scenario(&cfg)?;
    let files = emit_report(&report, &a.out_dir)?;
    println!("case group level_mw status      pre  unbalance%  toggles   post  oracle");
    for c in &report.cases {
        let show = |v: Option<usize>| v.map_or("-".to_string(), |x| x.to_string());
        println!(
            "{:>4} {:>5} {:>8.3} {:<10} {:>4} {:>11} {:<9} {:>4}  {}",
            c.case,
            c.group.as_char(),
            c.level_mw,
            if c.is_ok() { "ok" } else { "failed" },
            show(c.violations_pre),
            c.unbalance_pct.map_or("-".into(), |u| format!("{u:.3}")),
            if c.toggles.is_empty() { "-".into() } else { c.toggles.join("+") },
            show(c.violations_post),
            c.oracle_agrees.map_or("-", |ok| if ok { "agrees" } else { "differs" }),
        );
        if !c.is_ok() {
            eprintln!("case {}: {}", c.case, c.status);
        }
    }
    for f in files {
        info!("wrote {}", f.display());
    }
    Ok(if report.invariants_hold() {
        ExitCode::SUCCESS
    } else {
        eprintln!("scenario invariants do not hold");
        ExitCode::FAILURE
    })
}

fn cmd_regmap(a: RegmapArgs) -> Result<ExitCode> {
    let model = a.feeder.load()?;
    let map = MeterMap::for_model(&model)?;
    let text = register_map_markdown(&map, &model);
    match &a.out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Serve(a) => cmd_serve(a),
        Command::Relay(a) => cmd_relay(a),
        Command::Attack(a) => cmd_attack(a),
        Command::Mitigate(a) => cmd_mitigate(a),
        Command::Scenario(a) => cmd_scenario(a),
        Command::Regmap(a) => cmd_regmap(a),
    };
    result.unwrap_or_else(|e| {
        // Wrapped errors often repeat their source's text; print each once.
        let mut msg = String::new();
        for cause in e.chain().map(|c| c.to_string()) {
            if !msg.ends_with(&cause) {
                if !msg.is_empty() {
                    msg.push_str(": ");
                }
                msg.push_str(&cause);
            }
        }
        eprintln!("error: {msg}");
        ExitCode::from(2)
    })
}
