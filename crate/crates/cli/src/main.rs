use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use upsim::controller::ControllerMode;
use upsim::plant::waveform::{waveform_synthesize, write_waveform_csv, WaveformKind, WaveformRequest};
use upsim::plant::{transformer_secondary, TransformerSpec};
use upsim::scenario::{parse_scenario, run, write_trace, SimConfig, SimError};
use upsim::sweep::runtime_sweep;
use upsim_gateway::{serve, GatewayConfig, Speed, DEFAULT_PORT};

const EXIT_USAGE: u8 = 1;
const EXIT_SCENARIO: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "upsim", version, about = "Microcontroller-supervised PC UPS simulator")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Replay a scenario script and write the CSV trace.
    Run(RunArgs),
    /// Render a rectifier-stage waveform as CSV.
    Waveform(WaveformArgs),
    /// Run a live session behind the TCP gateway.
    Serve(ServeArgs),
    /// Print battery runtime to the safe cutoff for a list of loads.
    RuntimeSweep(SweepArgs),
}

#[derive(Debug, Args)]
struct SimArgs {
    /// Controller behaviour: specified (threshold hysteresis) or listing
    /// (as assembled).
    #[arg(long, default_value = "specified")]
    mode: ControllerMode,
    /// Plant integration step in milliseconds.
    #[arg(long = "dt-ms", default_value_t = 1.0)]
    dt_ms: f64,
    /// Battery terminal voltage at t = 0 (6.0 to 13.5).
    #[arg(long = "initial-battery-v")]
    initial_battery_v: Option<f64>,
}

impl SimArgs {
    fn config(&self) -> Result<SimConfig, Failure> {
        if !(self.dt_ms.is_finite() && self.dt_ms > 0.0) {
            return Err(Failure { code: EXIT_USAGE, err: anyhow!("--dt-ms must be positive, got {}", self.dt_ms) });
        }
        let mut cfg = SimConfig::default().with_mode(self.mode).with_plant_dt_ms(self.dt_ms);
        if let Some(v) = self.initial_battery_v {
            let b = &cfg.battery;
            if !(b.v_empty..=b.v_full).contains(&v) {
                return Err(Failure {
                    code: EXIT_USAGE,
                    err: anyhow!("--initial-battery-v must lie in {}..={} V, got {v}", b.v_empty, b.v_full),
                });
            }
            cfg = cfg.with_battery_voltage(v);
        }
        cfg.validate().map_err(sim_failure)?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Output CSV, `-` for stdout.
    #[arg(long)]
    trace: PathBuf,
    #[command(flatten)]
    sim: SimArgs,
}

#[derive(Debug, Args)]
struct WaveformArgs {
    #[arg(long, value_parser = parse_kind)]
    kind: WaveformKind,
    /// Output CSV, `-` for stdout.
    #[arg(long)]
    out: PathBuf,
    /// Peak volts; defaults to the transformer secondary peak at 220V mains.
    #[arg(long)]
    amplitude: Option<f64>,
    #[arg(long, default_value_t = 50.0)]
    freq: f64,
    #[arg(long, default_value_t = 0.04)]
    duration: f64,
    #[arg(long = "samples-per-cycle", default_value_t = 64)]
    samples_per_cycle: usize,
    /// Reservoir capacitance in farads.
    #[arg(long)]
    cap: Option<f64>,
    /// DC load current in amperes.
    #[arg(long = "load-a")]
    load_a: Option<f64>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, default_value_t = DEFAULT_PORT)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value = "realtime")]
    speed: Speed,
    /// Simulated milliseconds between periodic snapshots (at least 50).
    #[arg(long = "interval-ms", default_value_t = 100)]
    interval_ms: u64,
    /// Start with the loop paused until a client sends `resume`.
    #[arg(long)]
    paused: bool,
    #[command(flatten)]
    sim: SimArgs,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Comma-separated loads in watts.
    #[arg(long, value_delimiter = ',', required = true)]
    loads: Vec<f64>,
    #[command(flatten)]
    sim: SimArgs,
}

fn parse_kind(s: &str) -> Result<WaveformKind, String> {
    s.parse()
}

struct Failure {
    code: u8,
    err: anyhow::Error,
}

trait ExitWith<T> {
    fn exit_with(self, code: u8) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> ExitWith<T> for Result<T, E> {
    fn exit_with(self, code: u8) -> Result<T, Failure> {
        self.map_err(|e| Failure { code, err: e.into() })
    }
}

fn sim_failure(e: SimError) -> Failure {
    let code = if matches!(e, SimError::Config(_)) { EXIT_USAGE } else { EXIT_SCENARIO };
    Failure { code, err: e.into() }
}

fn open_out(path: &Path) -> io::Result<Box<dyn Write>> {
    if path.as_os_str() == "-" {
        Ok(Box::new(BufWriter::new(io::stdout().lock())))
    } else {
        Ok(Box::new(BufWriter::new(File::create(path)?)))
    }
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let text = std::fs::read_to_string(&args.scenario)
        .with_context(|| format!("reading {}", args.scenario.display()))
        .exit_with(EXIT_IO)?;
    let events =
        parse_scenario(&text).with_context(|| format!("in {}", args.scenario.display())).exit_with(EXIT_SCENARIO)?;
    let rows = run(&events, &args.sim.config()?).map_err(sim_failure)?;
    let out = open_out(&args.trace).with_context(|| format!("creating {}", args.trace.display())).exit_with(EXIT_IO)?;
    write_trace(&rows, out).with_context(|| format!("writing {}", args.trace.display())).exit_with(EXIT_IO)?;
    Ok(())
}

fn cmd_waveform(args: WaveformArgs) -> Result<(), Failure> {
    let amplitude = args
        .amplitude
        .unwrap_or_else(|| transformer_secondary(220.0, &TransformerSpec::default()) * std::f64::consts::SQRT_2);
    let mut req = WaveformRequest::new(args.kind, amplitude, args.freq, args.duration);
    req.samples_per_cycle = args.samples_per_cycle;
    if let Some(c) = args.cap {
        req.filter.cap_farads = c;
    }
    if let Some(a) = args.load_a {
        req.load_current_a = a;
    }
    let samples = waveform_synthesize(&req).exit_with(EXIT_USAGE)?;
    let out = open_out(&args.out).with_context(|| format!("creating {}", args.out.display())).exit_with(EXIT_IO)?;
    write_waveform_csv(&samples, out).with_context(|| format!("writing {}", args.out.display())).exit_with(EXIT_IO)?;
    Ok(())
}

fn cmd_serve(args: ServeArgs) -> Result<(), Failure> {
    let cfg = GatewayConfig {
        sim: args.sim.config()?,
        interval_ms: args.interval_ms,
        speed: args.speed,
        start_paused: args.paused,
        ..GatewayConfig::default()
    };
    let server = serve((args.host.as_str(), args.port), cfg).map_err(|e| match e {
        upsim_gateway::GatewayError::Io(io) => Failure { code: EXIT_IO, err: anyhow!(io).context("binding listener") },
        other => Failure { code: EXIT_USAGE, err: other.into() },
    })?;
    eprintln!("upsim gateway listening on {}", server.local_addr());
    server.wait();
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<(), Failure> {
    let cfg = args.sim.config()?;
    let results = runtime_sweep(&args.loads, &cfg);
    let mut out = io::stdout().lock();
    let write = || -> io::Result<()> {
        writeln!(out, "load_w,runtime_s,runtime_min")?;
        for (load, r) in args.loads.iter().zip(results) {
            match r {
                Ok(Some(s)) => writeln!(out, "{load},{s:.3},{:.3}", s / 60.0)?,
                Ok(None) => writeln!(out, "{load},,")?,
                Err(e) => writeln!(out, "{load},error,{e}")?,
            }
        }
        out.flush()
    };
    write().exit_with(EXIT_IO)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Cmd::Run(a) => cmd_run(a),
        Cmd::Waveform(a) => cmd_waveform(a),
        Cmd::Serve(a) => cmd_serve(a),
        Cmd::RuntimeSweep(a) => cmd_sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("upsim: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}
