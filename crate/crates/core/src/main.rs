//! Command-line front end: transient runs, FFT post-processing, the
//! closed-form oscillator design report, and one-command demo
//! reproductions, all exchanging CSV.
//!
//! Exit codes: 0 success, 1 parse/input error, 2 simulation error, 3 I/O.

use clap::{Parser, Subcommand, ValueEnum};
use memsim::analysis::{
    char_poly_coeffs, critical_gain, cubic_roots, dominant_frequency, eigenvalues_3x3,
    gain_alpha, integrate_time_window, osc_frequency, phase_shift_deg, state_matrix,
    sustained_oscillation, OscillatorDesign, Spectrum, Window,
};
use memsim::circuits::{
    build_differentiator, build_integrator, build_phase_shift_oscillator, DifferentiatorSpec,
    IntegratorSpec, PhaseShiftSpec,
};
use memsim::device::memristance;
use memsim::engine::{transient_run, Method, SimConfig};
use memsim::netlist::{self, fmt_value, Netlist, SourceSpec};
use memsim::waveform::Waveform;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "memsim", version, about = "Transient simulation and analysis of memristor analog circuits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a transient simulation of a netlist and write the waveform CSV.
    Simulate {
        /// Netlist file.
        netlist: PathBuf,
        /// Timestep in seconds (engineering suffixes allowed); overrides .tran.
        #[arg(long)]
        tstep: Option<String>,
        /// Stop time in seconds; overrides .tran.
        #[arg(long)]
        tstop: Option<String>,
        /// Integration method.
        #[arg(long, value_enum, default_value_t = MethodArg::Trap)]
        method: MethodArg,
        /// Output waveform CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// FFT one column of a waveform CSV and write the spectrum CSV.
    Fft {
        /// Waveform CSV produced by `simulate`.
        csv: PathBuf,
        /// Channel name, e.g. v(out).
        #[arg(long)]
        column: String,
        #[arg(long, value_enum, default_value_t = WindowArg::Hann)]
        window: WindowArg,
        /// Output spectrum CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Closed-form design report for the phase-shift loop.
    OscillatorAnalyze {
        #[arg(long, allow_hyphen_values = true)]
        m1: String,
        #[arg(long, allow_hyphen_values = true)]
        m2: String,
        #[arg(long, allow_hyphen_values = true)]
        m3: String,
        /// Arm capacitance in farads.
        #[arg(long, allow_hyphen_values = true)]
        c: String,
        /// Amplifier gain for the cubic; defaults to the critical gain.
        #[arg(long, allow_hyphen_values = true)]
        k: Option<String>,
        /// Amplifier-side resistance in ohms (m = r4/m1).
        #[arg(long, default_value = "10", allow_hyphen_values = true)]
        r4: String,
    },
    /// Build, simulate, and analyze one of the demo circuits.
    Demo {
        #[arg(value_enum)]
        name: DemoName,
        /// Output directory for the netlist, waveform CSV, and spectrum CSV.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Trap,
    Be,
}

#[derive(Clone, Copy, ValueEnum)]
enum WindowArg {
    Hann,
    None,
}

#[derive(Clone, Copy, ValueEnum)]
enum DemoName {
    PhaseShift,
    Integrator,
    Differentiator,
}

enum CliError {
    Parse(String),
    Sim(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Parse(_) => 1,
            CliError::Sim(_) => 2,
            CliError::Io(_) => 3,
        }
    }
    fn message(&self) -> &str {
        match self {
            CliError::Parse(m) | CliError::Sim(m) | CliError::Io(m) => m,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Simulate { netlist, tstep, tstop, method, out } => {
            simulate_cmd(&netlist, tstep, tstop, method, &out)
        }
        Command::Fft { csv, column, window, out } => fft_cmd(&csv, &column, window, &out),
        Command::OscillatorAnalyze { m1, m2, m3, c, k, r4 } => analyze_cmd(m1, m2, m3, c, k, r4),
        Command::Demo { name, out } => demo_cmd(name, &out),
    }
}

fn parse_flag_number(text: &str, what: &str) -> Result<f64, CliError> {
    netlist::parse_number(text)
        .ok_or_else(|| CliError::Parse(format!("invalid {what} '{text}'")))
}

fn load_netlist(path: &Path) -> Result<Netlist, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    netlist::parse(&text).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
}

fn config_from(
    netlist: &Netlist,
    tstep: Option<String>,
    tstop: Option<String>,
    method: MethodArg,
) -> Result<SimConfig, CliError> {
    let tran = netlist.tran();
    let dt = match tstep {
        Some(s) => parse_flag_number(&s, "--tstep")?,
        None => tran.map(|(step, _)| step).ok_or_else(|| {
            CliError::Parse("no .tran directive and no --tstep flag".to_string())
        })?,
    };
    let stop = match tstop {
        Some(s) => parse_flag_number(&s, "--tstop")?,
        None => tran.map(|(_, stop)| stop).ok_or_else(|| {
            CliError::Parse("no .tran directive and no --tstop flag".to_string())
        })?,
    };
    let mut config = SimConfig::new(dt, stop);
    config.method = match method {
        MethodArg::Trap => Method::Trapezoidal,
        MethodArg::Be => Method::BackwardEuler,
    };
    Ok(config)
}

fn simulate_cmd(
    path: &Path,
    tstep: Option<String>,
    tstop: Option<String>,
    method: MethodArg,
    out: &Path,
) -> Result<(), CliError> {
    let netlist = load_netlist(path)?;
    let config = config_from(&netlist, tstep, tstop, method)?;
    // Validate the output path before the long run.
    let file = fs::File::create(out)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", out.display())))?;
    let wave = transient_run(&netlist, &config).map_err(|e| CliError::Sim(e.to_string()))?;
    wave.to_csv(file)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", out.display())))?;
    println!(
        "wrote {} ({} samples, {} channels)",
        out.display(),
        wave.len(),
        wave.channels.len()
    );
    Ok(())
}

fn fft_cmd(csv: &Path, column: &str, window: WindowArg, out: &Path) -> Result<(), CliError> {
    let file = fs::File::open(csv)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", csv.display())))?;
    let wave = Waveform::from_csv(BufReader::new(file))
        .map_err(|e| CliError::Parse(e.to_string()))?;
    let Some(samples) = wave.channel(column) else {
        return Err(CliError::Parse(format!(
            "column '{}' not found; available: {}",
            column,
            wave.channel_names().join(", ")
        )));
    };
    let window = match window {
        WindowArg::Hann => Window::Hann,
        WindowArg::None => Window::None,
    };
    let spec = Spectrum::compute(samples, wave.dt, window)
        .map_err(|e| CliError::Parse(e.to_string()))?;
    let file = fs::File::create(out)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", out.display())))?;
    spec.to_csv(file)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", out.display())))?;
    match dominant_frequency(&spec, true) {
        Ok(f) => println!("dominant frequency: {} Hz", fmt_value(f)),
        Err(e) => println!("dominant frequency: none ({e})"),
    }
    Ok(())
}

fn analyze_cmd(
    m1: String,
    m2: String,
    m3: String,
    c: String,
    k: Option<String>,
    r4: String,
) -> Result<(), CliError> {
    let m1 = parse_flag_number(&m1, "--m1")?;
    let m2 = parse_flag_number(&m2, "--m2")?;
    let m3 = parse_flag_number(&m3, "--m3")?;
    let c = parse_flag_number(&c, "--c")?;
    let r4 = parse_flag_number(&r4, "--r4")?;
    let probe_design = OscillatorDesign::new(m1, m2, m3, c, 1.0, r4)
        .map_err(|e| CliError::Parse(e.to_string()))?;
    let crit = critical_gain(&probe_design).map_err(|e| CliError::Sim(e.to_string()))?;
    let k = match k {
        Some(s) => parse_flag_number(&s, "--k")?,
        None => crit.k,
    };
    let design = OscillatorDesign::new(m1, m2, m3, c, k, r4)
        .map_err(|e| CliError::Parse(e.to_string()))?;

    let alpha = gain_alpha(m1, m2, m3);
    let f = osc_frequency(&design);
    println!("oscillator design report");
    println!(
        "  M1 = {} ohm, M2 = {} ohm, M3 = {} ohm, C = {} F, K = {}, R4 = {} ohm",
        fmt_value(m1),
        fmt_value(m2),
        fmt_value(m3),
        fmt_value(c),
        fmt_value(k),
        fmt_value(r4)
    );
    println!("  ratio gain alpha          = {}", fmt_value(alpha));
    println!("  oscillation frequency f   = {} Hz", fmt_value(f));
    if m1 == m2 && m2 == m3 {
        let f7 = 1.0 / (2.0 * std::f64::consts::PI * m1 * c * 6.0f64.sqrt());
        println!("  equal-M reduction         = {} Hz", fmt_value(f7));
    }

    let coeffs = char_poly_coeffs(&design);
    println!(
        "  characteristic cubic      : a = {}, b = {}, c = {}, d = {}",
        fmt_value(coeffs.a),
        fmt_value(coeffs.b),
        fmt_value(coeffs.c),
        fmt_value(coeffs.d)
    );
    let roots = cubic_roots(&coeffs).map_err(|e| CliError::Sim(e.to_string()))?;
    for (idx, r) in roots.iter().enumerate() {
        println!("  root s{}                   = {} + j {}", idx + 1, fmt_value(r.re), fmt_value(r.im));
    }
    println!(
        "  critical gain (root locus): K = {} (1+K = {}), f = {} Hz",
        fmt_value(crit.k),
        fmt_value(crit.k + 1.0),
        fmt_value(crit.omega / (2.0 * std::f64::consts::PI))
    );
    println!(
        "  note: the cubic's critical K ({:.3}) and the ratio gain alpha ({:.3}) disagree; both are reported.",
        crit.k, alpha
    );

    let sm = state_matrix(&design);
    println!(
        "  state matrix (m = R4/M1 = {}):",
        fmt_value(design.normalized_memristance())
    );
    for row in sm.m.iter() {
        println!(
            "    [{:>14} {:>14} {:>14}]",
            fmt_value(row[0]),
            fmt_value(row[1]),
            fmt_value(row[2])
        );
    }
    println!("  state-matrix eigenvalues (compared, not asserted, against the cubic):");
    for (idx, l) in eigenvalues_3x3(&sm).iter().enumerate() {
        println!("    lambda{} = {} + j {}", idx + 1, fmt_value(l.re), fmt_value(l.im));
    }
    Ok(())
}

fn demo_cmd(name: DemoName, out_dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", out_dir.display())))?;
    let write = |path: &Path, text: &str| -> Result<(), CliError> {
        fs::write(path, text).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
    };

    let (stem, netlist) = match name {
        DemoName::PhaseShift => {
            ("phase-shift", build_phase_shift_oscillator(&PhaseShiftSpec::default()))
        }
        DemoName::Integrator => ("integrator", build_integrator(&IntegratorSpec::default())),
        DemoName::Differentiator => {
            ("differentiator", build_differentiator(&DifferentiatorSpec::default()))
        }
    };
    write(&out_dir.join(format!("{stem}.cir")), &netlist::serialize(&netlist))?;

    let config = SimConfig::from_netlist(&netlist)
        .ok_or_else(|| CliError::Parse("demo netlist lacks .tran".to_string()))?;
    let wave = transient_run(&netlist, &config).map_err(|e| CliError::Sim(e.to_string()))?;
    let file = fs::File::create(out_dir.join(format!("{stem}-waveform.csv")))
        .map_err(|e| CliError::Io(e.to_string()))?;
    wave.to_csv(file).map_err(|e| CliError::Io(e.to_string()))?;

    match name {
        DemoName::PhaseShift => phase_shift_headline(&netlist, &wave, out_dir, stem),
        DemoName::Integrator => integrator_headline(&netlist, &wave, out_dir, stem),
        DemoName::Differentiator => differentiator_headline(&netlist, &wave, out_dir, stem),
    }
}

fn memristance_of(netlist: &Netlist, name: &str) -> Option<f64> {
    netlist.component(name).and_then(|c| match &c.kind {
        memsim::netlist::ComponentKind::Memristor { params } => {
            Some(memristance(params, params.x0))
        }
        _ => None,
    })
}

fn capacitance_of(netlist: &Netlist, name: &str) -> Option<f64> {
    netlist.component(name).and_then(|c| match &c.kind {
        memsim::netlist::ComponentKind::Capacitor { farads } => Some(*farads),
        _ => None,
    })
}

fn square_drive_of(netlist: &Netlist, name: &str) -> Option<(f64, f64)> {
    netlist.component(name).and_then(|c| match &c.kind {
        memsim::netlist::ComponentKind::VSource { spec: SourceSpec::Pulse { v1, v2, period, .. } } => {
            Some((0.5 * (v2 - v1).abs(), *period))
        }
        _ => None,
    })
}

/// Tail half of a channel, for steady-state measurements.
fn tail(samples: &[f64]) -> &[f64] {
    &samples[samples.len() / 2..]
}

fn write_spectrum(
    samples: &[f64],
    dt: f64,
    window: Window,
    path: &Path,
) -> Result<Spectrum, CliError> {
    let spec = Spectrum::compute(samples, dt, window).map_err(|e| CliError::Sim(e.to_string()))?;
    let file = fs::File::create(path).map_err(|e| CliError::Io(e.to_string()))?;
    spec.to_csv(file).map_err(|e| CliError::Io(e.to_string()))?;
    Ok(spec)
}

fn phase_shift_headline(
    netlist: &Netlist,
    wave: &Waveform,
    out_dir: &Path,
    stem: &str,
) -> Result<(), CliError> {
    let v3 = wave.channel("v(n3)").expect("probed channel");
    let spec = write_spectrum(
        tail(v3),
        wave.dt,
        Window::Hann,
        &out_dir.join(format!("{stem}-spectrum.csv")),
    )?;
    let verdict = sustained_oscillation(v3, wave.dt).map_err(|e| CliError::Sim(e.to_string()))?;
    let measured = dominant_frequency(&spec, true).map_err(|e| CliError::Sim(e.to_string()))?;

    // Equal-M prediction from the memristor card states.
    let m_eff = memristance_of(netlist, "m1").expect("oscillator has M1");
    let c_arm = capacitance_of(netlist, "c1").expect("oscillator has C1");
    let predicted = 1.0 / (2.0 * std::f64::consts::PI * m_eff * c_arm * 6.0f64.sqrt());

    println!(
        "phase-shift: {} at {:.2} Hz (equal-M prediction {:.2} Hz, deviation {:+.2}%)",
        verdict.trend,
        measured,
        predicted,
        100.0 * (measured / predicted - 1.0)
    );
    let mut arms = Vec::new();
    let chain = ["v(in)", "v(n1)", "v(n2)", "v(n3)"];
    for pair in chain.windows(2) {
        let a = wave.channel(pair[0]).expect("probed");
        let b = wave.channel(pair[1]).expect("probed");
        let shift = phase_shift_deg(a, b, wave.dt, measured)
            .map_err(|e| CliError::Sim(e.to_string()))?;
        arms.push(shift);
    }
    println!(
        "  arm phase shifts: {:.2} deg + {:.2} deg + {:.2} deg = {:.2} deg",
        arms[0],
        arms[1],
        arms[2],
        arms.iter().sum::<f64>()
    );
    Ok(())
}

fn integrator_headline(
    netlist: &Netlist,
    wave: &Waveform,
    out_dir: &Path,
    stem: &str,
) -> Result<(), CliError> {
    let vout = wave.channel("v(out)").expect("probed");
    write_spectrum(
        tail(vout),
        wave.dt,
        Window::None,
        &out_dir.join(format!("{stem}-spectrum.csv")),
    )?;
    let t = tail(vout);
    let vpp = t.iter().fold(f64::MIN, |m, v| m.max(*v)) - t.iter().fold(f64::MAX, |m, v| m.min(*v));
    let m = memristance_of(netlist, "m1").expect("integrator has M1");
    let c = capacitance_of(netlist, "c1").expect("integrator has C1");
    let (amplitude, period) = square_drive_of(netlist, "v1").expect("integrator has V1");
    let predicted = amplitude * period / (2.0 * m * c);
    println!(
        "integrator: output Vpp = {:.3} V (predicted A*T/(2MC) = {:.3} V, deviation {:+.2}%)",
        vpp,
        predicted,
        100.0 * (vpp / predicted - 1.0)
    );
    Ok(())
}

fn differentiator_headline(
    netlist: &Netlist,
    wave: &Waveform,
    out_dir: &Path,
    stem: &str,
) -> Result<(), CliError> {
    let vout = wave.channel("v(out)").expect("probed");
    write_spectrum(
        tail(vout),
        wave.dt,
        Window::Hann,
        &out_dir.join(format!("{stem}-spectrum.csv")),
    )?;
    let m = memristance_of(netlist, "m1").expect("differentiator has M1");
    let c = capacitance_of(netlist, "c1").expect("differentiator has C1");
    let (amplitude, period) = square_drive_of(netlist, "v1").expect("differentiator has V1");
    // Integrate the output over a quarter period after each edge of the
    // second and later drive periods (the first period carries the start-up
    // transient).
    let window = period / 4.0;
    let mut areas = Vec::new();
    for k in 1..3 {
        let rising = k as f64 * period;
        let falling = rising + period / 2.0;
        areas.push(integrate_time_window(&wave.t, vout, rising, rising + window));
        areas.push(integrate_time_window(&wave.t, vout, falling, falling + window));
    }
    let mean_abs = areas.iter().map(|a| a.abs()).sum::<f64>() / areas.len() as f64;
    let predicted = m * c * 2.0 * amplitude;
    println!(
        "differentiator: mean |spike area| = {:.4e} V*s (predicted MC*dV = {:.4e} V*s, deviation {:+.2}%)",
        mean_abs,
        predicted,
        100.0 * (mean_abs / predicted - 1.0)
    );
    Ok(())
}
