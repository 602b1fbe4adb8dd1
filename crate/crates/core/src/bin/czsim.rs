//! Command-line front end: spectrum queries, chi12 sweeps, pulse calibration,
//! randomized benchmarking, error budgets and flux-crosstalk estimates.
//!
//! All outputs embed the sha256 of the resolved configuration, the RNG seed
//! and the crate version, and are byte-identical across runs with the same
//! inputs.

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use czsim::budget::{
    budget_report, dephasing_error, effective_rates, nonadiabatic_error, relaxation_error,
    GATE_SPACING_NS,
};
use czsim::calibration::{calibrate_cz, compensation_unitary, CalibrationOptions};
use czsim::device::DeviceParams;
use czsim::dynamics::{
    channel_from_pulse, propagate_computational, IdleFrame, NoiseModel, PropagationOptions,
    PulseShape, QuantumChannel,
};
use czsim::rb::{
    analyze_interleaved, bootstrap_cz_uncertainty, fit_rb, run_rb, CliffordGroup, GateSet,
    RbConfig,
};
use czsim::spectrum::{chi12_spectral, crosstalk_sensitivity, labeled_manifold, min_gap, sweep_chi};
use czsim::Error as CzError;

#[derive(Parser)]
#[command(name = "czsim", version, about = "Adiabatic CZ gate simulator and calibration toolkit")]
struct Cli {
    /// JSON configuration file (device, noise, pulse). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// RNG seed for every stochastic step.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Rayon worker threads (0 = automatic).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Override the per-mode truncation dimension.
    #[arg(long, global = true)]
    levels: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Labeled one- and two-excitation spectra and chi12 at one coupler frequency.
    Spectrum(SpectrumArgs),
    /// chi12 versus coupler frequency, CSV.
    ChiSweep(ChiSweepArgs),
    /// Calibrate the flux amplitude of a half-sine CZ pulse.
    Calibrate(CalibrateArgs),
    /// Reference and CZ-interleaved randomized benchmarking.
    Rb(RbArgs),
    /// Analytic error budget of the calibrated gate.
    ErrorBudget(BudgetArgs),
    /// chi12 shift induced by fractional flux crosstalk.
    Crosstalk(CrosstalkArgs),
}

#[derive(Args)]
struct SpectrumArgs {
    /// Coupler frequency, GHz; the idle frequency when omitted.
    #[arg(long)]
    coupler_ghz: Option<f64>,
    /// Also search the minimum |101> gap along a pulse to this flux amplitude.
    #[arg(long)]
    gap_amplitude_phi0: Option<f64>,
}

#[derive(Args)]
struct ChiSweepArgs {
    #[arg(long, default_value_t = 4.7)]
    from_ghz: f64,
    #[arg(long, default_value_t = 7.5)]
    to_ghz: f64,
    #[arg(long, default_value_t = 281)]
    points: usize,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long, default_value_t = 30.0)]
    duration_ns: f64,
    #[arg(long, default_value_t = 0.002)]
    dt_ns: f64,
    /// Conditional-phase tolerance, rad.
    #[arg(long, default_value_t = 1e-4)]
    tolerance_rad: f64,
    /// Also export the pulse waveform to this CSV path.
    #[arg(long)]
    waveform: Option<PathBuf>,
}

#[derive(Args)]
struct RbArgs {
    #[arg(long, default_value_t = 30.0)]
    duration_ns: f64,
    /// Integrator step for the CZ channel extraction.
    #[arg(long, default_value_t = 0.02)]
    dt_ns: f64,
    /// Comma-separated sequence lengths.
    #[arg(long, value_delimiter = ',', default_values_t = vec![1, 3, 6, 10, 16, 24])]
    lengths: Vec<usize>,
    #[arg(long, default_value_t = 12)]
    sequences: usize,
    /// Depolarizing probability per single-qubit gate (r_1q = p/2).
    #[arg(long, default_value_t = 0.0)]
    one_qubit_depolarizing: f64,
    #[arg(long, default_value_t = 100)]
    bootstrap_resamples: usize,
}

#[derive(Args)]
struct BudgetArgs {
    #[arg(long, default_value_t = 30.0)]
    duration_ns: f64,
    #[arg(long, default_value_t = 0.002)]
    dt_ns: f64,
    /// Idle spacing between gates, ns.
    #[arg(long, default_value_t = GATE_SPACING_NS)]
    spacing_ns: f64,
    /// Measured total CZ error to resolve the budget against; the sum of the
    /// simulated components when omitted.
    #[arg(long)]
    measured_total: Option<f64>,
}

#[derive(Args)]
struct CrosstalkArgs {
    /// Fractional flux crosstalk of the aggressor amplitude.
    #[arg(long, default_value_t = 1e-3)]
    fraction: f64,
    /// Aggressor pulse amplitude, Phi0; calibrated when omitted.
    #[arg(long)]
    amplitude_phi0: Option<f64>,
    #[arg(long, default_value_t = 30.0)]
    duration_ns: f64,
}

/// Resolved run configuration (file contents merged with defaults).
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunConfig {
    #[serde(default)]
    device: Option<DeviceParams>,
    #[serde(default)]
    noise: Option<NoiseModel>,
    #[serde(default)]
    pulse: Option<PulseShape>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            device: None,
            noise: None,
            pulse: None,
        }
    }
}

#[derive(Serialize)]
struct Meta {
    version: String,
    seed: u64,
    config_sha256: String,
}

#[derive(Serialize)]
struct Report<T: Serialize> {
    meta: Meta,
    result: T,
}

enum CliError {
    Config(String),
    Compute(String),
    Io(String),
}

impl From<CzError> for CliError {
    fn from(e: CzError) -> Self {
        match e {
            CzError::Validation(_) | CzError::InvalidDimension(_) => CliError::Config(e.to_string()),
            _ => CliError::Compute(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        if rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .is_err()
        {
            eprintln!("error: failed to configure {} worker threads", cli.threads);
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Compute(msg)) => {
            eprintln!("computation failed: {msg}");
            ExitCode::from(3)
        }
        Err(CliError::Io(msg)) => {
            eprintln!("io error: {msg}");
            ExitCode::from(4)
        }
    }
}

fn load_config(cli: &Cli) -> Result<(RunConfig, String), CliError> {
    let cfg: RunConfig = match &cli.config {
        None => RunConfig::default(),
        Some(path) => {
            let text = fs::read_to_string(path)?;
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{path:?}: {e}")))?
        }
    };
    let resolved =
        serde_json::to_string(&cfg).map_err(|e| CliError::Config(e.to_string()))?;
    let mut hasher = Sha256::new();
    hasher.update(resolved.as_bytes());
    hasher.update(cli.seed.to_le_bytes());
    if let Some(l) = cli.levels {
        hasher.update(l.to_le_bytes());
    }
    let hash = format!("{:x}", hasher.finalize());
    Ok((cfg, hash))
}

fn device_of(cfg: &RunConfig, cli: &Cli) -> Result<DeviceParams, CliError> {
    let mut params = cfg.device.clone().unwrap_or_default();
    if let Some(levels) = cli.levels {
        params = params.with_levels(levels);
    }
    params.validate()?;
    Ok(params)
}

fn write_output(cli: &Cli, text: &str) -> Result<(), CliError> {
    match &cli.out {
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            if !text.ends_with('\n') {
                stdout.write_all(b"\n")?;
            }
            Ok(())
        }
        Some(path) => {
            fs::write(path, text)?;
            Ok(())
        }
    }
}

fn emit_json<T: Serialize>(cli: &Cli, hash: &str, result: T) -> Result<(), CliError> {
    let report = Report {
        meta: Meta {
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: cli.seed,
            config_sha256: hash.to_string(),
        },
        result,
    };
    let text = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::Compute(e.to_string()))?;
    write_output(cli, &text)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let (cfg, hash) = load_config(cli)?;
    let params = device_of(&cfg, cli)?;
    match &cli.command {
        Command::Spectrum(args) => spectrum_cmd(cli, &cfg, &params, &hash, args),
        Command::ChiSweep(args) => chi_sweep_cmd(cli, &params, &hash, args),
        Command::Calibrate(args) => calibrate_cmd(cli, &params, &hash, args),
        Command::Rb(args) => rb_cmd(cli, &cfg, &params, &hash, args),
        Command::ErrorBudget(args) => budget_cmd(cli, &cfg, &params, &hash, args),
        Command::Crosstalk(args) => crosstalk_cmd(cli, &params, &hash, args),
    }
}

#[derive(Serialize)]
struct LevelOut {
    label: String,
    energy_ghz: f64,
    overlap_sq: f64,
}

#[derive(Serialize)]
struct SpectrumOut {
    coupler_frequency_ghz: f64,
    chi12_ghz: f64,
    chi12_khz: f64,
    one_excitation: Vec<LevelOut>,
    two_excitation: Vec<LevelOut>,
    #[serde(skip_serializing_if = "Option::is_none")]
    min_gap_ghz: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    min_gap_at_ghz: Option<f64>,
}

fn spectrum_cmd(
    cli: &Cli,
    _cfg: &RunConfig,
    params: &DeviceParams,
    hash: &str,
    args: &SpectrumArgs,
) -> Result<(), CliError> {
    let wc = args
        .coupler_ghz
        .unwrap_or_else(|| params.idle_coupler_frequency_ghz());
    let levels_of = |m: czsim::spectrum::LabeledSpectrum| -> Vec<LevelOut> {
        m.levels
            .iter()
            .map(|l| LevelOut {
                label: l.label.to_string(),
                energy_ghz: l.energy_ghz,
                overlap_sq: l.overlap_sq,
            })
            .collect()
    };
    let m1 = labeled_manifold(params, wc, 1, None)?;
    let m2 = labeled_manifold(params, wc, 2, None)?;
    let chi = chi12_spectral(params, wc)?;
    let (mut gap, mut gap_at) = (None, None);
    if let Some(amp) = args.gap_amplitude_phi0 {
        let pulse = PulseShape::new(amp, 30.0).map_err(CliError::from)?;
        let traj = pulse.trajectory(&params.flux_map, 201);
        let g = min_gap(params, &traj)?;
        gap = Some(g.min_gap_ghz);
        gap_at = Some(g.at_frequency_ghz);
    }
    emit_json(
        cli,
        hash,
        SpectrumOut {
            coupler_frequency_ghz: wc,
            chi12_ghz: chi,
            chi12_khz: chi * 1e6,
            one_excitation: levels_of(m1),
            two_excitation: levels_of(m2),
            min_gap_ghz: gap,
            min_gap_at_ghz: gap_at,
        },
    )
}

fn chi_sweep_cmd(
    cli: &Cli,
    params: &DeviceParams,
    hash: &str,
    args: &ChiSweepArgs,
) -> Result<(), CliError> {
    if args.points < 2 || args.to_ghz <= args.from_ghz {
        return Err(CliError::Config(
            "sweep needs at least 2 points and to_ghz > from_ghz".into(),
        ));
    }
    let freqs: Vec<f64> = (0..args.points)
        .map(|k| {
            args.from_ghz
                + (args.to_ghz - args.from_ghz) * k as f64 / (args.points - 1) as f64
        })
        .collect();
    let points = sweep_chi(params, &freqs);
    let mut out = String::new();
    out.push_str(&format!(
        "# czsim {} chi-sweep seed={} config_sha256={}\n",
        env!("CARGO_PKG_VERSION"),
        cli.seed,
        hash
    ));
    out.push_str("coupler_frequency_GHz,chi12_GHz,label_overlap,flags\n");
    for p in &points {
        let chi = p
            .chi12_ghz
            .map(|c| format!("{c:.12e}"))
            .unwrap_or_default();
        out.push_str(&format!(
            "{:.9},{},{:.9},{}\n",
            p.coupler_frequency_ghz, chi, p.label_overlap, p.flags
        ));
    }
    write_output(cli, &out)
}

fn calibrate_cmd(
    cli: &Cli,
    params: &DeviceParams,
    hash: &str,
    args: &CalibrateArgs,
) -> Result<(), CliError> {
    let opts = CalibrationOptions {
        dt_ns: args.dt_ns,
        tolerance_rad: args.tolerance_rad,
        ..Default::default()
    };
    let cal = calibrate_cz(params, args.duration_ns, &opts)?;
    if let Some(path) = &args.waveform {
        let mut csv = String::from("time_ns,flux_phi0,coupler_frequency_GHz\n");
        for s in cal.pulse.waveform(&params.flux_map, 0.05) {
            csv.push_str(&format!(
                "{:.6},{:.9},{:.9}\n",
                s.time_ns, s.flux_phi0, s.coupler_frequency_ghz
            ));
        }
        fs::write(path, csv)?;
    }
    emit_json(cli, hash, cal)
}

#[derive(Serialize)]
struct RbOut {
    reference_points: Vec<czsim::rb::RbPoint>,
    interleaved_points: Vec<czsim::rb::RbPoint>,
    reference_fit: czsim::rb::RbFit,
    interleaved_fit: czsim::rb::RbFit,
    analysis: czsim::rb::InterleavedAnalysis,
    cz_fidelity_uncertainty: f64,
    calibrated_amplitude_phi0: f64,
}

fn rb_cmd(
    cli: &Cli,
    cfg: &RunConfig,
    params: &DeviceParams,
    hash: &str,
    args: &RbArgs,
) -> Result<(), CliError> {
    let cal_opts = CalibrationOptions {
        dt_ns: args.dt_ns.min(0.01),
        ..Default::default()
    };
    let cal = calibrate_cz(params, args.duration_ns, &cal_opts)?;
    let frame = IdleFrame::new(params)?;
    let prop = PropagationOptions {
        dt_ns: args.dt_ns,
        richardson: false,
    };
    let raw = channel_from_pulse(&frame, &cal.pulse, cfg.noise.as_ref(), cli.seed, &prop)?;
    let trace = propagate_computational(&frame, &cal.pulse, &prop)?;
    let comp = QuantumChannel::from_unitary(&compensation_unitary(
        -trace.phase_01_rad,
        -trace.phase_10_rad,
    ))?;
    let cz_channel = comp.compose(&raw)?;
    let gates = GateSet::new(cz_channel, args.one_qubit_depolarizing)?;
    let group = CliffordGroup::new()?;
    let mk = |interleave: bool| RbConfig {
        lengths: args.lengths.clone(),
        sequences_per_length: args.sequences,
        seed: cli.seed,
        interleave_cz: interleave,
    };
    let reference_points = run_rb(&group, &gates, &mk(false))?;
    let interleaved_points = run_rb(&group, &gates, &mk(true))?;
    let reference_fit = fit_rb(&reference_points)?;
    let interleaved_fit = fit_rb(&interleaved_points)?;
    let analysis = analyze_interleaved(&reference_fit, &interleaved_fit);
    let sigma = bootstrap_cz_uncertainty(
        &reference_points,
        &interleaved_points,
        args.bootstrap_resamples,
        cli.seed,
    )?;
    emit_json(
        cli,
        hash,
        RbOut {
            reference_points,
            interleaved_points,
            reference_fit,
            interleaved_fit,
            analysis,
            cz_fidelity_uncertainty: sigma,
            calibrated_amplitude_phi0: cal.pulse.amplitude_phi0,
        },
    )
}

#[derive(Serialize)]
struct BudgetOut {
    effective_rates: czsim::budget::EffectiveRates,
    dephasing: f64,
    relaxation: f64,
    nonadiabatic: f64,
    budget: czsim::budget::ErrorBudget,
    pulse: PulseShape,
}

fn budget_cmd(
    cli: &Cli,
    cfg: &RunConfig,
    params: &DeviceParams,
    hash: &str,
    args: &BudgetArgs,
) -> Result<(), CliError> {
    let noise = cfg.noise.as_ref().ok_or_else(|| {
        CliError::Config("error-budget needs a noise model in the configuration".into())
    })?;
    let cal_opts = CalibrationOptions {
        dt_ns: args.dt_ns,
        ..Default::default()
    };
    let cal = calibrate_cz(params, args.duration_ns, &cal_opts)?;
    let rates = effective_rates(noise, &cal.pulse, params);
    let deph = rates.tphi_q1_eff_us.map_or(0.0, |t| dephasing_error(args.duration_ns, t))
        + rates.tphi_q2_eff_us.map_or(0.0, |t| dephasing_error(args.duration_ns, t));
    let idle_t1 = |m: &Option<czsim::dynamics::RateTable>| {
        m.as_ref()
            .map(|t| t.time_us_at(params.idle_coupler_frequency_ghz()))
    };
    let relax = match (
        rates.t1_q1_eff_us,
        rates.t1_q2_eff_us,
        idle_t1(&noise.q1.t1_us),
        idle_t1(&noise.q2.t1_us),
    ) {
        (Some(e1), Some(e2), Some(i1), Some(i2)) => {
            relaxation_error(args.duration_ns, args.spacing_ns, (e1, e2), (i1, i2))
        }
        _ => 0.0,
    };
    let prop = PropagationOptions {
        dt_ns: args.dt_ns,
        richardson: false,
    };
    let nonad = nonadiabatic_error(params, &cal.pulse, &prop)?;
    let total = args.measured_total.unwrap_or(deph + relax + nonad);
    let budget = budget_report(deph, relax, nonad, total)?;
    emit_json(
        cli,
        hash,
        BudgetOut {
            effective_rates: rates,
            dephasing: deph,
            relaxation: relax,
            nonadiabatic: nonad,
            budget,
            pulse: cal.pulse,
        },
    )
}

#[derive(Serialize)]
struct CrosstalkOut {
    fraction: f64,
    aggressor_amplitude_phi0: f64,
    chi12_shift_ghz: f64,
    chi12_shift_khz: f64,
}

fn crosstalk_cmd(
    cli: &Cli,
    params: &DeviceParams,
    hash: &str,
    args: &CrosstalkArgs,
) -> Result<(), CliError> {
    let amp = match args.amplitude_phi0 {
        Some(a) => a,
        None => {
            let opts = CalibrationOptions {
                dt_ns: 0.01,
                ..Default::default()
            };
            calibrate_cz(params, args.duration_ns, &opts)?.pulse.amplitude_phi0
        }
    };
    let shift = crosstalk_sensitivity(params, 0.0, amp, args.fraction)?;
    emit_json(
        cli,
        hash,
        CrosstalkOut {
            fraction: args.fraction,
            aggressor_amplitude_phi0: amp,
            chi12_shift_ghz: shift,
            chi12_shift_khz: shift * 1e6,
        },
    )
}
