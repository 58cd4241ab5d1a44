//! The `ququart` command-line tool.
//!
//! Exit codes: 0 success, 1 domain failure (incomplete protocol, no counts,
//! reconstruction did not converge), 2 usage or input error.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::formats::{self, GridMetadata};
use crate::optics::{prepare_product_state, DispersionModel};
use crate::protocol::{instrument_matrix, protocol_completeness, ProtocolSpec, Schedule, Wavelengths};
use crate::reconstruction::{loss_distribution, mle_reconstruct, MleOptions};
use crate::scan::{
    find_optimum, scan_info_loss, scan_ratio, AxisRange, LossScanParams, ProtocolTemplate, ScanKind,
    DEFAULT_LOSS_STEP_MM, DEFAULT_LOSS_TRIALS,
};
use crate::simulation::{run_virtual_experiment, subtract_accidentals};
use crate::states::PureQuquart;

/// Optimal plate pair used when a command needs plates and none are given.
pub const DEFAULT_PLATES_MM: (f64, f64) = (0.988, 0.836);
/// Thickness of the state-preparation plate, mm.
pub const PREPARATION_PLATE_MM: f64 = 0.441;
pub const DEFAULT_EVENTS: u64 = 32_000;

#[derive(Debug, Parser)]
#[command(name = "ququart", version, about = "Polarization-ququart tomography protocol design and reconstruction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a protocol and its completeness report.
    Protocol(ProtocolArgs),
    /// Scan the completeness ratio or information loss over plate thicknesses.
    Scan(ScanArgs),
    /// Run a virtual experiment and write the counts.
    Simulate(SimulateArgs),
    /// Maximum-likelihood reconstruction from a counts file.
    Reconstruct(ReconstructArgs),
}

#[derive(Debug, Args, Clone, Default)]
pub struct SharedArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads (results do not depend on this).
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct PlateArgs {
    /// Thickness of plate Wp1 (met first by the light), mm.
    #[arg(long = "plate1")]
    pub plate1_mm: Option<f64>,
    /// Thickness of plate Wp2, mm.
    #[arg(long = "plate2")]
    pub plate2_mm: Option<f64>,
    #[arg(long = "lambda-s")]
    pub lambda_s_nm: Option<f64>,
    #[arg(long = "lambda-i")]
    pub lambda_i_nm: Option<f64>,
    /// Replace quartz dispersion by a constant birefringence.
    #[arg(long = "delta-n")]
    pub delta_n: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ProtocolArgs {
    #[command(flatten)]
    pub shared: SharedArgs,
    #[command(flatten)]
    pub plates: PlateArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KindArg {
    Ratio,
    Loss,
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    #[command(flatten)]
    pub shared: SharedArgs,
    #[command(flatten)]
    pub plates: PlateArgs,
    #[arg(long, value_enum)]
    pub kind: Option<KindArg>,
    #[arg(long)]
    pub h1_min: Option<f64>,
    #[arg(long)]
    pub h1_max: Option<f64>,
    #[arg(long)]
    pub h2_min: Option<f64>,
    #[arg(long)]
    pub h2_max: Option<f64>,
    /// Thickness step for both axes, mm.
    #[arg(long)]
    pub step: Option<f64>,
    /// Expected events per virtual experiment (loss scans).
    #[arg(long)]
    pub events: Option<u64>,
    /// Reconstructions per cell (loss scans).
    #[arg(long)]
    pub trials: Option<usize>,
    #[command(flatten)]
    pub state: StateArgs,
}

#[derive(Debug, Args, Clone, Default)]
pub struct StateArgs {
    /// True state as `re,im;re,im;re,im;re,im` in HH,HV,VH,VV order.
    #[arg(long)]
    pub state: Option<String>,
    /// Prepare the true state by rotating the preparation plate to this angle, degrees.
    #[arg(long, allow_hyphen_values = true)]
    pub prepare_alpha: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub shared: SharedArgs,
    #[command(flatten)]
    pub plates: PlateArgs,
    /// Protocol JSON to measure with (instead of plate flags).
    #[arg(long)]
    pub protocol: Option<PathBuf>,
    #[command(flatten)]
    pub state: StateArgs,
    #[arg(long)]
    pub events: Option<u64>,
    /// Also run this many independent trials and write the loss distribution.
    #[arg(long)]
    pub trials: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    #[command(flatten)]
    pub shared: SharedArgs,
    #[command(flatten)]
    pub plates: PlateArgs,
    /// Protocol JSON; defaults to protocol.json next to the counts file.
    #[arg(long)]
    pub protocol: Option<PathBuf>,
    #[arg(long)]
    pub counts: Option<PathBuf>,
    /// Reference state `re,im;re,im;re,im;re,im` for a fidelity report.
    #[arg(long)]
    pub reference: Option<String>,
    /// Reference state prepared with the preparation plate at this angle, degrees.
    #[arg(long, allow_hyphen_values = true)]
    pub reference_alpha: Option<f64>,
    /// Singles rate of detector 1, 1/s (enables accidental subtraction).
    #[arg(long)]
    pub singles1: Option<f64>,
    #[arg(long)]
    pub singles2: Option<f64>,
    /// Coincidence window, ns.
    #[arg(long)]
    pub window_ns: Option<f64>,
    /// Exposure per setting, s.
    #[arg(long)]
    pub exposure_s: Option<f64>,
}

/// Contents of a `--config` file. Every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub plate1_mm: Option<f64>,
    pub plate2_mm: Option<f64>,
    pub lambda_s_nm: Option<f64>,
    pub lambda_i_nm: Option<f64>,
    pub dispersion: Option<DispersionModel>,
    pub schedule: Option<Schedule>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub kind: Option<KindArg>,
    pub h1_min: Option<f64>,
    pub h1_max: Option<f64>,
    pub h2_min: Option<f64>,
    pub h2_max: Option<f64>,
    pub step: Option<f64>,
    pub events: Option<u64>,
    pub trials: Option<usize>,
    pub state: Option<PureQuquart>,
    pub prepare_alpha_deg: Option<f64>,
    pub protocol: Option<PathBuf>,
    pub counts: Option<PathBuf>,
    pub reference: Option<PureQuquart>,
    pub reference_alpha_deg: Option<f64>,
    pub singles1: Option<f64>,
    pub singles2: Option<f64>,
    pub window_ns: Option<f64>,
    pub exposure_s: Option<f64>,
}

/// A failed command: process exit code plus message.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    fn domain(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NoCounts | Error::DegenerateState => 1,
            _ => 2,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn load_config(path: Option<&Path>) -> CliResult<ConfigFile> {
    match path {
        None => Ok(ConfigFile::default()),
        Some(p) => formats::read_json(p).map_err(|e| CliError::usage(format!("config {}: {e}", p.display()))),
    }
}

fn log_resolved<T: Serialize>(command: &str, resolved: &T) {
    match serde_json::to_string(resolved) {
        Ok(json) => log::info!("{command}: resolved config {json}"),
        Err(e) => log::warn!("{command}: could not serialize resolved config: {e}"),
    }
}

/// Parse `re,im;re,im;re,im;re,im`.
pub fn parse_state(text: &str) -> CliResult<PureQuquart> {
    let bad = || CliError::usage(format!("malformed state {text:?}; expected re,im;re,im;re,im;re,im"));
    let parts: Vec<&str> = text.split(';').map(str::trim).collect();
    if parts.len() != 4 {
        return Err(bad());
    }
    let mut pairs = [(0.0, 0.0); 4];
    for (dst, part) in pairs.iter_mut().zip(parts) {
        let nums: Vec<f64> = part
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| bad())?;
        match nums.as_slice() {
            [re] => *dst = (*re, 0.0),
            [re, im] => *dst = (*re, *im),
            _ => return Err(bad()),
        }
        if !dst.0.is_finite() || !dst.1.is_finite() {
            return Err(bad());
        }
    }
    PureQuquart::from_pairs(pairs).map_err(|e| CliError::usage(format!("state {text:?}: {e}")))
}

#[derive(Debug, Clone, Serialize)]
struct ResolvedShared {
    seed: u64,
    out: PathBuf,
}

fn resolve_shared(shared: &SharedArgs, cfg: &ConfigFile) -> ResolvedShared {
    ResolvedShared {
        seed: shared.seed.or(cfg.seed).unwrap_or(0),
        out: shared.out.clone().or(cfg.out.clone()).unwrap_or_else(|| PathBuf::from(".")),
    }
}

fn resolve_template(plates: &PlateArgs, cfg: &ConfigFile) -> CliResult<ProtocolTemplate> {
    let dispersion = match plates.delta_n {
        Some(delta_n) => DispersionModel::FixedDeltaN { delta_n },
        None => cfg.dispersion.unwrap_or_default(),
    };
    Ok(ProtocolTemplate {
        schedule: cfg.schedule.clone().unwrap_or(Schedule::Standard144),
        wavelengths: Wavelengths {
            signal_nm: plates.lambda_s_nm.or(cfg.lambda_s_nm).unwrap_or(crate::optics::SIGNAL_NM),
            idler_nm: plates.lambda_i_nm.or(cfg.lambda_i_nm).unwrap_or(crate::optics::IDLER_NM),
        },
        dispersion,
    })
}

fn resolve_spec(plates: &PlateArgs, cfg: &ConfigFile, default: Option<(f64, f64)>) -> CliResult<ProtocolSpec> {
    let template = resolve_template(plates, cfg)?;
    let h1 = plates.plate1_mm.or(cfg.plate1_mm).or(default.map(|d| d.0));
    let h2 = plates.plate2_mm.or(cfg.plate2_mm).or(default.map(|d| d.1));
    match (h1, h2) {
        (Some(h1), Some(h2)) => Ok(template.spec(h1, h2)?),
        _ => Err(CliError::usage(
            "plate thicknesses required: pass --plate1 <mm> and --plate2 <mm> (or plate1_mm/plate2_mm in --config)",
        )),
    }
}

fn resolve_state(
    inline: Option<&str>,
    alpha_deg: Option<f64>,
    cfg_state: Option<PureQuquart>,
    cfg_alpha: Option<f64>,
    template: &ProtocolTemplate,
) -> CliResult<Option<PureQuquart>> {
    if let Some(text) = inline {
        return parse_state(text).map(Some);
    }
    let prepare = |alpha: f64| -> CliResult<PureQuquart> {
        if !alpha.is_finite() {
            return Err(CliError::usage("preparation angle must be finite"));
        }
        Ok(prepare_product_state(
            PREPARATION_PLATE_MM,
            alpha.to_radians(),
            template.wavelengths.signal_nm,
            template.wavelengths.idler_nm,
            &template.dispersion,
        )?)
    };
    if let Some(alpha) = alpha_deg {
        return prepare(alpha).map(Some);
    }
    if let Some(s) = cfg_state {
        return Ok(Some(s));
    }
    cfg_alpha.map(prepare).transpose()
}

fn ensure_out(out: &Path) -> CliResult<()> {
    std::fs::create_dir_all(out).map_err(|e| CliError::usage(format!("output dir {}: {e}", out.display())))
}

/// Run a parsed command inside a thread pool of the requested size.
pub fn run(cli: Cli) -> CliResult<()> {
    let threads = match &cli.command {
        Command::Protocol(a) => a.shared.threads,
        Command::Scan(a) => a.shared.threads,
        Command::Simulate(a) => a.shared.threads,
        Command::Reconstruct(a) => a.shared.threads,
    };
    let config_threads = {
        let shared = match &cli.command {
            Command::Protocol(a) => &a.shared,
            Command::Scan(a) => &a.shared,
            Command::Simulate(a) => &a.shared,
            Command::Reconstruct(a) => &a.shared,
        };
        load_config(shared.config.as_deref())?.threads
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads.or(config_threads) {
        if n == 0 {
            return Err(CliError::usage("--threads must be >= 1"));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::usage(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Protocol(a) => cmd_protocol(&a),
        Command::Scan(a) => cmd_scan(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Reconstruct(a) => cmd_reconstruct(&a),
    })
}

pub fn cmd_protocol(args: &ProtocolArgs) -> CliResult<()> {
    let cfg = load_config(args.shared.config.as_deref())?;
    let shared = resolve_shared(&args.shared, &cfg);
    let spec = resolve_spec(&args.plates, &cfg, None)?;
    log_resolved("protocol", &serde_json::json!({ "shared": shared, "protocol": spec }));
    let report = protocol_completeness(&spec)?;
    ensure_out(&shared.out)?;
    formats::write_json(&shared.out.join("protocol.json"), &spec)?;
    formats::write_text(&shared.out.join("completeness.csv"), &formats::completeness_csv(&report))?;
    println!("rank={} ratio={} complete={}", report.rank, report.ratio, report.complete);
    if report.complete {
        Ok(())
    } else {
        Err(CliError::domain(format!(
            "protocol is incomplete: rank {} < 16",
            report.rank
        )))
    }
}

pub fn cmd_scan(args: &ScanArgs) -> CliResult<()> {
    let cfg = load_config(args.shared.config.as_deref())?;
    let shared = resolve_shared(&args.shared, &cfg);
    let template = resolve_template(&args.plates, &cfg)?;
    let kind = args.kind.or(cfg.kind).unwrap_or(KindArg::Ratio);
    let default_step = match kind {
        KindArg::Ratio => 0.002,
        KindArg::Loss => DEFAULT_LOSS_STEP_MM,
    };
    let step = args.step.or(cfg.step).unwrap_or(default_step);
    let h1 = AxisRange::new(
        args.h1_min.or(cfg.h1_min).unwrap_or(0.8),
        args.h1_max.or(cfg.h1_max).unwrap_or(1.0),
        step,
    )?;
    let h2 = AxisRange::new(
        args.h2_min.or(cfg.h2_min).unwrap_or(0.5),
        args.h2_max.or(cfg.h2_max).unwrap_or(1.0),
        step,
    )?;
    if !(h1.min > 0.0 && h2.min > 0.0 && h1.max < 100.0 && h2.max < 100.0) {
        return Err(CliError::usage("thickness ranges must lie in (0, 100) mm"));
    }
    let grid = match kind {
        KindArg::Ratio => {
            log_resolved(
                "scan",
                &serde_json::json!({ "shared": shared, "kind": kind, "h1": h1, "h2": h2, "template": template }),
            );
            scan_ratio(h1, h2, &template)?
        }
        KindArg::Loss => {
            let events = args.events.or(cfg.events).unwrap_or(DEFAULT_EVENTS);
            let trials = args.trials.or(cfg.trials).unwrap_or(DEFAULT_LOSS_TRIALS);
            if events == 0 || trials == 0 {
                return Err(CliError::usage("--events and --trials must be positive"));
            }
            let state = resolve_state(
                args.state.state.as_deref(),
                args.state.prepare_alpha,
                cfg.state,
                cfg.prepare_alpha_deg,
                &template,
            )?
            .unwrap_or(PureQuquart::basis(3));
            let params = LossScanParams {
                true_state: state,
                total_events: events,
                n_trials: trials,
                seed: shared.seed,
            };
            log_resolved(
                "scan",
                &serde_json::json!({
                    "shared": shared, "kind": kind, "h1": h1, "h2": h2,
                    "template": template, "loss": params
                }),
            );
            scan_info_loss(h1, h2, &template, &params)?
        }
    };
    let optimum = find_optimum(&grid)?;
    ensure_out(&shared.out)?;
    let stem = match grid.kind {
        ScanKind::Ratio => "scan_ratio",
        ScanKind::InfoLoss => "scan_loss",
    };
    formats::write_text(&shared.out.join(format!("{stem}.csv")), &formats::grid_csv(&grid))?;
    formats::write_json(
        &shared.out.join(format!("{stem}.json")),
        &GridMetadata {
            kind: grid.kind,
            h1: grid.h1,
            h2: grid.h2,
            shape: grid.shape(),
            template: &grid.template,
            loss_params: grid.loss_params.as_ref(),
            optimum,
        },
    )?;
    println!(
        "h1={} h2={} value={}",
        formats::sig6(optimum.h1),
        formats::sig6(optimum.h2),
        optimum.value
    );
    Ok(())
}

fn spec_from_file_or_flags(
    protocol: Option<&Path>,
    plates: &PlateArgs,
    cfg: &ConfigFile,
) -> CliResult<ProtocolSpec> {
    match protocol {
        Some(p) => formats::read_json(p).map_err(|e| CliError::usage(format!("protocol {}: {e}", p.display()))),
        None => resolve_spec(plates, cfg, Some(DEFAULT_PLATES_MM)),
    }
}

pub fn cmd_simulate(args: &SimulateArgs) -> CliResult<()> {
    let cfg = load_config(args.shared.config.as_deref())?;
    let shared = resolve_shared(&args.shared, &cfg);
    let protocol_path = args.protocol.clone().or(cfg.protocol.clone());
    let spec = spec_from_file_or_flags(protocol_path.as_deref(), &args.plates, &cfg)?;
    let template = ProtocolTemplate {
        schedule: spec.schedule.clone(),
        wavelengths: spec.wavelengths,
        dispersion: spec.dispersion,
    };
    let state = resolve_state(
        args.state.state.as_deref(),
        args.state.prepare_alpha,
        cfg.state,
        cfg.prepare_alpha_deg,
        &template,
    )?
    .ok_or_else(|| CliError::usage("a true state is required: pass --state or --prepare-alpha"))?;
    let events = args.events.or(cfg.events).unwrap_or(DEFAULT_EVENTS);
    if events == 0 {
        return Err(CliError::usage("--events must be positive"));
    }
    let trials = args.trials.or(cfg.trials);
    log_resolved(
        "simulate",
        &serde_json::json!({
            "shared": shared, "protocol": spec, "state": state, "events": events, "trials": trials
        }),
    );
    let x = instrument_matrix(&spec)?;
    let data = run_virtual_experiment(&state, &x, events, shared.seed)?;
    ensure_out(&shared.out)?;
    formats::write_json(&shared.out.join("protocol.json"), &spec)?;
    formats::write_json(&shared.out.join("true_state.json"), &state)?;
    formats::write_counts(&shared.out.join("counts.csv"), &spec, &data)?;
    println!("settings={} events={}", data.counts.len(), data.sum());
    if let Some(n) = trials {
        if n == 0 {
            return Err(CliError::usage("--trials must be positive"));
        }
        let dist = loss_distribution(&state, &x, events, n, shared.seed)?;
        formats::write_text(&shared.out.join("loss_distribution.csv"), &formats::loss_csv(&dist))?;
        formats::write_json(&shared.out.join("loss_summary.json"), &dist.summary)?;
        println!(
            "median_loss={} q95_loss={} frac_above_0.005={}",
            dist.summary.median, dist.summary.q95, dist.summary.frac_above_0_005
        );
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct ReconstructionReport<'a> {
    #[serde(flatten)]
    result: &'a crate::reconstruction::ReconstructionResult,
    fidelity: Option<f64>,
    reference: Option<PureQuquart>,
}

pub fn cmd_reconstruct(args: &ReconstructArgs) -> CliResult<()> {
    let cfg = load_config(args.shared.config.as_deref())?;
    let shared = resolve_shared(&args.shared, &cfg);
    let counts_path = args
        .counts
        .clone()
        .or(cfg.counts.clone())
        .ok_or_else(|| CliError::usage("--counts <csv> is required"))?;
    let protocol_path = args.protocol.clone().or(cfg.protocol.clone()).or_else(|| {
        let sibling = counts_path.with_file_name("protocol.json");
        sibling.exists().then_some(sibling)
    });
    let spec = spec_from_file_or_flags(protocol_path.as_deref(), &args.plates, &cfg)?;
    let template = ProtocolTemplate {
        schedule: spec.schedule.clone(),
        wavelengths: spec.wavelengths,
        dispersion: spec.dispersion,
    };
    let reference = resolve_state(
        args.reference.as_deref(),
        args.reference_alpha,
        cfg.reference,
        cfg.reference_alpha_deg,
        &template,
    )?;
    let singles = (
        args.singles1.or(cfg.singles1),
        args.singles2.or(cfg.singles2),
    );
    let window_ns = args.window_ns.or(cfg.window_ns).unwrap_or(3.0);
    let exposure_s = args.exposure_s.or(cfg.exposure_s);
    log_resolved(
        "reconstruct",
        &serde_json::json!({
            "shared": shared, "protocol": spec, "counts": counts_path, "reference": reference,
            "singles": singles, "window_ns": window_ns, "exposure_s": exposure_s
        }),
    );
    let mut data = formats::read_counts(&counts_path, &spec)?;
    match (singles, exposure_s) {
        ((Some(n1), Some(n2)), Some(exposure)) => {
            data = subtract_accidentals(&data, n1, n2, window_ns * 1e-9, exposure)?;
        }
        ((None, None), _) => {}
        _ => {
            return Err(CliError::usage(
                "accidental subtraction needs --singles1, --singles2 and --exposure-s",
            ))
        }
    }
    let x = instrument_matrix(&spec)?;
    let opts = MleOptions {
        seed: shared.seed,
        ..MleOptions::default()
    };
    let result = mle_reconstruct(&x, &data.as_f64(), &opts)?;
    let fidelity = reference.map(|r| r.fidelity(&result.estimate));
    ensure_out(&shared.out)?;
    formats::write_json(
        &shared.out.join("reconstruction.json"),
        &ReconstructionReport {
            result: &result,
            fidelity,
            reference,
        },
    )?;
    let amps: Vec<String> = result
        .estimate
        .amplitudes()
        .iter()
        .map(|c| format!("{:.6}{:+.6}i", c.re, c.im))
        .collect();
    println!("estimate=[{}]", amps.join(", "));
    if let Some(f) = fidelity {
        println!("fidelity={f}");
    }
    if !result.converged {
        return Err(CliError::domain(if result.identifiable {
            "reconstruction did not converge".to_string()
        } else {
            "reconstruction did not converge: protocol cannot identify the state".to_string()
        }));
    }
    Ok(())
}
