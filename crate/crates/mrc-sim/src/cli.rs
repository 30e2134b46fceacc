//! Command-line surface: argument definitions and the five subcommands
//! (groundstate, describe, run, scan-pulse, analyze).
//!
//! Everything here is deterministic: no RNG, single-threaded numerics, and
//! byte-stable outputs. `MRC_SIM_THREADS` caps process-wide parallelism
//! (currently only the `scan-pulse --jobs` fan-out).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Parser, Subcommand};

use crate::analysis::{
    detect_solitons, measure_slice_sharpness, sound_diagnostic, track_solitons, write_tracks_csv,
    SolitonDetection, SolitonTrack,
};
use crate::config::{load_config, load_sequence, sha256_hex, ResolvedParams, RunManifest, SimConfig};
use crate::dynamics::{Propagator, SnapshotSink, StepperConfig};
use crate::error::{Error, Result};
use crate::grid::{Grid, DEFAULT_MAX_POINTS};
use crate::ground::{derive_scales, measure_z_tf, solve_ground_state, GroundSolverConfig};
use crate::protocol::{run_sequence, Sequence, Stage};
use crate::pulse::{
    pulse_from_dimensionless, single_pulse_fidelity, slice_center_m, slice_thickness_m,
    transfer_profile, GradientSpec, HsPulse,
};
use crate::spf1::{read_spf1, write_spf1};
use crate::spinor::SpinorField;
use crate::units::{DerivedScales, HBAR};

/// Design defaults for the canonical single-soliton pulse: peak Rabi
/// frequency, bandwidth, adiabaticity, truncation, and the slice-thickness
/// to cloud-radius ratio that fixes the gradient.
const DEFAULT_OMEGA0_KHZ: f64 = 300.0;
const DEFAULT_MU: f64 = 3.2;
const DEFAULT_GAMMA_FACTOR: f64 = 5.0;
const DEFAULT_ALPHA: f64 = 0.003;
const SLICE_TO_CLOUD_RATIO: f64 = 1.2;

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

#[derive(Debug, Parser)]
#[command(
    name = "mrc-sim",
    version,
    about = "Magnetic-resonance control of a quasi-1D spin-1 condensate: \
             ground states, adiabatic slice-transfer pulses, soliton engineering.",
    after_help = "Environment: MRC_SIM_THREADS caps process-wide parallelism \
                  (the scan-pulse --jobs fan-out; simulation kernels are \
                  single-threaded and bitwise deterministic)."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Relax the condensate ground state and write it as an SPF1 snapshot.
    Groundstate {
        /// Condensate/run configuration file.
        #[arg(long)]
        config: PathBuf,
        /// Output SPF1 path for the relaxed state.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print all derived quantities for a configuration and pulse design
    /// without running any simulation.
    Describe {
        /// Condensate/run configuration file.
        #[arg(long)]
        config: PathBuf,
        /// Normalized pulse bandwidth mu.
        #[arg(long, default_value_t = DEFAULT_MU)]
        mu: f64,
        /// Adiabaticity Gamma.
        #[arg(long, default_value_t = DEFAULT_GAMMA_FACTOR)]
        gamma_factor: f64,
    },
    /// Execute a sequence: ground state, stages, snapshots, analysis, manifest.
    Run {
        /// Condensate/run configuration file.
        #[arg(long)]
        config: PathBuf,
        /// Sequence file of ordered stage stanzas.
        #[arg(long)]
        sequence: PathBuf,
        /// Output directory (created if absent).
        #[arg(long)]
        out: PathBuf,
        /// Reuse a previously solved ground state (SPF1) instead of relaxing.
        #[arg(long)]
        ground: Option<PathBuf>,
        /// Snapshot cadence in ms.
        #[arg(long, default_value_t = 5.0)]
        snapshot_every_ms: f64,
        /// Assert a named acceptance check on the results (supported: fig2).
        #[arg(long)]
        check: Option<String>,
        /// Flip the sign of every pulse gradient in the sequence.
        #[arg(long)]
        flip_gradients: bool,
    },
    /// Scan the pulse bandwidth at a fixed mu*Gamma product and tabulate
    /// duration, predicted slice thickness, and point transfer fidelity.
    ScanPulse {
        /// Condensate/run configuration file.
        #[arg(long)]
        config: PathBuf,
        /// Bandwidth scan specification `start:stop:count`.
        #[arg(long)]
        mu: String,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        /// Parallel workers for the scan rows (capped by MRC_SIM_THREADS).
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Fixed mu*Gamma product (sets the sweep rate, hence sharpness).
        #[arg(long, default_value_t = DEFAULT_MU * DEFAULT_GAMMA_FACTOR)]
        mu_gamma: f64,
    },
    /// Re-analyze a directory of SPF1 snapshots into a soliton track table.
    Analyze {
        /// Directory containing snap_*.spf1 files (e.g. a run output dir).
        #[arg(long = "in")]
        input: PathBuf,
        /// Ground-state SPF1 used as the density background.
        #[arg(long)]
        ground: PathBuf,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
}

/// Entry point used by the binary.
pub fn run_cli(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Groundstate { config, out } => cmd_groundstate(&config, &out),
        Command::Describe { config, mu, gamma_factor } => cmd_describe(&config, mu, gamma_factor),
        Command::Run {
            config,
            sequence,
            out,
            ground,
            snapshot_every_ms,
            check,
            flip_gradients,
        } => cmd_run(RunArgs {
            config,
            sequence,
            out,
            ground,
            snapshot_every_ms,
            check,
            flip_gradients,
        }),
        Command::ScanPulse { config, mu, out, jobs, mu_gamma } => {
            cmd_scan_pulse(&config, &mu, &out, jobs, mu_gamma)
        }
        Command::Analyze { input, ground, out } => cmd_analyze(&input, &ground, &out),
    }
}

/// Parallelism cap from the environment; absent or empty means no cap.
fn thread_cap() -> Result<usize> {
    match std::env::var("MRC_SIM_THREADS") {
        Ok(raw) if !raw.trim().is_empty() => {
            let n: usize = raw.trim().parse().map_err(|_| {
                Error::Config(format!("MRC_SIM_THREADS must be a positive integer, got `{raw}`"))
            })?;
            if n == 0 {
                return Err(Error::Config("MRC_SIM_THREADS must be at least 1".into()));
            }
            Ok(n)
        }
        _ => Ok(usize::MAX),
    }
}

fn build_propagator(config: &SimConfig) -> Result<(Arc<Grid>, Propagator)> {
    let scales = DerivedScales::analytic(&config.params)?;
    let grid = Arc::new(Grid::from_scales(
        &scales,
        config.grid_points_per_xi,
        config.grid_padding,
        DEFAULT_MAX_POINTS,
    )?);
    let stepper = StepperConfig {
        dt_pulse_s: config.dt_pulse_s,
        dt_free_s: config.dt_free_s,
    };
    let prop = Propagator::new(grid.clone(), config.constants, config.params, stepper)?;
    Ok((grid, prop))
}

fn print_scales(scales: &DerivedScales) {
    match scales.xi_m {
        Some(xi) => println!("xi_nm = {:.4}", xi * 1e9),
        None => println!("xi_nm = unavailable"),
    }
    match scales.c_m_per_s {
        Some(c) => println!("c_mm_per_s = {:.6}", c * 1e3),
        None => println!("c_mm_per_s = unavailable"),
    }
    match scales.t_xi_s {
        Some(t) => println!("t_xi_us = {:.4}", t * 1e6),
        None => println!("t_xi_us = unavailable"),
    }
    println!("z_tf_um = {:.4}", scales.z_tf_m * 1e6);
    println!("mu_chem_hz = {:.4}", scales.mu_chem_j / (TWO_PI * HBAR));
}

fn cmd_groundstate(config_path: &Path, out: &Path) -> Result<()> {
    let started = Instant::now();
    let config = load_config(config_path)?;
    let (grid, mut prop) = build_propagator(&config)?;
    let ground = solve_ground_state(&mut prop, &GroundSolverConfig::default())?;
    let scales = derive_scales(&config.params, Some(&ground.state), false)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
    }
    write_spf1(out, &ground.state)?;
    println!("grid_points = {}", grid.num_points);
    println!("dz_nm = {:.4}", grid.dz_m * 1e9);
    println!("iterations = {}", ground.iterations);
    println!("residual_per_ms = {:.3e}", ground.residual_per_ms);
    print_scales(&scales);
    println!("ground_spf1 = {}", out.display());
    println!("wall_time_s = {:.1}", started.elapsed().as_secs_f64());
    Ok(())
}

/// The canonical pulse design for a configuration: the reference-bandwidth
/// pulse fixes the gradient by spreading its sweep over 1.2 cloud radii;
/// the requested (mu, Gamma) pulse is then played against that gradient.
fn design_pulse(
    scales: &DerivedScales,
    gamma_rad_per_s_gauss: f64,
    mu: f64,
    gamma_factor: f64,
) -> Result<HsPulse> {
    let omega0 = TWO_PI * DEFAULT_OMEGA0_KHZ * 1e3;
    let reference = pulse_from_dimensionless(
        omega0,
        DEFAULT_MU,
        DEFAULT_GAMMA_FACTOR,
        DEFAULT_ALPHA,
        DEFAULT_MU * omega0,
        -1.0,
        GradientSpec::SliceThickness {
            delta_z_m: SLICE_TO_CLOUD_RATIO * scales.z_tf_m,
        },
        gamma_rad_per_s_gauss,
    )?;
    pulse_from_dimensionless(
        omega0,
        mu,
        gamma_factor,
        DEFAULT_ALPHA,
        mu * omega0,
        -1.0,
        GradientSpec::Direct {
            dbdz_g_per_cm: reference.dbdz_g_per_cm,
        },
        gamma_rad_per_s_gauss,
    )
}

/// Predict the slice sharpness (10%-90% rise, m) of a pulse from its
/// point-level transfer profile: scan static detunings across the inner
/// transition and map the rise width through the gradient.
fn predicted_sharpness_m(pulse: &HsPulse, gamma_rad_per_s_gauss: f64) -> Result<f64> {
    let delta0 = pulse.delta0_rad_s();
    let window = (TWO_PI * 60e3_f64).min(0.8 * delta0);
    let count = 97usize;
    let detunings: Vec<f64> = (0..count)
        .map(|i| delta0 - window + 2.0 * window * i as f64 / (count - 1) as f64)
        .collect();
    let transfer = transfer_profile(pulse, gamma_rad_per_s_gauss, &detunings, 2e-9)?;
    // Walking outward in detuning the transfer falls from ~1 to ~0; find the
    // 90% then 10% crossings by linear interpolation.
    let crossing = |level: f64| -> Option<f64> {
        for i in 1..count {
            let (a, b) = (transfer[i - 1], transfer[i]);
            if (a >= level) != (b >= level) {
                let frac = (a - level) / (a - b);
                return Some(detunings[i - 1] + frac * (detunings[i] - detunings[i - 1]));
            }
        }
        None
    };
    let (hi, lo) = match (crossing(0.9), crossing(0.1)) {
        (Some(hi), Some(lo)) => (hi, lo),
        _ => {
            return Err(Error::Measurement(
                "transfer profile has no 10%/90% crossings inside the scan window".into(),
            ))
        }
    };
    let slope = gamma_rad_per_s_gauss.abs() * pulse.dbdz_g_per_cm * 100.0;
    Ok((lo - hi).abs() / slope)
}

fn cmd_describe(config_path: &Path, mu: f64, gamma_factor: f64) -> Result<()> {
    let config = load_config(config_path)?;
    let scales = DerivedScales::analytic(&config.params)?;
    print_scales(&scales);
    println!("mu = {mu}");
    println!("gamma_factor = {gamma_factor}");
    println!("alpha = {DEFAULT_ALPHA}");
    println!("omega0_khz = {DEFAULT_OMEGA0_KHZ}");
    let gamma = config.constants.gamma_rad_per_s_gauss;
    let pulse = design_pulse(&scales, gamma, mu, gamma_factor)?;
    println!("t_p_us = {:.4}", pulse.duration_s() * 1e6);
    println!("delta0_khz = {:.4}", pulse.delta0_rad_s() / TWO_PI / 1e3);
    println!("beta_per_s = {:.4}", pulse.beta_per_s());
    println!("dbdz_g_per_cm = {:.4}", pulse.dbdz_g_per_cm);
    println!("delta1_khz = {:.4}", pulse.delta1_rad_s / TWO_PI / 1e3);
    println!("delta_z_um = {:.4}", slice_thickness_m(&pulse, gamma) * 1e6);
    println!("slice_center_um = {:.4}", slice_center_m(&pulse, gamma) * 1e6);
    match scales.xi_m {
        Some(_) => {
            let sharp = predicted_sharpness_m(&pulse, gamma)?;
            println!("delta_z_sharp_pred_um = {:.4}", sharp * 1e6);
            println!(
                "r_predicted = {:.4}",
                slice_thickness_m(&pulse, gamma) / sharp
            );
        }
        None => {
            println!("delta_z_sharp_pred_um = unavailable");
            println!("r_predicted = unavailable");
        }
    }
    Ok(())
}

struct RunArgs {
    config: PathBuf,
    sequence: PathBuf,
    out: PathBuf,
    ground: Option<PathBuf>,
    snapshot_every_ms: f64,
    check: Option<String>,
    flip_gradients: bool,
}

/// Flip the sign of every pulse gradient in place (slice positions are
/// invariant; the spatial sweep direction reverses).
fn flip_sequence_gradients(seq: &mut Sequence) {
    for stage in &mut seq.stages {
        if let Stage::CoupledPulse { pulse, gradient_g_per_cm } = stage {
            pulse.gradient_sign = -pulse.gradient_sign;
            *gradient_g_per_cm = -*gradient_g_per_cm;
        }
    }
}

/// End time of the last stage that is not free evolution: the moment the
/// engineered state is handed over to the trap.
fn protocol_end_time_s(seq: &Sequence) -> Option<f64> {
    let mut t = 0.0;
    let mut end = None;
    for stage in &seq.stages {
        t += stage.duration_s();
        if !matches!(stage, Stage::FreeEvolve { .. }) {
            end = Some(t);
        }
    }
    end
}

/// Everything the post-run analysis produced for one snapshot directory.
struct AnalysisReport {
    /// (time, detections) per frame, time-sorted.
    frames: Vec<(f64, Vec<SolitonDetection>)>,
    /// Per-frame sound amplitude relative to the background peak.
    sound: Vec<f64>,
    /// Trajectories; absent when fewer than two frames exist.
    track: Option<SolitonTrack>,
}

/// Detect, track, and tabulate solitons over a time-sorted list of frames.
fn analyze_frames(
    frames: &[SpinorField],
    ground: &SpinorField,
    xi_m: f64,
    z_tf_m: f64,
    out_csv: &Path,
) -> Result<AnalysisReport> {
    let mut detected: Vec<(f64, Vec<SolitonDetection>)> = Vec::with_capacity(frames.len());
    let mut sound = Vec::with_capacity(frames.len());
    for frame in frames {
        detected.push((frame.time_s, detect_solitons(frame, ground, xi_m, z_tf_m)?));
        sound.push(sound_diagnostic(frame, ground, xi_m, z_tf_m, 5.0 * xi_m)?);
    }
    // Snapshots taken before the projection have nothing to track; seed
    // the association at the first frame with detections.
    let first = detected.iter().position(|(_, d)| !d.is_empty());
    let track = match first {
        Some(i) if detected.len() - i >= 2 => Some(track_solitons(&detected[i..])?),
        _ => None,
    };
    match &track {
        Some(track) => {
            let i = first.unwrap();
            write_tracks_csv(out_csv, track, &detected[i..], &sound[i..])?
        }
        None => {
            // Too few frames to associate: emit the header so downstream
            // tooling still finds a well-formed table.
            fs::write(
                out_csv,
                "time_s,soliton_id,position_um,fwhm_um,depth,phase_step_rad,sound_amp\n",
            )
            .map_err(|e| Error::io(out_csv.display().to_string(), e))?;
        }
    }
    Ok(AnalysisReport { frames: detected, sound, track })
}

/// Load every `snap_*.spf1` in a directory, sorted by simulation time
/// (ties broken by file name, keeping the later file).
fn load_snapshots(dir: &Path) -> Result<Vec<SpinorField>> {
    let tag = || dir.display().to_string();
    let mut named: Vec<(String, PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(tag(), e))? {
        let entry = entry.map_err(|e| Error::io(tag(), e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.starts_with("snap_") && name.ends_with(".spf1") {
            named.push((name, entry.path()));
        }
    }
    if named.is_empty() {
        return Err(Error::Config(format!(
            "no snap_*.spf1 snapshots found in {}",
            dir.display()
        )));
    }
    named.sort();
    let mut frames: Vec<SpinorField> = Vec::with_capacity(named.len());
    for (_, path) in named {
        frames.push(read_spf1(&path)?);
    }
    frames.sort_by(|a, b| a.time_s.total_cmp(&b.time_s));
    // Keep the last frame per timestamp (projection rewrites the boundary).
    frames.dedup_by(|next, kept| {
        if next.time_s == kept.time_s {
            std::mem::swap(next, kept);
            true
        } else {
            false
        }
    });
    Ok(frames)
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let started = Instant::now();
    let config = load_config(&args.config)?;
    let mut sequence = load_sequence(&args.sequence)?;
    if args.flip_gradients {
        flip_sequence_gradients(&mut sequence);
    }
    if !(args.snapshot_every_ms > 0.0) {
        return Err(Error::Config(format!(
            "snapshot cadence must be positive, got {} ms",
            args.snapshot_every_ms
        )));
    }
    let (grid, mut prop) = build_propagator(&config)?;

    let ground = match &args.ground {
        Some(path) => {
            let state = read_spf1(path)?;
            if state.grid.num_points != grid.num_points
                || state.grid.z_min_m != grid.z_min_m
                || state.grid.dz_m != grid.dz_m
            {
                return Err(Error::Validation(format!(
                    "ground state grid ({} pts from {}) does not match the \
                     configuration grid ({} pts)",
                    state.grid.num_points,
                    path.display(),
                    grid.num_points
                )));
            }
            state
        }
        None => solve_ground_state(&mut prop, &GroundSolverConfig::default())?.state,
    };
    let scales = derive_scales(&config.params, Some(&ground), false)?;
    if let Some(t_xi) = scales.t_xi_s {
        sequence.ensure_faster_than_healing(t_xi)?;
    }

    fs::create_dir_all(&args.out).map_err(|e| Error::io(args.out.display().to_string(), e))?;
    let ground_path = args.out.join("ground.spf1");
    write_spf1(&ground_path, &ground)?;

    // Execute, streaming snapshots to disk. Emissions at an already-written
    // timestamp overwrite their file: the last state at a time wins.
    let pulse1_end_s = match sequence.stages.first() {
        Some(Stage::CoupledPulse { pulse, .. }) => Some(pulse.duration_s()),
        _ => None,
    };
    let mut state = ground.clone();
    let mut post_pulse1: Option<SpinorField> = None;
    let mut written: Vec<PathBuf> = Vec::new();
    let mut last_time: Option<f64> = None;
    {
        let out_dir = args.out.clone();
        let mut emit = |s: &SpinorField| -> Result<()> {
            if let Some(t1) = pulse1_end_s {
                if post_pulse1.is_none() && s.time_s >= t1 {
                    post_pulse1 = Some(s.clone());
                }
            }
            if last_time != Some(s.time_s) {
                last_time = Some(s.time_s);
                written.push(out_dir.join(format!("snap_{:05}.spf1", written.len())));
            }
            write_spf1(written.last().expect("snapshot path"), s)
        };
        let mut sink = SnapshotSink {
            every_s: args.snapshot_every_ms * 1e-3,
            emit: &mut emit,
        };
        run_sequence(&mut prop, &mut state, &sequence, Some(&mut sink))?;
    }
    println!("snapshots = {}", written.len());
    println!("final_norm = {:.6}", state.total_norm());

    // Slice sharpness from the state right after the first pulse.
    if let (Some(after), Some(pulse)) = (&post_pulse1, sequence.first_pulse()) {
        let sharp = measure_slice_sharpness(after, pulse, config.constants.gamma_rad_per_s_gauss)?;
        println!("delta_z_um = {:.4}", sharp.delta_z_predicted_m * 1e6);
        match (sharp.delta_z_measured_m, sharp.resolution_measured) {
            (Some(dz), Some(r)) => {
                println!("delta_z_sharp_um = {:.4}", dz * 1e6);
                println!("resolution_measured = {:.4}", r);
            }
            _ => println!("delta_z_sharp_um = unavailable"),
        }
    }

    // Analysis over the snapshots just written (re-read: same code path as
    // offline `analyze`).
    let frames = load_snapshots(&args.out)?;
    let xi_m = scales.xi_m.ok_or_else(|| {
        Error::Config("soliton analysis needs a healing length (N > 0)".into())
    })?;
    let tracks_path = args.out.join("tracks.csv");
    let report = analyze_frames(&frames, &ground, xi_m, scales.z_tf_m, &tracks_path)?;
    if let Some((t, dets)) = report.frames.last() {
        println!("final_time_s = {t:.6}");
        println!("final_detections = {}", dets.len());
        for (i, d) in dets.iter().enumerate() {
            println!(
                "final_soliton_{i} = pos {:+.3} um, fwhm {:.3} um, depth {:.4}, step {} rad",
                d.position_m * 1e6,
                d.fwhm_m * 1e6,
                d.depth,
                d.phase_step_rad
                    .map(|s| format!("{s:+.4}"))
                    .unwrap_or_else(|| "n/a".into()),
            );
        }
    }

    if let Some(name) = &args.check {
        let trap_period_s = 2.0 * std::f64::consts::PI / config.params.omega_z_rad_s;
        run_check(name, &sequence, &report, trap_period_s)?;
        println!("check = {name}: PASS");
    }

    // Manifest last: it checksums everything else.
    let mut output_sha256 = BTreeMap::new();
    for path in written.iter().chain([&ground_path, &tracks_path]) {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        output_sha256.insert(name, sha256_hex(path)?);
    }
    let manifest = RunManifest {
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        command: "run".to_string(),
        config_path: args.config.display().to_string(),
        sequence_path: Some(args.sequence.display().to_string()),
        resolved: ResolvedParams::new(&config, &grid, &scales),
        wall_time_s: started.elapsed().as_secs_f64(),
        output_sha256,
    };
    manifest.write(&args.out.join("manifest.json"))?;
    println!("manifest = {}", args.out.join("manifest.json").display());
    println!("wall_time_s = {:.1}", started.elapsed().as_secs_f64());
    Ok(())
}

/// Named acceptance checks for `run --check`.
///
/// `fig2` asserts the single-soliton outcome: a lone notch whose width at
/// birth matches 1.7 μm ± 15%, low sound at hand-off, and — when the run is
/// long enough — a formed soliton whose phase step averages π ± 0.05 rad
/// once the imprint transient has radiated away (0.05–0.15 s after the
/// protocol), whose depth stays above 0.9, and whose trap-period-averaged
/// position moves by less than 2 μm between the first and second period.
fn run_check(
    name: &str,
    sequence: &Sequence,
    report: &AnalysisReport,
    trap_period_s: f64,
) -> Result<()> {
    if name != "fig2" {
        return Err(Error::Config(format!(
            "unknown check `{name}` (supported: fig2)"
        )));
    }
    let fail = |msg: String| Err(Error::Check(format!("fig2: {msg}")));
    let Some(t0) = protocol_end_time_s(sequence) else {
        return fail("sequence has no pulsed protocol to check".into());
    };
    let Some((_, dets_end)) = report.frames.last() else {
        return fail("no analysis frames".into());
    };
    let t_end = report.frames.last().map(|(t, _)| *t).unwrap_or(0.0);

    // Birth: the first post-protocol frame must contain the notch, about as
    // wide as the design resolution allows.
    let Some(birth_idx) = report.frames.iter().position(|(t, _)| *t >= t0) else {
        return fail("no post-protocol frames".into());
    };
    let Some(birth) = nearest_center(&report.frames[birth_idx].1) else {
        return fail("no notch detected right after the protocol".into());
    };
    let fwhm_um = birth.fwhm_m * 1e6;
    if !(fwhm_um >= 1.7 * 0.85 && fwhm_um <= 1.7 * 1.15) {
        return fail(format!(
            "notch FWHM {fwhm_um:.3} um at the end of the protocol is outside 1.7 um +/- 15%"
        ));
    }
    let amp = report.sound[birth_idx];
    if amp >= 0.1 {
        return fail(format!(
            "sound amplitude {amp:.3} at protocol end exceeds 0.1"
        ));
    }

    if dets_end.len() != 1 {
        return fail(format!(
            "expected exactly 1 soliton at the end, found {}",
            dets_end.len()
        ));
    }

    // Stationarity over two trap periods, when the run covers them.
    let window_end = t0 + 2.0 * trap_period_s;
    if t_end + 1e-9 >= window_end {
        let central: Vec<(f64, &SolitonDetection)> = report
            .frames
            .iter()
            .filter(|(t, _)| *t >= t0 && *t <= window_end)
            .filter_map(|(t, dets)| nearest_center(dets).map(|d| (*t, d)))
            .collect();
        let steps: Vec<f64> = central
            .iter()
            .filter(|(t, _)| *t >= t0 + 0.05 && *t <= t0 + 0.15)
            .filter_map(|(_, d)| d.phase_step_rad.map(f64::abs))
            .collect();
        if steps.len() < 2 {
            return fail("too few frames in 0.05-0.15 s to average the phase step".into());
        }
        let step = steps.iter().sum::<f64>() / steps.len() as f64;
        if (step - std::f64::consts::PI).abs() > 0.05 {
            return fail(format!(
                "formed-soliton phase step {step:.4} rad is not within pi +/- 0.05"
            ));
        }
        let depth_floor = central
            .iter()
            .filter(|(t, _)| *t >= t0 + 0.01)
            .map(|(_, d)| d.depth)
            .fold(f64::INFINITY, f64::min);
        if !(depth_floor > 0.9) {
            return fail(format!("soliton depth fell to {depth_floor:.4} (limit > 0.9)"));
        }
        let period_mean = |lo: f64, hi: f64| {
            let (mut sum, mut count) = (0.0f64, 0usize);
            for (t, d) in &central {
                if *t >= lo && *t < hi {
                    sum += d.position_m;
                    count += 1;
                }
            }
            (count > 0).then(|| sum / count as f64)
        };
        let first = period_mean(t0, t0 + trap_period_s);
        let second = period_mean(t0 + trap_period_s, window_end);
        match (first, second) {
            (Some(a), Some(b)) if (b - a).abs() < 2e-6 => {}
            (Some(a), Some(b)) => {
                return fail(format!(
                    "soliton drifted {:+.2} um between trap periods (limit 2 um)",
                    (b - a) * 1e6
                ))
            }
            _ => return fail("a trap period contains no detections".into()),
        }
    }
    Ok(())
}

/// The detection closest to the trap center, if any.
fn nearest_center(dets: &[SolitonDetection]) -> Option<&SolitonDetection> {
    dets.iter().min_by(|a, b| {
        a.position_m
            .abs()
            .partial_cmp(&b.position_m.abs())
            .unwrap()
    })
}

/// Parse a `start:stop:count` scan specification.
fn parse_scan_spec(spec: &str) -> Result<(f64, f64, usize)> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::Config(format!(
            "scan specification must be start:stop:count, got `{spec}`"
        )));
    }
    let start: f64 = parts[0]
        .parse()
        .map_err(|_| Error::Config(format!("bad scan start `{}`", parts[0])))?;
    let stop: f64 = parts[1]
        .parse()
        .map_err(|_| Error::Config(format!("bad scan stop `{}`", parts[1])))?;
    let count: usize = parts[2]
        .parse()
        .map_err(|_| Error::Config(format!("bad scan count `{}`", parts[2])))?;
    if !(start > 0.0) || !(stop >= start) || count == 0 {
        return Err(Error::Config(format!(
            "scan needs 0 < start <= stop and count >= 1, got `{spec}`"
        )));
    }
    Ok((start, stop, count))
}

fn linspace(start: f64, stop: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![start];
    }
    (0..count)
        .map(|i| start + (stop - start) * i as f64 / (count - 1) as f64)
        .collect()
}

fn cmd_scan_pulse(
    config_path: &Path,
    mu_spec: &str,
    out: &Path,
    jobs: usize,
    mu_gamma: f64,
) -> Result<()> {
    let config = load_config(config_path)?;
    if !(mu_gamma > 0.0) {
        return Err(Error::Config(format!("mu_gamma must be positive, got {mu_gamma}")));
    }
    let (start, stop, count) = parse_scan_spec(mu_spec)?;
    let scales = DerivedScales::analytic(&config.params)?;
    let gamma = config.constants.gamma_rad_per_s_gauss;
    let mus = linspace(start, stop, count);
    let pulses: Vec<HsPulse> = mus
        .iter()
        .map(|&mu| design_pulse(&scales, gamma, mu, mu_gamma / mu))
        .collect::<Result<_>>()?;

    let workers = jobs.clamp(1, thread_cap()?).min(count);
    let mut fidelities = vec![0.0f64; count];
    if workers <= 1 {
        for (slot, pulse) in fidelities.iter_mut().zip(&pulses) {
            *slot = point_fidelity_at_center(pulse, gamma)?;
        }
    } else {
        let chunk = count.div_ceil(workers);
        let results: Vec<Result<Vec<f64>>> = std::thread::scope(|scope| {
            let handles: Vec<_> = pulses
                .chunks(chunk)
                .map(|batch| {
                    scope.spawn(move || {
                        batch
                            .iter()
                            .map(|pulse| point_fidelity_at_center(pulse, gamma))
                            .collect()
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("scan worker panicked")).collect()
        });
        let mut idx = 0;
        for batch in results {
            for value in batch? {
                fidelities[idx] = value;
                idx += 1;
            }
        }
    }

    let mut csv = String::from("mu,Gamma,t_p_us,delta_z_predicted_um,fidelity\n");
    for ((mu, pulse), fidelity) in mus.iter().zip(&pulses).zip(&fidelities) {
        use std::fmt::Write as _;
        let _ = writeln!(
            csv,
            "{mu:.6},{:.6},{:.4},{:.4},{:.8}",
            mu_gamma / mu,
            pulse.duration_s() * 1e6,
            slice_thickness_m(pulse, gamma) * 1e6,
            fidelity
        );
    }
    fs::write(out, csv).map_err(|e| Error::io(out.display().to_string(), e))?;
    println!("rows = {count}");
    println!("scan_csv = {}", out.display());
    Ok(())
}

/// Transfer fidelity at the slice center, where the static Zeeman shift
/// exactly cancels the pulse's detuning offset.
fn point_fidelity_at_center(pulse: &HsPulse, gamma_rad_per_s_gauss: f64) -> Result<f64> {
    let offset = crate::pulse::field_offset_rad_s(pulse, gamma_rad_per_s_gauss);
    single_pulse_fidelity(pulse, gamma_rad_per_s_gauss, offset, 1e-9)
}

fn cmd_analyze(input: &Path, ground_path: &Path, out: &Path) -> Result<()> {
    let ground = read_spf1(ground_path)?;
    let frames = load_snapshots(input)?;
    for frame in &frames {
        if frame.grid.num_points != ground.grid.num_points
            || frame.grid.z_min_m != ground.grid.z_min_m
            || frame.grid.dz_m != ground.grid.dz_m
        {
            return Err(Error::Validation(
                "snapshot grid does not match the ground-state grid".into(),
            ));
        }
    }
    let z_tf_m = measure_z_tf(&ground.grid, &ground)?;
    // The healing length is not recoverable from amplitudes alone; prefer the
    // run manifest, and fall back to the grid's resolution contract (dz <= xi/4).
    let xi_m = match RunManifest::parse(
        &fs::read_to_string(input.join("manifest.json")).unwrap_or_default(),
    ) {
        Ok(manifest) => manifest.resolved.xi_m,
        Err(_) => None,
    }
    .unwrap_or(4.0 * ground.grid.dz_m);
    println!("xi_um = {:.4}", xi_m * 1e6);
    println!("z_tf_um = {:.4}", z_tf_m * 1e6);
    let report = analyze_frames(&frames, &ground, xi_m, z_tf_m, out)?;
    println!("frames = {}", report.frames.len());
    println!(
        "trajectories = {}",
        report.track.as_ref().map_or(0, |t| t.positions_m.len())
    );
    println!("tracks_csv = {}", out.display());
    Ok(())
}
