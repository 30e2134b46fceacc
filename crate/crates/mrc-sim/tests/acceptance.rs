//! Acceptance runs for the headline numbers: pulse design, ground-state
//! scales, transfer fidelity, slice-edge sharpness, the pinned central
//! soliton, both two-soliton recipes, the gradient-ordering sound
//! comparison, and the conservation laws. One test per claim, each
//! asserted at its quoted tolerance; the expensive protocol runs are
//! shared through lazily initialized fixtures.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::OnceLock;
use std::time::Instant;

use mrc_sim::analysis::{
    detect_solitons, measure_slice_sharpness, sound_diagnostic, track_solitons,
    velocity_zero_lag_correlation, SolitonDetection,
};
use mrc_sim::config::{load_config, load_sequence, SimConfig};
use mrc_sim::dynamics::{Propagator, SnapshotSink, StepperConfig};
use mrc_sim::ground::{derive_scales, solve_ground_state, GroundSolverConfig, GroundState};
use mrc_sim::grid::Grid;
use mrc_sim::protocol::{calibrate_phase_wait, run_sequence, Sequence, Stage};
use mrc_sim::pulse::{field_offset_rad_s, gradient_for_slice, single_pulse_fidelity, HsPulse};
use mrc_sim::spin::rk4_point;
use mrc_sim::spinor::SpinorField;
use mrc_sim::units::DerivedScales;
use num_complex::Complex64 as C64;

const TWO_PI: f64 = 2.0 * PI;
/// One axial trap period at f_z = 2.4 Hz.
const TRAP_PERIOD_S: f64 = 1.0 / 2.4;
/// Snapshot cadence for the recorded runs.
const CADENCE_S: f64 = 5e-3;

fn recipe(name: &str) -> String {
    format!("{}/recipes/{}", env!("CARGO_MANIFEST_DIR"), name)
}

// ---------------------------------------------------------------------------
// Shared fixtures
// ---------------------------------------------------------------------------

struct Fixture {
    config: SimConfig,
    ground: GroundState,
    scales: DerivedScales,
    solve_seconds: f64,
}

static FIXTURE: OnceLock<Fixture> = OnceLock::new();

fn fixture() -> &'static Fixture {
    FIXTURE.get_or_init(|| {
        let config = load_config(Path::new(&recipe("rb87.cfg"))).unwrap();
        let analytic = DerivedScales::analytic(&config.params).unwrap();
        let grid = std::sync::Arc::new(
            Grid::from_scales(
                &analytic,
                config.grid_points_per_xi,
                config.grid_padding,
                mrc_sim::grid::DEFAULT_MAX_POINTS,
            )
            .unwrap(),
        );
        let mut prop = propagator_on(grid, &config);
        let started = Instant::now();
        let ground = solve_ground_state(&mut prop, &GroundSolverConfig::default()).unwrap();
        let solve_seconds = started.elapsed().as_secs_f64();
        let scales = derive_scales(&config.params, Some(&ground.state), false).unwrap();
        Fixture {
            config,
            ground,
            scales,
            solve_seconds,
        }
    })
}

fn propagator_on(grid: std::sync::Arc<Grid>, config: &SimConfig) -> Propagator {
    Propagator::new(
        grid,
        config.constants,
        config.params,
        StepperConfig {
            dt_pulse_s: config.dt_pulse_s,
            dt_free_s: config.dt_free_s,
        },
    )
    .unwrap()
}

fn propagator(fx: &Fixture) -> Propagator {
    propagator_on(fx.ground.state.grid.clone(), &fx.config)
}

/// Everything the per-criterion tests read off one recorded protocol run.
struct RecordedRun {
    /// (time, detections, sound amplitude, total norm) at every snapshot.
    frames: Vec<(f64, Vec<SolitonDetection>, f64, f64)>,
    post_pulse1: SpinorField,
    post_pulse2: SpinorField,
    post_project: SpinorField,
    final_state: SpinorField,
    /// Time of the projection (protocol end, start of the free hold).
    t_project_s: f64,
    first_pulse: HsPulse,
}

/// Run a pulse–wait–pulse–project–free sequence from the relaxed ground
/// state, recording detections, sound, and norms at every snapshot.
fn run_recorded(seq: &Sequence) -> RecordedRun {
    let fx = fixture();
    let xi_m = fx.scales.xi_m.unwrap();
    let z_tf_m = fx.scales.z_tf_m;
    assert_eq!(seq.stages.len(), 5, "recorded runs expect the shipped five-stage shape");
    assert!(matches!(seq.stages[0], Stage::CoupledPulse { .. }));
    assert!(matches!(seq.stages[3], Stage::Project { .. }));
    assert!(matches!(seq.stages[4], Stage::FreeEvolve { .. }));
    let first_pulse = *seq.first_pulse().unwrap();

    let mut prop = propagator(fx);
    let mut state = fx.ground.state.clone();
    let mut frames: Vec<(f64, Vec<SolitonDetection>, f64, f64)> = Vec::new();
    let mut keyed: Vec<SpinorField> = Vec::new();
    let mut emit_no = 0usize;
    {
        let ground_state = &fx.ground.state;
        let mut emit = |s: &SpinorField| -> mrc_sim::Result<()> {
            let detections = detect_solitons(s, ground_state, xi_m, z_tf_m)?;
            let sound = sound_diagnostic(s, ground_state, xi_m, z_tf_m, 5.0 * xi_m)?;
            frames.push((s.time_s, detections, sound, s.total_norm()));
            // Emits 1, 3, and 4 end the first pulse, the second pulse, and
            // the projection; the cadence emits of the free hold follow.
            if emit_no == 1 || emit_no == 3 || emit_no == 4 {
                keyed.push(s.clone());
            }
            emit_no += 1;
            Ok(())
        };
        let mut sink = SnapshotSink {
            every_s: CADENCE_S,
            emit: &mut emit,
        };
        run_sequence(&mut prop, &mut state, seq, Some(&mut sink)).unwrap();
    }
    let post_project = keyed.pop().unwrap();
    let post_pulse2 = keyed.pop().unwrap();
    let post_pulse1 = keyed.pop().unwrap();
    let t_project_s = post_project.time_s;
    RecordedRun {
        frames,
        post_pulse1,
        post_pulse2,
        post_project,
        final_state: state,
        t_project_s,
        first_pulse,
    }
}

static SINGLE: OnceLock<RecordedRun> = OnceLock::new();
static DOUBLE_A: OnceLock<RecordedRun> = OnceLock::new();
static DOUBLE_B: OnceLock<RecordedRun> = OnceLock::new();
static FLIPPED: OnceLock<RecordedRun> = OnceLock::new();

fn single_run() -> &'static RecordedRun {
    SINGLE.get_or_init(|| run_recorded(&load_sequence(Path::new(&recipe("single_soliton.seq"))).unwrap()))
}

fn double_a_run() -> &'static RecordedRun {
    DOUBLE_A
        .get_or_init(|| run_recorded(&load_sequence(Path::new(&recipe("double_soliton_a.seq"))).unwrap()))
}

fn double_b_run() -> &'static RecordedRun {
    DOUBLE_B
        .get_or_init(|| run_recorded(&load_sequence(Path::new(&recipe("double_soliton_b.seq"))).unwrap()))
}

/// The single recipe with both gradients inverted — pulse ordering (+, −)
/// instead of (−, +) — and the hold cut to 30 ms for the sound comparison.
fn flipped_run() -> &'static RecordedRun {
    FLIPPED.get_or_init(|| {
        let mut seq = load_sequence(Path::new(&recipe("single_soliton.seq"))).unwrap();
        for stage in seq.stages.iter_mut() {
            match stage {
                Stage::CoupledPulse {
                    pulse,
                    gradient_g_per_cm,
                } => {
                    pulse.gradient_sign = -pulse.gradient_sign;
                    *gradient_g_per_cm = -*gradient_g_per_cm;
                }
                Stage::FreeEvolve { duration_s } => *duration_s = 30e-3,
                _ => {}
            }
        }
        seq.validate().unwrap();
        run_recorded(&seq)
    })
}

/// Frames of the free hold (projection onward), as `track_solitons` input.
fn hold_frames(run: &RecordedRun) -> Vec<(f64, Vec<SolitonDetection>)> {
    run.frames
        .iter()
        .filter(|(t, ..)| *t >= run.t_project_s)
        .map(|(t, d, ..)| (*t, d.clone()))
        .collect()
}

/// Peak sound amplitude over the first 30 ms of the free hold.
fn early_sound(run: &RecordedRun) -> f64 {
    run.frames
        .iter()
        .filter(|(t, ..)| *t >= run.t_project_s && *t <= run.t_project_s + 30e-3)
        .map(|(_, _, s, _)| *s)
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Criteria
// ---------------------------------------------------------------------------

#[test]
fn a01_sweep_duration_from_truncation() {
    let seq = load_sequence(Path::new(&recipe("single_soliton.seq"))).unwrap();
    let t_p = seq.first_pulse().unwrap().duration_s();
    let expect = 110.4e-6;
    println!("a01: t_p = {:.4} us (expect {:.1} us +/- 0.1%)", t_p * 1e6, expect * 1e6);
    assert!(
        ((t_p - expect) / expect).abs() <= 1e-3,
        "pulse duration {t_p:.6e} s is outside 110.4 us +/- 0.1%"
    );
}

#[test]
fn a02_gradient_resolves_the_half_cloud_slice() {
    // A 2pi x 960 kHz sweep spread over the 115.3 um half-cloud slice at
    // gamma = 2pi x 0.70 MHz/G.
    let dbdz = gradient_for_slice(TWO_PI * 960e3, 115.3e-6, TWO_PI * 0.70e6).unwrap();
    let expect = 237.5;
    println!("a02: |dB/dz| = {dbdz:.3} G/cm (expect {expect} +/- 0.5%)");
    assert!(
        ((dbdz - expect) / expect).abs() <= 5e-3,
        "gradient {dbdz:.4} G/cm is outside 237.5 G/cm +/- 0.5%"
    );
}

#[test]
fn a03_ground_state_scales() {
    let fx = fixture();
    let xi = fx.scales.xi_m.unwrap();
    let z_tf = fx.scales.z_tf_m;
    println!(
        "a03: xi = {:.2} nm (expect 504.3 +/- 2%), z_TF = {:.2} um (expect 96.1 +/- 5%), \
         solve = {:.1} s (budget 60 s)",
        xi * 1e9,
        z_tf * 1e6,
        fx.solve_seconds
    );
    assert!(((xi - 504.3e-9) / 504.3e-9).abs() <= 0.02, "healing length {xi:.4e} m off");
    assert!(((z_tf - 96.1e-6) / 96.1e-6).abs() <= 0.05, "cloud radius {z_tf:.4e} m off");
    assert!(
        fx.solve_seconds < 60.0,
        "ground-state relaxation took {:.1} s (budget 60 s)",
        fx.solve_seconds
    );
}

#[test]
fn a04_transfer_fidelity_and_ode_cross_check() {
    let seq = load_sequence(Path::new(&recipe("single_soliton.seq"))).unwrap();
    let pulse = *seq.first_pulse().unwrap();
    let gamma = load_config(Path::new(&recipe("rb87.cfg")))
        .unwrap()
        .constants
        .gamma_rad_per_s_gauss;
    // A point at the slice center sees the sweep exactly on resonance.
    let center = field_offset_rad_s(&pulse, gamma);
    let fidelity = single_pulse_fidelity(&pulse, gamma, center, 1e-9).unwrap();

    // Independent fixed-step RK4 integration of the same two-level-in-three
    // sweep, startng from m = -1.
    let t_p = pulse.duration_s();
    let beta = pulse.beta_per_s();
    let d0 = pulse.delta0_rad_s();
    let omega0 = pulse.omega0_rad_s;
    let coeffs = move |t: f64| -> (f64, f64) {
        let u = beta * (t - 0.5 * t_p);
        (omega0 / u.cosh(), -(d0 * u.tanh()))
    };
    let c0 = [C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0)];
    let oracle = rk4_point(&coeffs, 0.0, t_p, 200_000, c0)[2].norm_sqr();

    println!(
        "a04: fidelity = {fidelity:.6} (expect 0.9994 +/- 0.0005), |rotation - RK4| = {:.2e}",
        (fidelity - oracle).abs()
    );
    assert!(
        (fidelity - 0.9994).abs() <= 5e-4,
        "transfer fidelity {fidelity:.6} outside 0.9994 +/- 0.0005"
    );
    assert!(
        (fidelity - oracle).abs() <= 1e-6,
        "rotation stepper disagrees with the RK4 oracle: {fidelity:.8} vs {oracle:.8}"
    );
}

#[test]
fn a05_slice_edge_sharpness_after_one_pulse() {
    let fx = fixture();
    let run = single_run();
    let sharp = measure_slice_sharpness(
        &run.post_pulse1,
        &run.first_pulse,
        fx.config.constants.gamma_rad_per_s_gauss,
    )
    .unwrap();
    let dz = sharp.delta_z_measured_m.expect("slice edge not measurable");
    let r = sharp.resolution_measured.unwrap_or(f64::NAN);
    println!(
        "a05: edge rise = {:.3} um (expect 1.56 +/- 15%), slice = {:.1} um, \
         resolution ratio = {:.1} (reference ratios 73.9 and 84.8; not asserted)",
        dz * 1e6,
        sharp.delta_z_predicted_m * 1e6,
        r
    );
    assert!(
        ((dz - 1.56e-6) / 1.56e-6).abs() <= 0.15,
        "10-90 edge rise {dz:.4e} m outside 1.56 um +/- 15%"
    );
}

#[test]
fn a06_central_soliton_black_pinned_and_narrow() {
    let run = single_run();
    let t0 = run.t_project_s;
    let window: Vec<(f64, &SolitonDetection)> = run
        .frames
        .iter()
        .filter(|(t, ..)| *t >= t0 && *t <= t0 + 0.83)
        .map(|(t, dets, ..)| {
            let d = dets
                .iter()
                .min_by(|a, b| a.position_m.abs().total_cmp(&b.position_m.abs()))
                .unwrap_or_else(|| panic!("no soliton detected at t = {t:.4} s"));
            (*t, d)
        })
        .collect();
    assert!(window.len() > 150, "expected a dense hold record, got {}", window.len());

    // The notch at birth wobbles around the center, rocked by the residual
    // sound waves; "stationary" is judged on the trap-period-averaged
    // position so the bounded wobble is not mistaken for migration.
    let period_mean = |lo: f64, hi: f64| {
        let vals: Vec<f64> = window
            .iter()
            .filter(|(t, _)| *t >= lo && *t < hi)
            .map(|(_, d)| d.position_m)
            .collect();
        assert!(!vals.is_empty(), "no detections in [{lo:.3}, {hi:.3}] s");
        vals.iter().sum::<f64>() / vals.len() as f64
    };
    let drift = period_mean(t0 + TRAP_PERIOD_S, t0 + 2.0 * TRAP_PERIOD_S)
        - period_mean(t0, t0 + TRAP_PERIOD_S);
    let max_excursion = window
        .iter()
        .map(|(_, d)| d.position_m.abs())
        .fold(0.0, f64::max);
    // The projection leaves the notch shallower than its relaxed form and it
    // heals into the soliton within a few ms, so depth is judged from 10 ms.
    let min_depth = window
        .iter()
        .filter(|(t, _)| *t >= t0 + 10e-3)
        .map(|(_, d)| d.depth)
        .fold(1.0, f64::min);
    // Width as engineered by the protocol: the notch in the first frame
    // after the projection.
    let fwhm = window.first().expect("post-projection frame").1.fwhm_m;
    // Phase step of the formed soliton: the written step relaxes while the
    // imprint surplus radiates away (~50 ms), and at late times the sound
    // bath tilts the phase plateaus, so the step is averaged over the quiet
    // 0.05-0.15 s stretch (one full sound round trip).
    let steps: Vec<f64> = window
        .iter()
        .filter(|(t, _)| *t >= t0 + 0.05 && *t <= t0 + 0.15)
        .filter_map(|(_, d)| d.phase_step_rad.map(f64::abs))
        .collect();
    assert!(steps.len() >= 10, "too few frames to average the phase step");
    let step = steps.iter().sum::<f64>() / steps.len() as f64;

    println!(
        "a06: drift between trap periods = {:+.3} um (|.| < 2; max excursion {:.3} um), \
         min depth = {:.4} (> 0.9 from 10 ms), birth fwhm = {:.3} um (expect 1.7 +/- 15%), \
         formed |step| = {:.4} rad (expect pi +/- 0.05)",
        drift * 1e6,
        max_excursion * 1e6,
        min_depth,
        fwhm * 1e6,
        step
    );
    assert!(
        drift.abs() < 2e-6,
        "soliton drifted {drift:.3e} m between trap periods"
    );
    assert!(min_depth > 0.9, "soliton depth fell to {min_depth:.4}");
    assert!(
        ((fwhm - 1.7e-6) / 1.7e-6).abs() <= 0.15,
        "width at birth {fwhm:.4e} m outside 1.7 um +/- 15%"
    );
    assert!(
        (step - PI).abs() <= 0.05,
        "formed-soliton phase step {step:.4} rad is not pi +/- 0.05"
    );
}

#[test]
fn a07_wait_calibration_hits_the_pi_step() {
    let fx = fixture();
    let seq = load_sequence(Path::new(&recipe("single_soliton.seq"))).unwrap();
    let mut prop = propagator(fx);
    let dphi = calibrate_phase_wait(&mut prop, &fx.ground.state, &seq, 5e-6).unwrap();
    let khz = dphi / TWO_PI / 1e3;
    println!("a07: calibrated wait detuning = {khz:.2} kHz (expect 79.5 +/- 10%)");
    assert!(
        ((khz - 79.5) / 79.5).abs() <= 0.10,
        "calibrated detuning {khz:.3} kHz outside 79.5 kHz +/- 10%"
    );
}

/// Birth positions of a freshly projected pair, sorted left to right.
fn pair_positions(run: &RecordedRun) -> (f64, f64) {
    let birth = run
        .frames
        .iter()
        .find(|(t, ..)| *t >= run.t_project_s)
        .expect("no frame at the projection");
    let dets = &birth.1;
    assert_eq!(
        dets.len(),
        2,
        "expected exactly two notches at birth, found {}",
        dets.len()
    );
    let (mut a, mut b) = (dets[0].position_m, dets[1].position_m);
    if a > b {
        std::mem::swap(&mut a, &mut b);
    }
    (a, b)
}

fn pair_correlation(run: &RecordedRun) -> f64 {
    let frames = hold_frames(run);
    let track = track_solitons(&frames).unwrap();
    velocity_zero_lag_correlation(&track, run.t_project_s + TRAP_PERIOD_S).unwrap()
}

#[test]
fn a08a_wide_pair_birth_positions() {
    let (left, right) = pair_positions(double_a_run());
    println!(
        "a08a: pair born at {:.2} um and {:.2} um (expect -18.2 and 0.0, +/- 1 um)",
        left * 1e6,
        right * 1e6
    );
    assert!((left - (-18.2e-6)).abs() <= 1e-6, "left notch at {left:.3e} m");
    assert!((right - 0.0).abs() <= 1e-6, "right notch at {right:.3e} m");
}

#[test]
fn a08a_wide_pair_anticorrelated() {
    let corr = pair_correlation(double_a_run());
    println!("a08a: velocity correlation over one trap period = {corr:+.3} (expect < 0)");
    assert!(corr < 0.0, "wide pair correlation {corr:+.4} is not negative");
}

#[test]
fn a08b_narrow_pair_birth_positions() {
    let (left, right) = pair_positions(double_b_run());
    println!(
        "a08b: pair born at {:.2} um and {:.2} um (expect 16.9 and 21.4, +/- 1 um)",
        left * 1e6,
        right * 1e6
    );
    assert!((left - 16.9e-6).abs() <= 1e-6, "left notch at {left:.3e} m");
    assert!((right - 21.4e-6).abs() <= 1e-6, "right notch at {right:.3e} m");
}

#[test]
fn a08b_narrow_pair_in_phase() {
    let corr = pair_correlation(double_b_run());
    println!("a08b: velocity correlation over one trap period = {corr:+.3} (expect > 0.8)");
    assert!(corr > 0.8, "narrow pair correlation {corr:+.4} is not above 0.8");
}

#[test]
fn a09_sound_grows_when_gradient_order_flips() {
    let default_sound = early_sound(single_run());
    let flipped_sound = early_sound(flipped_run());
    println!(
        "a09: peak sound within 30 ms — (-,+) order {default_sound:.4}, \
         (+,-) order {flipped_sound:.4} (expect strictly larger)"
    );
    assert!(
        flipped_sound > default_sound,
        "flipped-order sound {flipped_sound:.4} not above default {default_sound:.4}"
    );
}

#[test]
fn a10_conservation_norm_energy_impulse() {
    let fx = fixture();
    let run = single_run();
    let initial_norm = run.frames[0].3;
    let unitary_norm = run.post_pulse2.total_norm();
    let hold_start_norm = run.post_project.total_norm();
    let hold_end_norm = run.final_state.total_norm();
    let norm_drift_pulses = (unitary_norm - initial_norm).abs();
    let norm_drift_hold = (hold_end_norm - hold_start_norm).abs();

    let mut prop = propagator(fx);
    let e0 = prop.energy_per_atom_internal(&run.post_project);
    let e1 = prop.energy_per_atom_internal(&run.final_state);
    let hold_s = run.final_state.time_s - run.post_project.time_s;
    let energy_rate = ((e1 - e0) / e0).abs() / hold_s;

    let p1 = prop.momentum_per_atom_internal(&run.post_pulse1);
    let p2 = prop.momentum_per_atom_internal(&run.post_pulse2);
    let impulse_residual = (p2 / p1).abs();

    println!(
        "a10: norm drift |pulses| = {norm_drift_pulses:.2e}, |hold| = {norm_drift_hold:.2e} \
         (< 1e-9 each); energy drift = {energy_rate:.2e}/s (< 1e-6); \
         net magnetic impulse = {:.2}% of the single-pulse kick (< 5%)",
        impulse_residual * 100.0
    );
    assert!(norm_drift_pulses < 1e-9, "norm drifted {norm_drift_pulses:.3e} through the pulses");
    assert!(norm_drift_hold < 1e-9, "norm drifted {norm_drift_hold:.3e} through the hold");
    assert!(energy_rate < 1e-6, "energy drifted at {energy_rate:.3e}/s during the hold");
    assert!(
        impulse_residual < 0.05,
        "second pulse cancels only part of the kick: residual {:.2}%",
        impulse_residual * 100.0
    );
}
