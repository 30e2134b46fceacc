//! Invariant suites for the stepper and the analysis chain: norm and
//! energy conservation, second-order time-step convergence, projection
//! bookkeeping, global-phase equivariance, determinism, and the
//! imprinted-tanh soliton oracle on the full-size condensate.

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use mrc_sim::analysis::detect_solitons;
use mrc_sim::dynamics::{Propagator, SnapshotSink, StepperConfig};
use mrc_sim::grid::{Grid, DEFAULT_MAX_POINTS};
use mrc_sim::ground::{derive_scales, solve_ground_state, GroundSolverConfig, GroundState};
use mrc_sim::protocol::{run_sequence, Sequence, Stage};
use mrc_sim::pulse::{pulse_from_dimensionless, GradientSpec};
use mrc_sim::spinor::SpinorField;
use mrc_sim::units::{
    CondensateParams, DerivedScales, NonlinearityModel, PhysicalConstants,
    GAMMA_RB87_F1_RAD_PER_S_G,
};
use num_complex::Complex64 as C64;
use proptest::prelude::*;

const TWO_PI: f64 = 2.0 * PI;

// ---------------------------------------------------------------------------
// A small, fast condensate for the randomized invariants: a 10x tighter
// trap shrinks every timescale by an order of magnitude, so whole stages
// run in milliseconds of wall time on a 256-point grid.
// ---------------------------------------------------------------------------

fn toy_params() -> CondensateParams {
    CondensateParams {
        atoms: 1000.0,
        omega_z_rad_s: TWO_PI * 24.0,
        omega_r_rad_s: TWO_PI * 1584.0,
        scattering_length_m: 5.3e-9,
        nonlinearity: NonlinearityModel::EffectiveOneD,
    }
}

fn toy_system() -> (Arc<Grid>, DerivedScales) {
    let params = toy_params();
    let scales = DerivedScales::analytic(&params).unwrap();
    let grid = Arc::new(Grid::from_scales(&scales, 4.0, 1.4, DEFAULT_MAX_POINTS).unwrap());
    (grid, scales)
}

fn toy_propagator(grid: Arc<Grid>) -> Propagator {
    Propagator::new(
        grid,
        PhysicalConstants::default(),
        toy_params(),
        StepperConfig::default(),
    )
    .unwrap()
}

static TOY_GROUND: OnceLock<GroundState> = OnceLock::new();

fn toy_ground() -> &'static GroundState {
    TOY_GROUND.get_or_init(|| {
        let (grid, _) = toy_system();
        let mut prop = toy_propagator(grid);
        solve_ground_state(&mut prop, &GroundSolverConfig::default()).unwrap()
    })
}

/// A coupled pulse against the toy cloud: the slice spans the inner half
/// of the cloud so both edges stay well inside the condensate.
fn toy_pulse(mu: f64, big_gamma: f64, scales: &DerivedScales) -> Stage {
    let omega0 = TWO_PI * 300e3;
    let pulse = pulse_from_dimensionless(
        omega0,
        mu,
        big_gamma,
        0.003,
        mu * omega0,
        -1.0,
        GradientSpec::SliceThickness {
            delta_z_m: scales.z_tf_m,
        },
        GAMMA_RB87_F1_RAD_PER_S_G,
    )
    .unwrap();
    Stage::CoupledPulse {
        gradient_g_per_cm: pulse.signed_gradient_g_per_cm(),
        pulse,
    }
}

fn displaced_ground(z0_m: f64, kick_per_um: f64) -> SpinorField {
    let ground = toy_ground();
    let mut state = ground.state.clone();
    let z: Vec<f64> = state.grid.z_internal().to_vec();
    let z0 = z0_m * 1e6; // internal lengths are microns
    let n = state.comps[0].len();
    let mut shifted = vec![C64::new(0.0, 0.0); n];
    for j in 0..n {
        // Nearest-neighbor shift of the profile plus a linear phase kick.
        let src = z
            .iter()
            .position(|&zz| zz >= z[j] - z0)
            .unwrap_or(n - 1);
        shifted[j] = state.comps[0][src] * C64::from_polar(1.0, kick_per_um * z[j]);
    }
    state.comps[0] = shifted;
    let norm = state.total_norm();
    let scale = 1.0 / norm.sqrt();
    for c in state.comps[0].iter_mut() {
        *c *= scale;
    }
    state
}

fn run_stages(state: &mut SpinorField, stages: Vec<Stage>) {
    let (grid, _) = toy_system();
    let mut prop = toy_propagator(grid);
    let seq = Sequence {
        stages,
        description: "invariant case".into(),
    };
    seq.validate().unwrap();
    run_sequence(&mut prop, state, &seq, None).unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 6,
        failure_persistence: None,
        .. ProptestConfig::default()
    })]

    /// Real-time evolution without projection conserves the norm to 1e-9,
    /// whatever mix of coupled, wait, and free stages runs.
    #[test]
    fn norm_is_conserved_without_projection(
        mu in 0.6f64..1.6,
        big_gamma in 1.0f64..2.2,
        dphi_khz in -80.0f64..80.0,
        hold_ms in 0.2f64..1.5,
    ) {
        let (_, scales) = toy_system();
        let mut state = toy_ground().state.clone();
        let before = state.total_norm();
        run_stages(&mut state, vec![
            toy_pulse(mu, big_gamma, &scales),
            Stage::PhaseWait { dphi_rad_s: TWO_PI * dphi_khz * 1e3, t_phi_s: 5e-6 },
            Stage::FreeEvolve { duration_s: hold_ms * 1e-3 },
        ]);
        let after = state.total_norm();
        prop_assert!(
            (after - before).abs() < 1e-9,
            "norm drifted by {:.3e}", (after - before).abs()
        );
    }

    /// Projection removes exactly the population of the dropped components.
    #[test]
    fn projection_bookkeeping_is_exact(
        mu in 0.6f64..1.6,
        big_gamma in 1.0f64..2.2,
        keep_minus in proptest::bool::ANY,
    ) {
        let (_, scales) = toy_system();
        let mut state = toy_ground().state.clone();
        run_stages(&mut state, vec![toy_pulse(mu, big_gamma, &scales)]);
        let before = state.total_norm();
        let keep: Vec<i32> = if keep_minus { vec![-1] } else { vec![0, 1] };
        let dropped: f64 = [-1i32, 0, 1]
            .iter()
            .filter(|m| !keep.contains(m))
            .map(|&m| state.component_norm((m + 1) as usize))
            .sum();
        state.project(&keep).unwrap();
        let after = state.total_norm();
        prop_assert!(
            (before - dropped - after).abs() < 1e-12,
            "projection bookkeeping off by {:.3e}",
            (before - dropped - after).abs()
        );
    }

    /// A global phase rides through the whole nonlinear evolution.
    #[test]
    fn global_phase_rides_through_evolution(
        phase in 0.0f64..TWO_PI,
        z0_frac in -0.2f64..0.2,
        hold_ms in 0.2f64..1.0,
    ) {
        let (_, scales) = toy_system();
        let z0 = z0_frac * scales.z_tf_m;
        let mut plain = displaced_ground(z0, 0.0);
        let mut rotated = plain.clone();
        for c in rotated.comps[0].iter_mut() {
            *c *= C64::from_polar(1.0, phase);
        }
        let stages = vec![Stage::FreeEvolve { duration_s: hold_ms * 1e-3 }];
        run_stages(&mut plain, stages.clone());
        run_stages(&mut rotated, stages);
        let back = C64::from_polar(1.0, -phase);
        let mut worst = 0.0f64;
        for (a, b) in plain.comps[0].iter().zip(rotated.comps[0].iter()) {
            worst = worst.max((a - b * back).norm());
        }
        prop_assert!(worst < 1e-11, "global phase broke equivariance by {worst:.3e}");
    }

    /// Identical inputs give bitwise-identical outputs: the stepper has no
    /// hidden state across runs.
    #[test]
    fn evolution_is_deterministic(
        mu in 0.6f64..1.6,
        hold_ms in 0.2f64..1.0,
    ) {
        let (_, scales) = toy_system();
        let stages = vec![
            toy_pulse(mu, 1.5, &scales),
            Stage::FreeEvolve { duration_s: hold_ms * 1e-3 },
        ];
        let mut first = toy_ground().state.clone();
        let mut second = first.clone();
        run_stages(&mut first, stages.clone());
        run_stages(&mut second, stages);
        for m in 0..3 {
            for (a, b) in first.comps[m].iter().zip(second.comps[m].iter()) {
                prop_assert!(a == b, "outputs differ bitwise");
            }
        }
    }
}

/// Halving dt shrinks the final-state error fourfold (Strang splitting is
/// second order), judged against a dt/8 reference on a displaced cloud.
#[test]
fn halving_dt_is_second_order() {
    let (grid, scales) = toy_system();
    let initial = displaced_ground(0.1 * scales.z_tf_m, 0.0);
    let hold = Stage::FreeEvolve { duration_s: 0.5e-3 };
    let run_with = |dt_s: f64| -> SpinorField {
        let mut prop = Propagator::new(
            grid.clone(),
            PhysicalConstants::default(),
            toy_params(),
            StepperConfig {
                dt_pulse_s: 2e-9,
                dt_free_s: dt_s,
            },
        )
        .unwrap();
        let mut state = initial.clone();
        let seq = Sequence {
            stages: vec![hold.clone()],
            description: "dt convergence case".into(),
        };
        run_sequence(&mut prop, &mut state, &seq, None).unwrap();
        state
    };
    let reference = run_with(0.25e-6);
    let err = |state: &SpinorField| -> f64 {
        state.comps[0]
            .iter()
            .zip(reference.comps[0].iter())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt()
    };
    let coarse = err(&run_with(2e-6));
    let fine = err(&run_with(1e-6));
    let ratio = coarse / fine;
    println!("dt convergence: err(2us)/err(1us) = {ratio:.2}");
    assert!(
        (3.0..5.5).contains(&ratio),
        "error ratio {ratio:.2} is not the ~4x of a second-order stepper \
         (coarse {coarse:.3e}, fine {fine:.3e})"
    );
}

// ---------------------------------------------------------------------------
// Imprinted-tanh soliton oracle on the full-size condensate: a black
// soliton written directly into the ground state must stay put for two
// trap periods, keep its analytic width, and conserve energy and norm.
// ---------------------------------------------------------------------------

struct TanhHold {
    /// (time, notch position m, notch fwhm m) every 50 ms.
    samples: Vec<(f64, f64, f64)>,
    xi_m: f64,
    energy_start: f64,
    energy_end: f64,
    norm_start: f64,
    norm_end: f64,
    hold_s: f64,
}

static TANH_HOLD: OnceLock<TanhHold> = OnceLock::new();

fn tanh_hold() -> &'static TanhHold {
    TANH_HOLD.get_or_init(|| {
        let params = CondensateParams {
            atoms: 10000.0,
            omega_z_rad_s: TWO_PI * 2.4,
            omega_r_rad_s: TWO_PI * 158.4,
            scattering_length_m: 5.3e-9,
            nonlinearity: NonlinearityModel::EffectiveOneD,
        };
        let analytic = DerivedScales::analytic(&params).unwrap();
        let grid = Arc::new(Grid::from_scales(&analytic, 4.0, 1.4, DEFAULT_MAX_POINTS).unwrap());
        let mk_prop = || {
            Propagator::new(
                grid.clone(),
                PhysicalConstants::default(),
                params,
                StepperConfig::default(),
            )
            .unwrap()
        };
        let mut prop = mk_prop();
        let ground = solve_ground_state(&mut prop, &GroundSolverConfig::default()).unwrap();
        let scales = derive_scales(&params, Some(&ground.state), false).unwrap();
        let xi_m = scales.xi_m.unwrap();
        let z_tf_m = scales.z_tf_m;

        let mut state = ground.state.clone();
        let xi_um = xi_m * 1e6;
        for (c, &z_um) in state.comps[0].iter_mut().zip(state.grid.z_internal().iter()) {
            *c *= (z_um / (2.0f64.sqrt() * xi_um)).tanh();
        }
        let norm_start = state.total_norm();
        let energy_start = prop.energy_per_atom_internal(&state);

        let hold_s = 2.0 / 2.4;
        let mut samples: Vec<(f64, f64, f64)> = Vec::new();
        {
            let ground_state = &ground.state;
            let mut emit = |s: &SpinorField| -> mrc_sim::Result<()> {
                let dets = detect_solitons(s, ground_state, xi_m, z_tf_m)?;
                let d = dets
                    .iter()
                    .min_by(|a, b| a.position_m.abs().total_cmp(&b.position_m.abs()))
                    .expect("imprinted soliton lost");
                samples.push((s.time_s, d.position_m, d.fwhm_m));
                Ok(())
            };
            let mut sink = SnapshotSink {
                every_s: 50e-3,
                emit: &mut emit,
            };
            let seq = Sequence {
                stages: vec![Stage::FreeEvolve { duration_s: hold_s }],
                description: "imprinted-tanh hold".into(),
            };
            run_sequence(&mut prop, &mut state, &seq, Some(&mut sink)).unwrap();
        }
        let energy_end = prop.energy_per_atom_internal(&state);
        TanhHold {
            samples,
            xi_m,
            energy_start,
            energy_end,
            norm_start,
            norm_end: state.total_norm(),
            hold_s,
        }
    })
}

#[test]
fn imprinted_tanh_soliton_stays_put_for_two_trap_periods() {
    let hold = tanh_hold();
    let worst = hold
        .samples
        .iter()
        .map(|(_, z, _)| z.abs())
        .fold(0.0, f64::max);
    println!(
        "tanh soliton: max |z| = {:.3} um over {:.2} s ({} samples)",
        worst * 1e6,
        hold.hold_s,
        hold.samples.len()
    );
    assert!(hold.samples.len() >= 15, "hold record too sparse");
    assert!(worst < 2e-6, "imprinted soliton wandered {worst:.3e} m");
}

#[test]
fn imprinted_tanh_soliton_keeps_its_analytic_width() {
    let hold = tanh_hold();
    let (_, _, fwhm) = *hold.samples.last().unwrap();
    let analytic = 2.49 * hold.xi_m;
    println!(
        "tanh soliton: final fwhm = {:.3} um, 2.49 xi = {:.3} um",
        fwhm * 1e6,
        analytic * 1e6
    );
    assert!(
        ((fwhm - analytic) / analytic).abs() <= 0.10,
        "fwhm {fwhm:.3e} m deviates from 2.49 xi = {analytic:.3e} m by more than 10%"
    );
    assert!(
        ((fwhm - 1.2e-6) / 1.2e-6).abs() <= 0.10,
        "fwhm {fwhm:.3e} m is not the expected 1.2 um black-soliton width +/- 10%"
    );
}

#[test]
fn static_hamiltonian_conserves_energy_and_norm() {
    let hold = tanh_hold();
    let energy_rate = ((hold.energy_end - hold.energy_start) / hold.energy_start).abs() / hold.hold_s;
    let norm_drift = (hold.norm_end - hold.norm_start).abs();
    println!(
        "tanh hold: energy drift = {energy_rate:.2e}/s, norm drift = {norm_drift:.2e} \
         over {:.2} s",
        hold.hold_s
    );
    assert!(energy_rate < 1e-6, "energy drifted at {energy_rate:.3e}/s");
    assert!(norm_drift < 1e-9, "norm drifted by {norm_drift:.3e}");
}
