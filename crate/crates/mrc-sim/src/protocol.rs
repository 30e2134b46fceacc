//! Stage sequencing for the coupled-pulse protocol: the four-stage recipes
//! that engineer one or two dark solitons, the closed-loop phase-wait
//! calibration, and the executor that drives a propagator through a
//! sequence with snapshotting.

use crate::analysis::measure_phase_step;
use crate::dynamics::{Propagator, SnapshotSink, StageDrive};
use crate::error::{Error, Result};
use crate::ground::derive_scales;
use crate::pulse::{slice_edges_m, HsPulse};
use crate::spinor::SpinorField;
use std::f64::consts::PI;

/// One step of a protocol; durations are intrinsic to each variant and
/// stages run back to back in sequence order.
#[derive(Debug, Clone)]
pub enum Stage {
    /// Adiabatic transfer pulse against the given signed gradient (G/cm).
    CoupledPulse {
        pulse: HsPulse,
        gradient_g_per_cm: f64,
    },
    /// Spatially uniform detuning Δφ (rad/s) with the coupling off, for
    /// duration t_φ: the phase-accumulation wait between pulses.
    PhaseWait { dphi_rad_s: f64, t_phi_s: f64 },
    /// Trap + interactions only.
    FreeEvolve { duration_s: f64 },
    /// Zero out every component not in `keep` (magnetic numbers −1, 0, +1).
    /// Instantaneous; the removed norm is not restored.
    Project { keep: Vec<i32> },
}

impl Stage {
    pub fn duration_s(&self) -> f64 {
        match self {
            Stage::CoupledPulse { pulse, .. } => pulse.duration_s(),
            Stage::PhaseWait { t_phi_s, .. } => *t_phi_s,
            Stage::FreeEvolve { duration_s } => *duration_s,
            Stage::Project { .. } => 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Stage::CoupledPulse {
                pulse,
                gradient_g_per_cm,
            } => {
                pulse.validate()?;
                let expected = pulse.signed_gradient_g_per_cm();
                if (gradient_g_per_cm - expected).abs() > 1e-9 * expected.abs() {
                    return Err(Error::Validation(format!(
                        "stage gradient {gradient_g_per_cm} G/cm disagrees with the \
                         pulse's own {expected} G/cm"
                    )));
                }
                Ok(())
            }
            Stage::PhaseWait { dphi_rad_s, t_phi_s } => {
                if !dphi_rad_s.is_finite() {
                    return Err(Error::Validation(format!(
                        "wait detuning must be finite, got {dphi_rad_s}"
                    )));
                }
                if !(*t_phi_s >= 0.0) {
                    return Err(Error::Validation(format!(
                        "wait duration must be non-negative, got {t_phi_s}"
                    )));
                }
                Ok(())
            }
            Stage::FreeEvolve { duration_s } => {
                if !(*duration_s >= 0.0) {
                    return Err(Error::Validation(format!(
                        "free-evolution duration must be non-negative, got {duration_s}"
                    )));
                }
                Ok(())
            }
            Stage::Project { keep } => {
                if keep.is_empty() {
                    return Err(Error::Validation(
                        "projection must keep at least one component".into(),
                    ));
                }
                for &m in keep {
                    if !(-1..=1).contains(&m) {
                        return Err(Error::Validation(format!(
                            "unknown spin component {m} in projection"
                        )));
                    }
                }
                Ok(())
            }
        }
    }
}

/// An ordered list of stages with contiguous, non-overlapping timing.
#[derive(Debug, Clone)]
pub struct Sequence {
    pub stages: Vec<Stage>,
    pub description: String,
}

impl Sequence {
    /// An empty sequence is a valid no-op (a run then yields only the
    /// initial snapshot).
    pub fn validate(&self) -> Result<()> {
        for stage in &self.stages {
            stage.validate()?;
        }
        Ok(())
    }

    /// Start time of each stage, accumulated from zero.
    pub fn start_times_s(&self) -> Vec<f64> {
        let mut t = 0.0;
        self.stages
            .iter()
            .map(|s| {
                let start = t;
                t += s.duration_s();
                start
            })
            .collect()
    }

    pub fn total_duration_s(&self) -> f64 {
        self.stages.iter().map(|s| s.duration_s()).sum()
    }

    /// Time spent with the coupling field engaged or accumulating relative
    /// phase: pulses plus waits, excluding free evolution.
    pub fn coupled_time_s(&self) -> f64 {
        self.stages
            .iter()
            .map(|s| match s {
                Stage::CoupledPulse { .. } | Stage::PhaseWait { .. } => s.duration_s(),
                _ => 0.0,
            })
            .sum()
    }

    /// The protocol must complete before the condensate can respond: the
    /// coupled time has to stay below the healing time t_ξ.
    pub fn ensure_faster_than_healing(&self, t_xi_s: f64) -> Result<()> {
        let coupled = self.coupled_time_s();
        if coupled >= t_xi_s {
            return Err(Error::Validation(format!(
                "coupled protocol time {:.1} μs is not shorter than the healing \
                 time {:.1} μs; the condensate would respond mid-protocol",
                coupled * 1e6,
                t_xi_s * 1e6
            )));
        }
        Ok(())
    }

    /// The first transfer pulse of a two-pulse recipe, if present.
    pub fn first_pulse(&self) -> Option<&HsPulse> {
        self.stages.iter().find_map(|s| match s {
            Stage::CoupledPulse { pulse, .. } => Some(pulse),
            _ => None,
        })
    }
}

/// The shared four-stage skeleton: forward pulse, phase wait, returning
/// pulse with the gradient (and therefore the detuning sweep) inverted,
/// then removal of the transferred population.
fn two_pulse_sequence(
    first: &HsPulse,
    dphi_rad_s: f64,
    t_phi_s: f64,
    description: String,
) -> Result<Sequence> {
    first.validate()?;
    if !(t_phi_s >= 0.0) {
        return Err(Error::Validation(format!(
            "wait duration must be non-negative, got {t_phi_s}"
        )));
    }
    let second = HsPulse {
        gradient_sign: -first.gradient_sign,
        ..*first
    };
    let seq = Sequence {
        stages: vec![
            Stage::CoupledPulse {
                gradient_g_per_cm: first.signed_gradient_g_per_cm(),
                pulse: *first,
            },
            Stage::PhaseWait {
                dphi_rad_s,
                t_phi_s,
            },
            Stage::CoupledPulse {
                gradient_g_per_cm: second.signed_gradient_g_per_cm(),
                pulse: second,
            },
            Stage::Project { keep: vec![-1] },
        ],
        description,
    };
    seq.validate()?;
    Ok(seq)
}

/// Single-soliton recipe: slice with its inner edge at the trap center
/// (Δ₁ = μΩ₀ enforced), transferred out and back around a phase wait, then
/// projection onto m = −1. The first pulse runs against `pulse.gradient_sign`
/// (negative in the reference recipe); the second against the opposite sign.
pub fn single_soliton_sequence(
    pulse: &HsPulse,
    dphi_rad_s: f64,
    t_phi_s: f64,
) -> Result<Sequence> {
    pulse.validate()?;
    let pinned = pulse.mu * pulse.omega0_rad_s;
    if (pulse.delta1_rad_s - pinned).abs() > 1e-9 * pinned.abs() {
        return Err(Error::Validation(format!(
            "single-soliton recipe pins the detuning offset at μΩ₀ = {:.4e} rad/s \
             (slice edge on the trap center); got {:.4e} rad/s",
            pinned, pulse.delta1_rad_s
        )));
    }
    two_pulse_sequence(
        pulse,
        dphi_rad_s,
        t_phi_s,
        "single dark soliton via slice transfer and phase wait".into(),
    )
}

/// Two-soliton recipe: same gradient and pulse envelope as the single
/// recipe, but a thinner slice (smaller μ) placed by Δ₁ so both edges sit
/// inside the condensate. Thinning must keep β unchanged — μ·Γ has to match
/// the reference pulse's product to 0.1% — so the edge sharpness carries
/// over.
pub fn double_soliton_sequence(
    reference: &HsPulse,
    mu: f64,
    big_gamma: f64,
    delta1_rad_s: f64,
    dphi_rad_s: f64,
    t_phi_s: f64,
) -> Result<Sequence> {
    reference.validate()?;
    let ref_product = reference.mu * reference.big_gamma;
    let product = mu * big_gamma;
    if ((product - ref_product) / ref_product).abs() > 1e-3 {
        return Err(Error::Validation(format!(
            "μ·Γ = {product:.4} differs from the reference {ref_product:.4} by more \
             than 0.1%; β (hence pulse duration and edge sharpness) would change"
        )));
    }
    let pulse = HsPulse {
        mu,
        big_gamma,
        delta1_rad_s,
        ..*reference
    };
    pulse.validate()?;
    two_pulse_sequence(
        &pulse,
        dphi_rad_s,
        t_phi_s,
        "double dark soliton via a thin slice inside the condensate".into(),
    )
}

/// Wait detuning that turns a measured residual step φ₀ into a total step
/// of π after accumulating 2·Δφ·t_φ: the smallest non-negative solution.
pub fn wait_detuning_for_pi(phi0_rad: f64, t_phi_s: f64) -> Result<f64> {
    if !(t_phi_s > 0.0) {
        return Err(Error::Validation(format!(
            "phase-wait calibration needs t_φ > 0, got {t_phi_s}"
        )));
    }
    let needed = (PI - phi0_rad).rem_euclid(2.0 * PI);
    Ok(needed / (2.0 * t_phi_s))
}

/// Execute a sequence stage by stage. Snapshots fire on the sink's cadence
/// inside stages, plus once at the start and at every stage boundary (so a
/// projection's before/after states are both captured; consumers keep the
/// last frame per timestamp).
pub fn run_sequence(
    prop: &mut Propagator,
    state: &mut SpinorField,
    seq: &Sequence,
    mut sink: Option<&mut SnapshotSink>,
) -> Result<()> {
    seq.validate()?;
    if let Some(s) = sink.as_deref_mut() {
        (s.emit)(state)?;
    }
    for stage in &seq.stages {
        match stage {
            Stage::CoupledPulse {
                pulse,
                gradient_g_per_cm,
            } => {
                prop.run_stage(
                    state,
                    StageDrive::Pulse {
                        pulse,
                        gradient_g_per_cm: *gradient_g_per_cm,
                    },
                    pulse.duration_s(),
                    sink.as_deref_mut(),
                )?;
            }
            Stage::PhaseWait { dphi_rad_s, t_phi_s } => {
                prop.run_stage(
                    state,
                    StageDrive::Uniform {
                        omega_rad_s: 0.0,
                        delta_rad_s: *dphi_rad_s,
                    },
                    *t_phi_s,
                    sink.as_deref_mut(),
                )?;
            }
            Stage::FreeEvolve { duration_s } => {
                prop.run_stage(state, StageDrive::Free, *duration_s, sink.as_deref_mut())?;
            }
            Stage::Project { keep } => {
                state.project(keep)?;
            }
        }
        if let Some(s) = sink.as_deref_mut() {
            (s.emit)(state)?;
        }
    }
    Ok(())
}

/// Closed-loop calibration of the wait detuning. Runs the two-pulse part of
/// `base` once with Δφ = 0, measures the residual phase step φ₀ at the inner
/// slice edge, sets Δφ = ((π − φ₀) mod 2π)/(2 t_φ), and verifies that a
/// second run lands within 0.05 rad of a π step. The verified Δφ is
/// returned; `state` is left untouched (runs use clones).
pub fn calibrate_phase_wait(
    prop: &mut Propagator,
    ground: &SpinorField,
    base: &Sequence,
    t_phi_s: f64,
) -> Result<f64> {
    if !(t_phi_s > 0.0) {
        return Err(Error::Validation(format!(
            "phase-wait calibration needs t_φ > 0, got {t_phi_s}"
        )));
    }
    let first = base.first_pulse().ok_or_else(|| {
        Error::Validation("calibration needs a sequence with a transfer pulse".into())
    })?;
    let gamma = prop.constants().gamma_rad_per_s_gauss;
    let (lo_m, hi_m) = slice_edges_m(first, gamma);
    let inner_m = if lo_m.abs() < hi_m.abs() { lo_m } else { hi_m };
    let scales = derive_scales(prop.params(), Some(ground), true)?;
    let xi_m = scales.xi_m.ok_or_else(|| {
        Error::Validation("phase-step calibration needs an interacting cloud".into())
    })?;

    let mut step_with = |dphi_rad_s: f64| -> Result<f64> {
        let seq = rewaited(base, dphi_rad_s, t_phi_s)?;
        let mut state = ground.clone();
        run_sequence(prop, &mut state, &seq, None)?;
        measure_phase_step(&state, -1, inner_m, xi_m)
    };

    let phi0 = step_with(0.0)?;
    let dphi = wait_detuning_for_pi(phi0, t_phi_s)?;
    let verified = step_with(dphi)?;
    if (verified.abs() - PI).abs() > 0.05 {
        return Err(Error::Calibration {
            measured_step_rad: verified,
        });
    }
    Ok(dphi)
}

/// Copy of `base` up to and including its projection, with the phase wait
/// replaced. Free evolution after the projection is dropped: calibration
/// measures the step at protocol end.
fn rewaited(base: &Sequence, dphi_rad_s: f64, t_phi_s: f64) -> Result<Sequence> {
    let mut stages = Vec::new();
    let mut replaced = false;
    for stage in &base.stages {
        match stage {
            Stage::PhaseWait { .. } => {
                if replaced {
                    return Err(Error::Validation(
                        "calibration expects exactly one phase wait; found several".into(),
                    ));
                }
                replaced = true;
                stages.push(Stage::PhaseWait {
                    dphi_rad_s,
                    t_phi_s,
                });
            }
            Stage::FreeEvolve { .. } => {}
            other => stages.push(other.clone()),
        }
    }
    if !replaced {
        return Err(Error::Validation(
            "calibration expects a sequence containing a phase wait".into(),
        ));
    }
    Ok(Sequence {
        stages,
        description: format!("{} (recalibrated wait)", base.description),
    })
}
