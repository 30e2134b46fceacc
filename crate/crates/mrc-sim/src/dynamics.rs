//! Strang split-step propagation of the three-component quasi-1D mean
//! field: spectral kinetic half-steps, local trap + interaction phases,
//! and the exact spin-1 rotation for the coupling + detuning terms.
//! Also provides the imaginary-time step used by the ground-state solver.

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::pulse::{field_detuning_rad_s, HsPulse};
use crate::spin::rotate_spin1;
use crate::spinor::SpinorField;
use crate::units::{
    self, freq_to_internal, CondensateParams, PhysicalConstants,
};
use num_complex::Complex64 as C64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

/// Time-step policy: a fine step while coupling fields are on, a coarse
/// step for free evolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepperConfig {
    /// Step during coupled stages (s). Default 2 ns.
    pub dt_pulse_s: f64,
    /// Step during free evolution (s). Default 1 μs.
    pub dt_free_s: f64,
}

impl Default for StepperConfig {
    fn default() -> Self {
        StepperConfig {
            dt_pulse_s: 2e-9,
            dt_free_s: 1e-6,
        }
    }
}

impl StepperConfig {
    /// Check both steps are positive and finite.
    pub fn validate(&self) -> Result<()> {
        if !(self.dt_pulse_s > 0.0 && self.dt_pulse_s.is_finite()) {
            return Err(Error::Validation(format!(
                "pulse time step must be positive, got {} s",
                self.dt_pulse_s
            )));
        }
        if !(self.dt_free_s > 0.0 && self.dt_free_s.is_finite()) {
            return Err(Error::Validation(format!(
                "free-evolution time step must be positive, got {} s",
                self.dt_free_s
            )));
        }
        Ok(())
    }
}

/// What drives the spin during one stage of evolution.
#[derive(Debug, Clone, Copy)]
pub enum StageDrive<'a> {
    /// Adiabatic sweep against a signed gradient (G/cm).
    Pulse {
        pulse: &'a HsPulse,
        gradient_g_per_cm: f64,
    },
    /// Spatially uniform Rabi coupling and detuning (rad/s).
    Uniform { omega_rad_s: f64, delta_rad_s: f64 },
    /// No coupling: kinetic + trap + interactions only.
    Free,
}

/// Periodic snapshot callback fired during a stage, on the global clock.
pub struct SnapshotSink<'a> {
    /// Cadence between snapshots (s).
    pub every_s: f64,
    /// Receives the state right after a step crosses a cadence boundary.
    pub emit: &'a mut dyn FnMut(&SpinorField) -> Result<()>,
}

/// Owns the FFT plans, phase tables, and static potentials for one grid,
/// and advances spinor fields through protocol stages.
pub struct Propagator {
    grid: Arc<Grid>,
    constants: PhysicalConstants,
    params: CondensateParams,
    stepper: StepperConfig,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    scratch: Vec<C64>,
    work: Vec<C64>,
    /// k²/2 per mode (internal units).
    k2_half: Vec<f64>,
    /// Trap potential ½ω_z²z² per point (internal units).
    trap: Vec<f64>,
    /// Cached kinetic phase tables exp(−i·k²/2·dt)/N for (half, full) of
    /// the dt they were built for (internal units).
    kinetic_cache: Option<(f64, Vec<C64>, Vec<C64>)>,
    /// Cached imaginary-time decay tables for (half, full) of dτ.
    imaginary_cache: Option<(f64, Vec<f64>, Vec<f64>)>,
    delta_buf: Vec<f64>,
    theta_buf: Vec<f64>,
}

impl Propagator {
    /// Plan FFTs and precompute static tables for a grid + condensate.
    pub fn new(
        grid: Arc<Grid>,
        constants: PhysicalConstants,
        params: CondensateParams,
        stepper: StepperConfig,
    ) -> Result<Self> {
        constants.validate()?;
        params.validate()?;
        stepper.validate()?;
        let n = grid.num_points;
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(n);
        let ifft = planner.plan_fft_inverse(n);
        let k2_half: Vec<f64> = grid
            .wavenumbers_internal()
            .iter()
            .map(|&k| 0.5 * k * k)
            .collect();
        let wz = params.omega_z_internal();
        let trap: Vec<f64> = grid
            .z_internal()
            .iter()
            .map(|&z| 0.5 * wz * wz * z * z)
            .collect();
        let scratch_len = fft.get_inplace_scratch_len().max(ifft.get_inplace_scratch_len());
        Ok(Propagator {
            grid,
            constants,
            params,
            stepper,
            fft,
            ifft,
            scratch: vec![C64::new(0.0, 0.0); scratch_len],
            work: Vec::new(),
            k2_half,
            trap,
            kinetic_cache: None,
            imaginary_cache: None,
            delta_buf: Vec::new(),
            theta_buf: Vec::new(),
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn constants(&self) -> &PhysicalConstants {
        &self.constants
    }

    pub fn params(&self) -> &CondensateParams {
        &self.params
    }

    pub fn stepper(&self) -> &StepperConfig {
        &self.stepper
    }

    fn ensure_kinetic_tables(&mut self, dt_int: f64) {
        if let Some((cached, _, _)) = &self.kinetic_cache {
            if *cached == dt_int {
                return;
            }
        }
        let n = self.grid.num_points as f64;
        let half: Vec<C64> = self
            .k2_half
            .iter()
            .map(|&e| C64::from_polar(1.0 / n, -e * 0.5 * dt_int))
            .collect();
        let full: Vec<C64> = self
            .k2_half
            .iter()
            .map(|&e| C64::from_polar(1.0 / n, -e * dt_int))
            .collect();
        self.kinetic_cache = Some((dt_int, half, full));
    }

    /// Multiply one component by a kinetic phase table in momentum space.
    fn apply_kinetic(&mut self, comp: &mut [C64], table_half: bool) {
        let (_, half, full) = self.kinetic_cache.as_ref().unwrap();
        let table = if table_half { half } else { full };
        self.work.clear();
        self.work.extend_from_slice(comp);
        self.fft.process_with_scratch(&mut self.work, &mut self.scratch);
        for (w, &t) in self.work.iter_mut().zip(table.iter()) {
            *w *= t;
        }
        self.ifft.process_with_scratch(&mut self.work, &mut self.scratch);
        comp.copy_from_slice(&self.work);
    }

    fn kinetic_all(&mut self, state: &mut SpinorField, half: bool) {
        for m in 0..3 {
            if state.component_is_empty(m) {
                continue;
            }
            let mut comp = std::mem::take(&mut state.comps[m]);
            self.apply_kinetic(&mut comp, half);
            state.comps[m] = comp;
        }
    }

    /// Trap + density-interaction phase for all components (the
    /// interaction is spin-independent).
    fn apply_local_phase(&mut self, state: &mut SpinorField, dt_int: f64) {
        let n_pts = self.grid.num_points;
        let atoms = self.params.atoms;
        let wr = self.params.omega_r_internal();
        let a = self.params.scattering_length_internal();
        let model = self.params.nonlinearity;
        self.theta_buf.resize(n_pts, 0.0);
        for j in 0..n_pts {
            let mut n1 = state.comps[0][j].norm_sqr()
                + state.comps[1][j].norm_sqr()
                + state.comps[2][j].norm_sqr();
            n1 *= atoms;
            let mu = units::mu_nonlinear_internal(model, wr, a, n1);
            self.theta_buf[j] = (self.trap[j] + mu) * dt_int;
        }
        for m in 0..3 {
            if state.component_is_empty(m) {
                continue;
            }
            for (c, &th) in state.comps[m].iter_mut().zip(self.theta_buf.iter()) {
                *c *= C64::from_polar(1.0, -th);
            }
        }
    }

    /// One full stage of duration `duration_s` under a drive, with the
    /// kinetic half-steps of adjacent steps fused. Optionally emits
    /// snapshots at a fixed cadence on the global clock.
    pub fn run_stage(
        &mut self,
        state: &mut SpinorField,
        drive: StageDrive,
        duration_s: f64,
        mut sink: Option<&mut SnapshotSink>,
    ) -> Result<()> {
        if duration_s < 0.0 || !duration_s.is_finite() {
            return Err(Error::Validation(format!(
                "stage duration must be non-negative, got {duration_s} s"
            )));
        }
        if state.grid.num_points != self.grid.num_points {
            return Err(Error::Validation(
                "state grid does not match the propagator grid".into(),
            ));
        }
        if duration_s == 0.0 {
            return Ok(());
        }
        let dt_s = match drive {
            StageDrive::Free => self.stepper.dt_free_s,
            _ => self.stepper.dt_pulse_s,
        };
        let steps = (duration_s / dt_s).round().max(1.0) as usize;
        let dt_s = duration_s / steps as f64;
        let dt_int = units::time_to_internal(dt_s);
        self.check_phase_budget(&drive, dt_s)?;

        let gamma = self.constants.gamma_rad_per_s_gauss;
        let slope_int = match drive {
            StageDrive::Pulse {
                gradient_g_per_cm, ..
            } => units::gradient_slope_internal(gamma, gradient_g_per_cm),
            _ => 0.0,
        };
        let t_entry = state.time_s;
        let mut next_snap = sink.as_ref().map(|s| {
            (t_entry / s.every_s).floor() * s.every_s + s.every_s
        });

        self.ensure_kinetic_tables(dt_int);
        self.kinetic_all(state, true);
        for k in 0..steps {
            let t_mid_local = (k as f64 + 0.5) * dt_s;
            self.apply_local_phase(state, dt_int);
            match drive {
                StageDrive::Pulse { pulse, .. } => {
                    let t_p = pulse.duration_s();
                    let u = pulse.beta_per_s() * (t_mid_local - 0.5 * t_p);
                    let omega_int =
                        freq_to_internal(pulse.omega0_rad_s / u.cosh());
                    let dfield_int = freq_to_internal(field_detuning_rad_s(
                        pulse,
                        gamma,
                        t_mid_local,
                    ));
                    let z = self.grid.z_internal();
                    self.delta_buf.resize(self.grid.num_points, 0.0);
                    for (d, &zj) in self.delta_buf.iter_mut().zip(z.iter()) {
                        *d = slope_int * zj - dfield_int;
                    }
                    self.rotate_state(state, omega_int, dt_int);
                }
                StageDrive::Uniform {
                    omega_rad_s,
                    delta_rad_s,
                } => {
                    let omega_int = freq_to_internal(omega_rad_s);
                    let delta_int = freq_to_internal(delta_rad_s);
                    if omega_int != 0.0 || delta_int != 0.0 {
                        self.delta_buf.resize(self.grid.num_points, 0.0);
                        self.delta_buf.fill(delta_int);
                        self.rotate_state(state, omega_int, dt_int);
                    }
                }
                StageDrive::Free => {}
            }
            let last = k + 1 == steps;
            self.kinetic_all(state, last);
            state.time_s = t_entry + (k as f64 + 1.0) * dt_s;

            if k % 4096 == 4095 || last {
                self.check_finite(state, k, steps)?;
            }
            if let (Some(s), Some(nt)) = (sink.as_deref_mut(), next_snap.as_mut()) {
                // Fire at most one snapshot per step; cadence below dt
                // degrades to one per step.
                if state.time_s + 1e-15 >= *nt {
                    (s.emit)(state)?;
                    while *nt <= state.time_s + 1e-15 {
                        *nt += s.every_s;
                    }
                }
            }
        }
        Ok(())
    }

    fn rotate_state(&mut self, state: &mut SpinorField, omega_int: f64, dt_int: f64) {
        let [pm, p0, pp] = &mut state.comps;
        rotate_spin1(pm, p0, pp, &self.delta_buf, omega_int, dt_int);
    }

    /// Enforce the per-step rotation budget: dt·max(|Ω|, |δ| at the domain
    /// edge) must stay ≤ 0.2 rad so midpoint sampling resolves the sweep.
    fn check_phase_budget(&self, drive: &StageDrive, dt_s: f64) -> Result<()> {
        let (omega_max, delta_max) = match drive {
            StageDrive::Pulse {
                pulse,
                gradient_g_per_cm,
            } => {
                let gamma = self.constants.gamma_rad_per_s_gauss;
                let z_edge = self
                    .grid
                    .z_max_m
                    .abs()
                    .max(self.grid.z_min_m.abs());
                let slope = gamma.abs() * gradient_g_per_cm.abs() * 100.0;
                let delta_edge = slope * z_edge
                    + pulse.delta0_rad_s().abs()
                    + pulse.delta1_rad_s.abs();
                (pulse.omega0_rad_s, delta_edge)
            }
            StageDrive::Uniform {
                omega_rad_s,
                delta_rad_s,
            } => (omega_rad_s.abs(), delta_rad_s.abs()),
            StageDrive::Free => return Ok(()),
        };
        let budget = dt_s * omega_max.max(delta_max);
        if budget > 0.2 {
            return Err(Error::Validation(format!(
                "time step {dt_s} s gives {budget:.3} rad per step at the domain \
                 edge (limit 0.2); use a finer pulse step"
            )));
        }
        Ok(())
    }

    fn check_finite(&self, state: &SpinorField, step: usize, steps: usize) -> Result<()> {
        let norm = state.total_norm();
        if !norm.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite field norm at t = {:.6e} s (step {}/{})",
                state.time_s,
                step + 1,
                steps
            )));
        }
        Ok(())
    }

    /// Total energy per atom (internal units): spectral kinetic energy,
    /// trap energy, and the density-interaction energy.
    pub fn energy_per_atom_internal(&mut self, state: &SpinorField) -> f64 {
        let n_pts = self.grid.num_points;
        let dz = self.grid.dz_internal();
        let mut kinetic = 0.0;
        for m in 0..3 {
            if state.component_is_empty(m) {
                continue;
            }
            self.work.clear();
            self.work.extend_from_slice(&state.comps[m]);
            self.fft.process_with_scratch(&mut self.work, &mut self.scratch);
            let mut acc = 0.0;
            for (w, &e) in self.work.iter().zip(self.k2_half.iter()) {
                acc += e * w.norm_sqr();
            }
            kinetic += acc * dz / n_pts as f64;
        }
        let atoms = self.params.atoms;
        let wr = self.params.omega_r_internal();
        let a = self.params.scattering_length_internal();
        let mut trap_e = 0.0;
        let mut interaction = 0.0;
        for j in 0..n_pts {
            let n_here = state.comps[0][j].norm_sqr()
                + state.comps[1][j].norm_sqr()
                + state.comps[2][j].norm_sqr();
            trap_e += self.trap[j] * n_here;
            if atoms > 0.0 {
                let u = units::interaction_energy_density_internal(
                    self.params.nonlinearity,
                    wr,
                    a,
                    atoms * n_here,
                );
                interaction += u / atoms;
            }
        }
        kinetic + (trap_e + interaction) * dz
    }

    /// Center-of-mass position ⟨z⟩ over the total density (internal units).
    pub fn center_of_mass_internal(&self, state: &SpinorField) -> f64 {
        let z = self.grid.z_internal();
        let mut num = 0.0;
        let mut den = 0.0;
        for j in 0..self.grid.num_points {
            let n_here = state.comps[0][j].norm_sqr()
                + state.comps[1][j].norm_sqr()
                + state.comps[2][j].norm_sqr();
            num += z[j] * n_here;
            den += n_here;
        }
        num / den
    }

    /// Center-of-mass momentum ⟨k⟩ of the total field (internal units).
    pub fn momentum_per_atom_internal(&mut self, state: &SpinorField) -> f64 {
        let ks = self.grid.wavenumbers_internal().to_vec();
        let mut mom = 0.0;
        let mut den = 0.0;
        for m in 0..3 {
            if state.component_is_empty(m) {
                continue;
            }
            self.work.clear();
            self.work.extend_from_slice(&state.comps[m]);
            self.fft.process_with_scratch(&mut self.work, &mut self.scratch);
            for (w, &k) in self.work.iter().zip(ks.iter()) {
                let p = w.norm_sqr();
                mom += k * p;
                den += p;
            }
        }
        if den == 0.0 {
            0.0
        } else {
            mom / den
        }
    }

    fn ensure_imaginary_tables(&mut self, dtau_int: f64) {
        if let Some((cached, _, _)) = &self.imaginary_cache {
            if *cached == dtau_int {
                return;
            }
        }
        let n = self.grid.num_points as f64;
        let half: Vec<f64> = self
            .k2_half
            .iter()
            .map(|&e| (-e * 0.5 * dtau_int).exp() / n)
            .collect();
        let full: Vec<f64> = self
            .k2_half
            .iter()
            .map(|&e| (-e * dtau_int).exp() / n)
            .collect();
        self.imaginary_cache = Some((dtau_int, half, full));
    }

    /// One imaginary-time step (norm-decaying). Returns the squared norm
    /// before renormalizing back to 1; its decay rate estimates the
    /// chemical potential.
    pub fn imaginary_step(&mut self, state: &mut SpinorField, dtau_int: f64) -> Result<f64> {
        self.ensure_imaginary_tables(dtau_int);
        // Occupancy is decided once per step: the decay and kinetic factors
        // cannot populate a component that starts empty.
        let occupied = [
            !state.component_is_empty(0),
            !state.component_is_empty(1),
            !state.component_is_empty(2),
        ];
        let cache = self.imaginary_cache.take().unwrap();
        let apply = |prop: &mut Self, state: &mut SpinorField, table: &[f64]| {
            for m in 0..3 {
                if !occupied[m] {
                    continue;
                }
                let mut comp = std::mem::take(&mut state.comps[m]);
                prop.work.clear();
                prop.work.extend_from_slice(&comp);
                prop.fft
                    .process_with_scratch(&mut prop.work, &mut prop.scratch);
                for (w, &t) in prop.work.iter_mut().zip(table.iter()) {
                    *w *= t;
                }
                prop.ifft
                    .process_with_scratch(&mut prop.work, &mut prop.scratch);
                comp.copy_from_slice(&prop.work);
                state.comps[m] = comp;
            }
        };
        apply(self, state, &cache.1);
        let n_pts = self.grid.num_points;
        let atoms = self.params.atoms;
        let wr = self.params.omega_r_internal();
        let a = self.params.scattering_length_internal();
        let model = self.params.nonlinearity;
        for j in 0..n_pts {
            let mut n1 = state.comps[0][j].norm_sqr()
                + state.comps[1][j].norm_sqr()
                + state.comps[2][j].norm_sqr();
            n1 *= atoms;
            let mu = units::mu_nonlinear_internal(model, wr, a, n1);
            let decay = (-(self.trap[j] + mu) * dtau_int).exp();
            for m in 0..3 {
                if occupied[m] {
                    state.comps[m][j] *= decay;
                }
            }
        }
        apply(self, state, &cache.1);
        self.imaginary_cache = Some(cache);
        let norm = state.total_norm();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::Numerical(format!(
                "imaginary-time norm became {norm}"
            )));
        }
        let scale = 1.0 / norm.sqrt();
        for m in 0..3 {
            if !occupied[m] {
                continue;
            }
            for c in state.comps[m].iter_mut() {
                *c *= scale;
            }
        }
        Ok(norm)
    }
}
