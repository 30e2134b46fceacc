//! Hyperbolic-secant adiabatic transfer pulses: construction from
//! dimensionless parameters, waveform sampling, slice geometry, and
//! point-level transfer fidelity.

use crate::error::{Error, Result};
use crate::spin::rotate_point;
use num_complex::Complex64 as C64;

/// One hyperbolic-secant sweep: Ω(t) = Ω₀ sech(β(t − t_p/2)),
/// Δ(t) = Δ₀ tanh(β(t − t_p/2)) + Δ₁, together with the gradient it is
/// meant to be played against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HsPulse {
    /// Peak Rabi frequency Ω₀ (rad/s).
    pub omega0_rad_s: f64,
    /// Normalized sweep bandwidth μ = Δ₀/Ω₀.
    pub mu: f64,
    /// Adiabaticity Γ = Ω₀/(μβ).
    pub big_gamma: f64,
    /// Truncation α = sech(β t_p / 2), in (0, 1).
    pub alpha: f64,
    /// Constant detuning offset Δ₁ (rad/s). Positive values center the
    /// addressed slice at z_c = Δ₁/(γ·|dB/dz|) independent of the
    /// gradient's sign.
    pub delta1_rad_s: f64,
    /// Sign of the gradient this pulse is played against (±1).
    pub gradient_sign: f64,
    /// Gradient magnitude |dB/dz| (G/cm).
    pub dbdz_g_per_cm: f64,
    /// Reversed sweep: β → −β in the tanh argument, envelope unchanged.
    pub time_reversed: bool,
}

/// How the gradient strength of a pulse is being specified.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GradientSpec {
    /// Gradient magnitude given directly (G/cm).
    Direct { dbdz_g_per_cm: f64 },
    /// Gradient chosen so the resonant slice spans a target thickness (m).
    SliceThickness { delta_z_m: f64 },
}

impl HsPulse {
    /// Sweep amplitude Δ₀ = μΩ₀ (rad/s).
    pub fn delta0_rad_s(&self) -> f64 {
        self.mu * self.omega0_rad_s
    }

    /// Sweep rate β = Ω₀/(μΓ) (1/s).
    pub fn beta_per_s(&self) -> f64 {
        self.omega0_rad_s / (self.mu * self.big_gamma)
    }

    /// Pulse duration t_p = (2/β)·arccosh(1/α) (s).
    pub fn duration_s(&self) -> f64 {
        2.0 / self.beta_per_s() * (1.0 / self.alpha).acosh()
    }

    /// Gradient including its sign (G/cm).
    pub fn signed_gradient_g_per_cm(&self) -> f64 {
        self.gradient_sign * self.dbdz_g_per_cm
    }

    /// Check the defining parameter ranges.
    pub fn validate(&self) -> Result<()> {
        if !(self.omega0_rad_s > 0.0) || !self.omega0_rad_s.is_finite() {
            return Err(Error::Validation(format!(
                "peak Rabi frequency must be positive, got {} rad/s",
                self.omega0_rad_s
            )));
        }
        if !(self.mu > 0.0) || !(self.big_gamma > 0.0) {
            return Err(Error::Validation(format!(
                "mu and Gamma must be positive, got mu={} Gamma={}",
                self.mu, self.big_gamma
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Validation(format!(
                "truncation alpha must lie in (0,1), got {}",
                self.alpha
            )));
        }
        if self.gradient_sign != 1.0 && self.gradient_sign != -1.0 {
            return Err(Error::Validation(format!(
                "gradient sign must be +1 or -1, got {}",
                self.gradient_sign
            )));
        }
        if !(self.dbdz_g_per_cm > 0.0) || !self.dbdz_g_per_cm.is_finite() {
            return Err(Error::Validation(format!(
                "gradient magnitude must be positive, got {} G/cm",
                self.dbdz_g_per_cm
            )));
        }
        if !self.delta1_rad_s.is_finite() {
            return Err(Error::Validation(
                "detuning offset must be finite".into(),
            ));
        }
        Ok(())
    }
}

/// Build a pulse from (Ω₀, μ, Γ, α, Δ₁) with the gradient either given
/// directly or derived from a target slice thickness.
pub fn pulse_from_dimensionless(
    omega0_rad_s: f64,
    mu: f64,
    big_gamma: f64,
    alpha: f64,
    delta1_rad_s: f64,
    gradient_sign: f64,
    gradient: GradientSpec,
    gamma_rad_per_s_gauss: f64,
) -> Result<HsPulse> {
    let dbdz_g_per_cm = match gradient {
        GradientSpec::Direct { dbdz_g_per_cm } => dbdz_g_per_cm,
        GradientSpec::SliceThickness { delta_z_m } => {
            gradient_for_slice(mu * omega0_rad_s, delta_z_m, gamma_rad_per_s_gauss)?
        }
    };
    let pulse = HsPulse {
        omega0_rad_s,
        mu,
        big_gamma,
        alpha,
        delta1_rad_s,
        gradient_sign,
        dbdz_g_per_cm,
        time_reversed: false,
    };
    pulse.validate()?;
    Ok(pulse)
}

/// Gradient magnitude needed to spread a sweep of amplitude Δ₀ over a
/// slice of thickness Δz: |dB/dz| = 2Δ₀/(|γ|Δz), in G/cm.
pub fn gradient_for_slice(
    delta0_rad_s: f64,
    delta_z_m: f64,
    gamma_rad_per_s_gauss: f64,
) -> Result<f64> {
    if !(delta0_rad_s > 0.0) || !(delta_z_m > 0.0) || gamma_rad_per_s_gauss == 0.0 {
        return Err(Error::Validation(format!(
            "slice gradient needs positive sweep amplitude and thickness and a \
             nonzero gyromagnetic ratio, got delta0={delta0_rad_s} rad/s, \
             delta_z={delta_z_m} m"
        )));
    }
    let g_per_m = 2.0 * delta0_rad_s / (gamma_rad_per_s_gauss.abs() * delta_z_m);
    Ok(g_per_m / 100.0)
}

/// Thickness of the resonant slice for a given gradient:
/// Δz = 2Δ₀/(|γ|·|dB/dz|), in m.
pub fn slice_thickness_m(pulse: &HsPulse, gamma_rad_per_s_gauss: f64) -> f64 {
    2.0 * pulse.delta0_rad_s()
        / (gamma_rad_per_s_gauss.abs() * pulse.dbdz_g_per_cm * 100.0)
}

/// Center of the addressed slice, z_c = Δ₁/(γ·|dB/dz|), in m. With a
/// negative gyromagnetic ratio a positive Δ₁ places the slice at z < 0.
pub fn slice_center_m(pulse: &HsPulse, gamma_rad_per_s_gauss: f64) -> f64 {
    pulse.delta1_rad_s / (gamma_rad_per_s_gauss * pulse.dbdz_g_per_cm * 100.0)
}

/// Slice edges (low, high) in m: center ± half the thickness.
pub fn slice_edges_m(pulse: &HsPulse, gamma_rad_per_s_gauss: f64) -> (f64, f64) {
    let zc = slice_center_m(pulse, gamma_rad_per_s_gauss);
    let half = 0.5 * slice_thickness_m(pulse, gamma_rad_per_s_gauss);
    (zc - half, zc + half)
}

/// Waveform at time t (s into the pulse): (Ω, Δ) in rad/s. A reversed
/// pulse flips the sign of β inside the tanh only.
pub fn sample_waveform(pulse: &HsPulse, t_s: f64) -> Result<(f64, f64)> {
    let t_p = pulse.duration_s();
    if !(0.0..=t_p).contains(&t_s) {
        return Err(Error::Domain(format!(
            "waveform sample time {t_s} s outside pulse duration [0, {t_p}] s"
        )));
    }
    let u = pulse.beta_per_s() * (t_s - 0.5 * t_p);
    let sweep = if pulse.time_reversed { -u } else { u };
    let omega = pulse.omega0_rad_s / u.cosh();
    let delta = pulse.delta0_rad_s() * sweep.tanh() + pulse.delta1_rad_s;
    Ok((omega, delta))
}

/// Constant detuning offset as it enters the local Hamiltonian,
/// −sign(γ·B′)·Δ₁. This orientation keeps the slice centered at
/// z_c = Δ₁/(γ·|dB/dz|) whichever sign the gradient is played with.
pub fn field_offset_rad_s(pulse: &HsPulse, gamma_rad_per_s_gauss: f64) -> f64 {
    let slope = gamma_rad_per_s_gauss * pulse.signed_gradient_g_per_cm();
    -slope.signum() * pulse.delta1_rad_s
}

/// Detuning waveform as it enters the local Hamiltonian at time t:
/// Δ₀·tanh(±β(t−t_p/2)) plus the oriented constant offset (rad/s).
pub fn field_detuning_rad_s(pulse: &HsPulse, gamma_rad_per_s_gauss: f64, t_s: f64) -> f64 {
    let t_p = pulse.duration_s();
    let u = pulse.beta_per_s() * (t_s - 0.5 * t_p);
    let sweep = if pulse.time_reversed { -u } else { u };
    pulse.delta0_rad_s() * sweep.tanh() + field_offset_rad_s(pulse, gamma_rad_per_s_gauss)
}

/// Transfer fidelity of the pulse at a single spatial point whose static
/// detuning is `point_detuning_rad_s` (= γ·B′·z for a point at z).
/// Integrates the local three-level Schrödinger equation from m = −1 with
/// midpoint-sampled coefficients and returns the final m = +1 population.
pub fn single_pulse_fidelity(
    pulse: &HsPulse,
    gamma_rad_per_s_gauss: f64,
    point_detuning_rad_s: f64,
    dt_s: f64,
) -> Result<f64> {
    if !(dt_s > 0.0) || !dt_s.is_finite() {
        return Err(Error::Validation(format!(
            "fidelity integration step must be positive, got {dt_s} s"
        )));
    }
    let t_p = pulse.duration_s();
    let steps = (t_p / dt_s).ceil() as usize;
    let mut c = [C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0)];
    let dt = t_p / steps.max(1) as f64;
    for k in 0..steps {
        let t_mid = (k as f64 + 0.5) * dt;
        let u = pulse.beta_per_s() * (t_mid - 0.5 * t_p);
        let omega = pulse.omega0_rad_s / u.cosh();
        let delta = point_detuning_rad_s - field_detuning_rad_s(pulse, gamma_rad_per_s_gauss, t_mid);
        rotate_point(&mut c, omega, 0.0, delta, dt);
        if !c[0].re.is_finite() || !c[1].re.is_finite() || !c[2].re.is_finite() {
            return Err(Error::Numerical(format!(
                "point fidelity integration diverged at step {k} of {steps}"
            )));
        }
    }
    Ok(c[2].norm_sqr())
}

/// Transfer profile over a list of point detunings (rad/s), each via
/// `single_pulse_fidelity`. Useful for transition-sharpness scans.
pub fn transfer_profile(
    pulse: &HsPulse,
    gamma_rad_per_s_gauss: f64,
    point_detunings_rad_s: &[f64],
    dt_s: f64,
) -> Result<Vec<f64>> {
    point_detunings_rad_s
        .iter()
        .map(|&d| single_pulse_fidelity(pulse, gamma_rad_per_s_gauss, d, dt_s))
        .collect()
}
