//! Ground-state preparation: Thomas-Fermi seed profiles, imaginary-time
//! relaxation, Thomas-Fermi radius extraction, and the derived length and
//! time scales used everywhere else.

use crate::dynamics::Propagator;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::spinor::SpinorField;
use crate::units::{
    self, CondensateParams, DerivedScales, NonlinearityModel, L0_M, T0_S,
};

/// Stopping rule and step size for imaginary-time relaxation.
#[derive(Debug, Clone, Copy)]
pub struct GroundSolverConfig {
    /// Imaginary step dτ (internal units). Default 10⁻³/ω_r.
    pub dtau_internal: Option<f64>,
    /// Stop when |Δμ|/(μ·Δτ) falls below this rate (per ms of τ).
    pub residual_per_ms: f64,
    /// Give up (numerical error) beyond this many steps.
    pub max_iterations: usize,
    /// Steps between convergence checks.
    pub check_every: usize,
}

impl Default for GroundSolverConfig {
    fn default() -> Self {
        GroundSolverConfig {
            dtau_internal: None,
            residual_per_ms: 1e-8,
            max_iterations: 400_000,
            check_every: 40,
        }
    }
}

/// Converged ground state plus the solver's own diagnostics.
#[derive(Debug)]
pub struct GroundState {
    pub state: SpinorField,
    /// Chemical potential from the norm-decay rate (internal units).
    pub mu_internal: f64,
    pub iterations: usize,
    /// Final |Δμ|/(μ·Δτ) per ms.
    pub residual_per_ms: f64,
}

/// Normalized Thomas-Fermi density seed for the configured nonlinearity:
/// the inversion of μ_int(n) = μ − V(z), clipped at zero and scaled to
/// unit norm. Falls back to the oscillator Gaussian when there are no
/// atoms to interact.
pub fn thomas_fermi_profile(grid: &Grid, params: &CondensateParams) -> Result<Vec<f64>> {
    let wz = params.omega_z_internal();
    let z = grid.z_internal();
    let mut n = vec![0.0f64; grid.num_points];
    if params.atoms <= 0.0 {
        for (v, &x) in n.iter_mut().zip(z.iter()) {
            *v = (-wz * x * x).exp();
        }
    } else {
        let scales = DerivedScales::analytic(params)?;
        let mu = units::freq_to_internal(scales.mu_chem_j / crate::units::HBAR);
        let wr = params.omega_r_internal();
        let a = params.scattering_length_internal();
        for (v, &x) in n.iter_mut().zip(z.iter()) {
            let head = mu - 0.5 * wz * wz * x * x;
            if head <= 0.0 {
                continue;
            }
            *v = match params.nonlinearity {
                // μ(n) = 2ω_r√(a n) ⇒ n = (μ−V)²/(4ω_r²a)
                NonlinearityModel::EffectiveOneD => {
                    head * head / (4.0 * wr * wr * a)
                }
                // μ(n) = 2ω_r a n ⇒ n = (μ−V)/(2ω_r a)
                NonlinearityModel::PlainCubic => head / (2.0 * wr * a),
            };
        }
    }
    let total: f64 = n.iter().sum::<f64>() * grid.dz_internal();
    for v in n.iter_mut() {
        *v /= total;
    }
    Ok(n)
}

/// Relax to the ground state in imaginary time, starting from the
/// Thomas-Fermi (or Gaussian) seed.
pub fn solve_ground_state(
    prop: &mut Propagator,
    config: &GroundSolverConfig,
) -> Result<GroundState> {
    let grid = prop.grid().clone();
    let params = *prop.params();
    let density = thomas_fermi_profile(&grid, &params)?;
    let amplitude: Vec<f64> = density.iter().map(|&n| n.sqrt()).collect();
    let mut state = SpinorField::from_minus_profile(grid.clone(), &amplitude)?;
    let dtau = config
        .dtau_internal
        .unwrap_or(1e-3 / params.omega_r_internal());
    if !(dtau > 0.0) {
        return Err(Error::Validation(format!(
            "imaginary time step must be positive, got {dtau}"
        )));
    }
    let dtau_ms = dtau * T0_S * 1e3;
    let mut mu_prev = f64::NAN;
    let mut residual = f64::INFINITY;
    let mut iterations = 0usize;
    while iterations < config.max_iterations {
        let mut mu = 0.0;
        for _ in 0..config.check_every {
            let norm = prop.imaginary_step(&mut state, dtau)?;
            mu = -norm.ln() / (2.0 * dtau);
        }
        iterations += config.check_every;
        if mu_prev.is_finite() {
            residual = (mu - mu_prev).abs()
                / (mu.abs().max(f64::MIN_POSITIVE)
                    * (config.check_every as f64 * dtau_ms));
            if residual < config.residual_per_ms {
                state.time_s = 0.0;
                return Ok(GroundState {
                    state,
                    mu_internal: mu,
                    iterations,
                    residual_per_ms: residual,
                });
            }
        }
        mu_prev = mu;
    }
    Err(Error::Numerical(format!(
        "ground state not converged after {} imaginary-time steps \
         (residual {residual:.3e} per ms, target {:.3e})",
        config.max_iterations, config.residual_per_ms
    )))
}

/// Thomas-Fermi radius of a density profile (m): √n is linear in z² for
/// the effective-1D model, so fit √n = A + B·z² inside 85% of the extent
/// where the density clears 0.5% of its peak, and return √(−A/B).
pub fn measure_z_tf(grid: &Grid, state: &SpinorField) -> Result<f64> {
    let n = state.total_density_internal();
    let peak = n.iter().cloned().fold(0.0f64, f64::max);
    if peak <= 0.0 {
        return Err(Error::Measurement(
            "cannot fit a Thomas-Fermi radius to an empty field".into(),
        ));
    }
    let z = grid.z_internal();
    let mut extent = 0.0f64;
    for (j, &nj) in n.iter().enumerate() {
        if nj > 0.005 * peak {
            extent = extent.max(z[j].abs());
        }
    }
    if extent <= 0.0 {
        return Err(Error::Measurement(
            "density never clears the Thomas-Fermi fit threshold".into(),
        ));
    }
    let cut = 0.85 * extent;
    let (mut sx, mut sy, mut sxx, mut sxy, mut count) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (j, &nj) in n.iter().enumerate() {
        if z[j].abs() > cut || nj <= 0.0 {
            continue;
        }
        let x = z[j] * z[j];
        let y = nj.sqrt();
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
        count += 1.0;
    }
    if count < 8.0 {
        return Err(Error::Measurement(format!(
            "only {count} points inside the Thomas-Fermi fit window"
        )));
    }
    let denom = count * sxx - sx * sx;
    let b = (count * sxy - sx * sy) / denom;
    let a = (sy - b * sx) / count;
    if !(b < 0.0 && a > 0.0) {
        return Err(Error::Measurement(format!(
            "Thomas-Fermi fit degenerate (A = {a:.3e}, B = {b:.3e})"
        )));
    }
    Ok((-a / b).sqrt() * L0_M)
}

/// Length/time scales from a relaxed ground state (peak density and
/// fitted radius); `analytic_fallback` permits the closed-form
/// Thomas-Fermi estimates when no ground state is supplied.
pub fn derive_scales(
    params: &CondensateParams,
    ground: Option<&SpinorField>,
    analytic_fallback: bool,
) -> Result<DerivedScales> {
    match ground {
        Some(state) => {
            let n = state.total_density_internal();
            let peak = n.iter().cloned().fold(0.0f64, f64::max);
            let n1_peak = params.atoms * peak;
            let z_tf_m = measure_z_tf(&state.grid, state)?;
            Ok(DerivedScales::from_peak_density(params, n1_peak, z_tf_m))
        }
        None if analytic_fallback => DerivedScales::analytic(params),
        None => Err(Error::Config(
            "no ground state supplied and the analytic fallback is disabled".into(),
        )),
    }
}
