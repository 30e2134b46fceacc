//! Physical constants, condensate parameters, and the internal unit system.
//!
//! Internally the solver works in units with hbar = m = 1 and a length unit of
//! 1 um, which keeps propagator phases near unity. All public I/O is SI
//! (with gauss and G/cm for magnetic quantities).

use crate::error::{Error, Result};

/// Reduced Planck constant, J s.
pub const HBAR: f64 = 1.054571817e-34;
/// Atomic mass unit, kg.
pub const ATOMIC_MASS_KG: f64 = 1.66053906660e-27;
/// Mass of 87Rb, kg.
pub const MASS_RB87_KG: f64 = 86.909180527 * ATOMIC_MASS_KG;
/// Bohr magneton over Planck constant, Hz/G.
pub const BOHR_MAGNETON_HZ_PER_G: f64 = 1.39962449361e6;
/// Gyromagnetic ratio of the 87Rb F = 1 manifold, rad/(s G).
///
/// Negative because g_F = -1/2 for this manifold: increasing field raises the
/// m = -1 level relative to m = +1. The sign is load-bearing — it decides which
/// side of the cloud a given detuning offset addresses and which gradient
/// ordering produces the quiet sound signature.
pub const GAMMA_RB87_F1_RAD_PER_S_G: f64 =
    -2.0 * std::f64::consts::PI * 0.5 * BOHR_MAGNETON_HZ_PER_G;

/// Internal length unit, m.
pub const L0_M: f64 = 1e-6;
/// Internal time unit, s: T0 = m L0^2 / hbar (about 1.3685 ms for 87Rb).
pub const T0_S: f64 = MASS_RB87_KG * L0_M * L0_M / HBAR;

/// Angular frequency, rad/s -> internal.
pub fn freq_to_internal(omega_rad_s: f64) -> f64 {
    omega_rad_s * T0_S
}

/// Length, m -> internal.
pub fn length_to_internal(z_m: f64) -> f64 {
    z_m / L0_M
}

/// Length, internal -> m.
pub fn length_to_si(z_int: f64) -> f64 {
    z_int * L0_M
}

/// Time, s -> internal.
pub fn time_to_internal(t_s: f64) -> f64 {
    t_s / T0_S
}

/// Time, internal -> s.
pub fn time_to_si(t_int: f64) -> f64 {
    t_int * T0_S
}

/// Velocity, internal -> m/s.
pub fn velocity_to_si(v_int: f64) -> f64 {
    v_int * L0_M / T0_S
}

/// Detuning slope of a gradient, rad/s per internal length:
/// gamma [rad/(s G)] x dB/dz [G/cm] converted to G per internal length, then
/// to internal angular frequency.
pub fn gradient_slope_internal(gamma_rad_s_g: f64, dbdz_g_per_cm: f64) -> f64 {
    let dbdz_g_per_m = dbdz_g_per_cm * 100.0;
    freq_to_internal(gamma_rad_s_g * dbdz_g_per_m * L0_M)
}

/// Fundamental single-particle constants. Mass is fixed to 87Rb; the
/// gyromagnetic ratio is configurable (signed).
#[derive(Debug, Clone, Copy)]
pub struct PhysicalConstants {
    pub hbar: f64,
    pub mass_kg: f64,
    /// Signed gyromagnetic ratio, rad/(s G).
    pub gamma_rad_per_s_gauss: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        PhysicalConstants {
            hbar: HBAR,
            mass_kg: MASS_RB87_KG,
            gamma_rad_per_s_gauss: GAMMA_RB87_F1_RAD_PER_S_G,
        }
    }
}

impl PhysicalConstants {
    /// Validate: hbar and mass strictly positive, gamma nonzero and finite.
    pub fn validate(&self) -> Result<()> {
        if !(self.hbar > 0.0) || !(self.mass_kg > 0.0) {
            return Err(Error::Validation("hbar and mass must be strictly positive".into()));
        }
        if !self.gamma_rad_per_s_gauss.is_finite() || self.gamma_rad_per_s_gauss == 0.0 {
            return Err(Error::Validation("gamma must be finite and nonzero".into()));
        }
        Ok(())
    }
}

/// Choice of quasi-1D interaction term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NonlinearityModel {
    /// Transverse-Thomas-Fermi corrected coupling: mu(n1) = 2 hbar w_r sqrt(a n1).
    /// Calibrated choice — reproduces the target healing length and cloud radius.
    #[default]
    EffectiveOneD,
    /// Plain cubic coupling g_1D = 2 hbar w_r a (fallback; underestimates the
    /// cloud radius at these densities).
    PlainCubic,
}

/// Trap, atom number, and interaction parameters of one condensate.
#[derive(Debug, Clone, Copy)]
pub struct CondensateParams {
    /// Atom number (carried in the coupling constant, not the field norm).
    pub atoms: f64,
    /// Axial trap angular frequency, rad/s.
    pub omega_z_rad_s: f64,
    /// Radial trap angular frequency, rad/s.
    pub omega_r_rad_s: f64,
    /// s-wave scattering length, m.
    pub scattering_length_m: f64,
    pub nonlinearity: NonlinearityModel,
}

impl CondensateParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.atoms >= 0.0) {
            return Err(Error::Validation("atom number must be non-negative".into()));
        }
        if !(self.omega_z_rad_s > 0.0) || !(self.omega_r_rad_s > 0.0) {
            return Err(Error::Validation("trap frequencies must be strictly positive".into()));
        }
        if !(self.scattering_length_m > 0.0) {
            return Err(Error::Validation("scattering length must be strictly positive".into()));
        }
        Ok(())
    }

    /// Axial trap frequency in internal units.
    pub fn omega_z_internal(&self) -> f64 {
        freq_to_internal(self.omega_z_rad_s)
    }

    /// Radial trap frequency in internal units.
    pub fn omega_r_internal(&self) -> f64 {
        freq_to_internal(self.omega_r_rad_s)
    }

    /// Scattering length in internal units.
    pub fn scattering_length_internal(&self) -> f64 {
        self.scattering_length_m / L0_M
    }
}

/// Local chemical potential of the interaction term, internal units, given the
/// 1D density n1 (atoms per internal length).
pub fn mu_nonlinear_internal(
    model: NonlinearityModel,
    omega_r_int: f64,
    a_int: f64,
    n1_int: f64,
) -> f64 {
    let n1 = n1_int.max(0.0);
    match model {
        NonlinearityModel::EffectiveOneD => 2.0 * omega_r_int * (a_int * n1).sqrt(),
        NonlinearityModel::PlainCubic => 2.0 * omega_r_int * a_int * n1,
    }
}

/// Interaction energy density (internal units) whose density derivative is
/// `mu_nonlinear_internal`. Used by the energy functional.
pub fn interaction_energy_density_internal(
    model: NonlinearityModel,
    omega_r_int: f64,
    a_int: f64,
    n1_int: f64,
) -> f64 {
    let n1 = n1_int.max(0.0);
    match model {
        NonlinearityModel::EffectiveOneD => {
            (4.0 / 3.0) * omega_r_int * a_int.sqrt() * n1.powf(1.5)
        }
        NonlinearityModel::PlainCubic => omega_r_int * a_int * n1 * n1,
    }
}

/// Bulk healing length for a 3D density, m: xi = 1/sqrt(8 pi n a).
pub fn healing_length_m(n_3d_per_m3: f64, a_m: f64) -> f64 {
    1.0 / (8.0 * std::f64::consts::PI * n_3d_per_m3 * a_m).sqrt()
}

/// Characteristic length and speed scales of a condensate, SI.
#[derive(Debug, Clone, Copy)]
pub struct DerivedScales {
    /// Healing length at peak density, m. None when the cloud is
    /// non-interacting (N = 0, linear regime).
    pub xi_m: Option<f64>,
    /// Speed of sound at peak density, m/s (bulk convention c = sqrt(mu/m),
    /// consistent with xi = hbar/(sqrt(2) m c)).
    pub c_m_per_s: Option<f64>,
    /// Healing time t_xi = xi/c, s.
    pub t_xi_s: Option<f64>,
    /// Thomas-Fermi radius, m (analytic, or fitted when derived from a solved state).
    pub z_tf_m: f64,
    /// Peak effective 3D density, 1/m^3.
    pub n_peak_3d_per_m3: f64,
    /// Chemical potential at the cloud center, J.
    pub mu_chem_j: f64,
}

impl DerivedScales {
    /// Analytic Thomas-Fermi estimate from trap and interaction parameters.
    pub fn analytic(params: &CondensateParams) -> Result<Self> {
        params.validate()?;
        let wz = params.omega_z_internal();
        let wr = params.omega_r_internal();
        let a = params.scattering_length_internal();
        let n = params.atoms;
        if n == 0.0 {
            // Linear regime: the cloud is the harmonic-oscillator ground state.
            let a_ho = 1.0 / wz.sqrt();
            return Ok(DerivedScales {
                xi_m: None,
                c_m_per_s: None,
                t_xi_s: None,
                z_tf_m: length_to_si(a_ho),
                n_peak_3d_per_m3: 0.0,
                mu_chem_j: 0.5 * wz / T0_S * HBAR,
            });
        }
        let z_tf = match params.nonlinearity {
            NonlinearityModel::EffectiveOneD => {
                (15.0 * a * wr * wr * n / (wz * wz * wz * wz)).powf(0.2)
            }
            NonlinearityModel::PlainCubic => {
                let g = 2.0 * wr * a;
                (3.0 * g * n / (2.0 * wz * wz)).powf(1.0 / 3.0)
            }
        };
        let mu = 0.5 * wz * wz * z_tf * z_tf;
        Ok(Self::from_mu_internal(params, mu, length_to_si(z_tf)))
    }

    /// Scales from a measured peak 1D density (atoms per internal length) and a
    /// fitted Thomas-Fermi radius, SI meters. Used with a solved ground state.
    pub fn from_peak_density(params: &CondensateParams, n1_peak_int: f64, z_tf_m: f64) -> Self {
        let wr = params.omega_r_internal();
        let a = params.scattering_length_internal();
        let mu = mu_nonlinear_internal(params.nonlinearity, wr, a, n1_peak_int);
        Self::from_mu_internal(params, mu, z_tf_m)
    }

    /// Common back end: everything follows from the central chemical potential.
    fn from_mu_internal(params: &CondensateParams, mu_int: f64, z_tf_m: f64) -> Self {
        let a = params.scattering_length_internal();
        // Peak 3D density via the local-density relation g_3D n_3D = mu with
        // g_3D = 4 pi a (internal units), then xi and c from that density.
        let n0_3d_int = mu_int / (4.0 * std::f64::consts::PI * a);
        let xi_int = 1.0 / (8.0 * std::f64::consts::PI * n0_3d_int * a).sqrt();
        let c_int = mu_int.sqrt();
        DerivedScales {
            xi_m: Some(length_to_si(xi_int)),
            c_m_per_s: Some(velocity_to_si(c_int)),
            t_xi_s: Some(time_to_si(xi_int / c_int)),
            z_tf_m,
            n_peak_3d_per_m3: n0_3d_int / (L0_M * L0_M * L0_M),
            mu_chem_j: mu_int / T0_S * HBAR,
        }
    }

    /// Healing length in internal units; error in the linear regime.
    pub fn xi_internal(&self) -> Result<f64> {
        self.xi_m
            .map(length_to_internal)
            .ok_or_else(|| Error::Config("healing length unavailable in the linear (N = 0) regime".into()))
    }

    /// Thomas-Fermi radius in internal units.
    pub fn z_tf_internal(&self) -> f64 {
        length_to_internal(self.z_tf_m)
    }

    /// Sound speed in internal units; error in the linear regime.
    pub fn c_internal(&self) -> Result<f64> {
        self.c_m_per_s
            .map(|c| c / L0_M * T0_S)
            .ok_or_else(|| Error::Config("sound speed unavailable in the linear (N = 0) regime".into()))
    }
}
