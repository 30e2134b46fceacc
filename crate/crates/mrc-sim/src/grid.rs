//! Spatial grid: power-of-two spectral grid sized from the condensate scales.

use crate::error::{Error, Result};
use crate::units::{length_to_internal, DerivedScales, L0_M};

/// Default cap on the number of grid points (resource guard).
pub const DEFAULT_MAX_POINTS: usize = 1 << 22;

/// One-dimensional uniform grid with spectral wavenumbers.
#[derive(Debug, Clone)]
pub struct Grid {
    pub num_points: usize,
    /// Left edge, m.
    pub z_min_m: f64,
    /// Right edge, m (z_max = z_min + num_points * dz; the point z_max itself
    /// is not stored — the domain is periodic for the spectral kinetic step).
    pub z_max_m: f64,
    /// Spacing, m.
    pub dz_m: f64,
    /// FFT wavenumbers, rad/m, in FFT ordering.
    pub wavenumbers_rad_per_m: Vec<f64>,
    /// Cached coordinates in internal units (z[num_points/2] = 0).
    z_internal: Vec<f64>,
}

impl Grid {
    /// Smallest power-of-two grid with dz <= xi/pointsPerXi spanning at least
    /// +-paddingFactor * z_TF.
    pub fn from_scales(
        scales: &DerivedScales,
        points_per_xi: f64,
        padding_factor: f64,
        max_points: usize,
    ) -> Result<Self> {
        if !(points_per_xi >= 4.0) {
            return Err(Error::Validation(format!(
                "points_per_xi must be >= 4 (soliton-scale resolution), got {points_per_xi}"
            )));
        }
        if !(padding_factor >= 1.4) {
            return Err(Error::Validation(format!(
                "padding_factor must be >= 1.4 (room for slice edges and sound), got {padding_factor}"
            )));
        }
        let xi = scales.xi_internal()?;
        let half = padding_factor * scales.z_tf_internal();
        let dz_max = xi / points_per_xi;
        let required = (2.0 * half / dz_max).ceil() as usize;
        let num_points = required.next_power_of_two();
        if num_points > max_points {
            return Err(Error::Resource(format!(
                "grid of {num_points} points exceeds the cap of {max_points}"
            )));
        }
        let grid = Self::from_raw(num_points, -half * L0_M, 2.0 * half * L0_M / num_points as f64)?;
        debug_assert!(grid.dz_m / L0_M <= dz_max * (1.0 + 1e-12));
        Ok(grid)
    }

    /// Build directly from a point count (power of two), left edge, and spacing.
    pub fn from_raw(num_points: usize, z_min_m: f64, dz_m: f64) -> Result<Self> {
        if num_points == 0 || !num_points.is_power_of_two() {
            return Err(Error::Validation(format!(
                "num_points must be a nonzero power of two, got {num_points}"
            )));
        }
        if !(dz_m > 0.0) || !z_min_m.is_finite() {
            return Err(Error::Validation("grid spacing must be positive and edges finite".into()));
        }
        let n = num_points;
        let z_max_m = z_min_m + n as f64 * dz_m;
        // FFT ordering: k[i] = 2 pi i / (N dz) for i < N/2, negative branch after.
        let mut wavenumbers = Vec::with_capacity(n);
        let dk = 2.0 * std::f64::consts::PI / (n as f64 * dz_m);
        for i in 0..n {
            let idx = if i < n / 2 { i as f64 } else { i as f64 - n as f64 };
            wavenumbers.push(idx * dk);
        }
        let z_internal =
            (0..n).map(|i| length_to_internal(z_min_m + i as f64 * dz_m)).collect();
        Ok(Grid {
            num_points,
            z_min_m,
            z_max_m,
            dz_m,
            wavenumbers_rad_per_m: wavenumbers,
            z_internal,
        })
    }

    /// Coordinates in internal units.
    pub fn z_internal(&self) -> &[f64] {
        &self.z_internal
    }

    /// Spacing in internal units.
    pub fn dz_internal(&self) -> f64 {
        self.dz_m / L0_M
    }

    /// Wavenumbers in internal units (rad per internal length).
    pub fn wavenumbers_internal(&self) -> Vec<f64> {
        self.wavenumbers_rad_per_m.iter().map(|k| k * L0_M).collect()
    }

    /// Index of the grid point closest to the given internal coordinate.
    pub fn index_of(&self, z_int: f64) -> usize {
        let i = ((z_int - self.z_internal[0]) / self.dz_internal()).round();
        (i.max(0.0) as usize).min(self.num_points - 1)
    }
}
