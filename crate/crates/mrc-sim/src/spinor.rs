//! Three-component condensate wavefunction and its basic observables.
//!
//! Amplitudes are dimensionless in internal units with the total norm
//! sum_m integral |psi_m|^2 dz = 1 at preparation time; atom number lives in
//! the coupling constant. Norm may only decrease afterwards (projection).

use std::sync::Arc;

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::units::L0_M;

/// Density mask threshold relative to the peak: below this the phase (and the
/// transfer fraction) are undefined. Keeps black-soliton zeros from polluting
/// phase measurements.
pub const PHASE_MASK_RELATIVE: f64 = 1e-6;

/// Spin component index, in storage order (m = -1, 0, +1).
pub const M_MINUS: usize = 0;
pub const M_ZERO: usize = 1;
pub const M_PLUS: usize = 2;

/// Three-component wavefunction on a grid.
#[derive(Debug, Clone)]
pub struct SpinorField {
    pub grid: Arc<Grid>,
    /// Component amplitudes in storage order (m = -1, 0, +1).
    pub comps: [Vec<C64>; 3],
    /// Simulation time, s.
    pub time_s: f64,
}

impl SpinorField {
    /// All population in m = -1 with the given real profile, normalized.
    pub fn from_minus_profile(grid: Arc<Grid>, profile: &[f64]) -> Result<Self> {
        if profile.len() != grid.num_points {
            return Err(Error::Validation("profile length does not match grid".into()));
        }
        let mut field = SpinorField {
            comps: [
                profile.iter().map(|&x| C64::new(x, 0.0)).collect(),
                vec![C64::new(0.0, 0.0); grid.num_points],
                vec![C64::new(0.0, 0.0); grid.num_points],
            ],
            grid,
            time_s: 0.0,
        };
        let n = field.total_norm();
        if !(n > 0.0) {
            return Err(Error::Validation("profile has zero norm".into()));
        }
        let s = 1.0 / n.sqrt();
        for c in field.comps[M_MINUS].iter_mut() {
            *c *= s;
        }
        Ok(field)
    }

    /// Norm of one component: integral |psi_m|^2 dz (internal units).
    pub fn component_norm(&self, m: usize) -> f64 {
        let dz = self.grid.dz_internal();
        self.comps[m].iter().map(|c| c.norm_sqr()).sum::<f64>() * dz
    }

    /// Total norm over all components.
    pub fn total_norm(&self) -> f64 {
        (0..3).map(|m| self.component_norm(m)).sum()
    }

    /// Pointwise total density |psi|^2 in internal units (per internal length).
    pub fn total_density_internal(&self) -> Vec<f64> {
        let n = self.grid.num_points;
        let mut out = vec![0.0; n];
        for m in 0..3 {
            for (o, c) in out.iter_mut().zip(&self.comps[m]) {
                *o += c.norm_sqr();
            }
        }
        out
    }

    /// True when a component carries no population at all (skippable in
    /// propagation).
    pub fn component_is_empty(&self, m: usize) -> bool {
        self.comps[m].iter().all(|c| c.re == 0.0 && c.im == 0.0)
    }

    /// Zero the amplitudes of every component not in `keep` (m values in
    /// {-1, 0, +1}). Atoms are removed: the norm is NOT restored.
    pub fn project(&mut self, keep: &[i32]) -> Result<()> {
        if keep.is_empty() {
            return Err(Error::Validation("projection must keep at least one component".into()));
        }
        for &m in keep {
            if !(-1..=1).contains(&m) {
                return Err(Error::Validation(format!("unknown spin component {m}")));
            }
        }
        for (idx, m_val) in [(-1_i32, M_MINUS), (0, M_ZERO), (1, M_PLUS)] {
            if !keep.contains(&idx) {
                self.comps[m_val].fill(C64::new(0.0, 0.0));
            }
        }
        Ok(())
    }
}

/// Derived pointwise observables of a snapshot.
#[derive(Debug, Clone)]
pub struct Observables {
    /// Norm per component, storage order.
    pub component_norms: [f64; 3],
    /// Total density, 1/m.
    pub total_density_per_m: Vec<f64>,
    /// Per-component densities, 1/m.
    pub component_densities_per_m: [Vec<f64>; 3],
    /// Unwrapped phase of the chosen component, rad; NaN where masked.
    pub phase_rad: Vec<f64>,
    /// True where the chosen component's density exceeds the mask threshold.
    pub phase_mask: Vec<bool>,
    /// 1 - |psi_-1|^2 / total density where total density is unmasked; NaN elsewhere.
    pub transfer_fraction: Vec<f64>,
}

/// Compute observables; phase is taken from `phase_component` (storage index).
pub fn observables(state: &SpinorField, phase_component: usize) -> Observables {
    let n = state.grid.num_points;
    let to_si = 1.0 / L0_M;
    let component_norms = [
        state.component_norm(0),
        state.component_norm(1),
        state.component_norm(2),
    ];
    let component_densities_per_m: [Vec<f64>; 3] = std::array::from_fn(|m| {
        state.comps[m].iter().map(|c| c.norm_sqr() * to_si).collect()
    });
    let mut total_density_per_m = vec![0.0; n];
    for m in 0..3 {
        for (t, d) in total_density_per_m.iter_mut().zip(&component_densities_per_m[m]) {
            *t += d;
        }
    }

    // Phase: mask on the chosen component's own density, unwrap left to right
    // across the unmasked points (gaps are skipped, continuity carries over).
    let comp = &state.comps[phase_component];
    let peak = comp.iter().map(|c| c.norm_sqr()).fold(0.0, f64::max);
    let threshold = PHASE_MASK_RELATIVE * peak;
    let phase_mask: Vec<bool> = comp.iter().map(|c| c.norm_sqr() > threshold).collect();
    let mut phase_rad = vec![f64::NAN; n];
    let mut prev: Option<f64> = None;
    for i in 0..n {
        if !phase_mask[i] {
            continue;
        }
        let raw = comp[i].arg();
        let unwrapped = match prev {
            None => raw,
            Some(p) => {
                let mut v = raw;
                let two_pi = 2.0 * std::f64::consts::PI;
                v += ((p - v) / two_pi).round() * two_pi;
                v
            }
        };
        phase_rad[i] = unwrapped;
        prev = Some(unwrapped);
    }

    // Transfer fraction: defined where total density is above the mask level.
    let total_peak = total_density_per_m.iter().cloned().fold(0.0, f64::max);
    let total_threshold = PHASE_MASK_RELATIVE * total_peak;
    let transfer_fraction = (0..n)
        .map(|i| {
            let t = total_density_per_m[i];
            if t > total_threshold {
                1.0 - component_densities_per_m[M_MINUS][i] / t
            } else {
                f64::NAN
            }
        })
        .collect();

    Observables {
        component_norms,
        total_density_per_m,
        component_densities_per_m,
        phase_rad,
        phase_mask,
        transfer_fraction,
    }
}
