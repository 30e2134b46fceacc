//! Quantitative extraction from snapshots: transfer-slice sharpness, phase
//! steps, soliton detection/tracking, and sound-wave diagnostics. Everything
//! here is a pure function over spinor fields so stored snapshots can be
//! re-analyzed without re-simulation.

use crate::error::{Error, Result};
use crate::pulse::HsPulse;
use crate::spinor::SpinorField;
use crate::units::L0_M;
use std::f64::consts::PI;

/// Fraction of the peak component density below which a point is treated as
/// "outside the condensate" for phase and transfer measurements.
const DENSITY_MASK_FRAC: f64 = 1e-3;

/// Spatial transfer profile after the first pulse, with the fitted 10%/90%
/// crossing positions on the inner slice edge.
#[derive(Debug, Clone)]
pub struct SliceSharpness {
    pub profile_z_m: Vec<f64>,
    /// Local fraction of the population moved out of m = −1, masked to NaN
    /// where the total density is negligible.
    pub profile_fraction: Vec<f64>,
    pub z90_m: Option<f64>,
    pub z10_m: Option<f64>,
    /// 10%–90% rise distance on the inner slice edge; None when the edge
    /// lies outside the condensate.
    pub delta_z_measured_m: Option<f64>,
    /// Slice thickness from the pulse's design formula.
    pub delta_z_predicted_m: f64,
    /// Resolution Δz/δz with the measured rise distance.
    pub resolution_measured: Option<f64>,
}

/// One density notch: position, fractional depth relative to the local
/// background, width, and the phase step across it (None when the
/// surrounding plateaus are not measurable).
#[derive(Debug, Clone)]
pub struct SolitonDetection {
    pub position_m: f64,
    /// 1 − n/background at the refined minimum, in (0, 1].
    pub depth: f64,
    /// Full width at half depth, by linear interpolation of the density
    /// ratio; NaN when a half-depth crossing falls outside the valid domain.
    pub fwhm_m: f64,
    pub phase_step_rad: Option<f64>,
}

/// Detections associated into per-soliton trajectories.
#[derive(Debug, Clone)]
pub struct SolitonTrack {
    pub times_s: Vec<f64>,
    /// positions_m[traj][frame]; NaN where the soliton was not detected.
    pub positions_m: Vec<Vec<f64>>,
    /// Finite-difference velocities on the frame grid (central in the
    /// interior, one-sided at the ends); NaN where positions are missing.
    pub velocities_m_s: Vec<Vec<f64>>,
    /// Frames where two assignments were nearly equally good.
    pub ambiguous_frames: Vec<usize>,
}

fn component_index(component: i32) -> Result<usize> {
    match component {
        -1 => Ok(0),
        0 => Ok(1),
        1 => Ok(2),
        other => Err(Error::Validation(format!("unknown spin component {other}"))),
    }
}

/// Local fraction of the population transferred out of m = −1,
/// (n₀ + n₊)/n_total, NaN where the total density is below the mask.
pub fn local_transfer_fraction(state: &SpinorField) -> Vec<f64> {
    let n_tot = state.total_density_internal();
    let peak = n_tot.iter().cloned().fold(0.0f64, f64::max);
    let floor = DENSITY_MASK_FRAC * peak;
    (0..state.grid.num_points)
        .map(|j| {
            if n_tot[j] <= floor {
                return f64::NAN;
            }
            let n_minus = state.comps[0][j].norm_sqr();
            (1.0 - n_minus / n_tot[j]).clamp(0.0, 1.0)
        })
        .collect()
}

/// Linear interpolation of the z where `f` crosses `level` between samples
/// j and j+1.
fn cross_z(z: &[f64], f: &[f64], j: usize, level: f64) -> f64 {
    let (f0, f1) = (f[j], f[j + 1]);
    if (f1 - f0).abs() < f64::MIN_POSITIVE {
        return z[j];
    }
    z[j] + (level - f0) / (f1 - f0) * (z[j + 1] - z[j])
}

/// 10%–90% sharpness of the population-transfer edge on the inner slice
/// boundary of `pulse`, measured on the state right after the first pulse.
/// The predicted slice thickness always comes back; the measured rise
/// distance is None when the inner edge is not inside the condensate.
pub fn measure_slice_sharpness(
    state: &SpinorField,
    pulse: &HsPulse,
    gamma_rad_per_s_g: f64,
) -> Result<SliceSharpness> {
    let fraction = local_transfer_fraction(state);
    let z_m: Vec<f64> = state.grid.z_internal().iter().map(|&x| x * L0_M).collect();
    let delta_z_predicted_m = crate::pulse::slice_thickness_m(pulse, gamma_rad_per_s_g);
    let (lo_m, hi_m) = crate::pulse::slice_edges_m(pulse, gamma_rad_per_s_g);
    let center_m = 0.5 * (lo_m + hi_m);
    // The inner edge is the slice boundary nearer the trap center.
    let inner_m = if lo_m.abs() < hi_m.abs() { lo_m } else { hi_m };
    // Scan a window around the inner edge, walking outward from the slice
    // interior: the last point still above 90% and the first below 10%.
    let window = 0.25 * delta_z_predicted_m;
    let outward_sign = (inner_m - center_m).signum();
    let mut indices: Vec<usize> = (0..z_m.len())
        .filter(|&j| (z_m[j] - inner_m).abs() <= window && fraction[j].is_finite())
        .collect();
    indices.sort_by(|&a, &b| {
        let ka = (z_m[a] - center_m) * outward_sign;
        let kb = (z_m[b] - center_m) * outward_sign;
        ka.partial_cmp(&kb).unwrap()
    });
    let mut z90 = None;
    let mut z10 = None;
    for w in indices.windows(2) {
        let (j0, j1) = (w[0], w[1]);
        let (f0, f1) = (fraction[j0], fraction[j1]);
        if z90.is_none() && f0 >= 0.9 && f1 < 0.9 {
            z90 = Some(cross_interp(z_m[j0], z_m[j1], f0, f1, 0.9));
        }
        if z90.is_some() && z10.is_none() && f0 > 0.1 && f1 <= 0.1 {
            z10 = Some(cross_interp(z_m[j0], z_m[j1], f0, f1, 0.1));
        }
    }
    let delta_z_measured_m = match (z90, z10) {
        (Some(a), Some(b)) => Some((b - a).abs()),
        _ => None,
    };
    Ok(SliceSharpness {
        profile_z_m: z_m,
        profile_fraction: fraction,
        z90_m: z90,
        z10_m: z10,
        delta_z_measured_m,
        delta_z_predicted_m,
        resolution_measured: delta_z_measured_m.map(|dz| delta_z_predicted_m / dz),
    })
}

fn cross_interp(z0: f64, z1: f64, f0: f64, f1: f64, level: f64) -> f64 {
    if (f1 - f0).abs() < f64::MIN_POSITIVE {
        return z0;
    }
    z0 + (level - f0) / (f1 - f0) * (z1 - z0)
}

/// Phase discontinuity across `step_location_m` in the given component:
/// mean unwrapped phase over [z₀+3ξ, z₀+10ξ] minus the mean over
/// [z₀−10ξ, z₀−3ξ], reduced to (−π, π]. Errors when either plateau has
/// fewer than three points above the density mask.
pub fn measure_phase_step(
    state: &SpinorField,
    component: i32,
    step_location_m: f64,
    xi_m: f64,
) -> Result<f64> {
    if !(xi_m > 0.0) {
        return Err(Error::Validation(format!(
            "healing length must be positive, got {xi_m}"
        )));
    }
    let idx = component_index(component)?;
    let psi = &state.comps[idx];
    let peak = psi.iter().map(|c| c.norm_sqr()).fold(0.0f64, f64::max);
    if peak <= 0.0 {
        return Err(Error::Measurement(format!(
            "component m = {component} is empty; no phase to measure"
        )));
    }
    let floor = DENSITY_MASK_FRAC * peak;
    let z = state.grid.z_internal();
    let z0 = step_location_m / L0_M;
    let xi = xi_m / L0_M;
    let mean_side = |lo: f64, hi: f64| -> Result<f64> {
        let mut acc = 0.0f64;
        let mut prev: Option<f64> = None;
        let mut sum = 0.0f64;
        let mut count = 0usize;
        for j in 0..z.len() {
            if z[j] < lo || z[j] > hi || psi[j].norm_sqr() <= floor {
                continue;
            }
            let ph = psi[j].arg();
            let unwrapped = match prev {
                None => ph,
                Some(p) => {
                    let mut d = ph - (p - acc);
                    d -= 2.0 * PI * (d / (2.0 * PI)).round();
                    p + d
                }
            };
            acc = unwrapped - ph;
            prev = Some(unwrapped);
            sum += unwrapped;
            count += 1;
        }
        if count < 3 {
            return Err(Error::Measurement(format!(
                "phase plateau [{:.2}, {:.2}] μm has only {count} usable points",
                lo * L0_M * 1e6,
                hi * L0_M * 1e6
            )));
        }
        Ok(sum / count as f64)
    };
    let right = mean_side(z0 + 3.0 * xi, z0 + 10.0 * xi)?;
    let left = mean_side(z0 - 10.0 * xi, z0 - 3.0 * xi)?;
    let mut step = right - left;
    step -= 2.0 * PI * (step / (2.0 * PI)).round();
    if step <= -PI {
        step += 2.0 * PI;
    }
    Ok(step)
}

/// Background density for a frame: the solved ground-state profile rescaled
/// by the frame's total norm (projection removes atoms; the trap profile
/// does not re-equilibrate on soliton timescales).
fn scaled_background(frame: &SpinorField, ground: &SpinorField) -> Result<Vec<f64>> {
    if frame.grid.num_points != ground.grid.num_points
        || (frame.grid.dz_internal() - ground.grid.dz_internal()).abs()
            > 1e-12 * ground.grid.dz_internal()
    {
        return Err(Error::Validation(
            "frame and ground state live on different grids".into(),
        ));
    }
    let gnorm = ground.total_norm();
    if gnorm <= 0.0 {
        return Err(Error::Validation("ground state has zero norm".into()));
    }
    let scale = frame.total_norm() / gnorm;
    Ok(ground
        .total_density_internal()
        .iter()
        .map(|&n| n * scale)
        .collect())
}

/// Density notches deeper than half the local background inside the inner
/// 90% of the Thomas-Fermi radius: parabolic position refinement, FWHM from
/// half-depth crossings, detections closer than ξ merged (deepest wins), and
/// the phase step across each notch measured on the dominant component.
/// The outer 10% of the cloud is excluded for the same reason it is excluded
/// from the sound diagnostic: the background density vanishes there, so the
/// density ratio is dominated by edge breathing rather than by notches.
pub fn detect_solitons(
    frame: &SpinorField,
    ground: &SpinorField,
    xi_m: f64,
    z_tf_m: f64,
) -> Result<Vec<SolitonDetection>> {
    let bg = scaled_background(frame, ground)?;
    let n = frame.total_density_internal();
    let z = frame.grid.z_internal();
    let bg_peak = bg.iter().cloned().fold(0.0f64, f64::max);
    let bg_floor = 0.01 * bg_peak;
    let z_cut = 0.9 * z_tf_m / L0_M;
    let valid = |j: usize| bg[j] > bg_floor && z[j].abs() <= z_cut;
    let ratio: Vec<f64> = (0..n.len())
        .map(|j| if valid(j) { n[j] / bg[j] } else { f64::NAN })
        .collect();
    let dominant_idx = (0..3usize)
        .max_by(|&a, &b| {
            frame
                .component_norm(a)
                .partial_cmp(&frame.component_norm(b))
                .unwrap()
        })
        .unwrap();
    let dominant = dominant_idx as i32 - 1;

    let mut found: Vec<(f64, f64)> = Vec::new(); // (position internal, ratio at min)
    for j in 1..ratio.len() - 1 {
        let (rl, r0, rr) = (ratio[j - 1], ratio[j], ratio[j + 1]);
        if !(rl.is_finite() && r0.is_finite() && rr.is_finite()) {
            continue;
        }
        if r0 < 0.5 && r0 < rl && r0 <= rr {
            // Parabolic refinement through the three samples.
            let denom = rl - 2.0 * r0 + rr;
            let (zc, rc) = if denom.abs() > f64::MIN_POSITIVE {
                let shift = 0.5 * (rl - rr) / denom;
                (
                    z[j] + shift * frame.grid.dz_internal(),
                    r0 - 0.25 * (rl - rr) * shift,
                )
            } else {
                (z[j], r0)
            };
            found.push((zc, rc.clamp(0.0, 1.0)));
        }
    }
    // Merge detections closer than one healing length, keeping the deeper.
    let xi = xi_m / L0_M;
    found.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for cand in found {
        match merged.last_mut() {
            Some(last) if (cand.0 - last.0).abs() < xi => {
                if cand.1 < last.1 {
                    *last = cand;
                }
            }
            _ => merged.push(cand),
        }
    }

    let mut out = Vec::with_capacity(merged.len());
    for (zc, rc) in merged {
        let depth = 1.0 - rc;
        let half_level = 1.0 - 0.5 * depth;
        let jc = ((zc - z[0]) / frame.grid.dz_internal()).round() as usize;
        let jc = jc.min(ratio.len() - 1);
        let mut left = f64::NAN;
        let mut right = f64::NAN;
        for j in (1..=jc).rev() {
            if !ratio[j - 1].is_finite() {
                break;
            }
            if ratio[j - 1] >= half_level && ratio[j] < half_level {
                left = cross_z(z, &ratio, j - 1, half_level);
                break;
            }
        }
        for j in jc..ratio.len() - 1 {
            if !ratio[j + 1].is_finite() {
                break;
            }
            if ratio[j] < half_level && ratio[j + 1] >= half_level {
                right = cross_z(z, &ratio, j, half_level);
                break;
            }
        }
        let fwhm_m = if left.is_finite() && right.is_finite() {
            (right - left) * L0_M
        } else {
            f64::NAN
        };
        let position_m = zc * L0_M;
        let phase_step_rad = measure_phase_step(frame, dominant, position_m, xi_m).ok();
        out.push(SolitonDetection {
            position_m,
            depth,
            fwhm_m,
            phase_step_rad,
        });
    }
    Ok(out)
}

/// Associate detections across frames into trajectories by minimal total
/// displacement from the last known positions. The trajectory count is set
/// by the first frame; frames where the best and second-best assignments
/// differ by less than a grid-scale margin are flagged ambiguous.
pub fn track_solitons(frames: &[(f64, Vec<SolitonDetection>)]) -> Result<SolitonTrack> {
    if frames.len() < 2 {
        return Err(Error::Validation(format!(
            "tracking needs at least two frames, got {}",
            frames.len()
        )));
    }
    let k = frames[0].1.len();
    if k == 0 {
        return Err(Error::Validation(
            "no solitons detected in the first frame".into(),
        ));
    }
    let times_s: Vec<f64> = frames.iter().map(|f| f.0).collect();
    let mut positions: Vec<Vec<f64>> = vec![vec![f64::NAN; frames.len()]; k];
    let mut last_known: Vec<f64> = frames[0].1.iter().map(|d| d.position_m).collect();
    let mut ambiguous = Vec::new();
    for (fi, (_, dets)) in frames.iter().enumerate() {
        let cand: Vec<f64> = dets.iter().map(|d| d.position_m).collect();
        if cand.is_empty() {
            continue;
        }
        // Cost of assigning trajectory slots to candidates, over all
        // injective slot→candidate maps (k ≤ 3 in practice, brute force).
        let mut best: Option<(f64, Vec<Option<usize>>)> = None;
        let mut second = f64::INFINITY;
        let assignments = enumerate_assignments(k, cand.len());
        for asg in &assignments {
            let mut cost = 0.0;
            for (slot, &c) in asg.iter().enumerate() {
                if let Some(ci) = c {
                    cost += (cand[ci] - last_known[slot]).abs();
                } else {
                    // Leaving a slot unmatched is penalized so matches are
                    // preferred whenever candidates exist.
                    cost += 1e-3;
                }
            }
            match &best {
                Some((bc, _)) if cost >= *bc => second = second.min(cost),
                _ => {
                    if let Some((bc, _)) = &best {
                        second = second.min(*bc);
                    }
                    best = Some((cost, asg.clone()));
                }
            }
        }
        let (best_cost, asg) = best.unwrap();
        if (second - best_cost).abs() < 1e-7 && assignments.len() > 1 {
            ambiguous.push(fi);
        }
        for (slot, &c) in asg.iter().enumerate() {
            if let Some(ci) = c {
                positions[slot][fi] = cand[ci];
                last_known[slot] = cand[ci];
            }
        }
    }
    let velocities = positions
        .iter()
        .map(|p| finite_difference(&times_s, p))
        .collect();
    Ok(SolitonTrack {
        times_s,
        positions_m: positions,
        velocities_m_s: velocities,
        ambiguous_frames: ambiguous,
    })
}

/// All injective maps from `slots` trajectory slots into `cands` candidate
/// indices (None = unmatched slot when candidates run short).
fn enumerate_assignments(slots: usize, cands: usize) -> Vec<Vec<Option<usize>>> {
    let mut out = Vec::new();
    let mut current: Vec<Option<usize>> = vec![None; slots];
    fn recurse(
        slot: usize,
        slots: usize,
        cands: usize,
        used: &mut Vec<bool>,
        current: &mut Vec<Option<usize>>,
        out: &mut Vec<Vec<Option<usize>>>,
    ) {
        if slot == slots {
            out.push(current.clone());
            return;
        }
        for c in 0..cands {
            if !used[c] {
                used[c] = true;
                current[slot] = Some(c);
                recurse(slot + 1, slots, cands, used, current, out);
                used[c] = false;
            }
        }
        if cands < slots {
            current[slot] = None;
            recurse(slot + 1, slots, cands, used, current, out);
        }
    }
    let mut used = vec![false; cands];
    recurse(0, slots, cands, &mut used, &mut current, &mut out);
    out
}

fn finite_difference(t: &[f64], x: &[f64]) -> Vec<f64> {
    let n = t.len();
    let mut v = vec![f64::NAN; n];
    for i in 0..n {
        let (a, b) = if i == 0 {
            (i, i + 1)
        } else if i == n - 1 {
            (i - 1, i)
        } else {
            (i - 1, i + 1)
        };
        if b < n && x[a].is_finite() && x[b].is_finite() && t[b] > t[a] {
            v[i] = (x[b] - x[a]) / (t[b] - t[a]);
        }
    }
    v
}

/// Normalized velocity cross-correlation at zero lag, Σv₁v₂/√(Σv₁²·Σv₂²),
/// over frames up to `t_max_s`. Pairs with a missing velocity are skipped.
pub fn velocity_zero_lag_correlation(track: &SolitonTrack, t_max_s: f64) -> Result<f64> {
    if track.velocities_m_s.len() < 2 {
        return Err(Error::Measurement(format!(
            "need two trajectories for a cross-correlation, have {}",
            track.velocities_m_s.len()
        )));
    }
    let (va, vb) = (&track.velocities_m_s[0], &track.velocities_m_s[1]);
    let (mut sab, mut saa, mut sbb) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..track.times_s.len() {
        if track.times_s[i] > t_max_s || !va[i].is_finite() || !vb[i].is_finite() {
            continue;
        }
        sab += va[i] * vb[i];
        saa += va[i] * va[i];
        sbb += vb[i] * vb[i];
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return Err(Error::Measurement(
            "a trajectory has no finite velocities in the correlation window".into(),
        ));
    }
    Ok(sab / (saa * sbb).sqrt())
}

/// Peak relative density deviation from the scaled background, excluding
/// ±`exclusion_radius_m` around every detected soliton and the outer 10% of
/// the Thomas-Fermi region: max |n − bg| / peak bg.
pub fn sound_diagnostic(
    frame: &SpinorField,
    ground: &SpinorField,
    xi_m: f64,
    z_tf_m: f64,
    exclusion_radius_m: f64,
) -> Result<f64> {
    let detections = detect_solitons(frame, ground, xi_m, z_tf_m)?;
    let bg = scaled_background(frame, ground)?;
    let n = frame.total_density_internal();
    let z = frame.grid.z_internal();
    let bg_peak = bg.iter().cloned().fold(0.0f64, f64::max);
    if bg_peak <= 0.0 {
        return Err(Error::Validation("background has zero peak density".into()));
    }
    let z_cut = 0.9 * z_tf_m / L0_M;
    let excl = exclusion_radius_m / L0_M;
    let mut amp = 0.0f64;
    for j in 0..n.len() {
        if z[j].abs() > z_cut {
            continue;
        }
        let z_m = z[j] * L0_M;
        if detections
            .iter()
            .any(|d| (z_m - d.position_m).abs() <= excl * L0_M)
        {
            continue;
        }
        amp = amp.max((n[j] - bg[j]).abs() / bg_peak);
    }
    Ok(amp)
}

/// Write per-frame, per-soliton rows:
/// time_s, soliton_id, position_um, fwhm_um, depth, phase_step_rad, sound_amp.
pub fn write_tracks_csv(
    path: &std::path::Path,
    track: &SolitonTrack,
    detections: &[(f64, Vec<SolitonDetection>)],
    sound_amp: &[f64],
) -> Result<()> {
    use std::io::Write;
    let tag = || path.display().to_string();
    let mut w = std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| Error::io(tag(), e))?,
    );
    writeln!(
        w,
        "time_s,soliton_id,position_um,fwhm_um,depth,phase_step_rad,sound_amp"
    )
    .map_err(|e| Error::io(tag(), e))?;
    for (fi, &t) in track.times_s.iter().enumerate() {
        for (id, traj) in track.positions_m.iter().enumerate() {
            let pos = traj[fi];
            if !pos.is_finite() {
                continue;
            }
            // Report the detection metadata nearest the tracked position.
            let det = detections[fi]
                .1
                .iter()
                .min_by(|a, b| {
                    (a.position_m - pos)
                        .abs()
                        .partial_cmp(&(b.position_m - pos).abs())
                        .unwrap()
                });
            let (fwhm, depth, step) = match det {
                Some(d) => (d.fwhm_m * 1e6, d.depth, d.phase_step_rad),
                None => (f64::NAN, f64::NAN, None),
            };
            writeln!(
                w,
                "{:.6e},{},{:.4},{:.4},{:.4},{},{:.5}",
                t,
                id,
                pos * 1e6,
                fwhm,
                depth,
                step.map(|s| format!("{s:.4}")).unwrap_or_default(),
                sound_amp.get(fi).copied().unwrap_or(f64::NAN),
            )
            .map_err(|e| Error::io(tag(), e))?;
        }
    }
    Ok(())
}
