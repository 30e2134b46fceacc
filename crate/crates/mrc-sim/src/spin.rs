//! Exact spin-1 rotations and a point-level three-level propagator.
//!
//! Component order everywhere is (m = -1, 0, +1) with F_z = diag(-1, 0, +1).
//! The rotation exp(-i (v . F) dt) is evaluated in closed form via
//! Cayley-Hamilton: for spin-1, (v.F/w)^3 = v.F/w with w = |v|, so
//! exp(-i theta A) = 1 - i sin(theta) A + (cos(theta) - 1) A^2.

use num_complex::Complex64 as C64;

const SQRT2_INV: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Apply the generator G = vx F_x + vy F_y + vz F_z to one spinor.
#[inline]
pub fn apply_generator(c: &[C64; 3], vx: f64, vy: f64, vz: f64) -> [C64; 3] {
    let up = C64::new(vx, vy) * SQRT2_INV; // couples m -> m+1 side
    let dn = C64::new(vx, -vy) * SQRT2_INV;
    [
        -vz * c[0] + up * c[1],
        dn * c[0] + up * c[2],
        vz * c[2] + dn * c[1],
    ]
}

/// sin(theta)/w and (cos(theta)-1)/w^2 with stable w -> 0 limits.
#[inline]
fn rotation_weights(w: f64, dt: f64) -> (f64, f64) {
    if w > 0.0 {
        let theta = w * dt;
        (theta.sin() / w, (theta.cos() - 1.0) / (w * w))
    } else {
        (dt, -0.5 * dt * dt)
    }
}

/// Exact one-point rotation exp(-i (vx F_x + vy F_y + vz F_z) dt).
#[inline]
pub fn rotate_point(c: &mut [C64; 3], vx: f64, vy: f64, vz: f64, dt: f64) {
    let w = (vx * vx + vy * vy + vz * vz).sqrt();
    let (sw, cw) = rotation_weights(w, dt);
    let g1 = apply_generator(c, vx, vy, vz);
    let g2 = apply_generator(&g1, vx, vy, vz);
    for m in 0..3 {
        c[m] = c[m] - C64::new(0.0, sw) * g1[m] + cw * g2[m];
    }
}

/// Exact rotation exp(-i (delta(z) F_z + omega F_x) dt) applied across a grid.
///
/// This is the propagator hot path: delta varies per point (gradient), omega is
/// spatially uniform, and everything stays in real arithmetic except the field.
pub fn rotate_spin1(
    pm: &mut [C64],
    p0: &mut [C64],
    pp: &mut [C64],
    delta: &[f64],
    omega: f64,
    dt: f64,
) {
    let ox = omega * SQRT2_INV;
    for i in 0..pm.len() {
        let d = delta[i];
        let w = (d * d + omega * omega).sqrt();
        let (sw, cw) = rotation_weights(w, dt);
        let (am, a0, ap) = (pm[i], p0[i], pp[i]);
        // First application of the generator.
        let g1m = -d * am + ox * a0;
        let g10 = ox * (am + ap);
        let g1p = d * ap + ox * a0;
        // Second application.
        let g2m = -d * g1m + ox * g10;
        let g20 = ox * (g1m + g1p);
        let g2p = d * g1p + ox * g10;
        let i_sw = C64::new(0.0, sw);
        pm[i] = am - i_sw * g1m + cw * g2m;
        p0[i] = a0 - i_sw * g10 + cw * g20;
        pp[i] = ap - i_sw * g1p + cw * g2p;
    }
}

/// Fixed-step RK4 integration of i dc/dt = (delta(t) F_z + omega(t) F_x) c.
///
/// Independent oracle for the midpoint-rotation stepper; `coeffs` returns
/// (omega, delta) at absolute time t.
pub fn rk4_point(
    coeffs: &dyn Fn(f64) -> (f64, f64),
    t0: f64,
    t1: f64,
    steps: usize,
    c0: [C64; 3],
) -> [C64; 3] {
    let h = (t1 - t0) / steps as f64;
    let deriv = |t: f64, c: &[C64; 3]| -> [C64; 3] {
        let (omega, delta) = coeffs(t);
        let g = apply_generator(c, omega, 0.0, delta);
        [-C64::i() * g[0], -C64::i() * g[1], -C64::i() * g[2]]
    };
    let mut c = c0;
    for n in 0..steps {
        let t = t0 + n as f64 * h;
        let k1 = deriv(t, &c);
        let c2 = [c[0] + 0.5 * h * k1[0], c[1] + 0.5 * h * k1[1], c[2] + 0.5 * h * k1[2]];
        let k2 = deriv(t + 0.5 * h, &c2);
        let c3 = [c[0] + 0.5 * h * k2[0], c[1] + 0.5 * h * k2[1], c[2] + 0.5 * h * k2[2]];
        let k3 = deriv(t + 0.5 * h, &c3);
        let c4 = [c[0] + h * k3[0], c[1] + h * k3[1], c[2] + h * k3[2]];
        let k4 = deriv(t + h, &c4);
        for m in 0..3 {
            c[m] += (h / 6.0) * (k1[m] + 2.0 * k2[m] + 2.0 * k3[m] + k4[m]);
        }
    }
    c
}

/// Population of each component of a point spinor.
pub fn populations(c: &[C64; 3]) -> [f64; 3] {
    [c[0].norm_sqr(), c[1].norm_sqr(), c[2].norm_sqr()]
}
