//! SPF1 snapshot format: binary spinor-field snapshots.
//!
//! Little-endian layout: magic "SPF1", version u32, numPoints u64, zMin f64 (m),
//! dz f64 (m), time f64 (s), normAtWrite f64, then 3 x numPoints complex pairs
//! (f64 re, f64 im) in component order (m = -1, 0, +1). Amplitudes are stored
//! in SI normalization (m^-1/2): integral of the summed |psi|^2 over z in
//! meters equals the norm at write.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::spinor::SpinorField;
use crate::units::L0_M;

pub const SPF1_MAGIC: &[u8; 4] = b"SPF1";
pub const SPF1_VERSION: u32 = 1;

/// Write one snapshot. Internal amplitudes (per sqrt(um)) are converted to SI
/// (per sqrt(m)) on the way out.
pub fn write_spf1(path: &Path, state: &SpinorField) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e: std::io::Error| Error::io(path.display().to_string(), e);

    let norm = state.total_norm();
    w.write_all(SPF1_MAGIC).map_err(io_err)?;
    w.write_all(&SPF1_VERSION.to_le_bytes()).map_err(io_err)?;
    w.write_all(&(state.grid.num_points as u64).to_le_bytes()).map_err(io_err)?;
    w.write_all(&state.grid.z_min_m.to_le_bytes()).map_err(io_err)?;
    w.write_all(&state.grid.dz_m.to_le_bytes()).map_err(io_err)?;
    w.write_all(&state.time_s.to_le_bytes()).map_err(io_err)?;
    w.write_all(&norm.to_le_bytes()).map_err(io_err)?;
    let to_si = 1.0 / L0_M.sqrt();
    for m in 0..3 {
        for c in &state.comps[m] {
            w.write_all(&(c.re * to_si).to_le_bytes()).map_err(io_err)?;
            w.write_all(&(c.im * to_si).to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

/// Read one snapshot back into internal normalization.
pub fn read_spf1(path: &Path) -> Result<SpinorField> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut r = BufReader::new(file);
    let io_err = |e: std::io::Error| Error::io(path.display().to_string(), e);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != SPF1_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic {:?}, not an SPF1 snapshot",
            path.display(),
            magic
        )));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf).map_err(io_err)?;
    let version = u32::from_le_bytes(u32buf);
    if version != SPF1_VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported SPF1 version {version}",
            path.display()
        )));
    }
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf).map_err(io_err)?;
    let num_points = u64::from_le_bytes(u64buf) as usize;
    let mut f = [0u8; 8];
    let mut read_f64 = |r: &mut BufReader<File>| -> Result<f64> {
        r.read_exact(&mut f).map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(f64::from_le_bytes(f))
    };
    let z_min_m = read_f64(&mut r)?;
    let dz_m = read_f64(&mut r)?;
    let time_s = read_f64(&mut r)?;
    let _norm_at_write = read_f64(&mut r)?;

    let grid = Arc::new(Grid::from_raw(num_points, z_min_m, dz_m)?);
    let from_si = L0_M.sqrt();
    let mut comps: [Vec<C64>; 3] = std::array::from_fn(|_| Vec::with_capacity(num_points));
    let mut body = vec![0u8; num_points * 16];
    for m in 0..3 {
        r.read_exact(&mut body).map_err(io_err)?;
        for chunk in body.chunks_exact(16) {
            let re = f64::from_le_bytes(chunk[0..8].try_into().unwrap());
            let im = f64::from_le_bytes(chunk[8..16].try_into().unwrap());
            comps[m].push(C64::new(re * from_si, im * from_si));
        }
    }
    // Trailing bytes mean a corrupt or mislabeled file.
    let mut extra = [0u8; 1];
    match r.read(&mut extra) {
        Ok(0) => {}
        Ok(_) => {
            return Err(Error::Format(format!(
                "{}: trailing bytes after snapshot body",
                path.display()
            )))
        }
        Err(e) => return Err(io_err(e)),
    }
    Ok(SpinorField { grid, comps, time_s })
}
