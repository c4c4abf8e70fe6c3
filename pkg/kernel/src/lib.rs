//! Windowed argmax-cosine correspondence fields over feature slabs.
//!
//! Drop-in accelerated implementation of the reference `compute_nn_field`:
//! for every location p of a [h, w, C] row-major feature slab, find the
//! offset (dr, dc) inside an inclusive window whose target location in the
//! second slab maximizes cosine similarity.
//!
//! Offsets are integers, so agreement with the reference must be exact.
//! The numeric contract is therefore pinned:
//!
//! * dot products and squared norms accumulate over channels sequentially,
//!   one multiply-add per channel, f64, no FMA;
//! * similarity is dot / (sqrt(n_i) * sqrt(n_j)), defined as 0.0 when either
//!   norm is below 1e-12;
//! * ties resolve to the candidate minimizing (|dr| + |dc|, dr, dc) under
//!   "l1_rowmajor" (default) or plain (dr, dc) under "rowmajor".
//!
//! Data crosses the boundary as contiguous arrays plus a dims header;
//! offsets return as little-endian i64 bytes, [h, w, 2] row-major.

use pyo3::buffer::PyBuffer;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyBytes;

const NORM_EPS: f64 = 1e-12;

#[derive(Clone, Copy, PartialEq)]
pub enum TieBreak {
    L1RowMajor,
    RowMajor,
}

impl TieBreak {
    fn parse(name: &str) -> Result<Self, String> {
        match name {
            "l1_rowmajor" => Ok(TieBreak::L1RowMajor),
            "rowmajor" => Ok(TieBreak::RowMajor),
            other => Err(format!("unknown tiebreak {:?}", other)),
        }
    }

    fn key(self, dr: i64, dc: i64) -> (i64, i64, i64) {
        match self {
            TieBreak::L1RowMajor => (dr.abs() + dc.abs(), dr, dc),
            TieBreak::RowMajor => (dr, dc, 0),
        }
    }
}

/// Squared norms per location, channels accumulated sequentially.
fn sumsq(slab: &[f64], locs: usize, channels: usize) -> Vec<f64> {
    let mut out = vec![0.0f64; locs];
    for (loc, acc) in out.iter_mut().enumerate() {
        let base = loc * channels;
        for ch in 0..channels {
            let v = slab[base + ch];
            *acc += v * v;
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn nn_field_core(
    f_i: &[f64],
    f_j: &[f64],
    h: usize,
    w: usize,
    channels: usize,
    row_lo: i64,
    row_hi: i64,
    col_lo: i64,
    col_hi: i64,
    tiebreak: TieBreak,
) -> Result<Vec<i64>, String> {
    if h == 0 || w == 0 || channels == 0 {
        return Err("dims must be positive".into());
    }
    let locs = h * w;
    if f_i.len() != locs * channels || f_j.len() != locs * channels {
        return Err(format!(
            "slab length mismatch: expected {}, got {} and {}",
            locs * channels,
            f_i.len(),
            f_j.len()
        ));
    }
    if row_lo > row_hi || col_lo > col_hi {
        return Err("empty search window".into());
    }
    if row_lo > 0 || row_hi < 0 || col_lo > 0 || col_hi < 0 {
        return Err("search window must contain the zero offset".into());
    }
    if f_i.iter().chain(f_j.iter()).any(|v| !v.is_finite()) {
        return Err("non-finite feature values".into());
    }

    let norm_i: Vec<f64> = sumsq(f_i, locs, channels).iter().map(|v| v.sqrt()).collect();
    let norm_j: Vec<f64> = sumsq(f_j, locs, channels).iter().map(|v| v.sqrt()).collect();

    let mut out = vec![0i64; locs * 2];
    for r in 0..h {
        for c in 0..w {
            let p = r * w + c;
            let s_i = norm_i[p];
            let mut best_sim = f64::NEG_INFINITY;
            let mut best: Option<(i64, i64)> = None;
            for dr in row_lo..=row_hi {
                let qr = r as i64 + dr;
                if qr < 0 || qr >= h as i64 {
                    continue;
                }
                for dc in col_lo..=col_hi {
                    let qc = c as i64 + dc;
                    if qc < 0 || qc >= w as i64 {
                        continue;
                    }
                    let q = (qr as usize) * w + qc as usize;
                    let s_j = norm_j[q];
                    let sim = if s_i < NORM_EPS || s_j < NORM_EPS {
                        0.0
                    } else {
                        let mut dot = 0.0f64;
                        let bi = p * channels;
                        let bj = q * channels;
                        for ch in 0..channels {
                            dot += f_i[bi + ch] * f_j[bj + ch];
                        }
                        dot / (s_i * s_j)
                    };
                    let better = sim > best_sim
                        || (sim == best_sim
                            && match best {
                                Some((br, bc)) => tiebreak.key(dr, dc) < tiebreak.key(br, bc),
                                None => true,
                            });
                    if better {
                        best_sim = sim;
                        best = Some((dr, dc));
                    }
                }
            }
            let (dr, dc) = best.ok_or_else(|| format!("no in-bounds candidate at ({}, {})", r, c))?;
            out[p * 2] = dr;
            out[p * 2 + 1] = dc;
        }
    }
    Ok(out)
}

fn buffer_to_vec(py: Python<'_>, buf: &PyBuffer<f64>) -> PyResult<Vec<f64>> {
    buf.to_vec(py)
}

/// Entry point. f_i, f_j: contiguous float64 buffers of shape [h, w, c]
/// (row-major); window bounds are inclusive offsets. Returns offsets as
/// little-endian i64 bytes, layout [h, w, 2].
#[pyfunction]
#[allow(clippy::too_many_arguments)]
fn nn_field_accel(
    py: Python<'_>,
    f_i: PyBuffer<f64>,
    f_j: PyBuffer<f64>,
    h: usize,
    w: usize,
    c: usize,
    row_lo: i64,
    row_hi: i64,
    col_lo: i64,
    col_hi: i64,
    tiebreak: &str,
) -> PyResult<Py<PyBytes>> {
    let tb = TieBreak::parse(tiebreak).map_err(PyValueError::new_err)?;
    let vi = buffer_to_vec(py, &f_i)?;
    let vj = buffer_to_vec(py, &f_j)?;
    let offsets = nn_field_core(&vi, &vj, h, w, c, row_lo, row_hi, col_lo, col_hi, tb)
        .map_err(PyValueError::new_err)?;
    let mut raw = Vec::with_capacity(offsets.len() * 8);
    for v in offsets {
        raw.extend_from_slice(&v.to_le_bytes());
    }
    Ok(PyBytes::new(py, &raw).into())
}

#[pyfunction]
fn version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}

#[pymodule]
fn nnfield_kernel(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(nn_field_accel, m)?)?;
    m.add_function(wrap_pyfunction!(version, m)?)?;
    Ok(())
}
