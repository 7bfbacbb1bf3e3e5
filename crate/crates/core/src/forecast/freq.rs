//! Frequency-domain mixing along the sequence axis.
//!
//! The real DFT of an `L × d` input is taken with explicit cosine/sine
//! matrices, the lowest `M` modes are multiplied by per-mode complex `d × d`
//! maps, all higher modes are dropped, and the inverse real DFT rebuilds a
//! real sequence. Everything is linear in the input, so the block is a short
//! chain of matrix products on the tape.

use std::f64::consts::TAU;

use ndarray::Array2;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};

/// Number of non-redundant modes of a real sequence of length `len`.
pub fn max_modes(len: usize) -> usize {
    len / 2 + 1
}

/// Forward and inverse real-DFT matrices restricted to the lowest modes.
#[derive(Debug, Clone, PartialEq)]
pub struct DftBasis {
    /// `M × L_in`, `cos(2π m t / L_in)`
    fwd_re: Array2<f64>,
    /// `M × L_in`, `−sin(2π m t / L_in)`
    fwd_im: Array2<f64>,
    /// `L_out × M`
    inv_re: Array2<f64>,
    /// `L_out × M`
    inv_im: Array2<f64>,
}

impl DftBasis {
    /// Basis mapping a length-`in_len` sequence to `modes` modes and back to
    /// a length-`out_len` sequence. The inverse is scaled by `1 / in_len`, so
    /// with `in_len == out_len` and all modes kept the round trip is exact.
    pub fn new(in_len: usize, out_len: usize, modes: usize) -> Result<Self> {
        if in_len < 2 || out_len < 2 {
            return Err(Error::ShapeMismatch(format!(
                "frequency block needs sequences of length ≥ 2, got {in_len} → {out_len}"
            )));
        }
        if modes == 0 || modes > max_modes(in_len) || modes > max_modes(out_len) {
            return Err(Error::ShapeMismatch(format!(
                "mode count {modes} outside 1..={}",
                max_modes(in_len).min(max_modes(out_len))
            )));
        }
        let li = in_len as f64;
        let lo = out_len as f64;
        let fwd_re = Array2::from_shape_fn((modes, in_len), |(m, t)| (TAU * (m * t) as f64 / li).cos());
        let fwd_im = Array2::from_shape_fn((modes, in_len), |(m, t)| -(TAU * (m * t) as f64 / li).sin());
        let weight = |m: usize| {
            if m == 0 || (out_len % 2 == 0 && m == out_len / 2) {
                1.0 / li
            } else {
                2.0 / li
            }
        };
        let inv_re = Array2::from_shape_fn((out_len, modes), |(t, m)| weight(m) * (TAU * (m * t) as f64 / lo).cos());
        let inv_im = Array2::from_shape_fn((out_len, modes), |(t, m)| {
            // the imaginary part of DC and Nyquist does not exist for a real signal
            if m == 0 || (out_len % 2 == 0 && m == out_len / 2) {
                0.0
            } else {
                -weight(m) * (TAU * (m * t) as f64 / lo).sin()
            }
        });
        Ok(Self {
            fwd_re,
            fwd_im,
            inv_re,
            inv_im,
        })
    }

    pub fn modes(&self) -> usize {
        self.fwd_re.nrows()
    }
}

/// Per-mode complex maps, each stored as real and imaginary `d_out × d_in`
/// matrices and applied to row vectors as `x · Wᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct FreqBlockParams {
    pub re: Vec<Array2<f64>>,
    pub im: Vec<Array2<f64>>,
}

impl FreqBlockParams {
    /// Unit weight on every retained mode.
    pub fn identity(modes: usize, width: usize) -> Self {
        Self {
            re: vec![Array2::eye(width); modes],
            im: vec![Array2::zeros((width, width)); modes],
        }
    }

    pub fn mode_count(&self) -> usize {
        self.re.len()
    }
}

/// Apply the mode weights on the tape. `re` and `im` hold one handle per mode.
pub(crate) fn mix_modes(tape: &mut Tape, x: Var, basis: &DftBasis, re: &[Var], im: &[Var]) -> Var {
    debug_assert_eq!(re.len(), basis.modes());
    debug_assert_eq!(im.len(), basis.modes());
    let fr = tape.constant(basis.fwd_re.clone());
    let fi = tape.constant(basis.fwd_im.clone());
    let xr = tape.matmul(fr, x);
    let xi = tape.matmul(fi, x);
    let mut yr_rows = Vec::with_capacity(re.len());
    let mut yi_rows = Vec::with_capacity(re.len());
    for m in 0..re.len() {
        let a = tape.slice_rows(xr, m, m + 1);
        let b = tape.slice_rows(xi, m, m + 1);
        let ar = tape.matmul_nt(a, re[m]);
        let bi = tape.matmul_nt(b, im[m]);
        let ai = tape.matmul_nt(a, im[m]);
        let br = tape.matmul_nt(b, re[m]);
        yr_rows.push(tape.sub(ar, bi));
        yi_rows.push(tape.add(ai, br));
    }
    let yr = tape.concat_rows(&yr_rows);
    let yi = tape.concat_rows(&yi_rows);
    let ir = tape.constant(basis.inv_re.clone());
    let ii = tape.constant(basis.inv_im.clone());
    let out_r = tape.matmul(ir, yr);
    let out_i = tape.matmul(ii, yi);
    tape.add(out_r, out_i)
}

/// Frequency block on an `L × d` sequence.
pub fn freq_block(x: &Array2<f64>, params: &FreqBlockParams) -> Result<Array2<f64>> {
    let (len, width) = x.dim();
    if params.re.len() != params.im.len() {
        return Err(Error::ShapeMismatch("real and imaginary mode counts differ".into()));
    }
    for w in params.re.iter().chain(&params.im) {
        if w.dim() != (width, width) {
            return Err(Error::ShapeMismatch(format!(
                "mode weight {:?} does not match width {width}",
                w.dim()
            )));
        }
    }
    let basis = DftBasis::new(len, len, params.mode_count())?;
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let re: Vec<Var> = params.re.iter().map(|w| tape.constant(w.clone())).collect();
    let im: Vec<Var> = params.im.iter().map(|w| tape.constant(w.clone())).collect();
    let out = mix_modes(&mut tape, xv, &basis, &re, &im);
    Ok(tape.value(out).clone())
}
