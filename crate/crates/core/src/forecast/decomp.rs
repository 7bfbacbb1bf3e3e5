//! Moving-average seasonal/trend split.

use ndarray::Array2;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionOutput {
    pub trend: Array2<f64>,
    pub seasonal: Array2<f64>,
}

/// `L × L` matrix whose product with an `L × C` sequence is the centered
/// moving average of width `kernel`, with edges padded by repeating the first
/// and last rows.
pub fn moving_average_matrix(len: usize, kernel: usize) -> Result<Array2<f64>> {
    if kernel == 0 || kernel % 2 == 0 {
        return Err(Error::InvalidKernel(kernel));
    }
    let half = (kernel / 2) as isize;
    let last = len as isize - 1;
    let w = 1.0 / kernel as f64;
    let mut m = Array2::zeros((len, len));
    for t in 0..len as isize {
        for j in t - half..=t + half {
            m[[t as usize, j.clamp(0, last) as usize]] += w;
        }
    }
    Ok(m)
}

/// Split each column of `x` (time along rows) into trend and seasonal parts.
pub fn decompose(x: &Array2<f64>, kernel: usize) -> Result<DecompositionOutput> {
    if x.nrows() == 0 {
        return Err(Error::ShapeMismatch("cannot decompose an empty sequence".into()));
    }
    let ma = moving_average_matrix(x.nrows(), kernel)?;
    let trend = ma.dot(x);
    let seasonal = x - &trend;
    Ok(DecompositionOutput { trend, seasonal })
}
