use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

/// Frame indices of the `n`-frame window ending at `t`. Positions before the
/// start of the video repeat frame 0.
pub fn window_indices(t: usize, n: usize) -> Vec<usize> {
    (0..n).map(|i| (t + 1 + i).saturating_sub(n)).collect()
}

/// Rows `t−n+1 ..= t` of `seq` (T × d), left-padded with row 0.
pub fn window<T: Real>(seq: &Tensor<T>, t: usize, n: usize) -> Result<Tensor<T>> {
    if n == 0 {
        return Err(Error::Config("window length must be at least 1".into()));
    }
    if seq.shape().len() != 2 || t >= seq.rows() {
        return Err(Error::OutOfRange(format!(
            "frame {t} for sequence of shape {:?}",
            seq.shape()
        )));
    }
    let d = seq.cols();
    let mut data = Vec::with_capacity(n * d);
    for i in window_indices(t, n) {
        data.extend_from_slice(seq.row(i));
    }
    Ok(Tensor::matrix(n, d, data))
}
