//! Per-frame feature sequences, the causal feature refiner, sliding windows,
//! and the windowed temporal encoder.

mod encoder;
mod io;
mod refiner;
mod window;

pub(crate) use encoder::TemporalEncoder;
pub use io::{read_prfv, write_prfv, PRFV_MAGIC, PRFV_VERSION};
pub(crate) use refiner::Refiner;
pub use refiner::RefinerConfig;
pub use window::{window, window_indices};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Feature vectors of one recording, one row per second.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    video_id: String,
    frames: Tensor<f32>,
}

impl FeatureSequence {
    /// `frames` must be a non-empty `T × D` matrix of finite values.
    pub fn new(video_id: impl Into<String>, frames: Tensor<f32>) -> Result<Self> {
        let video_id = video_id.into();
        if frames.shape().len() != 2 || frames.rows() == 0 || frames.cols() == 0 {
            return Err(Error::Track {
                video_id,
                message: format!(
                    "feature matrix must be non-empty T x D, got {:?}",
                    frames.shape()
                ),
            });
        }
        if !frames.is_finite() {
            return Err(Error::NonFinite(format!("features of {video_id}")));
        }
        Ok(FeatureSequence { video_id, frames })
    }

    pub fn from_rows(video_id: impl Into<String>, rows: &[Vec<f32>]) -> Result<Self> {
        let video_id = video_id.into();
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Track {
                video_id,
                message: "rows differ in dimension".into(),
            });
        }
        let data = rows.concat();
        Self::new(video_id, Tensor::matrix(rows.len(), dim, data))
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    /// Number of frames `T`.
    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }

    pub fn frames(&self) -> &Tensor<f32> {
        &self.frames
    }

    pub fn frames_mut(&mut self) -> &mut Tensor<f32> {
        &mut self.frames
    }

    pub fn row(&self, t: usize) -> &[f32] {
        self.frames.row(t)
    }

    /// Frames `0..=t` only.
    pub fn prefix(&self, t: usize) -> Result<Self> {
        if t >= self.len() {
            return Err(Error::OutOfRange(format!("frame {t} of {}", self.len())));
        }
        let d = self.dim();
        let data = self.frames.data()[..(t + 1) * d].to_vec();
        Self::new(self.video_id.clone(), Tensor::matrix(t + 1, d, data))
    }
}
