//! Frame-level phase metrics, per-video reports, and ribbon exports.

mod metrics;
mod report;
mod ribbon;

pub use metrics::{confusion, mean_std, metrics, ConfusionMatrix, Metrics, PhaseMetrics};
pub use report::{per_video_report, EvalReport, MacroMode, VideoScore};
pub use ribbon::{ribbon_csv, ribbon_svg};
