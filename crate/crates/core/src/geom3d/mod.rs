//! 3D geometry over RGB-D frames.

mod align;
mod bbox;
mod metrics;
mod motion;
mod unproject;

use thiserror::Error;

pub use align::{align_depth_scales, background_mask, BackgroundMask, ScaleCoefficients, MIN_BACKGROUND_PIXELS};
pub use bbox::{aabb_from_points, lift_mask, quantile_sorted};
pub use metrics::{iou3d, localization_metrics, LocalizationMetrics};
pub use motion::{mean_flow_in_mask, peak_flow, select_manipulated};
pub use unproject::unproject;

/// Default flow-magnitude threshold in pixels.
pub const DEFAULT_TAU_FLOW: f64 = 1.0;
/// Default per-axis trimming quantile for box extraction.
pub const DEFAULT_TRIM_Q: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeomError {
    #[error("{what}: dimensions {found_w}x{found_h} differ from expected {expected_w}x{expected_h}")]
    DimensionMismatch {
        what: &'static str,
        expected_w: usize,
        expected_h: usize,
        found_w: usize,
        found_h: usize,
    },
    #[error("no flow fields given")]
    EmptyFlowList,
    #[error("threshold must be positive and finite, got {0}")]
    InvalidThreshold(f64),
    #[error("need at least 2 depth maps, got {0}")]
    TooFewFrames(usize),
    #[error("alignment unreliable: {usable} usable background pixels, need {required}")]
    AlignmentUnreliable { usable: usize, required: usize },
    #[error("mask does not cover any valid depth pixel")]
    EmptyLift,
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("trim quantile {0} ∉ [0, 0.5)")]
    InvalidTrim(f64),
    #[error("{pred} predictions for {gt} ground-truth boxes")]
    LengthMismatch { pred: usize, gt: usize },
    #[error("no boxes to evaluate")]
    NoBoxes,
}

pub(crate) fn check_dims(
    what: &'static str,
    expected: (usize, usize),
    found: (usize, usize),
) -> Result<(), GeomError> {
    if expected == found {
        Ok(())
    } else {
        Err(GeomError::DimensionMismatch {
            what,
            expected_w: expected.0,
            expected_h: expected.1,
            found_w: found.0,
            found_h: found.1,
        })
    }
}
