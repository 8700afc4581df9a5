use std::borrow::Borrow;

use super::{check_dims, GeomError};
use crate::model::{FlowField, MaskDetection, PixelMask};

/// Mean flow magnitude over the set pixels of `mask`, or `None` when the
/// mask is empty or sized differently from `flow`.
pub fn mean_flow_in_mask(mask: &PixelMask, flow: &FlowField) -> Option<f64> {
    if mask.width != flow.width || mask.height != flow.height {
        return None;
    }
    let (sum, n) = mask
        .bits
        .iter()
        .enumerate()
        .filter(|(_, b)| **b)
        .fold((0.0, 0usize), |(s, n), (i, _)| (s + flow.magnitude(i), n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Picks the manipulated object: the most confident detection whose mean
/// in-mask flow reaches `tau_flow`. Ties go to the larger mask, then the lower index.
pub fn select_manipulated(detections: &[MaskDetection], flow: &FlowField, tau_flow: f64) -> Option<usize> {
    let mut best: Option<(usize, f64, usize)> = None;
    for (i, d) in detections.iter().enumerate() {
        let Some(mean) = mean_flow_in_mask(&d.mask, flow) else {
            continue;
        };
        if !(mean >= tau_flow) {
            continue;
        }
        let area = d.mask.count();
        let better = match best {
            None => true,
            Some((_, conf, best_area)) => d.confidence > conf || (d.confidence == conf && area > best_area),
        };
        if better {
            best = Some((i, d.confidence, area));
        }
    }
    best.map(|(i, _, _)| i)
}

/// Per pixel, the largest-magnitude vector over all fields: where each pixel
/// moved the most during the segment.
pub fn peak_flow<F: Borrow<FlowField>>(flows: &[F]) -> Result<FlowField, GeomError> {
    let first = flows.first().ok_or(GeomError::EmptyFlowList)?.borrow();
    let mut out = first.clone();
    for f in &flows[1..] {
        let f = f.borrow();
        check_dims("flow", (out.width, out.height), (f.width, f.height))?;
        for i in 0..out.vectors.len() {
            if f.magnitude(i) > out.magnitude(i) {
                out.vectors[i] = f.vectors[i];
            }
        }
    }
    Ok(out)
}
