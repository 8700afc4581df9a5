use serde::{Deserialize, Serialize};

use super::GeomError;
use crate::model::Aabb3;

/// Volumetric intersection over union of two axis-aligned boxes.
///
/// Boxes with zero union volume (two degenerate boxes, even identical point
/// boxes) score 0.
pub fn iou3d(a: &Aabb3, b: &Aabb3) -> f64 {
    let mut inter = 1.0;
    for axis in 0..3 {
        let lo = a.min[axis].max(b.min[axis]);
        let hi = a.max[axis].min(b.max[axis]);
        inter *= (hi - lo).max(0.0);
    }
    let union = a.volume() + b.volume() - inter;
    if union > 0.0 {
        (inter / union).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalizationMetrics {
    pub mean_iou: f64,
    pub acc_at_25: f64,
    pub acc_at_50: f64,
}

/// Mean IoU plus the fraction of pairs with IoU ≥ 0.25 and ≥ 0.5.
pub fn localization_metrics(pred: &[Aabb3], gt: &[Aabb3]) -> Result<LocalizationMetrics, GeomError> {
    if pred.len() != gt.len() {
        return Err(GeomError::LengthMismatch {
            pred: pred.len(),
            gt: gt.len(),
        });
    }
    if pred.is_empty() {
        return Err(GeomError::NoBoxes);
    }
    let ious: Vec<f64> = pred.iter().zip(gt).map(|(p, g)| iou3d(p, g)).collect();
    let n = ious.len() as f64;
    let frac = |k: f64| ious.iter().filter(|v| **v >= k).count() as f64 / n;
    Ok(LocalizationMetrics {
        mean_iou: ious.iter().sum::<f64>() / n,
        acc_at_25: frac(0.25),
        acc_at_50: frac(0.5),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_at(x: f64) -> Aabb3 {
        Aabb3::new([x, 0.0, 0.0], [x + 1.0, 1.0, 1.0])
    }

    #[test]
    fn basic_cases() {
        assert_eq!(iou3d(&unit_at(0.0), &unit_at(0.0)), 1.0);
        assert_eq!(iou3d(&unit_at(0.0), &unit_at(3.0)), 0.0);
        assert!((iou3d(&unit_at(0.0), &unit_at(0.5)) - 1.0 / 3.0).abs() < 1e-15);
        let p = Aabb3::new([0.2; 3], [0.2; 3]);
        assert_eq!(iou3d(&p, &p), 0.0);
    }

    #[test]
    fn metrics() {
        let m = localization_metrics(&[unit_at(0.0), unit_at(0.0)], &[unit_at(0.0), unit_at(0.0)]).unwrap();
        assert_eq!((m.mean_iou, m.acc_at_25, m.acc_at_50), (1.0, 1.0, 1.0));
        let m = localization_metrics(&[unit_at(0.0)], &[unit_at(5.0)]).unwrap();
        assert_eq!((m.mean_iou, m.acc_at_25, m.acc_at_50), (0.0, 0.0, 0.0));
        let m = localization_metrics(&[unit_at(0.0), unit_at(1.0)], &[unit_at(0.5), unit_at(1.0)]).unwrap();
        assert!((m.mean_iou - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!((m.acc_at_25, m.acc_at_50), (1.0, 0.5));
        assert!(matches!(
            localization_metrics(&[unit_at(0.0)], &[]),
            Err(GeomError::LengthMismatch { pred: 1, gt: 0 })
        ));
        assert_eq!(localization_metrics(&[], &[]).unwrap_err(), GeomError::NoBoxes);
    }

    fn arb_box() -> impl Strategy<Value = Aabb3> {
        (prop::array::uniform3(-2.0f64..2.0), prop::array::uniform3(0.01f64..2.0))
            .prop_map(|(min, ext)| Aabb3::new(min, [min[0] + ext[0], min[1] + ext[1], min[2] + ext[2]]))
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = iou3d(&a, &b);
            prop_assert_eq!(ab, iou3d(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(iou3d(&a, &a), 1.0);
            if a != b {
                prop_assert!(ab < 1.0);
            }
        }
    }
}
