use std::borrow::Borrow;

use super::{check_dims, GeomError};
use crate::model::{DepthMap, FlowField, PixelMask};

/// Fewest background pixels, valid in every frame, needed to trust an alignment.
pub const MIN_BACKGROUND_PIXELS: usize = 16;

/// Pixels that stay static across a whole segment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackgroundMask {
    pub mask: PixelMask,
}

impl BackgroundMask {
    pub fn width(&self) -> usize {
        self.mask.width
    }

    pub fn height(&self) -> usize {
        self.mask.height
    }

    #[inline]
    pub fn is_background(&self, i: usize) -> bool {
        self.mask.bits[i]
    }

    pub fn count(&self) -> usize {
        self.mask.count()
    }
}

/// A pixel is background iff its flow magnitude is below `tau_flow` in every field.
pub fn background_mask<F: Borrow<FlowField>>(flows: &[F], tau_flow: f64) -> Result<BackgroundMask, GeomError> {
    if !(tau_flow > 0.0 && tau_flow.is_finite()) {
        return Err(GeomError::InvalidThreshold(tau_flow));
    }
    let first = flows.first().ok_or(GeomError::EmptyFlowList)?.borrow();
    let (w, h) = (first.width, first.height);
    let mut bits = vec![true; w * h];
    for f in flows {
        let f = f.borrow();
        check_dims("flow", (w, h), (f.width, f.height))?;
        for (i, b) in bits.iter_mut().enumerate() {
            if *b && !(f.magnitude(i) < tau_flow) {
                *b = false;
            }
        }
    }
    Ok(BackgroundMask {
        mask: PixelMask::new(w, h, bits),
    })
}

/// Per-frame multiplicative depth coefficients; frame 0 is the reference.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleCoefficients {
    pub coefficients: Vec<f64>,
}

impl ScaleCoefficients {
    pub fn apply(&self, depths: &mut [DepthMap]) {
        for (d, c) in depths.iter_mut().zip(&self.coefficients) {
            if *c != 1.0 {
                d.values.iter_mut().for_each(|v| *v *= c);
            }
        }
    }
}

/// Least-squares scale of each frame onto frame 0 over the static background.
///
/// `c_t = Σ D₀·D_t / Σ D_t²` over background pixels valid in both frames, so that
/// `c_t·D_t` minimizes the squared disagreement with `D₀`.
pub fn align_depth_scales<D: Borrow<DepthMap>>(
    depths: &[D],
    bg: &BackgroundMask,
) -> Result<ScaleCoefficients, GeomError> {
    if depths.len() < 2 {
        return Err(GeomError::TooFewFrames(depths.len()));
    }
    let reference = depths[0].borrow();
    for d in depths {
        let d = d.borrow();
        check_dims("depth", (bg.width(), bg.height()), (d.width, d.height))?;
    }

    let usable = (0..bg.width() * bg.height())
        .filter(|&i| bg.is_background(i) && depths.iter().all(|d| d.borrow().valid[i]))
        .count();
    if usable < MIN_BACKGROUND_PIXELS {
        return Err(GeomError::AlignmentUnreliable {
            usable,
            required: MIN_BACKGROUND_PIXELS,
        });
    }

    let mut coefficients = Vec::with_capacity(depths.len());
    coefficients.push(1.0);
    for d in &depths[1..] {
        let d = d.borrow();
        let (mut cross, mut sq) = (0.0, 0.0);
        for i in 0..d.values.len() {
            if bg.is_background(i) && reference.valid[i] && d.valid[i] {
                cross += reference.values[i] * d.values[i];
                sq += d.values[i] * d.values[i];
            }
        }
        coefficients.push(cross / sq);
    }
    Ok(ScaleCoefficients { coefficients })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn zero_flow_is_all_background() {
        let bg = background_mask(&[FlowField::zeros(4, 3)], 1.0).unwrap();
        assert_eq!(bg.count(), 12);
    }

    #[test]
    fn one_violation_excludes_pixel() {
        let mut f = FlowField::zeros(4, 3);
        f.vectors[5] = [6.0, 8.0];
        let bg = background_mask(&[FlowField::zeros(4, 3), f], 1.0).unwrap();
        assert!(!bg.is_background(5));
        assert_eq!(bg.count(), 11);
    }

    #[test]
    fn below_threshold_in_both_fields() {
        let mut a = FlowField::zeros(1, 1);
        let mut b = FlowField::zeros(1, 1);
        a.vectors[0] = [0.4, 0.0];
        b.vectors[0] = [0.0, 0.9];
        assert!(background_mask(&[a, b], 1.0).unwrap().is_background(0));
    }

    #[test]
    fn background_errors() {
        let empty: [FlowField; 0] = [];
        assert_eq!(background_mask(&empty, 1.0).unwrap_err(), GeomError::EmptyFlowList);
        assert!(matches!(
            background_mask(&[FlowField::zeros(2, 2)], 0.0),
            Err(GeomError::InvalidThreshold(_))
        ));
        assert!(background_mask(&[FlowField::zeros(2, 2), FlowField::zeros(3, 2)], 1.0).is_err());
    }

    fn ramp(w: usize, h: usize) -> DepthMap {
        DepthMap::from_meters(w, h, (0..w * h).map(|i| 0.8 + (i % 17) as f64 * 0.05).collect())
    }

    fn all_bg(w: usize, h: usize) -> BackgroundMask {
        BackgroundMask {
            mask: PixelMask::filled(w, h, true),
        }
    }

    #[test]
    fn self_alignment_is_one() {
        let d = ramp(8, 8);
        let c = align_depth_scales(&[d.clone(), d], &all_bg(8, 8)).unwrap();
        assert_eq!(c.coefficients, vec![1.0, 1.0]);
    }

    #[test]
    fn proportional_maps() {
        let d = ramp(8, 8);
        let c = align_depth_scales(&[d.clone(), d.scaled(2.0)], &all_bg(8, 8)).unwrap();
        assert_eq!(c.coefficients[0], 1.0);
        assert!((c.coefficients[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn noisy_unit_plane() {
        let n = 100;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let d0 = DepthMap::from_meters(n, n, vec![1.0; n * n]);
        let dt = DepthMap::from_meters(n, n, (0..n * n).map(|_| 1.0 + noise.sample(&mut rng)).collect());
        let c = align_depth_scales(&[d0, dt], &all_bg(n, n)).unwrap();
        assert!((0.99..=1.01).contains(&c.coefficients[1]), "{:?}", c);
    }

    #[test]
    fn too_few_background_pixels() {
        let d = ramp(8, 8);
        let mut bg = all_bg(8, 8);
        bg.mask.bits.iter_mut().skip(15).for_each(|b| *b = false);
        assert_eq!(
            align_depth_scales(&[d.clone(), d.clone()], &bg).unwrap_err(),
            GeomError::AlignmentUnreliable { usable: 15, required: 16 }
        );
        assert_eq!(align_depth_scales(&[d], &all_bg(8, 8)).unwrap_err(), GeomError::TooFewFrames(1));
    }

    #[test]
    fn apply_rescales_frames() {
        let d = ramp(4, 4);
        let mut frames = vec![d.clone(), d.scaled(4.0)];
        let c = align_depth_scales(&frames, &all_bg(4, 4)).unwrap();
        c.apply(&mut frames);
        for (a, b) in frames[0].values.iter().zip(&frames[1].values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn scale_equivariance(k in 0.05f64..20.0, s in 0.1f64..10.0) {
            let d = ramp(8, 6);
            let bg = all_bg(8, 6);
            let base = align_depth_scales(&[d.clone(), d.scaled(s)], &bg).unwrap().coefficients[1];
            let scaled = align_depth_scales(&[d.clone(), d.scaled(s * k)], &bg).unwrap().coefficients[1];
            prop_assert!(((scaled - base / k) / (base / k)).abs() < 1e-12);
        }
    }
}
