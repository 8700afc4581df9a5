use super::unproject::unproject_where;
use super::{check_dims, GeomError};
use crate::model::{Aabb3, CameraModel, DepthMap, PixelMask, PointCloud};

/// Unprojects only the pixels where `mask` is set and depth is valid.
pub fn lift_mask(depth: &DepthMap, cam: &CameraModel, mask: &PixelMask) -> Result<PointCloud, GeomError> {
    check_dims("mask", (depth.width, depth.height), (mask.width, mask.height))?;
    let pc = unproject_where(depth, None, cam, |i| mask.bits[i])?;
    if pc.is_empty() {
        return Err(GeomError::EmptyLift);
    }
    Ok(pc)
}

/// Linear-interpolation quantile of already sorted values.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = h - lo as f64;
    if frac == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

/// Per-axis `[trim_q, 1 − trim_q]` quantile box; `trim_q = 0` gives the exact extremes.
pub fn aabb_from_points(pc: &PointCloud, trim_q: f64) -> Result<Aabb3, GeomError> {
    if !(0.0..0.5).contains(&trim_q) {
        return Err(GeomError::InvalidTrim(trim_q));
    }
    if pc.is_empty() {
        return Err(GeomError::EmptyCloud);
    }
    let mut min = [0.0; 3];
    let mut max = [0.0; 3];
    let mut axis_values = Vec::with_capacity(pc.len());
    for axis in 0..3 {
        axis_values.clear();
        axis_values.extend(pc.points.iter().map(|p| p[axis]));
        if trim_q == 0.0 {
            min[axis] = axis_values.iter().copied().fold(f64::INFINITY, f64::min);
            max[axis] = axis_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        } else {
            axis_values.sort_unstable_by(f64::total_cmp);
            min[axis] = quantile_sorted(&axis_values, trim_q);
            max[axis] = quantile_sorted(&axis_values, 1.0 - trim_q);
        }
    }
    Ok(Aabb3::new(min, max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom3d::unproject;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn cloud(points: Vec<[f64; 3]>) -> PointCloud {
        PointCloud {
            points,
            colors: vec![],
        }
    }

    #[test]
    fn cube_corners() {
        let mut pts = Vec::new();
        for i in 0..8 {
            pts.push([(i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64]);
        }
        assert_eq!(aabb_from_points(&cloud(pts), 0.0).unwrap(), Aabb3::new([0.0; 3], [1.0; 3]));
    }

    #[test]
    fn single_point_is_degenerate() {
        let p = [0.3, -2.0, 7.5];
        for q in [0.0, 0.1, 0.49] {
            assert_eq!(aabb_from_points(&cloud(vec![p]), q).unwrap(), Aabb3::new(p, p));
        }
    }

    #[test]
    fn trimming_rejects_outlier() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut pts: Vec<[f64; 3]> = (0..1000)
            .map(|_| [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()])
            .collect();
        pts.push([10.0; 3]);
        let b = aabb_from_points(&cloud(pts), 0.01).unwrap();
        assert!(b.max.iter().all(|m| *m < 1.01), "{b:?}");
    }

    #[test]
    fn errors() {
        assert_eq!(aabb_from_points(&cloud(vec![]), 0.0).unwrap_err(), GeomError::EmptyCloud);
        assert_eq!(aabb_from_points(&cloud(vec![[0.0; 3]]), 0.5).unwrap_err(), GeomError::InvalidTrim(0.5));
    }

    #[test]
    fn quantile_interpolates() {
        let v = [0.0, 1.0, 2.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.0), 0.0);
        assert_eq!(quantile_sorted(&v, 1.0), 4.0);
        assert!((quantile_sorted(&v, 0.5) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn full_mask_matches_unproject() {
        let cam = CameraModel::new(4.0, 4.0, 2.0, 1.5, 4, 3);
        let depth = DepthMap::from_meters(4, 3, (0..12).map(|i| if i == 4 { 0.0 } else { 1.0 + i as f64 }).collect());
        let lifted = lift_mask(&depth, &cam, &PixelMask::filled(4, 3, true)).unwrap();
        assert_eq!(lifted, unproject(&depth, None, &cam).unwrap());

        let mut one = PixelMask::filled(4, 3, false);
        one.set(1, 2, true);
        let single = lift_mask(&depth, &cam, &one).unwrap();
        assert_eq!(single.points.len(), 1);
        let expect = cam.camera_to_world(&cam.pixel_to_camera(1, 2, 10.0));
        assert_eq!(single.points[0], [expect.x, expect.y, expect.z]);

        let mut invalid_only = PixelMask::filled(4, 3, false);
        invalid_only.bits[4] = true;
        assert_eq!(lift_mask(&depth, &cam, &invalid_only).unwrap_err(), GeomError::EmptyLift);
    }

    #[test]
    fn fronto_parallel_square() {
        let (w, h) = (32, 24);
        let cam = CameraModel::new(30.0, 30.0, 16.0, 12.0, w, h);
        let mut mask = PixelMask::filled(w, h, false);
        for v in 8..16 {
            for u in 10..20 {
                mask.set(u, v, true);
            }
        }
        let values = (0..w * h).map(|i| if mask.bits[i] { 2.0 } else { 5.0 }).collect();
        let pc = lift_mask(&DepthMap::from_meters(w, h, values), &cam, &mask).unwrap();
        assert_eq!(pc.len(), 80);
        assert!(pc.points.iter().all(|p| (p[2] - 2.0).abs() < 1e-9));
    }

    proptest! {
        #[test]
        fn untrimmed_box_contains_all(pts in prop::collection::vec(prop::array::uniform3(-100.0f64..100.0), 1..200)) {
            let b = aabb_from_points(&cloud(pts.clone()), 0.0).unwrap();
            prop_assert!(pts.iter().all(|p| b.contains(p)));
        }

        #[test]
        fn trimmed_box_keeps_expected_fraction(pts in prop::collection::vec(prop::array::uniform3(-10.0f64..10.0), 50..400),
                                               q in 0.0f64..0.2) {
            let b = aabb_from_points(&cloud(pts.clone()), q).unwrap();
            let n = pts.len() as f64;
            for axis in 0..3 {
                let inside = pts.iter().filter(|p| p[axis] >= b.min[axis] && p[axis] <= b.max[axis]).count() as f64;
                // interpolated quantiles can drop up to one sample at each end
                prop_assert!(inside >= (1.0 - 2.0 * q) * n - 2.0, "axis {} inside {} of {}", axis, inside, n);
            }
        }
    }
}
