use image::RgbImage;

use super::{check_dims, GeomError};
use crate::model::{CameraModel, DepthMap, PointCloud};

/// Lifts every valid depth pixel to a world-frame point, in row-major order.
///
/// Pixel `(u, v)` with depth `d` maps to the camera-frame point
/// `((u+0.5−cx)·d/fx, (v+0.5−cy)·d/fy, d)` and is then moved by the camera pose.
pub fn unproject(depth: &DepthMap, rgb: Option<&RgbImage>, cam: &CameraModel) -> Result<PointCloud, GeomError> {
    unproject_where(depth, rgb, cam, |_| true)
}

pub(crate) fn unproject_where(
    depth: &DepthMap,
    rgb: Option<&RgbImage>,
    cam: &CameraModel,
    keep: impl Fn(usize) -> bool,
) -> Result<PointCloud, GeomError> {
    check_dims("depth", (cam.width, cam.height), (depth.width, depth.height))?;
    if let Some(img) = rgb {
        check_dims(
            "rgb",
            (depth.width, depth.height),
            (img.width() as usize, img.height() as usize),
        )?;
    }
    let (w, h) = (depth.width, depth.height);
    let col_offset: Vec<f64> = (0..w).map(|u| u as f64 + 0.5 - cam.cx).collect();
    let r = cam.rotation;
    let t = cam.translation;

    let mut pc = PointCloud::default();
    for v in 0..h {
        let row_offset = v as f64 + 0.5 - cam.cy;
        for u in 0..w {
            let i = v * w + u;
            if !depth.valid[i] || !keep(i) {
                continue;
            }
            let d = depth.values[i];
            let x = col_offset[u] * d / cam.fx;
            let y = row_offset * d / cam.fy;
            pc.points.push([
                r[(0, 0)] * x + r[(0, 1)] * y + r[(0, 2)] * d + t[0],
                r[(1, 0)] * x + r[(1, 1)] * y + r[(1, 2)] * d + t[1],
                r[(2, 0)] * x + r[(2, 1)] * y + r[(2, 2)] * d + t[2],
            ]);
            if let Some(img) = rgb {
                let p = img.get_pixel(u as u32, v as u32).0;
                pc.colors.push([
                    p[0] as f32 / 255.0,
                    p[1] as f32 / 255.0,
                    p[2] as f32 / 255.0,
                ]);
            }
        }
    }
    Ok(pc)
}
