//! On-disk formats: raw depth and flow, depth PNG, detections, point clouds.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use image::{ImageBuffer, Luma, RgbImage};
use serde::{Deserialize, Serialize};

use super::{format_err, io_err, PipelineError};
use crate::model::{DepthMap, FlowField, MaskDetection, PixelMask, PointCloud};

const DEPTH_MAGIC: &[u8; 4] = b"DPTH";
const FLOW_MAGIC: &[u8; 4] = b"FLOW";
const CLOUD_MAGIC: &[u8; 4] = b"PC3D";
/// Header flag: the cloud carries real colors.
pub const CLOUD_FLAG_COLORS: u32 = 1;

fn read_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

fn read_f32(b: &[u8], at: usize) -> f32 {
    f32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

/// Reads a `magic, u32 width, u32 height` header and checks the payload size.
fn raw_grid<'a>(path: &Path, bytes: &'a [u8], magic: &[u8; 4], floats_per_pixel: usize) -> Result<(usize, usize, &'a [u8]), PipelineError> {
    if bytes.len() < 12 || &bytes[..4] != magic {
        return Err(format_err(path, format!("missing {} header", String::from_utf8_lossy(magic))));
    }
    let w = read_u32(bytes, 4) as usize;
    let h = read_u32(bytes, 8) as usize;
    let expect = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(4 * floats_per_pixel))
        .ok_or_else(|| format_err(path, "dimensions overflow"))?;
    let payload = &bytes[12..];
    if payload.len() != expect {
        return Err(format_err(
            path,
            format!("{w}x{h} needs {expect} payload bytes, found {}", payload.len()),
        ));
    }
    Ok((w, h, payload))
}

fn grid_header(magic: &[u8; 4], w: usize, h: usize, cap: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + cap);
    out.extend_from_slice(magic);
    out.extend_from_slice(&(w as u32).to_le_bytes());
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out
}

/// Raw float32 depth in meters.
pub fn read_depth_f32(path: &Path) -> Result<DepthMap, PipelineError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let (w, h, payload) = raw_grid(path, &bytes, DEPTH_MAGIC, 1)?;
    let values = (0..w * h).map(|i| read_f32(payload, 4 * i) as f64).collect();
    Ok(DepthMap::from_meters(w, h, values))
}

/// Invalid pixels are written as 0.
pub fn write_depth_f32(depth: &DepthMap, path: &Path) -> Result<(), PipelineError> {
    let mut out = grid_header(DEPTH_MAGIC, depth.width, depth.height, depth.values.len() * 4);
    for (v, ok) in depth.values.iter().zip(&depth.valid) {
        let x = if *ok { *v as f32 } else { 0.0 };
        out.extend_from_slice(&x.to_le_bytes());
    }
    fs::write(path, out).map_err(io_err(path))
}

/// 16-bit grayscale PNG in millimeters; 0 marks missing depth.
pub fn read_depth_png_mm(path: &Path) -> Result<DepthMap, PipelineError> {
    let img = image::open(path).map_err(|e| format_err(path, e.to_string()))?;
    let img = match img {
        image::DynamicImage::ImageLuma16(i) => i,
        other => return Err(format_err(path, format!("expected 16-bit grayscale, found {:?}", other.color()))),
    };
    let (w, h) = (img.width() as usize, img.height() as usize);
    let values = img.pixels().map(|p| p.0[0] as f64 / 1000.0).collect();
    Ok(DepthMap::from_meters(w, h, values))
}

/// Rounds to whole millimeters; invalid or out-of-range pixels become 0.
pub fn write_depth_png_mm(depth: &DepthMap, path: &Path) -> Result<(), PipelineError> {
    let data: Vec<u16> = depth
        .values
        .iter()
        .zip(&depth.valid)
        .map(|(v, ok)| {
            let mm = (v * 1000.0).round();
            if *ok && mm >= 1.0 && mm <= u16::MAX as f64 {
                mm as u16
            } else {
                0
            }
        })
        .collect();
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(depth.width as u32, depth.height as u32, data).expect("buffer size matches");
    img.save(path).map_err(|e| format_err(path, e.to_string()))
}

pub fn read_flow(path: &Path) -> Result<FlowField, PipelineError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let (w, h, payload) = raw_grid(path, &bytes, FLOW_MAGIC, 2)?;
    let vectors = (0..w * h)
        .map(|i| [read_f32(payload, 8 * i), read_f32(payload, 8 * i + 4)])
        .collect();
    Ok(FlowField {
        width: w,
        height: h,
        vectors,
    })
}

pub fn write_flow(flow: &FlowField, path: &Path) -> Result<(), PipelineError> {
    let mut out = grid_header(FLOW_MAGIC, flow.width, flow.height, flow.vectors.len() * 8);
    for [x, y] in &flow.vectors {
        out.extend_from_slice(&x.to_le_bytes());
        out.extend_from_slice(&y.to_le_bytes());
    }
    fs::write(path, out).map_err(io_err(path))
}

pub fn read_rgb(path: &Path) -> Result<RgbImage, PipelineError> {
    Ok(image::open(path).map_err(|e| format_err(path, e.to_string()))?.into_rgb8())
}

pub fn write_rgb(img: &RgbImage, path: &Path) -> Result<(), PipelineError> {
    img.save(path).map_err(|e| format_err(path, e.to_string()))
}

/// Row-major run-length mask. `counts` alternate unset/set runs, starting
/// with an unset run (possibly of length 0).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    /// `[height, width]`.
    pub size: [usize; 2],
    pub counts: Vec<usize>,
}

impl RleMask {
    pub fn encode(mask: &PixelMask) -> Self {
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0;
        for &b in &mask.bits {
            if b != current {
                counts.push(run);
                run = 0;
                current = b;
            }
            run += 1;
        }
        counts.push(run);
        RleMask {
            size: [mask.height, mask.width],
            counts,
        }
    }

    pub fn decode(&self) -> Result<PixelMask, String> {
        let [h, w] = self.size;
        let n = w * h;
        let total: usize = self.counts.iter().sum();
        if total != n {
            return Err(format!("run lengths sum to {total}, mask has {n} pixels"));
        }
        let mut bits = Vec::with_capacity(n);
        for (i, &c) in self.counts.iter().enumerate() {
            bits.extend(std::iter::repeat_n(i % 2 == 1, c));
        }
        Ok(PixelMask::new(w, h, bits))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub frame_index: usize,
    pub label: String,
    pub confidence: f64,
    pub rle_mask: RleMask,
}

/// Reads a JSON array of detections into one list per frame.
pub fn read_detections(path: &Path, n_frames: usize) -> Result<Vec<Vec<MaskDetection>>, PipelineError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let records: Vec<DetectionRecord> =
        serde_json::from_str(&text).map_err(|e| format_err(path, format!("invalid detections JSON: {e}")))?;
    let mut out = vec![Vec::new(); n_frames];
    for (i, r) in records.into_iter().enumerate() {
        if r.frame_index >= n_frames {
            return Err(format_err(
                path,
                format!("[{i}].frame_index {} ≥ {n_frames} frames", r.frame_index),
            ));
        }
        let mask = r.rle_mask.decode().map_err(|m| format_err(path, format!("[{i}].rle_mask: {m}")))?;
        out[r.frame_index].push(MaskDetection {
            label: r.label,
            mask,
            confidence: r.confidence,
        });
    }
    Ok(out)
}

pub fn write_detections(detections: &[Vec<MaskDetection>], path: &Path) -> Result<(), PipelineError> {
    let records: Vec<DetectionRecord> = detections
        .iter()
        .enumerate()
        .flat_map(|(t, dets)| {
            dets.iter().map(move |d| DetectionRecord {
                frame_index: t,
                label: d.label.clone(),
                confidence: d.confidence,
                rle_mask: RleMask::encode(&d.mask),
            })
        })
        .collect();
    let text = serde_json::to_string(&records).expect("detections serialize");
    fs::write(path, text).map_err(io_err(path))
}

/// Point-cloud file formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    /// 16-byte `PC3D` header (magic, count, flags, reserved), then x, y, z, r, g, b as little-endian f32 per point.
    BinXyzRgb,
    /// Binary little-endian PLY with float positions and uchar colors.
    Ply,
}

impl From<crate::config::PointCloudFormat> for CloudFormat {
    fn from(f: crate::config::PointCloudFormat) -> Self {
        match f {
            crate::config::PointCloudFormat::BinXyzRgb => CloudFormat::BinXyzRgb,
            crate::config::PointCloudFormat::Ply => CloudFormat::Ply,
        }
    }
}

fn color_byte(c: f32) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_pointcloud(pc: &PointCloud, format: CloudFormat) -> Vec<u8> {
    let n = pc.len();
    let color = |i: usize| pc.colors.get(i).copied().unwrap_or([0.0; 3]);
    match format {
        CloudFormat::BinXyzRgb => {
            let mut out = Vec::with_capacity(16 + 24 * n);
            out.extend_from_slice(CLOUD_MAGIC);
            out.extend_from_slice(&(n as u32).to_le_bytes());
            let flags = if pc.has_colors() { CLOUD_FLAG_COLORS } else { 0 };
            out.extend_from_slice(&flags.to_le_bytes());
            // Reserved, pads the header to 16 bytes.
            out.extend_from_slice(&0u32.to_le_bytes());
            for (i, p) in pc.points.iter().enumerate() {
                for v in p {
                    out.extend_from_slice(&(*v as f32).to_le_bytes());
                }
                for c in color(i) {
                    out.extend_from_slice(&c.to_le_bytes());
                }
            }
            out
        }
        CloudFormat::Ply => {
            let header = format!(
                "ply\nformat binary_little_endian 1.0\nelement vertex {n}\n\
                 property float x\nproperty float y\nproperty float z\n\
                 property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n"
            );
            let mut out = Vec::with_capacity(header.len() + 15 * n);
            out.extend_from_slice(header.as_bytes());
            for (i, p) in pc.points.iter().enumerate() {
                for v in p {
                    out.extend_from_slice(&(*v as f32).to_le_bytes());
                }
                out.extend(color(i).map(color_byte));
            }
            out
        }
    }
}

pub fn write_pointcloud(pc: &PointCloud, path: &Path, format: CloudFormat) -> Result<(), PipelineError> {
    if pc.is_empty() {
        return Err(format_err(path, "refusing to write an empty point cloud"));
    }
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    w.write_all(&encode_pointcloud(pc, format)).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

/// Reads the `PC3D` binary format. Colors are kept only when the header says
/// they are present.
pub fn read_pointcloud_bin(path: &Path) -> Result<PointCloud, PipelineError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.len() < 16 || &bytes[..4] != CLOUD_MAGIC {
        return Err(format_err(path, "missing PC3D header"));
    }
    let n = read_u32(&bytes, 4) as usize;
    let flags = read_u32(&bytes, 8);
    if bytes.len() != 16 + 24 * n {
        return Err(format_err(path, format!("{n} points need {} bytes, found {}", 16 + 24 * n, bytes.len())));
    }
    let mut pc = PointCloud::default();
    for i in 0..n {
        let at = 16 + 24 * i;
        let f = |k: usize| read_f32(&bytes, at + 4 * k);
        pc.points.push([f(0) as f64, f(1) as f64, f(2) as f64]);
        if flags & CLOUD_FLAG_COLORS != 0 {
            pc.colors.push([f(3), f(4), f(5)]);
        }
    }
    Ok(pc)
}

/// Reads the PLY layout written by [`write_pointcloud`].
pub fn read_pointcloud_ply(path: &Path) -> Result<PointCloud, PipelineError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let marker = b"end_header\n";
    let end = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| format_err(path, "no end_header"))?
        + marker.len();
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| format_err(path, "header is not UTF-8"))?;
    if !header.starts_with("ply\nformat binary_little_endian 1.0\n") {
        return Err(format_err(path, "not a binary little-endian PLY"));
    }
    let n: usize = header
        .lines()
        .find_map(|l| l.strip_prefix("element vertex "))
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| format_err(path, "no vertex count"))?;
    let body = &bytes[end..];
    if body.len() != 15 * n {
        return Err(format_err(path, format!("{n} vertices need {} bytes, found {}", 15 * n, body.len())));
    }
    let mut pc = PointCloud::default();
    for i in 0..n {
        let at = 15 * i;
        let f = |k: usize| read_f32(body, at + 4 * k) as f64;
        pc.points.push([f(0), f(1), f(2)]);
        let c = &body[at + 12..at + 15];
        pc.colors.push([c[0] as f32 / 255.0, c[1] as f32 / 255.0, c[2] as f32 / 255.0]);
    }
    Ok(pc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cloud(n: usize, colors: bool) -> PointCloud {
        PointCloud {
            points: (0..n).map(|i| [i as f64 * 0.1, -1.5, 2.25 + i as f64]).collect(),
            colors: if colors {
                (0..n).map(|i| [0.0, 0.5, i as f32 / n.max(1) as f32]).collect()
            } else {
                vec![]
            },
        }
    }

    #[test]
    fn one_point_bin_size() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.bin");
        write_pointcloud(&cloud(1, true), &p, CloudFormat::BinXyzRgb).unwrap();
        assert_eq!(fs::metadata(&p).unwrap().len(), 16 + 24);
        assert!(write_pointcloud(&PointCloud::default(), &p, CloudFormat::BinXyzRgb).is_err());
    }

    #[test]
    fn bin_roundtrip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.bin");
        let pc = cloud(5, true);
        write_pointcloud(&pc, &p, CloudFormat::BinXyzRgb).unwrap();
        let back = read_pointcloud_bin(&p).unwrap();
        for (a, b) in pc.points.iter().zip(&back.points) {
            for k in 0..3 {
                assert_eq!((a[k] as f32).to_bits(), (b[k] as f32).to_bits());
            }
        }
        assert_eq!(back.colors, pc.colors);
        assert_eq!(encode_pointcloud(&back, CloudFormat::BinXyzRgb), fs::read(&p).unwrap());
        let plain = dir.path().join("b.bin");
        write_pointcloud(&cloud(2, false), &plain, CloudFormat::BinXyzRgb).unwrap();
        assert!(read_pointcloud_bin(&plain).unwrap().colors.is_empty());
    }

    #[test]
    fn ply_header_and_body() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ply");
        write_pointcloud(&cloud(3, true), &p, CloudFormat::Ply).unwrap();
        let bytes = fs::read(&p).unwrap();
        let text = String::from_utf8_lossy(&bytes);
        assert!(text.contains("element vertex 3\n"));
        let back = read_pointcloud_ply(&p).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back.points[2][2], 4.25);
        assert_eq!(back.colors[0][1], 128.0 / 255.0);
    }

    #[test]
    fn depth_formats() {
        let dir = tempfile::tempdir().unwrap();
        let d = DepthMap::from_meters(3, 2, vec![1.5, 0.0, 2.25, f64::NAN, 0.001, 10.0]);
        let raw = dir.path().join("d.f32");
        write_depth_f32(&d, &raw).unwrap();
        let back = read_depth_f32(&raw).unwrap();
        assert_eq!(back.valid, d.valid);
        assert_eq!(back.values[0], 1.5);
        let png = dir.path().join("d.png");
        write_depth_png_mm(&d, &png).unwrap();
        let back = read_depth_png_mm(&png).unwrap();
        assert_eq!(back.values[0], 1.5);
        assert_eq!(back.values[4], 0.001);
        assert!(!back.valid[1] && !back.valid[3]);

        let img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(1, 1, vec![1500]).unwrap();
        let mm = dir.path().join("mm.png");
        img.save(&mm).unwrap();
        assert_eq!(read_depth_png_mm(&mm).unwrap().values, vec![1.5]);

        let rgb = dir.path().join("rgb.png");
        RgbImage::new(2, 2).save(&rgb).unwrap();
        assert!(read_depth_png_mm(&rgb).is_err());
        fs::write(&raw, b"DPTH\x02\0\0\0\x02\0\0\0abc").unwrap();
        assert!(read_depth_f32(&raw).is_err());
    }

    #[test]
    fn flow_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.flow");
        let mut f = FlowField::zeros(3, 2);
        f.vectors[4] = [1.25, -7.0];
        write_flow(&f, &p).unwrap();
        assert_eq!(read_flow(&p).unwrap(), f);
    }

    #[test]
    fn detections_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("det.json");
        let mut mask = PixelMask::filled(4, 3, false);
        mask.set(1, 1, true);
        mask.set(2, 1, true);
        let dets = vec![
            vec![MaskDetection {
                label: "cup".into(),
                mask: mask.clone(),
                confidence: 0.75,
            }],
            vec![],
        ];
        write_detections(&dets, &p).unwrap();
        assert_eq!(read_detections(&p, 2).unwrap(), dets);
        assert!(read_detections(&p, 0).is_err());
        assert_eq!(RleMask::encode(&mask).counts, vec![5, 2, 5]);
        let bad = RleMask {
            size: [2, 2],
            counts: vec![1, 1],
        };
        assert!(bad.decode().is_err());
    }

    proptest! {
        #[test]
        fn rle_roundtrip(bits in prop::collection::vec(any::<bool>(), 1..200)) {
            let n = bits.len();
            let mask = PixelMask::new(n, 1, bits);
            let rle = RleMask::encode(&mask);
            prop_assert_eq!(rle.decode().unwrap(), mask);
        }
    }
}
