//! Asset path conventions shared by the builders and the exporter.

/// What a sample's asset path points at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AssetKind {
    /// Point cloud of frame `t`.
    Scene(usize),
    /// RGB image of frame `t`.
    Rgb(usize),
    /// Metric depth of frame `t`.
    Depth(usize),
}

impl AssetKind {
    /// Path relative to the dataset root.
    pub fn path(self, episode_id: &str, pointcloud_ext: &str) -> String {
        match self {
            AssetKind::Scene(t) => format!("assets/{episode_id}/scene_{t:04}.{pointcloud_ext}"),
            AssetKind::Rgb(t) => format!("assets/{episode_id}/rgb_{t:04}.png"),
            AssetKind::Depth(t) => format!("assets/{episode_id}/depth_{t:04}.f32"),
        }
    }

    /// Inverse of [`AssetKind::path`]: the episode id and kind, if the path
    /// follows the convention.
    pub fn parse(path: &str) -> Option<(String, AssetKind)> {
        let rest = path.strip_prefix("assets/")?;
        let (episode, file) = rest.split_once('/')?;
        let (stem, _ext) = file.rsplit_once('.')?;
        let (kind, index) = stem.split_once('_')?;
        if index.len() < 4 || !index.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        let t: usize = index.parse().ok()?;
        let kind = match kind {
            "scene" => AssetKind::Scene(t),
            "rgb" => AssetKind::Rgb(t),
            "depth" => AssetKind::Depth(t),
            _ => return None,
        };
        Some((episode.to_string(), kind))
    }
}
