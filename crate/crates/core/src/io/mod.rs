//! On-disk formats: cameras.json, point-cloud PLY, matches and seed correspondences.

pub mod ply;

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Camera, Match2D3D, PointCloud, SeedCorrespondence};
use ply::{PlyFormat, ScalarType, VertexTable};

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file_name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{file_name}.tmp{}", std::process::id()));
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::json(path, e))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::json(path, e))
}

/// One entry of `cameras.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub id: u32,
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Row-major world→camera rotation.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    /// Image path relative to the cameras file.
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
}

impl CameraRecord {
    pub fn from_camera(cam: &Camera, image: impl Into<String>) -> Self {
        let r = &cam.rotation;
        Self {
            id: cam.id,
            width: cam.width,
            height: cam.height,
            fx: cam.fx,
            fy: cam.fy,
            cx: cam.cx,
            cy: cam.cy,
            rotation: [
                r[(0, 0)],
                r[(0, 1)],
                r[(0, 2)],
                r[(1, 0)],
                r[(1, 1)],
                r[(1, 2)],
                r[(2, 0)],
                r[(2, 1)],
                r[(2, 2)],
            ],
            translation: [cam.translation.x, cam.translation.y, cam.translation.z],
            image: image.into(),
            split: None,
        }
    }

    pub fn to_camera(&self) -> Result<Camera> {
        Camera::new(
            self.id,
            self.width,
            self.height,
            self.fx,
            self.fy,
            self.cx,
            self.cy,
            Matrix3::from_row_slice(&self.rotation),
            Vector3::from(self.translation),
        )
    }
}

pub fn read_cameras(path: &Path) -> Result<Vec<CameraRecord>> {
    let records: Vec<CameraRecord> = read_json(path)?;
    for r in &records {
        r.to_camera()?;
    }
    Ok(records)
}

pub fn write_cameras(path: &Path, records: &[CameraRecord]) -> Result<()> {
    write_json(path, records)
}

/// Resolves a record's image path against the directory holding the cameras file.
pub fn image_path(cameras_file: &Path, record: &CameraRecord) -> PathBuf {
    cameras_file.parent().unwrap_or(Path::new(".")).join(&record.image)
}

pub fn read_point_cloud(path: &Path) -> Result<PointCloud> {
    let table = ply::read_vertices(path)?;
    let (x, y, z) = (table.require("x")?, table.require("y")?, table.require("z")?);
    let points = table.rows.iter().map(|r| Vector3::new(r[x], r[y], r[z])).collect();
    let colors = match (table.column("red"), table.column("green"), table.column("blue")) {
        (Some(r), Some(g), Some(b)) => {
            let denom = match table.property_type("red") {
                Some(ScalarType::U8) => 255.0,
                Some(ScalarType::U16) => 65535.0,
                _ => 1.0,
            };
            Some(table.rows.iter().map(|row| Vector3::new(row[r], row[g], row[b]) / denom).collect())
        }
        _ => None,
    };
    PointCloud::new(points, colors).map_err(|e| Error::Ply(format!("{}: {e}", path.display())))
}

/// Writes xyz (and colors, as reals in [0,1]) with double precision.
pub fn write_point_cloud(path: &Path, cloud: &PointCloud, format: PlyFormat) -> Result<()> {
    let mut properties: Vec<(String, ScalarType)> =
        ["x", "y", "z"].iter().map(|n| (n.to_string(), ScalarType::F64)).collect();
    if cloud.colors.is_some() {
        properties.extend(["red", "green", "blue"].iter().map(|n| (n.to_string(), ScalarType::F64)));
    }
    let rows = cloud
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut row = vec![p.x, p.y, p.z];
            if let Some(c) = cloud.color(i) {
                row.extend_from_slice(&[c.x, c.y, c.z]);
            }
            row
        })
        .collect();
    ply::write_vertices(path, &VertexTable { properties, rows }, format)
}

#[derive(Serialize, Deserialize)]
struct MatchRecord {
    view_id: u32,
    pixel: [f64; 2],
    point_index: usize,
}

pub fn read_matches(path: &Path) -> Result<Vec<Match2D3D>> {
    let raw: Vec<MatchRecord> = read_json(path)?;
    Ok(raw.into_iter().map(|m| Match2D3D { view_id: m.view_id, pixel: m.pixel, point_index: m.point_index }).collect())
}

pub fn write_matches(path: &Path, matches: &[Match2D3D]) -> Result<()> {
    let raw: Vec<MatchRecord> = matches
        .iter()
        .map(|m| MatchRecord { view_id: m.view_id, pixel: m.pixel, point_index: m.point_index })
        .collect();
    write_json(path, &raw)
}

pub fn read_seed_correspondences(path: &Path) -> Result<Vec<SeedCorrespondence>> {
    read_json(path)
}

pub fn write_seed_correspondences(path: &Path, seeds: &[SeedCorrespondence]) -> Result<()> {
    write_json(path, seeds)
}
