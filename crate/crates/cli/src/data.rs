//! Dataset directories: one file per cloud plus `manifest.json`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use mvpconv::pointcloud::{generate_synthetic, read_cloud, write_cloud, Encoding, PointCloud, ShapeKind};

use crate::{write_json, CliError, CliResult};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: ShapeKind,
    pub n_points: usize,
    pub n_clouds: usize,
    pub num_classes: usize,
    pub seed: u64,
    pub encoding: Encoding,
    /// File names relative to the manifest.
    pub files: Vec<String>,
}

pub fn write_dataset(
    dir: &Path,
    kind: ShapeKind,
    n_points: usize,
    n_clouds: usize,
    seed: u64,
    encoding: Encoding,
) -> CliResult<Manifest> {
    let clouds = generate_synthetic(kind, n_points, n_clouds, seed)?;
    std::fs::create_dir_all(dir).map_err(|e| mvpconv::Error::io(dir, e))?;
    let mut files = Vec::with_capacity(clouds.len());
    for (i, cloud) in clouds.iter().enumerate() {
        let name = format!("cloud_{i:04}.{}", encoding.extension());
        write_cloud(cloud, dir.join(&name), encoding)?;
        files.push(name);
    }
    let manifest = Manifest {
        kind,
        n_points,
        n_clouds,
        num_classes: kind.num_classes(),
        seed,
        encoding,
        files,
    };
    write_json(&manifest, &dir.join(MANIFEST))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> CliResult<Manifest> {
    let path = dir.join(MANIFEST);
    if !path.is_file() {
        return Err(CliError::Usage(format!("dataset manifest not found: {}", path.display())));
    }
    let text = std::fs::read_to_string(&path).map_err(|e| mvpconv::Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|source| CliError::Json { path, source })
}

/// Clouds in manifest order.
pub fn read_dataset(dir: &Path) -> CliResult<Vec<PointCloud<f32>>> {
    let manifest = read_manifest(dir)?;
    manifest
        .files
        .iter()
        .map(|f| read_cloud(dir.join(f)).map_err(CliError::from))
        .collect()
}
