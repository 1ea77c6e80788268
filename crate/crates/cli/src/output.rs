//! Image and CSV writers shared by the subcommands. All file writes go
//! through a temp file and an atomic rename.

use std::path::Path;

use anyhow::{Context, Result};
use glam::DVec3;
use relightsplat::grid::{ColorGrid, Grid, ScalarGrid};

pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

/// 8-bit PNG from an LDR color image in [0, 1].
pub fn save_png_rgb(path: &Path, img: &ColorGrid) -> Result<()> {
    let mut out = image::RgbImage::new(img.width as u32, img.height as u32);
    for y in 0..img.height {
        for x in 0..img.width {
            let c = img.get(x, y) * 255.0;
            out.put_pixel(
                x as u32,
                y as u32,
                image::Rgb([
                    c.x.round().clamp(0.0, 255.0) as u8,
                    c.y.round().clamp(0.0, 255.0) as u8,
                    c.z.round().clamp(0.0, 255.0) as u8,
                ]),
            );
        }
    }
    let tmp = path.with_extension("tmp.png");
    out.save(&tmp)
        .with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save_png_gray(path: &Path, img: &ScalarGrid) -> Result<()> {
    let rgb = Grid {
        width: img.width,
        height: img.height,
        data: img.data.iter().map(|v| DVec3::splat(*v)).collect(),
    };
    save_png_rgb(path, &rgb)
}

/// Normals encoded as `(n + 1) / 2`.
pub fn save_png_normals(path: &Path, normals: &Grid<DVec3>) -> Result<()> {
    let rgb = Grid {
        width: normals.width,
        height: normals.height,
        data: normals
            .data
            .iter()
            .map(|n| (*n + DVec3::ONE) * 0.5)
            .collect(),
    };
    save_png_rgb(path, &rgb)
}

/// Raw 32-bit float image: magic, dimensions, then row-major RGB f32
/// triplets, little-endian (see docs/formats.md).
pub fn save_f32_image(path: &Path, img: &ColorGrid) -> Result<()> {
    let mut bytes = Vec::with_capacity(16 + img.data.len() * 12);
    bytes.extend_from_slice(b"RLF32IMG");
    bytes.extend_from_slice(&(img.width as u32).to_le_bytes());
    bytes.extend_from_slice(&(img.height as u32).to_le_bytes());
    for c in &img.data {
        bytes.extend_from_slice(&(c.x as f32).to_le_bytes());
        bytes.extend_from_slice(&(c.y as f32).to_le_bytes());
        bytes.extend_from_slice(&(c.z as f32).to_le_bytes());
    }
    atomic_write(path, &bytes)
}

/// Sanitize a manifest frame path into a flat output file stem.
pub fn frame_stem(name: &str) -> String {
    name.trim_start_matches("./")
        .replace('/', "_")
        .replace('\\', "_")
}
