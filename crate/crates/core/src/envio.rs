//! Environment map ingestion and export.
//!
//! Environments are ingested either as equirectangular Radiance HDR images
//! (32-bit float RGB) or as a directory of six face images named `px, nx,
//! py, ny, pz, nz` (`.hdr` or `.png`), and resampled to the requested
//! cubemap resolution.

use std::path::Path;

use glam::DVec3;

use crate::cubemap::CubeMap;
use crate::error::{Error, Result};
use crate::grid::{ColorGrid, Grid};
use crate::shading::EnvironmentLight;

/// Load an environment as an unfiltered [`EnvironmentLight`].
pub fn load_environment(path: &Path, cubemap_res: usize) -> Result<EnvironmentLight> {
    let base = if path.is_dir() {
        load_face_directory(path, cubemap_res)?
    } else {
        match path.extension().and_then(|e| e.to_str()) {
            Some("hdr") => CubeMap::from_equirect(&load_equirect_hdr(path)?, cubemap_res),
            other => {
                return Err(Error::UnsupportedFormat {
                    path: path.to_path_buf(),
                    message: format!(
                        "extension {:?} not supported; expected an equirectangular .hdr \
                         image or a directory of 6 face images (px/nx/py/ny/pz/nz)",
                        other
                    ),
                })
            }
        }
    };
    Ok(EnvironmentLight::new(base))
}

/// Decode an equirectangular Radiance HDR image to linear float RGB.
pub fn load_equirect_hdr(path: &Path) -> Result<ColorGrid> {
    let img = image::open(path)?;
    let rgb = img.to_rgb32f();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut out = Grid::new(w, h);
    for (i, px) in rgb.pixels().enumerate() {
        out.data[i] = DVec3::new(px[0] as f64, px[1] as f64, px[2] as f64);
    }
    Ok(out)
}

/// Write a linear float RGB image as Radiance HDR.
pub fn save_equirect_hdr(path: &Path, img: &ColorGrid) -> Result<()> {
    let pixels: Vec<image::Rgb<f32>> = img
        .data
        .iter()
        .map(|c| image::Rgb([c.x as f32, c.y as f32, c.z as f32]))
        .collect();
    let file = std::fs::File::create(path)?;
    let encoder = image::codecs::hdr::HdrEncoder::new(std::io::BufWriter::new(file));
    encoder
        .encode(&pixels, img.width, img.height)
        .map_err(Error::Image)?;
    Ok(())
}

/// Export a cubemap to an equirectangular HDR file at `4*res x 2*res`.
pub fn save_environment(path: &Path, map: &CubeMap) -> Result<()> {
    let equirect = map.to_equirect(4 * map.res, 2 * map.res);
    save_equirect_hdr(path, &equirect)
}

const FACE_NAMES: [&str; 6] = ["px", "nx", "py", "ny", "pz", "nz"];

fn load_face_directory(dir: &Path, res: usize) -> Result<CubeMap> {
    let mut faces: Vec<ColorGrid> = Vec::with_capacity(6);
    for name in FACE_NAMES {
        let mut found = None;
        for ext in ["hdr", "png"] {
            let candidate = dir.join(format!("{name}.{ext}"));
            if candidate.exists() {
                found = Some(candidate);
                break;
            }
        }
        let Some(path) = found else {
            return Err(Error::Dataset {
                path: dir.to_path_buf(),
                message: format!("missing cubemap face `{name}` (expected {name}.hdr or {name}.png)"),
            });
        };
        let img = if path.extension().and_then(|e| e.to_str()) == Some("hdr") {
            load_equirect_hdr(&path)?
        } else {
            let (rgb, _, _) = crate::dataset::load_image_rgba(&path)?;
            rgb
        };
        faces.push(img);
    }
    // Resample each face image onto the requested face grid.
    let mut map = CubeMap::constant(res, DVec3::ZERO);
    for (f, img) in faces.iter().enumerate() {
        for y in 0..res {
            for x in 0..res {
                let u = (x as f64 + 0.5) / res as f64 * img.width as f64 - 0.5;
                let v = (y as f64 + 0.5) / res as f64 * img.height as f64 - 0.5;
                let sample = bilinear_color(img, u, v);
                let i = map.index(f, x, y);
                map.data[i] = sample;
            }
        }
    }
    Ok(map)
}

fn bilinear_color(img: &ColorGrid, x: f64, y: f64) -> DVec3 {
    let cx = x.clamp(0.0, (img.width - 1) as f64);
    let cy = y.clamp(0.0, (img.height - 1) as f64);
    let x0 = cx.floor() as usize;
    let y0 = cy.floor() as usize;
    let x1 = (x0 + 1).min(img.width - 1);
    let y1 = (y0 + 1).min(img.height - 1);
    let fx = cx - x0 as f64;
    let fy = cy - y0 as f64;
    img.get(x0, y0) * (1.0 - fx) * (1.0 - fy)
        + img.get(x1, y0) * fx * (1.0 - fy)
        + img.get(x0, y1) * (1.0 - fx) * fy
        + img.get(x1, y1) * fx * fy
}
