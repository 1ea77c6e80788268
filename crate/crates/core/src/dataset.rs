//! Multi-view dataset ingestion: a camera manifest (global horizontal field
//! of view plus per-frame camera-to-world matrices) next to the referenced
//! images. The manifest layout is documented in `docs/formats.md`.

use std::path::{Path, PathBuf};

use glam::{DMat3, DVec3};
use serde::Deserialize;

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::grid::{ColorGrid, Grid, ScalarGrid};

/// One calibrated view: LDR image in [0, 1] (values as stored, no
/// linearization), its foreground mask from the alpha channel, and the
/// camera.
#[derive(Clone, Debug)]
pub struct DatasetView {
    pub image: ColorGrid,
    pub alpha: ScalarGrid,
    pub camera: Camera,
    pub name: String,
}

impl DatasetView {
    /// Ground-truth color composited over black: `rgb * alpha`.
    pub fn composited(&self) -> ColorGrid {
        Grid {
            width: self.image.width,
            height: self.image.height,
            data: self
                .image
                .data
                .iter()
                .zip(&self.alpha.data)
                .map(|(c, a)| *c * *a)
                .collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub views: Vec<DatasetView>,
    /// Non-fatal issues encountered while loading (e.g. images without an
    /// alpha channel, which get an all-ones mask).
    pub warnings: Vec<String>,
}

#[derive(Deserialize)]
struct Manifest {
    camera_angle_x: f64,
    frames: Vec<ManifestFrame>,
}

#[derive(Deserialize)]
struct ManifestFrame {
    file_path: String,
    transform_matrix: Vec<Vec<f64>>,
}

/// Load the training split (`transforms_train.json`).
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    load_split(root, "transforms_train.json")
}

/// Load a specific manifest from the dataset root.
pub fn load_split(root: &Path, manifest_name: &str) -> Result<Dataset> {
    let manifest_path = root.join(manifest_name);
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::Dataset {
        path: manifest_path.clone(),
        message: format!("cannot read manifest: {e}"),
    })?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: manifest_path.clone(),
        source,
    })?;

    let mut views = Vec::with_capacity(manifest.frames.len());
    let mut warnings = Vec::new();
    for frame in &manifest.frames {
        let image_path = resolve_image_path(root, &frame.file_path)?;
        let (image, alpha, had_alpha) = load_image_rgba(&image_path)?;
        if !had_alpha {
            warnings.push(format!(
                "{}: no alpha channel, using an all-ones mask",
                image_path.display()
            ));
        }
        let camera = camera_from_manifest(
            manifest.camera_angle_x,
            &frame.transform_matrix,
            image.width,
            image.height,
            &manifest_path,
        )?;
        views.push(DatasetView {
            image,
            alpha,
            camera,
            name: frame.file_path.clone(),
        });
    }
    Ok(Dataset { views, warnings })
}

fn resolve_image_path(root: &Path, file_path: &str) -> Result<PathBuf> {
    let direct = root.join(file_path);
    if direct.exists() {
        return Ok(direct);
    }
    let with_png = root.join(format!("{file_path}.png"));
    if with_png.exists() {
        return Ok(with_png);
    }
    Err(Error::Dataset {
        path: direct,
        message: "referenced image not found (tried as-is and with .png appended)".into(),
    })
}

/// Decode an 8-bit RGBA (or RGB) PNG to float [0, 1]; values stay in the
/// stored encoding.
pub fn load_image_rgba(path: &Path) -> Result<(ColorGrid, ScalarGrid, bool)> {
    let img = image::open(path)?;
    let had_alpha = img.color().has_alpha();
    let rgba = img.to_rgba8();
    let (w, h) = (rgba.width() as usize, rgba.height() as usize);
    let mut color = Grid::new(w, h);
    let mut alpha = Grid::new(w, h);
    for (i, px) in rgba.pixels().enumerate() {
        color.data[i] = DVec3::new(
            px[0] as f64 / 255.0,
            px[1] as f64 / 255.0,
            px[2] as f64 / 255.0,
        );
        alpha.data[i] = if had_alpha { px[3] as f64 / 255.0 } else { 1.0 };
    }
    Ok((color, alpha, had_alpha))
}

/// Build the world-to-camera pinhole from a camera-to-world matrix in the
/// OpenGL convention (+x right, +y up, -z forward) and a horizontal FOV.
fn camera_from_manifest(
    camera_angle_x: f64,
    matrix: &[Vec<f64>],
    width: usize,
    height: usize,
    manifest_path: &Path,
) -> Result<Camera> {
    if matrix.len() != 4 || matrix.iter().any(|row| row.len() != 4) {
        return Err(Error::Dataset {
            path: manifest_path.to_path_buf(),
            message: "transform_matrix must be 4x4".into(),
        });
    }
    let col = |c: usize| DVec3::new(matrix[0][c], matrix[1][c], matrix[2][c]);
    // Flip y and z to move from OpenGL to the internal +y-down +z-forward
    // convention, then invert the rigid transform.
    let c2w = DMat3::from_cols(col(0), -col(1), -col(2));
    let position = col(3);
    let det = c2w.determinant();
    if det.abs() < 1e-8 {
        return Err(Error::Dataset {
            path: manifest_path.to_path_buf(),
            message: format!("transform_matrix rotation is not invertible (det = {det})"),
        });
    }
    let rotation = c2w.transpose();
    let fx = width as f64 / (2.0 * (camera_angle_x / 2.0).tan());
    Ok(Camera {
        width,
        height,
        fx,
        fy: fx,
        cx: width as f64 / 2.0,
        cy: height as f64 / 2.0,
        rotation,
        translation: -(rotation * position),
        near: 0.01,
        far: 1000.0,
    })
}

/// Load only the cameras from a manifest file (no images decoded). Image
/// dimensions come from the referenced image when it exists, otherwise from
/// the fallback resolution.
pub fn load_cameras(
    manifest_path: &Path,
    fallback: (usize, usize),
) -> Result<Vec<(String, Camera)>> {
    let text = std::fs::read_to_string(manifest_path).map_err(|e| Error::Dataset {
        path: manifest_path.to_path_buf(),
        message: format!("cannot read manifest: {e}"),
    })?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: manifest_path.to_path_buf(),
        source,
    })?;
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::with_capacity(manifest.frames.len());
    for frame in &manifest.frames {
        let (w, h) = match resolve_image_path(root, &frame.file_path) {
            Ok(p) => {
                let dims = image::image_dimensions(&p)?;
                (dims.0 as usize, dims.1 as usize)
            }
            Err(_) => fallback,
        };
        let camera = camera_from_manifest(
            manifest.camera_angle_x,
            &frame.transform_matrix,
            w,
            h,
            manifest_path,
        )?;
        out.push((frame.file_path.clone(), camera));
    }
    Ok(out)
}

/// Serialize frames back into manifest JSON (used by the scene generator).
pub fn manifest_json(camera_angle_x: f64, frames: &[(String, [[f64; 4]; 4])]) -> String {
    let frames_json: Vec<serde_json::Value> = frames
        .iter()
        .map(|(path, m)| {
            serde_json::json!({
                "file_path": path,
                "transform_matrix": m,
            })
        })
        .collect();
    serde_json::to_string_pretty(&serde_json::json!({
        "camera_angle_x": camera_angle_x,
        "frames": frames_json,
    }))
    .expect("static structure")
}

/// Camera-to-world matrix (OpenGL convention) for a camera looking at a
/// target; inverse of [`Camera::look_at`]'s pose.
pub fn camera_to_world_gl(eye: DVec3, target: DVec3, up: DVec3) -> [[f64; 4]; 4] {
    let forward = (target - eye).normalize();
    let right = forward.cross(up).normalize();
    let cam_up = right.cross(forward);
    // OpenGL columns: x right, y up, z backward.
    let cols = [right, cam_up, -forward, eye];
    let mut m = [[0.0; 4]; 4];
    for (c, v) in cols.iter().enumerate() {
        m[0][c] = v.x;
        m[1][c] = v.y;
        m[2][c] = v.z;
    }
    m[3][3] = 1.0;
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_test_png(path: &Path, w: u32, h: u32, with_alpha: bool) {
        if with_alpha {
            let img = image::RgbaImage::from_fn(w, h, |x, y| {
                image::Rgba([(x * 40) as u8, (y * 40) as u8, 128, 200])
            });
            img.save(path).unwrap();
        } else {
            let img = image::RgbImage::from_fn(w, h, |x, _| image::Rgb([(x * 30) as u8, 0, 255]));
            img.save(path).unwrap();
        }
    }

    fn temp_dir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("relightsplat-dataset-{tag}-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn loads_two_frames_with_shared_intrinsics() {
        let dir = temp_dir("two");
        write_test_png(&dir.join("r_0.png"), 8, 6, true);
        write_test_png(&dir.join("r_1.png"), 8, 6, true);
        let eye0 = DVec3::new(0.0, -3.0, 0.0);
        let eye1 = DVec3::new(3.0, 0.0, 1.0);
        let manifest = manifest_json(
            1.0,
            &[
                ("r_0".into(), camera_to_world_gl(eye0, DVec3::ZERO, DVec3::Z)),
                ("r_1".into(), camera_to_world_gl(eye1, DVec3::ZERO, DVec3::Z)),
            ],
        );
        std::fs::write(dir.join("transforms_train.json"), manifest).unwrap();
        let ds = load_dataset(&dir).unwrap();
        assert_eq!(ds.views.len(), 2);
        assert_eq!(ds.views[0].camera.fx, ds.views[1].camera.fx);
        assert!((ds.views[0].camera.position() - eye0).length() < 1e-9);
        assert!((ds.views[1].camera.position() - eye1).length() < 1e-9);
        // The look-at target projects to the image center.
        let c = ds.views[0].camera.to_camera(DVec3::ZERO);
        assert!(c.x.abs() < 1e-9 && c.y.abs() < 1e-9 && c.z > 0.0);
        ds.views[0].camera.validate().unwrap();
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn focal_length_from_field_of_view() {
        // tan(fov/2) = 0.5 with width 800 gives fx = 800.
        let fov = 2.0 * 0.5f64.atan();
        let cam = camera_from_manifest(
            fov,
            &[
                vec![1.0, 0.0, 0.0, 0.0],
                vec![0.0, 1.0, 0.0, 0.0],
                vec![0.0, 0.0, 1.0, 0.0],
                vec![0.0, 0.0, 0.0, 1.0],
            ],
            800,
            800,
            Path::new("test"),
        )
        .unwrap();
        assert!((cam.fx - 800.0).abs() < 1e-9, "{}", cam.fx);
    }

    #[test]
    fn malformed_manifest_names_the_problem() {
        let dir = temp_dir("bad");
        std::fs::write(
            dir.join("transforms_train.json"),
            r#"{"frames": [{"file_path": "x", "transform_matrix": []}]}"#,
        )
        .unwrap();
        let err = load_dataset(&dir).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("camera_angle_x"), "{msg}");

        // Bad matrix shape.
        write_test_png(&dir.join("x.png"), 4, 4, true);
        std::fs::write(
            dir.join("transforms_train.json"),
            r#"{"camera_angle_x": 0.8, "frames": [{"file_path": "x", "transform_matrix": [[1,0],[0,1]]}]}"#,
        )
        .unwrap();
        let err = load_dataset(&dir).unwrap_err();
        assert!(err.to_string().contains("transform_matrix"), "{err}");
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn missing_alpha_gets_all_ones_mask_with_warning() {
        let dir = temp_dir("noalpha");
        write_test_png(&dir.join("r_0.png"), 4, 4, false);
        let manifest = manifest_json(
            0.8,
            &[(
                "r_0".into(),
                camera_to_world_gl(DVec3::new(0.0, -2.0, 0.0), DVec3::ZERO, DVec3::Z),
            )],
        );
        std::fs::write(dir.join("transforms_train.json"), manifest).unwrap();
        let ds = load_dataset(&dir).unwrap();
        assert_eq!(ds.warnings.len(), 1);
        assert!(ds.views[0].alpha.data.iter().all(|a| *a == 1.0));
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn missing_image_is_a_descriptive_error() {
        let dir = temp_dir("missing");
        let manifest = manifest_json(
            0.8,
            &[(
                "absent".into(),
                camera_to_world_gl(DVec3::new(0.0, -2.0, 0.0), DVec3::ZERO, DVec3::Z),
            )],
        );
        std::fs::write(dir.join("transforms_train.json"), manifest).unwrap();
        let err = load_dataset(&dir).unwrap_err();
        assert!(err.to_string().contains("absent"), "{err}");
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
