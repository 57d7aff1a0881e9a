//! NeRF-synthetic (`transforms_{train,test}.json`) ingestion.
//!
//! Poses are camera-to-world matrices in the OpenGL convention (x right,
//! y up, camera looking down −z). They are converted to the renderer's
//! convention (x right, y down, +z forward) and all camera centers are
//! translated and scaled so that they lie within the unit ball.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::linalg::{Mat3, Vec3};
use crate::render::Camera;
use crate::train::View;

/// Largest tolerated deviation of `RᵀR` from the identity.
const ORTHONORMAL_TOL: f64 = 1e-3;

#[derive(Debug, Deserialize)]
struct TransformsFile {
    camera_angle_x: f64,
    frames: Vec<FrameRecord>,
}

#[derive(Debug, Deserialize)]
struct FrameRecord {
    file_path: String,
    transform_matrix: [[f64; 4]; 4],
}

/// One posed image of a split.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub camera: Camera,
    pub image_path: PathBuf,
}

/// World-space similarity applied to the raw poses: `p' = (p − center)·scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub center: Vec3,
    pub scale: f64,
}

impl Normalization {
    pub fn apply(&self, p: Vec3) -> Vec3 {
        (p - self.center) * self.scale
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<Frame>,
    pub test: Vec<Frame>,
    pub normalization: Normalization,
}

impl Dataset {
    pub fn load_train_views(&self, background: Vec3) -> Result<Vec<View>> {
        load_views(&self.train, background)
    }

    pub fn load_test_views(&self, background: Vec3) -> Result<Vec<View>> {
        load_views(&self.test, background)
    }
}

/// Loads the images of `frames`, compositing transparent pixels over
/// `background`.
pub fn load_views(frames: &[Frame], background: Vec3) -> Result<Vec<View>> {
    frames
        .iter()
        .map(|f| View::new(f.camera, Image::load_png(&f.image_path, background)?))
        .collect()
}

/// Reads both splits under `dir`. A missing test split is an error, as is
/// any frame whose image is missing or sized differently from the rest of
/// its split.
pub fn load_nerf_synthetic(dir: &Path) -> Result<Dataset> {
    if !dir.is_dir() {
        return Err(Error::InvalidInput(format!("dataset directory {} does not exist", dir.display())));
    }
    let (fov_train, raw_train) = read_split(dir, "train")?;
    let (fov_test, raw_test) = read_split(dir, "test")?;
    let centers: Vec<Vec3> = raw_train.iter().chain(&raw_test).map(|r| r.position).collect();
    let normalization = normalization_for(&centers);
    let finish = |fov: f64, raws: Vec<RawFrame>| -> Result<Vec<Frame>> {
        let mut dims = None;
        raws.into_iter()
            .map(|r| {
                let (w, h) = png_dimensions(&r.image_path)?;
                match dims {
                    None => dims = Some((w, h)),
                    Some(d) if d != (w, h) => {
                        return Err(Error::DimensionMismatch(format!(
                            "{} is {w}x{h}, other images of the split are {}x{}",
                            r.image_path.display(),
                            d.0,
                            d.1
                        )))
                    }
                    _ => {}
                }
                let camera = Camera {
                    rotation: r.rotation,
                    position: normalization.apply(r.position),
                    fov_x: fov,
                    width: w,
                    height: h,
                };
                Ok(Frame { camera, image_path: r.image_path })
            })
            .collect()
    };
    Ok(Dataset {
        train: finish(fov_train, raw_train)?,
        test: finish(fov_test, raw_test)?,
        normalization,
    })
}

struct RawFrame {
    rotation: Mat3,
    position: Vec3,
    image_path: PathBuf,
}

fn read_split(dir: &Path, split: &str) -> Result<(f64, Vec<RawFrame>)> {
    let path = dir.join(format!("transforms_{split}.json"));
    let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
    let t: TransformsFile =
        serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Json { path: path.clone(), source: e })?;
    if !(t.camera_angle_x > 0.0 && t.camera_angle_x < std::f64::consts::PI) {
        return Err(Error::parse(
            format!("{}: camera_angle_x", path.display()),
            format!("field of view must lie in (0, π), got {}", t.camera_angle_x),
        ));
    }
    if t.frames.is_empty() {
        return Err(Error::InvalidInput(format!("{}: no frames", path.display())));
    }
    let frames = t
        .frames
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let loc = || format!("{}: frames[{i}]", path.display());
            let (rotation, position) = convert_pose(&f.transform_matrix).map_err(|m| Error::parse(loc(), m))?;
            Ok(RawFrame { rotation, position, image_path: resolve_image(dir, &f.file_path) })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((t.camera_angle_x, frames))
}

/// Camera-to-world rotation and center in the renderer's convention.
pub fn convert_pose(m: &[[f64; 4]; 4]) -> std::result::Result<(Mat3, Vec3), String> {
    if m.iter().flatten().any(|v| !v.is_finite()) {
        return Err("transform_matrix has non-finite entries".into());
    }
    let col = |c: usize| Vec3::new(m[0][c], m[1][c], m[2][c]);
    let gl = Mat3::from_cols(col(0), col(1), col(2));
    if gl.determinant().abs() < 1e-9 {
        return Err("transform_matrix is not invertible".into());
    }
    let rtr = gl.transpose().mul_mat(&gl);
    let dev = rtr.max_abs_diff(&Mat3::IDENTITY);
    if dev > ORTHONORMAL_TOL {
        return Err(format!("rotation block is not orthonormal (|RᵀR − I| = {dev:.3e})"));
    }
    if gl.determinant() < 0.0 {
        return Err("rotation block is a reflection".into());
    }
    // Flip y (up → down) and z (backward → forward), then re-orthonormalize.
    let right = col(0).normalized();
    let down = (-col(1) - right * right.dot(-col(1))).normalized();
    let forward = right.cross(down);
    Ok((Mat3::from_cols(right, down, forward), col(3)))
}

fn resolve_image(dir: &Path, file_path: &str) -> PathBuf {
    let p = dir.join(file_path);
    if p.extension().is_some() {
        p
    } else {
        p.with_extension("png")
    }
}

fn normalization_for(centers: &[Vec3]) -> Normalization {
    let n = centers.len().max(1) as f64;
    let center = centers.iter().fold(Vec3::ZERO, |a, &c| a + c) / n;
    let radius = centers.iter().map(|&c| (c - center).norm()).fold(0.0, f64::max);
    Normalization { center, scale: if radius > 0.0 { 1.0 / radius } else { 1.0 } }
}

fn png_dimensions(path: &Path) -> Result<(usize, usize)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = png::Decoder::new(BufReader::new(file))
        .read_info()
        .map_err(|e| Error::Png(format!("{}: {e}", path.display())))?;
    let info = reader.info();
    Ok((info.width as usize, info.height as usize))
}
