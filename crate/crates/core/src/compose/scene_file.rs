//! JSON description of a composition: camera, lights and mesh objects.
//!
//! ```json
//! {
//!   "camera": { "position": [0, 1, -4], "target": [0, 0, 0], "up": [0, 1, 0],
//!               "fov_x_degrees": 45, "width": 64, "height": 48 },
//!   "lights": [ { "position": [0, 4, 0], "intensity": [1, 1, 1] } ],
//!   "objects": [
//!     { "geometry": { "type": "obj", "path": "floor.obj" },
//!       "material": { "kind": "diffuse", "albedo": [0.8, 0.8, 0.8] } },
//!     { "geometry": { "type": "sphere", "center": [0, 0.5, 0], "radius": 0.3 },
//!       "material": { "kind": "glass", "ior": 1.5, "tint": [0.9, 1, 0.9] } }
//!   ],
//!   "max_depth": 6
//! }
//! ```
//!
//! OBJ paths are relative to the JSON file.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::linalg::Vec3;
use crate::render::Camera;

use super::mesh::{Material, MaterialKind, Mesh};
use super::obj::load_obj;
use super::{PointLight, DEFAULT_MAX_DEPTH};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    camera: CameraSpec,
    #[serde(default)]
    lights: Vec<LightSpec>,
    #[serde(default)]
    objects: Vec<ObjectSpec>,
    #[serde(default)]
    background: Option<[f64; 3]>,
    #[serde(default = "default_depth")]
    max_depth: usize,
}

fn default_depth() -> usize {
    DEFAULT_MAX_DEPTH
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraSpec {
    position: [f64; 3],
    target: [f64; 3],
    #[serde(default = "default_up")]
    up: [f64; 3],
    fov_x_degrees: f64,
    width: usize,
    height: usize,
}

fn default_up() -> [f64; 3] {
    [0.0, 1.0, 0.0]
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LightSpec {
    position: [f64; 3],
    intensity: [f64; 3],
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectSpec {
    geometry: Geometry,
    material: MaterialSpec,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum Geometry {
    Obj { path: PathBuf },
    Quad { corners: [[f64; 3]; 4] },
    Sphere {
        center: [f64; 3],
        radius: f64,
        #[serde(default = "default_segments")]
        segments: usize,
        #[serde(default = "default_rings")]
        rings: usize,
    },
}

fn default_segments() -> usize {
    32
}

fn default_rings() -> usize {
    16
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MaterialSpec {
    kind: MaterialKind,
    #[serde(default)]
    albedo: Option<[f64; 3]>,
    #[serde(default)]
    ior: Option<f64>,
    #[serde(default)]
    tint: Option<[f64; 3]>,
}

impl MaterialSpec {
    fn build(&self) -> Material {
        let v = |a: Option<[f64; 3]>, d: f64| a.map_or(Vec3::splat(d), Vec3::from_array);
        Material {
            kind: self.kind,
            albedo: v(self.albedo, if self.kind == MaterialKind::Diffuse { 0.8 } else { 1.0 }),
            ior: self.ior.unwrap_or(if self.kind == MaterialKind::Glass { 1.5 } else { 1.0 }),
            tint: v(self.tint, 1.0),
        }
    }
}

/// Everything a composition needs besides the Gaussian scene.
#[derive(Debug, Clone, PartialEq)]
pub struct ComposeSpec {
    pub camera: Camera,
    pub meshes: Vec<Mesh>,
    pub lights: Vec<PointLight>,
    pub background: Option<Vec3>,
    pub max_depth: usize,
}

pub fn parse_scene_file(text: &str, base_dir: &Path) -> Result<ComposeSpec> {
    let f: SceneFile = serde_json::from_str(text)
        .map_err(|e| Error::parse(format!("line {} column {}", e.line(), e.column()), e.to_string()))?;
    let c = &f.camera;
    if !(c.fov_x_degrees > 0.0 && c.fov_x_degrees < 180.0) || c.width == 0 || c.height == 0 {
        return Err(Error::InvalidInput("camera needs 0 < fov_x_degrees < 180 and a non-empty image".into()));
    }
    let (pos, target, up) = (Vec3::from_array(c.position), Vec3::from_array(c.target), Vec3::from_array(c.up));
    let forward = target - pos;
    if forward.norm() == 0.0 || forward.cross(up).norm() == 0.0 {
        return Err(Error::InvalidInput("camera target must differ from position and not be parallel to up".into()));
    }
    let camera = Camera::look_at(pos, target, up, c.fov_x_degrees.to_radians(), c.width, c.height);
    let lights = f
        .lights
        .iter()
        .map(|l| {
            let intensity = Vec3::from_array(l.intensity);
            if intensity.to_array().iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
                return Err(Error::InvalidInput("light intensity must be finite and >= 0".into()));
            }
            Ok(PointLight { position: Vec3::from_array(l.position), intensity })
        })
        .collect::<Result<Vec<_>>>()?;
    let meshes = f
        .objects
        .iter()
        .map(|o| {
            let material = o.material.build();
            match &o.geometry {
                Geometry::Obj { path } => load_obj(&base_dir.join(path), material),
                Geometry::Quad { corners } => Mesh::quad(corners.map(Vec3::from_array), material),
                Geometry::Sphere { center, radius, segments, rings } => {
                    Mesh::uv_sphere(Vec3::from_array(*center), *radius, *segments, *rings, material)
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ComposeSpec {
        camera,
        meshes,
        lights,
        background: f.background.map(Vec3::from_array),
        max_depth: f.max_depth,
    })
}

pub fn load_scene_file(path: &Path) -> Result<ComposeSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_scene_file(&text, base).map_err(|e| match e {
        Error::Parse { location, message } => Error::parse(format!("{}: {location}", path.display()), message),
        other => other,
    })
}
