//! Binary little-endian PLY storage of raw Gaussian parameters.
//!
//! Written files carry one `vertex` element with the `double` properties
//! `x y z slog0 slog1 slog2 q0 q1 q2 q3 alpha_logit r g b`. The reader
//! skips unknown scalar properties and also understands the common 3D
//! Gaussian splatting layout (`scale_*` as log-scales, `rot_*`, `opacity`,
//! `f_dc_*` as degree-0 spherical harmonics).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{Quaternion, Vec3};
use crate::scene::{inverse_sigmoid, Gaussian, GaussianScene};

const FIELDS: [&str; 14] = [
    "x", "y", "z", "slog0", "slog1", "slog2", "q0", "q1", "q2", "q3", "alpha_logit", "r", "g", "b",
];

/// Degree-0 spherical-harmonic basis constant.
pub const SH_C0: f64 = 0.28209479177387814;

pub fn write_ply(scene: &GaussianScene, w: &mut impl Write) -> std::io::Result<()> {
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!("element vertex {}\n", scene.len()));
    for f in FIELDS {
        header.push_str(&format!("property double {f}\n"));
    }
    header.push_str("end_header\n");
    w.write_all(header.as_bytes())?;
    for g in &scene.gaussians {
        for v in g.to_params() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_ply(scene: &GaussianScene, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_ply(scene, &mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn load_ply(path: &Path) -> Result<GaussianScene> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_ply(&mut BufReader::new(file)).map_err(|e| match e {
        Error::Parse { location, message } => Error::parse(format!("{}: {location}", path.display()), message),
        other => other,
    })
}

#[derive(Debug, Clone, Copy)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn decode(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

struct Header {
    count: usize,
    props: Vec<(String, Scalar)>,
    /// Bytes consumed by the header.
    len: usize,
}

fn read_header(r: &mut impl BufRead) -> Result<Header> {
    let mut len = 0;
    let mut line_no = 0;
    let mut next_line = |r: &mut dyn BufRead| -> Result<(usize, String)> {
        let mut buf = Vec::new();
        let n = r
            .read_until(b'\n', &mut buf)
            .map_err(|e| Error::parse(format!("header line {}", line_no + 1), e.to_string()))?;
        line_no += 1;
        len += n;
        if n == 0 {
            return Err(Error::parse(format!("header line {line_no}"), "unexpected end of file in header"));
        }
        let text = String::from_utf8(buf)
            .map_err(|_| Error::parse(format!("header line {line_no}"), "header is not valid text"))?;
        Ok((line_no, text.trim_end_matches(['\n', '\r']).to_string()))
    };

    let (_, magic) = next_line(r)?;
    if magic != "ply" {
        return Err(Error::parse("header line 1", "missing 'ply' magic"));
    }
    let mut format_ok = false;
    let mut count = None;
    let mut in_vertex = false;
    let mut props = Vec::new();
    loop {
        let (no, line) = next_line(r)?;
        let loc = format!("header line {no}");
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["format", "binary_little_endian", "1.0"] => format_ok = true,
            ["format", other, ..] => return Err(Error::parse(loc, format!("unsupported format '{other}'"))),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", "vertex", n] => {
                if count.is_some() {
                    return Err(Error::parse(loc, "duplicate vertex element"));
                }
                count = Some(n.parse::<usize>().map_err(|_| Error::parse(loc.clone(), format!("bad vertex count '{n}'")))?);
                in_vertex = true;
            }
            ["element", name, _] => {
                if count.is_none() {
                    return Err(Error::parse(loc, format!("element '{name}' before vertex element")));
                }
                in_vertex = false;
            }
            ["property", "list", ..] if in_vertex => {
                return Err(Error::parse(loc, "list properties are not supported on vertices"));
            }
            ["property", ty, name] => {
                if in_vertex {
                    let s = Scalar::parse(ty).ok_or_else(|| Error::parse(loc.clone(), format!("unknown type '{ty}'")))?;
                    props.push((name.to_string(), s));
                }
            }
            ["property", ..] if !in_vertex => {}
            ["end_header"] => break,
            _ => return Err(Error::parse(loc, format!("unrecognized header line '{line}'"))),
        }
    }
    if !format_ok {
        return Err(Error::parse("header", "missing 'format binary_little_endian 1.0'"));
    }
    let count = count.ok_or_else(|| Error::parse("header", "missing vertex element"))?;
    Ok(Header { count, props, len })
}

struct Layout {
    mean: [usize; 3],
    scale: [usize; 3],
    /// `scale_*` holds natural-log scales rather than logits.
    log_scale: bool,
    rot: [usize; 4],
    opacity: usize,
    color: [usize; 3],
    /// Color from degree-0 SH coefficients.
    sh: bool,
}

fn find(props: &[(String, Scalar)], names: &[&str]) -> Option<[usize; 4]> {
    let mut out = [usize::MAX; 4];
    for (k, n) in names.iter().enumerate() {
        out[k] = props.iter().position(|(p, _)| p == n)?;
    }
    Some(out)
}

fn layout(props: &[(String, Scalar)]) -> Result<Layout> {
    let need = |names: &[&str]| -> Result<[usize; 4]> {
        find(props, names).ok_or_else(|| Error::parse("header", format!("missing vertex properties {names:?}")))
    };
    let three = |a: [usize; 4]| [a[0], a[1], a[2]];
    let mean = three(need(&["x", "y", "z"])?);
    let (scale, log_scale) = match find(props, &["slog0", "slog1", "slog2"]) {
        Some(s) => (three(s), false),
        None => (three(need(&["scale_0", "scale_1", "scale_2"])?), true),
    };
    let rot = match find(props, &["q0", "q1", "q2", "q3"]) {
        Some(r) => r,
        None => need(&["rot_0", "rot_1", "rot_2", "rot_3"])?,
    };
    let opacity = match find(props, &["alpha_logit"]) {
        Some(o) => o[0],
        None => need(&["opacity"])?[0],
    };
    let (color, sh) = match find(props, &["r", "g", "b"]) {
        Some(c) => (three(c), false),
        None => (three(need(&["f_dc_0", "f_dc_1", "f_dc_2"])?), true),
    };
    Ok(Layout { mean, scale, log_scale, rot, opacity, color, sh })
}

/// Reads a scene. Never returns a partially read scene: truncated data,
/// malformed headers and non-finite values are errors.
pub fn read_ply(r: &mut impl BufRead) -> Result<GaussianScene> {
    let header = read_header(r)?;
    let lay = layout(&header.props)?;
    let offsets: Vec<usize> = header
        .props
        .iter()
        .scan(0, |acc, (_, s)| {
            let o = *acc;
            *acc += s.size();
            Some(o)
        })
        .collect();
    let stride: usize = header.props.iter().map(|(_, s)| s.size()).sum();
    let mut row = vec![0u8; stride];
    let mut gaussians = Vec::with_capacity(header.count.min(1 << 20));
    for i in 0..header.count {
        let offset = header.len + i * stride;
        r.read_exact(&mut row).map_err(|_| {
            Error::parse(
                format!("byte offset {offset}"),
                format!("truncated data: vertex {i} of {} incomplete", header.count),
            )
        })?;
        let get = |p: usize| header.props[p].1.decode(&row[offsets[p]..]);
        let mean = Vec3::new(get(lay.mean[0]), get(lay.mean[1]), get(lay.mean[2]));
        let mut scale_logits = Vec3::new(get(lay.scale[0]), get(lay.scale[1]), get(lay.scale[2]));
        if lay.log_scale {
            scale_logits = scale_logits.map(|l| inverse_sigmoid(l.exp().clamp(1e-9, 1.0 - 1e-9)));
        }
        let rotation = Quaternion::new(get(lay.rot[0]), get(lay.rot[1]), get(lay.rot[2]), get(lay.rot[3]));
        let mut color = Vec3::new(get(lay.color[0]), get(lay.color[1]), get(lay.color[2]));
        if lay.sh {
            color = color.map(|f| 0.5 + SH_C0 * f);
        }
        let g = Gaussian { mean, scale_logits, rotation, opacity_logit: get(lay.opacity), color };
        if let Err(e) = g.validate() {
            return Err(Error::parse(format!("byte offset {offset}"), format!("vertex {i}: {e}")));
        }
        gaussians.push(g);
    }
    Ok(GaussianScene::new(gaussians))
}
