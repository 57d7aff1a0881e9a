//! RGB float images, single-channel planes, and their file formats:
//! 8-bit PNG (clamped) and a raw float32 dump (`u32 width`, `u32 height`,
//! then row-major RGB `f32`, all little-endian).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Vec3;

/// Row-major RGB image with `f64` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<Vec3>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, Vec3::ZERO)
    }

    pub fn filled(width: usize, height: usize, color: Vec3) -> Self {
        Self { width, height, pixels: vec![color; width * height] }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<Vec3>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Vec3 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: Vec3) {
        self.pixels[y * self.width + x] = c;
    }

    pub fn same_size(&self, o: &Image) -> bool {
        self.width == o.width && self.height == o.height
    }

    pub fn channel(&self, c: usize) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self.pixels.iter().map(|p| p[c]).collect(),
        }
    }

    pub fn from_channels(planes: &[Plane; 3]) -> Self {
        let pixels = (0..planes[0].data.len())
            .map(|i| Vec3::new(planes[0].data[i], planes[1].data[i], planes[2].data[i]))
            .collect();
        Self { width: planes[0].width, height: planes[0].height, pixels }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut enc = png::Encoder::new(BufWriter::new(file), self.width as u32, self.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| Error::Png(e.to_string()))?;
        let bytes: Vec<u8> = self
            .pixels
            .iter()
            .flat_map(|p| p.to_array())
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        writer.write_image_data(&bytes).map_err(|e| Error::Png(e.to_string()))?;
        Ok(())
    }

    /// Loads an 8-bit or 16-bit PNG. Alpha, when present, composites the
    /// image over `background`.
    pub fn load_png(path: &Path, background: Vec3) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut decoder = png::Decoder::new(BufReader::new(file));
        decoder.set_transformations(png::Transformations::EXPAND);
        let mut reader = decoder.read_info().map_err(|e| Error::Png(format!("{}: {e}", path.display())))?;
        let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
        let info = reader.next_frame(&mut buf).map_err(|e| Error::Png(format!("{}: {e}", path.display())))?;
        let (w, h) = (info.width as usize, info.height as usize);
        let channels = info.color_type.samples();
        let sixteen = info.bit_depth == png::BitDepth::Sixteen;
        let max = if sixteen { 65535.0 } else { 255.0 };
        let sample = |i: usize| -> f64 {
            if sixteen {
                u16::from_be_bytes([buf[2 * i], buf[2 * i + 1]]) as f64 / max
            } else {
                buf[i] as f64 / max
            }
        };
        let mut pixels = Vec::with_capacity(w * h);
        for p in 0..w * h {
            let base = p * channels;
            let (rgb, alpha) = match channels {
                1 => (Vec3::splat(sample(base)), 1.0),
                2 => (Vec3::splat(sample(base)), sample(base + 1)),
                3 => (Vec3::new(sample(base), sample(base + 1), sample(base + 2)), 1.0),
                4 => (Vec3::new(sample(base), sample(base + 1), sample(base + 2)), sample(base + 3)),
                n => return Err(Error::Png(format!("{}: unsupported channel count {n}", path.display()))),
            };
            pixels.push(rgb * alpha + background * (1.0 - alpha));
        }
        Self::from_pixels(w, h, pixels)
    }

    /// Lossless dump: `u32` width and height, then RGB `f64` triples, all
    /// little-endian.
    pub fn write_raw(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(&(self.width as u32).to_le_bytes())?;
        w.write_all(&(self.height as u32).to_le_bytes())?;
        for p in &self.pixels {
            for v in p.to_array() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn save_raw(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_raw(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
    }

    pub fn read_raw(r: &mut impl Read) -> Result<Self> {
        let mut hdr = [0u8; 8];
        r.read_exact(&mut hdr).map_err(|e| Error::parse("offset 0", e.to_string()))?;
        let w = u32::from_le_bytes(hdr[0..4].try_into().unwrap()) as usize;
        let h = u32::from_le_bytes(hdr[4..8].try_into().unwrap()) as usize;
        let mut data = vec![0u8; w * h * 24];
        r.read_exact(&mut data).map_err(|e| Error::parse("offset 8", e.to_string()))?;
        let pixels = data
            .chunks_exact(24)
            .map(|c| {
                let f = |k: usize| f64::from_le_bytes(c[8 * k..8 * k + 8].try_into().unwrap());
                Vec3::new(f(0), f(1), f(2))
            })
            .collect();
        Self::from_pixels(w, h, pixels)
    }

    pub fn load_raw(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_raw(&mut BufReader::new(file))
    }
}

/// Single-channel row-major image.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn same_size(&self, o: &Plane) -> bool {
        self.width == o.width && self.height == o.height
    }

    pub fn zip_map(&self, o: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&o.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}
