//! ADAM with bias correction over the raw parameter space.

use std::io::{Read, Write};
use std::path::Path;

use crate::backward::GradientStore;
use crate::config::{AdamConfig, LearningRates};
use crate::error::{Error, Result};
use crate::scene::{Gaussian, GaussianScene, PARAMS_PER_GAUSSIAN};

const MAGIC: &[u8; 8] = b"RSADAM01";

/// First and second moments for a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    /// State for a scene: one row of [`PARAMS_PER_GAUSSIAN`] per Gaussian.
    pub fn for_scene(scene: &GaussianScene) -> Self {
        Self::new(scene.len() * PARAMS_PER_GAUSSIAN)
    }

    pub fn rows(&self) -> usize {
        self.m.len() / PARAMS_PER_GAUSSIAN
    }

    /// Rebuilds the per-Gaussian rows: row `k` of the result copies row
    /// `sources[k]`, or is zero for `None`.
    pub fn remap_rows(&self, sources: &[Option<usize>]) -> Self {
        let p = PARAMS_PER_GAUSSIAN;
        let mut out = Self::new(sources.len() * p);
        out.t = self.t;
        for (k, src) in sources.iter().enumerate() {
            if let Some(s) = *src {
                out.m[k * p..(k + 1) * p].copy_from_slice(&self.m[s * p..(s + 1) * p]);
                out.v[k * p..(k + 1) * p].copy_from_slice(&self.v[s * p..(s + 1) * p]);
            }
        }
        out
    }

    /// One ADAM update of `params` in place with per-entry learning rates
    /// `lr(i)`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: impl Fn(usize) -> f64, cfg: &AdamConfig) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} parameters, {} gradients, optimizer state for {}",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr(i) * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
        Ok(())
    }

    pub fn write(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&self.t.to_le_bytes())?;
        w.write_all(&(self.m.len() as u64).to_le_bytes())?;
        for v in self.m.iter().chain(&self.v) {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read(r: &mut impl Read) -> Result<Self> {
        let mut hdr = [0u8; 24];
        r.read_exact(&mut hdr).map_err(|_| Error::parse("offset 0", "truncated optimizer header"))?;
        if &hdr[..8] != MAGIC {
            return Err(Error::parse("offset 0", "not an optimizer state file"));
        }
        let t = u64::from_le_bytes(hdr[8..16].try_into().unwrap());
        let len = u64::from_le_bytes(hdr[16..24].try_into().unwrap()) as usize;
        let mut data = Vec::new();
        r.read_to_end(&mut data).map_err(|e| Error::parse("offset 24", e.to_string()))?;
        if data.len() != 16 * len {
            return Err(Error::parse("offset 24", format!("expected {} bytes of moments, found {}", 16 * len, data.len())));
        }
        let vals: Vec<f64> = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Self { m: vals[..len].to_vec(), v: vals[len..].to_vec(), t })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(&mut std::io::BufReader::new(file))
    }
}

/// Learning rate of every entry of a Gaussian's parameter row; the mean
/// rate is scaled by the scene extent.
pub fn per_parameter_rates(lr: &LearningRates, extent: f64) -> [f64; PARAMS_PER_GAUSSIAN] {
    let mut r = [0.0; PARAMS_PER_GAUSSIAN];
    r[0..3].fill(lr.mean * extent);
    r[3..6].fill(lr.scale_logits);
    r[6..10].fill(lr.rotation);
    r[10] = lr.opacity_logit;
    r[11..14].fill(lr.color);
    r
}

/// One ADAM step over all Gaussians of a scene.
pub fn adam_step(
    scene: &mut GaussianScene,
    grads: &GradientStore,
    state: &mut AdamState,
    rates: &[f64; PARAMS_PER_GAUSSIAN],
    cfg: &AdamConfig,
) -> Result<()> {
    if grads.len() != scene.len() || state.rows() != scene.len() {
        return Err(Error::DimensionMismatch(format!(
            "scene has {} gaussians, gradients {}, optimizer rows {}",
            scene.len(),
            grads.len(),
            state.rows()
        )));
    }
    let mut params: Vec<f64> = scene.gaussians.iter().flat_map(|g| g.to_params()).collect();
    state.step(&mut params, &grads.flatten(), |i| rates[i % PARAMS_PER_GAUSSIAN], cfg)?;
    for (g, row) in scene.gaussians.iter_mut().zip(params.chunks_exact(PARAMS_PER_GAUSSIAN)) {
        *g = Gaussian::from_params(row.try_into().unwrap());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_keeps_parameters() {
        let mut s = AdamState::new(2);
        let mut p = [1.0, -2.0];
        s.step(&mut p, &[0.0, 0.0], |_| 0.1, &AdamConfig::default()).unwrap();
        assert_eq!(p, [1.0, -2.0]);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn first_step_magnitude() {
        let mut s = AdamState::new(1);
        let mut p = [0.0];
        s.step(&mut p, &[1.0], |_| 0.01, &AdamConfig::default()).unwrap();
        assert!((p[0] + 0.01 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch() {
        let mut s = AdamState::new(2);
        assert!(s.step(&mut [0.0], &[0.0], |_| 0.1, &AdamConfig::default()).is_err());
    }

    #[test]
    fn state_round_trip_and_remap() {
        let mut s = AdamState::new(2 * PARAMS_PER_GAUSSIAN);
        s.t = 7;
        for (i, v) in s.m.iter_mut().enumerate() {
            *v = i as f64;
        }
        let mut buf = Vec::new();
        s.write(&mut buf).unwrap();
        assert_eq!(AdamState::read(&mut buf.as_slice()).unwrap(), s);
        assert!(AdamState::read(&mut &buf[..30]).is_err());
        let r = s.remap_rows(&[Some(1), None]);
        assert_eq!(r.m[0], PARAMS_PER_GAUSSIAN as f64);
        assert!(r.m[PARAMS_PER_GAUSSIAN..].iter().all(|&v| v == 0.0));
        assert_eq!(r.t, 7);
    }
}
