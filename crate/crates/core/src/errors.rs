//! Systematic-error configuration, seeded realization and emulated physical systems.
//!
//! A realization is sampled once per experiment and never mutated. Each device class draws
//! from its own ChaCha20 stream so that growing one inventory leaves the others unchanged.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cgraph::{CTensor, ParamStore};
use crate::error::{Error, Result};
use crate::training::PhotonicModel;

const STREAM_PHASE_PIXELS: u64 = 1;
const STREAM_BEAMSPLITTERS: u64 = 2;
const STREAM_SHIFTERS: u64 = 3;

/// Error strengths for diffractive systems. Geometric offsets repeat at every layer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpnnErrorConfig {
    #[serde(default)]
    pub z_shift_cm: f64,
    #[serde(default)]
    pub x_shift_px: i64,
    #[serde(default)]
    pub rotation_deg: f64,
    /// Standard deviation of the per-pixel phase error, radians.
    #[serde(default)]
    pub phase_sigma: f64,
}

impl DpnnErrorConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("errors.z_shift_cm", self.z_shift_cm),
            ("errors.x_shift_px", self.x_shift_px as f64),
            ("errors.rotation_deg", self.rotation_deg),
            ("errors.phase_sigma", self.phase_sigma),
        ];
        for (name, v) in fields {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config(name, "must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

/// Error strengths for MZI meshes, both in radians.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpnnErrorConfig {
    #[serde(default)]
    pub sigma_bs: f64,
    #[serde(default)]
    pub sigma_ps: f64,
}

impl MpnnErrorConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("errors.sigma_bs", self.sigma_bs), ("errors.sigma_ps", self.sigma_ps)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config(name, "must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

/// Frozen imperfections of one diffractive block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockErrors {
    pub dz_m: f64,
    pub dx_px: i64,
    pub rot_deg: f64,
    /// Phase error per pixel for each of the two modulation layers.
    pub eps: [Vec<f64>; 2],
}

impl BlockErrors {
    pub fn is_zero(&self) -> bool {
        self.dz_m == 0.0 && self.dx_px == 0 && self.rot_deg == 0.0 && self.eps.iter().all(|e| e.iter().all(|&v| v == 0.0))
    }
}

/// Frozen imperfections of one mesh, indexed by MZI.
#[derive(Clone, Debug, PartialEq)]
pub struct MeshErrors {
    /// Split-ratio offsets of the first and second beamsplitter.
    pub bs: Vec<[f64; 2]>,
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
}

impl MeshErrors {
    pub fn zeros(mzis: usize) -> Self {
        Self {
            bs: vec![[0.0; 2]; mzis],
            theta: vec![0.0; mzis],
            phi: vec![0.0; mzis],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum RealizationData {
    Dpnn { grid: usize, blocks: Vec<BlockErrors> },
    Mpnn { ports: usize, meshes: Vec<MeshErrors> },
}

/// Immutable sample of every systematic error of one emulated system.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorRealization {
    seed: u64,
    data: RealizationData,
}

fn stream(seed: u64, id: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn normal(sigma: f64, field: &str) -> Result<Normal<f64>> {
    Normal::new(0.0, sigma).map_err(|e| Error::config(field, e.to_string()))
}

impl ErrorRealization {
    /// Samples a diffractive system of `blocks` blocks on an `grid×grid` layer grid.
    pub fn realize_dpnn(config: &DpnnErrorConfig, blocks: usize, grid: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let dist = normal(config.phase_sigma, "errors.phase_sigma")?;
        let mut rng = stream(seed, STREAM_PHASE_PIXELS);
        let mut out = Vec::with_capacity(blocks);
        for _ in 0..blocks {
            let mut layer = || -> Vec<f64> {
                if config.phase_sigma == 0.0 {
                    vec![0.0; grid * grid]
                } else {
                    (0..grid * grid).map(|_| dist.sample(&mut rng)).collect()
                }
            };
            let eps = [layer(), layer()];
            out.push(BlockErrors {
                dz_m: config.z_shift_cm * 1e-2,
                dx_px: config.x_shift_px,
                rot_deg: config.rotation_deg,
                eps,
            });
        }
        Ok(Self {
            seed,
            data: RealizationData::Dpnn { grid, blocks: out },
        })
    }

    /// Samples `meshes` Clements meshes with `ports` ports each.
    pub fn realize_mpnn(config: &MpnnErrorConfig, meshes: usize, ports: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mzis = ports * ports.saturating_sub(1) / 2;
        let bs_dist = normal(config.sigma_bs, "errors.sigma_bs")?;
        let ps_dist = normal(config.sigma_ps, "errors.sigma_ps")?;
        let mut bs_rng = stream(seed, STREAM_BEAMSPLITTERS);
        let mut ps_rng = stream(seed, STREAM_SHIFTERS);
        let mut out = Vec::with_capacity(meshes);
        for _ in 0..meshes {
            let mut e = MeshErrors::zeros(mzis);
            if config.sigma_bs > 0.0 {
                for b in &mut e.bs {
                    *b = [bs_dist.sample(&mut bs_rng), bs_dist.sample(&mut bs_rng)];
                }
            }
            if config.sigma_ps > 0.0 {
                for i in 0..mzis {
                    e.theta[i] = ps_dist.sample(&mut ps_rng);
                    e.phi[i] = ps_dist.sample(&mut ps_rng);
                }
            }
            out.push(e);
        }
        Ok(Self {
            seed,
            data: RealizationData::Mpnn { ports, meshes: out },
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn data(&self) -> &RealizationData {
        &self.data
    }

    /// All stochastic phase-shifter draws in sampling order (empty for diffractive systems).
    pub fn shifter_draws(&self) -> Vec<f64> {
        match &self.data {
            RealizationData::Mpnn { meshes, .. } => meshes
                .iter()
                .flat_map(|m| m.theta.iter().zip(&m.phi).flat_map(|(t, p)| [*t, *p]))
                .collect(),
            RealizationData::Dpnn { .. } => Vec::new(),
        }
    }

    /// Named little-endian arrays that fully describe the realization.
    pub fn to_arrays(&self) -> Vec<(String, Vec<f64>)> {
        let mut out = vec![("seed".to_string(), vec![f64::from_bits(self.seed)])];
        match &self.data {
            RealizationData::Dpnn { grid, blocks } => {
                out.push(("dpnn.grid".into(), vec![*grid as f64]));
                for (b, e) in blocks.iter().enumerate() {
                    out.push((format!("dpnn.{b}.geometry"), vec![e.dz_m, e.dx_px as f64, e.rot_deg]));
                    out.push((format!("dpnn.{b}.eps0"), e.eps[0].clone()));
                    out.push((format!("dpnn.{b}.eps1"), e.eps[1].clone()));
                }
            }
            RealizationData::Mpnn { ports, meshes } => {
                out.push(("mpnn.ports".into(), vec![*ports as f64]));
                for (m, e) in meshes.iter().enumerate() {
                    out.push((format!("mpnn.{m}.bs"), e.bs.iter().flatten().copied().collect()));
                    out.push((format!("mpnn.{m}.theta"), e.theta.clone()));
                    out.push((format!("mpnn.{m}.phi"), e.phi.clone()));
                }
            }
        }
        out
    }

    /// Inverse of [`ErrorRealization::to_arrays`].
    pub fn from_arrays(arrays: &[(String, Vec<f64>)]) -> Result<Self> {
        let get = |name: &str| -> Result<&Vec<f64>> {
            arrays
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, v)| v)
                .ok_or_else(|| Error::InvalidArgument(format!("realization array `{name}` missing")))
        };
        let seed = get("seed")?.first().copied().unwrap_or(0.0).to_bits();
        if let Ok(g) = get("dpnn.grid") {
            let grid = g[0] as usize;
            let mut blocks = Vec::new();
            while let Ok(geo) = get(&format!("dpnn.{}.geometry", blocks.len())) {
                let b = blocks.len();
                blocks.push(BlockErrors {
                    dz_m: geo[0],
                    dx_px: geo[1] as i64,
                    rot_deg: geo[2],
                    eps: [get(&format!("dpnn.{b}.eps0"))?.clone(), get(&format!("dpnn.{b}.eps1"))?.clone()],
                });
            }
            return Ok(Self {
                seed,
                data: RealizationData::Dpnn { grid, blocks },
            });
        }
        let ports = get("mpnn.ports")?[0] as usize;
        let mut meshes = Vec::new();
        while let Ok(bs) = get(&format!("mpnn.{}.bs", meshes.len())) {
            let m = meshes.len();
            meshes.push(MeshErrors {
                bs: bs.chunks_exact(2).map(|c| [c[0], c[1]]).collect(),
                theta: get(&format!("mpnn.{m}.theta"))?.clone(),
                phi: get(&format!("mpnn.{m}.phi"))?.clone(),
            });
        }
        Ok(Self {
            seed,
            data: RealizationData::Mpnn { ports, meshes },
        })
    }

    /// SHA-256 over the exact bit patterns of every sampled value.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (name, values) in self.to_arrays() {
            h.update(name.as_bytes());
            for v in values {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Emulated hardware: only intensities ever leave it.
pub trait PhysicalSystem: Send + Sync {
    /// Number of measurable states (internal states plus the final output).
    fn num_states(&self) -> usize;

    /// Runs the deployed parameters on one encoded input; returns `P_1..P_N`.
    fn evaluate(&self, params: &ParamStore, input: &CTensor) -> Result<Vec<Vec<f64>>>;
}

/// Couples an ideal model with a realization that matches its device inventory.
pub fn build_physical_system<'a, M: PhotonicModel + ?Sized>(model: &'a M, realization: &ErrorRealization) -> Result<Box<dyn PhysicalSystem + 'a>> {
    model.physical_system(realization)
}
