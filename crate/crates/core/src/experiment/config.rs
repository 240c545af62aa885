//! Experiment configuration (TOML) and its resolved echo.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::errors::{DpnnErrorConfig, MpnnErrorConfig};
use crate::mesh::{EoActivation, MpnnConfig};
use crate::optics::{default_detector_size, DpnnConfig, DEFAULT_PITCH, DEFAULT_WAVELENGTH};
use crate::sepn::SepnConfig;
use crate::training::{Engine, Schedule, SepnMode, TrainPlan};

/// Keyword that selects the published value of a physical constant.
pub const PAPER_DEFAULT: &str = "paper-default";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Architecture {
    #[serde(rename = "dpnn-s")]
    DpnnS,
    #[serde(rename = "dpnn-m")]
    DpnnM,
    #[serde(rename = "mpnn")]
    Mpnn,
}

/// A physical constant given either as a number or as [`PAPER_DEFAULT`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PhysValue {
    Value(f64),
    Keyword(String),
}

impl PhysValue {
    /// Physical constants have no silent defaults: absent fields are rejected.
    fn resolve(v: &Option<PhysValue>, field: &str, default: f64) -> Result<f64> {
        match v {
            None => Err(Error::config(field, format!("required (a number or \"{PAPER_DEFAULT}\")"))),
            Some(PhysValue::Value(x)) => Ok(*x),
            Some(PhysValue::Keyword(k)) if k == PAPER_DEFAULT => Ok(default),
            Some(PhysValue::Keyword(k)) => Err(Error::config(field, format!("expected a number or \"{PAPER_DEFAULT}\", got \"{k}\""))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub architecture: Architecture,
    pub grid: Option<usize>,
    pub pitch_m: Option<PhysValue>,
    pub wavelength_m: Option<PhysValue>,
    pub distance_m: Option<PhysValue>,
    pub detector_size: Option<usize>,
    pub ports: Option<usize>,
    pub meshes: Option<usize>,
    pub coeff_grid: Option<usize>,
    pub drop_mask: Option<Vec<usize>>,
    pub alpha: Option<PhysValue>,
    pub beta: Option<PhysValue>,
    pub gamma: Option<PhysValue>,
    /// Scale every mesh input vector to unit power.
    #[serde(default)]
    pub normalize_input: bool,
}

/// Error strengths; diffractive and mesh fields are mutually exclusive.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorSection {
    #[serde(default)]
    pub z_shift_cm: f64,
    #[serde(default)]
    pub x_shift_px: i64,
    #[serde(default)]
    pub rotation_deg: f64,
    #[serde(default)]
    pub phase_sigma: f64,
    #[serde(default)]
    pub sigma_bs: f64,
    #[serde(default)]
    pub sigma_ps: f64,
}

impl ErrorSection {
    pub fn dpnn(&self) -> DpnnErrorConfig {
        DpnnErrorConfig {
            z_shift_cm: self.z_shift_cm,
            x_shift_px: self.x_shift_px,
            rotation_deg: self.rotation_deg,
            phase_sigma: self.phase_sigma,
        }
    }

    pub fn mpnn(&self) -> MpnnErrorConfig {
        MpnnErrorConfig {
            sigma_bs: self.sigma_bs,
            sigma_ps: self.sigma_ps,
        }
    }

    /// Sets one strength by its field name (sweeps).
    pub fn set(&mut self, field: &str, value: f64) -> Result<()> {
        match field {
            "z_shift_cm" => self.z_shift_cm = value,
            "x_shift_px" => {
                if value.fract() != 0.0 {
                    return Err(Error::config("sweep.axis", "x_shift_px takes whole pixels"));
                }
                self.x_shift_px = value as i64
            }
            "rotation_deg" => self.rotation_deg = value,
            "phase_sigma" => self.phase_sigma = value,
            "sigma_bs" => self.sigma_bs = value,
            "sigma_ps" => self.sigma_ps = value,
            other => return Err(Error::config("sweep.parameter", format!("unknown error strength `{other}`"))),
        }
        Ok(())
    }
}

fn default_lambda_lr() -> Schedule {
    Schedule::constant(0.001)
}

fn default_sepn_batch_size() -> usize {
    1
}

fn default_logit_scale() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub engine: Engine,
    #[serde(default)]
    pub internal_states: bool,
    #[serde(default)]
    pub sepn_mode: SepnMode,
    pub epochs: usize,
    pub batch_size: usize,
    /// Samples per SEPN update inside a DAT step (1: one update per sample).
    #[serde(default = "default_sepn_batch_size")]
    pub sepn_batch_size: usize,
    #[serde(default)]
    pub warmup_epochs: usize,
    pub omega_lr: Schedule,
    #[serde(default = "default_lambda_lr")]
    pub lambda_lr: Schedule,
    #[serde(default = "default_logit_scale")]
    pub logit_scale: f64,
    /// In-silico epochs that produce the starting point of PAT and DAT.
    #[serde(default)]
    pub pretrain_epochs: usize,
    /// Schedule of the in-silico pretraining (defaults to `omega_lr`).
    pub pretrain_lr: Option<Schedule>,
}

fn default_sepn_std() -> f64 {
    0.02
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SepnSection {
    pub f1: usize,
    pub f2: usize,
    pub f3: usize,
    pub k: usize,
    #[serde(default = "default_sepn_std")]
    pub init_std: f64,
}

impl Default for SepnSection {
    fn default() -> Self {
        Self {
            f1: 4,
            f2: 8,
            f3: 16,
            k: 5,
            init_std: default_sepn_std(),
        }
    }
}

impl SepnSection {
    pub fn config(&self) -> SepnConfig {
        SepnConfig {
            f1: self.f1,
            f2: self.f2,
            f3: self.f3,
            k: self.k,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Directory of the IDX files; the environment variable takes over when absent.
    pub dir: Option<PathBuf>,
    pub train_samples: Option<usize>,
    pub test_samples: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub params: u64,
    pub errors: u64,
    pub shuffle: u64,
    pub sepn: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// Error field varied along the axis, e.g. `z_shift_cm`.
    pub parameter: String,
    /// Any of `baseline`, `direct`, `pat`, `pat-is`, `dat`, `dat-is`, `dat-is-sep`.
    pub engines: Vec<String>,
    #[serde(default)]
    pub axis: Vec<f64>,
}

/// Everything that defines one experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub model: ModelSection,
    #[serde(default)]
    pub errors: ErrorSection,
    pub train: TrainSection,
    #[serde(default)]
    pub sepn: SepnSection,
    #[serde(default)]
    pub data: DataSection,
    pub seeds: Seeds,
    #[serde(default)]
    pub output: OutputSection,
    pub sweep: Option<SweepSection>,
}

/// The architecture with every physical constant resolved.
#[derive(Clone, Debug, PartialEq)]
pub enum ResolvedModel {
    Dpnn(DpnnConfig),
    Mpnn { config: MpnnConfig, coeff_grid: usize, normalize_input: bool },
}

fn unexpected(arch: &str, field: &str) -> Error {
    Error::config(format!("model.{field}"), format!("not used by the {arch} architecture"))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let field = e.span().map(|s| format!("bytes {}..{}", s.start, s.end)).unwrap_or_else(|| "config".into());
            Error::config(field, e.message().to_string())
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn resolve_model(&self) -> Result<ResolvedModel> {
        let m = &self.model;
        match m.architecture {
            Architecture::DpnnS | Architecture::DpnnM => {
                let arch = if m.architecture == Architecture::DpnnS { "dpnn-s" } else { "dpnn-m" };
                for (set, name) in [
                    (m.ports.is_some(), "ports"),
                    (m.meshes.is_some(), "meshes"),
                    (m.coeff_grid.is_some(), "coeff_grid"),
                    (m.drop_mask.is_some(), "drop_mask"),
                    (m.alpha.is_some(), "alpha"),
                    (m.beta.is_some(), "beta"),
                    (m.gamma.is_some(), "gamma"),
                    (m.normalize_input, "normalize_input"),
                ] {
                    if set {
                        return Err(unexpected(arch, name));
                    }
                }
                let grid = m.grid.ok_or_else(|| Error::config("model.grid", "required for diffractive networks"))?;
                let base = if m.architecture == Architecture::DpnnS { DpnnConfig::single(grid) } else { DpnnConfig::multi(grid) };
                let cfg = DpnnConfig {
                    pitch_m: PhysValue::resolve(&m.pitch_m, "model.pitch_m", DEFAULT_PITCH)?,
                    wavelength_m: PhysValue::resolve(&m.wavelength_m, "model.wavelength_m", DEFAULT_WAVELENGTH)?,
                    distance_m: PhysValue::resolve(&m.distance_m, "model.distance_m", base.distance_m)?,
                    detector_size: m.detector_size.unwrap_or_else(|| default_detector_size(grid)),
                    ..base
                };
                cfg.validate()?;
                Ok(ResolvedModel::Dpnn(cfg))
            }
            Architecture::Mpnn => {
                for (set, name) in [
                    (m.grid.is_some(), "grid"),
                    (m.pitch_m.is_some(), "pitch_m"),
                    (m.wavelength_m.is_some(), "wavelength_m"),
                    (m.distance_m.is_some(), "distance_m"),
                    (m.detector_size.is_some(), "detector_size"),
                ] {
                    if set {
                        return Err(unexpected("mpnn", name));
                    }
                }
                let coeff_grid = m.coeff_grid.unwrap_or(8);
                let ports = m.ports.unwrap_or(coeff_grid * coeff_grid);
                if ports != coeff_grid * coeff_grid {
                    return Err(Error::config("model.ports", format!("must equal coeff_grid² = {}", coeff_grid * coeff_grid)));
                }
                let meshes = m.meshes.ok_or_else(|| Error::config("model.meshes", "required for mesh networks"))?;
                let d = EoActivation::default();
                let mut config = MpnnConfig::new(ports, meshes);
                if let Some(mask) = &m.drop_mask {
                    config.drop_mask = mask.clone();
                }
                config.activation = EoActivation {
                    alpha: PhysValue::resolve(&m.alpha, "model.alpha", d.alpha)?,
                    beta: PhysValue::resolve(&m.beta, "model.beta", d.beta)?,
                    gamma: PhysValue::resolve(&m.gamma, "model.gamma", d.gamma)?,
                };
                config.validate()?;
                if config.drop_mask.len() != 10 {
                    return Err(Error::config("model.drop_mask", "digit classification reads exactly 10 ports"));
                }
                Ok(ResolvedModel::Mpnn {
                    config,
                    coeff_grid,
                    normalize_input: m.normalize_input,
                })
            }
        }
    }

    pub fn plan(&self) -> TrainPlan {
        let t = &self.train;
        TrainPlan {
            engine: t.engine,
            internal_states: t.internal_states,
            sepn_mode: t.sepn_mode,
            epochs: t.epochs,
            batch_size: t.batch_size,
            sepn_batch_size: t.sepn_batch_size,
            warmup_epochs: t.warmup_epochs,
            omega_lr: t.omega_lr,
            lambda_lr: t.lambda_lr,
            logit_scale: t.logit_scale,
        }
    }

    /// Plan of the in-silico stage that precedes PAT and DAT.
    pub fn pretrain_plan(&self) -> TrainPlan {
        TrainPlan {
            engine: Engine::InSilico,
            internal_states: false,
            sepn_mode: SepnMode::Unitary,
            epochs: self.train.pretrain_epochs,
            warmup_epochs: 0,
            omega_lr: self.train.pretrain_lr.unwrap_or(self.train.omega_lr),
            ..self.plan()
        }
    }

    /// Dataset directory: `data.dir`, else the environment variable.
    pub fn data_dir(&self) -> Result<PathBuf> {
        let dir = self
            .data
            .dir
            .clone()
            .or_else(crate::data::data_dir_from_env)
            .ok_or_else(|| Error::config("data.dir", format!("not set and {} is not defined", crate::data::DATA_DIR_ENV)))?;
        for train in [true, false] {
            let (i, l) = crate::data::split_paths(&dir, train);
            for p in [i, l] {
                if !p.exists() {
                    return Err(Error::config("data.dir", format!("{} does not exist", p.display())));
                }
            }
        }
        Ok(dir)
    }

    /// Checks every field; runs before any compute.
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::config("name", "must not be empty"));
        }
        let resolved = self.resolve_model()?;
        let e = &self.errors;
        match resolved {
            ResolvedModel::Dpnn(_) => {
                if e.sigma_bs != 0.0 || e.sigma_ps != 0.0 {
                    return Err(Error::config("errors.sigma_bs", "mesh errors on a diffractive network"));
                }
                e.dpnn().validate()?;
            }
            ResolvedModel::Mpnn { .. } => {
                if e.z_shift_cm != 0.0 || e.x_shift_px != 0 || e.rotation_deg != 0.0 || e.phase_sigma != 0.0 {
                    return Err(Error::config("errors.z_shift_cm", "diffractive errors on a mesh network"));
                }
                e.mpnn().validate()?;
            }
        }
        self.plan().validate()?;
        if self.train.epochs == 0 {
            return Err(Error::config("train.epochs", "must be at least 1"));
        }
        if let Some(s) = &self.train.pretrain_lr {
            s.validate("train.pretrain_lr")?;
        }
        self.sepn.config().validate()?;
        if !(self.sepn.init_std >= 0.0 && self.sepn.init_std.is_finite()) {
            return Err(Error::config("sepn.init_std", "must be finite and non-negative"));
        }
        if let Some(s) = &self.sweep {
            if s.engines.is_empty() {
                return Err(Error::config("sweep.engines", "must list at least one engine"));
            }
            for e in &s.engines {
                if !super::SWEEP_ENGINES.contains(&e.as_str()) {
                    return Err(Error::config("sweep.engines", format!("unknown engine `{e}`")));
                }
            }
            ErrorSection::default().set(&s.parameter, 0.0)?;
        }
        self.data_dir()?;
        Ok(())
    }

    /// The config with every physical constant written out, as TOML.
    pub fn echo(&self) -> Result<String> {
        let mut c = self.clone();
        match self.resolve_model()? {
            ResolvedModel::Dpnn(d) => {
                c.model.pitch_m = Some(PhysValue::Value(d.pitch_m));
                c.model.wavelength_m = Some(PhysValue::Value(d.wavelength_m));
                c.model.distance_m = Some(PhysValue::Value(d.distance_m));
                c.model.detector_size = Some(d.detector_size);
            }
            ResolvedModel::Mpnn { config, coeff_grid, .. } => {
                c.model.ports = Some(config.ports);
                c.model.coeff_grid = Some(coeff_grid);
                c.model.drop_mask = Some(config.drop_mask.clone());
                c.model.alpha = Some(PhysValue::Value(config.activation.alpha));
                c.model.beta = Some(PhysValue::Value(config.activation.beta));
                c.model.gamma = Some(PhysValue::Value(config.activation.gamma));
            }
        }
        toml::to_string(&c).map_err(|e| Error::config("config", e.to_string()))
    }

    /// SHA-256 of the echo with the output directory blanked.
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.output.dir = None;
        let text = c.echo()?;
        Ok(hex(&Sha256::digest(text.as_bytes())))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
