//! Free-space diffraction and diffractive networks (DPNN).
//!
//! Fields live on an `n×n` layer grid. Every diffraction zero-pads to `2n×2n`, applies the
//! angular-spectrum transfer function and crops the centre back out. A block is
//! diffraction → phase → diffraction → phase → diffraction, read out as intensity.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::cgraph::{fft, CTensor, NodeId, ParamId, ParamStore, Rect, Tape, C64};
use crate::error::{Error, Result};
use crate::errors::{BlockErrors, ErrorRealization, PhysicalSystem, RealizationData};
use crate::sepn::{residual, Sepn, SepnConfig, SepnSet};
use crate::training::model::uniform_vec;
use crate::training::{NumericalOptions, NumericalStates, PhotonicModel};

pub const DEFAULT_PITCH: f64 = 17e-6;
pub const DEFAULT_WAVELENGTH: f64 = 1.55e-6;

/// Square complex field with its sampling metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct OpticalField {
    data: CTensor,
    pitch: f64,
    wavelength: f64,
}

impl OpticalField {
    pub fn new(data: CTensor, pitch: f64, wavelength: f64) -> Result<Self> {
        let s = data.shape();
        if s.len() != 2 || s[0] != s[1] {
            return Err(Error::shape("optical field (square grid required)", s, &[s[0], s[0]]));
        }
        if !(pitch > 0.0 && wavelength > 0.0 && pitch.is_finite() && wavelength.is_finite()) {
            return Err(Error::InvalidArgument("pitch and wavelength must be positive".into()));
        }
        Ok(Self { data, pitch, wavelength })
    }

    pub fn extent(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn data(&self) -> &CTensor {
        &self.data
    }

    pub fn pitch(&self) -> f64 {
        self.pitch
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    pub fn energy(&self) -> f64 {
        self.data.data().iter().map(|z| z.norm_sqr()).sum()
    }
}

/// One free-space hop of nominal length `z`, with an optional distance error `dz`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiffractionOp {
    pub z: f64,
    pub dz: f64,
}

impl DiffractionOp {
    pub fn effective(&self, ideal: bool) -> f64 {
        if ideal {
            self.z
        } else {
            self.z + self.dz
        }
    }
}

/// Angular-spectrum transfer function on an `m×m` grid in FFT ordering.
/// Evanescent components are zeroed.
pub fn transfer_function(m: usize, pitch: f64, wavelength: f64, z: f64) -> Vec<C64> {
    let freq = |k: usize| -> f64 {
        let k = if k < m.div_ceil(2) { k as f64 } else { k as f64 - m as f64 };
        k / (m as f64 * pitch)
    };
    let mut h = Vec::with_capacity(m * m);
    for r in 0..m {
        let fy = wavelength * freq(r);
        for c in 0..m {
            let fx = wavelength * freq(c);
            let arg = 1.0 - fx * fx - fy * fy;
            if arg > 0.0 {
                h.push(C64::from_polar(1.0, 2.0 * PI * z / wavelength * arg.sqrt()));
            } else {
                h.push(C64::new(0.0, 0.0));
            }
        }
    }
    h
}

fn apply_transfer(data: &mut [C64], m: usize, h: &[C64]) {
    fft::fft2_inplace(data, m, m);
    data.iter_mut().zip(h).for_each(|(a, b)| *a *= b);
    fft::ifft2_inplace(data, m, m);
}

/// Free-space transfer of the whole grid over the effective distance of `op`.
///
/// The field must already carry its zero padding. Distances below zero are rejected;
/// use [`propagate_back`] for the conjugate (time-reversed) transfer.
pub fn propagate(field: &OpticalField, op: &DiffractionOp, ideal: bool) -> Result<OpticalField> {
    let z = op.effective(ideal);
    if !z.is_finite() || z < 0.0 {
        return Err(Error::InvalidArgument(format!("effective propagation distance must be >= 0, got {z}")));
    }
    let m = field.extent();
    let h = transfer_function(m, field.pitch, field.wavelength, z);
    let mut data = field.data.data().to_vec();
    apply_transfer(&mut data, m, &h);
    OpticalField::new(CTensor::new(vec![m, m], data)?, field.pitch, field.wavelength)
}

/// Conjugate transfer over `z`, undoing [`propagate`] for band-limited fields.
pub fn propagate_back(field: &OpticalField, z: f64) -> Result<OpticalField> {
    let m = field.extent();
    let h: Vec<C64> = transfer_function(m, field.pitch, field.wavelength, z).iter().map(|v| v.conj()).collect();
    let mut data = field.data.data().to_vec();
    apply_transfer(&mut data, m, &h);
    OpticalField::new(CTensor::new(vec![m, m], data)?, field.pitch, field.wavelength)
}

/// Bounded phase `2π·sigmoid(raw) + ε`.
pub fn phase_of(raw: f64, eps: f64) -> f64 {
    2.0 * PI / (1.0 + (-raw).exp()) + eps
}

/// Multiplies the field by `e^{j(2π·sigmoid(raw)+ε)}` pixel by pixel.
pub fn modulate(field: &OpticalField, raw: &[f64], eps: Option<&[f64]>) -> Result<OpticalField> {
    let n = field.extent();
    if raw.len() != n * n || eps.is_some_and(|e| e.len() != n * n) {
        return Err(Error::shape("modulate", &[n, n], &[raw.len()]));
    }
    let data = field
        .data
        .data()
        .iter()
        .enumerate()
        .map(|(i, z)| z * C64::from_polar(1.0, phase_of(raw[i], eps.map_or(0.0, |e| e[i]))))
        .collect();
    OpticalField::new(CTensor::new(vec![n, n], data)?, field.pitch, field.wavelength)
}

/// Places an `n×n` grid at the centre of a zero `m×m` grid.
pub fn pad_center(src: &[C64], n: usize, m: usize) -> Vec<C64> {
    let off = (m - n) / 2;
    let mut out = vec![C64::new(0.0, 0.0); m * m];
    for r in 0..n {
        out[(r + off) * m + off..(r + off) * m + off + n].copy_from_slice(&src[r * n..(r + 1) * n]);
    }
    out
}

/// Inverse of [`pad_center`].
pub fn crop_center(src: &[C64], m: usize, n: usize) -> Vec<C64> {
    let off = (m - n) / 2;
    let mut out = Vec::with_capacity(n * n);
    for r in 0..n {
        out.extend_from_slice(&src[(r + off) * m + off..(r + off) * m + off + n]);
    }
    out
}

/// Pad to `2n`, transfer, crop back to `n`.
fn diffract_values(src: &[C64], n: usize, h: &[C64]) -> Vec<C64> {
    let m = 2 * n;
    let mut big = pad_center(src, n, m);
    apply_transfer(&mut big, m, h);
    crop_center(&big, m, n)
}

fn sample_bilinear(src: &[f64], n: usize, y: f64, x: f64) -> f64 {
    let (y0, x0) = (y.floor(), x.floor());
    let (wy, wx) = (y - y0, x - x0);
    let mut acc = 0.0;
    for (dy, fy) in [(0, 1.0 - wy), (1, wy)] {
        for (dx, fx) in [(0, 1.0 - wx), (1, wx)] {
            let w = fy * fx;
            if w == 0.0 {
                continue;
            }
            let (r, c) = (y0 as i64 + dy, x0 as i64 + dx);
            if r >= 0 && c >= 0 && (r as usize) < n && (c as usize) < n {
                acc += w * src[r as usize * n + c as usize];
            }
        }
    }
    acc
}

/// Resamples a grid under the map `p ↦ R(rot)(p − c) + c + (0, shift)` about the grid centre `c`.
///
/// `inverse == false` moves the content by the map (placing a displaced layer);
/// `inverse == true` reads the content through the map (a displaced sensor). Zero fill.
pub fn warp(src: &[f64], n: usize, shift_px: f64, rot_deg: f64, inverse: bool) -> Vec<f64> {
    if shift_px == 0.0 && rot_deg == 0.0 {
        return src.to_vec();
    }
    let c = (n as f64 - 1.0) / 2.0;
    let (s, co) = rot_deg.to_radians().sin_cos();
    let mut out = vec![0.0; n * n];
    for r in 0..n {
        for col in 0..n {
            let (y, x) = (r as f64, col as f64);
            let (sy, sx) = if inverse {
                let (yy, xx) = (y - c, x - c);
                (s * xx + co * yy + c, co * xx - s * yy + c + shift_px)
            } else {
                let (yy, xx) = (y - c, x - c - shift_px);
                (-s * xx + co * yy + c, co * xx + s * yy + c)
            };
            out[r * n + col] = sample_bilinear(src, n, sy, sx);
        }
    }
    out
}

/// Ten disjoint rectangular detectors, one per class.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectorLayout {
    grid: usize,
    regions: Arc<Vec<Rect>>,
}

impl DetectorLayout {
    pub fn new(grid: usize, regions: Vec<Rect>) -> Result<Self> {
        if regions.len() != 10 {
            return Err(Error::InvalidArgument(format!("detector layout needs 10 regions, got {}", regions.len())));
        }
        for (i, r) in regions.iter().enumerate() {
            if r.height == 0 || r.width == 0 || r.top + r.height > grid || r.left + r.width > grid {
                return Err(Error::InvalidArgument(format!("detector region {i} lies outside the {grid}x{grid} grid")));
            }
            if regions[..i].iter().any(|o| o.intersects(r)) {
                return Err(Error::InvalidArgument(format!("detector region {i} overlaps another region")));
            }
        }
        Ok(Self {
            grid,
            regions: Arc::new(regions),
        })
    }

    /// Two rows of five `size×size` squares with equal gaps (margins included).
    pub fn grid_2x5(grid: usize, size: usize) -> Result<Self> {
        if size == 0 || 5 * size > grid {
            return Err(Error::config("dpnn.detector_size", format!("{size} does not fit five times across {grid}")));
        }
        let gx = (grid - 5 * size) / 6;
        let gy = (grid - 2 * size) / 3;
        let x0 = (grid - 5 * size - 4 * gx) / 2;
        let y0 = (grid - 2 * size - gy) / 2;
        let mut regions = Vec::with_capacity(10);
        for row in 0..2 {
            for col in 0..5 {
                regions.push(Rect {
                    top: y0 + row * (size + gy),
                    left: x0 + col * (size + gx),
                    height: size,
                    width: size,
                });
            }
        }
        Self::new(grid, regions)
    }

    pub fn regions(&self) -> &[Rect] {
        &self.regions
    }

    pub(crate) fn shared(&self) -> Arc<Vec<Rect>> {
        self.regions.clone()
    }

    /// Sum of the intensity inside each region.
    pub fn readout(&self, intensity: &[f64]) -> Result<Vec<f64>> {
        let n = self.grid;
        if intensity.len() != n * n {
            return Err(Error::shape("detector_readout", &[n, n], &[intensity.len()]));
        }
        Ok(self
            .regions
            .iter()
            .map(|r| {
                (r.top..r.top + r.height)
                    .map(|i| intensity[i * n + r.left..i * n + r.left + r.width].iter().sum::<f64>())
                    .sum()
            })
            .collect())
    }
}

/// Geometry and topology of a diffractive network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpnnConfig {
    /// Side of the phase-layer grid (input image occupies the central half).
    pub grid: usize,
    pub pitch_m: f64,
    pub wavelength_m: f64,
    pub distance_m: f64,
    pub detector_size: usize,
    /// Predecessors of each block in topological order; an empty list means the encoded input.
    pub topology: Vec<Vec<usize>>,
}

impl DpnnConfig {
    /// Single block, 30 cm hops.
    pub fn single(grid: usize) -> Self {
        Self {
            grid,
            pitch_m: DEFAULT_PITCH,
            wavelength_m: DEFAULT_WAVELENGTH,
            distance_m: 0.30,
            detector_size: default_detector_size(grid),
            topology: vec![vec![]],
        }
    }

    /// Seven blocks funnelled 4 → 2 → 1, 10 cm hops.
    pub fn multi(grid: usize) -> Self {
        Self {
            distance_m: 0.10,
            topology: vec![vec![], vec![], vec![], vec![], vec![0, 1], vec![2, 3], vec![4, 5]],
            ..Self::single(grid)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid == 0 || self.grid % 4 != 0 {
            return Err(Error::config("dpnn.grid", "must be a positive multiple of 4"));
        }
        for (name, v) in [
            ("dpnn.pitch_m", self.pitch_m),
            ("dpnn.wavelength_m", self.wavelength_m),
            ("dpnn.distance_m", self.distance_m),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(name, "must be positive"));
            }
        }
        let nb = self.topology.len();
        if nb == 0 {
            return Err(Error::config("dpnn.topology", "needs at least one block"));
        }
        let mut has_succ = vec![false; nb];
        for (i, preds) in self.topology.iter().enumerate() {
            for (j, &p) in preds.iter().enumerate() {
                if p >= i || preds[..j].contains(&p) {
                    return Err(Error::config("dpnn.topology", format!("block {i}: predecessor {p} must be an earlier, distinct block")));
                }
                has_succ[p] = true;
            }
        }
        if let Some(dangling) = has_succ[..nb - 1].iter().position(|s| !s) {
            return Err(Error::config("dpnn.topology", format!("block {dangling} has no successor; the last block must be the only sink")));
        }
        DetectorLayout::grid_2x5(self.grid, self.detector_size)?;
        Ok(())
    }
}

/// Detector side scaled from 22 px on a 200 px grid.
pub fn default_detector_size(grid: usize) -> usize {
    ((22 * grid) as f64 / 200.0).round().max(1.0) as usize
}

/// A diffractive network: ideal numerical model plus its learnable phase layers.
#[derive(Clone, Debug)]
pub struct Dpnn {
    config: DpnnConfig,
    layers: Vec<[ParamId; 2]>,
    detectors: DetectorLayout,
    transfer: Arc<Vec<C64>>,
}

impl Dpnn {
    /// Registers two phase layers per block with raw values uniform in `[-2, 2]`.
    pub fn new(store: &mut ParamStore, config: DpnnConfig, rng: &mut dyn RngCore) -> Result<Self> {
        Self::with_phase_init(store, config, 2.0, rng)
    }

    /// As [`Dpnn::new`] with raw values uniform in `[-half_width, half_width]`.
    pub fn with_phase_init(store: &mut ParamStore, config: DpnnConfig, half_width: f64, rng: &mut dyn RngCore) -> Result<Self> {
        config.validate()?;
        if !(half_width >= 0.0 && half_width.is_finite()) {
            return Err(Error::config("model.phase_init", "must be finite and non-negative"));
        }
        let n = config.grid;
        let mut layers = Vec::with_capacity(config.topology.len());
        for b in 0..config.topology.len() {
            let a = store.add(format!("dpnn.b{b}.phase0"), &[n, n], uniform_vec(rng, n * n, -half_width, half_width))?;
            let c = store.add(format!("dpnn.b{b}.phase1"), &[n, n], uniform_vec(rng, n * n, -half_width, half_width))?;
            layers.push([a, c]);
        }
        let detectors = DetectorLayout::grid_2x5(n, config.detector_size)?;
        let transfer = Arc::new(transfer_function(2 * n, config.pitch_m, config.wavelength_m, config.distance_m));
        Ok(Self {
            config,
            layers,
            detectors,
            transfer,
        })
    }

    pub fn config(&self) -> &DpnnConfig {
        &self.config
    }

    pub fn num_blocks(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self, block: usize) -> [ParamId; 2] {
        self.layers[block]
    }

    pub fn detectors(&self) -> &DetectorLayout {
        &self.detectors
    }

    fn check_input(&self, input: &CTensor) -> Result<()> {
        let n = self.config.grid;
        if input.shape() != [n, n] {
            return Err(Error::shape("dpnn input", input.shape(), &[n, n]));
        }
        Ok(())
    }

    fn diffract(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        let n = self.config.grid;
        let m = 2 * n;
        let off = n / 2;
        let big = tape.embed(x, m, m, off, off)?;
        let f = tape.fft2(big)?;
        let f = tape.mul_const(f, self.transfer.clone())?;
        let u = tape.ifft2(f)?;
        tape.extract(u, n, n, off, off)
    }

    fn modulate_node(&self, tape: &mut Tape, store: &ParamStore, x: NodeId, layer: ParamId) -> Result<NodeId> {
        let raw = tape.param(store, layer);
        let s = tape.sigmoid(raw);
        let phase = tape.scale(s, C64::new(2.0 * PI, 0.0));
        let m = tape.exp_j(phase);
        tape.mul(x, m)
    }

    /// One block of the numerical model: `S = N₃(W·U₂) + W·U₂` with residual SEPNs per hop.
    pub fn block_numerical(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        block: usize,
        input: NodeId,
        sepns: Option<[&Sepn; 3]>,
        detach: bool,
    ) -> Result<NodeId> {
        let mut x = input;
        for hop in 0..3 {
            x = self.diffract(tape, x)?;
            x = residual(sepns.map(|s| s[hop]), tape, store, x, detach)?;
            if hop < 2 {
                x = self.modulate_node(tape, store, x, self.layers[block][hop])?;
            }
        }
        Ok(x)
    }

    fn block_sepns<'a>(&self, sepns: Option<&'a SepnSet>, block: usize) -> Result<Option<[&'a Sepn; 3]>> {
        let Some(set) = sepns else { return Ok(None) };
        let g = set.group(block);
        if g.len() != 3 {
            return Err(Error::Topology(format!("block {block} needs 3 SEPNs, got {}", g.len())));
        }
        Ok(Some([set.get(g[0]), set.get(g[1]), set.get(g[2])]))
    }

    /// Input node of `block` given the intensity nodes of earlier blocks.
    fn block_input(&self, tape: &mut Tape, block: usize, input: NodeId, o: &[NodeId]) -> Result<NodeId> {
        let preds = &self.config.topology[block];
        if preds.is_empty() {
            return Ok(input);
        }
        let mut acc = o[preds[0]];
        for &p in &preds[1..] {
            acc = tape.add(acc, o[p])?;
        }
        Ok(acc)
    }

    /// Physical forward of one block on plain values (deployed phases, frozen errors).
    fn block_physical(&self, store: &ParamStore, block: usize, input: &[C64], errors: &BlockErrors, transfer: &[C64]) -> Vec<f64> {
        let n = self.config.grid;
        let mut x = diffract_values(input, n, transfer);
        for k in 0..2 {
            let shift = (k + 1) as f64 * errors.dx_px as f64;
            let rot = (k + 1) as f64 * errors.rot_deg;
            let raw = warp(store.value(self.layers[block][k]), n, shift, rot, false);
            let eps = warp(&errors.eps[k], n, shift, rot, false);
            for (i, z) in x.iter_mut().enumerate() {
                *z *= C64::from_polar(1.0, phase_of(raw[i], eps[i]));
            }
            x = diffract_values(&x, n, transfer);
        }
        let intensity: Vec<f64> = x.iter().map(|z| z.norm_sqr()).collect();
        warp(&intensity, n, 3.0 * errors.dx_px as f64, 3.0 * errors.rot_deg, true)
    }
}

/// Diffractive network with a frozen error realization; exposes intensities only.
pub struct PhysicalDpnn<'a> {
    model: &'a Dpnn,
    blocks: Vec<BlockErrors>,
    transfers: Vec<Vec<C64>>,
}

impl PhysicalSystem for PhysicalDpnn<'_> {
    fn num_states(&self) -> usize {
        self.model.num_blocks()
    }

    fn evaluate(&self, params: &ParamStore, input: &CTensor) -> Result<Vec<Vec<f64>>> {
        self.model.check_input(input)?;
        let n = self.model.config.grid;
        let mut states: Vec<Vec<f64>> = Vec::with_capacity(self.blocks.len());
        for (b, errors) in self.blocks.iter().enumerate() {
            let preds = &self.model.config.topology[b];
            let field: Vec<C64> = if preds.is_empty() {
                input.data().to_vec()
            } else {
                let mut acc = vec![0.0; n * n];
                for &p in preds {
                    acc.iter_mut().zip(&states[p]).for_each(|(a, v)| *a += v);
                }
                acc.into_iter().map(|v| C64::new(v, 0.0)).collect()
            };
            states.push(self.model.block_physical(params, b, &field, errors, &self.transfers[b]));
        }
        Ok(states)
    }
}

impl PhotonicModel for Dpnn {
    fn num_states(&self) -> usize {
        self.num_blocks()
    }

    fn physical_params(&self) -> Vec<ParamId> {
        self.layers.iter().flatten().copied().collect()
    }

    fn build_sepns(&self, store: &mut ParamStore, config: SepnConfig, std: f64, rng: &mut dyn RngCore) -> Result<SepnSet> {
        let n = self.config.grid;
        let mut nets = Vec::new();
        let mut groups = Vec::new();
        for b in 0..self.num_blocks() {
            let mut g = Vec::new();
            for hop in 0..3 {
                g.push(nets.len());
                nets.push(Sepn::new(store, &format!("sepn.b{b}.h{hop}"), config, n, n, std, rng)?);
            }
            groups.push(g);
        }
        SepnSet::new(nets, groups)
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, input: &CTensor, opts: &NumericalOptions) -> Result<NumericalStates> {
        self.check_input(input)?;
        let x = tape.constant(input.clone());
        let mut s = Vec::with_capacity(self.num_blocks());
        let mut o = Vec::with_capacity(self.num_blocks());
        let mut unfused = Vec::with_capacity(self.num_blocks());
        for b in 0..self.num_blocks() {
            let inp = self.block_input(tape, b, x, &o)?;
            let raw = self.block_numerical(tape, store, b, inp, self.block_sepns(opts.sepns, b)?, opts.detach_sepn)?;
            let sb = opts.apply_fusion(tape, b, raw)?;
            let ob = tape.abs_sq(sb);
            unfused.push(raw);
            s.push(sb);
            o.push(ob);
        }
        let last = *o.last().expect("at least one block");
        let readout = tape.region_sums(last, self.detectors.shared())?;
        Ok(NumericalStates { s, unfused, o, readout })
    }

    fn forward_group(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        n: usize,
        input: &CTensor,
        measured: &[Vec<f64>],
        _unitary: &[Vec<C64>],
        sepns: &SepnSet,
    ) -> Result<NodeId> {
        self.check_input(input)?;
        if n >= self.num_blocks() {
            return Err(Error::Topology(format!("group {n} does not exist")));
        }
        let preds = &self.config.topology[n];
        let g = self.config.grid;
        let inp = if preds.is_empty() {
            tape.constant(input.clone())
        } else {
            let mut acc = vec![0.0; g * g];
            for &p in preds {
                let m = measured
                    .get(p)
                    .ok_or_else(|| Error::InvalidArgument(format!("measurement of state {p} is missing")))?;
                acc.iter_mut().zip(m).for_each(|(a, v)| *a += v);
            }
            tape.constant(CTensor::from_real(&[g, g], &acc)?)
        };
        self.block_numerical(tape, store, n, inp, self.block_sepns(Some(sepns), n)?, false)
    }

    fn readout_values(&self, intensity: &[f64]) -> Result<Vec<f64>> {
        self.detectors.readout(intensity)
    }

    fn physical_system(&self, realization: &ErrorRealization) -> Result<Box<dyn PhysicalSystem + '_>> {
        let RealizationData::Dpnn { grid, blocks } = realization.data() else {
            return Err(Error::Topology("mesh realization applied to a diffractive network".into()));
        };
        if *grid != self.config.grid || blocks.len() != self.num_blocks() {
            return Err(Error::Topology(format!(
                "realization covers {} blocks on a {grid} grid, model has {} blocks on a {} grid",
                blocks.len(),
                self.num_blocks(),
                self.config.grid
            )));
        }
        let transfers = blocks
            .iter()
            .map(|e| {
                let z = self.config.distance_m + e.dz_m;
                if z < 0.0 {
                    return Err(Error::InvalidArgument(format!("effective propagation distance {z} is negative")));
                }
                Ok(if e.dz_m == 0.0 {
                    self.transfer.as_ref().clone()
                } else {
                    transfer_function(2 * self.config.grid, self.config.pitch_m, self.config.wavelength_m, z)
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Box::new(PhysicalDpnn {
            model: self,
            blocks: blocks.clone(),
            transfers,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detector_layout_fits_and_is_disjoint() {
        let d = DetectorLayout::grid_2x5(200, 22).unwrap();
        assert_eq!(d.regions().len(), 10);
        let ones = vec![1.0; 200 * 200];
        assert!(d.readout(&ones).unwrap().iter().all(|&v| v == 484.0));
        assert!(DetectorLayout::grid_2x5(20, 5).is_err());
    }

    #[test]
    fn warp_integer_shift_is_exact() {
        let n = 6;
        let src: Vec<f64> = (0..n * n).map(|i| i as f64).collect();
        let moved = warp(&src, n, 2.0, 0.0, false);
        let read = warp(&src, n, 2.0, 0.0, true);
        for r in 0..n {
            for c in 0..n {
                let want_moved = if c >= 2 { src[r * n + c - 2] } else { 0.0 };
                let want_read = if c + 2 < n { src[r * n + c + 2] } else { 0.0 };
                assert_eq!(moved[r * n + c], want_moved);
                assert_eq!(read[r * n + c], want_read);
            }
        }
    }

    #[test]
    fn warp_rotation_inverts() {
        let n = 33;
        let src: Vec<f64> = (0..n * n)
            .map(|i| {
                let (r, c) = ((i / n) as f64 - 16.0, (i % n) as f64 - 16.0);
                (-(r * r + c * c) / 40.0).exp()
            })
            .collect();
        let placed = warp(&src, n, 0.0, 7.0, false);
        let back = warp(&placed, n, 0.0, 7.0, true);
        let err = src.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 2e-2, "{err}");
    }

    #[test]
    fn topology_validation() {
        let mut c = DpnnConfig::multi(16);
        assert!(c.validate().is_ok());
        c.topology[6] = vec![4];
        assert!(c.validate().is_err());
        c.topology = vec![vec![], vec![1]];
        assert!(c.validate().is_err());
    }
}
