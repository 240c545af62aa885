//! MZI meshes in the rectangular (Clements) arrangement and the mesh network (MPNN).
//!
//! Each MZI maps a port pair through `B(ε₂)·R(θ)·B(ε₁)·R(φ)` with `R(x) = diag(e^{jx}, 1)`
//! and `B(ε) = [[cos(π/4+ε), j·sin(π/4+ε)], [j·sin(π/4+ε), cos(π/4+ε)]]`.
//! Column `c` of an `L`-port mesh couples pairs `(i, i+1)` with `i ≡ c (mod 2)`.

use std::f64::consts::{FRAC_PI_4, PI};
use std::sync::Arc;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::cgraph::{CTensor, CustomOp, NodeId, ParamId, ParamStore, Tape, C64};
use crate::error::{Error, Result};
use crate::errors::{ErrorRealization, MeshErrors, PhysicalSystem, RealizationData};
use crate::sepn::{residual, Sepn, SepnConfig, SepnSet};
use crate::training::model::uniform_vec;
use crate::training::{fuse, NumericalOptions, NumericalStates, PhotonicModel};

const J: C64 = C64 { re: 0.0, im: 1.0 };

pub type Mat2 = [[C64; 2]; 2];

fn coupler(eps: f64) -> (f64, f64) {
    let (s, c) = (FRAC_PI_4 + eps).sin_cos();
    (c, s)
}

/// 2×2 transfer matrix of one MZI.
pub fn mzi_transfer(theta: f64, phi: f64, eps1: f64, eps2: f64) -> Mat2 {
    let b = |eps: f64| -> Mat2 {
        let (c, s) = coupler(eps);
        [[C64::new(c, 0.0), J * s], [J * s, C64::new(c, 0.0)]]
    };
    let r = |x: f64| -> Mat2 { [[C64::from_polar(1.0, x), C64::new(0.0, 0.0)], [C64::new(0.0, 0.0), C64::new(1.0, 0.0)]] };
    mat2_mul(&b(eps2), &mat2_mul(&r(theta), &mat2_mul(&b(eps1), &r(phi))))
}

pub fn mat2_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut out = [[C64::new(0.0, 0.0); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

/// Port pairs of a rectangular mesh, column by column.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MeshLayout {
    ports: usize,
    /// Top port of each MZI, in application order.
    tops: Vec<usize>,
    /// Index range of each column within `tops`.
    columns: Vec<(usize, usize)>,
}

impl MeshLayout {
    pub fn clements(ports: usize) -> Result<Self> {
        if ports < 2 {
            return Err(Error::InvalidArgument(format!("a mesh needs at least 2 ports, got {ports}")));
        }
        let mut tops = Vec::with_capacity(ports * (ports - 1) / 2);
        let mut columns = Vec::with_capacity(ports);
        for c in 0..ports {
            let start = tops.len();
            let mut i = c % 2;
            while i + 1 < ports {
                tops.push(i);
                i += 2;
            }
            columns.push((start, tops.len()));
        }
        Ok(Self { ports, tops, columns })
    }

    pub fn ports(&self) -> usize {
        self.ports
    }

    pub fn num_mzis(&self) -> usize {
        self.tops.len()
    }

    /// Top port of MZI `m` (it couples `top` and `top + 1`).
    pub fn top(&self, m: usize) -> usize {
        self.tops[m]
    }

    /// Column holding MZI `m`.
    pub fn column_of(&self, m: usize) -> usize {
        self.columns.iter().position(|&(a, b)| m >= a && m < b).expect("mzi index in range")
    }
}

/// Effective settings of every MZI of one mesh.
#[derive(Clone, Debug)]
struct MeshState {
    theta: Vec<f64>,
    phi: Vec<f64>,
    bs: Vec<(f64, f64, f64, f64)>,
}

impl MeshState {
    fn new(theta: &[f64], phi: &[f64], errors: Option<&MeshErrors>) -> Self {
        match errors {
            None => Self {
                theta: theta.to_vec(),
                phi: phi.to_vec(),
                bs: vec![{
                    let (c, s) = coupler(0.0);
                    (c, s, c, s)
                }; theta.len()],
            },
            Some(e) => Self {
                theta: theta.iter().zip(&e.theta).map(|(a, b)| a + b).collect(),
                phi: phi.iter().zip(&e.phi).map(|(a, b)| a + b).collect(),
                bs: e
                    .bs
                    .iter()
                    .map(|[e1, e2]| {
                        let (c1, s1) = coupler(*e1);
                        let (c2, s2) = coupler(*e2);
                        (c1, s1, c2, s2)
                    })
                    .collect(),
            },
        }
    }

    /// Applies all columns; optionally records the field entering each column.
    fn apply(&self, layout: &MeshLayout, x: &[C64], record: bool) -> (Vec<C64>, Vec<Vec<C64>>) {
        let mut y = x.to_vec();
        let mut states = Vec::with_capacity(if record { layout.columns.len() } else { 0 });
        for &(a, b) in &layout.columns {
            if record {
                states.push(y.clone());
            }
            for m in a..b {
                let i = layout.tops[m];
                let (c1, s1, c2, s2) = self.bs[m];
                let u0 = C64::from_polar(1.0, self.phi[m]) * y[i];
                let u1 = y[i + 1];
                let v0 = u0 * c1 + J * s1 * u1;
                let v1 = J * s1 * u0 + u1 * c1;
                let w0 = C64::from_polar(1.0, self.theta[m]) * v0;
                y[i] = w0 * c2 + J * s2 * v1;
                y[i + 1] = J * s2 * w0 + v1 * c2;
            }
        }
        (y, states)
    }
}

fn check_settings(layout: &MeshLayout, x: &[C64], theta: &[f64], phi: &[f64], errors: Option<&MeshErrors>) -> Result<()> {
    let (l, m) = (layout.ports, layout.num_mzis());
    if x.len() != l {
        return Err(Error::shape("mesh_apply", &[x.len()], &[l]));
    }
    if theta.len() != m || phi.len() != m {
        return Err(Error::shape("mesh_apply (phases)", &[theta.len(), phi.len()], &[m, m]));
    }
    if let Some(e) = errors {
        if e.bs.len() != m || e.theta.len() != m || e.phi.len() != m {
            return Err(Error::shape("mesh_apply (errors)", &[e.bs.len()], &[m]));
        }
    }
    Ok(())
}

/// Propagates `x` through the mesh; `errors == None` is the ideal device.
pub fn mesh_apply(layout: &MeshLayout, x: &[C64], theta: &[f64], phi: &[f64], errors: Option<&MeshErrors>) -> Result<Vec<C64>> {
    check_settings(layout, x, theta, phi, errors)?;
    Ok(MeshState::new(theta, phi, errors).apply(layout, x, false).0)
}

/// Dense `L×L` matrix of the mesh (row-major), built column by column from unit inputs.
pub fn mesh_matrix(layout: &MeshLayout, theta: &[f64], phi: &[f64], errors: Option<&MeshErrors>) -> Result<Vec<C64>> {
    let l = layout.ports;
    let state = MeshState::new(theta, phi, errors);
    check_settings(layout, &vec![C64::new(0.0, 0.0); l], theta, phi, errors)?;
    let mut u = vec![C64::new(0.0, 0.0); l * l];
    for k in 0..l {
        let mut e = vec![C64::new(0.0, 0.0); l];
        e[k] = C64::new(1.0, 0.0);
        let col = state.apply(layout, &e, false).0;
        for r in 0..l {
            u[r * l + k] = col[r];
        }
    }
    Ok(u)
}

/// Hand-written adjoint of the mesh for the tape.
struct MeshOp {
    layout: Arc<MeshLayout>,
    state: MeshState,
    inputs: Vec<Vec<C64>>,
}

impl CustomOp for MeshOp {
    fn name(&self) -> &'static str {
        "mesh_apply"
    }

    fn backward(&self, _inputs: &[&CTensor], _output: &CTensor, grad_out: &[C64], needs: &[bool]) -> Vec<Option<Vec<C64>>> {
        let layout = &self.layout;
        let m_total = layout.num_mzis();
        let mut g = grad_out.to_vec();
        let mut d_theta = vec![C64::new(0.0, 0.0); m_total];
        let mut d_phi = vec![C64::new(0.0, 0.0); m_total];
        for (col, &(a, b)) in layout.columns.iter().enumerate().rev() {
            let x = &self.inputs[col];
            for m in a..b {
                let i = layout.tops[m];
                let (c1, s1, c2, s2) = self.state.bs[m];
                let ep = C64::from_polar(1.0, self.state.phi[m]);
                let et = C64::from_polar(1.0, self.state.theta[m]);
                let u0 = ep * x[i];
                let u1 = x[i + 1];
                let v0 = u0 * c1 + J * s1 * u1;
                let w0 = et * v0;
                let (g0, g1) = (g[i], g[i + 1]);
                let h0 = g0 * c2 - J * s2 * g1;
                let h1 = -J * s2 * g0 + g1 * c2;
                d_theta[m] = C64::new((h0.conj() * J * w0).re, 0.0);
                let k0 = et.conj() * h0;
                let m0 = k0 * c1 - J * s1 * h1;
                let m1 = -J * s1 * k0 + h1 * c1;
                d_phi[m] = C64::new((m0.conj() * J * u0).re, 0.0);
                g[i] = ep.conj() * m0;
                g[i + 1] = m1;
            }
        }
        vec![
            needs[0].then_some(g),
            needs[1].then_some(d_theta),
            needs[2].then_some(d_phi),
        ]
    }
}

/// Records an ideal mesh on the tape. `x: [L]`, `theta`/`phi`: real `[L(L-1)/2]` nodes.
pub fn mesh_node(tape: &mut Tape, layout: &Arc<MeshLayout>, x: NodeId, theta: NodeId, phi: NodeId) -> Result<NodeId> {
    let th = tape.value(theta).real_parts();
    let ph = tape.value(phi).real_parts();
    let xv = tape.value(x).data().to_vec();
    check_settings(layout, &xv, &th, &ph, None)?;
    let state = MeshState::new(&th, &ph, None);
    let (y, inputs) = state.apply(layout, &xv, true);
    let value = CTensor::new(vec![layout.ports], y)?;
    Ok(tape.custom(
        &[x, theta, phi],
        value,
        false,
        Box::new(MeshOp {
            layout: layout.clone(),
            state,
            inputs,
        }),
    ))
}

/// Electro-optic activation `f(z) = j√(1−α)·e^{−j(β|z|²+γ)}·cos(β|z|²+γ)·z`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EoActivation {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for EoActivation {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            beta: PI / 20.0,
            gamma: PI / 10.0,
        }
    }
}

impl EoActivation {
    pub fn apply(&self, z: C64) -> C64 {
        let psi = self.beta * z.norm_sqr() + self.gamma;
        J * (1.0 - self.alpha).sqrt() * C64::from_polar(1.0, -psi) * psi.cos() * z
    }

    pub fn apply_all(&self, z: &[C64]) -> Vec<C64> {
        z.iter().map(|&v| self.apply(v)).collect()
    }

    /// Same map on the tape, written as `j√(1−α)/2·(1 + e^{−2jψ})·z`.
    pub fn node(&self, tape: &mut Tape, z: NodeId) -> Result<NodeId> {
        let n = tape.value(z).numel();
        let shape = tape.shape(z).to_vec();
        let p = tape.abs_sq(z);
        let p = tape.scale(p, C64::new(-2.0 * self.beta, 0.0));
        let bias = tape.constant(CTensor::new(shape.clone(), vec![C64::new(-2.0 * self.gamma, 0.0); n])?);
        let arg = tape.add(p, bias)?;
        let e = tape.exp_j(arg);
        let one = tape.constant(CTensor::new(shape, vec![C64::new(1.0, 0.0); n])?);
        let s = tape.add(e, one)?;
        let s = tape.scale(s, J * (0.5 * (1.0 - self.alpha).sqrt()));
        tape.mul(s, z)
    }
}

/// Mesh network architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpnnConfig {
    pub ports: usize,
    pub meshes: usize,
    /// Output ports read as class scores (ten for digit data; fewer on small toy meshes).
    pub drop_mask: Vec<usize>,
    pub activation: EoActivation,
}

impl MpnnConfig {
    pub fn new(ports: usize, meshes: usize) -> Self {
        Self {
            ports,
            meshes,
            drop_mask: (0..10.min(ports)).collect(),
            activation: EoActivation::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ports < 2 {
            return Err(Error::config("mpnn.ports", "needs at least 2 ports"));
        }
        if self.meshes == 0 {
            return Err(Error::config("mpnn.meshes", "needs at least one mesh"));
        }
        if self.drop_mask.len() < 2 {
            return Err(Error::config("mpnn.drop_mask", "must select at least 2 ports"));
        }
        for (i, &p) in self.drop_mask.iter().enumerate() {
            if p >= self.ports || self.drop_mask[..i].contains(&p) {
                return Err(Error::config("mpnn.drop_mask", format!("port {p} is out of range or repeated")));
            }
        }
        let a = self.activation;
        if !(0.0..=1.0).contains(&a.alpha) || !a.beta.is_finite() || !a.gamma.is_finite() {
            return Err(Error::config("mpnn.activation", "alpha must lie in [0, 1]; beta and gamma must be finite"));
        }
        Ok(())
    }
}

/// Mesh network: `N` meshes with electro-optic activations between them.
#[derive(Clone, Debug)]
pub struct Mpnn {
    config: MpnnConfig,
    layout: Arc<MeshLayout>,
    /// `(θ, φ)` per mesh.
    phases: Vec<(ParamId, ParamId)>,
    mask: Arc<Vec<usize>>,
}

impl Mpnn {
    /// Registers `θ ~ U[0, π]` and `φ ~ U[0, 2π]` for every MZI.
    pub fn new(store: &mut ParamStore, config: MpnnConfig, rng: &mut dyn RngCore) -> Result<Self> {
        config.validate()?;
        let layout = Arc::new(MeshLayout::clements(config.ports)?);
        let m = layout.num_mzis();
        let mut phases = Vec::with_capacity(config.meshes);
        for n in 0..config.meshes {
            let t = store.add(format!("mpnn.m{n}.theta"), &[m], uniform_vec(rng, m, 0.0, PI))?;
            let p = store.add(format!("mpnn.m{n}.phi"), &[m], uniform_vec(rng, m, 0.0, 2.0 * PI))?;
            phases.push((t, p));
        }
        let mask = Arc::new(config.drop_mask.clone());
        Ok(Self {
            config,
            layout,
            phases,
            mask,
        })
    }

    pub fn config(&self) -> &MpnnConfig {
        &self.config
    }

    pub fn layout(&self) -> &MeshLayout {
        &self.layout
    }

    pub fn phases(&self, mesh: usize) -> (ParamId, ParamId) {
        self.phases[mesh]
    }

    fn check_input(&self, input: &CTensor) -> Result<()> {
        if input.shape() != [self.config.ports] {
            return Err(Error::shape("mpnn input", input.shape(), &[self.config.ports]));
        }
        Ok(())
    }

    /// `N_n(M̂'_n x) + M̂'_n x` for mesh `n`.
    fn layer(&self, tape: &mut Tape, store: &ParamStore, n: usize, x: NodeId, sepn: Option<&Sepn>, detach: bool) -> Result<NodeId> {
        let (t, p) = self.phases[n];
        let th = tape.param(store, t);
        let ph = tape.param(store, p);
        let z = mesh_node(tape, &self.layout, x, th, ph)?;
        if sepn.is_none() {
            return Ok(z);
        }
        let l = self.config.ports;
        let z2 = tape.reshape(z, &[1, l])?;
        let r = residual(sepn, tape, store, z2, detach)?;
        tape.reshape(r, &[l])
    }

    fn sepn_for<'a>(&self, sepns: Option<&'a SepnSet>, n: usize) -> Result<Option<&'a Sepn>> {
        let Some(set) = sepns else { return Ok(None) };
        match set.group(n) {
            [i] => Ok(Some(set.get(*i))),
            g => Err(Error::Topology(format!("mesh {n} needs exactly 1 SEPN, got {}", g.len()))),
        }
    }

    /// Physical propagation; returns `P_1..P_{N-1}` over all ports and `P_N` at the drop mask.
    fn physical_states(&self, params: &ParamStore, input: &[C64], errors: &[MeshErrors]) -> Result<Vec<Vec<f64>>> {
        let mut states = Vec::with_capacity(self.config.meshes);
        let mut x = input.to_vec();
        for (n, e) in errors.iter().enumerate() {
            if n > 0 {
                x = self.config.activation.apply_all(&x);
            }
            let (t, p) = self.phases[n];
            x = mesh_apply(&self.layout, &x, params.value(t), params.value(p), Some(e))?;
            let intensity: Vec<f64> = if n + 1 == self.config.meshes {
                self.mask.iter().map(|&i| x[i].norm_sqr()).collect()
            } else {
                x.iter().map(|z| z.norm_sqr()).collect()
            };
            states.push(intensity);
        }
        Ok(states)
    }
}

/// Mesh network with frozen device errors; exposes intensities only.
pub struct PhysicalMpnn<'a> {
    model: &'a Mpnn,
    errors: Vec<MeshErrors>,
}

impl PhysicalSystem for PhysicalMpnn<'_> {
    fn num_states(&self) -> usize {
        self.model.config.meshes
    }

    fn evaluate(&self, params: &ParamStore, input: &CTensor) -> Result<Vec<Vec<f64>>> {
        self.model.check_input(input)?;
        self.model.physical_states(params, input.data(), &self.errors)
    }
}

impl PhotonicModel for Mpnn {
    fn num_states(&self) -> usize {
        self.config.meshes
    }

    fn physical_params(&self) -> Vec<ParamId> {
        self.phases.iter().flat_map(|&(t, p)| [t, p]).collect()
    }

    fn build_sepns(&self, store: &mut ParamStore, config: SepnConfig, std: f64, rng: &mut dyn RngCore) -> Result<SepnSet> {
        let mut nets = Vec::with_capacity(self.config.meshes);
        for n in 0..self.config.meshes {
            nets.push(Sepn::new(store, &format!("sepn.m{n}"), config, 1, self.config.ports, std, rng)?);
        }
        let groups = (0..self.config.meshes).map(|n| vec![n]).collect();
        SepnSet::new(nets, groups)
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, input: &CTensor, opts: &NumericalOptions) -> Result<NumericalStates> {
        self.check_input(input)?;
        let last = self.config.meshes - 1;
        let mut x = tape.constant(input.clone());
        let mut s = Vec::with_capacity(self.config.meshes);
        let mut o = Vec::with_capacity(self.config.meshes);
        let mut unfused = Vec::with_capacity(self.config.meshes);
        for n in 0..=last {
            if n > 0 {
                x = self.config.activation.node(tape, x)?;
            }
            let mut z = self.layer(tape, store, n, x, self.sepn_for(opts.sepns, n)?, opts.detach_sepn)?;
            if n == last {
                z = tape.gather(z, self.mask.clone())?;
            }
            unfused.push(z);
            z = opts.apply_fusion(tape, n, z)?;
            s.push(z);
            o.push(tape.abs_sq(z));
            x = z;
        }
        let readout = *o.last().expect("at least one mesh");
        Ok(NumericalStates { s, unfused, o, readout })
    }

    fn forward_group(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        n: usize,
        input: &CTensor,
        measured: &[Vec<f64>],
        unitary: &[Vec<C64>],
        sepns: &SepnSet,
    ) -> Result<NodeId> {
        self.check_input(input)?;
        if n >= self.config.meshes {
            return Err(Error::Topology(format!("group {n} does not exist")));
        }
        let x = if n == 0 {
            tape.constant(input.clone())
        } else {
            let p = measured
                .get(n - 1)
                .ok_or_else(|| Error::InvalidArgument(format!("measurement of state {} is missing", n - 1)))?;
            let s = unitary
                .get(n - 1)
                .ok_or_else(|| Error::InvalidArgument(format!("unitary state {} is missing", n - 1)))?;
            let f = self.config.activation.apply_all(&fuse(p, s)?);
            tape.constant(CTensor::new(vec![self.config.ports], f)?)
        };
        let z = self.layer(tape, store, n, x, self.sepn_for(Some(sepns), n)?, false)?;
        if n + 1 == self.config.meshes {
            tape.gather(z, self.mask.clone())
        } else {
            Ok(z)
        }
    }

    fn readout_values(&self, intensity: &[f64]) -> Result<Vec<f64>> {
        if intensity.len() != self.mask.len() {
            return Err(Error::shape("mpnn readout", &[intensity.len()], &[self.mask.len()]));
        }
        Ok(intensity.to_vec())
    }

    fn physical_system(&self, realization: &ErrorRealization) -> Result<Box<dyn PhysicalSystem + '_>> {
        let RealizationData::Mpnn { ports, meshes } = realization.data() else {
            return Err(Error::Topology("diffractive realization applied to a mesh network".into()));
        };
        if *ports != self.config.ports || meshes.len() != self.config.meshes {
            return Err(Error::Topology(format!(
                "realization covers {} meshes of {ports} ports, model has {} meshes of {} ports",
                meshes.len(),
                self.config.meshes,
                self.config.ports
            )));
        }
        Ok(Box::new(PhysicalMpnn {
            model: self,
            errors: meshes.clone(),
        }))
    }
}
