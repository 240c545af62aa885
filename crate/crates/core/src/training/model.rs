use rand::Rng;

use crate::cgraph::{CTensor, NodeId, ParamId, ParamStore, Tape, C64};
use crate::error::{Error, Result};
use crate::errors::{ErrorRealization, PhysicalSystem};
use crate::sepn::{SepnConfig, SepnSet};

/// How a numerical state is tied to its physical measurement.
#[derive(Clone, Copy, Debug)]
pub enum Fusion<'a> {
    /// Replace the amplitude by `√P` and keep the numerical phase.
    Measured(&'a [f64]),
    /// Add a fixed complex offset. With the offset `F − S` taken at the current
    /// parameters this reproduces the fused value and its gradient, but stays smooth
    /// under perturbation (used to verify gradients by finite differences).
    Offset(&'a [C64]),
}

/// Knobs of one numerical forward pass.
#[derive(Clone, Copy, Default)]
pub struct NumericalOptions<'a> {
    pub sepns: Option<&'a SepnSet>,
    /// Per state; `Some` ties that state to the physical system before it propagates further.
    pub fusion: &'a [Option<Fusion<'a>>],
    /// Keep SEPN corrections in the forward value but pass no gradient through them.
    pub detach_sepn: bool,
}

impl NumericalOptions<'_> {
    /// Applies the fusion configured for state `n`, if any.
    pub(crate) fn apply_fusion(&self, tape: &mut Tape, n: usize, s: NodeId) -> Result<NodeId> {
        match self.fusion.get(n).copied().flatten() {
            None => Ok(s),
            Some(Fusion::Measured(p)) => fuse_node(tape, s, p),
            Some(Fusion::Offset(d)) => {
                let shape = tape.shape(s).to_vec();
                let c = tape.constant(CTensor::new(shape, d.to_vec())?);
                tape.add(s, c)
            }
        }
    }
}

/// Nodes produced by a numerical forward pass, one entry per measurable state.
#[derive(Clone, Debug)]
pub struct NumericalStates {
    /// Complex state fields (fused where requested).
    pub s: Vec<NodeId>,
    /// The same states before fusion.
    pub unfused: Vec<NodeId>,
    /// Their intensities.
    pub o: Vec<NodeId>,
    /// Ten class scores read from the final intensity.
    pub readout: NodeId,
}

/// A trainable photonic architecture: ideal numerical model, SEPN hooks and physical emulation.
pub trait PhotonicModel: Sync {
    /// Measurable states `N` (internal states plus the output).
    fn num_states(&self) -> usize;

    /// The physical parameters Ω.
    fn physical_params(&self) -> Vec<ParamId>;

    /// Registers one SEPN group per state.
    fn build_sepns(&self, store: &mut ParamStore, config: SepnConfig, std: f64, rng: &mut dyn rand::RngCore) -> Result<SepnSet>;

    /// Numerical model on the tape, starting from the encoded input.
    fn forward(&self, tape: &mut Tape, store: &ParamStore, input: &CTensor, opts: &NumericalOptions) -> Result<NumericalStates>;

    /// Runs only group `n` with its input rebuilt from measurements (separable inference).
    ///
    /// `measured` holds `P_1..P_N`; `unitary` holds the state fields of a unitary pass.
    fn forward_group(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        n: usize,
        input: &CTensor,
        measured: &[Vec<f64>],
        unitary: &[Vec<C64>],
        sepns: &SepnSet,
    ) -> Result<NodeId>;

    /// Class scores from a measured output intensity.
    fn readout_values(&self, intensity: &[f64]) -> Result<Vec<f64>>;

    fn physical_system(&self, realization: &ErrorRealization) -> Result<Box<dyn PhysicalSystem + '_>>;
}

/// Fuses on the tape: forward value `√P·e^{j∠S}`, adjoint passed straight to `S`.
pub fn fuse_node(tape: &mut Tape, s: NodeId, p: &[f64]) -> Result<NodeId> {
    let value = fuse(p, tape.value(s).data())?;
    let shape = tape.shape(s).to_vec();
    tape.straight_through(s, CTensor::new(shape, value)?)
}

/// Amplitude from the measurement, phase from the numerical field. Zero fields take phase 0.
pub fn fuse(p: &[f64], s: &[C64]) -> Result<Vec<C64>> {
    if p.len() != s.len() {
        return Err(Error::shape("fuse", &[p.len()], &[s.len()]));
    }
    if let Some(i) = p.iter().position(|&v| v.is_nan() || v < 0.0) {
        return Err(Error::InvalidArgument(format!("fuse: intensity entry {i} is negative ({})", p[i])));
    }
    Ok(p.iter()
        .zip(s)
        .map(|(&pi, si)| {
            let a = pi.sqrt();
            let m = si.norm();
            if m > 0.0 {
                si * (a / m)
            } else {
                C64::new(a, 0.0)
            }
        })
        .collect())
}

pub(crate) fn uniform_vec<R: Rng + ?Sized>(rng: &mut R, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    if lo >= hi {
        return vec![lo; n];
    }
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}
