//! Losses, fusion, the Adam optimizer and the training engines (in-silico, PAT, DAT).

mod engine;
mod eval;
pub mod model;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cgraph::{CTensor, Gradients, NodeId, ParamId, ParamStore, Tape, C64};
use crate::error::{Error, Result};

pub use engine::{Engine, EpochRecord, SepnMode, StepRecord, TrainPlan, Trainer};
pub use eval::{evaluate, EvalResult};
pub use model::{fuse, fuse_node, Fusion, NumericalOptions, NumericalStates, PhotonicModel};

/// Which states enter the similarity loss, and with what weight.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilaritySpec {
    weights: Vec<Option<f64>>,
}

impl SimilaritySpec {
    /// Weight 1 on every listed state; other states are excluded.
    pub fn uniform(num_states: usize, measured: &[usize]) -> Result<Self> {
        Self::weighted(num_states, &measured.iter().map(|&n| (n, 1.0)).collect::<Vec<_>>())
    }

    /// All states (`internal == true`) or the output state only.
    pub fn for_states(num_states: usize, internal: bool) -> Self {
        let measured: Vec<usize> = if internal { (0..num_states).collect() } else { vec![num_states - 1] };
        Self::uniform(num_states, &measured).expect("indices in range")
    }

    pub fn weighted(num_states: usize, entries: &[(usize, f64)]) -> Result<Self> {
        let mut weights = vec![None; num_states];
        for &(n, a) in entries {
            if n >= num_states {
                return Err(Error::InvalidArgument(format!("state {n} out of range for {num_states} states")));
            }
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::InvalidArgument(format!("similarity weight of state {n} must be positive, got {a}")));
            }
            weights[n] = Some(a);
        }
        Ok(Self { weights })
    }

    pub fn num_states(&self) -> usize {
        self.weights.len()
    }

    pub fn weight(&self, n: usize) -> Option<f64> {
        self.weights.get(n).copied().flatten()
    }

    pub fn measured(&self) -> Vec<usize> {
        (0..self.weights.len()).filter(|&n| self.weights[n].is_some()).collect()
    }
}

/// `Σ α_n ‖P_n − O_n‖²` on plain values. `o` holds the numerical intensities `|S_n|²`.
pub fn similarity_loss(p: &[Vec<f64>], o: &[Vec<f64>], spec: &SimilaritySpec) -> Result<f64> {
    check_aligned(p.len(), o.len(), spec)?;
    let mut total = 0.0;
    for n in spec.measured() {
        if p[n].len() != o[n].len() {
            return Err(Error::shape("similarity_loss", &[p[n].len()], &[o[n].len()]));
        }
        let sse: f64 = p[n].iter().zip(&o[n]).map(|(a, b)| (a - b) * (a - b)).sum();
        total += spec.weight(n).unwrap_or(0.0) * sse;
    }
    Ok(total)
}

/// Tape version of [`similarity_loss`]; `o` are intensity nodes.
pub fn similarity_loss_node(tape: &mut Tape, p: &[Vec<f64>], o: &[NodeId], spec: &SimilaritySpec) -> Result<NodeId> {
    check_aligned(p.len(), o.len(), spec)?;
    let mut total: Option<NodeId> = None;
    for n in spec.measured() {
        let shape = tape.shape(o[n]).to_vec();
        if shape.iter().product::<usize>() != p[n].len() {
            return Err(Error::shape("similarity_loss", &shape, &[p[n].len()]));
        }
        let target = tape.constant(CTensor::from_real(&shape, &p[n])?);
        let d = tape.sub(o[n], target)?;
        let sq = tape.abs_sq(d);
        let sse = tape.sum(sq);
        let term = tape.scale(sse, C64::new(spec.weight(n).unwrap_or(0.0), 0.0));
        total = Some(match total {
            None => term,
            Some(t) => tape.add(t, term)?,
        });
    }
    total.ok_or_else(|| Error::InvalidArgument("similarity loss over an empty state set".into()))
}

fn check_aligned(p: usize, o: usize, spec: &SimilaritySpec) -> Result<()> {
    if p != spec.num_states() || o != spec.num_states() {
        return Err(Error::shape("similarity_loss (state count)", &[p, o], &[spec.num_states()]));
    }
    Ok(())
}

/// Softmax cross-entropy over the class scores, scaled by `logit_scale` first.
pub fn task_loss_node(tape: &mut Tape, readout: NodeId, label: usize, logit_scale: f64) -> Result<NodeId> {
    if tape.shape(readout).len() != 1 {
        return Err(Error::shape("task_loss", tape.shape(readout), &[10]));
    }
    let z = if logit_scale == 1.0 { readout } else { tape.scale(readout, C64::new(logit_scale, 0.0)) };
    tape.softmax_cross_entropy(z, label)
}

/// Step decay: `initial · decay^⌊epoch / period⌋`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub initial: f64,
    #[serde(default = "one")]
    pub decay: f64,
    #[serde(default = "one_usize")]
    pub period: usize,
}

fn one() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

impl Schedule {
    pub fn constant(lr: f64) -> Self {
        Self { initial: lr, decay: 1.0, period: 1 }
    }

    pub fn step_decay(lr: f64, decay: f64, period: usize) -> Self {
        Self { initial: lr, decay, period }
    }

    pub fn validate(&self, field: &str) -> Result<()> {
        if !(self.initial > 0.0 && self.initial.is_finite()) {
            return Err(Error::config(format!("{field}.initial"), "learning rate must be positive"));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::config(format!("{field}.decay"), "decay factor must lie in (0, 1]"));
        }
        if self.period == 0 {
            return Err(Error::config(format!("{field}.period"), "decay period must be at least 1 epoch"));
        }
        Ok(())
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        self.initial * self.decay.powi((epoch / self.period) as i32)
    }
}

/// Bias-corrected Adam with per-parameter moment buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: BTreeMap<ParamId, (Vec<f64>, Vec<f64>)>,
}

impl Default for Adam {
    fn default() -> Self {
        Self::new()
    }
}

impl Adam {
    pub fn new() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Moment buffers of one parameter, once it has been updated.
    pub fn moments(&self, id: ParamId) -> Option<(&[f64], &[f64])> {
        self.moments.get(&id).map(|(m, v)| (m.as_slice(), v.as_slice()))
    }

    /// Restores moments and step count (checkpoint loading).
    pub fn restore(&mut self, step: u64, moments: BTreeMap<ParamId, (Vec<f64>, Vec<f64>)>) {
        self.step = step;
        self.moments = moments;
    }

    pub fn all_moments(&self) -> &BTreeMap<ParamId, (Vec<f64>, Vec<f64>)> {
        &self.moments
    }

    /// One update of every parameter present in `grads`.
    pub fn update(&mut self, store: &mut ParamStore, grads: &Gradients, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for id in grads.ids() {
            let g = grads.get(id).expect("listed id");
            let (m, v) = self.moments.entry(id).or_insert_with(|| (vec![0.0; g.len()], vec![0.0; g.len()]));
            let value = store.value_mut(id);
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                value[i] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}
