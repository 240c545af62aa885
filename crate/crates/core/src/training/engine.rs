//! The training loop and its step variants.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{Fusion, NumericalOptions, PhotonicModel};
use super::{similarity_loss_node, task_loss_node, Adam, Schedule, SimilaritySpec};
use crate::cgraph::{CTensor, Gradients, NodeId, ParamId, ParamStore, Tape, C64};
use crate::data::EncodedSample;
use crate::error::{Error, Result};
use crate::errors::PhysicalSystem;
use crate::sepn::SepnSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    InSilico,
    Pat,
    Dat,
}

impl Engine {
    pub fn name(self) -> &'static str {
        match self {
            Engine::InSilico => "insilico",
            Engine::Pat => "pat",
            Engine::Dat => "dat",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SepnMode {
    #[default]
    Unitary,
    Separable,
}

/// How one model is trained.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainPlan {
    pub engine: Engine,
    /// Measure and fuse the internal states, not only the output.
    pub internal_states: bool,
    pub sepn_mode: SepnMode,
    pub epochs: usize,
    pub batch_size: usize,
    /// Samples per Λ update; a batch gets `ceil(batch_size / sepn_batch_size)` Λ updates.
    pub sepn_batch_size: usize,
    /// Epochs during which the task loss sees SEPN corrections only as constants.
    pub warmup_epochs: usize,
    pub omega_lr: Schedule,
    pub lambda_lr: Schedule,
    /// Multiplies the class scores before the softmax.
    pub logit_scale: f64,
}

impl TrainPlan {
    pub fn validate(&self) -> Result<()> {
        if self.sepn_mode == SepnMode::Separable && !self.internal_states {
            return Err(Error::config("train.sepn_mode", "separable mode requires internal_states = true"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be at least 1"));
        }
        if self.sepn_batch_size == 0 {
            return Err(Error::config("train.sepn_batch_size", "must be at least 1"));
        }
        if !(self.logit_scale > 0.0 && self.logit_scale.is_finite()) {
            return Err(Error::config("train.logit_scale", "must be positive"));
        }
        self.omega_lr.validate("train.omega_lr")?;
        self.lambda_lr.validate("train.lambda_lr")
    }
}

/// Losses of one optimization step (batch means).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepRecord {
    pub task_loss: f64,
    pub sim_loss: Option<f64>,
    /// Per-group similarity losses in separable mode.
    pub group_sim_losses: Vec<f64>,
}

/// Per-epoch training summary.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub task_loss: f64,
    pub sim_loss: Option<f64>,
    pub steps: usize,
    pub aborted_steps: usize,
}

/// Owns the parameters and optimizer state of one training run.
pub struct Trainer<'m> {
    model: &'m dyn PhotonicModel,
    physical: Option<Box<dyn PhysicalSystem + 'm>>,
    store: ParamStore,
    sepns: Option<SepnSet>,
    plan: TrainPlan,
    similarity: SimilaritySpec,
    adam_omega: Adam,
    adam_lambda: Adam,
    omega: Vec<ParamId>,
    lambda: Vec<ParamId>,
    epoch: usize,
}

fn check_finite(what: &str, loss: f64, grads: &Gradients) -> Result<()> {
    if !loss.is_finite() || !grads.is_finite() {
        return Err(Error::NonFinite(format!("{what}: loss {loss}, gradient norm {}", grads.norm())));
    }
    Ok(())
}

/// Mean loss and mean gradient, reduced in sample order.
fn reduce(parts: Vec<(f64, Gradients)>) -> (f64, Gradients) {
    let n = parts.len() as f64;
    let mut loss = 0.0;
    let mut grads = Gradients::default();
    for (l, g) in &parts {
        loss += l;
        grads.merge(g);
    }
    grads.scale(1.0 / n);
    (loss / n, grads)
}

impl<'m> Trainer<'m> {
    pub fn new(
        model: &'m dyn PhotonicModel,
        store: ParamStore,
        sepns: Option<SepnSet>,
        physical: Option<Box<dyn PhysicalSystem + 'm>>,
        plan: TrainPlan,
    ) -> Result<Self> {
        plan.validate()?;
        match plan.engine {
            Engine::InSilico => {}
            Engine::Pat => {
                if physical.is_none() {
                    return Err(Error::InvalidArgument("PAT needs a physical system".into()));
                }
                if sepns.is_some() {
                    return Err(Error::InvalidArgument("PAT runs without SEPNs".into()));
                }
            }
            Engine::Dat => {
                if physical.is_none() || sepns.is_none() {
                    return Err(Error::InvalidArgument("DAT needs a physical system and SEPNs".into()));
                }
            }
        }
        let lambda = sepns.as_ref().map(SepnSet::all_params).unwrap_or_default();
        if let Some(s) = &sepns {
            if s.num_groups() != model.num_states() {
                return Err(Error::Topology(format!("{} SEPN groups for {} states", s.num_groups(), model.num_states())));
            }
        }
        let similarity = SimilaritySpec::for_states(model.num_states(), plan.internal_states);
        Ok(Self {
            model,
            physical,
            omega: model.physical_params(),
            store,
            sepns,
            plan,
            similarity,
            adam_omega: Adam::new(),
            adam_lambda: Adam::new(),
            lambda,
            epoch: 0,
        })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn into_store(self) -> ParamStore {
        self.store
    }

    pub fn sepns(&self) -> Option<&SepnSet> {
        self.sepns.as_ref()
    }

    pub fn plan(&self) -> &TrainPlan {
        &self.plan
    }

    pub fn omega_ids(&self) -> &[ParamId] {
        &self.omega
    }

    pub fn lambda_ids(&self) -> &[ParamId] {
        &self.lambda
    }

    pub fn adam_omega(&self) -> &Adam {
        &self.adam_omega
    }

    pub fn adam_lambda(&self) -> &Adam {
        &self.adam_lambda
    }

    pub fn adam_mut(&mut self) -> (&mut Adam, &mut Adam) {
        (&mut self.adam_omega, &mut self.adam_lambda)
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn set_epoch(&mut self, epoch: usize) {
        self.epoch = epoch;
    }

    pub fn similarity_spec(&self) -> &SimilaritySpec {
        &self.similarity
    }

    pub fn set_similarity_spec(&mut self, spec: SimilaritySpec) -> Result<()> {
        if spec.num_states() != self.model.num_states() {
            return Err(Error::shape("similarity spec", &[spec.num_states()], &[self.model.num_states()]));
        }
        self.similarity = spec;
        Ok(())
    }

    fn in_warmup(&self) -> bool {
        self.epoch < self.plan.warmup_epochs
    }

    /// Step 1: physical forward, `P_1..P_N` per sample. Non-finite readings abort the step.
    pub fn measure(&self, batch: &[&EncodedSample]) -> Result<Vec<Vec<Vec<f64>>>> {
        let phys = self.physical.as_deref().ok_or_else(|| Error::InvalidArgument("no physical system attached".into()))?;
        let store = &self.store;
        let p: Vec<Vec<Vec<f64>>> = batch.par_iter().map(|s| phys.evaluate(store, &s.input)).collect::<Result<_>>()?;
        if p.iter().flatten().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("physical measurement".into()));
        }
        Ok(p)
    }

    fn fusion<'a>(&self, p: &'a [Vec<f64>]) -> Vec<Option<Fusion<'a>>> {
        let last = p.len().saturating_sub(1);
        p.iter()
            .enumerate()
            .map(|(n, v)| (self.plan.internal_states || n == last).then_some(Fusion::Measured(v.as_slice())))
            .collect()
    }

    /// Task loss and its gradient w.r.t. Ω (batch mean). Ω is the only trainable set.
    ///
    /// With `measured`, states are fused before they propagate; `with_sepns` attaches the SEPNs.
    pub fn task_gradients(&mut self, batch: &[&EncodedSample], measured: Option<&[Vec<Vec<f64>>]>, with_sepns: bool) -> Result<(f64, Gradients)> {
        self.store.train_only(&self.omega);
        let detach = self.in_warmup();
        let this = &*self;
        let parts = batch
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                let fusion = measured.map(|m| this.fusion(&m[i])).unwrap_or_default();
                let opts = NumericalOptions {
                    sepns: if with_sepns { this.sepns.as_ref() } else { None },
                    fusion: &fusion,
                    detach_sepn: detach,
                };
                let mut tape = Tape::new();
                let states = this.model.forward(&mut tape, &this.store, &s.input, &opts)?;
                let loss = task_loss_node(&mut tape, states.readout, s.label, this.plan.logit_scale)?;
                let value = tape.value(loss).data()[0].re;
                Ok((value, tape.backward(loss)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(reduce(parts))
    }

    /// Joint similarity loss (unitary mode) and its gradient w.r.t. Λ, batch mean.
    pub fn similarity_gradients(&mut self, batch: &[&EncodedSample], measured: &[Vec<Vec<f64>>]) -> Result<(f64, Gradients)> {
        let sepns = self.sepns.as_ref().ok_or_else(|| Error::InvalidArgument("no SEPNs attached".into()))?;
        self.store.train_only(&self.lambda);
        let this = &*self;
        let parts = batch
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                let opts = NumericalOptions {
                    sepns: Some(sepns),
                    ..Default::default()
                };
                let mut tape = Tape::new();
                let states = this.model.forward(&mut tape, &this.store, &s.input, &opts)?;
                let loss = similarity_loss_node(&mut tape, &measured[i], &states.o, &this.similarity)?;
                let value = tape.value(loss).data()[0].re;
                Ok((value, tape.backward(loss)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(reduce(parts))
    }

    /// State fields of a unitary (all-SEPN, unfused) numerical pass.
    pub fn unitary_states(&self, sample: &EncodedSample) -> Result<Vec<Vec<C64>>> {
        let opts = NumericalOptions {
            sepns: self.sepns.as_ref(),
            ..Default::default()
        };
        let mut tape = Tape::new();
        let states = self.model.forward(&mut tape, &self.store, &sample.input, &opts)?;
        Ok(states.s.iter().map(|&n| tape.value(n).data().to_vec()).collect())
    }

    fn group_nodes(&self, tape: &mut Tape, sample: &EncodedSample, measured: &[Vec<f64>], unitary: &[Vec<C64>]) -> Result<Vec<NodeId>> {
        let sepns = self.sepns.as_ref().ok_or_else(|| Error::InvalidArgument("no SEPNs attached".into()))?;
        let n = self.model.num_states();
        if measured.len() != n {
            return Err(Error::InvalidArgument(format!("separable inference needs {n} measured states, got {}", measured.len())));
        }
        (0..n)
            .map(|g| self.model.forward_group(tape, &self.store, g, &sample.input, measured, unitary, sepns))
            .collect()
    }

    /// `S̄_1..S̄_N`: each group re-run from the measured output of its predecessors.
    pub fn extract_separable_states(&self, sample: &EncodedSample, measured: &[Vec<f64>]) -> Result<Vec<Vec<C64>>> {
        let unitary = self.unitary_states(sample)?;
        let mut tape = Tape::new();
        let nodes = self.group_nodes(&mut tape, sample, measured, &unitary)?;
        Ok(nodes.iter().map(|&n| tape.value(n).data().to_vec()).collect())
    }

    /// Per-group similarity losses `‖P_n − |S̄_n|²‖²` and the summed gradient w.r.t. Λ, batch mean.
    pub fn separable_gradients(&mut self, batch: &[&EncodedSample], measured: &[Vec<Vec<f64>>]) -> Result<(Vec<f64>, Gradients)> {
        self.store.train_only(&self.lambda);
        let this = &*self;
        let parts = batch
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                let unitary = this.unitary_states(s)?;
                let mut tape = Tape::new();
                let nodes = this.group_nodes(&mut tape, s, &measured[i], &unitary)?;
                let mut losses = Vec::with_capacity(nodes.len());
                let mut grads = Gradients::default();
                for (g, &node) in nodes.iter().enumerate() {
                    let alpha = this.similarity.weight(g).unwrap_or(1.0);
                    let o = tape.abs_sq(node);
                    let shape = tape.shape(o).to_vec();
                    let target = tape.constant(CTensor::from_real(&shape, &measured[i][g])?);
                    let d = tape.sub(o, target)?;
                    let sq = tape.abs_sq(d);
                    let sse = tape.sum(sq);
                    let loss = tape.scale(sse, C64::new(alpha, 0.0));
                    losses.push(tape.value(loss).data()[0].re);
                    grads.merge(&tape.backward(loss)?);
                }
                Ok((losses, grads))
            })
            .collect::<Result<Vec<_>>>()?;
        let b = parts.len() as f64;
        let mut losses = vec![0.0; parts.first().map_or(0, |p| p.0.len())];
        let mut grads = Gradients::default();
        for (l, g) in &parts {
            losses.iter_mut().zip(l).for_each(|(a, v)| *a += v);
            grads.merge(g);
        }
        grads.scale(1.0 / b);
        losses.iter_mut().for_each(|l| *l /= b);
        Ok((losses, grads))
    }

    /// Plain backpropagation through the ideal model.
    pub fn insilico_step(&mut self, batch: &[&EncodedSample]) -> Result<StepRecord> {
        let (loss, grads) = self.task_gradients(batch, None, false)?;
        check_finite("in-silico task loss", loss, &grads)?;
        self.adam_omega.update(&mut self.store, &grads, self.plan.omega_lr.lr(self.epoch));
        Ok(StepRecord {
            task_loss: loss,
            ..Default::default()
        })
    }

    /// Physical forward, ideal-model backward through fused states.
    pub fn pat_step(&mut self, batch: &[&EncodedSample]) -> Result<StepRecord> {
        let p = self.measure(batch)?;
        let (loss, grads) = self.task_gradients(batch, Some(&p), false)?;
        check_finite("PAT task loss", loss, &grads)?;
        self.adam_omega.update(&mut self.store, &grads, self.plan.omega_lr.lr(self.epoch));
        Ok(StepRecord {
            task_loss: loss,
            ..Default::default()
        })
    }

    /// Step 3 alone: Adam updates of Λ on already measured states, one per
    /// `sepn_batch_size` samples. Losses are sample-weighted means over the batch.
    pub fn lambda_step(&mut self, batch: &[&EncodedSample], measured: &[Vec<Vec<f64>>]) -> Result<StepRecord> {
        if measured.len() != batch.len() {
            return Err(Error::InvalidArgument(format!("{} measurements for {} samples", measured.len(), batch.len())));
        }
        let k = self.plan.sepn_batch_size;
        let mut sim = 0.0;
        let mut groups: Vec<f64> = Vec::new();
        for (b, p) in batch.chunks(k).zip(measured.chunks(k)) {
            let (l, gl, grads) = match self.plan.sepn_mode {
                SepnMode::Unitary => {
                    let (l, g) = self.similarity_gradients(b, p)?;
                    (l, Vec::new(), g)
                }
                SepnMode::Separable => {
                    let (ls, g) = self.separable_gradients(b, p)?;
                    (ls.iter().sum(), ls, g)
                }
            };
            check_finite("similarity loss", l, &grads)?;
            self.adam_lambda.update(&mut self.store, &grads, self.plan.lambda_lr.lr(self.epoch));
            let w = b.len() as f64 / batch.len() as f64;
            sim += w * l;
            groups.resize(gl.len(), 0.0);
            groups.iter_mut().zip(&gl).for_each(|(g, v)| *g += w * v);
        }
        Ok(StepRecord {
            task_loss: f64::NAN,
            sim_loss: Some(sim),
            group_sim_losses: groups,
        })
    }

    /// The four DAT steps on one batch. On a non-finite loss nothing is mutated.
    pub fn dat_step(&mut self, batch: &[&EncodedSample]) -> Result<StepRecord> {
        let p = self.measure(batch)?;
        let saved_lambda: Vec<Vec<f64>> = self.lambda.iter().map(|&id| self.store.value(id).to_vec()).collect();
        let saved_adam = self.adam_lambda.clone();
        let result = self.lambda_step(batch, &p).and_then(|record| {
            let (loss, grads) = self.task_gradients(batch, Some(&p), true)?;
            check_finite("DAT task loss", loss, &grads)?;
            Ok((record, loss, grads))
        });
        match result {
            Ok((mut record, loss, grads)) => {
                self.adam_omega.update(&mut self.store, &grads, self.plan.omega_lr.lr(self.epoch));
                record.task_loss = loss;
                Ok(record)
            }
            Err(e) => {
                for (&id, v) in self.lambda.iter().zip(saved_lambda) {
                    self.store.value_mut(id).copy_from_slice(&v);
                }
                self.adam_lambda = saved_adam;
                Err(e)
            }
        }
    }

    /// DAT with per-group similarity losses (requires `sepn_mode = separable`).
    pub fn dat_step_separable(&mut self, batch: &[&EncodedSample]) -> Result<StepRecord> {
        if self.plan.sepn_mode != SepnMode::Separable {
            return Err(Error::InvalidArgument("plan is not in separable mode".into()));
        }
        self.dat_step(batch)
    }

    /// One optimization step of the configured engine.
    pub fn step(&mut self, batch: &[&EncodedSample]) -> Result<StepRecord> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        match self.plan.engine {
            Engine::InSilico => self.insilico_step(batch),
            Engine::Pat => self.pat_step(batch),
            Engine::Dat => self.dat_step(batch),
        }
    }

    /// One pass over `data` in an order drawn from `shuffle_seed` and the epoch index.
    /// Steps with non-finite losses are skipped and counted.
    pub fn train_epoch(&mut self, data: &[EncodedSample], shuffle_seed: u64) -> Result<EpochRecord> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("empty training set".into()));
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
        rng.set_stream(self.epoch as u64);
        order.shuffle(&mut rng);
        let mut rec = EpochRecord {
            epoch: self.epoch,
            ..Default::default()
        };
        let mut sim_sum = 0.0;
        let mut sim_n = 0usize;
        for chunk in order.chunks(self.plan.batch_size) {
            let batch: Vec<&EncodedSample> = chunk.iter().map(|&i| &data[i]).collect();
            match self.step(&batch) {
                Ok(r) => {
                    rec.steps += 1;
                    rec.task_loss += r.task_loss;
                    if let Some(s) = r.sim_loss {
                        sim_sum += s;
                        sim_n += 1;
                    }
                }
                Err(Error::NonFinite(_)) => rec.aborted_steps += 1,
                Err(e) => return Err(e),
            }
        }
        if rec.steps > 0 {
            rec.task_loss /= rec.steps as f64;
        }
        rec.sim_loss = (sim_n > 0).then(|| sim_sum / sim_n as f64);
        self.epoch += 1;
        Ok(rec)
    }
}
