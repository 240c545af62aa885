use rayon::prelude::*;

use super::model::PhotonicModel;
use crate::cgraph::ParamStore;
use crate::data::EncodedSample;
use crate::error::{Error, Result};
use crate::errors::PhysicalSystem;

/// Top-1 accuracy and a 10×10 confusion matrix (rows = true class).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalResult {
    pub correct: usize,
    pub total: usize,
    pub confusion: [[usize; 10]; 10],
}

impl EvalResult {
    pub fn from_predictions(pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut confusion = [[0usize; 10]; 10];
        let mut total = 0;
        for (truth, pred) in pairs {
            if truth >= 10 || pred >= 10 {
                return Err(Error::InvalidArgument(format!("class index out of range: ({truth}, {pred})")));
            }
            confusion[truth][pred] += 1;
            total += 1;
        }
        if total == 0 {
            return Err(Error::InvalidArgument("cannot evaluate an empty dataset".into()));
        }
        let correct = (0..10).map(|i| confusion[i][i]).sum();
        Ok(Self { correct, total, confusion })
    }

    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Classifies every sample on `system` by the brightest detector region or port.
///
/// Passing the ideal (zero-error) system evaluates the error-free model.
pub fn evaluate(model: &dyn PhotonicModel, system: &dyn PhysicalSystem, store: &ParamStore, data: &[EncodedSample]) -> Result<EvalResult> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty dataset".into()));
    }
    let preds = data
        .par_iter()
        .map(|s| {
            let states = system.evaluate(store, &s.input)?;
            let last = states.last().ok_or_else(|| Error::InvalidArgument("physical system returned no states".into()))?;
            let scores = model.readout_values(last)?;
            Ok((s.label, argmax(&scores)))
        })
        .collect::<Result<Vec<_>>>()?;
    EvalResult::from_predictions(preds)
}
