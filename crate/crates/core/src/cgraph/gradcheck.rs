//! Central finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{NodeId, Tape};
use crate::error::{Error, Result};

/// Controls which entries are probed and how small gradients are judged.
#[derive(Clone, Debug)]
pub struct FdOptions {
    pub step: f64,
    /// Probe at most this many entries per parameter tensor (all when `None`).
    pub max_entries: Option<usize>,
    pub seed: u64,
    /// Entries whose finite difference is below `floor · max|fd|` are compared in absolute
    /// terms only; their relative error is dominated by rounding in the difference quotient.
    pub floor: f64,
}

impl Default for FdOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            max_entries: None,
            seed: 0,
            floor: 0.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FdEntry {
    pub param: ParamId,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl FdEntry {
    pub fn rel_err(&self) -> f64 {
        (self.analytic - self.numeric).abs() / (self.numeric.abs() + 1e-12)
    }
}

#[derive(Clone, Debug)]
pub struct FdReport {
    pub entries: Vec<FdEntry>,
    /// Max relative error over entries above the floor.
    pub max_rel_err: f64,
    /// Max absolute error over entries below the floor.
    pub max_abs_err_small: f64,
    pub largest_fd: f64,
}

impl FdReport {
    pub fn checked(&self) -> usize {
        self.entries.len()
    }

    /// Passes when every significant entry is within `tol` relative error and every
    /// negligible entry is within `tol · largest_fd` absolute error.
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol && self.max_abs_err_small <= tol * self.largest_fd
    }
}

fn eval<F>(store: &ParamStore, loss: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let id = loss(&mut tape, store)?;
    let v = tape.value(id).data()[0].re;
    if !v.is_finite() {
        return Err(Error::NonFinite("loss during finite-difference probe".into()));
    }
    Ok(v)
}

/// Compares tape gradients of `loss` with central differences on the parameters `ids`.
///
/// `store` is perturbed in place and restored bit-exactly before returning.
pub fn finite_difference_check<F>(store: &mut ParamStore, ids: &[ParamId], loss: F, opts: &FdOptions) -> Result<FdReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<NodeId>,
{
    if opts.step <= 0.0 || opts.step.is_nan() {
        return Err(Error::InvalidArgument(format!("finite-difference step must be > 0, got {}", opts.step)));
    }
    let mut tape = Tape::new();
    let out = loss(&mut tape, store)?;
    let grads = tape.backward(out)?;
    drop(tape);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut entries = Vec::new();
    for &id in ids {
        let n = store.value(id).len();
        let mut picks: Vec<usize> = match opts.max_entries {
            Some(m) if m < n => sample(&mut rng, n, m).into_vec(),
            _ => (0..n).collect(),
        };
        picks.sort_unstable();
        for index in picks {
            let analytic = grads.get(id).map_or(0.0, |g| g[index]);
            let orig = store.value(id)[index];
            store.value_mut(id)[index] = orig + opts.step;
            let plus = eval(store, &loss);
            store.value_mut(id)[index] = orig - opts.step;
            let minus = eval(store, &loss);
            store.value_mut(id)[index] = orig;
            let numeric = (plus? - minus?) / (2.0 * opts.step);
            entries.push(FdEntry {
                param: id,
                index,
                analytic,
                numeric,
            });
        }
    }

    let largest_fd = entries.iter().map(|e| e.numeric.abs()).fold(0.0, f64::max);
    let cut = opts.floor * largest_fd;
    let mut max_rel_err = 0.0f64;
    let mut max_abs_err_small = 0.0f64;
    for e in &entries {
        if e.numeric.abs() >= cut {
            max_rel_err = max_rel_err.max(e.rel_err());
        } else {
            max_abs_err_small = max_abs_err_small.max((e.analytic - e.numeric).abs());
        }
    }
    Ok(FdReport {
        entries,
        max_rel_err,
        max_abs_err_small,
        largest_fd,
    })
}
