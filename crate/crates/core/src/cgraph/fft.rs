//! Cached 2-D FFTs over row-major complex grids.
//!
//! The forward transform is unnormalized; the inverse carries the `1/(h·w)` factor.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rustfft::{Fft, FftDirection, FftPlanner};

use super::tensor::C64;

type PlanKey = (usize, bool);

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    static PLANS: OnceLock<Mutex<HashMap<PlanKey, Arc<dyn Fft<f64>>>>> = OnceLock::new();
    let plans = PLANS.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = plans.lock().expect("fft plan cache poisoned");
    guard
        .entry((len, inverse))
        .or_insert_with(|| {
            let dir = if inverse {
                FftDirection::Inverse
            } else {
                FftDirection::Forward
            };
            FftPlanner::new().plan_fft(len, dir)
        })
        .clone()
}

fn transpose(src: &[C64], h: usize, w: usize, dst: &mut [C64]) {
    const BLOCK: usize = 16;
    for rb in (0..h).step_by(BLOCK) {
        for cb in (0..w).step_by(BLOCK) {
            for r in rb..(rb + BLOCK).min(h) {
                for c in cb..(cb + BLOCK).min(w) {
                    dst[c * h + r] = src[r * w + c];
                }
            }
        }
    }
}

fn transform(data: &mut [C64], h: usize, w: usize, inverse: bool) {
    debug_assert_eq!(data.len(), h * w);
    let row_plan = plan(w, inverse);
    let col_plan = plan(h, inverse);
    let scratch_len = row_plan
        .get_inplace_scratch_len()
        .max(col_plan.get_inplace_scratch_len());
    let mut scratch = vec![C64::new(0.0, 0.0); scratch_len];
    row_plan.process_with_scratch(data, &mut scratch);
    let mut t = vec![C64::new(0.0, 0.0); h * w];
    transpose(data, h, w, &mut t);
    col_plan.process_with_scratch(&mut t, &mut scratch);
    transpose(&t, w, h, data);
}

/// Unnormalized forward 2-D DFT, in place.
pub fn fft2_inplace(data: &mut [C64], h: usize, w: usize) {
    transform(data, h, w, false);
}

/// Inverse 2-D DFT including the `1/(h·w)` normalization, in place.
pub fn ifft2_inplace(data: &mut [C64], h: usize, w: usize) {
    transform(data, h, w, true);
    let scale = 1.0 / (h * w) as f64;
    data.iter_mut().for_each(|z| *z *= scale);
}

/// Swaps half-spaces so that the zero frequency lands at index `(h/2, w/2)`.
pub fn fftshift(data: &[C64], h: usize, w: usize) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); h * w];
    for r in 0..h {
        for c in 0..w {
            out[((r + h / 2) % h) * w + (c + w / 2) % w] = data[r * w + c];
        }
    }
    out
}
