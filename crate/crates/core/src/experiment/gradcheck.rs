//! Finite-difference suites for the similarity loss (w.r.t. Λ) and the fused task loss
//! (w.r.t. Ω) on toy instances of both architectures under every error type.
//!
//! The fused loss is not differentiable in the ordinary sense (its forward value comes from
//! measurements), so differences are taken on the surrogate whose fused states are
//! `S + (F − S)|_{Ω₀}`. Its value and gradient coincide with the fused loss at `Ω₀`; that
//! coincidence is itself checked before probing.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cgraph::{finite_difference_check, CTensor, FdOptions, FdReport, ParamStore, Tape, C64};
use crate::error::{Error, Result};
use crate::errors::{DpnnErrorConfig, ErrorRealization, MpnnErrorConfig};
use crate::mesh::{Mpnn, MpnnConfig};
use crate::optics::{Dpnn, DpnnConfig};
use crate::sepn::{SepnConfig, SepnSet};
use crate::training::{similarity_loss_node, task_loss_node, Fusion, NumericalOptions, PhotonicModel, SimilaritySpec};

/// Relative tolerance of every probe.
pub const GRADCHECK_TOL: f64 = 1e-4;

const TOY_SEPN: SepnConfig = SepnConfig { f1: 2, f2: 2, f3: 2, k: 3 };

/// Outcome of one finite-difference comparison.
#[derive(Clone, Debug)]
pub struct GradcheckLine {
    pub case: String,
    /// `L_s` or `L_t`.
    pub loss: &'static str,
    pub report: FdReport,
}

impl GradcheckLine {
    pub fn passed(&self) -> bool {
        self.report.passes(GRADCHECK_TOL)
    }
}

pub fn fd_options() -> FdOptions {
    FdOptions {
        step: 1e-5,
        max_entries: Some(12),
        seed: 7,
        floor: 1e-3,
    }
}

fn similarity_check(model: &dyn PhotonicModel, store: &mut ParamStore, sepns: &SepnSet, input: &CTensor, measured: &[Vec<f64>], spec: &SimilaritySpec) -> Result<FdReport> {
    let ids = sepns.all_params();
    store.train_only(&ids);
    finite_difference_check(
        store,
        &ids,
        |tape, store| {
            let opts = NumericalOptions {
                sepns: Some(sepns),
                ..Default::default()
            };
            let st = model.forward(tape, store, input, &opts)?;
            similarity_loss_node(tape, measured, &st.o, spec)
        },
        &fd_options(),
    )
}

#[allow(clippy::too_many_arguments)]
fn fused_task_check(
    model: &dyn PhotonicModel,
    store: &mut ParamStore,
    sepns: &SepnSet,
    input: &CTensor,
    label: usize,
    measured: &[Vec<f64>],
    internal: bool,
) -> Result<FdReport> {
    let ids = model.physical_params();
    store.train_only(&ids);
    let last = measured.len() - 1;
    let fusion: Vec<Option<Fusion>> = measured
        .iter()
        .enumerate()
        .map(|(n, p)| (internal || n == last).then_some(Fusion::Measured(p.as_slice())))
        .collect();
    let mut tape = Tape::new();
    let opts = NumericalOptions {
        sepns: Some(sepns),
        fusion: &fusion,
        detach_sepn: false,
    };
    let st = model.forward(&mut tape, store, input, &opts)?;
    let offsets: Vec<Option<Vec<C64>>> = (0..measured.len())
        .map(|n| {
            fusion[n].map(|_| {
                let f = tape.value(st.s[n]).data();
                let s = tape.value(st.unfused[n]).data();
                f.iter().zip(s).map(|(a, b)| a - b).collect()
            })
        })
        .collect();
    let loss = task_loss_node(&mut tape, st.readout, label, 1.0)?;
    let fused_value = tape.value(loss).data()[0].re;
    let fused_grads = tape.backward(loss)?;

    let surrogate = |tape: &mut Tape, store: &ParamStore| {
        let fusion: Vec<Option<Fusion>> = offsets.iter().map(|d| d.as_deref().map(Fusion::Offset)).collect();
        let opts = NumericalOptions {
            sepns: Some(sepns),
            fusion: &fusion,
            detach_sepn: false,
        };
        let st = model.forward(tape, store, input, &opts)?;
        task_loss_node(tape, st.readout, label, 1.0)
    };
    let mut tape = Tape::new();
    let l = surrogate(&mut tape, store)?;
    let sur_value = tape.value(l).data()[0].re;
    if (sur_value - fused_value).abs() > 1e-12 * fused_value.abs().max(1.0) {
        return Err(Error::NonFinite(format!("surrogate loss {sur_value} differs from fused loss {fused_value}")));
    }
    let sur_grads = tape.backward(l)?;
    for &id in &ids {
        let (a, b) = (fused_grads.get(id), sur_grads.get(id));
        if let (Some(a), Some(b)) = (a, b) {
            let scale = a.iter().fold(1e-300f64, |m, v| m.max(v.abs()));
            if a.iter().zip(b).any(|(x, y)| (x - y).abs() > 1e-10 * scale) {
                return Err(Error::NonFinite("fused and surrogate gradients differ".into()));
            }
        }
    }
    finite_difference_check(store, &ids, surrogate, &fd_options())
}

fn toy_input(len: usize, seed: u64, amplitude_only: bool, grid: usize) -> Result<CTensor> {
    use rand::Rng;
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    if amplitude_only {
        let a = grid / 2;
        let off = (grid - a) / 2;
        let mut data = vec![C64::new(0.0, 0.0); grid * grid];
        for i in 0..a {
            for j in 0..a {
                data[(i + off) * grid + j + off] = C64::new(r.random_range(0.0..1.0), 0.0);
            }
        }
        CTensor::new(vec![grid, grid], data)
    } else {
        let data = (0..len).map(|_| C64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0))).collect();
        CTensor::new(vec![len], data)
    }
}

/// 16×16 single-block diffractive network under each error type, then an 8-port,
/// 2-mesh network under each error type with and without internal states.
pub fn run_gradcheck() -> Result<Vec<GradcheckLine>> {
    let mut out = Vec::new();
    let z = DpnnErrorConfig::default();
    let dpnn_kinds = [
        ("z-shift", DpnnErrorConfig { z_shift_cm: 1.0, ..z }),
        ("x-shift", DpnnErrorConfig { x_shift_px: 1, ..z }),
        ("rotation", DpnnErrorConfig { rotation_deg: 3.0, ..z }),
        ("phase", DpnnErrorConfig { phase_sigma: 0.5, ..z }),
    ];
    for (name, cfg) in dpnn_kinds {
        let mut store = ParamStore::new();
        let model = Dpnn::new(&mut store, DpnnConfig::single(16), &mut ChaCha8Rng::seed_from_u64(3))?;
        let sepns = model.build_sepns(&mut store, TOY_SEPN, 0.3, &mut ChaCha8Rng::seed_from_u64(4))?;
        let input = toy_input(0, 5, true, 16)?;
        let real = ErrorRealization::realize_dpnn(&cfg, 1, 16, 11)?;
        let p = model.physical_system(&real)?.evaluate(&store, &input)?;
        let case = format!("dpnn-s 16x16 {name}");
        let spec = SimilaritySpec::for_states(1, true);
        out.push(GradcheckLine {
            case: case.clone(),
            loss: "L_s",
            report: similarity_check(&model, &mut store, &sepns, &input, &p, &spec)?,
        });
        out.push(GradcheckLine {
            case,
            loss: "L_t",
            report: fused_task_check(&model, &mut store, &sepns, &input, 3, &p, true)?,
        });
    }
    let mpnn_kinds = [
        ("beamsplitter", MpnnErrorConfig { sigma_bs: 0.1, sigma_ps: 0.0 }),
        ("phase-shifter", MpnnErrorConfig { sigma_bs: 0.0, sigma_ps: 0.1 }),
    ];
    for (name, cfg) in mpnn_kinds {
        for internal in [false, true] {
            let mut store = ParamStore::new();
            let mut mc = MpnnConfig::new(8, 2);
            mc.drop_mask = (0..8).collect();
            let model = Mpnn::new(&mut store, mc, &mut ChaCha8Rng::seed_from_u64(3))?;
            let sepns = model.build_sepns(&mut store, TOY_SEPN, 0.3, &mut ChaCha8Rng::seed_from_u64(4))?;
            let input = toy_input(8, 5, false, 0)?;
            let real = ErrorRealization::realize_mpnn(&cfg, 2, 8, 11)?;
            let p = model.physical_system(&real)?.evaluate(&store, &input)?;
            let case = format!("mpnn L=8 N=2 {name} {}", if internal { "w/ IS" } else { "w/o IS" });
            let spec = SimilaritySpec::for_states(2, internal);
            out.push(GradcheckLine {
                case: case.clone(),
                loss: "L_s",
                report: similarity_check(&model, &mut store, &sepns, &input, &p, &spec)?,
            });
            out.push(GradcheckLine {
                case,
                loss: "L_t",
                report: fused_task_check(&model, &mut store, &sepns, &input, 2, &p, internal)?,
            });
        }
    }
    Ok(out)
}
