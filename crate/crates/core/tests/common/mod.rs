//! Builders and oracles shared by the integration tests.
#![allow(dead_code)]

use pnn_dat::cgraph::{finite_difference_check, CTensor, FdOptions, FdReport, ParamStore, Tape, C64};
use pnn_dat::errors::{DpnnErrorConfig, ErrorRealization, MpnnErrorConfig};
use pnn_dat::mesh::{Mpnn, MpnnConfig};
use pnn_dat::optics::{Dpnn, DpnnConfig};
use pnn_dat::sepn::{SepnConfig, SepnSet};
use pnn_dat::data::EncodedSample;
use pnn_dat::errors::ErrorRealization as Realization;
use pnn_dat::training::{similarity_loss_node, task_loss_node, Engine, Fusion, NumericalOptions, PhotonicModel, Schedule, SepnMode, SimilaritySpec, TrainPlan, Trainer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOY_SEPN: SepnConfig = SepnConfig { f1: 2, f2: 2, f3: 2, k: 3 };

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn dpnn(config: DpnnConfig, seed: u64) -> (ParamStore, Dpnn) {
    let mut store = ParamStore::new();
    let model = Dpnn::new(&mut store, config, &mut rng(seed)).unwrap();
    (store, model)
}

pub fn mpnn(ports: usize, meshes: usize, seed: u64) -> (ParamStore, Mpnn) {
    let mut store = ParamStore::new();
    let mut cfg = MpnnConfig::new(ports, meshes);
    cfg.drop_mask = (0..ports.min(10)).collect();
    let model = Mpnn::new(&mut store, cfg, &mut rng(seed)).unwrap();
    (store, model)
}

/// Random non-negative amplitude in the central half of the grid, zero phase.
pub fn dpnn_input(grid: usize, seed: u64) -> CTensor {
    let mut r = rng(seed);
    let a = grid / 2;
    let off = (grid - a) / 2;
    let mut data = vec![C64::new(0.0, 0.0); grid * grid];
    for i in 0..a {
        for j in 0..a {
            data[(i + off) * grid + j + off] = C64::new(r.random_range(0.0..1.0), 0.0);
        }
    }
    CTensor::new(vec![grid, grid], data).unwrap()
}

pub fn mpnn_input(ports: usize, seed: u64) -> CTensor {
    let mut r = rng(seed);
    let data = (0..ports).map(|_| C64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0))).collect();
    CTensor::new(vec![ports], data).unwrap()
}

/// One error type at a time, at a strength that visibly perturbs a 16×16 toy.
pub fn dpnn_error_kinds() -> Vec<(&'static str, DpnnErrorConfig)> {
    let z = DpnnErrorConfig::default();
    vec![
        ("z-shift", DpnnErrorConfig { z_shift_cm: 1.0, ..z }),
        ("x-shift", DpnnErrorConfig { x_shift_px: 1, ..z }),
        ("rotation", DpnnErrorConfig { rotation_deg: 3.0, ..z }),
        ("phase", DpnnErrorConfig { phase_sigma: 0.5, ..z }),
    ]
}

pub fn mpnn_error_kinds() -> Vec<(&'static str, MpnnErrorConfig)> {
    vec![
        ("beamsplitter", MpnnErrorConfig { sigma_bs: 0.1, sigma_ps: 0.0 }),
        ("phase-shifter", MpnnErrorConfig { sigma_bs: 0.0, sigma_ps: 0.1 }),
    ]
}

pub fn realize_dpnn(cfg: &DpnnErrorConfig, model: &Dpnn, seed: u64) -> ErrorRealization {
    ErrorRealization::realize_dpnn(cfg, model.num_blocks(), model.config().grid, seed).unwrap()
}

pub fn realize_mpnn(cfg: &MpnnErrorConfig, model: &Mpnn, seed: u64) -> ErrorRealization {
    ErrorRealization::realize_mpnn(cfg, model.config().meshes, model.config().ports, seed).unwrap()
}

pub fn fd_options() -> FdOptions {
    FdOptions {
        step: 1e-5,
        max_entries: Some(12),
        seed: 7,
        floor: 1e-3,
    }
}

/// Finite-difference check of the similarity loss w.r.t. all SEPN parameters.
pub fn similarity_check(
    model: &dyn PhotonicModel,
    store: &mut ParamStore,
    sepns: &SepnSet,
    input: &CTensor,
    measured: &[Vec<f64>],
    spec: &SimilaritySpec,
) -> FdReport {
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
    .unwrap()
}

/// Which states are fused: all with internal states, the output only otherwise.
pub fn fusion_set(measured: &[Vec<f64>], internal: bool) -> Vec<Option<Fusion<'_>>> {
    let last = measured.len() - 1;
    measured
        .iter()
        .enumerate()
        .map(|(n, p)| (internal || n == last).then_some(Fusion::Measured(p.as_slice())))
        .collect()
}

/// Finite-difference check of the fused task loss w.r.t. the physical parameters.
///
/// Differences are taken on the surrogate whose fused states are `S + (F − S)|_{Ω₀}`; its
/// value and gradient coincide with the fused loss at `Ω₀`. The straight-through gradient
/// of the real fused loss is asserted to equal the surrogate gradient first.
pub fn fused_task_check(
    model: &dyn PhotonicModel,
    store: &mut ParamStore,
    sepns: Option<&SepnSet>,
    input: &CTensor,
    label: usize,
    measured: &[Vec<f64>],
    internal: bool,
    logit_scale: f64,
) -> FdReport {
    let ids = model.physical_params();
    store.train_only(&ids);
    let fusion = fusion_set(measured, internal);
    let mut tape = Tape::new();
    let opts = NumericalOptions {
        sepns,
        fusion: &fusion,
        detach_sepn: false,
    };
    let st = model.forward(&mut tape, store, input, &opts).unwrap();
    let offsets: Vec<Option<Vec<C64>>> = (0..measured.len())
        .map(|n| {
            fusion[n].map(|_| {
                let f = tape.value(st.s[n]).data();
                let s = tape.value(st.unfused[n]).data();
                f.iter().zip(s).map(|(a, b)| a - b).collect()
            })
        })
        .collect();
    let loss = task_loss_node(&mut tape, st.readout, label, logit_scale).unwrap();
    let fused_grads = tape.backward(loss).unwrap();
    let fused_value = tape.value(loss).data()[0].re;
    drop(tape);

    let surrogate = |tape: &mut Tape, store: &ParamStore| {
        let fusion: Vec<Option<Fusion>> = offsets.iter().map(|d| d.as_deref().map(Fusion::Offset)).collect();
        let opts = NumericalOptions {
            sepns,
            fusion: &fusion,
            detach_sepn: false,
        };
        let st = model.forward(tape, store, input, &opts)?;
        task_loss_node(tape, st.readout, label, logit_scale)
    };
    let mut tape = Tape::new();
    let l = surrogate(&mut tape, store).unwrap();
    assert!((tape.value(l).data()[0].re - fused_value).abs() <= 1e-12 * fused_value.abs().max(1.0));
    let sur_grads = tape.backward(l).unwrap();
    drop(tape);
    for &id in &ids {
        let (a, b) = (fused_grads.get(id).unwrap(), sur_grads.get(id).unwrap());
        let scale = a.iter().fold(1e-300f64, |m, v| m.max(v.abs()));
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= 1e-10 * scale, "fused vs surrogate gradient: {x} vs {y}");
        }
    }
    finite_difference_check(store, &ids, surrogate, &fd_options()).unwrap()
}

pub fn plan(engine: Engine, internal: bool) -> TrainPlan {
    TrainPlan {
        engine,
        internal_states: internal,
        sepn_mode: SepnMode::Unitary,
        epochs: 1,
        batch_size: 4,
        sepn_batch_size: 1,
        warmup_epochs: 0,
        omega_lr: Schedule::constant(0.01),
        lambda_lr: Schedule::constant(0.001),
        logit_scale: 5.0,
    }
}

pub fn dpnn_batch(grid: usize, n: usize) -> Vec<EncodedSample> {
    (0..n).map(|i| EncodedSample { input: dpnn_input(grid, 100 + i as u64), label: i % 10 }).collect()
}

pub fn mpnn_batch(ports: usize, n: usize) -> Vec<EncodedSample> {
    (0..n).map(|i| EncodedSample { input: mpnn_input(ports, 100 + i as u64), label: i % ports.min(10) }).collect()
}

pub fn omega_values(model: &dyn PhotonicModel, store: &ParamStore) -> Vec<f64> {
    model.physical_params().iter().flat_map(|&id| store.value(id).to_vec()).collect()
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Steps in-silico, PAT and DAT (zero SEPNs) side by side on the error-free system.
/// Returns the largest Ω deviation after any step and the total Ω displacement.
pub fn zero_error_trajectories(model: &dyn PhotonicModel, store: &ParamStore, zero: &Realization, batch: &[EncodedSample], internal: bool, steps: usize) -> (f64, f64) {
    let refs: Vec<&EncodedSample> = batch.iter().collect();
    let mut insilico = Trainer::new(model, store.clone(), None, None, plan(Engine::InSilico, internal)).unwrap();
    let mut pat = Trainer::new(model, store.clone(), None, Some(model.physical_system(zero).unwrap()), plan(Engine::Pat, internal)).unwrap();
    let mut s = store.clone();
    let sepns = model.build_sepns(&mut s, TOY_SEPN, 0.0, &mut rng(9)).unwrap();
    let mut dat = Trainer::new(model, s, Some(sepns), Some(model.physical_system(zero).unwrap()), plan(Engine::Dat, internal)).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..steps {
        insilico.step(&refs).unwrap();
        pat.step(&refs).unwrap();
        dat.step(&refs).unwrap();
        let a = omega_values(model, insilico.store());
        worst = worst.max(max_diff(&a, &omega_values(model, pat.store()))).max(max_diff(&a, &omega_values(model, dat.store())));
    }
    (worst, max_diff(&omega_values(model, store), &omega_values(model, insilico.store())))
}

/// Outcome of SEPN-only training in separable mode on a two-block diffractive toy.
pub struct SeparableRun {
    pub first: Vec<f64>,
    pub last: Vec<f64>,
    /// Largest |∂L_g/∂λ| over the weights of every other group.
    pub max_cross_grad: f64,
    /// Smallest summed |∂L_g/∂λ| over the group's own weights.
    pub min_own_grad: f64,
}

pub fn two_block_dpnn() -> DpnnConfig {
    DpnnConfig {
        topology: vec![vec![], vec![0]],
        ..DpnnConfig::single(16)
    }
}

pub fn separable_run(steps: usize) -> SeparableRun {
    let (mut store, model) = dpnn(two_block_dpnn(), 1);
    let sepns = model.build_sepns(&mut store, TOY_SEPN, 0.05, &mut rng(3)).unwrap();
    let errors = DpnnErrorConfig { z_shift_cm: 1.0, phase_sigma: 0.2, ..Default::default() };
    let real = realize_dpnn(&errors, &model, 4);
    let batch = dpnn_batch(16, 4);
    let refs: Vec<&EncodedSample> = batch.iter().collect();
    let mut p = plan(Engine::Dat, true);
    p.sepn_mode = SepnMode::Separable;
    p.sepn_batch_size = refs.len();
    let mut t = Trainer::new(&model, store, Some(sepns.clone()), Some(model.physical_system(&real).unwrap()), p).unwrap();
    let measured = t.measure(&refs).unwrap();

    let groups = sepns.num_groups();
    let mut max_cross_grad = 0.0f64;
    let mut min_own_grad = f64::INFINITY;
    for (i, s) in batch.iter().enumerate() {
        let unitary = t.unitary_states(s).unwrap();
        for g in 0..groups {
            let mut tape = Tape::new();
            let node = model.forward_group(&mut tape, t.store(), g, &s.input, &measured[i], &unitary, &sepns).unwrap();
            let o = tape.abs_sq(node);
            let target = tape.constant(CTensor::from_real(tape.shape(o).to_vec().as_slice(), &measured[i][g]).unwrap());
            let d = tape.sub(o, target).unwrap();
            let sq = tape.abs_sq(d);
            let loss = tape.sum(sq);
            let grads = tape.backward(loss).unwrap();
            let own: f64 = sepns.group_params(g).iter().filter_map(|&id| grads.get(id)).flatten().map(|v| v.abs()).sum();
            min_own_grad = min_own_grad.min(own);
            for h in (0..groups).filter(|&h| h != g) {
                for &id in &sepns.group_params(h) {
                    if let Some(v) = grads.get(id) {
                        max_cross_grad = v.iter().fold(max_cross_grad, |m, x| m.max(x.abs()));
                    }
                }
            }
        }
    }
    let first = t.lambda_step(&refs, &measured).unwrap().group_sim_losses;
    let mut last = first.clone();
    for _ in 1..steps {
        last = t.lambda_step(&refs, &measured).unwrap().group_sim_losses;
    }
    SeparableRun { first, last, max_cross_grad, min_own_grad }
}
