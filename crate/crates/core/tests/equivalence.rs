//! Engine equivalences at zero error, the Λ/Ω update partition of a DAT step, and the
//! separable-mode properties.

mod common;

use common::*;
use pnn_dat::cgraph::ParamStore;
use pnn_dat::data::EncodedSample;
use pnn_dat::errors::{DpnnErrorConfig, MpnnErrorConfig};
use pnn_dat::optics::DpnnConfig;
use pnn_dat::training::{Engine, PhotonicModel, SepnMode, Trainer};

fn trajectories_agree(model: &dyn PhotonicModel, store: &ParamStore, zero: &pnn_dat::errors::ErrorRealization, batch: &[EncodedSample], internal: bool) {
    let (worst, moved) = zero_error_trajectories(model, store, zero, batch, internal, 50);
    println!("max Ω deviation over 50 steps: {worst:e}");
    assert!(worst < 1e-10, "Ω trajectories diverge by {worst:e}");
    assert!(moved > 1e-3);
}

#[test]
fn zero_error_engines_follow_the_same_trajectory_dpnn() {
    let (store, model) = dpnn(DpnnConfig::single(16), 1);
    let zero = realize_dpnn(&DpnnErrorConfig::default(), &model, 2);
    trajectories_agree(&model, &store, &zero, &dpnn_batch(16, 4), false);
}

#[test]
fn zero_error_engines_follow_the_same_trajectory_mpnn() {
    let (store, model) = mpnn(8, 2, 1);
    let zero = realize_mpnn(&MpnnErrorConfig::default(), &model, 2);
    trajectories_agree(&model, &store, &zero, &mpnn_batch(8, 4), true);
}

#[test]
fn dat_step_updates_lambda_then_omega_only() {
    let (mut store, model) = mpnn(8, 2, 1);
    let sepns = model.build_sepns(&mut store, TOY_SEPN, 0.2, &mut rng(3)).unwrap();
    let lambda = sepns.all_params();
    let real = realize_mpnn(&MpnnErrorConfig { sigma_bs: 0.1, sigma_ps: 0.1 }, &model, 4);
    let batch = mpnn_batch(8, 4);
    let refs: Vec<&EncodedSample> = batch.iter().collect();
    let snapshot = |s: &ParamStore, ids: &[pnn_dat::cgraph::ParamId]| -> Vec<f64> { ids.iter().flat_map(|&id| s.value(id).to_vec()).collect() };
    let omega = model.physical_params();

    // Step 3 alone moves Λ and leaves Ω bit-identical.
    let mut a = Trainer::new(&model, store.clone(), Some(sepns.clone()), Some(model.physical_system(&real).unwrap()), plan(Engine::Dat, true)).unwrap();
    let p = a.measure(&refs).unwrap();
    a.lambda_step(&refs, &p).unwrap();
    assert_eq!(snapshot(a.store(), &omega), snapshot(&store, &omega));
    assert_ne!(snapshot(a.store(), &lambda), snapshot(&store, &lambda));

    // A full DAT step ends with the same Λ (step 4 leaves it alone) and a new Ω.
    let mut b = Trainer::new(&model, store.clone(), Some(sepns), Some(model.physical_system(&real).unwrap()), plan(Engine::Dat, true)).unwrap();
    b.step(&refs).unwrap();
    assert_eq!(snapshot(b.store(), &lambda), snapshot(a.store(), &lambda));
    assert_ne!(snapshot(b.store(), &omega), snapshot(&store, &omega));
}

#[test]
fn pat_gradient_differs_from_insilico_under_errors() {
    let (store, model) = dpnn(DpnnConfig::single(16), 1);
    let real = realize_dpnn(&DpnnErrorConfig { z_shift_cm: 1.0, ..Default::default() }, &model, 2);
    let batch = dpnn_batch(16, 2);
    let refs: Vec<&EncodedSample> = batch.iter().collect();
    let mut t = Trainer::new(&model, store, None, Some(model.physical_system(&real).unwrap()), plan(Engine::Pat, false)).unwrap();
    let (_, g0) = t.task_gradients(&refs, None, false).unwrap();
    let p = t.measure(&refs).unwrap();
    let (_, g1) = t.task_gradients(&refs, Some(&p), false).unwrap();
    let mut d = 0.0;
    for id in model.physical_params() {
        d += max_diff(g0.get(id).unwrap(), g1.get(id).unwrap());
    }
    assert!(d > 0.0);
}

#[test]
fn separable_groups_learn_independently() {
    let r = separable_run(100);
    println!("per-group similarity loss: first {:?}, last {:?}", r.first, r.last);
    assert_eq!(r.first.len(), 2);
    assert_eq!(r.max_cross_grad, 0.0, "a group loss reaches another group's weights");
    assert!(r.min_own_grad > 0.0, "a group has no gradient on its own weights");
    for g in 0..2 {
        assert!(r.last[g] < r.first[g], "group {g}: {} -> {}", r.first[g], r.last[g]);
    }
}

#[test]
fn separable_states_equal_unitary_states_when_the_model_is_exact() {
    // With zero errors and zero SEPNs the measured predecessors equal the numerical ones,
    // so separable inference reproduces the unitary states up to the fused phase.
    let (mut store, model) = dpnn(two_block_dpnn(), 1);
    let sepns = model.build_sepns(&mut store, TOY_SEPN, 0.0, &mut rng(3)).unwrap();
    let real = realize_dpnn(&DpnnErrorConfig::default(), &model, 4);
    let mut p = plan(Engine::Dat, true);
    p.sepn_mode = SepnMode::Separable;
    let t = Trainer::new(&model, store, Some(sepns), Some(model.physical_system(&real).unwrap()), p).unwrap();
    let sample = &dpnn_batch(16, 1)[0];
    let measured = t.measure(&[sample]).unwrap().remove(0);
    let unitary = t.unitary_states(sample).unwrap();
    let separable = t.extract_separable_states(sample, &measured).unwrap();
    for (u, s) in unitary.iter().zip(&separable) {
        let scale = u.iter().fold(1e-300f64, |m, z| m.max(z.norm()));
        for (a, b) in u.iter().zip(s) {
            assert!((a - b).norm() < 1e-9 * scale, "{a} vs {b}");
        }
    }
}

#[test]
fn separable_mode_requires_internal_states() {
    let mut p = plan(Engine::Dat, false);
    p.sepn_mode = SepnMode::Separable;
    assert!(p.validate().is_err());
}
