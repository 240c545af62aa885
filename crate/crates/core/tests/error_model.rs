//! Sampling, determinism and serialization of error realizations, and their effect on the
//! emulated systems.

mod common;

use common::*;
use pnn_dat::errors::{DpnnErrorConfig, ErrorRealization, MpnnErrorConfig, RealizationData};
use pnn_dat::optics::DpnnConfig;
use pnn_dat::training::PhotonicModel;
use proptest::prelude::*;

fn sample_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[test]
fn shifter_draws_have_the_configured_spread() {
    // 25 meshes of 64 ports give 25·2016·2 draws; the first 10⁵ are used.
    let cfg = MpnnErrorConfig { sigma_bs: 0.0, sigma_ps: 0.1 };
    let r = ErrorRealization::realize_mpnn(&cfg, 25, 64, 2024).unwrap();
    let draws = r.shifter_draws();
    assert!(draws.len() >= 100_000);
    let (mean, std) = sample_std(&draws[..100_000]);
    println!("σ_ps = 0.1: sample std {std:.5}, mean {mean:.5}");
    assert!((0.098..=0.102).contains(&std), "sample std {std}");
    assert!(mean.abs() < 0.002);
}

#[test]
fn beamsplitter_draws_have_the_configured_spread() {
    let cfg = MpnnErrorConfig { sigma_bs: 0.05, sigma_ps: 0.0 };
    let r = ErrorRealization::realize_mpnn(&cfg, 10, 64, 5).unwrap();
    let RealizationData::Mpnn { meshes, .. } = r.data() else { panic!() };
    let draws: Vec<f64> = meshes.iter().flat_map(|m| m.bs.iter().flatten().copied()).collect();
    let (_, std) = sample_std(&draws);
    assert!((std - 0.05).abs() < 0.002, "sample std {std}");
    assert!(r.shifter_draws().iter().all(|&v| v == 0.0));
}

#[test]
fn pixel_phase_errors_have_the_configured_spread() {
    let cfg = DpnnErrorConfig { phase_sigma: 0.3, ..Default::default() };
    let r = ErrorRealization::realize_dpnn(&cfg, 2, 100, 1).unwrap();
    let RealizationData::Dpnn { blocks, .. } = r.data() else { panic!() };
    let draws: Vec<f64> = blocks.iter().flat_map(|b| b.eps.iter().flatten().copied()).collect();
    assert_eq!(draws.len(), 2 * 2 * 100 * 100);
    let (_, std) = sample_std(&draws);
    assert!((std - 0.3).abs() < 0.01, "sample std {std}");
}

#[test]
fn geometric_offsets_repeat_at_every_block() {
    let cfg = DpnnErrorConfig { z_shift_cm: 1.5, x_shift_px: 2, rotation_deg: 4.0, phase_sigma: 0.0 };
    let r = ErrorRealization::realize_dpnn(&cfg, 3, 8, 1).unwrap();
    let RealizationData::Dpnn { blocks, .. } = r.data() else { panic!() };
    for b in blocks {
        assert_eq!((b.dz_m, b.dx_px, b.rot_deg), (0.015, 2, 4.0));
        assert!(b.eps.iter().all(|e| e.iter().all(|&v| v == 0.0)));
    }
}

#[test]
fn realizations_are_deterministic_per_seed() {
    let cfg = MpnnErrorConfig { sigma_bs: 0.1, sigma_ps: 0.1 };
    let a = ErrorRealization::realize_mpnn(&cfg, 2, 16, 7).unwrap();
    let b = ErrorRealization::realize_mpnn(&cfg, 2, 16, 7).unwrap();
    let c = ErrorRealization::realize_mpnn(&cfg, 2, 16, 8).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.digest(), b.digest());
    assert_ne!(a.digest(), c.digest());
    assert_eq!(a.digest().len(), 64);
}

#[test]
fn device_classes_use_independent_streams() {
    // Switching beamsplitter errors on must not change the phase-shifter draws.
    let ps = ErrorRealization::realize_mpnn(&MpnnErrorConfig { sigma_bs: 0.0, sigma_ps: 0.1 }, 2, 8, 3).unwrap();
    let both = ErrorRealization::realize_mpnn(&MpnnErrorConfig { sigma_bs: 0.1, sigma_ps: 0.1 }, 2, 8, 3).unwrap();
    assert_eq!(ps.shifter_draws(), both.shifter_draws());
    // Adding a mesh extends the inventory without changing the first one.
    let more = ErrorRealization::realize_mpnn(&MpnnErrorConfig { sigma_bs: 0.1, sigma_ps: 0.1 }, 3, 8, 3).unwrap();
    let (RealizationData::Mpnn { meshes: m2, .. }, RealizationData::Mpnn { meshes: m3, .. }) = (both.data(), more.data()) else { panic!() };
    assert_eq!(m2[0], m3[0]);
}

#[test]
fn negative_or_non_finite_strengths_are_rejected() {
    assert!(ErrorRealization::realize_mpnn(&MpnnErrorConfig { sigma_bs: -0.1, sigma_ps: 0.0 }, 1, 4, 0).is_err());
    assert!(ErrorRealization::realize_mpnn(&MpnnErrorConfig { sigma_bs: 0.0, sigma_ps: f64::NAN }, 1, 4, 0).is_err());
    assert!(ErrorRealization::realize_dpnn(&DpnnErrorConfig { z_shift_cm: -1.0, ..Default::default() }, 1, 4, 0).is_err());
    assert!(ErrorRealization::realize_dpnn(&DpnnErrorConfig { x_shift_px: -1, ..Default::default() }, 1, 4, 0).is_err());
}

#[test]
fn realization_must_match_the_device_inventory() {
    let (_, model) = mpnn(8, 2, 1);
    let wrong_ports = ErrorRealization::realize_mpnn(&MpnnErrorConfig::default(), 2, 6, 0).unwrap();
    let wrong_meshes = ErrorRealization::realize_mpnn(&MpnnErrorConfig::default(), 3, 8, 0).unwrap();
    let dpnn_kind = ErrorRealization::realize_dpnn(&DpnnErrorConfig::default(), 1, 8, 0).unwrap();
    assert!(model.physical_system(&wrong_ports).is_err());
    assert!(model.physical_system(&wrong_meshes).is_err());
    assert!(model.physical_system(&dpnn_kind).is_err());
    let (_, d) = dpnn(DpnnConfig::single(16), 1);
    let wrong_grid = ErrorRealization::realize_dpnn(&DpnnErrorConfig::default(), 1, 8, 0).unwrap();
    assert!(d.physical_system(&wrong_grid).is_err());
}

#[test]
fn physical_system_is_deterministic() {
    let (store, model) = dpnn(DpnnConfig::single(16), 1);
    let r = realize_dpnn(&DpnnErrorConfig { phase_sigma: 0.3, rotation_deg: 2.0, ..Default::default() }, &model, 9);
    let sys = model.physical_system(&r).unwrap();
    let x = dpnn_input(16, 4);
    let a = sys.evaluate(&store, &x).unwrap();
    let b = sys.evaluate(&store, &x).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), sys.num_states());
    assert!(a.iter().flatten().all(|v| v.is_finite() && *v >= 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn arrays_round_trip_mpnn(seed in any::<u64>(), ports in 2usize..10, meshes in 1usize..4, bs in 0.0f64..0.3, ps in 0.0f64..0.3) {
        let r = ErrorRealization::realize_mpnn(&MpnnErrorConfig { sigma_bs: bs, sigma_ps: ps }, meshes, ports, seed).unwrap();
        let back = ErrorRealization::from_arrays(&r.to_arrays()).unwrap();
        prop_assert_eq!(back.digest(), r.digest());
        prop_assert_eq!(back, r);
    }

    #[test]
    fn arrays_round_trip_dpnn(seed in any::<u64>(), grid in 2usize..12, blocks in 1usize..4, z in 0.0f64..3.0, dx in 0i64..3, sigma in 0.0f64..1.0) {
        let cfg = DpnnErrorConfig { z_shift_cm: z, x_shift_px: dx, rotation_deg: 1.0, phase_sigma: sigma };
        let r = ErrorRealization::realize_dpnn(&cfg, blocks, grid, seed).unwrap();
        let back = ErrorRealization::from_arrays(&r.to_arrays()).unwrap();
        prop_assert_eq!(back.seed(), seed);
        prop_assert_eq!(back, r);
    }
}
