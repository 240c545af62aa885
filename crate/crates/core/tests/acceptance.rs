//! End-to-end acceptance checks. Each test prints one `[criterion N] PASS|FAIL` line.
//!
//! The scaled-benchmark checks run full sweeps (minutes on one core); every test holds a
//! shared lock so wall-clock budgets are not inflated by sibling tests.

mod common;

use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use common::*;
use pnn_dat::cgraph::{CTensor, Tape, C64};
use pnn_dat::errors::{DpnnErrorConfig, ErrorRealization, MeshErrors, MpnnErrorConfig};
use pnn_dat::experiment::gradcheck::run_gradcheck;
use pnn_dat::experiment::{convergence_csv, run_sweep, run_train, ExperimentConfig, SweepRecord};
use pnn_dat::mesh::{mesh_matrix, MeshLayout};
use pnn_dat::optics::{propagate, DiffractionOp, DpnnConfig, OpticalField};
use pnn_dat::sepn::paper_param_count;
use pnn_dat::training::{NumericalOptions, PhotonicModel};
use rand::Rng;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(n: usize, ok: bool, details: &str) {
    println!("[criterion {n}] {}: {details}", if ok { "PASS" } else { "FAIL" });
}

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn shipped_config(name: &str) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::load(&root().join("configs").join(name)).unwrap();
    cfg.data.dir = Some(root().join("data/mnist"));
    cfg
}

fn accuracy(r: &SweepRecord, engine: &str) -> f64 {
    100.0 * r.rows.iter().find(|row| row.engine == engine).unwrap_or_else(|| panic!("no {engine} row")).accuracy
}

#[test]
fn criterion_1_finite_difference_suites() {
    let _g = serial();
    const TOL: f64 = 1e-4;
    const BUDGET_S: f64 = 120.0;
    let t = Instant::now();
    let lines = run_gradcheck().unwrap();
    let secs = t.elapsed().as_secs_f64();
    let worst = lines.iter().map(|l| l.report.max_rel_err).fold(0.0f64, f64::max);
    let failed: Vec<_> = lines.iter().filter(|l| !l.passed()).map(|l| format!("{} {}", l.case, l.loss)).collect();
    let ok = failed.is_empty() && worst < TOL && secs < BUDGET_S;
    report(1, ok, &format!("{} suites, worst relative error {worst:.2e} (< {TOL:e}), {secs:.1} s (< {BUDGET_S} s), failing {failed:?}", lines.len()));
    assert!(ok);
}

fn uu_dagger_deviation(u: &[C64], l: usize) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..l {
        for j in 0..l {
            let s: C64 = (0..l).map(|k| u[i * l + k] * u[j * l + k].conj()).sum();
            worst = worst.max((s - C64::new(if i == j { 1.0 } else { 0.0 }, 0.0)).norm());
        }
    }
    worst
}

#[test]
fn criterion_2_structural_invariants() {
    let _g = serial();
    let mut r = rng(42);

    let mut unitarity = 0.0f64;
    for l in [2usize, 3, 8, 16, 33, 64] {
        let layout = MeshLayout::clements(l).unwrap();
        let m = layout.num_mzis();
        let theta: Vec<f64> = (0..m).map(|_| r.random_range(0.0..std::f64::consts::PI)).collect();
        let phi: Vec<f64> = (0..m).map(|_| r.random_range(0.0..std::f64::consts::TAU)).collect();
        let mut e = MeshErrors::zeros(m);
        for b in &mut e.bs {
            *b = [r.random_range(-0.2..0.2), r.random_range(-0.2..0.2)];
        }
        unitarity = unitarity.max(uu_dagger_deviation(&mesh_matrix(&layout, &theta, &phi, None).unwrap(), l));
        unitarity = unitarity.max(uu_dagger_deviation(&mesh_matrix(&layout, &theta, &phi, Some(&e)).unwrap(), l));
    }

    let mut energy = 0.0f64;
    for n in [16usize, 32] {
        let data = (0..n * n).map(|_| C64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0))).collect();
        let f = OpticalField::new(CTensor::new(vec![n, n], data).unwrap(), 17e-6, 1.55e-6).unwrap();
        for z in [0.01, 0.1, 0.3] {
            let g = propagate(&f, &DiffractionOp { z, dz: 0.01 }, false).unwrap();
            energy = energy.max(((g.energy() - f.energy()) / f.energy()).abs());
        }
    }

    // Zero-initialized SEPNs leave the numerical model equal to the error-free system.
    let mut identity = 0.0f64;
    let mut check = |model: &dyn PhotonicModel, store: &mut pnn_dat::cgraph::ParamStore, input: &CTensor, real: &ErrorRealization| {
        let sepns = model.build_sepns(store, TOY_SEPN, 0.0, &mut rng(2)).unwrap();
        let p = model.physical_system(real).unwrap().evaluate(store, input).unwrap();
        let mut tape = Tape::new();
        let opts = NumericalOptions { sepns: Some(&sepns), ..Default::default() };
        let st = model.forward(&mut tape, store, input, &opts).unwrap();
        for (o, want) in st.o.iter().zip(&p) {
            let scale = want.iter().fold(1e-300f64, |m, v| m.max(v.abs()));
            for (a, b) in tape.value(*o).real_parts().iter().zip(want) {
                identity = identity.max((a - b).abs() / scale);
            }
        }
    };
    for cfg in [DpnnConfig::single(16), DpnnConfig::multi(16)] {
        let (mut store, model) = dpnn(cfg, 1);
        let real = realize_dpnn(&DpnnErrorConfig::default(), &model, 4);
        check(&model, &mut store, &dpnn_input(16, 3), &real);
    }
    let (mut store, model) = mpnn(8, 3, 1);
    let real = realize_mpnn(&MpnnErrorConfig::default(), &model, 4);
    check(&model, &mut store, &mpnn_input(8, 3), &real);

    let counts = [paper_param_count(4, 8, 16, 5), paper_param_count(4, 8, 16, 3), paper_param_count(4, 6, 8, 3)];
    let ok = unitarity < 1e-10 && energy < 1e-6 && identity < 1e-10 && counts == [26_800, 9_648, 3_960];
    report(
        2,
        ok,
        &format!("|UU†-I| {unitarity:.1e} (< 1e-10), energy drift {energy:.1e} (< 1e-6), SEPN identity {identity:.1e} (< 1e-10), parameter counts {counts:?}"),
    );
    assert!(ok);
}

#[test]
fn criterion_3_zero_error_trajectories() {
    let _g = serial();
    let mut worst = 0.0f64;
    let mut moved = f64::INFINITY;
    let (store, model) = dpnn(DpnnConfig::single(16), 1);
    let zero = realize_dpnn(&DpnnErrorConfig::default(), &model, 4);
    for internal in [false, true] {
        let (w, m) = zero_error_trajectories(&model, &store, &zero, &dpnn_batch(16, 4), internal, 50);
        worst = worst.max(w);
        moved = moved.min(m);
    }
    let (store, model) = mpnn(8, 2, 1);
    let zero = realize_mpnn(&MpnnErrorConfig::default(), &model, 4);
    for internal in [false, true] {
        let (w, m) = zero_error_trajectories(&model, &store, &zero, &mpnn_batch(8, 4), internal, 50);
        worst = worst.max(w);
        moved = moved.min(m);
    }
    let ok = worst < 1e-10 && moved > 1e-3;
    report(3, ok, &format!("max Ω deviation over 50 steps {worst:.1e} (< 1e-10), min Ω displacement {moved:.2e}"));
    assert!(ok);
}

#[test]
fn criterion_4_scaled_diffractive_benchmark() {
    let _g = serial();
    const BUDGET_S: f64 = 45.0 * 60.0;
    let t = Instant::now();
    let r = run_sweep(&shipped_config("dpnn-s-scaled.toml"), None).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let (base, direct, pat, dat) = (accuracy(&r, "baseline"), accuracy(&r, "direct"), accuracy(&r, "pat"), accuracy(&r, "dat"));
    let ok = dat >= direct + 10.0 && dat >= base - 5.0 && dat >= pat && secs < BUDGET_S;
    report(
        4,
        ok,
        &format!("baseline {base:.1}%, direct {direct:.1}%, PAT {pat:.1}%, DAT {dat:.1}% (need DAT ≥ direct+10, ≥ baseline-5, ≥ PAT), {secs:.0} s (< {BUDGET_S} s)"),
    );
    assert!(ok);
}

#[test]
fn criterion_5_scaled_mesh_benchmark() {
    let _g = serial();
    const BUDGET_S: f64 = 30.0 * 60.0;
    let t = Instant::now();
    let r = run_sweep(&shipped_config("mpnn-scaled.toml"), None).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let (direct, pat, dat, dat_is) = (accuracy(&r, "direct"), accuracy(&r, "pat"), accuracy(&r, "dat"), accuracy(&r, "dat-is"));
    let ok = dat >= direct + 5.0 && dat_is >= dat - 1.0 && dat >= pat - 1.0 && dat_is >= pat - 1.0 && secs < BUDGET_S;
    report(
        5,
        ok,
        &format!(
            "direct {direct:.1}%, PAT {pat:.1}%, DAT w/o IS {dat:.1}%, DAT w/ IS {dat_is:.1}% (need w/o IS ≥ direct+5, w/ IS ≥ w/o IS-1, both ≥ PAT-1), {secs:.0} s (< {BUDGET_S} s)"
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_6_separable_mode() {
    let _g = serial();
    let r = separable_run(100);
    let decreased = r.first.iter().zip(&r.last).all(|(a, b)| b < a);
    let ok = r.first.len() == 2 && decreased && r.max_cross_grad == 0.0 && r.min_own_grad > 0.0;
    report(
        6,
        ok,
        &format!("group losses {:?} -> {:?} over 100 steps, max cross-group gradient {:e}", r.first, r.last, r.max_cross_grad),
    );
    assert!(ok);
}

#[test]
fn criterion_7_reruns_are_byte_identical() {
    let _g = serial();
    let cfg = shipped_config("toy-dpnn.toml");
    let a = run_train(&cfg).unwrap().record;
    let b = run_train(&cfg).unwrap().record;
    let mut sweep_cfg = cfg.clone();
    sweep_cfg.train.epochs = 1;
    sweep_cfg.train.pretrain_epochs = 1;
    let s1 = run_sweep(&sweep_cfg, None).unwrap();
    let s2 = run_sweep(&sweep_cfg, None).unwrap();
    let same = [
        ("convergence.csv", a.convergence_csv() == b.convergence_csv()),
        ("confusion.csv", a.confusion_csv() == b.confusion_csv()),
        ("sweep.csv", s1.sweep_csv() == s2.sweep_csv()),
        ("sweep convergence.csv", convergence_csv(&s1.convergence) == convergence_csv(&s2.convergence)),
    ];
    let ok = same.iter().all(|(_, s)| *s) && a.record_hash() == b.record_hash();
    report(7, ok, &format!("{same:?}, record hash {}", a.record_hash()));
    assert!(ok);
}

#[test]
fn criterion_8_phase_shifter_draws() {
    let _g = serial();
    let r = ErrorRealization::realize_mpnn(&MpnnErrorConfig { sigma_bs: 0.0, sigma_ps: 0.1 }, 25, 64, 2024).unwrap();
    let draws = &r.shifter_draws()[..100_000];
    let n = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let std = (draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let ok = (0.098..=0.102).contains(&std);
    report(8, ok, &format!("10^5 draws at σ_ps = 0.1: sample std {std:.5} (in [0.098, 0.102])"));
    assert!(ok);
}
