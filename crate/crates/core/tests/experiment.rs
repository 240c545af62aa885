//! Config validation, run artifacts, sweeps, evaluation and checkpoints on toy setups.

use std::path::{Path, PathBuf};

use pnn_dat::experiment::{report, run_eval, run_sweep, run_train, Checkpoint, EvalTarget, ExperimentConfig};
use pnn_dat::Error;

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
}

/// Toy 16×16 diffractive config; `extra` is appended verbatim to `[train]`.
fn toy(engine: &str, epochs: usize, errors: &str, extra: &str) -> String {
    format!(
        r#"
name = "toy"

[model]
architecture = "dpnn-s"
grid = 16
pitch_m = "paper-default"
wavelength_m = "paper-default"
distance_m = "paper-default"

[errors]
{errors}

[train]
engine = "{engine}"
epochs = {epochs}
batch_size = 16
omega_lr = {{ initial = 0.01 }}
logit_scale = 10.0
{extra}

[sepn]
f1 = 2
f2 = 2
f3 = 2
k = 3

[data]
dir = {dir:?}
train_samples = 200
test_samples = 100

[seeds]
params = 1
errors = 2
shuffle = 3
sepn = 4
"#,
        dir = data_dir().display().to_string()
    )
}

fn cfg(text: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml(text).unwrap()
}

fn config_error(r: pnn_dat::Result<impl std::fmt::Debug>) -> String {
    match r {
        Err(Error::Config { field, reason }) => format!("{field}: {reason}"),
        other => panic!("expected a config error, got {other:?}"),
    }
}

#[test]
fn physical_constants_have_no_silent_defaults() {
    let text = toy("insilico", 1, "", "").replace("pitch_m = \"paper-default\"\n", "");
    let e = config_error(cfg(&text).validate());
    assert!(e.starts_with("model.pitch_m"), "{e}");
    let text = toy("insilico", 1, "", "").replace("pitch_m = \"paper-default\"", "pitch_m = \"default\"");
    assert!(config_error(cfg(&text).validate()).starts_with("model.pitch_m"));
    // The echo writes out every resolved constant.
    let echo = cfg(&toy("insilico", 1, "", "")).echo().unwrap();
    assert!(echo.contains("pitch_m = 1.7e-5") || echo.contains("pitch_m = 0.000017"), "{echo}");
}

#[test]
fn malformed_configs_are_rejected() {
    assert!(matches!(ExperimentConfig::from_toml(&toy("insilico", 1, "", "bogus = 1")), Err(Error::Config { .. })));
    assert!(matches!(ExperimentConfig::from_toml(&toy("sgd", 1, "", "")), Err(Error::Config { .. })));
    let e = config_error(cfg(&toy("insilico", 1, "", "").replace("grid = 16", "grid = 16\nports = 64")).validate());
    assert!(e.starts_with("model.ports"), "{e}");
    let e = config_error(cfg(&toy("insilico", 1, "sigma_ps = 0.1", "")).validate());
    assert!(e.contains("mesh errors"), "{e}");
    let e = config_error(cfg(&toy("insilico", 0, "", "")).validate());
    assert!(e.starts_with("train.epochs"), "{e}");
    let e = config_error(cfg(&toy("dat", 1, "", "sepn_batch_size = 0")).validate());
    assert!(e.starts_with("train.sepn_batch_size"), "{e}");
    let e = config_error(cfg(&toy("insilico", 1, "z_shift_cm = -1.0", "")).validate());
    assert!(e.starts_with("errors.z_shift_cm"), "{e}");
    let sweep = format!("{}\n[sweep]\nparameter = \"z_shift_cm\"\nengines = [\"magic\"]\n", toy("dat", 1, "", ""));
    assert!(config_error(cfg(&sweep).validate()).contains("magic"));
}

#[test]
fn missing_dataset_is_a_config_error() {
    let text = toy("insilico", 1, "", "").replace(&data_dir().display().to_string(), "/nonexistent/mnist");
    let e = config_error(run_train(&cfg(&text)).map(|o| o.record));
    assert!(e.starts_with("data.dir"), "{e}");
}

#[test]
fn insilico_toy_run_learns_and_records_every_epoch() {
    let out = run_train(&cfg(&toy("insilico", 3, "", ""))).unwrap();
    let r = &out.record;
    println!("in-silico toy accuracy {:.3}", r.engine_acc);
    assert!(r.engine_acc > 0.10, "accuracy {}", r.engine_acc);
    assert_eq!(r.epochs.len(), 3);
    assert!(r.pretrain.is_empty());
    // Zero errors: deployed and ideal coincide.
    assert_eq!(r.direct_acc, r.baseline_acc);
    let trace: usize = (0..10).map(|i| r.confusion[i][i]).sum();
    let total: usize = r.confusion.iter().flatten().sum();
    assert_eq!(total, 100);
    assert!((trace as f64 / total as f64 - r.engine_acc).abs() < 1e-12);
}

#[test]
fn reruns_are_byte_identical() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut records = Vec::new();
    for d in &dirs {
        let mut c = cfg(&toy("dat", 1, "z_shift_cm = 1.0", "pretrain_epochs = 1"));
        c.output.dir = Some(d.path().to_path_buf());
        records.push(run_train(&c).unwrap().record);
    }
    assert_eq!(records[0].record_hash(), records[1].record_hash());
    for f in ["convergence.csv", "confusion.csv", "checkpoint.bin"] {
        let a = std::fs::read(dirs[0].path().join(f)).unwrap();
        let b = std::fs::read(dirs[1].path().join(f)).unwrap();
        assert!(a == b, "{f} differs between reruns");
    }
    // The echoed config differs only in its output directory.
    let echo = |d: &Path| -> String { std::fs::read_to_string(d.join("config.toml")).unwrap().lines().filter(|l| !l.contains(".tmp")).collect() };
    assert_eq!(echo(dirs[0].path()), echo(dirs[1].path()));
    let csv = std::fs::read_to_string(dirs[0].path().join("convergence.csv")).unwrap();
    assert!(csv.starts_with("stage,epoch,task_loss,sim_loss,test_acc,aborted_steps\n"));
    assert_eq!(csv.lines().count(), 1 + 2);
    let summary = std::fs::read_to_string(dirs[0].path().join("summary.txt")).unwrap();
    let parsed: toml::Table = summary.parse().unwrap();
    assert_eq!(parsed["kind"].as_str(), Some("train"));
    assert_eq!(parsed["record_hash"].as_str(), Some(records[0].record_hash().as_str()));
    // Another error seed changes the realization and the record.
    let mut c = cfg(&toy("dat", 1, "phase_sigma = 0.3", "pretrain_epochs = 1"));
    let h1 = run_train(&c).unwrap().record;
    c.seeds.errors = 99;
    let h2 = run_train(&c).unwrap().record;
    assert_ne!(h1.realization_digest, h2.realization_digest);
    assert_ne!(h1.record_hash(), h2.record_hash());
}

#[test]
fn sweep_shape_and_zero_strength_agreement() {
    let d = tempfile::tempdir().unwrap();
    let text = format!(
        "{}\n[sweep]\nparameter = \"z_shift_cm\"\nengines = [\"baseline\", \"direct\", \"pat\", \"dat\"]\naxis = [0.0, 1.0]\n",
        toy("dat", 1, "", "pretrain_epochs = 1")
    )
    .replace("k = 3", "k = 3\ninit_std = 0.0");
    let mut c = cfg(&text);
    c.output.dir = Some(d.path().to_path_buf());
    let r = run_sweep(&c, None).unwrap();
    assert_eq!(r.rows.len(), 2 * 4);
    let csv = std::fs::read_to_string(d.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 8);
    for v in [0.0, 1.0] {
        let at: Vec<_> = r.rows.iter().filter(|row| row.strength == v).collect();
        assert_eq!(at.len(), 4);
        assert!(at.iter().all(|row| row.realization_digest == at[0].realization_digest));
        if v == 0.0 {
            let accs: Vec<f64> = at.iter().map(|row| row.accuracy).collect();
            let spread = accs.iter().cloned().fold(f64::MIN, f64::max) - accs.iter().cloned().fold(f64::MAX, f64::min);
            println!("zero-strength accuracies {accs:?}");
            assert!(spread * 100.0 <= 0.5, "engines disagree at zero strength: {accs:?}");
        }
    }
    // The command-line axis replaces the configured one.
    let r = run_sweep(&cfg(&text), Some(&[0.5])).unwrap();
    assert_eq!(r.rows.len(), 4);
    assert!(matches!(run_sweep(&cfg(&text), Some(&[])), Err(Error::Config { .. })));
    assert!(matches!(run_sweep(&cfg(&text), Some(&[-1.0])), Err(Error::Config { .. })));
    let table = report(&[d.path().to_path_buf()]).unwrap();
    assert!(table.contains("z_shift_cm"), "{table}");
}

#[test]
fn checkpoints_evaluate_consistently() {
    let d = tempfile::tempdir().unwrap();
    let mut c = cfg(&toy("insilico", 2, "z_shift_cm = 1.0", ""));
    c.output.dir = Some(d.path().to_path_buf());
    let out = run_train(&c).unwrap();
    let ck = d.path().join("checkpoint.bin");

    let ideal = run_eval(&c, &ck, EvalTarget::Ideal).unwrap();
    assert_eq!(ideal.accuracy(), out.record.engine_acc);
    assert_eq!(ideal.confusion, out.record.confusion);
    let deployed = run_eval(&c, &ck, EvalTarget::Deployed).unwrap();
    assert_eq!(deployed.accuracy(), out.record.direct_acc);
    println!("toy z-shift: ideal {:.3}, deployed {:.3}", ideal.accuracy(), deployed.accuracy());
    assert!(deployed.accuracy() <= ideal.accuracy());
    assert!(d.path().join("eval_ideal_confusion.csv").exists());
    assert!(d.path().join("eval_deployed_confusion.csv").exists());

    // Byte round trip.
    let read = Checkpoint::read(&ck).unwrap();
    assert_eq!(read, out.checkpoint);
    assert_eq!(Checkpoint::from_bytes(&read.to_bytes(), &ck).unwrap(), read);

    // A checkpoint of a DAT run carries its SEPNs and still evaluates.
    let d2 = tempfile::tempdir().unwrap();
    let mut dat = cfg(&toy("dat", 1, "z_shift_cm = 1.0", "pretrain_epochs = 1"));
    dat.output.dir = Some(d2.path().to_path_buf());
    let o = run_train(&dat).unwrap();
    assert!(o.checkpoint.get("param/sepn.b0.h0.enc1.w").is_some() || o.checkpoint.arrays.iter().any(|(n, _)| n.starts_with("param/sepn.")));
    let e = run_eval(&dat, &d2.path().join("checkpoint.bin"), EvalTarget::Deployed).unwrap();
    assert_eq!(e.accuracy(), o.record.engine_acc);
}

#[test]
fn damaged_or_mismatched_checkpoints_are_rejected() {
    let d = tempfile::tempdir().unwrap();
    let mut c = cfg(&toy("insilico", 1, "", ""));
    c.output.dir = Some(d.path().to_path_buf());
    run_train(&c).unwrap();
    let ck = d.path().join("checkpoint.bin");
    let bytes = std::fs::read(&ck).unwrap();

    let cut = d.path().join("cut.bin");
    std::fs::write(&cut, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(run_eval(&c, &cut, EvalTarget::Ideal), Err(Error::Format { .. })));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    let magic = d.path().join("magic.bin");
    std::fs::write(&magic, &bad).unwrap();
    assert!(matches!(run_eval(&c, &magic, EvalTarget::Ideal), Err(Error::Format { .. })));
    // Huge declared lengths fail cleanly.
    let mut huge = bytes[..12].to_vec();
    huge.extend_from_slice(&u32::MAX.to_le_bytes());
    assert!(matches!(Checkpoint::from_bytes(&huge, &ck), Err(Error::Format { .. })));

    let mut other = c.clone();
    other.model.grid = Some(32);
    assert!(matches!(run_eval(&other, &ck, EvalTarget::Ideal), Err(Error::Topology(_))));
    assert!(matches!(run_eval(&c, &d.path().join("missing.bin"), EvalTarget::Ideal), Err(Error::Io { .. })));
}
