//! Train, sweep and evaluate runs with their file artifacts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::checkpoint::{adam_arrays, restore_store, store_arrays, Checkpoint};
use super::config::{hex, ErrorSection, ExperimentConfig, ResolvedModel};
use crate::cgraph::ParamStore;
use crate::data::{self, EncodedSample};
use crate::error::{Error, Result};
use crate::errors::{DpnnErrorConfig, ErrorRealization, MpnnErrorConfig, PhysicalSystem};
use crate::mesh::Mpnn;
use crate::optics::Dpnn;
use crate::sepn::SepnSet;
use crate::training::{evaluate, Engine, EvalResult, PhotonicModel, SepnMode, TrainPlan, Trainer};

/// Names accepted in `sweep.engines`.
pub const SWEEP_ENGINES: [&str; 7] = ["baseline", "direct", "pat", "pat-is", "dat", "dat-is", "dat-is-sep"];

/// A constructed architecture.
pub enum BuiltModel {
    Dpnn(Dpnn),
    Mpnn(Mpnn),
}

impl BuiltModel {
    pub fn model(&self) -> &dyn PhotonicModel {
        match self {
            BuiltModel::Dpnn(m) => m,
            BuiltModel::Mpnn(m) => m,
        }
    }

    /// Samples the device errors of this architecture.
    pub fn realize(&self, errors: &ErrorSection, seed: u64) -> Result<ErrorRealization> {
        match self {
            BuiltModel::Dpnn(m) => ErrorRealization::realize_dpnn(&errors.dpnn(), m.num_blocks(), m.config().grid, seed),
            BuiltModel::Mpnn(m) => ErrorRealization::realize_mpnn(&errors.mpnn(), m.config().meshes, m.config().ports, seed),
        }
    }

    /// The error-free system.
    pub fn ideal(&self) -> Result<ErrorRealization> {
        match self {
            BuiltModel::Dpnn(m) => ErrorRealization::realize_dpnn(&DpnnErrorConfig::default(), m.num_blocks(), m.config().grid, 0),
            BuiltModel::Mpnn(m) => ErrorRealization::realize_mpnn(&MpnnErrorConfig::default(), m.config().meshes, m.config().ports, 0),
        }
    }
}

/// Builds the model with its physical parameters drawn from `seeds.params`.
pub fn build_model(cfg: &ExperimentConfig) -> Result<(BuiltModel, ParamStore)> {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seeds.params);
    let model = match cfg.resolve_model()? {
        ResolvedModel::Dpnn(c) => BuiltModel::Dpnn(Dpnn::new(&mut store, c, &mut rng)?),
        ResolvedModel::Mpnn { config, .. } => BuiltModel::Mpnn(Mpnn::new(&mut store, config, &mut rng)?),
    };
    Ok((model, store))
}

/// Adds the SEPNs drawn from `seeds.sepn`.
pub fn build_sepns(cfg: &ExperimentConfig, model: &dyn PhotonicModel, store: &mut ParamStore) -> Result<SepnSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seeds.sepn);
    model.build_sepns(store, cfg.sepn.config(), cfg.sepn.init_std, &mut rng)
}

/// Encoded train and test sets.
pub fn load_data(cfg: &ExperimentConfig) -> Result<(Vec<EncodedSample>, Vec<EncodedSample>)> {
    let dir = cfg.data_dir()?;
    let resolved = cfg.resolve_model()?;
    let mut sets = Vec::with_capacity(2);
    for (train, limit) in [(true, cfg.data.train_samples), (false, cfg.data.test_samples)] {
        let (i, l) = data::split_paths(&dir, train);
        let mut raw = data::load_idx(&i, &l)?;
        if let Some(n) = limit {
            raw = raw.truncate(n);
        }
        let enc = match &resolved {
            ResolvedModel::Dpnn(c) => data::encode_dpnn(&raw, c.grid)?,
            ResolvedModel::Mpnn {
                coeff_grid, normalize_input, ..
            } => data::encode_mpnn(&raw, *coeff_grid, *normalize_input)?,
        };
        sets.push(enc);
    }
    let test = sets.pop().expect("two sets");
    let train = sets.pop().expect("two sets");
    if train.is_empty() || test.is_empty() {
        return Err(Error::config("data", "train and test sets must not be empty"));
    }
    Ok((train, test))
}

/// One row of a convergence log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRow {
    pub stage: String,
    pub epoch: usize,
    pub task_loss: f64,
    pub sim_loss: Option<f64>,
    pub test_acc: f64,
    pub aborted_steps: usize,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.8}"))
}

pub fn convergence_csv(rows: &[EpochRow]) -> String {
    let mut s = String::from("stage,epoch,task_loss,sim_loss,test_acc,aborted_steps\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{:.8},{},{:.6},{}",
            r.stage,
            r.epoch,
            r.task_loss,
            fmt_opt(r.sim_loss),
            r.test_acc,
            r.aborted_steps
        );
    }
    s
}

pub fn confusion_csv(c: &[[usize; 10]; 10]) -> String {
    let mut s = String::from("true,p0,p1,p2,p3,p4,p5,p6,p7,p8,p9\n");
    for (i, row) in c.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(usize::to_string).collect();
        let _ = writeln!(s, "{i},{}", cells.join(","));
    }
    s
}

/// Everything a training run reports.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub name: String,
    pub engine: Engine,
    /// In-silico epochs that preceded PAT or DAT.
    pub pretrain: Vec<EpochRow>,
    /// Epochs of the configured engine.
    pub epochs: Vec<EpochRow>,
    /// Final evaluation on the system the engine targets (ideal for in-silico).
    pub confusion: [[usize; 10]; 10],
    pub engine_acc: f64,
    /// Pre-engine parameters on the errored system (final ones for in-silico).
    pub direct_acc: f64,
    /// Pre-engine parameters on the error-free system (final ones for in-silico).
    pub baseline_acc: f64,
    pub wall_time_s: f64,
    pub config_hash: String,
    pub realization_digest: String,
}

impl RunRecord {
    pub fn convergence_csv(&self) -> String {
        let rows: Vec<EpochRow> = self.pretrain.iter().chain(&self.epochs).cloned().collect();
        convergence_csv(&rows)
    }

    pub fn confusion_csv(&self) -> String {
        confusion_csv(&self.confusion)
    }

    /// SHA-256 over everything except wall time.
    pub fn record_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.convergence_csv().as_bytes());
        h.update(self.confusion_csv().as_bytes());
        h.update(
            format!(
                "{}|{}|{:e}|{:e}|{:e}|{}|{}",
                self.name,
                self.engine.name(),
                self.engine_acc,
                self.direct_acc,
                self.baseline_acc,
                self.config_hash,
                self.realization_digest
            )
            .as_bytes(),
        );
        hex(&h.finalize())
    }

    /// Structured text (TOML).
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "kind = \"train\"");
        let _ = writeln!(s, "name = {:?}", self.name);
        let _ = writeln!(s, "engine = {:?}", self.engine.name());
        let _ = writeln!(s, "epochs = {}", self.epochs.len());
        let _ = writeln!(s, "engine_acc = {:.6}", self.engine_acc);
        let _ = writeln!(s, "direct_acc = {:.6}", self.direct_acc);
        let _ = writeln!(s, "baseline_acc = {:.6}", self.baseline_acc);
        let _ = writeln!(s, "config_hash = {:?}", self.config_hash);
        let _ = writeln!(s, "realization_digest = {:?}", self.realization_digest);
        let _ = writeln!(s, "record_hash = {:?}", self.record_hash());
        let _ = writeln!(s, "wall_time_s = {:.3}", self.wall_time_s);
        s
    }
}

/// One (strength, engine) point of a sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub strength: f64,
    pub engine: String,
    pub accuracy: f64,
    pub realization_digest: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRecord {
    pub name: String,
    pub parameter: String,
    pub rows: Vec<SweepRow>,
    pub convergence: Vec<EpochRow>,
    pub wall_time_s: f64,
    pub config_hash: String,
}

impl SweepRecord {
    pub fn sweep_csv(&self) -> String {
        let mut s = String::from("strength,engine,accuracy,realization_digest\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{:.6},{}", r.strength, r.engine, r.accuracy, r.realization_digest);
        }
        s
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "kind = \"sweep\"");
        let _ = writeln!(s, "name = {:?}", self.name);
        let _ = writeln!(s, "parameter = {:?}", self.parameter);
        let _ = writeln!(s, "points = {}", self.rows.len());
        let _ = writeln!(s, "config_hash = {:?}", self.config_hash);
        let _ = writeln!(s, "wall_time_s = {:.3}", self.wall_time_s);
        s
    }
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    let p = dir.join(name);
    std::fs::write(&p, bytes).map_err(|e| Error::io(p, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Trains for `plan.epochs` epochs, evaluating on `eval_on` after each.
#[allow(clippy::too_many_arguments)]
fn train_stage<'m>(
    model: &'m dyn PhotonicModel,
    store: ParamStore,
    sepns: Option<SepnSet>,
    physical: Option<Box<dyn PhysicalSystem + 'm>>,
    plan: TrainPlan,
    stage: &str,
    data: (&[EncodedSample], &[EncodedSample]),
    eval_on: &dyn PhysicalSystem,
    shuffle_seed: u64,
    rows: &mut Vec<EpochRow>,
) -> Result<Trainer<'m>> {
    let epochs = plan.epochs;
    let mut trainer = Trainer::new(model, store, sepns, physical, plan)?;
    for _ in 0..epochs {
        let r = trainer.train_epoch(data.0, shuffle_seed)?;
        if r.steps == 0 {
            return Err(Error::NonFinite(format!("{stage}: every step of epoch {} was non-finite", r.epoch)));
        }
        let acc = evaluate(model, eval_on, trainer.store(), data.1)?.accuracy();
        rows.push(EpochRow {
            stage: stage.to_string(),
            epoch: r.epoch,
            task_loss: r.task_loss,
            sim_loss: r.sim_loss,
            test_acc: acc,
            aborted_steps: r.aborted_steps,
        });
    }
    Ok(trainer)
}

/// Model, data and systems shared by every stage of a run.
struct Setup {
    built: BuiltModel,
    store: ParamStore,
    train: Vec<EncodedSample>,
    test: Vec<EncodedSample>,
    ideal: ErrorRealization,
    config_hash: String,
}

fn setup(cfg: &ExperimentConfig) -> Result<Setup> {
    cfg.validate()?;
    let (built, store) = build_model(cfg)?;
    let (train, test) = load_data(cfg)?;
    let ideal = built.ideal()?;
    Ok(Setup {
        built,
        store,
        train,
        test,
        ideal,
        config_hash: cfg.hash()?,
    })
}

/// Output of [`run_train`].
pub struct TrainOutcome {
    pub record: RunRecord,
    pub checkpoint: Checkpoint,
}

/// In-silico stage shared by runs and sweeps; returns the starting parameters of PAT/DAT.
fn pretrain(cfg: &ExperimentConfig, s: &Setup, rows: &mut Vec<EpochRow>) -> Result<ParamStore> {
    let plan = cfg.pretrain_plan();
    if plan.epochs == 0 {
        return Ok(s.store.clone());
    }
    let model = s.built.model();
    let ideal = model.physical_system(&s.ideal)?;
    let tr = train_stage(model, s.store.clone(), None, None, plan, "pretrain", (&s.train, &s.test), ideal.as_ref(), cfg.seeds.shuffle, rows)?;
    Ok(tr.into_store())
}

/// Trains per the config; writes artifacts when `output.dir` is set.
pub fn run_train(cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    let start = Instant::now();
    let s = setup(cfg)?;
    let model = s.built.model();
    let real = s.built.realize(&cfg.errors, cfg.seeds.errors)?;
    let ideal_sys = model.physical_system(&s.ideal)?;
    let real_sys = model.physical_system(&real)?;
    let plan = cfg.plan();
    let engine = plan.engine;
    let data = (s.train.as_slice(), s.test.as_slice());
    let mut pre = Vec::new();
    let mut rows = Vec::new();

    let (trainer, baseline_acc, direct_acc, result) = if engine == Engine::InSilico {
        let tr = train_stage(model, s.store.clone(), None, None, plan, engine.name(), data, ideal_sys.as_ref(), cfg.seeds.shuffle, &mut rows)?;
        let result = evaluate(model, ideal_sys.as_ref(), tr.store(), &s.test)?;
        let direct = evaluate(model, real_sys.as_ref(), tr.store(), &s.test)?.accuracy();
        (tr, result.accuracy(), direct, result)
    } else {
        let mut store = pretrain(cfg, &s, &mut pre)?;
        let baseline = evaluate(model, ideal_sys.as_ref(), &store, &s.test)?.accuracy();
        let direct = evaluate(model, real_sys.as_ref(), &store, &s.test)?.accuracy();
        let sepns = match engine {
            Engine::Dat => Some(build_sepns(cfg, model, &mut store)?),
            _ => None,
        };
        let phys = model.physical_system(&real)?;
        let tr = train_stage(model, store, sepns, Some(phys), plan, engine.name(), data, real_sys.as_ref(), cfg.seeds.shuffle, &mut rows)?;
        let result = evaluate(model, real_sys.as_ref(), tr.store(), &s.test)?;
        (tr, baseline, direct, result)
    };

    let record = RunRecord {
        name: cfg.name.clone(),
        engine,
        pretrain: pre,
        epochs: rows,
        confusion: result.confusion,
        engine_acc: result.accuracy(),
        direct_acc,
        baseline_acc,
        wall_time_s: start.elapsed().as_secs_f64(),
        config_hash: s.config_hash.clone(),
        realization_digest: real.digest(),
    };
    let mut arrays = store_arrays(trainer.store());
    arrays.extend(adam_arrays("omega", trainer.adam_omega(), trainer.store()));
    arrays.extend(adam_arrays("lambda", trainer.adam_lambda(), trainer.store()));
    arrays.extend(real.to_arrays().into_iter().map(|(n, v)| (format!("realization/{n}"), v)));
    let checkpoint = Checkpoint {
        config_hash: s.config_hash.clone(),
        realization_digest: record.realization_digest.clone(),
        arrays,
    };
    if let Some(dir) = &cfg.output.dir {
        ensure_dir(dir)?;
        write_file(dir, "config.toml", cfg.echo()?.as_bytes())?;
        write_file(dir, "convergence.csv", record.convergence_csv().as_bytes())?;
        write_file(dir, "confusion.csv", record.confusion_csv().as_bytes())?;
        write_file(dir, "summary.txt", record.summary().as_bytes())?;
        checkpoint.write(&dir.join("checkpoint.bin"))?;
    }
    Ok(TrainOutcome { record, checkpoint })
}

/// Which system a checkpoint is evaluated on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalTarget {
    /// The error-free numerical model.
    Ideal,
    /// The config's error realization.
    Deployed,
}

/// Evaluates checkpointed parameters; the checkpoint must match the config's topology.
pub fn run_eval(cfg: &ExperimentConfig, checkpoint: &Path, target: EvalTarget) -> Result<EvalResult> {
    cfg.validate()?;
    let ck = Checkpoint::read(checkpoint)?;
    let (built, mut store) = build_model(cfg)?;
    let model = built.model();
    if ck.section("param").iter().any(|(n, _)| n.starts_with("sepn.")) {
        build_sepns(cfg, model, &mut store)?;
    }
    restore_store(&ck, &mut store)?;
    let (_, test) = load_data(cfg)?;
    let r = match target {
        EvalTarget::Ideal => built.ideal()?,
        EvalTarget::Deployed => built.realize(&cfg.errors, cfg.seeds.errors)?,
    };
    let result = evaluate(model, model.physical_system(&r)?.as_ref(), &store, &test)?;
    if let Some(dir) = &cfg.output.dir {
        ensure_dir(dir)?;
        let name = match target {
            EvalTarget::Ideal => "eval_ideal_confusion.csv",
            EvalTarget::Deployed => "eval_deployed_confusion.csv",
        };
        write_file(dir, name, confusion_csv(&result.confusion).as_bytes())?;
    }
    Ok(result)
}

/// Plan of a sweep engine derived from the config's training section.
pub fn sweep_plan(cfg: &ExperimentConfig, name: &str) -> Result<Option<TrainPlan>> {
    let base = TrainPlan {
        warmup_epochs: 0,
        ..cfg.plan()
    };
    let (engine, internal_states, sepn_mode) = match name {
        "baseline" | "direct" => return Ok(None),
        "pat" => (Engine::Pat, false, SepnMode::Unitary),
        "pat-is" => (Engine::Pat, true, SepnMode::Unitary),
        "dat" => (Engine::Dat, false, SepnMode::Unitary),
        "dat-is" => (Engine::Dat, true, SepnMode::Unitary),
        "dat-is-sep" => (Engine::Dat, true, SepnMode::Separable),
        other => return Err(Error::config("sweep.engines", format!("unknown engine `{other}`"))),
    };
    // Warm-up applies to DAT without internal states only.
    let warmup_epochs = if name == "dat" { cfg.train.warmup_epochs } else { 0 };
    Ok(Some(TrainPlan {
        engine,
        internal_states,
        sepn_mode,
        warmup_epochs,
        ..base
    }))
}

/// One run per (strength, engine); every engine at a strength sees the same realization.
///
/// PAT and DAT start from the shared in-silico pretraining; `baseline` and `direct` use that
/// starting point trained in silico for the same number of epochs, evaluated on the ideal and
/// the errored system respectively.
pub fn run_sweep(cfg: &ExperimentConfig, axis: Option<&[f64]>) -> Result<SweepRecord> {
    let start = Instant::now();
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::config("sweep", "a [sweep] section is required"))?;
    let axis: Vec<f64> = axis.map_or_else(|| sweep.axis.clone(), <[f64]>::to_vec);
    if axis.is_empty() {
        return Err(Error::config("sweep.axis", "must not be empty"));
    }
    if let Some(v) = axis.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::config("sweep.axis", format!("strength {v} is not a finite non-negative number")));
    }
    for e in &sweep.engines {
        sweep_plan(cfg, e)?;
    }
    for &v in &axis {
        cfg.errors.clone().set(&sweep.parameter, v)?;
    }
    let s = setup(cfg)?;
    let model = s.built.model();
    let data = (s.train.as_slice(), s.test.as_slice());
    let mut convergence = Vec::new();
    let start_store = pretrain(cfg, &s, &mut convergence)?;
    let ideal_sys = model.physical_system(&s.ideal)?;
    // The in-silico reference gets the same number of engine epochs as PAT and DAT.
    let reference = if sweep.engines.iter().any(|e| e == "baseline" || e == "direct") {
        let plan = TrainPlan {
            engine: Engine::InSilico,
            internal_states: false,
            sepn_mode: SepnMode::Unitary,
            warmup_epochs: 0,
            ..cfg.plan()
        };
        let tr = train_stage(model, start_store.clone(), None, None, plan, "insilico", data, ideal_sys.as_ref(), cfg.seeds.shuffle, &mut convergence)?;
        tr.into_store()
    } else {
        start_store.clone()
    };
    let baseline = evaluate(model, ideal_sys.as_ref(), &reference, &s.test)?.accuracy();

    let mut rows = Vec::new();
    for &v in &axis {
        let mut errors = cfg.errors.clone();
        errors.set(&sweep.parameter, v)?;
        let real = s.built.realize(&errors, cfg.seeds.errors)?;
        let digest = real.digest();
        let real_sys = model.physical_system(&real)?;
        for name in &sweep.engines {
            let accuracy = match sweep_plan(cfg, name)? {
                None if name == "baseline" => baseline,
                None => evaluate(model, real_sys.as_ref(), &reference, &s.test)?.accuracy(),
                Some(plan) => {
                    let mut store = start_store.clone();
                    let sepns = match plan.engine {
                        Engine::Dat => Some(build_sepns(cfg, model, &mut store)?),
                        _ => None,
                    };
                    let stage = format!("{name}@{v}");
                    let phys = model.physical_system(&real)?;
                    let tr = train_stage(model, store, sepns, Some(phys), plan, &stage, data, real_sys.as_ref(), cfg.seeds.shuffle, &mut convergence)?;
                    evaluate(model, real_sys.as_ref(), tr.store(), &s.test)?.accuracy()
                }
            };
            rows.push(SweepRow {
                strength: v,
                engine: name.clone(),
                accuracy,
                realization_digest: digest.clone(),
            });
        }
    }
    let record = SweepRecord {
        name: cfg.name.clone(),
        parameter: sweep.parameter.clone(),
        rows,
        convergence,
        wall_time_s: start.elapsed().as_secs_f64(),
        config_hash: s.config_hash,
    };
    if let Some(dir) = &cfg.output.dir {
        ensure_dir(dir)?;
        write_file(dir, "config.toml", cfg.echo()?.as_bytes())?;
        write_file(dir, "sweep.csv", record.sweep_csv().as_bytes())?;
        write_file(dir, "convergence.csv", convergence_csv(&record.convergence).as_bytes())?;
        write_file(dir, "summary.txt", record.summary().as_bytes())?;
    }
    Ok(record)
}

fn read_text(p: &Path) -> Result<String> {
    std::fs::read_to_string(p).map_err(|e| Error::io(p, e))
}

fn summary_field(table: &toml::Table, key: &str) -> String {
    match table.get(key) {
        Some(toml::Value::String(s)) => s.clone(),
        Some(toml::Value::Float(f)) => format!("{:.2}", 100.0 * f),
        Some(v) => v.to_string(),
        None => "-".into(),
    }
}

/// Collates run directories into plain-text tables (accuracies in percent).
pub fn report(dirs: &[PathBuf]) -> Result<String> {
    let mut runs = String::from("| run | engine | direct | engine | baseline |\n|---|---|---|---|---|\n");
    let mut nruns = 0;
    let mut sweeps = String::new();
    for dir in dirs {
        let path = dir.join("summary.txt");
        let table: toml::Table = read_text(&path)?.parse().map_err(|e: toml::de::Error| Error::Format {
            path: path.clone(),
            offset: e.span().map_or(0, |s| s.start as u64),
            reason: e.message().to_string(),
        })?;
        match table.get("kind").and_then(toml::Value::as_str) {
            Some("train") => {
                nruns += 1;
                let _ = writeln!(
                    runs,
                    "| {} | {} | {} | {} | {} |",
                    summary_field(&table, "name"),
                    summary_field(&table, "engine"),
                    summary_field(&table, "direct_acc"),
                    summary_field(&table, "engine_acc"),
                    summary_field(&table, "baseline_acc")
                );
            }
            Some("sweep") => sweeps.push_str(&pivot_sweep(&summary_field(&table, "name"), &summary_field(&table, "parameter"), &dir.join("sweep.csv"))?),
            _ => {
                return Err(Error::Format {
                    path,
                    offset: 0,
                    reason: "summary has no recognised `kind`".into(),
                })
            }
        }
    }
    let mut out = String::new();
    if nruns > 0 {
        out.push_str(&runs);
    }
    if !sweeps.is_empty() {
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str(&sweeps);
    }
    Ok(out)
}

/// Strength × engine table of a sweep CSV.
fn pivot_sweep(name: &str, parameter: &str, csv: &Path) -> Result<String> {
    let text = read_text(csv)?;
    let mut engines: Vec<String> = Vec::new();
    let mut strengths: Vec<String> = Vec::new();
    let mut cells: Vec<(String, String, f64)> = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let acc = f.get(2).and_then(|v| v.parse::<f64>().ok()).ok_or_else(|| Error::Format {
            path: csv.to_path_buf(),
            offset: i as u64,
            reason: format!("malformed sweep row {i}"),
        })?;
        if !engines.iter().any(|e| e == f[1]) {
            engines.push(f[1].to_string());
        }
        if !strengths.iter().any(|s| s == f[0]) {
            strengths.push(f[0].to_string());
        }
        cells.push((f[0].to_string(), f[1].to_string(), acc));
    }
    let mut s = format!("{name}: accuracy (%) vs {parameter}\n| {parameter} | {} |\n|---|", engines.join(" | "));
    s.push_str(&"---|".repeat(engines.len()));
    s.push('\n');
    for st in &strengths {
        let _ = write!(s, "| {st} |");
        for e in &engines {
            match cells.iter().find(|c| &c.0 == st && &c.1 == e) {
                Some(c) => {
                    let _ = write!(s, " {:.2} |", 100.0 * c.2);
                }
                None => s.push_str(" - |"),
            }
        }
        s.push('\n');
    }
    Ok(s)
}
