use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use latte::data::{load_eegc, save_eegc, split_dataset, synth_generate, Dataset, Splits};
use latte::layers::AdapterPolicy;
use latte::model::{load_checkpoint, save_checkpoint, Checkpoint, LatteModel, PretrainDecoder};
use latte::training::{
    evaluate, finetune_subject, pretrain as run_pretrain, run_loso, train_cross_subject,
    LosoConfig, StepKind,
};
use serde_json::{json, Value};

use crate::config::{EvalSplit, RunConfig};
use crate::report::{eval_json, record_json, write_json, MetricsLog};
use crate::{config_err, CliError, CliResult, Common};

fn input<'a>(path: &'a Option<PathBuf>, flag: &str) -> CliResult<&'a Path> {
    let p = path
        .as_deref()
        .ok_or_else(|| CliError::Config(format!("{flag} is required for this command")))?;
    if !p.is_file() {
        return Err(CliError::Missing(p.to_path_buf()));
    }
    Ok(p)
}

fn out_dir(common: &Common) -> CliResult<PathBuf> {
    let dir = common
        .out
        .clone()
        .ok_or_else(|| CliError::Config("--out is required for this command".into()))?;
    std::fs::create_dir_all(&dir)
        .map_err(|e| CliError::Failed(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

fn load_data(common: &Common) -> CliResult<Dataset> {
    Ok(load_eegc(input(&common.data, "--data")?)?)
}

fn load_ckpt(common: &Common) -> CliResult<Checkpoint> {
    Ok(load_checkpoint(input(&common.checkpoint, "--checkpoint")?)?)
}

fn splits(ds: &Dataset, cfg: &RunConfig) -> CliResult<Splits> {
    Ok(split_dataset(ds, &cfg.split_scheme(&ds.meta), cfg.seed)?)
}

fn with_metadata(model: LatteModel, command: &str, cfg: &RunConfig) -> Checkpoint {
    let mut ck = Checkpoint::new(model);
    ck.metadata = vec![
        ("command".into(), command.into()),
        ("seed".into(), cfg.seed.to_string()),
        ("config_hash".into(), cfg.hash()),
    ];
    ck
}

/// Runs `f` with a metrics log and surfaces the first write error.
fn logged<T>(
    path: &Path,
    f: impl FnOnce(&mut dyn FnMut(&latte::training::EpochRecord)) -> latte::Result<T>,
) -> CliResult<T> {
    let mut log = MetricsLog::create(path)?;
    let mut failure = None;
    let out = f(&mut |r| {
        if let Err(e) = log.record(r) {
            failure.get_or_insert(e);
        }
    })?;
    match failure {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

fn header(command: &str, cfg: &RunConfig) -> BTreeMap<String, Value> {
    let mut m = BTreeMap::new();
    m.insert("command".into(), json!(command));
    m.insert("seed".into(), json!(cfg.seed));
    m.insert("config_hash".into(), json!(cfg.hash()));
    m
}

pub fn synth(common: &Common, cfg: &RunConfig) -> CliResult<()> {
    let path = match &common.data {
        Some(p) => p.clone(),
        None => out_dir(common)?.join("dataset.eegc"),
    };
    let ds = synth_generate(&cfg.synth_spec()).map_err(config_err)?;
    save_eegc(&ds, &path)?;
    println!(
        "wrote {} trials ({} subjects, {} classes, {}x{}) to {}",
        ds.trials.len(),
        ds.meta.subjects,
        ds.meta.classes,
        ds.meta.channels,
        ds.meta.timesteps,
        path.display()
    );
    Ok(())
}

pub fn pretrain(common: &Common, cfg: &RunConfig) -> CliResult<()> {
    let ds = load_data(common)?;
    let out = out_dir(common)?;
    let mcfg = cfg.model_config(&ds.meta).map_err(config_err)?;
    let pcfg = cfg.pretrain_config(mcfg.timesteps).map_err(config_err)?;
    let sp = splits(&ds, cfg)?;
    let model = LatteModel::new(&mcfg, &[], cfg.seed)?;
    let decoder = PretrainDecoder::new(&mcfg, cfg.seed)?;
    let result = run_pretrain(model, decoder, &ds, &sp.train, &pcfg)?;

    let mut log = MetricsLog::create(&out.join("pretrain.tsv"))?;
    log.line("epoch\treconstruction")?;
    for (e, v) in result.reconstruction.iter().enumerate() {
        log.line(&format!("{e}\t{v:.6}"))?;
    }
    let mut model = result.model;
    model.quantize_f32();
    save_checkpoint(
        &with_metadata(model, "pretrain", cfg),
        &out.join("pretrained.latc"),
    )?;

    let recon = |k| result.steps.iter().filter(|s| **s == k).count();
    let mut report = header("pretrain", cfg);
    report.insert("trials".into(), json!(sp.train.len()));
    report.insert(
        "reconstruction_steps".into(),
        json!(recon(StepKind::Reconstruction)),
    );
    report.insert(
        "cut_and_fill_steps".into(),
        json!(recon(StepKind::CutAndFill)),
    );
    report.insert("reconstruction".into(), json!(result.reconstruction));
    write_json(&out.join("report.json"), &json!(report))?;
    println!(
        "reconstruction error {:.6} -> {:.6}",
        result.reconstruction[0],
        result.reconstruction.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

pub fn train(common: &Common, cfg: &RunConfig) -> CliResult<()> {
    let ds = load_data(common)?;
    let pretrained = match &common.checkpoint {
        Some(_) => Some(load_ckpt(common)?),
        None => None,
    };
    let out = out_dir(common)?;
    let mcfg = cfg.model_config(&ds.meta).map_err(config_err)?;
    let tcfg = cfg.train_config(&ds.meta).map_err(config_err)?;
    let sp = splits(&ds, cfg)?;
    let mut model = LatteModel::new(&mcfg, &ds.subject_ids(), cfg.seed)?;
    if let Some(p) = &pretrained {
        model.adopt_pretrained(&p.model)?;
    }
    let outcome = logged(&out.join("metrics.tsv"), |log| {
        train_cross_subject(model, &ds, &sp.train, &sp.val, &tcfg, log)
    })?;
    let mut best = outcome.model;
    best.quantize_f32();
    let test = evaluate(&best, &ds, &sp.test, AdapterPolicy::ZeroForUnknown)?;
    let mut ck = with_metadata(best, "train", cfg);
    if let Some(e) = outcome.best_epoch {
        ck.metadata.push(("best_epoch".into(), e.to_string()));
    }
    save_checkpoint(&ck, &out.join("model.latc"))?;

    let mut report = header("train", cfg);
    report.insert("selection".into(), json!(tcfg.selection.name()));
    report.insert("best_epoch".into(), json!(outcome.best_epoch));
    report.insert("pretrained".into(), json!(pretrained.is_some()));
    report.insert(
        "epochs".into(),
        json!(outcome.records.iter().map(record_json).collect::<Vec<_>>()),
    );
    report.insert("test".into(), eval_json(&test));
    write_json(&out.join("report.json"), &json!(report))?;
    print_eval("test", &test);
    Ok(())
}

pub fn finetune(common: &Common, cfg: &RunConfig) -> CliResult<()> {
    let ds = load_data(common)?;
    let ck = load_ckpt(common)?;
    let out = out_dir(common)?;
    let tcfg = cfg.train_config(&ds.meta).map_err(config_err)?;
    let fcfg = cfg.finetune_config().map_err(config_err)?;
    let sp = splits(&ds, cfg)?;
    let subjects = match cfg.subject {
        Some(s) => vec![s],
        None => ds.subject_ids(),
    };
    let mut per_subject = Vec::new();
    for s in subjects {
        let test: Vec<usize> = sp
            .test
            .iter()
            .copied()
            .filter(|&i| ds.trials[i].subject == s)
            .collect();
        if test.is_empty() {
            return Err(CliError::Failed(format!("subject {s} has no test trials")));
        }
        let before = evaluate(&ck.model, &ds, &test, AdapterPolicy::ZeroForUnknown)?;
        let outcome = logged(&out.join(format!("metrics_s{s}.tsv")), |log| {
            finetune_subject(
                ck.model.clone(),
                s,
                &ds,
                &sp.train,
                &sp.val,
                &tcfg,
                &fcfg,
                log,
            )
        })?;
        let mut model = outcome.model;
        model.quantize_f32();
        let after = evaluate(&model, &ds, &test, AdapterPolicy::ZeroForUnknown)?;
        let mut out_ck = with_metadata(model, "finetune", cfg);
        out_ck.metadata.push(("subject".into(), s.to_string()));
        save_checkpoint(&out_ck, &out.join(format!("finetuned_s{s}.latc")))?;
        println!(
            "subject {s}: accuracy {:.6} -> {:.6}",
            before.accuracy, after.accuracy
        );
        per_subject.push(json!({
            "subject": s,
            "best_epoch": outcome.best_epoch,
            "before": eval_json(&before),
            "after": eval_json(&after),
            "epochs": outcome.records.iter().map(record_json).collect::<Vec<_>>(),
        }));
    }
    let mut report = header("finetune", cfg);
    report.insert("subjects".into(), json!(per_subject));
    write_json(&out.join("report.json"), &json!(report))
}

pub fn loso(common: &Common, cfg: &RunConfig) -> CliResult<()> {
    let ds = load_data(common)?;
    let out = out_dir(common)?;
    let mcfg = cfg.model_config(&ds.meta).map_err(config_err)?;
    let lcfg = LosoConfig {
        train: cfg.train_config(&ds.meta).map_err(config_err)?,
        scheme: cfg.split_scheme(&ds.meta),
        seed: cfg.seed,
        pretrain: None,
        model: mcfg,
    };
    let mut logs: BTreeMap<u32, MetricsLog> = BTreeMap::new();
    let mut failure = None;
    let result = run_loso(&ds, &lcfg, &mut |fold, r| {
        let path = out.join(format!("metrics_fold{fold}.tsv"));
        let res = match logs.get_mut(&fold) {
            Some(log) => log.record(r),
            None => MetricsLog::create(&path).and_then(|mut log| {
                let res = log.record(r);
                logs.insert(fold, log);
                res
            }),
        };
        if let Err(e) = res {
            failure.get_or_insert(e);
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    let folds: Vec<Value> = result
        .folds
        .iter()
        .map(|f| {
            println!("fold {}: accuracy {:.6}", f.held_out, f.accuracy);
            json!({
                "held_out": f.held_out,
                "train_subjects": f.train_subjects,
                "train_trials": f.train_trials,
                "val_trials": f.val_trials,
                "test_trials": f.test_trials,
                "best_epoch": f.best_epoch,
                "accuracy": f.accuracy,
                "auc": f.auc,
                "adapter_probe": f.adapter_probe,
            })
        })
        .collect();
    let mut report = header("loso", cfg);
    report.insert("folds".into(), json!(folds));
    report.insert("mean_accuracy".into(), json!(result.mean_accuracy));
    report.insert("std_accuracy".into(), json!(result.std_accuracy));
    report.insert("mean_auc".into(), json!(result.mean_auc));
    report.insert("std_auc".into(), json!(result.std_auc));
    write_json(&out.join("report.json"), &json!(report))?;
    println!(
        "mean accuracy {:.6} ± {:.6}",
        result.mean_accuracy, result.std_accuracy
    );
    Ok(())
}

fn print_eval(name: &str, e: &latte::training::EvalResult) {
    println!("{name} accuracy {:.6}", e.accuracy);
    if let Some(a) = e.auc {
        println!("{name} auc {a:.6}");
    }
}

pub fn eval(common: &Common, cfg: &RunConfig) -> CliResult<()> {
    let ds = load_data(common)?;
    let ck = load_ckpt(common)?;
    let indices = match cfg.eval_split {
        EvalSplit::All => (0..ds.trials.len()).collect(),
        EvalSplit::Train => splits(&ds, cfg)?.train,
        EvalSplit::Val => splits(&ds, cfg)?.val,
        EvalSplit::Test => splits(&ds, cfg)?.test,
    };
    let result = evaluate(&ck.model, &ds, &indices, AdapterPolicy::ZeroForUnknown)?;
    print_eval(&cfg.get("eval_split").expect("known key"), &result);
    if common.out.is_some() {
        let out = out_dir(common)?;
        let mut report = header("eval", cfg);
        report.insert("split".into(), json!(cfg.get("eval_split")));
        report.insert("result".into(), eval_json(&result));
        write_json(&out.join("report.json"), &json!(report))?;
    }
    Ok(())
}

pub fn inspect(common: &Common, _cfg: &RunConfig) -> CliResult<()> {
    if common.checkpoint.is_none() && common.data.is_none() {
        return Err(CliError::Config(
            "inspect needs --checkpoint and/or --data".into(),
        ));
    }
    if common.checkpoint.is_some() {
        let ck = load_ckpt(common)?;
        let m = &ck.model;
        let r = m.parameter_report();
        println!("checkpoint");
        println!("  curvature {}", m.curvature.value());
        println!("  subjects {:?}", m.subjects);
        println!(
            "  parameters: {} shared, {} subject-specific ({} per subject), {} frozen",
            r.shared, r.subject_specific, r.per_subject, r.frozen
        );
        for (k, v) in &ck.metadata {
            println!("  meta {k} = {v}");
        }
        for line in m.config.to_text().lines() {
            println!("  config {line}");
        }
    }
    if common.data.is_some() {
        let ds = load_data(common)?;
        let m = &ds.meta;
        println!("dataset");
        println!(
            "  task {}, {} channels x {} samples, {} classes, {} subjects, {} sessions",
            m.task.name(),
            m.channels,
            m.timesteps,
            m.classes,
            m.subjects,
            m.sessions
        );
        println!("  trials {}", ds.trials.len());
        for s in ds.subject_ids() {
            let mut counts = vec![0usize; m.classes];
            for t in ds.trials.iter().filter(|t| t.subject == s) {
                counts[t.label as usize] += 1;
            }
            println!("  subject {s}: labels {counts:?}");
        }
    }
    Ok(())
}
