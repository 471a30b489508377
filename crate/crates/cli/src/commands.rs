//! Subcommand bodies. Each returns the JSON summary printed on stdout.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use dpi_core::bayes::{uncertainty, McPrediction, UncertaintyKind};
use dpi_core::checkpoint::Checkpoint;
use dpi_core::config::RunConfig;
use dpi_core::data::{
    format_records, generate_synthetic, presplit, random_split, Dataset, IngestReport, ProteinResolver, Split,
    SyntheticConfig,
};
use dpi_core::experiments::{confidence_curve as curve, curve_csv, noise_csv, noise_sweep as sweep, size_csv, size_sweep as ssweep};
use dpi_core::protein::load_embeddings;
use dpi_core::smiles::{parse_smiles as parse, write_smiles};
use dpi_core::train::{evaluate as eval_scores, mc_scores, predict_mc, predict_plain, train as fit, Evaluation};
use serde::Serialize;
use serde_json::{json, Value};

use crate::{ConfigArgs, EvalArgs, Failure};

/// JSON summary for stdout; empty when stdout already carried the output
/// table.
type CmdResult = Result<String, Failure>;

/// Writes to stdout, ignoring a closed pipe.
pub fn emit(text: &str) {
    use std::io::Write;
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn to_json<T: Serialize>(v: &T) -> CmdResult {
    serde_json::to_string_pretty(v).map_err(|e| Failure::Runtime(format!("serializing output: {e}")))
}

/// Missing inputs are usage errors, unlike unreadable or malformed ones.
fn require(path: &Path) -> Result<(), Failure> {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("input file {} does not exist", path.display())))
    }
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn write(dir: &Path, name: &str, contents: &[u8]) -> Result<(), Failure> {
    let p = dir.join(name);
    std::fs::write(&p, contents).map_err(|e| Failure::Core(dpi_core::Error::io(&p, e)))
}

fn ensure_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Core(dpi_core::Error::io(dir, e)))
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig, Failure> {
    let mut cfg = match &args.config {
        Some(p) => {
            require(p)?;
            let text = std::fs::read_to_string(p).map_err(|e| dpi_core::Error::io(p, e))?;
            RunConfig::from_text(&text)?
        }
        None => RunConfig::default(),
    };
    for o in &args.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got {o:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn resolver(cfg: &RunConfig, embeddings: Option<&PathBuf>) -> Result<ProteinResolver, Failure> {
    match embeddings {
        Some(p) => {
            require(p)?;
            Ok(ProteinResolver::with_embeddings(load_embeddings(p)?, cfg.stub())?)
        }
        None => Ok(ProteinResolver::stub_only(cfg.stub())),
    }
}

fn warn_rows(path: &Path, report: &IngestReport) {
    for e in &report.errors {
        eprintln!("warning: {}:{}: skipped row: {}", file_name(path), e.line, e.reason);
    }
}

fn ingest(data: &mut Dataset, path: &Path) -> Result<IngestReport, Failure> {
    require(path)?;
    let report = data.ingest_file(path)?;
    warn_rows(path, &report);
    Ok(report)
}

fn sorted(set: HashSet<String>) -> Vec<String> {
    let mut v: Vec<String> = set.into_iter().collect();
    v.sort();
    v
}

pub fn train(args: &ConfigArgs, data_path: &Path, extra: Option<(PathBuf, PathBuf)>, out: &Path) -> CmdResult {
    let cfg = load_config(args)?;
    let mut data = Dataset::new(resolver(&cfg, args.embeddings.as_ref())?);
    let train_rows = ingest(&mut data, data_path)?;
    let split = match &extra {
        Some((valid, test)) => {
            let v = ingest(&mut data, valid)?;
            let t = ingest(&mut data, test)?;
            presplit(train_rows.accepted, v.accepted, t.accepted)?
        }
        None => random_split(data.len(), cfg.split_seed())?,
    };
    ensure_dir(out)?;
    let outcome = fit(&cfg.model, &cfg.train, &data, &split)?;
    let train_proteins = data.protein_keys(&split.train);
    let train_drugs = data.drug_keys(&split.train);
    let test_eval = evaluate_split(&outcome.model, &cfg, &data, &split.test, &train_proteins, &train_drugs, cfg.mc_samples)?;

    let mut history = String::from("epoch,train_loss,val_roc_auc\n");
    for h in &outcome.history {
        let _ = writeln!(history, "{},{},{}", h.epoch, h.train_loss, h.val_roc_auc);
    }
    let ckpt = Checkpoint {
        config: cfg.clone(),
        model: outcome.model,
        train_proteins: sorted(train_proteins),
        train_drugs: sorted(train_drugs),
    };
    ckpt.save(&out.join("checkpoint.bin"))?;
    write(out, "history.csv", history.as_bytes())?;
    let test_records: Vec<_> = split.test.iter().map(|&i| data.records[i].clone()).collect();
    write(out, "test.tsv", format_records(&test_records).as_bytes())?;

    let summary = json!({
        "command": "train",
        "data": file_name(data_path),
        "records": data.len(),
        "split": {"train": split.train.len(), "valid": split.valid.len(), "test": split.test.len()},
        "parameters": ckpt.model.num_parameters(),
        "epochs_run": outcome.history.len(),
        "best_epoch": outcome.best_epoch,
        "best_val_roc_auc": outcome.best_val_roc_auc,
        "test": test_eval,
        "config": cfg.to_text(),
        "artifacts": ["checkpoint.bin", "history.csv", "metrics.json", "test.tsv"],
    });
    let text = to_json(&summary)?;
    write(out, "metrics.json", format!("{text}\n").as_bytes())?;
    Ok(text)
}

fn evaluate_split(
    model: &dpi_core::model::DpiModel,
    cfg: &RunConfig,
    data: &Dataset,
    idx: &[usize],
    proteins: &HashSet<String>,
    drugs: &HashSet<String>,
    mc_samples: usize,
) -> Result<Evaluation, Failure> {
    let scores = if mc_samples == 0 {
        predict_plain(model, data, idx, None)?
    } else {
        let mc = dpi_core::bayes::McConfig {
            samples: mc_samples,
            ..cfg.mc()
        };
        mc_scores(&predict_mc(model, data, idx, &mc, None)?)
    };
    Ok(eval_scores(&scores, data, idx, proteins, drugs, mc_samples)?)
}

/// A checkpoint plus the labelled table it is applied to.
struct Loaded {
    ckpt: Checkpoint,
    data: Dataset,
    idx: Vec<usize>,
    mc_samples: usize,
}

impl Loaded {
    fn open(args: &EvalArgs) -> Result<Self, Failure> {
        require(&args.checkpoint)?;
        let ckpt = Checkpoint::load(&args.checkpoint)?;
        let mut data = Dataset::new(resolver(&ckpt.config, args.embeddings.as_ref())?);
        ingest(&mut data, &args.data)?;
        if data.is_empty() {
            return Err(Failure::Core(dpi_core::Error::Data("no records to evaluate".into())));
        }
        let idx = (0..data.len()).collect();
        let mc_samples = args.mc_samples.unwrap_or(ckpt.config.mc_samples);
        Ok(Self {
            ckpt,
            data,
            idx,
            mc_samples,
        })
    }

    fn mc(&self) -> Result<dpi_core::bayes::McConfig, Failure> {
        if self.mc_samples == 0 {
            return Err(Failure::Usage("this command needs --mc-samples of at least 1".into()));
        }
        Ok(dpi_core::bayes::McConfig {
            samples: self.mc_samples,
            ..self.ckpt.config.mc()
        })
    }

    fn evaluation(&self) -> Result<Evaluation, Failure> {
        let proteins: HashSet<String> = self.ckpt.train_proteins.iter().cloned().collect();
        let drugs: HashSet<String> = self.ckpt.train_drugs.iter().cloned().collect();
        evaluate_split(&self.ckpt.model, &self.ckpt.config, &self.data, &self.idx, &proteins, &drugs, self.mc_samples)
    }

    fn predictions(&self) -> Result<Vec<McPrediction>, Failure> {
        Ok(predict_mc(&self.ckpt.model, &self.data, &self.idx, &self.mc()?, None)?)
    }
}

fn output_dir(args: &EvalArgs) -> Result<Option<&Path>, Failure> {
    match &args.out {
        Some(o) => {
            ensure_dir(o)?;
            Ok(Some(o.as_path()))
        }
        None => Ok(None),
    }
}

pub fn evaluate(args: &EvalArgs) -> CmdResult {
    let l = Loaded::open(args)?;
    let text = to_json(&l.evaluation()?)?;
    if let Some(dir) = output_dir(args)? {
        write(dir, "metrics.json", format!("{text}\n").as_bytes())?;
    }
    Ok(text)
}

pub fn predict(args: &EvalArgs) -> CmdResult {
    let l = Loaded::open(args)?;
    let mut csv = String::from("index,label,probability,epistemic,aleatoric,total\n");
    if l.mc_samples == 0 {
        let p = predict_plain(&l.ckpt.model, &l.data, &l.idx, None)?;
        for (i, p) in p.iter().enumerate() {
            let _ = writeln!(csv, "{i},{},{p},,,", l.data.records[i].label);
        }
    } else {
        for (i, p) in l.predictions()?.iter().enumerate() {
            let u = UncertaintyKind::ALL.map(|k| uncertainty(p, k));
            let _ = writeln!(
                csv,
                "{i},{},{},{},{},{}",
                l.data.records[i].label, p.mean[1], u[0], u[1], u[2]
            );
        }
    }
    let Some(dir) = output_dir(args)? else {
        emit(&csv);
        return Ok(String::new());
    };
    write(dir, "predictions.csv", csv.as_bytes())?;
    to_json(&json!({
        "command": "predict",
        "data": file_name(&args.data),
        "records": l.data.len(),
        "mc_samples": l.mc_samples,
    }))
}

pub fn noise_sweep(args: &EvalArgs, sigmas: Option<Vec<f64>>, noise_seed: Option<u64>) -> CmdResult {
    let l = Loaded::open(args)?;
    let sigmas = sigmas.unwrap_or_else(|| l.ckpt.config.sigmas.clone());
    let seed = noise_seed.unwrap_or(l.ckpt.config.noise_seed);
    let rows = sweep(&l.ckpt.model, &l.data, &l.idx, &sigmas, &l.mc()?, seed)?;
    if let Some(dir) = output_dir(args)? {
        write(dir, "noise_sweep.csv", noise_csv(&rows).as_bytes())?;
    }
    to_json(&json!({
        "command": "noise-sweep",
        "noise_target": "pooled protein embedding, before the protein encoder",
        "noise_seed": seed,
        "unperturbed": l.evaluation()?,
        "rows": rows,
    }))
}

pub fn size_sweep(args: &ConfigArgs, data_path: &Path, fractions: Option<Vec<f64>>, out: &Path) -> CmdResult {
    let cfg = load_config(args)?;
    let mut data = Dataset::new(resolver(&cfg, args.embeddings.as_ref())?);
    ingest(&mut data, data_path)?;
    let split: Split = random_split(data.len(), cfg.split_seed())?;
    let fractions = fractions.unwrap_or_else(|| cfg.fractions.clone());
    let rows = ssweep(&data, &split, &fractions, &cfg.model, &cfg.train, &cfg.mc())?;
    ensure_dir(out)?;
    write(out, "size_sweep.csv", size_csv(&rows).as_bytes())?;
    to_json(&json!({
        "command": "size-sweep",
        "data": file_name(data_path),
        "rows": rows,
    }))
}

pub fn confidence_curve(args: &EvalArgs, kind: Option<&str>) -> CmdResult {
    let kinds = match kind {
        Some(k) => vec![k.parse::<UncertaintyKind>()?],
        None => UncertaintyKind::ALL.to_vec(),
    };
    let l = Loaded::open(args)?;
    let preds = l.predictions()?;
    let labels = l.data.labels(&l.idx);
    let mut points = Vec::new();
    for k in kinds {
        points.extend(curve(&preds, &labels, k)?);
    }
    if let Some(dir) = output_dir(args)? {
        write(dir, "confidence_curve.csv", curve_csv(&points).as_bytes())?;
    }
    to_json(&json!({
        "command": "confidence-curve",
        "mc_samples": l.mc_samples,
        "points": points,
    }))
}

pub fn parse_smiles(smiles: &str) -> CmdResult {
    let m = parse(smiles).map_err(dpi_core::Error::from)?;
    let atoms: Vec<Value> = m
        .atoms
        .iter()
        .enumerate()
        .map(|(i, a)| {
            json!({
                "index": i,
                "element": a.element.symbol(),
                "charge": a.formal_charge,
                "aromatic": a.aromatic,
                "degree": a.degree,
                "hydrogens": a.total_h(),
                "hybridization": format!("{:?}", m.hybridization(i)),
                "ring_sizes": m.atom_ring_sizes(i),
            })
        })
        .collect();
    let bonds: Vec<Value> = m
        .bonds
        .iter()
        .map(|b| {
            json!({
                "a": b.a,
                "b": b.b,
                "order": b.order.symbol().to_string(),
                "in_ring": b.in_ring,
                "conjugated": b.conjugated,
            })
        })
        .collect();
    to_json(&json!({
        "input": smiles,
        "canonical_form": write_smiles(&m),
        "atoms": atoms,
        "bonds": bonds,
        "rings": m.rings,
    }))
}

pub fn gen_synthetic(pairs: usize, seed: u64, noise: f64, out: Option<&Path>) -> CmdResult {
    if !(0.0..=1.0).contains(&noise) {
        return Err(Failure::Usage(format!("--noise must lie in [0, 1], got {noise}")));
    }
    let cfg = SyntheticConfig {
        pairs,
        seed,
        label_noise: noise,
        ..SyntheticConfig::default()
    };
    let records = generate_synthetic(&cfg)?;
    let text = format_records(&records);
    let positives = records.iter().filter(|r| r.label == 1).count();
    let Some(p) = out else {
        emit(&text);
        return Ok(String::new());
    };
    std::fs::write(p, &text).map_err(|e| dpi_core::Error::io(p, e))?;
    to_json(&json!({
        "command": "gen-synthetic",
        "pairs": records.len(),
        "positives": positives,
        "config": cfg,
    }))
}
