use std::path::Path;

use serde::Serialize;

use rationale_core::checkpoint::Checkpoint;
use rationale_core::corpus::{Split, Vocabulary};
use rationale_core::encoder::ModelParams;
use rationale_core::experiment::{run_grid, run_skew, train_and_evaluate, GridCell, SkewArm, SkewMode};
use rationale_core::probe::{audit_inequality, centroid_report, estimate_lipschitz, sample_pairs, AuditReport, CentroidReport, ProbeReport};
use rationale_core::scorer::{evaluate, MetricsReport};
use rationale_core::synth::{make_synthetic_splits, synthetic_embeddings};

use crate::artifacts::{
    begin_run, corpus_path, load_inputs, pick_split, write_csv, write_history, write_json, CHECKPOINT_FILE,
    EMBEDDINGS_FILE,
};
use crate::settings::Settings;
use crate::Failure;

pub fn synth(s: &Settings) -> Result<(), Failure> {
    let spec = s.synth_spec();
    spec.validate()?;
    let out = begin_run("synth", s, &[])?;
    let splits = make_synthetic_splits(&spec, s.dev_count, s.annotation_count)?;
    for corpus in [&splits.train, &splits.dev, &splits.annotation] {
        corpus.save(&corpus_path(&out, corpus.split))?;
    }
    let vocab = &splits.train.vocab;
    synthetic_embeddings(vocab, s.embedding_dim, spec.seed).save(vocab, &out.join(EMBEDDINGS_FILE))?;
    println!(
        "wrote {} train, {} dev, {} annotation examples and {}-d vectors for {} tokens to {}",
        splits.train.len(),
        splits.dev.len(),
        splits.annotation.len(),
        s.embedding_dim,
        vocab.len(),
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct TrainMetrics {
    epochs_run: usize,
    best_epoch: usize,
    best_dev_acc: f64,
    /// Annotation-split metrics of the best checkpoint, when that split exists.
    annotation: Option<MetricsReport>,
}

fn print_report(label: &str, m: &MetricsReport) {
    println!(
        "{label:<10} S {:>6.2}  Acc {:>6.2}  P {:>6.2}  R {:>6.2}  F1 {:>6.2}",
        100.0 * m.s,
        100.0 * m.acc,
        100.0 * m.p,
        100.0 * m.r,
        100.0 * m.f1
    );
}

pub fn train(s: &Settings) -> Result<(), Failure> {
    let config = s.train_config()?;
    let inputs = load_inputs(s)?;
    let out = begin_run("train", s, &inputs.files)?;
    let run = train_and_evaluate(&config, &inputs.data)?;
    let state = &run.state;
    write_history(&out.join("history.csv"), &state.history)?;
    write_json(
        &out.join("metrics.json"),
        &TrainMetrics {
            epochs_run: state.history.len(),
            best_epoch: state.best.epoch,
            best_dev_acc: state.best.dev_acc,
            annotation: run.metrics,
        },
    )?;
    Checkpoint::new(run.best().clone(), &inputs.data.train.vocab, state.step, state.best.epoch)
        .save(&out.join(CHECKPOINT_FILE))?;
    println!(
        "trained {} epochs; best epoch {} with dev acc {:.4}",
        state.history.len(),
        state.best.epoch,
        state.best.dev_acc
    );
    if let Some(m) = &run.metrics {
        print_report("annotation", m);
    }
    Ok(())
}

fn load_checkpoint(path: &Path, vocab: &Vocabulary) -> Result<ModelParams, Failure> {
    let ckpt = Checkpoint::load(path)?;
    ckpt.check_vocab(vocab)?;
    Ok(ckpt.params)
}

#[derive(Serialize)]
struct EvalMetrics {
    split: Split,
    examples: usize,
    acc: f64,
    loss: f64,
    sparsity: f64,
    precision: Option<f64>,
    recall: Option<f64>,
    f1: Option<f64>,
}

pub fn eval(s: &Settings, checkpoint: &Path, split: Split) -> Result<(), Failure> {
    let config = s.train_config()?;
    let inputs = load_inputs(s)?;
    let corpus = pick_split(&inputs.data, split)?;
    let mut files = inputs.files.clone();
    files.push(checkpoint.to_path_buf());
    let params = load_checkpoint(checkpoint, &corpus.vocab)?;
    let out = begin_run("eval", s, &files)?;
    let e = evaluate(&params, corpus, &inputs.data.embeddings, &config.reg)?;
    let metrics = EvalMetrics {
        split,
        examples: corpus.len(),
        acc: e.acc,
        loss: e.loss,
        sparsity: e.sparsity,
        precision: e.prf.map(|p| p.precision()),
        recall: e.prf.map(|p| p.recall()),
        f1: e.prf.map(|p| p.f1()),
    };
    write_json(&out.join("metrics.json"), &metrics)?;
    println!(
        "{split}: {} examples, acc {:.4}, selected {:.4}{}",
        metrics.examples,
        metrics.acc,
        metrics.sparsity,
        metrics.f1.map(|f| format!(", token F1 {f:.4}")).unwrap_or_default()
    );
    Ok(())
}

pub fn grid(s: &Settings) -> Result<(), Failure> {
    let config = s.train_config()?;
    let grid = s.grid();
    if grid.lambdas.is_empty() || grid.rates.is_empty() {
        return Err(Failure::Config("grid_lambdas and grid_rates must be nonempty".into()));
    }
    let inputs = load_inputs(s)?;
    let out = begin_run("grid", s, &inputs.files)?;
    let cells = run_grid(&config, &grid, &inputs.data);
    write_csv(&out.join("grid.csv"), &cells)?;
    print_grid(&grid.rates, &grid.lambdas, &cells);
    Ok(())
}

fn print_grid(rates: &[f64], lambdas: &[f64], cells: &[GridCell]) {
    print!("{:>10}", "lambda");
    for r in rates {
        print!("{:>10}", format!("{r:.0e}"));
    }
    println!();
    for &l in lambdas {
        print!("{l:>10.4}");
        for &r in rates {
            let f1 = cells
                .iter()
                .find(|c| c.lambda == l && c.alpha_g == r)
                .and_then(|c| c.f1);
            match f1 {
                Some(f) => print!("{:>10.1}", 100.0 * f),
                None => print!("{:>10}", "-"),
            }
        }
        println!();
    }
}

#[derive(Serialize)]
struct SkewRow<'a> {
    method: &'a str,
    pre_acc: f64,
    best_epoch: usize,
    lipschitz: f64,
    #[serde(rename = "S")]
    s: Option<f64>,
    #[serde(rename = "Acc")]
    acc: Option<f64>,
    #[serde(rename = "P")]
    p: Option<f64>,
    #[serde(rename = "R")]
    r: Option<f64>,
    #[serde(rename = "F1")]
    f1: Option<f64>,
}

impl<'a> SkewRow<'a> {
    fn new(arm: &'a SkewArm, pre_acc: f64) -> Self {
        let m = arm.metrics;
        Self {
            method: &arm.method,
            pre_acc,
            best_epoch: arm.best_epoch,
            lipschitz: arm.lipschitz,
            s: m.map(|m| m.s),
            acc: m.map(|m| m.acc),
            p: m.map(|m| m.p),
            r: m.map(|m| m.r),
            f1: m.map(|m| m.f1),
        }
    }
}

pub fn skew(s: &Settings, predictor: bool, level: f64) -> Result<(), Failure> {
    let mode = if predictor {
        if level < 0.0 || level.fract() != 0.0 {
            return Err(Failure::Config(format!(
                "predictor skew level is an epoch count, got {level}"
            )));
        }
        SkewMode::Predictor(level as usize)
    } else {
        SkewMode::Generator(level)
    };
    let config = s.train_config()?;
    let inputs = load_inputs(s)?;
    let out = begin_run("skew", s, &inputs.files)?;
    let cmp = run_skew(&config, mode, &inputs.data)?;
    write_json(&out.join("skew.json"), &cmp)?;
    let rows = [SkewRow::new(&cmp.dr, cmp.pre_acc), SkewRow::new(&cmp.baseline, cmp.pre_acc)];
    write_csv(&out.join("skew.csv"), &rows)?;
    println!("skew pretraining proxy accuracy {:.4}", cmp.pre_acc);
    for arm in [&cmp.dr, &cmp.baseline] {
        match &arm.metrics {
            Some(m) => print_report(&arm.method, m),
            None => println!("{:<10} (no annotation split)", arm.method),
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct ProbeOutput {
    split: Split,
    lipschitz: ProbeReport,
    audit: Option<AuditReport>,
    audit_error: Option<String>,
    centroid_gaps: Option<Vec<CentroidReport>>,
    notice: Option<String>,
}

pub fn probe(s: &Settings, checkpoint: &Path, split: Split) -> Result<(), Failure> {
    let inputs = load_inputs(s)?;
    let corpus = pick_split(&inputs.data, split)?;
    let emb = &inputs.data.embeddings;
    let mut files = inputs.files.clone();
    files.push(checkpoint.to_path_buf());
    let params = load_checkpoint(checkpoint, &corpus.vocab)?;
    let out = begin_run("probe", s, &files)?;

    let lipschitz = estimate_lipschitz(&params, corpus, emb)?;
    let (audit, audit_error) = match sample_pairs(&params, corpus, emb, s.audit_pairs, s.seed) {
        Ok(pairs) => (Some(audit_inequality(&pairs, lipschitz.estimate)), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let (centroid_gaps, notice) = if corpus.has_gold() {
        (Some(centroid_report(corpus, emb, &[1.0, 2.0], s.seed)?), None)
    } else {
        (None, Some(format!("{split} split has no gold masks; centroid gaps omitted")))
    };
    let report = ProbeOutput {
        split,
        lipschitz,
        audit,
        audit_error,
        centroid_gaps,
        notice,
    };
    write_json(&out.join("probe.json"), &report)?;

    println!(
        "L_c {:.6} over {} rationales ({} empty skipped)",
        report.lipschitz.estimate, report.lipschitz.samples, report.lipschitz.skipped_empty
    );
    match (&report.audit, &report.audit_error) {
        (Some(a), _) => println!(
            "audit: {} of {} pairs violate, rate {:.4}",
            a.violations, a.pairs, a.violation_rate
        ),
        (None, Some(e)) => println!("audit skipped: {e}"),
        _ => {}
    }
    for g in report.centroid_gaps.iter().flatten() {
        println!(
            "centroid gap p={}: gold {:.4}, random {:.4}",
            g.norm_order, g.gold_gap, g.random_gap
        );
    }
    if let Some(n) = &report.notice {
        println!("{n}");
    }
    Ok(())
}
