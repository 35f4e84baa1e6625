//! Subcommand implementations: load and validate inputs, run the core
//! pipeline, write primary outputs atomically plus a run manifest.

use std::io::BufReader;
use std::path::Path;

use anyhow::{anyhow, Context};

use ptxt_core::corpus::{
    build_synonym_dict, classes_of, collect_captions, read_jsonl, read_synonyms_json,
    write_jsonl, CaptionSource, LabeledCorpus,
};
use ptxt_core::evalkit::{
    self, compute_scores, evaluate, evaluate_features, evaluate_zero_shot, prompt_length_sweep,
    transfer_eval, EvalMode, EvalResult, Metric,
};
use ptxt_core::trainer::{self, load_checkpoint, save_checkpoint, TrainConfig, TrainReport};
use ptxt_core::PromptBank;

use crate::util::{
    read_to_string, runtime, validation, write_atomic, write_manifest, CliError,
};
use crate::ModeArg;

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<TrainConfig, CliError> {
    let mut cfg = match path {
        Some(p) => {
            let text = read_to_string(p)?;
            serde_json::from_str::<TrainConfig>(&text)
                .with_context(|| format!("parsing config {}", p.display()))
                .map_err(validation)?
        }
        None => TrainConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    cfg.validate().map_err(validation)?;
    Ok(cfg)
}

fn load_corpus(path: &Path) -> Result<LabeledCorpus, CliError> {
    let file = std::fs::File::open(path)
        .with_context(|| format!("opening corpus {}", path.display()))
        .map_err(validation)?;
    read_jsonl(BufReader::new(file))
        .with_context(|| format!("parsing corpus {}", path.display()))
        .map_err(validation)
}

fn load_bank(path: &Path, cfg: &TrainConfig) -> Result<PromptBank, CliError> {
    let (bank, _seed) = load_checkpoint(path)
        .with_context(|| format!("loading checkpoint {}", path.display()))
        .map_err(validation)?;
    if bank.dim() != cfg.dim {
        return Err(validation(anyhow!(
            "checkpoint {} was trained at dim {} but the config says {}",
            path.display(),
            bank.dim(),
            cfg.dim
        )));
    }
    Ok(bank)
}

fn eval_mode(mode: ModeArg, template: Option<&str>) -> Result<EvalMode, CliError> {
    Ok(match mode {
        ModeArg::Coarse => EvalMode::Coarse,
        ModeArg::Fine => EvalMode::Fine,
        ModeArg::Ensemble => EvalMode::Ensemble,
        ModeArg::ZeroShot => EvalMode::ZeroShot {
            template: template
                .ok_or_else(|| {
                    validation(anyhow!("--mode zero_shot requires --template"))
                })?
                .to_string(),
        },
    })
}

fn write_result(result: &EvalResult, out: &Path) -> Result<(), CliError> {
    let mut json = serde_json::to_vec_pretty(result).expect("result json");
    json.push(b'\n');
    write_atomic(out, &json)
}

fn metric_name(metric: Metric) -> &'static str {
    match metric {
        Metric::Accuracy => "accuracy",
        Metric::MeanAveragePrecision => "mAP",
    }
}

pub fn collect(
    raw: &Path,
    synonyms: &Path,
    config: Option<&Path>,
    out: &Path,
) -> Result<(), CliError> {
    let cfg = load_config(config, None)?;
    let raw_text = read_to_string(raw)?;
    let raw_lines: Vec<String> = raw_text.lines().map(str::to_owned).collect();
    let synonym_entries = read_synonyms_json(&read_to_string(synonyms)?)
        .with_context(|| format!("parsing {}", synonyms.display()))
        .map_err(validation)?;
    let class_names = classes_of(&synonym_entries);
    let dict = build_synonym_dict(&class_names, &synonym_entries).map_err(validation)?;

    let corpus = collect_captions(&raw_lines, &dict, cfg.task, cfg.captions_per_class)
        .map_err(runtime)?;

    let mut bytes = Vec::new();
    write_jsonl(&corpus, &mut bytes).map_err(runtime)?;
    write_atomic(out, &bytes)?;

    let collected = corpus
        .captions
        .iter()
        .filter(|c| c.source == CaptionSource::Collected)
        .count();
    let templates = corpus.len() - collected;
    println!(
        "collected {} captions ({collected} matched, {templates} template) across {} classes -> {}",
        corpus.len(),
        corpus.num_classes(),
        out.display()
    );

    let mut inputs = vec![raw, synonyms];
    inputs.extend(config);
    write_manifest("collect", &cfg, &inputs, &[out], out)
}

fn report_json(report: &TrainReport) -> Vec<u8> {
    #[derive(serde::Serialize)]
    struct ReportFile<'a> {
        epochs: &'a [trainer::EpochStats],
        wall_time_s: f64,
    }
    let mut json = serde_json::to_vec_pretty(&ReportFile {
        epochs: &report.epochs,
        wall_time_s: report.wall_time_s,
    })
    .expect("report json");
    json.push(b'\n');
    json
}

pub fn train(
    config: Option<&Path>,
    corpus_path: &Path,
    out: &Path,
    report_path: Option<&Path>,
    seed: Option<u64>,
) -> Result<(), CliError> {
    let mut cfg = load_config(config, seed)?;
    let corpus = load_corpus(corpus_path)?;
    // The corpus header states the task; the config must agree or defer.
    cfg.task = corpus.task_kind;

    let encoder = cfg.build_encoder();
    let report = trainer::train(&cfg, &corpus, &encoder).map_err(runtime)?;

    save_checkpoint(&report.bank, cfg.seed, out).map_err(runtime)?;
    let default_report = out.with_extension("report.json");
    let report_out = report_path.unwrap_or(&default_report);
    write_atomic(report_out, &report_json(&report))?;

    let last = report.epochs.last();
    println!(
        "trained N={} d={} on {} captions for {} epochs in {:.2}s (final epoch loss {:.4}) -> {}",
        cfg.prompt_len,
        cfg.dim,
        corpus.len(),
        cfg.epochs,
        report.wall_time_s,
        last.map_or(f64::NAN, |e| e.total),
        out.display()
    );

    let mut inputs = vec![corpus_path];
    inputs.extend(config);
    write_manifest("train", &cfg, &inputs, &[out, report_out], out)
}

#[allow(clippy::too_many_arguments)]
pub fn eval(
    config: Option<&Path>,
    bank_path: &Path,
    corpus_path: Option<&Path>,
    features_path: Option<&Path>,
    mode: ModeArg,
    template: Option<&str>,
    out: &Path,
    scores_out: Option<&Path>,
    seed: Option<u64>,
) -> Result<(), CliError> {
    let cfg = load_config(config, seed)?;
    let bank = load_bank(bank_path, &cfg)?;
    let encoder = cfg.build_encoder();
    let mode = eval_mode(mode, template)?;

    let result = match (corpus_path, features_path) {
        (Some(corpus_path), None) => {
            let corpus = load_corpus(corpus_path)?;
            if let Some(csv_path) = scores_out {
                let scores = compute_scores(&encoder, &bank, &corpus, &mode, cfg.tau_s)
                    .map_err(runtime)?;
                let mut bytes = Vec::new();
                scores
                    .write_csv(&corpus.class_names, &mut bytes)
                    .map_err(|e| runtime(anyhow!(e.to_string())))?;
                write_atomic(csv_path, &bytes)?;
            }
            evaluate(&encoder, &bank, &corpus, &mode, cfg.tau_s).map_err(runtime)?
        }
        (None, Some(features_path)) => {
            if scores_out.is_some() {
                return Err(validation(anyhow!(
                    "--scores-out is only supported with --corpus"
                )));
            }
            let file = std::fs::File::open(features_path)
                .with_context(|| format!("opening features {}", features_path.display()))
                .map_err(validation)?;
            let samples = evalkit::read_feature_file(BufReader::new(file))
                .with_context(|| format!("parsing {}", features_path.display()))
                .map_err(validation)?;
            evaluate_features(&encoder, &bank, &samples, cfg.task, &mode, cfg.tau_s)
                .map_err(runtime)?
        }
        _ => {
            return Err(validation(anyhow!(
                "exactly one of --corpus or --features is required"
            )))
        }
    };

    write_result(&result, out)?;
    println!(
        "{} {:.4} over {} samples -> {}",
        metric_name(result.metric),
        result.value,
        result.m,
        out.display()
    );

    let mut inputs = vec![bank_path];
    inputs.extend(corpus_path);
    inputs.extend(features_path);
    inputs.extend(config);
    let mut outputs = vec![out];
    outputs.extend(scores_out);
    write_manifest("eval", &cfg, &inputs, &outputs, out)
}

pub fn transfer(
    config: Option<&Path>,
    bank_path: &Path,
    corpus_path: &Path,
    mode: ModeArg,
    out: &Path,
    seed: Option<u64>,
) -> Result<(), CliError> {
    let cfg = load_config(config, seed)?;
    let bank = load_bank(bank_path, &cfg)?;
    let encoder = cfg.build_encoder();
    let target = load_corpus(corpus_path)?;
    let mode = eval_mode(mode, None)?;

    let result = transfer_eval(&encoder, &bank, &target, &mode, cfg.tau_s).map_err(runtime)?;
    write_result(&result, out)?;
    println!(
        "transfer {} {:.4} over {} samples ({} target classes) -> {}",
        metric_name(result.metric),
        result.value,
        result.m,
        target.num_classes(),
        out.display()
    );

    let mut inputs = vec![bank_path, corpus_path];
    inputs.extend(config);
    write_manifest("transfer", &cfg, &inputs, &[out], out)
}

pub fn zero_shot(
    config: Option<&Path>,
    template: &str,
    corpus_path: &Path,
    out: &Path,
    seed: Option<u64>,
) -> Result<(), CliError> {
    let cfg = load_config(config, seed)?;
    let encoder = cfg.build_encoder();
    let corpus = load_corpus(corpus_path)?;

    let result = evaluate_zero_shot(&encoder, template, &corpus).map_err(|e| {
        use ptxt_core::evalkit::EvalError;
        match e {
            EvalError::MissingPlaceholder => validation(anyhow!(e)),
            other => runtime(anyhow!(other)),
        }
    })?;
    write_result(&result, out)?;
    println!(
        "zero-shot {} {:.4} over {} samples -> {}",
        metric_name(result.metric),
        result.value,
        result.m,
        out.display()
    );

    let mut inputs = vec![corpus_path];
    inputs.extend(config);
    write_manifest("zero-shot", &cfg, &inputs, &[out], out)
}

pub fn sweep(
    config: Option<&Path>,
    corpus_path: &Path,
    eval_corpus_path: Option<&Path>,
    lengths: &str,
    mode: ModeArg,
    out: &Path,
    seed: Option<u64>,
) -> Result<(), CliError> {
    let cfg = load_config(config, seed)?;
    let lengths: Vec<usize> = lengths
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| validation(anyhow!("--lengths entry {s:?} is not a count")))
                .and_then(|n| {
                    if n == 0 {
                        Err(validation(anyhow!("--lengths entries must be >= 1")))
                    } else {
                        Ok(n)
                    }
                })
        })
        .collect::<Result<_, _>>()?;
    if lengths.is_empty() {
        return Err(validation(anyhow!("--lengths must name at least one length")));
    }

    let train_corpus = load_corpus(corpus_path)?;
    let eval_corpus = match eval_corpus_path {
        Some(p) => load_corpus(p)?,
        None => train_corpus.clone(),
    };
    let mode = eval_mode(mode, None)?;

    let rows = prompt_length_sweep(&cfg, &train_corpus, &eval_corpus, &lengths, &mode)
        .map_err(runtime)?;
    let mut json = serde_json::to_vec_pretty(&rows).expect("sweep json");
    json.push(b'\n');
    write_atomic(out, &json)?;
    for row in &rows {
        println!(
            "N={:>3}: {} {:.4}",
            row.prompt_len,
            metric_name(row.result.metric),
            row.result.value
        );
    }
    println!("wrote {}", out.display());

    let mut inputs = vec![corpus_path];
    inputs.extend(eval_corpus_path);
    inputs.extend(config);
    write_manifest("sweep", &cfg, &inputs, &[out], out)
}
