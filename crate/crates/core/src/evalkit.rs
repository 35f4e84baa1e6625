//! Inference and evaluation: zero-shot class features from a hand-written
//! template, prompt-based scoring in coarse / fine / ensemble modes,
//! accuracy and mean average precision, source-to-target transfer of
//! learned prompts, and the prompt-length sweep harness.
//!
//! Held-out captions act as surrogate audio: sentence features stand in
//! for clip-level features and word features for frame-level ones.
//! Precomputed feature files are accepted for the same roles.

use std::io::BufRead;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, CorpusError, LabeledCorpus, TaskKind, CLASS_PLACEHOLDER};
use crate::encoder::{EncoderError, EncoderWeights, Grain, PromptBank};
use crate::losses::encode_batch;
use crate::scoring::{aggregate_fine, word_scores, ScoreKind, ScoreMatrix};
use crate::trainer::{train, TrainConfig, TrainError};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("template does not contain the {CLASS_PLACEHOLDER} placeholder")]
    MissingPlaceholder,
    #[error("predictions and labels have different lengths")]
    LengthMismatch,
    #[error("sample {row} is not single-label")]
    BadLabel { row: usize },
    #[error("class {0} has no positive samples; AP is undefined")]
    ClassWithoutPositives(usize),
    #[error("evaluation set classes do not match the prompt bank classes")]
    ClassMismatch,
    #[error("feature file has no frame-level vectors; required for fine/ensemble modes")]
    MissingFrameFeatures,
    #[error("feature file line {line}: {message}")]
    BadFeatureFile { line: usize, message: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "accuracy")]
    Accuracy,
    #[serde(rename = "mAP")]
    MeanAveragePrecision,
}

/// An evaluation outcome: the aggregate metric plus its per-class terms
/// (recall for accuracy, AP for mAP) over `m` samples.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalResult {
    pub metric: Metric,
    pub value: f64,
    pub per_class: Vec<f64>,
    #[serde(rename = "M")]
    pub m: usize,
}

/// Score path used at evaluation time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EvalMode {
    Coarse,
    Fine,
    Ensemble,
    /// Hand-written template instead of learned prompts.
    ZeroShot { template: String },
}

/// One record of a precomputed feature file: a clip-level vector, optional
/// frame-level vectors, and positive label indices.
#[derive(Debug, Clone)]
pub struct FeatureSample {
    pub clip: Array1<f64>,
    pub frames: Option<Vec<Array1<f64>>>,
    pub labels: Vec<usize>,
}

/// Zero-shot class features: encode the template with `[CLASS]` replaced by
/// each class name, no learnable prompts involved.
pub fn zero_shot_scores(
    encoder: &EncoderWeights,
    template: &str,
    class_names: &[String],
) -> Result<Vec<Array1<f64>>, EvalError> {
    if !template.contains(CLASS_PLACEHOLDER) {
        return Err(EvalError::MissingPlaceholder);
    }
    class_names
        .iter()
        .map(|name| {
            let text = template.replace(CLASS_PLACEHOLDER, name);
            let toks = tokenize(&text)?;
            Ok(encoder.encode_caption(&toks)?.sentence_feat)
        })
        .collect()
}

/// Class prompt features for one grain of the bank.
pub fn class_features(
    encoder: &EncoderWeights,
    bank: &PromptBank,
    grain: Grain,
) -> Result<Vec<Array1<f64>>, EvalError> {
    (0..bank.num_classes())
        .map(|c| {
            Ok(encoder
                .encode_class_prompt(bank, grain, c, false)?
                .sentence_feat)
        })
        .collect()
}

/// Argmax with ties broken by the lowest index.
pub fn predict_single_label(scores: &Array1<f64>) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Fraction of correct predictions; per-class values are recalls.
pub fn accuracy(predictions: &[usize], labels: &[Vec<bool>]) -> Result<EvalResult, EvalError> {
    if predictions.len() != labels.len() {
        return Err(EvalError::LengthMismatch);
    }
    let c = labels.first().map_or(0, Vec::len);
    let mut correct = 0usize;
    let mut per_class_hit = vec![0usize; c];
    let mut per_class_total = vec![0usize; c];
    for (row, (&pred, label)) in predictions.iter().zip(labels).enumerate() {
        let positives: Vec<usize> = (0..label.len()).filter(|&i| label[i]).collect();
        if positives.len() != 1 {
            return Err(EvalError::BadLabel { row });
        }
        let truth = positives[0];
        per_class_total[truth] += 1;
        if pred == truth {
            correct += 1;
            per_class_hit[truth] += 1;
        }
    }
    let per_class = per_class_hit
        .iter()
        .zip(&per_class_total)
        .map(|(&h, &t)| if t == 0 { 0.0 } else { h as f64 / t as f64 })
        .collect();
    Ok(EvalResult {
        metric: Metric::Accuracy,
        value: correct as f64 / predictions.len() as f64,
        per_class,
        m: predictions.len(),
    })
}

/// Mean over classes of average precision. Per class, samples are ranked by
/// score descending with ties broken by sample index, and AP averages the
/// precision at each positive's rank (no interpolation).
pub fn mean_average_precision(
    scores: &Array2<f64>,
    labels: &[Vec<bool>],
) -> Result<EvalResult, EvalError> {
    if scores.nrows() != labels.len() {
        return Err(EvalError::LengthMismatch);
    }
    let (m, c) = scores.dim();
    let mut per_class = Vec::with_capacity(c);
    for cls in 0..c {
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| {
            scores[[b, cls]]
                .partial_cmp(&scores[[a, cls]])
                .expect("scores must not be NaN")
                .then(a.cmp(&b))
        });
        let mut hits = 0usize;
        let mut ap_sum = 0.0;
        let mut positives = 0usize;
        for (rank0, &sample) in order.iter().enumerate() {
            if labels[sample][cls] {
                hits += 1;
                positives += 1;
                ap_sum += hits as f64 / (rank0 + 1) as f64;
            }
        }
        if positives == 0 {
            return Err(EvalError::ClassWithoutPositives(cls));
        }
        per_class.push(ap_sum / positives as f64);
    }
    Ok(EvalResult {
        metric: Metric::MeanAveragePrecision,
        value: per_class.iter().sum::<f64>() / c as f64,
        per_class,
        m,
    })
}

fn metric_for(
    task_kind: TaskKind,
    scores: &ScoreMatrix,
    labels: &[Vec<bool>],
) -> Result<EvalResult, EvalError> {
    match task_kind {
        TaskKind::SingleLabel => {
            let preds: Vec<usize> = scores
                .values
                .rows()
                .into_iter()
                .map(|row| predict_single_label(&row.to_owned()))
                .collect();
            accuracy(&preds, labels)
        }
        TaskKind::MultiLabel => mean_average_precision(&scores.values, labels),
    }
}

fn dot_scores(sample_feats: &[Array1<f64>], class_feats: &[Array1<f64>]) -> Array2<f64> {
    Array2::from_shape_fn((sample_feats.len(), class_feats.len()), |(i, j)| {
        sample_feats[i].dot(&class_feats[j])
    })
}

/// Score a caption corpus under the chosen mode. Sentence features carry
/// the coarse scores, word features the fine scores (aggregated per class
/// at temperature `tau_s`), and the ensemble sums both.
pub fn compute_scores(
    encoder: &EncoderWeights,
    bank: &PromptBank,
    eval_set: &LabeledCorpus,
    mode: &EvalMode,
    tau_s: f64,
) -> Result<ScoreMatrix, EvalError> {
    let batch = encode_batch(encoder, eval_set).map_err(|e| match e {
        crate::losses::LossError::Corpus(c) => EvalError::Corpus(c),
        crate::losses::LossError::Encoder(enc) => EvalError::Encoder(enc),
        other => EvalError::BadFeatureFile {
            line: 0,
            message: other.to_string(),
        },
    })?;
    let sentence_feats: Vec<Array1<f64>> =
        batch.iter().map(|b| b.sentence_feat.clone()).collect();

    let coarse_part = |feats: &[Array1<f64>]| dot_scores(&sentence_feats, feats);
    let fine_part = |feats: &[Array1<f64>]| -> Result<Array2<f64>, EvalError> {
        let mut out = Array2::zeros((batch.len(), feats.len()));
        for (m, cap) in batch.iter().enumerate() {
            let p = word_scores(&cap.word_feats, feats).map_err(|e| {
                EvalError::BadFeatureFile {
                    line: 0,
                    message: e.to_string(),
                }
            })?;
            out.row_mut(m).assign(&aggregate_fine(&p, tau_s));
        }
        Ok(out)
    };

    let (values, kind) = match mode {
        EvalMode::ZeroShot { template } => {
            let feats = zero_shot_scores(encoder, template, &eval_set.class_names)?;
            (coarse_part(&feats), ScoreKind::Coarse)
        }
        EvalMode::Coarse => {
            let feats = class_features(encoder, bank, Grain::Coarse)?;
            (coarse_part(&feats), ScoreKind::Coarse)
        }
        EvalMode::Fine => {
            let feats = class_features(encoder, bank, Grain::Fine)?;
            (fine_part(&feats)?, ScoreKind::Fine)
        }
        EvalMode::Ensemble => {
            let coarse = coarse_part(&class_features(encoder, bank, Grain::Coarse)?);
            let fine = fine_part(&class_features(encoder, bank, Grain::Fine)?)?;
            (coarse + fine, ScoreKind::Ensemble)
        }
    };
    Ok(ScoreMatrix { values, kind })
}

/// Evaluate a caption corpus. The metric follows the task kind: accuracy
/// for single-label, mAP for multi-label. Prompt modes require the eval
/// set's classes to match the bank's; zero-shot mode uses the eval set's
/// own class names.
pub fn evaluate(
    encoder: &EncoderWeights,
    bank: &PromptBank,
    eval_set: &LabeledCorpus,
    mode: &EvalMode,
    tau_s: f64,
) -> Result<EvalResult, EvalError> {
    if !matches!(mode, EvalMode::ZeroShot { .. })
        && eval_set.class_names != bank.class_names
    {
        return Err(EvalError::ClassMismatch);
    }
    let scores = compute_scores(encoder, bank, eval_set, mode, tau_s)?;
    let labels: Vec<Vec<bool>> = eval_set.captions.iter().map(|c| c.label.clone()).collect();
    metric_for(eval_set.task_kind, &scores, &labels)
}

/// Zero-shot evaluation without any prompt bank.
pub fn evaluate_zero_shot(
    encoder: &EncoderWeights,
    template: &str,
    eval_set: &LabeledCorpus,
) -> Result<EvalResult, EvalError> {
    let feats = zero_shot_scores(encoder, template, &eval_set.class_names)?;
    let batch = encode_batch(encoder, eval_set).map_err(|e| match e {
        crate::losses::LossError::Corpus(c) => EvalError::Corpus(c),
        crate::losses::LossError::Encoder(enc) => EvalError::Encoder(enc),
        other => EvalError::BadFeatureFile {
            line: 0,
            message: other.to_string(),
        },
    })?;
    let sentence_feats: Vec<Array1<f64>> =
        batch.iter().map(|b| b.sentence_feat.clone()).collect();
    let scores = ScoreMatrix {
        values: dot_scores(&sentence_feats, &feats),
        kind: ScoreKind::Coarse,
    };
    let labels: Vec<Vec<bool>> = eval_set.captions.iter().map(|c| c.label.clone()).collect();
    metric_for(eval_set.task_kind, &scores, &labels)
}

/// Evaluate precomputed features: clip vectors carry the coarse scores and
/// frame vectors the fine scores. Labels index into the bank's class list.
pub fn evaluate_features(
    encoder: &EncoderWeights,
    bank: &PromptBank,
    samples: &[FeatureSample],
    task_kind: TaskKind,
    mode: &EvalMode,
    tau_s: f64,
) -> Result<EvalResult, EvalError> {
    let c = bank.num_classes();
    let mut labels = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let mut label = vec![false; c];
        for &idx in &s.labels {
            if idx >= c {
                return Err(EvalError::BadFeatureFile {
                    line: i + 1,
                    message: format!("label index {idx} out of range for {c} classes"),
                });
            }
            label[idx] = true;
        }
        labels.push(label);
    }
    let clips: Vec<Array1<f64>> = samples.iter().map(|s| s.clip.clone()).collect();

    let fine_part = |feats: &[Array1<f64>]| -> Result<Array2<f64>, EvalError> {
        let mut out = Array2::zeros((samples.len(), feats.len()));
        for (m, s) in samples.iter().enumerate() {
            let frames = s.frames.as_ref().ok_or(EvalError::MissingFrameFeatures)?;
            let p = word_scores(frames, feats).map_err(|e| EvalError::BadFeatureFile {
                line: m + 1,
                message: e.to_string(),
            })?;
            out.row_mut(m).assign(&aggregate_fine(&p, tau_s));
        }
        Ok(out)
    };

    let (values, kind) = match mode {
        EvalMode::ZeroShot { template } => {
            let feats = zero_shot_scores(encoder, template, &bank.class_names)?;
            (dot_scores(&clips, &feats), ScoreKind::Coarse)
        }
        EvalMode::Coarse => {
            let feats = class_features(encoder, bank, Grain::Coarse)?;
            (dot_scores(&clips, &feats), ScoreKind::Coarse)
        }
        EvalMode::Fine => {
            let feats = class_features(encoder, bank, Grain::Fine)?;
            (fine_part(&feats)?, ScoreKind::Fine)
        }
        EvalMode::Ensemble => {
            let coarse = dot_scores(&clips, &class_features(encoder, bank, Grain::Coarse)?);
            let fine = fine_part(&class_features(encoder, bank, Grain::Fine)?)?;
            (coarse + fine, ScoreKind::Ensemble)
        }
    };
    let scores = ScoreMatrix { values, kind };
    metric_for(task_kind, &scores, &labels)
}

/// Apply source-learned prompts to a target corpus without retraining: the
/// prompt matrices are kept and the class features are recomputed for the
/// target class names (which may be entirely unseen).
pub fn transfer_eval(
    encoder: &EncoderWeights,
    bank: &PromptBank,
    target_corpus: &LabeledCorpus,
    mode: &EvalMode,
    tau_s: f64,
) -> Result<EvalResult, EvalError> {
    let retargeted = bank.retarget(&target_corpus.class_names)?;
    evaluate(encoder, &retargeted, target_corpus, mode, tau_s)
}

/// One row of a prompt-length sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub prompt_len: usize,
    pub result: EvalResult,
}

/// Train one bank per prompt length with otherwise identical config and
/// evaluate each on the eval corpus.
pub fn prompt_length_sweep(
    cfg: &TrainConfig,
    train_corpus: &LabeledCorpus,
    eval_corpus: &LabeledCorpus,
    lengths: &[usize],
    mode: &EvalMode,
) -> Result<Vec<SweepRow>, EvalError> {
    let encoder = cfg.build_encoder();
    let mut rows = Vec::with_capacity(lengths.len());
    for &n in lengths {
        assert!(n >= 1, "prompt lengths must be at least 1");
        let run_cfg = TrainConfig {
            prompt_len: n,
            ..cfg.clone()
        };
        let report = train(&run_cfg, train_corpus, &encoder)?;
        let result = evaluate(&encoder, &report.bank, eval_corpus, mode, cfg.tau_s)?;
        rows.push(SweepRow {
            prompt_len: n,
            result,
        });
    }
    Ok(rows)
}

#[derive(Deserialize)]
struct FeatureRecord {
    clip: Vec<f64>,
    #[serde(default)]
    frames: Option<Vec<Vec<f64>>>,
    labels: Vec<usize>,
}

fn normalize_loaded(v: Vec<f64>, line: usize) -> Result<Array1<f64>, EvalError> {
    let arr = Array1::from_vec(v);
    let norm = arr.dot(&arr).sqrt();
    if norm == 0.0 {
        return Err(EvalError::BadFeatureFile {
            line,
            message: "zero feature vector".into(),
        });
    }
    Ok(arr / norm)
}

/// Read a JSONL feature file; every vector is L2-normalized on load and all
/// vectors must share one dimension.
pub fn read_feature_file<R: BufRead>(input: R) -> Result<Vec<FeatureSample>, EvalError> {
    let mut samples = Vec::new();
    let mut dim: Option<usize> = None;
    for (idx, line) in input.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| EvalError::BadFeatureFile {
            line: lineno,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: FeatureRecord =
            serde_json::from_str(&line).map_err(|e| EvalError::BadFeatureFile {
                line: lineno,
                message: e.to_string(),
            })?;
        let d = *dim.get_or_insert(rec.clip.len());
        let check_dim = |len: usize| -> Result<(), EvalError> {
            if len != d {
                return Err(EvalError::BadFeatureFile {
                    line: lineno,
                    message: format!("dimension {len} does not match {d}"),
                });
            }
            Ok(())
        };
        check_dim(rec.clip.len())?;
        let clip = normalize_loaded(rec.clip, lineno)?;
        let frames = match rec.frames {
            Some(rows) => {
                let mut out = Vec::with_capacity(rows.len());
                for row in rows {
                    check_dim(row.len())?;
                    out.push(normalize_loaded(row, lineno)?);
                }
                Some(out)
            }
            None => None,
        };
        samples.push(FeatureSample {
            clip,
            frames,
            labels: rec.labels,
        });
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_synonym_dict, collect_captions};
    use crate::trainer::init_prompts;
    use ndarray::arr1;
    use rand::{Rng, SeedableRng};

    fn names(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    fn one_hot(c: usize, idx: usize) -> Vec<bool> {
        let mut v = vec![false; c];
        v[idx] = true;
        v
    }

    fn toy_corpus(classes: &[&str], per_class: usize) -> LabeledCorpus {
        let class_names = names(classes);
        let dict = build_synonym_dict(&class_names, &[]).unwrap();
        let mut raw = Vec::new();
        for i in 0..per_class {
            for class in classes {
                raw.push(format!("the {class} plays softly take {i}"));
            }
        }
        collect_captions(&raw, &dict, TaskKind::SingleLabel, per_class).unwrap()
    }

    fn toy_setup() -> (TrainConfig, EncoderWeights, PromptBank, LabeledCorpus) {
        let cfg = TrainConfig {
            prompt_len: 4,
            dim: 8,
            seed: 5,
            ..TrainConfig::default()
        };
        let corpus = toy_corpus(&["dog", "rain", "engine"], 3);
        let encoder = cfg.build_encoder();
        let bank = init_prompts(&cfg, &corpus.class_names).unwrap();
        (cfg, encoder, bank, corpus)
    }

    #[test]
    fn zero_shot_requires_placeholder() {
        let (_, encoder, _, _) = toy_setup();
        assert!(matches!(
            zero_shot_scores(&encoder, "a sound", &names(&["dog"])),
            Err(EvalError::MissingPlaceholder)
        ));
    }

    #[test]
    fn zero_shot_one_vector_per_class_deterministic() {
        let (_, encoder, _, _) = toy_setup();
        let class_names = names(&["dog", "rain", "engine"]);
        let a = zero_shot_scores(&encoder, "this is a sound of [CLASS]", &class_names).unwrap();
        let b = zero_shot_scores(&encoder, "this is a sound of [CLASS]", &class_names).unwrap();
        assert_eq!(a.len(), 3);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn argmax_and_tie_break() {
        assert_eq!(predict_single_label(&arr1(&[0.1, 0.9, 0.3])), 1);
        assert_eq!(predict_single_label(&arr1(&[0.5, 0.5, 0.5])), 0);
        let base = arr1(&[0.2, 0.7, 0.1]);
        let shifted = base.mapv(|s| s + 10.0);
        assert_eq!(predict_single_label(&base), predict_single_label(&shifted));
    }

    #[test]
    fn accuracy_fractions() {
        let labels: Vec<Vec<bool>> = vec![
            one_hot(2, 0),
            one_hot(2, 1),
            one_hot(2, 0),
            one_hot(2, 1),
        ];
        let all = accuracy(&[0, 1, 0, 1], &labels).unwrap();
        assert_eq!(all.value, 1.0);
        let none = accuracy(&[1, 0, 1, 0], &labels).unwrap();
        assert_eq!(none.value, 0.0);
        let three = accuracy(&[0, 1, 0, 0], &labels).unwrap();
        assert_eq!(three.value, 0.75);
        assert_eq!(three.per_class, vec![1.0, 0.5]);
        assert_eq!(three.m, 4);
    }

    #[test]
    fn map_hand_cases() {
        // Single positive ranked 2nd of 2 -> AP 0.5.
        let scores = ndarray::arr2(&[[0.9], [0.5]]);
        let labels = vec![vec![false], vec![true]];
        let r = mean_average_precision(&scores, &labels).unwrap();
        assert!((r.value - 0.5).abs() < 1e-12);

        // Positives at ranks 1 and 3 of 4 -> AP (1/1 + 2/3) / 2.
        let scores = ndarray::arr2(&[[0.9], [0.7], [0.5], [0.3]]);
        let labels = vec![vec![true], vec![false], vec![true], vec![false]];
        let r = mean_average_precision(&scores, &labels).unwrap();
        assert!((r.value - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert!((r.value - 0.8333).abs() < 1e-4);
    }

    #[test]
    fn map_perfect_ranking_is_one() {
        let scores = ndarray::arr2(&[[0.9, 0.1], [0.1, 0.9]]);
        let labels = vec![vec![true, false], vec![false, true]];
        let r = mean_average_precision(&scores, &labels).unwrap();
        assert_eq!(r.value, 1.0);
    }

    #[test]
    fn map_requires_positives_per_class() {
        let scores = ndarray::arr2(&[[0.9, 0.1]]);
        let labels = vec![vec![true, false]];
        assert!(matches!(
            mean_average_precision(&scores, &labels),
            Err(EvalError::ClassWithoutPositives(1))
        ));
    }

    /// Sort-free AP oracle: the rank of each positive and the hit count at
    /// that rank are computed by pairwise comparisons. Terms are summed in
    /// rank order, the same convention the implementation uses.
    fn brute_force_ap(scores: &[f64], positives: &[bool]) -> f64 {
        let n = scores.len();
        let mut terms: Vec<(usize, f64)> = Vec::new();
        for i in 0..n {
            if !positives[i] {
                continue;
            }
            let rank = 1 + (0..n)
                .filter(|&j| {
                    scores[j] > scores[i] || (scores[j] == scores[i] && j < i)
                })
                .count();
            let hits = (0..n)
                .filter(|&j| {
                    positives[j]
                        && (scores[j] > scores[i] || (scores[j] == scores[i] && j <= i))
                })
                .count();
            terms.push((rank, hits as f64 / rank as f64));
        }
        terms.sort_by_key(|&(rank, _)| rank);
        let count = terms.len() as f64;
        terms.into_iter().map(|(_, p)| p).sum::<f64>() / count
    }

    #[test]
    fn map_matches_brute_force_on_random_instances() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        for _ in 0..100 {
            let m = rng.gen_range(1..=8);
            let c = rng.gen_range(1..=4);
            let scores =
                Array2::from_shape_fn((m, c), |_| (rng.gen_range(-10..=10) as f64) / 10.0);
            let labels: Vec<Vec<bool>> = (0..m)
                .map(|_| (0..c).map(|_| rng.gen_bool(0.5)).collect())
                .collect();
            // ensure every class has a positive
            let mut labels = labels;
            for cls in 0..c {
                if !labels.iter().any(|l| l[cls]) {
                    let row = rng.gen_range(0..m);
                    labels[row][cls] = true;
                }
            }
            let got = mean_average_precision(&scores, &labels).unwrap();
            let mut expected = 0.0;
            for cls in 0..c {
                let col: Vec<f64> = (0..m).map(|i| scores[[i, cls]]).collect();
                let pos: Vec<bool> = labels.iter().map(|l| l[cls]).collect();
                expected += brute_force_ap(&col, &pos);
            }
            expected /= c as f64;
            assert_eq!(got.value, expected);
        }
    }

    #[test]
    fn map_invariant_under_monotone_column_transform() {
        let scores = ndarray::arr2(&[[0.9, 0.2], [0.1, 0.8], [0.4, 0.5]]);
        let labels = vec![
            vec![true, false],
            vec![false, true],
            vec![true, true],
        ];
        let base = mean_average_precision(&scores, &labels).unwrap();
        let mut warped = scores.clone();
        for i in 0..3 {
            warped[[i, 0]] = (scores[[i, 0]] * 3.0).tanh() + 5.0;
        }
        let transformed = mean_average_precision(&warped, &labels).unwrap();
        assert_eq!(base.value, transformed.value);
    }

    #[test]
    fn evaluate_rejects_class_mismatch() {
        let (cfg, encoder, bank, _) = toy_setup();
        let other = toy_corpus(&["piano", "violin", "drum"], 2);
        assert!(matches!(
            evaluate(&encoder, &bank, &other, &EvalMode::Ensemble, cfg.tau_s),
            Err(EvalError::ClassMismatch)
        ));
    }

    #[test]
    fn zero_shot_mode_matches_manual_scoring() {
        let (cfg, encoder, bank, corpus) = toy_setup();
        let template = "this is a sound of [CLASS]".to_string();
        let via_mode = evaluate(
            &encoder,
            &bank,
            &corpus,
            &EvalMode::ZeroShot {
                template: template.clone(),
            },
            cfg.tau_s,
        )
        .unwrap();
        let direct = evaluate_zero_shot(&encoder, &template, &corpus).unwrap();
        assert_eq!(via_mode.value, direct.value);

        // And both equal scoring against the zero-shot features by hand.
        let feats = zero_shot_scores(&encoder, &template, &corpus.class_names).unwrap();
        let batch = encode_batch(&encoder, &corpus).unwrap();
        let preds: Vec<usize> = batch
            .iter()
            .map(|b| {
                let row = Array1::from_shape_fn(feats.len(), |j| b.sentence_feat.dot(&feats[j]));
                predict_single_label(&row)
            })
            .collect();
        let labels: Vec<Vec<bool>> = corpus.captions.iter().map(|c| c.label.clone()).collect();
        let manual = accuracy(&preds, &labels).unwrap();
        assert_eq!(manual.value, direct.value);
    }

    #[test]
    fn ensemble_is_sum_of_parts() {
        let (cfg, encoder, bank, corpus) = toy_setup();
        let coarse =
            compute_scores(&encoder, &bank, &corpus, &EvalMode::Coarse, cfg.tau_s).unwrap();
        let fine = compute_scores(&encoder, &bank, &corpus, &EvalMode::Fine, cfg.tau_s).unwrap();
        let ens =
            compute_scores(&encoder, &bank, &corpus, &EvalMode::Ensemble, cfg.tau_s).unwrap();
        let diff = (&coarse.values + &fine.values - &ens.values)
            .mapv(f64::abs)
            .sum();
        assert_eq!(diff, 0.0);
    }

    #[test]
    fn transfer_degenerate_equals_evaluate() {
        let (cfg, encoder, bank, corpus) = toy_setup();
        let direct = evaluate(&encoder, &bank, &corpus, &EvalMode::Ensemble, cfg.tau_s).unwrap();
        let transferred =
            transfer_eval(&encoder, &bank, &corpus, &EvalMode::Ensemble, cfg.tau_s).unwrap();
        assert_eq!(direct.value, transferred.value);
        assert_eq!(direct.per_class, transferred.per_class);
    }

    #[test]
    fn transfer_handles_unseen_classes_without_mutation() {
        let (cfg, encoder, _, _) = toy_setup();
        let source = toy_corpus(&["dog", "rain", "engine"], 3);
        let bank = init_prompts(&cfg, &source.class_names).unwrap();
        let checksum = bank.checksum();
        let target = toy_corpus(&["dog", "rain", "engine", "piano", "wind"], 2);
        let result =
            transfer_eval(&encoder, &bank, &target, &EvalMode::Ensemble, cfg.tau_s).unwrap();
        assert_eq!(result.per_class.len(), 5);
        assert_eq!(bank.checksum(), checksum);
    }

    #[test]
    fn sweep_single_length_single_row() {
        let (cfg, _, _, corpus) = toy_setup();
        let cfg = TrainConfig {
            epochs: 2,
            ..cfg
        };
        let rows =
            prompt_length_sweep(&cfg, &corpus, &corpus, &[1], &EvalMode::Ensemble).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].prompt_len, 1);
    }

    #[test]
    fn feature_file_round_trip_and_errors() {
        let good = "{\"clip\": [3.0, 0.0], \"frames\": [[0.0, 2.0]], \"labels\": [0]}\n";
        let samples = read_feature_file(good.as_bytes()).unwrap();
        assert_eq!(samples.len(), 1);
        assert!((samples[0].clip[0] - 1.0).abs() < 1e-12); // normalized
        assert!((samples[0].frames.as_ref().unwrap()[0][1] - 1.0).abs() < 1e-12);

        let mixed_dim = "{\"clip\": [1.0, 0.0], \"labels\": [0]}\n{\"clip\": [1.0], \"labels\": [0]}\n";
        assert!(matches!(
            read_feature_file(mixed_dim.as_bytes()),
            Err(EvalError::BadFeatureFile { line: 2, .. })
        ));
    }

    #[test]
    fn features_fine_mode_requires_frames() {
        let (cfg, encoder, bank, _) = toy_setup();
        let samples = vec![FeatureSample {
            clip: {
                let mut v = Array1::zeros(cfg.dim);
                v[0] = 1.0;
                v
            },
            frames: None,
            labels: vec![0],
        }];
        assert!(matches!(
            evaluate_features(
                &encoder,
                &bank,
                &samples,
                TaskKind::SingleLabel,
                &EvalMode::Fine,
                cfg.tau_s
            ),
            Err(EvalError::MissingFrameFeatures)
        ));
        // Coarse mode works without frames.
        let r = evaluate_features(
            &encoder,
            &bank,
            &samples,
            TaskKind::SingleLabel,
            &EvalMode::Coarse,
            cfg.tau_s,
        )
        .unwrap();
        assert_eq!(r.m, 1);
    }
}
