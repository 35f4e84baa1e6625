//! Training objectives with analytic gradients: temperature-scaled
//! softmax cross-entropy for single-label tasks, a pairwise hinge ranking
//! loss for multi-label tasks, and the combined objective that applies the
//! chosen form to both the coarse sentence-level scores and the aggregated
//! fine word-level scores, chaining gradients back onto the prompt rows.
//!
//! All losses are summed over the batch, not averaged.

use ndarray::{Array1, Array2};

use crate::corpus::{tokenize, CorpusError, LabeledCorpus, TaskKind};
use crate::encoder::{EncoderError, EncoderWeights, Grain, PromptBank};
use crate::scoring::{aggregate_fine, aggregate_fine_grad, word_scores, WordScores};

#[derive(Debug, thiserror::Error)]
pub enum LossError {
    #[error("row {row}: label is not one-hot")]
    InvalidLabel { row: usize },
    #[error("row {row}: ranking loss needs at least one positive and one negative class")]
    DegenerateLabels { row: usize },
    #[error("score and label shapes disagree: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// A loss value together with its gradient with respect to the score input.
#[derive(Debug, Clone)]
pub struct LossValue {
    pub value: f64,
    /// Same shape as the score matrix the loss was computed from.
    pub grad_scores: Array2<f64>,
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

fn check_shapes(scores: &Array2<f64>, labels: &[Vec<bool>]) -> Result<(), LossError> {
    if scores.nrows() != labels.len() {
        return Err(LossError::ShapeMismatch(format!(
            "{} score rows vs {} labels",
            scores.nrows(),
            labels.len()
        )));
    }
    for (m, label) in labels.iter().enumerate() {
        if label.len() != scores.ncols() {
            return Err(LossError::ShapeMismatch(format!(
                "label row {m} has {} classes, scores have {}",
                label.len(),
                scores.ncols()
            )));
        }
    }
    Ok(())
}

/// Softmax cross-entropy over `scores / tau`, summed over rows. The
/// gradient per row is `(softmax(scores/tau) - label) / tau`.
pub fn ce_loss(
    scores: &Array2<f64>,
    labels: &[Vec<bool>],
    tau: f64,
) -> Result<LossValue, LossError> {
    assert!(tau > 0.0, "tau must be positive");
    check_shapes(scores, labels)?;
    let c = scores.ncols();
    let mut value = 0.0;
    let mut grad = Array2::zeros(scores.raw_dim());
    for (m, label) in labels.iter().enumerate() {
        let true_class = {
            let pos: Vec<usize> = (0..c).filter(|&i| label[i]).collect();
            if pos.len() != 1 {
                return Err(LossError::InvalidLabel { row: m });
            }
            pos[0]
        };
        let logits: Vec<f64> = scores.row(m).iter().map(|&s| s / tau).collect();
        let lse = log_sum_exp(&logits);
        value += lse - logits[true_class];
        for l in 0..c {
            let p = (logits[l] - lse).exp();
            grad[[m, l]] = (p - if l == true_class { 1.0 } else { 0.0 }) / tau;
        }
    }
    Ok(LossValue {
        value,
        grad_scores: grad,
    })
}

/// Pairwise hinge ranking loss for multi-hot labels:
/// `sum_m sum_{i in pos} sum_{j in neg} max(0, margin - q_i + q_j)`.
/// Each strictly-active pair contributes -1 to the positive's gradient and
/// +1 to the negative's; the subgradient at an exactly-zero hinge is 0.
pub fn ranking_loss_with_margin(
    scores: &Array2<f64>,
    labels: &[Vec<bool>],
    margin: f64,
) -> Result<LossValue, LossError> {
    check_shapes(scores, labels)?;
    let c = scores.ncols();
    let mut value = 0.0;
    let mut grad = Array2::zeros(scores.raw_dim());
    for (m, label) in labels.iter().enumerate() {
        let pos: Vec<usize> = (0..c).filter(|&i| label[i]).collect();
        let neg: Vec<usize> = (0..c).filter(|&i| !label[i]).collect();
        if pos.is_empty() || neg.is_empty() {
            return Err(LossError::DegenerateLabels { row: m });
        }
        for &i in &pos {
            for &j in &neg {
                let hinge = margin - scores[[m, i]] + scores[[m, j]];
                if hinge > 0.0 {
                    value += hinge;
                    grad[[m, i]] -= 1.0;
                    grad[[m, j]] += 1.0;
                }
            }
        }
    }
    Ok(LossValue {
        value,
        grad_scores: grad,
    })
}

/// Ranking loss at the standard margin of 1.
pub fn ranking_loss(scores: &Array2<f64>, labels: &[Vec<bool>]) -> Result<LossValue, LossError> {
    ranking_loss_with_margin(scores, labels, 1.0)
}

/// Cross-entropy over match scores of externally supplied (audio) clip
/// features against the class features; the audio-supervised counterpart of
/// the caption losses. Features and class features must be unit vectors.
pub fn pt_audio_loss(
    audio_feats: &[Array1<f64>],
    labels: &[Vec<bool>],
    class_feats: &[Array1<f64>],
    tau: f64,
) -> Result<LossValue, LossError> {
    let scores = score_matrix(audio_feats, class_feats);
    ce_loss(&scores, labels, tau)
}

fn score_matrix(sample_feats: &[Array1<f64>], class_feats: &[Array1<f64>]) -> Array2<f64> {
    let m = sample_feats.len();
    let c = class_feats.len();
    Array2::from_shape_fn((m, c), |(i, j)| sample_feats[i].dot(&class_feats[j]))
}

/// A caption encoded once: its unit-norm sentence and word features plus
/// its label. Training re-uses these across every epoch since caption
/// encodings carry no gradient.
#[derive(Debug, Clone)]
pub struct EncodedCaption {
    pub sentence_feat: Array1<f64>,
    pub word_feats: Vec<Array1<f64>>,
    pub label: Vec<bool>,
}

/// Encode every caption of a corpus through the frozen encoder.
pub fn encode_batch(
    encoder: &EncoderWeights,
    corpus: &LabeledCorpus,
) -> Result<Vec<EncodedCaption>, LossError> {
    corpus
        .captions
        .iter()
        .map(|cap| {
            let toks = tokenize(&cap.text)?;
            let enc = encoder.encode_caption(&toks)?;
            Ok(EncodedCaption {
                sentence_feat: enc.sentence_feat,
                word_feats: enc.word_feats,
                label: cap.label.clone(),
            })
        })
        .collect()
}

/// The combined objective on one batch and its gradients for both prompt
/// matrices.
#[derive(Debug, Clone)]
pub struct TotalLoss {
    pub total: f64,
    /// Coarse-grain (sentence-level) term.
    pub cpt: f64,
    /// Fine-grain (word-level) term.
    pub fpt: f64,
    pub grad_coarse: Array2<f64>,
    pub grad_fine: Array2<f64>,
}

fn grain_loss(
    scores: &Array2<f64>,
    labels: &[Vec<bool>],
    task_kind: TaskKind,
    tau: f64,
    margin: f64,
) -> Result<LossValue, LossError> {
    match task_kind {
        TaskKind::SingleLabel => ce_loss(scores, labels, tau),
        TaskKind::MultiLabel => ranking_loss_with_margin(scores, labels, margin),
    }
}

/// Compute the two-grain loss on a batch of encoded captions and its
/// analytic gradients with respect to the coarse and fine prompt matrices.
///
/// The coarse term scores sentence features against the coarse class
/// features; the fine term aggregates word-against-class scores per class
/// with a softmax over words at temperature `tau_s`. Both terms use the
/// task's loss form. Accumulation follows caption and class index order so
/// repeated runs are bit-identical.
pub fn total_loss(
    encoder: &EncoderWeights,
    bank: &PromptBank,
    batch: &[EncodedCaption],
    task_kind: TaskKind,
    tau: f64,
    tau_s: f64,
    margin: f64,
) -> Result<TotalLoss, LossError> {
    assert!(!batch.is_empty(), "batch must be non-empty");
    let c = bank.num_classes();
    let labels: Vec<Vec<bool>> = batch.iter().map(|b| b.label.clone()).collect();

    // Coarse grain: sentence features vs coarse class features.
    let coarse_enc: Vec<_> = (0..c)
        .map(|cls| encoder.encode_class_prompt(bank, Grain::Coarse, cls, true))
        .collect::<Result<_, _>>()?;
    let coarse_feats: Vec<Array1<f64>> = coarse_enc
        .iter()
        .map(|e| e.sentence_feat.clone())
        .collect();
    let sentence_feats: Vec<Array1<f64>> =
        batch.iter().map(|b| b.sentence_feat.clone()).collect();
    let q = score_matrix(&sentence_feats, &coarse_feats);
    let cpt = grain_loss(&q, &labels, task_kind, tau, margin)?;

    let mut grad_coarse = Array2::zeros((bank.prompt_len(), bank.dim()));
    for (cls, enc) in coarse_enc.iter().enumerate() {
        let mut grad_u = Array1::zeros(bank.dim());
        for (m, cap) in batch.iter().enumerate() {
            let g = cpt.grad_scores[[m, cls]];
            if g != 0.0 {
                grad_u.scaled_add(g, &cap.sentence_feat);
            }
        }
        grad_coarse += &encoder.backprop_prompt(enc, &grad_u)?;
    }

    // Fine grain: word features vs fine class features, aggregated per class.
    let fine_enc: Vec<_> = (0..c)
        .map(|cls| encoder.encode_class_prompt(bank, Grain::Fine, cls, true))
        .collect::<Result<_, _>>()?;
    let fine_feats: Vec<Array1<f64>> =
        fine_enc.iter().map(|e| e.sentence_feat.clone()).collect();

    let mut word_tensors: Vec<WordScores> = Vec::with_capacity(batch.len());
    let mut q_fine = Array2::zeros((batch.len(), c));
    for (m, cap) in batch.iter().enumerate() {
        let p = word_scores(&cap.word_feats, &fine_feats)
            .map_err(|e| LossError::ShapeMismatch(e.to_string()))?;
        q_fine.row_mut(m).assign(&aggregate_fine(&p, tau_s));
        word_tensors.push(p);
    }
    let fpt = grain_loss(&q_fine, &labels, task_kind, tau, margin)?;

    let mut grad_fine = Array2::zeros((bank.prompt_len(), bank.dim()));
    for (cls, enc) in fine_enc.iter().enumerate() {
        let mut grad_u = Array1::zeros(bank.dim());
        for (m, cap) in batch.iter().enumerate() {
            let g = fpt.grad_scores[[m, cls]];
            if g == 0.0 {
                continue;
            }
            let dq_dp = aggregate_fine_grad(&word_tensors[m], tau_s);
            for (o, wf) in cap.word_feats.iter().enumerate() {
                grad_u.scaled_add(g * dq_dp[[o, cls]], wf);
            }
        }
        grad_fine += &encoder.backprop_prompt(enc, &grad_u)?;
    }

    Ok(TotalLoss {
        total: cpt.value + fpt.value,
        cpt: cpt.value,
        fpt: fpt.value,
        grad_coarse,
        grad_fine,
    })
}
