//! Match scores between caption features and class prompt features: coarse
//! sentence-level cosines, fine word-level score matrices with
//! softmax-weighted aggregation over words, and the coarse+fine ensemble.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ScoreError {
    #[error("cosine of a zero vector is undefined")]
    ZeroVector,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Which score path produced a matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    Coarse,
    Fine,
    Ensemble,
}

/// Per-sample, per-class match scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    /// M samples by C classes.
    pub values: Array2<f64>,
    pub kind: ScoreKind,
}

impl ScoreMatrix {
    pub fn num_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.values.ncols()
    }

    /// Export as CSV: header row of class names, one row per sample.
    pub fn write_csv<W: std::io::Write>(
        &self,
        class_names: &[String],
        out: W,
    ) -> Result<(), csv::Error> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(class_names)?;
        for row in self.values.rows() {
            wtr.write_record(row.iter().map(|v| format!("{v}")))?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Word-by-class cosine scores for a single caption: O rows, C columns.
#[derive(Debug, Clone, PartialEq)]
pub struct WordScores(pub Array2<f64>);

impl WordScores {
    pub fn num_words(&self) -> usize {
        self.0.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.0.ncols()
    }
}

/// Plain cosine similarity.
pub fn cosine(a: &Array1<f64>, b: &Array1<f64>) -> Result<f64, ScoreError> {
    if a.len() != b.len() {
        return Err(ScoreError::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let na = a.dot(a).sqrt();
    let nb = b.dot(b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(ScoreError::ZeroVector);
    }
    Ok(a.dot(b) / (na * nb))
}

/// One row of match scores: the caption's sentence feature against every
/// class feature. Inputs are unit vectors by the encoder contract, so the
/// cosine reduces to a dot product.
pub fn coarse_scores(
    caption_feat: &Array1<f64>,
    class_feats: &[Array1<f64>],
) -> Result<Array1<f64>, ScoreError> {
    let mut row = Array1::zeros(class_feats.len());
    for (c, feat) in class_feats.iter().enumerate() {
        if feat.len() != caption_feat.len() {
            return Err(ScoreError::DimensionMismatch {
                expected: caption_feat.len(),
                got: feat.len(),
            });
        }
        row[c] = caption_feat.dot(feat);
    }
    Ok(row)
}

/// Word-level score matrix: every word feature against every fine class
/// feature.
pub fn word_scores(
    word_feats: &[Array1<f64>],
    fine_class_feats: &[Array1<f64>],
) -> Result<WordScores, ScoreError> {
    let o = word_feats.len();
    let c = fine_class_feats.len();
    let mut p = Array2::zeros((o, c));
    for (i, wf) in word_feats.iter().enumerate() {
        let row = coarse_scores(wf, fine_class_feats)?;
        p.row_mut(i).assign(&row);
    }
    Ok(WordScores(p))
}

/// Softmax weights over one column of word scores at temperature `tau_s`,
/// with max subtraction for stability.
fn column_weights(column: &Array1<f64>, tau_s: f64) -> Array1<f64> {
    let max = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut w = column.mapv(|p| ((p - max) / tau_s).exp());
    let sum = w.sum();
    w /= sum;
    w
}

/// Aggregate word-level scores into one score per class: per class, a
/// softmax over words of `p / tau_s` weights the word scores. The result is
/// a convex combination, so it lies within each column's [min, max] range;
/// small temperatures approach the column max, large ones the column mean.
pub fn aggregate_fine(p: &WordScores, tau_s: f64) -> Array1<f64> {
    assert!(tau_s > 0.0, "tau_s must be positive");
    let (_, c) = p.0.dim();
    let mut out = Array1::zeros(c);
    for l in 0..c {
        let column = p.0.column(l).to_owned();
        let w = column_weights(&column, tau_s);
        out[l] = w.dot(&column);
    }
    out
}

/// Gradient of `aggregate_fine` with respect to the word scores:
/// dq'/dp[o][l] = w_o * (1 + (p[o][l] - q'_l) / tau_s), zero across columns.
pub fn aggregate_fine_grad(p: &WordScores, tau_s: f64) -> Array2<f64> {
    let (o, c) = p.0.dim();
    let mut grad = Array2::zeros((o, c));
    for l in 0..c {
        let column = p.0.column(l).to_owned();
        let w = column_weights(&column, tau_s);
        let q = w.dot(&column);
        for i in 0..o {
            grad[[i, l]] = w[i] * (1.0 + (column[i] - q) / tau_s);
        }
    }
    grad
}

/// Element-wise sum of the coarse and fine score rows.
pub fn ensemble(coarse: &Array1<f64>, fine: &Array1<f64>) -> Result<Array1<f64>, ScoreError> {
    if coarse.len() != fine.len() {
        return Err(ScoreError::DimensionMismatch {
            expected: coarse.len(),
            got: fine.len(),
        });
    }
    Ok(coarse + fine)
}
