//! Prompt-bank initialization, the optimization loop over caption batches
//! (or precomputed audio features), and binary prompt checkpoints.
//!
//! The encoder is frozen throughout; only the coarse and fine prompt
//! matrices receive updates. Caption encodings are computed once per run
//! and re-used across epochs. Everything is a pure function of the config
//! seed, so repeated runs are bit-identical.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::corpus::{LabeledCorpus, TaskKind};
use crate::encoder::{gaussian_matrix, EncoderError, EncoderWeights, PromptBank};
use crate::losses::{encode_batch, pt_audio_loss, total_loss, LossError};

const CHECKPOINT_MAGIC: &[u8; 4] = b"PTXT";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("loss became non-finite at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("parameter and gradient shapes disagree")]
    ShapeMismatch,
    #[error("config task {config:?} does not match corpus task {corpus:?}")]
    TaskMismatch { config: TaskKind, corpus: TaskKind },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("unsupported checkpoint version {found} (expected {CHECKPOINT_VERSION})")]
    VersionMismatch { found: u32 },
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Adam,
    Sgd,
}

/// Training hyperparameters; mirrors the JSON config file one-to-one.
/// Unknown keys are rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Number of learnable prompt tokens N.
    pub prompt_len: usize,
    /// Feature dimension d of the frozen encoder.
    pub dim: usize,
    /// Token embedding buckets of the frozen encoder.
    pub bucket_count: usize,
    /// Logit temperature for the cross-entropy losses.
    pub tau: f64,
    /// Word-aggregation temperature for the fine-grained scores.
    pub tau_s: f64,
    /// Captions collected per class (L).
    pub captions_per_class: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Single seed driving encoder weights, prompt init, and splits.
    pub seed: u64,
    pub task: TaskKind,
    pub optimizer: Optimizer,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Hinge margin of the multi-label ranking loss.
    pub margin: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            prompt_len: 16,
            dim: 32,
            bucket_count: 4096,
            tau: 0.01,
            tau_s: 0.10,
            captions_per_class: 16,
            lr: 0.01,
            epochs: 200,
            batch_size: 32,
            seed: 0,
            task: TaskKind::SingleLabel,
            optimizer: Optimizer::Adam,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            margin: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        // NaN must fail the positivity checks too.
        let positive = |x: f64| x.is_finite() && x > 0.0;
        let fail = |msg: &str| Err(TrainError::InvalidConfig(msg.to_string()));
        if self.prompt_len < 1 {
            return fail("prompt_len must be at least 1");
        }
        if self.dim < 2 {
            return fail("dim must be at least 2");
        }
        if self.bucket_count < self.dim {
            return fail("bucket_count must be at least dim");
        }
        if !positive(self.tau) {
            return fail("tau must be positive");
        }
        if !positive(self.tau_s) {
            return fail("tau_s must be positive");
        }
        if self.captions_per_class < 1 {
            return fail("captions_per_class must be at least 1");
        }
        if !positive(self.lr) {
            return fail("lr must be positive");
        }
        if self.batch_size < 1 {
            return fail("batch_size must be at least 1");
        }
        if !positive(self.margin) {
            return fail("margin must be positive");
        }
        Ok(())
    }

    /// The frozen encoder this config describes.
    pub fn build_encoder(&self) -> EncoderWeights {
        crate::encoder::init_encoder(self.seed, self.dim, self.bucket_count)
    }
}

/// Loss values recorded at the end of one epoch (summed over its steps).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub total: f64,
    pub coarse: f64,
    pub fine: f64,
}

/// Outcome of one training run.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub wall_time_s: f64,
    pub bank: PromptBank,
}

/// Initialize both prompt matrices N x d with i.i.d. Gaussian entries of
/// std 0.02, keyed by (seed, grain tag).
pub fn init_prompts(cfg: &TrainConfig, class_names: &[String]) -> Result<PromptBank, TrainError> {
    cfg.validate()?;
    let coarse = gaussian_matrix(cfg.seed, "prompt/coarse", cfg.prompt_len, cfg.dim, 0.02);
    let fine = gaussian_matrix(cfg.seed, "prompt/fine", cfg.prompt_len, cfg.dim, 0.02);
    Ok(PromptBank::new(coarse, fine, class_names.to_vec())?)
}

/// First and second moment estimates for one parameter matrix.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Array2<f64>,
    pub v: Array2<f64>,
}

impl AdamState {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            m: Array2::zeros((rows, cols)),
            v: Array2::zeros((rows, cols)),
        }
    }
}

/// Standard bias-corrected Adam update, applied in place.
#[allow(clippy::too_many_arguments)]
pub fn adam_update(
    params: &mut Array2<f64>,
    grads: &Array2<f64>,
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step: usize,
) -> Result<(), TrainError> {
    if params.dim() != grads.dim() || params.dim() != state.m.dim() {
        return Err(TrainError::ShapeMismatch);
    }
    assert!(step >= 1, "Adam step counter starts at 1");
    state.m.zip_mut_with(grads, |m, &g| *m = beta1 * *m + (1.0 - beta1) * g);
    state.v.zip_mut_with(grads, |v, &g| *v = beta2 * *v + (1.0 - beta2) * g * g);
    let bc1 = 1.0 - beta1.powi(step as i32);
    let bc2 = 1.0 - beta2.powi(step as i32);
    for ((p, &m), &v) in params
        .iter_mut()
        .zip(state.m.iter())
        .zip(state.v.iter())
    {
        let m_hat = m / bc1;
        let v_hat = v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + epsilon);
    }
    Ok(())
}

struct PromptOptimizer {
    kind: Optimizer,
    coarse: AdamState,
    fine: AdamState,
    step: usize,
}

impl PromptOptimizer {
    fn new(cfg: &TrainConfig) -> Self {
        Self {
            kind: cfg.optimizer,
            coarse: AdamState::zeros(cfg.prompt_len, cfg.dim),
            fine: AdamState::zeros(cfg.prompt_len, cfg.dim),
            step: 0,
        }
    }

    fn apply(
        &mut self,
        cfg: &TrainConfig,
        bank: &mut PromptBank,
        grad_coarse: &Array2<f64>,
        grad_fine: &Array2<f64>,
    ) -> Result<(), TrainError> {
        self.step += 1;
        match self.kind {
            Optimizer::Adam => {
                adam_update(
                    &mut bank.coarse,
                    grad_coarse,
                    &mut self.coarse,
                    cfg.lr,
                    cfg.beta1,
                    cfg.beta2,
                    cfg.epsilon,
                    self.step,
                )?;
                adam_update(
                    &mut bank.fine,
                    grad_fine,
                    &mut self.fine,
                    cfg.lr,
                    cfg.beta1,
                    cfg.beta2,
                    cfg.epsilon,
                    self.step,
                )?;
            }
            Optimizer::Sgd => {
                bank.coarse.scaled_add(-cfg.lr, grad_coarse);
                bank.fine.scaled_add(-cfg.lr, grad_fine);
            }
        }
        Ok(())
    }
}

/// Train both prompt matrices on a labeled caption corpus. Runs
/// `epochs x ceil(M / batch_size)` steps over fixed-order batches; caption
/// encodings are computed once up front.
pub fn train(
    cfg: &TrainConfig,
    corpus: &LabeledCorpus,
    encoder: &EncoderWeights,
) -> Result<TrainReport, TrainError> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(TrainError::InvalidConfig("corpus is empty".into()));
    }
    if cfg.task != corpus.task_kind {
        return Err(TrainError::TaskMismatch {
            config: cfg.task,
            corpus: corpus.task_kind,
        });
    }
    let started = Instant::now();
    let checksum_before = encoder.checksum();

    let batch_all = encode_batch(encoder, corpus)?;
    let mut bank = init_prompts(cfg, &corpus.class_names)?;
    let mut optimizer = PromptOptimizer::new(cfg);

    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let mut sums = (0.0, 0.0, 0.0);
        for chunk in batch_all.chunks(cfg.batch_size) {
            step += 1;
            let tl = total_loss(
                encoder,
                &bank,
                chunk,
                corpus.task_kind,
                cfg.tau,
                cfg.tau_s,
                cfg.margin,
            )?;
            if !tl.total.is_finite() {
                return Err(TrainError::NonFiniteLoss { step });
            }
            optimizer.apply(cfg, &mut bank, &tl.grad_coarse, &tl.grad_fine)?;
            sums.0 += tl.total;
            sums.1 += tl.coarse;
            sums.2 += tl.fine;
        }
        epochs.push(EpochStats {
            epoch,
            total: sums.0,
            coarse: sums.1,
            fine: sums.2,
        });
    }

    assert_eq!(
        encoder.checksum(),
        checksum_before,
        "frozen encoder was mutated during training"
    );
    Ok(TrainReport {
        epochs,
        wall_time_s: started.elapsed().as_secs_f64(),
        bank,
    })
}

/// PT-Audio baseline: train the coarse prompt matrix against externally
/// supplied unit-norm clip features with one-hot labels. The fine matrix
/// stays at its initialization.
pub fn train_on_features(
    cfg: &TrainConfig,
    feats: &[Array1<f64>],
    labels: &[Vec<bool>],
    class_names: &[String],
    encoder: &EncoderWeights,
) -> Result<TrainReport, TrainError> {
    cfg.validate()?;
    if feats.is_empty() || feats.len() != labels.len() {
        return Err(TrainError::InvalidConfig(
            "features and labels must be non-empty and equal length".into(),
        ));
    }
    let started = Instant::now();
    let mut bank = init_prompts(cfg, class_names)?;
    let mut optimizer = PromptOptimizer::new(cfg);
    let c = class_names.len();

    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    let indices: Vec<usize> = (0..feats.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        for chunk in indices.chunks(cfg.batch_size) {
            step += 1;
            let chunk_feats: Vec<Array1<f64>> =
                chunk.iter().map(|&i| feats[i].clone()).collect();
            let chunk_labels: Vec<Vec<bool>> =
                chunk.iter().map(|&i| labels[i].clone()).collect();

            let class_enc: Vec<_> = (0..c)
                .map(|cls| {
                    encoder.encode_class_prompt(&bank, crate::encoder::Grain::Coarse, cls, true)
                })
                .collect::<Result<_, _>>()?;
            let class_feats: Vec<Array1<f64>> = class_enc
                .iter()
                .map(|e| e.sentence_feat.clone())
                .collect();
            let loss = pt_audio_loss(&chunk_feats, &chunk_labels, &class_feats, cfg.tau)?;
            if !loss.value.is_finite() {
                return Err(TrainError::NonFiniteLoss { step });
            }

            let mut grad_coarse = Array2::zeros((cfg.prompt_len, cfg.dim));
            for (cls, enc) in class_enc.iter().enumerate() {
                let mut grad_u = Array1::zeros(cfg.dim);
                for (row, feat) in chunk_feats.iter().enumerate() {
                    let g = loss.grad_scores[[row, cls]];
                    if g != 0.0 {
                        grad_u.scaled_add(g, feat);
                    }
                }
                grad_coarse += &encoder.backprop_prompt(enc, &grad_u)?;
            }
            let grad_fine = Array2::zeros((cfg.prompt_len, cfg.dim));
            optimizer.apply(cfg, &mut bank, &grad_coarse, &grad_fine)?;
            epoch_loss += loss.value;
        }
        epochs.push(EpochStats {
            epoch,
            total: epoch_loss,
            coarse: epoch_loss,
            fine: 0.0,
        });
    }
    Ok(TrainReport {
        epochs,
        wall_time_s: started.elapsed().as_secs_f64(),
        bank,
    })
}

fn write_u32<W: Write>(w: &mut W, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_u64<W: Write>(w: &mut W, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn read_exact_or_corrupt<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), TrainError> {
    r.read_exact(buf)
        .map_err(|_| TrainError::CorruptCheckpoint("unexpected end of file".into()))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, TrainError> {
    let mut buf = [0u8; 4];
    read_exact_or_corrupt(r, &mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, TrainError> {
    let mut buf = [0u8; 8];
    read_exact_or_corrupt(r, &mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

/// Serialize a prompt bank: magic `PTXT`, format version, seed, N, d, C,
/// the class-name table, then the coarse and fine matrices as row-major
/// little-endian f64. The write is atomic (temp file + rename).
pub fn save_checkpoint(bank: &PromptBank, seed: u64, path: &Path) -> Result<(), TrainError> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    write_u32(&mut buf, CHECKPOINT_VERSION)?;
    write_u64(&mut buf, seed)?;
    write_u32(&mut buf, bank.prompt_len() as u32)?;
    write_u32(&mut buf, bank.dim() as u32)?;
    write_u32(&mut buf, bank.num_classes() as u32)?;
    for name in &bank.class_names {
        write_u32(&mut buf, name.len() as u32)?;
        buf.extend_from_slice(name.as_bytes());
    }
    for &x in bank.coarse.iter().chain(bank.fine.iter()) {
        buf.extend_from_slice(&x.to_le_bytes());
    }

    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &buf)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Load a prompt bank and the seed it was trained under.
pub fn load_checkpoint(path: &Path) -> Result<(PromptBank, u64), TrainError> {
    let data = fs::read(path)?;
    let mut r = data.as_slice();

    let mut magic = [0u8; 4];
    read_exact_or_corrupt(&mut r, &mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(TrainError::CorruptCheckpoint("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(TrainError::VersionMismatch { found: version });
    }
    let seed = read_u64(&mut r)?;
    let n = read_u32(&mut r)? as usize;
    let d = read_u32(&mut r)? as usize;
    let c = read_u32(&mut r)? as usize;

    let mut class_names = Vec::with_capacity(c);
    for _ in 0..c {
        let len = read_u32(&mut r)? as usize;
        let mut bytes = vec![0u8; len];
        read_exact_or_corrupt(&mut r, &mut bytes)?;
        let name = String::from_utf8(bytes)
            .map_err(|_| TrainError::CorruptCheckpoint("class name is not UTF-8".into()))?;
        class_names.push(name);
    }

    let mut read_matrix = |rows: usize, cols: usize| -> Result<Array2<f64>, TrainError> {
        let mut m = Array2::zeros((rows, cols));
        for i in 0..rows {
            for j in 0..cols {
                let mut buf = [0u8; 8];
                read_exact_or_corrupt(&mut r, &mut buf)?;
                m[[i, j]] = f64::from_le_bytes(buf);
            }
        }
        Ok(m)
    };
    let coarse = read_matrix(n, d)?;
    let fine = read_matrix(n, d)?;
    if !r.is_empty() {
        return Err(TrainError::CorruptCheckpoint(format!(
            "{} trailing bytes",
            r.len()
        )));
    }
    let bank = PromptBank::new(coarse, fine, class_names)?;
    Ok((bank, seed))
}
