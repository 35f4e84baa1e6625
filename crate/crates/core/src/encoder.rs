//! A compact, frozen, seed-deterministic text encoder: token embeddings plus
//! sinusoidal position encodings, one single-head scaled-dot-product
//! self-attention layer with a residual connection, and L2-normalized
//! outputs. The CLS position provides the sentence feature; word positions
//! provide word features.
//!
//! Class prompts are encoded as `[CLS]` followed by the learnable prompt
//! rows (used directly as embeddings) and the class-name token embeddings.
//! Analytic gradients are available with respect to the prompt rows only;
//! everything else is frozen.

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

use crate::corpus::{tokenize, CorpusError, TokenSeq};
use crate::hash::{checksum_f64, derive_seed};

#[derive(Debug, thiserror::Error)]
pub enum EncoderError {
    #[error("cannot encode an empty sequence")]
    EmptySequence,
    #[error("token id {id} exceeds embedding table of {buckets} buckets")]
    TokenOutOfRange { id: u32, buckets: usize },
    #[error("class index {index} out of range for {classes} classes")]
    IndexOutOfRange { index: usize, classes: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no cached activations; encode with want_grad = true first")]
    NoCache,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// Which prompt matrix a class encoding is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grain {
    Coarse,
    Fine,
}

/// Frozen encoder parameters, fully determined by (seed, d, bucket_count).
#[derive(Debug, Clone)]
pub struct EncoderWeights {
    pub token_embed: Array2<f64>,
    pub cls_embed: Array1<f64>,
    pub attn_q: Array2<f64>,
    pub attn_k: Array2<f64>,
    pub attn_v: Array2<f64>,
    pub seed: u64,
    pub d: usize,
}

pub(crate) fn gaussian_matrix(
    seed: u64,
    tag: &str,
    rows: usize,
    cols: usize,
    std: f64,
) -> Array2<f64> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(seed, tag));
    let normal = Normal::new(0.0, std).expect("std > 0");
    Array2::from_shape_fn((rows, cols), |_| normal.sample(&mut rng))
}

/// Regenerate the frozen encoder from its seed. All matrices are drawn
/// i.i.d. Gaussian with mean 0 and std 1/sqrt(d).
pub fn init_encoder(seed: u64, d: usize, bucket_count: usize) -> EncoderWeights {
    assert!(d >= 2, "embedding dimension must be at least 2");
    assert!(bucket_count >= d, "bucket count must be at least d");
    let std = 1.0 / (d as f64).sqrt();
    EncoderWeights {
        token_embed: gaussian_matrix(seed, "encoder/token_embed", bucket_count, d, std),
        cls_embed: gaussian_matrix(seed, "encoder/cls_embed", 1, d, std)
            .row(0)
            .to_owned(),
        attn_q: gaussian_matrix(seed, "encoder/attn_q", d, d, std),
        attn_k: gaussian_matrix(seed, "encoder/attn_k", d, d, std),
        attn_v: gaussian_matrix(seed, "encoder/attn_v", d, d, std),
        seed,
        d,
    }
}

/// Sinusoidal position encoding for one position, scaled to the token
/// embedding magnitude (std 1/sqrt(d)) so position never drowns content.
fn position_encoding(pos: usize, d: usize) -> Array1<f64> {
    let amplitude = 1.0 / (d as f64).sqrt();
    Array1::from_shape_fn(d, |j| {
        let pair = (j / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * pair / d as f64);
        amplitude
            * if j % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
    })
}

/// Activations retained by a `want_grad` forward pass, sufficient to push a
/// sentence-feature gradient back onto the prompt rows.
#[derive(Debug, Clone)]
pub struct PromptCache {
    attn_cls: Array1<f64>,
    values: Array2<f64>,
    query_cls: Array1<f64>,
    pre_norm_cls: Array1<f64>,
    prompt_start: usize,
    prompt_len: usize,
}

/// Sentence- and word-level features of one encoded sequence.
#[derive(Debug, Clone)]
pub struct EncodedText {
    /// Unit-norm feature at the CLS position.
    pub sentence_feat: Array1<f64>,
    /// Unit-norm features at the non-CLS positions.
    pub word_feats: Vec<Array1<f64>>,
    /// Present only when the forward pass was run with `want_grad`.
    pub cache: Option<Box<PromptCache>>,
}

fn l2_normalize(v: &Array1<f64>) -> Array1<f64> {
    let norm = v.dot(v).sqrt();
    // NaN passes through so a diverged bank surfaces as NonFiniteLoss.
    debug_assert!(norm != 0.0, "zero-norm encoder output");
    v / norm
}

impl EncoderWeights {
    pub fn bucket_count(&self) -> usize {
        self.token_embed.nrows()
    }

    /// Checksum over every parameter's bit pattern; used to verify the
    /// frozen-encoder property across training runs.
    pub fn checksum(&self) -> u64 {
        checksum_f64(
            self.token_embed
                .iter()
                .chain(self.cls_embed.iter())
                .chain(self.attn_q.iter())
                .chain(self.attn_k.iter())
                .chain(self.attn_v.iter())
                .copied(),
        )
    }

    fn embed_token(&self, id: u32) -> Result<Array1<f64>, EncoderError> {
        if (id as usize) >= self.bucket_count() {
            return Err(EncoderError::TokenOutOfRange {
                id,
                buckets: self.bucket_count(),
            });
        }
        Ok(self.token_embed.row(id as usize).to_owned())
    }

    /// One attention block over the embedded sequence. `prompt_span` marks
    /// the rows of `x` that correspond to learnable prompt embeddings; it is
    /// recorded in the cache when `want_grad` is set.
    fn forward(
        &self,
        x: Array2<f64>,
        prompt_span: (usize, usize),
        want_grad: bool,
    ) -> EncodedText {
        let s = x.nrows();
        let scale = 1.0 / (self.d as f64).sqrt();
        let q = x.dot(&self.attn_q);
        let k = x.dot(&self.attn_k);
        let v = x.dot(&self.attn_v);

        let mut z = q.dot(&k.t());
        z *= scale;
        // Row-wise softmax with max subtraction.
        let mut attn = z;
        for mut row in attn.axis_iter_mut(Axis(0)) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|e| (e - max).exp());
            let sum = row.sum();
            row /= sum;
        }

        let h = &x + &attn.dot(&v);
        let sentence_feat = l2_normalize(&h.row(0).to_owned());
        let word_feats = (1..s).map(|i| l2_normalize(&h.row(i).to_owned())).collect();

        let cache = want_grad.then(|| {
            Box::new(PromptCache {
                attn_cls: attn.row(0).to_owned(),
                values: v,
                query_cls: q.row(0).to_owned(),
                pre_norm_cls: h.row(0).to_owned(),
                prompt_start: prompt_span.0,
                prompt_len: prompt_span.1,
            })
        });

        EncodedText {
            sentence_feat,
            word_feats,
            cache,
        }
    }

    /// Embed `[CLS] + tokens` with position encodings and run the block.
    /// Word features come out in token order.
    pub fn encode_caption(&self, toks: &TokenSeq) -> Result<EncodedText, EncoderError> {
        if toks.is_empty() {
            return Err(EncoderError::EmptySequence);
        }
        let s = toks.len() + 1;
        let mut x = Array2::zeros((s, self.d));
        x.row_mut(0).assign(&(&self.cls_embed + &position_encoding(0, self.d)));
        for (i, &id) in toks.ids.iter().enumerate() {
            let row = self.embed_token(id)? + position_encoding(i + 1, self.d);
            x.row_mut(i + 1).assign(&row);
        }
        Ok(self.forward(x, (0, 0), false))
    }

    /// Encode one class prompt: `[CLS]`, then the N prompt rows of the
    /// selected grain used directly as embeddings, then the class-name
    /// token embeddings. The sentence feature is the class prompt feature.
    pub fn encode_class_prompt(
        &self,
        bank: &PromptBank,
        grain: Grain,
        class_index: usize,
        want_grad: bool,
    ) -> Result<EncodedText, EncoderError> {
        if class_index >= bank.num_classes() {
            return Err(EncoderError::IndexOutOfRange {
                index: class_index,
                classes: bank.num_classes(),
            });
        }
        if bank.dim() != self.d {
            return Err(EncoderError::DimensionMismatch {
                expected: self.d,
                got: bank.dim(),
            });
        }
        let prompt = match grain {
            Grain::Coarse => &bank.coarse,
            Grain::Fine => &bank.fine,
        };
        let n = prompt.nrows();
        let name_toks = &bank.class_tokens[class_index];
        let s = 1 + n + name_toks.len();

        let mut x = Array2::zeros((s, self.d));
        x.row_mut(0).assign(&(&self.cls_embed + &position_encoding(0, self.d)));
        for j in 0..n {
            let row = &prompt.row(j) + &position_encoding(1 + j, self.d);
            x.row_mut(1 + j).assign(&row);
        }
        for (i, &id) in name_toks.ids.iter().enumerate() {
            let pos = 1 + n + i;
            let row = self.embed_token(id)? + position_encoding(pos, self.d);
            x.row_mut(pos).assign(&row);
        }
        Ok(self.forward(x, (1, n), want_grad))
    }

    /// Exact analytic gradient of an upstream scalar with respect to the
    /// prompt rows used in the cached forward pass, given the scalar's
    /// gradient with respect to the sentence feature. Composes the L2
    /// normalization, the residual, and both attention pathways (values and
    /// keys) that touch the prompt rows.
    pub fn backprop_prompt(
        &self,
        text: &EncodedText,
        grad_sentence_feat: &Array1<f64>,
    ) -> Result<Array2<f64>, EncoderError> {
        let cache = text.cache.as_deref().ok_or(EncoderError::NoCache)?;
        if grad_sentence_feat.len() != self.d {
            return Err(EncoderError::DimensionMismatch {
                expected: self.d,
                got: grad_sentence_feat.len(),
            });
        }
        let scale = 1.0 / (self.d as f64).sqrt();

        // Through y = h / ||h||.
        let h = &cache.pre_norm_cls;
        let norm = h.dot(h).sqrt();
        let y = h / norm;
        let g_dot_y = grad_sentence_feat.dot(&y);
        let dh = (grad_sentence_feat - &(g_dot_y * &y)) / norm;

        // Through h_cls = x_cls + sum_j a_j * v_j.
        let da = cache.values.dot(&dh); // da_j = <v_j, dh>
        let weighted = cache.attn_cls.dot(&da);
        let dz = &cache.attn_cls * &(&da - weighted); // softmax backward, CLS row

        let mut grad = Array2::zeros((cache.prompt_len, self.d));
        for (row, j) in (cache.prompt_start..cache.prompt_start + cache.prompt_len).enumerate() {
            let dv_j = cache.attn_cls[j] * &dh;
            let dk_j = (dz[j] * scale) * &cache.query_cls;
            let dx_j = dv_j.dot(&self.attn_v.t()) + dk_j.dot(&self.attn_k.t());
            grad.row_mut(row).assign(&dx_j);
        }
        Ok(grad)
    }
}

/// Learnable coarse and fine prompt matrices plus the frozen class-name
/// token sequences they are completed with.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptBank {
    pub coarse: Array2<f64>,
    pub fine: Array2<f64>,
    pub class_names: Vec<String>,
    pub class_tokens: Vec<TokenSeq>,
}

impl PromptBank {
    pub fn new(
        coarse: Array2<f64>,
        fine: Array2<f64>,
        class_names: Vec<String>,
    ) -> Result<Self, EncoderError> {
        assert_eq!(coarse.dim(), fine.dim(), "coarse and fine shapes must match");
        let class_tokens = class_names
            .iter()
            .map(|n| tokenize(n))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            coarse,
            fine,
            class_names,
            class_tokens,
        })
    }

    /// Prompt length N.
    pub fn prompt_len(&self) -> usize {
        self.coarse.nrows()
    }

    pub fn dim(&self) -> usize {
        self.coarse.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// The same learned prompt rows retargeted at a different class list;
    /// used for source-to-target transfer without retraining.
    pub fn retarget(&self, class_names: &[String]) -> Result<Self, EncoderError> {
        Self::new(
            self.coarse.clone(),
            self.fine.clone(),
            class_names.to_vec(),
        )
    }

    /// Checksum over both prompt matrices, for no-mutation assertions.
    pub fn checksum(&self) -> u64 {
        checksum_f64(self.coarse.iter().chain(self.fine.iter()).copied())
    }
}
