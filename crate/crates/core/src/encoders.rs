//! Multi-view image encoder and the transformer text encoder with
//! disease-query summarization.

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::params::Bound;
use crate::tensor::{AttentionWeights, Real, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ViewTag {
    #[serde(rename = "AP")]
    Ap,
    #[serde(rename = "PA")]
    Pa,
    #[serde(rename = "LA")]
    La,
    #[serde(rename = "SYNTH")]
    Synth,
}

impl ViewTag {
    pub fn is_frontal(self) -> bool {
        matches!(self, ViewTag::Ap | ViewTag::Pa)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ViewTag::Ap => "AP",
            ViewTag::Pa => "PA",
            ViewTag::La => "LA",
            ViewTag::Synth => "SYNTH",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "AP" => ViewTag::Ap,
            "PA" => ViewTag::Pa,
            "LA" => ViewTag::La,
            "SYNTH" => ViewTag::Synth,
            _ => return None,
        })
    }
}

/// One grayscale view, row-major `height × width`, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewImage {
    pub tag: ViewTag,
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f32>,
}

impl ViewImage {
    /// Builds a view, clamping every pixel into `[0, 1]`.
    pub fn new(tag: ViewTag, height: usize, width: usize, mut pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != height * width || height == 0 {
            return Err(Error::shape("view", &[height, width], &[pixels.len()]));
        }
        for p in &mut pixels {
            *p = p.clamp(0.0, 1.0);
        }
        Ok(ViewImage {
            tag,
            height,
            width,
            pixels,
        })
    }

    pub fn blank(tag: ViewTag, height: usize, width: usize) -> Self {
        ViewImage {
            tag,
            height,
            width,
            pixels: vec![0.0; height * width],
        }
    }

    pub fn at(&self, y: usize, x: usize) -> f32 {
        self.pixels[y * self.width + x]
    }
}

/// Vocabulary indices of one text.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct TokenSequence(pub Vec<usize>);

impl TokenSequence {
    pub fn new(ids: Vec<usize>) -> Self {
        TokenSequence(ids)
    }

    pub fn ids(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        match self.0.iter().find(|&&id| id >= vocab_size) {
            Some(&id) => Err(Error::Vocabulary {
                id,
                size: vocab_size,
            }),
            None => Ok(()),
        }
    }
}

/// Shared per-view feature extractor: two strided 3×3 convolutions and a
/// dense layer to `R^c`, then elementwise max over the views.
pub fn encode_views<F: Real>(
    tape: &mut Tape<F>,
    p: &Bound,
    cfg: &ModelConfig,
    views: &[&ViewImage],
) -> Result<Var> {
    if views.is_empty() {
        return Err(Error::Precondition("study has no views".into()));
    }
    let feats = views
        .iter()
        .map(|v| encode_single_view(tape, p, cfg, v))
        .collect::<Result<Vec<_>>>()?;
    tape.maxpool_over_set(&feats)
}

fn encode_single_view<F: Real>(
    tape: &mut Tape<F>,
    p: &Bound,
    cfg: &ModelConfig,
    view: &ViewImage,
) -> Result<Var> {
    let s = cfg.image_size;
    if view.height != s || view.width != s {
        return Err(Error::shape("encode_views", &[s, s], &[view.height, view.width]));
    }
    let pixels = view.pixels.iter().map(|&x| F::from_f64_lossy(x as f64)).collect();
    let img = tape.constant(Tensor::matrix(s * s, 1, pixels)?);

    let cols = tape.im2col(img, (s, s), 3, 2, 1)?;
    let h = tape.matmul(cols, p["backbone.conv1.w"])?;
    let h = tape.add_row(h, p["backbone.conv1.b"])?;
    let h = tape.gelu(h);

    let s2 = s.div_ceil(2);
    let cols = tape.im2col(h, (s2, s2), 3, 2, 1)?;
    let h = tape.matmul(cols, p["backbone.conv2.w"])?;
    let h = tape.add_row(h, p["backbone.conv2.b"])?;
    let h = tape.gelu(h);

    let flat = tape.value(h).numel();
    let h = tape.reshape(h, &[1, flat])?;
    let h = tape.matmul(h, p["backbone.fc.w"])?;
    let h = tape.add_row(h, p["backbone.fc.b"])?;
    Ok(tape.gelu(h))
}

/// Token embeddings (rows of the shared vocabulary table) plus learned
/// positions, run through the `history` stack. Bidirectional.
pub fn encode_text<F: Real>(
    tape: &mut Tape<F>,
    p: &Bound,
    cfg: &ModelConfig,
    tokens: &TokenSequence,
) -> Result<Var> {
    if tokens.is_empty() {
        return Err(Error::Precondition("empty text".into()));
    }
    let rows = tape.gather_rows(p["vocab.w"], tokens.ids())?;
    encode_embedded(tape, p, cfg, "history", rows)
}

/// Runs the text stack `prefix` over already-embedded rows (`l×e`).
pub fn encode_embedded<F: Real>(
    tape: &mut Tape<F>,
    p: &Bound,
    cfg: &ModelConfig,
    prefix: &str,
    rows: Var,
) -> Result<Var> {
    let x = add_positions(tape, p, cfg, prefix, rows)?;
    transformer_stack(tape, p, cfg, prefix, x, None)
}

pub(crate) fn add_positions<F: Real>(
    tape: &mut Tape<F>,
    p: &Bound,
    cfg: &ModelConfig,
    prefix: &str,
    rows: Var,
) -> Result<Var> {
    let l = tape.value(rows).rows();
    if l > cfg.max_len {
        return Err(Error::Length {
            len: l,
            max: cfg.max_len,
        });
    }
    if !cfg.positional {
        return Ok(rows);
    }
    let pos = tape.slice_rows(p[&format!("{prefix}.pos")], 0, l)?;
    tape.add(rows, pos)
}

/// Pre-norm transformer blocks followed by a final layer norm.
pub(crate) fn transformer_stack<F: Real>(
    tape: &mut Tape<F>,
    p: &Bound,
    cfg: &ModelConfig,
    prefix: &str,
    mut x: Var,
    mask: Option<&[bool]>,
) -> Result<Var> {
    let eps = cfg.ln_eps;
    for layer in 0..cfg.layers {
        let name = |s: &str| format!("{prefix}.{layer}.{s}");
        let h = tape.layer_norm_rows(x, p[&name("ln1.g")], p[&name("ln1.b")], eps)?;
        let w = AttentionWeights {
            wq: p[&name("attn.wq")],
            wk: p[&name("attn.wk")],
            wv: p[&name("attn.wv")],
            wo: p[&name("attn.wo")],
        };
        let a = tape.masked_attention(h, h, mask, cfg.heads, &w)?;
        x = tape.add(x, a)?;

        let h = tape.layer_norm_rows(x, p[&name("ln2.g")], p[&name("ln2.b")], eps)?;
        let h = tape.matmul(h, p[&name("ffn.w1")])?;
        let h = tape.add_row(h, p[&name("ffn.b1")])?;
        let h = tape.gelu(h);
        let h = tape.matmul(h, p[&name("ffn.w2")])?;
        let h = tape.add_row(h, p[&name("ffn.b2")])?;
        x = tape.add(x, h)?;
    }
    tape.layer_norm_rows(x, p[&format!("{prefix}.lnf.g")], p[&format!("{prefix}.lnf.b")], eps)
}

/// Output of [`summarize_text`].
#[derive(Clone, Copy, Debug)]
pub struct Summary {
    /// `n×e` topic-wise summaries.
    pub embedding: Var,
    /// `n×l` attention of each query over the words.
    pub heat_map: Var,
}

/// `softmax(Q·Hᵀ)·H`, unscaled unless `scaled` is set (then `1/sqrt(e)`).
pub fn summarize_text<F: Real>(
    tape: &mut Tape<F>,
    queries: Var,
    hidden: Var,
    scaled: bool,
) -> Result<Summary> {
    let logits = tape.matmul_t(queries, hidden)?;
    let logits = if scaled {
        let e = tape.value(queries).cols() as f64;
        tape.scale(logits, 1.0 / e.sqrt())
    } else {
        logits
    };
    let heat_map = tape.softmax_rows(logits)?;
    let embedding = tape.matmul(heat_map, hidden)?;
    Ok(Summary {
        embedding,
        heat_map,
    })
}
