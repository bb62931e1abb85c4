//! Report generator: a masked transformer over `[d_1..d_n, w_1..w_l]`,
//! tied-embedding word distribution, its loss, and greedy decoding.

use crate::config::ModelConfig;
use crate::corpus::{BOS, EOS, PAD};
use crate::encoders::{add_positions, transformer_stack, TokenSequence};
use crate::error::{Error, Result};
use crate::params::Bound;
use crate::tensor::{Real, Tape, Tensor, Var};

/// Attention mask over `n` disease slots followed by `l` words.
///
/// Slots see every slot; word `i` sees every slot and words `0..=i`.
pub fn generator_mask(n: usize, l: usize) -> Vec<bool> {
    let t = n + l;
    let mut mask = vec![false; t * t];
    for i in 0..t {
        for j in 0..t {
            mask[i * t + j] = j < n || (i >= n && j <= i);
        }
    }
    mask
}

/// Hidden states of the `l` word positions, `l×e`.
pub fn decode_hidden<F: Real>(
    tape: &mut Tape<F>,
    p: &Bound,
    cfg: &ModelConfig,
    prefix: &[usize],
    d_enriched: Var,
) -> Result<Var> {
    let l = prefix.len();
    if l == 0 {
        return Err(Error::Precondition("empty generator prefix".into()));
    }
    if l > cfg.max_len {
        return Err(Error::Length {
            len: cfg.n + l,
            max: cfg.n + cfg.max_len,
        });
    }
    let n = tape.value(d_enriched).rows();
    let words = tape.gather_rows(p["vocab.w"], prefix)?;
    let words = add_positions(tape, p, cfg, "generator", words)?;
    let seq = tape.concat_rows(&[d_enriched, words])?;
    let mask = generator_mask(n, l);
    let out = transformer_stack(tape, p, cfg, "generator", seq, Some(&mask))?;
    tape.slice_rows(out, n, l)
}

/// `softmax(H · Wᵀ)`, `l×v`; `w` is the shared vocabulary table.
pub fn word_distribution<F: Real>(tape: &mut Tape<F>, hidden: Var, w: Var) -> Result<Var> {
    let logits = tape.matmul_t(hidden, w)?;
    tape.softmax_rows(logits)
}

/// Mean next-token cross-entropy; positions whose target is `PAD` are
/// excluded from the average.
pub fn generation_loss<F: Real>(tape: &mut Tape<F>, p_word: Var, targets: &[usize]) -> Result<Var> {
    let (l, v) = (tape.value(p_word).rows(), tape.value(p_word).cols());
    if targets.len() != l {
        return Err(Error::shape("generation_loss", &[l, v], &[targets.len()]));
    }
    let mut onehot = Tensor::<F>::zeros(&[l, v]);
    let mut keep = vec![false; l];
    for (i, &t) in targets.iter().enumerate() {
        if t >= v {
            return Err(Error::Vocabulary { id: t, size: v });
        }
        if t != PAD {
            onehot.data_mut()[i * v + t] = F::one();
            keep[i] = true;
        }
    }
    if !keep.iter().any(|&k| k) {
        return Err(Error::Contract("generation target is all padding".into()));
    }
    tape.cross_entropy(p_word, &onehot, Some(&keep), crate::classifier::PROB_CLAMP)
}

/// `Ŵ = p_word · W`, the expected embedding at each position.
pub fn weighted_words<F: Real>(tape: &mut Tape<F>, p_word: Var, w: Var) -> Result<Var> {
    tape.matmul(p_word, w)
}

/// Everything the generator produced for one prefix.
#[derive(Clone, Debug)]
pub struct GeneratorState {
    pub prefix: TokenSequence,
    pub hidden: Var,
    pub p_word: Var,
    pub w_hat: Var,
}

/// Teacher-forced pass over `prefix`.
pub fn run_generator<F: Real>(
    tape: &mut Tape<F>,
    p: &Bound,
    cfg: &ModelConfig,
    prefix: &[usize],
    d_enriched: Var,
) -> Result<GeneratorState> {
    let hidden = decode_hidden(tape, p, cfg, prefix, d_enriched)?;
    let p_word = word_distribution(tape, hidden, p["vocab.w"])?;
    let w_hat = weighted_words(tape, p_word, p["vocab.w"])?;
    Ok(GeneratorState {
        prefix: TokenSequence(prefix.to_vec()),
        hidden,
        p_word,
        w_hat,
    })
}

/// Greedy decoding from `BOS`.
///
/// Returns `[BOS, t_1, .., t_m]` (ending in `EOS` unless `max_len` ran out)
/// and the state of the final pass, whose `p_word` row `i` is the
/// distribution that produced `t_{i+1}`.
pub fn greedy_decode<F: Real>(
    tape: &mut Tape<F>,
    p: &Bound,
    cfg: &ModelConfig,
    d_enriched: Var,
    max_len: usize,
) -> Result<(TokenSequence, GeneratorState)> {
    if max_len == 0 || max_len > cfg.max_len {
        return Err(Error::Length {
            len: max_len,
            max: cfg.max_len,
        });
    }
    let mut tokens = vec![BOS];
    loop {
        let state = run_generator(tape, p, cfg, &tokens, d_enriched)?;
        let dist = tape.value(state.p_word);
        let last = dist.row(dist.rows() - 1);
        let next = argmax(last);
        tokens.push(next);
        if next == EOS || tokens.len() > max_len {
            return Ok((TokenSequence(tokens), state));
        }
    }
}

fn argmax<F: Real>(row: &[F]) -> usize {
    let mut best = 0;
    for (j, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = j;
        }
    }
    best
}
