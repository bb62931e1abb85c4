//! Differentiable report reader: re-derives the checklist from `Ŵ` and owns
//! the combined objective.

use crate::classifier::{classification_loss, Checklist};
use crate::config::{LossWeights, ModelConfig};
use crate::encoders::{encode_embedded, summarize_text, Summary};
use crate::error::{Error, Result};
use crate::params::Bound;
use crate::tensor::{Real, Tape, Var};

/// Parameter-name prefix of everything the interpreter owns.
pub const PREFIX: &str = "interpreter.";

pub fn is_interpreter_param(name: &str) -> bool {
    name.starts_with(PREFIX)
}

/// Encodes continuous rows `Ŵ` (`l×e`) with the interpreter's own stack and
/// summarizes them per topic: `softmax(Q_int·Ĥᵀ)·Ĥ`.
pub fn interpret_report<F: Real>(tape: &mut Tape<F>, p: &Bound, cfg: &ModelConfig, w_hat: Var) -> Result<Summary> {
    let hidden = encode_embedded(tape, p, cfg, "interpreter", w_hat)?;
    summarize_text(tape, p["interpreter.q"], hidden, cfg.query_scaling)
}

/// State embedding the interpreter classifies against.
pub fn interpreter_states(p: &Bound, cfg: &ModelConfig) -> Var {
    if cfg.share_states {
        p["classifier.s"]
    } else {
        p["interpreter.s"]
    }
}

/// `softmax(D̂_txt · S_intᵀ)`, `n×k`.
pub fn interpret_states<F: Real>(tape: &mut Tape<F>, d_txt_hat: Var, s_int: Var) -> Result<Var> {
    crate::classifier::classify_states(tape, d_txt_hat, s_int)
}

pub fn interpreter_loss<F: Real>(tape: &mut Tape<F>, p_int: Var, truth: &Checklist) -> Result<Var> {
    classification_loss(tape, p_int, truth)
}

/// Weighted sum of the three losses; an absent interpreter loss contributes
/// nothing.
pub fn total_loss<F: Real>(
    tape: &mut Tape<F>,
    l_c: Var,
    l_g: Var,
    l_i: Option<Var>,
    weights: &LossWeights,
) -> Result<Var> {
    let mut terms = vec![(l_c, weights.classifier), (l_g, weights.generator)];
    if let Some(l) = l_i {
        terms.push((l, weights.interpreter));
    }
    for (v, _) in &terms {
        if tape.value(*v).item().is_nan() {
            return Err(Error::Numeric("NaN loss term".into()));
        }
    }
    let mut acc: Option<Var> = None;
    for (v, w) in terms {
        let term = if w == 1.0 { v } else { tape.scale(v, w) };
        acc = Some(match acc {
            None => term,
            Some(a) => tape.add(a, term)?,
        });
    }
    Ok(acc.expect("at least two terms"))
}
