//! Visual projection, fusion with the text summary, state classification and
//! the enriched disease embedding.

use crate::config::{Ablation, ModelConfig};
use crate::error::{Error, Result};
use crate::params::Bound;
use crate::tensor::{Real, Tape, Tensor, Var};

/// Probability floor inside the classification losses.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChecklistMode {
    OneHotTruth,
    Predicted,
}

/// `n × k` assignment of topics to states.
#[derive(Clone, Debug, PartialEq)]
pub struct Checklist {
    n: usize,
    k: usize,
    states: Vec<f64>,
    mode: ChecklistMode,
}

impl Checklist {
    /// Exact one-hot checklist from per-topic state indices.
    pub fn one_hot(k: usize, states: &[usize]) -> Result<Self> {
        let n = states.len();
        let mut data = vec![0.0; n * k];
        for (i, &s) in states.iter().enumerate() {
            if s >= k {
                return Err(Error::Precondition(format!("state {s} out of range for k={k}")));
            }
            data[i * k + s] = 1.0;
        }
        Ok(Checklist {
            n,
            k,
            states: data,
            mode: ChecklistMode::OneHotTruth,
        })
    }

    /// Predicted distribution; every row must sum to 1 ± 1e-6.
    pub fn predicted(n: usize, k: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n * k {
            return Err(Error::shape("checklist", &[n, k], &[probs.len()]));
        }
        for (i, row) in probs.chunks(k).enumerate() {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-6 || row.iter().any(|p| !(0.0..=1.0 + 1e-9).contains(p)) {
                return Err(Error::Contract(format!("checklist row {i} is not a distribution")));
            }
        }
        Ok(Checklist {
            n,
            k,
            states: probs,
            mode: ChecklistMode::Predicted,
        })
    }

    pub fn from_tensor<F: Real>(t: &Tensor<F>) -> Result<Self> {
        Self::predicted(t.rows(), t.cols(), t.to_f64_vec())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn mode(&self) -> ChecklistMode {
        self.mode
    }

    pub fn probs(&self) -> &[f64] {
        &self.states
    }

    pub fn row(&self, topic: usize) -> &[f64] {
        &self.states[topic * self.k..(topic + 1) * self.k]
    }

    /// Most probable state per topic (first index on ties).
    pub fn argmax(&self) -> Vec<usize> {
        self.states
            .chunks(self.k)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (j, &p)| if p > best.1 { (j, p) } else { best })
                    .0
            })
            .collect()
    }

    /// Hard version of a predicted checklist.
    pub fn to_one_hot(&self) -> Checklist {
        Checklist::one_hot(self.k, &self.argmax()).expect("argmax in range")
    }

    pub fn is_exact_one_hot(&self) -> bool {
        self.states.chunks(self.k).all(|row| {
            row.iter().filter(|&&x| x == 1.0).count() == 1 && row.iter().all(|&x| x == 0.0 || x == 1.0)
        })
    }

    pub fn to_tensor<F: Real>(&self) -> Tensor<F> {
        Tensor::matrix(
            self.n,
            self.k,
            self.states.iter().map(|&x| F::from_f64_lossy(x)).collect(),
        )
        .expect("checklist extents are positive")
    }
}

/// Intermediate embeddings of one study, each `n×e`.
#[derive(Clone, Copy, Debug)]
pub struct DiseaseEmbeddings {
    pub d_img: Var,
    pub d_txt: Option<Var>,
    pub d_fused: Var,
    pub d_states: Option<Var>,
    pub d_topics: Var,
    pub d_enriched: Var,
}

/// Row `j` is `A_jᵀ x + b_j`. `x` is `1×c`.
pub fn project_visual<F: Real>(tape: &mut Tape<F>, p: &Bound, cfg: &ModelConfig, x: Var) -> Result<Var> {
    let flat = tape.matmul(x, p["classifier.a"])?;
    let d = tape.reshape(flat, &[cfg.n, cfg.e])?;
    tape.add(d, p["classifier.b"])
}

/// `LayerNorm(d_img + d_txt)`; without a document the text term is zero.
pub fn fuse<F: Real>(
    tape: &mut Tape<F>,
    p: &Bound,
    cfg: &ModelConfig,
    d_img: Var,
    d_txt: Option<Var>,
) -> Result<Var> {
    let sum = match d_txt {
        Some(t) => tape.add(d_img, t)?,
        None => d_img,
    };
    tape.layer_norm_rows(sum, p["classifier.fuse.g"], p["classifier.fuse.b"], cfg.ln_eps)
}

/// `softmax(d_fused · Sᵀ)`, `n×k`.
pub fn classify_states<F: Real>(tape: &mut Tape<F>, d_fused: Var, states: Var) -> Result<Var> {
    let logits = tape.matmul_t(d_fused, states)?;
    tape.softmax_rows(logits)
}

/// Mean over topics of the categorical cross-entropy against a one-hot truth.
pub fn classification_loss<F: Real>(tape: &mut Tape<F>, p: Var, truth: &Checklist) -> Result<Var> {
    if truth.mode() != ChecklistMode::OneHotTruth || !truth.is_exact_one_hot() {
        return Err(Error::Contract("classification target is not one-hot".into()));
    }
    tape.cross_entropy(p, &truth.to_tensor(), None, PROB_CLAMP)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    /// Ground-truth states (teacher forcing).
    Train,
    /// Predicted states.
    Infer,
}

/// Where the state embedding reads its checklist from.
pub enum StateSource<'a> {
    Truth(&'a Checklist),
    Predicted(Var),
}

/// `states · S`. Training consumes the one-hot truth, inference the
/// predicted distribution; any other pairing is a contract violation.
pub fn state_embedding<F: Real>(
    tape: &mut Tape<F>,
    source: StateSource<'_>,
    s: Var,
    phase: Phase,
) -> Result<Var> {
    let states = match (phase, source) {
        (Phase::Train, StateSource::Truth(y)) => {
            if y.mode() != ChecklistMode::OneHotTruth {
                return Err(Error::Contract("training phase needs a one-hot truth".into()));
            }
            tape.constant(y.to_tensor())
        }
        (Phase::Infer, StateSource::Predicted(p)) => p,
        (phase, _) => {
            return Err(Error::Contract(format!(
                "state source does not match phase {phase:?}"
            )))
        }
    };
    tape.matmul(states, s)
}

/// `d_states + d_topics + d_fused`, honoring the drop flags.
pub fn enrich<F: Real>(
    tape: &mut Tape<F>,
    d_states: Var,
    d_topics: Var,
    d_fused: Var,
    ablation: &Ablation,
) -> Result<Var> {
    let parts: Vec<Var> = [
        (d_states, ablation.drop_states),
        (d_topics, ablation.drop_topics),
        (d_fused, ablation.drop_fused),
    ]
    .into_iter()
    .filter(|(_, dropped)| !dropped)
    .map(|(v, _)| v)
    .collect();
    match parts.as_slice() {
        [] => {
            let shape = tape.shape(d_fused).to_vec();
            Ok(tape.constant(Tensor::zeros(&shape)))
        }
        [only] => Ok(*only),
        [first, rest @ ..] => {
            let mut acc = *first;
            for &r in rest {
                acc = tape.add(acc, r)?;
            }
            Ok(acc)
        }
    }
}
