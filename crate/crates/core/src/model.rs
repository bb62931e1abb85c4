//! Parameter layout, initialization and the per-study forward pass that ties
//! the encoders, classifier, generator and interpreter together.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::classifier::{
    classification_loss, classify_states, enrich, fuse, project_visual, state_embedding, Checklist,
    DiseaseEmbeddings, Phase, StateSource,
};
use crate::config::{Ablation, LossWeights, ModelConfig};
use crate::corpus::Study;
use crate::encoders::{encode_text, encode_views, summarize_text, TokenSequence};
use crate::error::{Error, Result};
use crate::generator::{generation_loss, greedy_decode, run_generator, GeneratorState};
use crate::interpreter::{interpret_report, interpret_states, interpreter_loss, interpreter_states, total_loss};
use crate::params::{Bound, ParamStore};
use crate::tensor::{Real, Tape, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct Model<F: Real> {
    pub config: ModelConfig,
    pub params: ParamStore<F>,
}

/// What the interpreter reads during a training pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InterpreterInput {
    /// No interpreter term.
    Off,
    /// Embeddings of the reference report (`[t_1..t_m]`).
    Reference,
    /// `p_word · W` of the teacher-forced generator pass.
    Generated,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PassMode {
    pub phase: Phase,
    pub interpreter: InterpreterInput,
}

impl PassMode {
    /// Joint training on ground-truth states and reference reports.
    pub const JOINT: PassMode = PassMode {
        phase: Phase::Train,
        interpreter: InterpreterInput::Reference,
    };
    /// Generator fine-tuning against a frozen interpreter.
    pub const FINETUNE: PassMode = PassMode {
        phase: Phase::Infer,
        interpreter: InterpreterInput::Generated,
    };
}

/// Tape handles produced by [`Model::forward`].
#[derive(Clone, Debug)]
pub struct Forward {
    pub embeddings: DiseaseEmbeddings,
    /// `n×k` predicted checklist.
    pub p_state: Var,
    /// `n×l` disease-query attention over the history, when text is used.
    pub history_heat: Option<Var>,
    pub generator: GeneratorState,
    pub l_c: Var,
    pub l_g: Var,
    pub l_i: Option<Var>,
    pub p_int: Option<Var>,
    pub interpreter_heat: Option<Var>,
    pub total: Var,
}

/// Result of running the model on a study without a reference report.
#[derive(Clone, Debug)]
pub struct Prediction {
    /// `[BOS, t_1, ..]`.
    pub tokens: TokenSequence,
    pub checklist: Checklist,
    pub history_heat: Option<Vec<f64>>,
    /// Checklist the interpreter reads back from the generated report.
    pub interpreted: Option<Checklist>,
    pub interpreter_heat: Option<Vec<f64>>,
}

fn stack_names(cfg: &ModelConfig, prefix: &str) -> Vec<(String, Vec<usize>)> {
    let (e, f) = (cfg.e, cfg.ffn);
    let mut out = Vec::new();
    if cfg.positional {
        out.push((format!("{prefix}.pos"), vec![cfg.max_len, e]));
    }
    for layer in 0..cfg.layers {
        let n = |s: &str| format!("{prefix}.{layer}.{s}");
        for s in ["ln1.g", "ln1.b", "ln2.g", "ln2.b", "ffn.b2"] {
            out.push((n(s), vec![e]));
        }
        for s in ["attn.wq", "attn.wk", "attn.wv", "attn.wo"] {
            out.push((n(s), vec![e, e]));
        }
        out.push((n("ffn.w1"), vec![e, f]));
        out.push((n("ffn.b1"), vec![f]));
        out.push((n("ffn.w2"), vec![f, e]));
    }
    out.push((format!("{prefix}.lnf.g"), vec![e]));
    out.push((format!("{prefix}.lnf.b"), vec![e]));
    out
}

/// Every parameter name with its shape.
pub fn param_layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (c1, c2, e) = (cfg.conv1_channels, cfg.conv2_channels, cfg.e);
    let side = cfg.feature_side();
    let mut out: Vec<(String, Vec<usize>)> = vec![
        ("backbone.conv1.w".into(), vec![9, c1]),
        ("backbone.conv1.b".into(), vec![c1]),
        ("backbone.conv2.w".into(), vec![9 * c1, c2]),
        ("backbone.conv2.b".into(), vec![c2]),
        ("backbone.fc.w".into(), vec![side * side * c2, cfg.c]),
        ("backbone.fc.b".into(), vec![cfg.c]),
        ("classifier.a".into(), vec![cfg.c, cfg.n * e]),
        ("classifier.b".into(), vec![cfg.n, e]),
        ("classifier.fuse.g".into(), vec![e]),
        ("classifier.fuse.b".into(), vec![e]),
        ("classifier.s".into(), vec![cfg.k, e]),
        ("classifier.topics".into(), vec![cfg.n, e]),
        ("history.q".into(), vec![cfg.n, e]),
        ("interpreter.q".into(), vec![cfg.n, e]),
        ("vocab.w".into(), vec![cfg.v, e]),
    ];
    if !cfg.share_states {
        out.push(("interpreter.s".into(), vec![cfg.k, e]));
    }
    for prefix in ["history", "generator", "interpreter"] {
        out.extend(stack_names(cfg, prefix));
    }
    out
}

impl<F: Real> Model<F> {
    /// Gaussian weights with `σ = 1/sqrt(fan_in)`; queries, state and topic
    /// embeddings and the vocabulary use `σ = 1/sqrt(e)`. Gains start at one,
    /// biases and positions at zero.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let inv_sqrt = |x: usize| 1.0 / (x as f64).sqrt();
        for (name, shape) in param_layout(&config) {
            let leaf = name.rsplit('.').next().unwrap_or("");
            if name.ends_with(".g") {
                params.constant_fill(&name, &shape, 1.0);
            } else if leaf.starts_with('b') && shape.len() == 1 || name.ends_with(".pos") || name == "classifier.b" {
                params.constant_fill(&name, &shape, 0.0);
            } else if shape.len() == 2 && (leaf == "q" || leaf == "s" || leaf == "topics" || name == "vocab.w") {
                params.gaussian(&name, &shape, inv_sqrt(config.e), &mut rng);
            } else {
                params.gaussian(&name, &shape, inv_sqrt(shape[0]), &mut rng);
            }
        }
        Ok(Model { config, params })
    }

    pub fn cast<G: Real>(&self) -> Model<G> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    /// Visual and textual disease embeddings fused and classified.
    pub fn classify(
        &self,
        tape: &mut Tape<F>,
        p: &Bound,
        ablation: &Ablation,
        study: &Study,
    ) -> Result<(Var, Var, Option<Var>, Option<Var>, Var)> {
        let cfg = &self.config;
        let views: Vec<_> = if ablation.use_multiview {
            study.views.iter().collect()
        } else {
            study.views.iter().take(1).collect()
        };
        let x = encode_views(tape, p, cfg, &views)?;
        let d_img = project_visual(tape, p, cfg, x)?;
        let (d_txt, heat) = if ablation.use_history {
            let hidden = encode_text(tape, p, cfg, &study.history)?;
            let s = summarize_text(tape, p["history.q"], hidden, cfg.query_scaling)?;
            (Some(s.embedding), Some(s.heat_map))
        } else {
            (None, None)
        };
        let d_fused = fuse(tape, p, cfg, d_img, d_txt)?;
        let p_state = classify_states(tape, d_fused, p["classifier.s"])?;
        Ok((d_img, d_fused, d_txt, heat, p_state))
    }

    fn enriched(
        &self,
        tape: &mut Tape<F>,
        p: &Bound,
        ablation: &Ablation,
        phase: Phase,
        truth: &Checklist,
        p_state: Var,
    ) -> Result<(Var, Var)> {
        let source = match phase {
            Phase::Train => StateSource::Truth(truth),
            Phase::Infer if ablation.detach_predicted => StateSource::Predicted(tape.detach(p_state)),
            Phase::Infer => StateSource::Predicted(p_state),
        };
        let d_states = state_embedding(tape, source, p["classifier.s"], phase)?;
        Ok((d_states, p["classifier.topics"]))
    }

    /// Full teacher-forced pass over one study with all losses.
    pub fn forward(
        &self,
        tape: &mut Tape<F>,
        p: &Bound,
        ablation: &Ablation,
        weights: &LossWeights,
        mode: PassMode,
        study: &Study,
    ) -> Result<Forward> {
        let cfg = &self.config;
        let report = study.report.ids();
        if report.len() < 2 {
            return Err(Error::Precondition(format!("report of study {} is too short", study.id)));
        }
        let (d_img, d_fused, d_txt, history_heat, p_state) = self.classify(tape, p, ablation, study)?;
        let l_c = classification_loss(tape, p_state, &study.truth)?;
        let (d_states, d_topics) = self.enriched(tape, p, ablation, mode.phase, &study.truth, p_state)?;
        let d_enriched = enrich(tape, d_states, d_topics, d_fused, ablation)?;

        let prefix = &report[..report.len() - 1];
        let targets = &report[1..];
        let generator = run_generator(tape, p, cfg, prefix, d_enriched)?;
        let l_g = generation_loss(tape, generator.p_word, targets)?;

        let use_interpreter = ablation.use_interpreter
            && weights.interpreter != 0.0
            && mode.interpreter != InterpreterInput::Off;
        let (l_i, p_int, interpreter_heat) = if use_interpreter {
            let w_hat = match mode.interpreter {
                InterpreterInput::Reference => tape.gather_rows(p["vocab.w"], targets)?,
                _ => generator.w_hat,
            };
            let summary = interpret_report(tape, p, cfg, w_hat)?;
            let p_int = interpret_states(tape, summary.embedding, interpreter_states(p, cfg))?;
            let l = interpreter_loss(tape, p_int, &study.truth)?;
            (Some(l), Some(p_int), Some(summary.heat_map))
        } else {
            (None, None, None)
        };
        let total = total_loss(tape, l_c, l_g, l_i, weights)?;
        Ok(Forward {
            embeddings: DiseaseEmbeddings {
                d_img,
                d_txt,
                d_fused,
                d_states: (!ablation.drop_states).then_some(d_states),
                d_topics,
                d_enriched,
            },
            p_state,
            history_heat,
            generator,
            l_c,
            l_g,
            l_i,
            p_int,
            interpreter_heat,
            total,
        })
    }

    /// Classifies, then greedily writes a report from the predicted states.
    pub fn predict(&self, ablation: &Ablation, study: &Study, max_len: usize) -> Result<Prediction> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, |_| false);
        let (_, d_fused, _, history_heat, p_state) = self.classify(&mut tape, &p, ablation, study)?;
        let (d_states, d_topics) = self.enriched(&mut tape, &p, ablation, Phase::Infer, &study.truth, p_state)?;
        let d_enriched = enrich(&mut tape, d_states, d_topics, d_fused, ablation)?;
        let (tokens, state) = greedy_decode(&mut tape, &p, &self.config, d_enriched, max_len)?;
        let checklist = Checklist::from_tensor(tape.value(p_state))?;

        let (interpreted, interpreter_heat) = if ablation.use_interpreter {
            // The final pass's rows predict t_1..t_m, i.e. the emitted words.
            let summary = interpret_report(&mut tape, &p, &self.config, state.w_hat)?;
            let p_int = interpret_states(&mut tape, summary.embedding, interpreter_states(&p, &self.config))?;
            (
                Some(Checklist::from_tensor(tape.value(p_int))?),
                Some(tape.value(summary.heat_map).to_f64_vec()),
            )
        } else {
            (None, None)
        };
        Ok(Prediction {
            tokens,
            checklist,
            history_heat: history_heat.map(|h| tape.value(h).to_f64_vec()),
            interpreted,
            interpreter_heat,
        })
    }

    /// Fraction of teacher-forced next-token argmaxes that hit the reference,
    /// using predicted states.
    pub fn teacher_forced_hits(&self, ablation: &Ablation, study: &Study) -> Result<(usize, usize)> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, |_| false);
        let weights = LossWeights {
            interpreter: 0.0,
            ..LossWeights::default()
        };
        let mode = PassMode {
            phase: Phase::Infer,
            interpreter: InterpreterInput::Off,
        };
        let f = self.forward(&mut tape, &p, ablation, &weights, mode, study)?;
        let dist = tape.value(f.generator.p_word);
        let targets = &study.report.ids()[1..];
        let hits = targets
            .iter()
            .enumerate()
            .filter(|&(i, &t)| argmax(dist.row(i)) == t)
            .count();
        Ok((hits, targets.len()))
    }
}

pub(crate) fn argmax<F: Real>(row: &[F]) -> usize {
    let mut best = 0;
    for (j, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = j;
        }
    }
    best
}
