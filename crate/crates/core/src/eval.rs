//! Greedy generation over a split, scoring, and attention heat-map dumps.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::classifier::Checklist;
use crate::config::Ablation;
use crate::corpus::{rule_label, GrammarSpec, Study, BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::metrics::{clinical_scores, language_scores, ClinicalScores, LanguageScores};
use crate::model::Model;
use crate::tensor::Real;

/// One line of the generations file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub id: String,
    pub generated: String,
    pub reference: String,
    /// Classifier argmax per topic.
    pub classifier_states: Vec<String>,
    /// Rule-labeled states of the generated report.
    pub labeled_states: Vec<String>,
    pub truth_states: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct EvalResult {
    pub language: LanguageScores,
    pub clinical: ClinicalScores,
    pub generations: Vec<Generation>,
}

fn words(ids: &[usize]) -> Vec<usize> {
    ids.iter().copied().filter(|&t| !matches!(t, BOS | EOS | PAD)).collect()
}

fn state_names(g: &GrammarSpec, c: &Checklist) -> Vec<String> {
    c.argmax().into_iter().map(|s| g.states[s].clone()).collect()
}

/// Scores `candidates[i]` (token ids) against study `i`'s reference.
pub fn score(
    grammar: &GrammarSpec,
    studies: &[Study],
    candidates: &[Vec<usize>],
) -> Result<(LanguageScores, ClinicalScores, Vec<Checklist>)> {
    let refs: Vec<Vec<usize>> = studies.iter().map(|s| words(s.report.ids())).collect();
    let cands: Vec<Vec<usize>> = candidates.iter().map(|c| words(c)).collect();
    let language = language_scores(&cands, &refs)?;
    let labeled: Vec<Checklist> = candidates
        .iter()
        .map(|c| rule_label(&crate::encoders::TokenSequence(c.clone()), grammar))
        .collect();
    let truth: Vec<Checklist> = studies.iter().map(|s| s.truth.clone()).collect();
    let clinical = clinical_scores(&labeled, &truth, grammar.positive)?;
    Ok((language, clinical, labeled))
}

/// Greedy-decodes every study and scores the result.
pub fn evaluate<F: Real>(
    model: &Model<F>,
    ablation: &Ablation,
    grammar: &GrammarSpec,
    studies: &[Study],
) -> Result<EvalResult> {
    check_vocab(model, grammar)?;
    let vocab = grammar.vocab();
    let mut candidates = Vec::with_capacity(studies.len());
    let mut classifier = Vec::with_capacity(studies.len());
    for s in studies {
        let p = model.predict(ablation, s, model.config.max_len)?;
        candidates.push(p.tokens.0);
        classifier.push(p.checklist);
    }
    let (language, clinical, labeled) = score(grammar, studies, &candidates)?;
    let generations = studies
        .iter()
        .zip(&candidates)
        .zip(classifier.iter().zip(&labeled))
        .map(|((s, c), (cls, lab))| Generation {
            id: s.id.clone(),
            generated: vocab.decode(&crate::encoders::TokenSequence(c.clone())),
            reference: vocab.decode(&s.report),
            classifier_states: state_names(grammar, cls),
            labeled_states: state_names(grammar, lab),
            truth_states: state_names(grammar, &s.truth),
        })
        .collect();
    Ok(EvalResult {
        language,
        clinical,
        generations,
    })
}

/// Scores the references against themselves.
pub fn evaluate_oracle(grammar: &GrammarSpec, studies: &[Study]) -> Result<EvalResult> {
    let candidates: Vec<Vec<usize>> = studies.iter().map(|s| s.report.0.clone()).collect();
    let (language, clinical, labeled) = score(grammar, studies, &candidates)?;
    let vocab = grammar.vocab();
    let generations = studies
        .iter()
        .zip(&labeled)
        .map(|(s, lab)| Generation {
            id: s.id.clone(),
            generated: vocab.decode(&s.report),
            reference: vocab.decode(&s.report),
            classifier_states: state_names(grammar, &s.truth),
            labeled_states: state_names(grammar, lab),
            truth_states: state_names(grammar, &s.truth),
        })
        .collect();
    Ok(EvalResult {
        language,
        clinical,
        generations,
    })
}

pub fn check_vocab<F: Real>(model: &Model<F>, grammar: &GrammarSpec) -> Result<()> {
    let c = &model.config;
    if c.v != grammar.vocab().len() || c.n != grammar.n() || c.k != grammar.k() {
        return Err(Error::Config(format!(
            "model (n={}, k={}, v={}) does not match grammar {} (n={}, k={}, v={})",
            c.n,
            c.k,
            c.v,
            grammar.name,
            grammar.n(),
            grammar.k(),
            grammar.vocab().len()
        )));
    }
    Ok(())
}

/// `n×l` heat-map as CSV: a header of column words, one row per topic.
pub fn heat_map_csv(topics: &[String], columns: &[String], values: &[f64]) -> Result<String> {
    let l = columns.len();
    if l == 0 || values.len() != topics.len() * l {
        return Err(Error::shape("heat_map_csv", &[topics.len(), l], &[values.len()]));
    }
    let mut s = String::from("topic");
    for c in columns {
        let _ = write!(s, ",{}", c.replace(',', ";"));
    }
    s.push('\n');
    for (t, row) in topics.iter().zip(values.chunks(l)) {
        s.push_str(t);
        for v in row {
            let _ = write!(s, ",{v:.6}");
        }
        s.push('\n');
    }
    Ok(s)
}

/// Heat-maps of one study: history attention and the interpreter's reading
/// of the generated report.
#[derive(Clone, Debug)]
pub struct Inspection {
    pub generated: Vec<String>,
    pub history_csv: Option<String>,
    pub interpreter_csv: Option<String>,
}

pub fn inspect<F: Real>(
    model: &Model<F>,
    ablation: &Ablation,
    grammar: &GrammarSpec,
    study: &Study,
) -> Result<Inspection> {
    check_vocab(model, grammar)?;
    let vocab = grammar.vocab();
    let p = model.predict(ablation, study, model.config.max_len)?;
    let topics: Vec<String> = grammar.topics.iter().map(|t| t.name.clone()).collect();
    let history_words: Vec<String> = study.history.ids().iter().map(|&t| vocab.word(t).to_string()).collect();
    // The interpreter reads the emitted words t_1..t_m.
    let emitted: Vec<String> = p.tokens.ids()[1..].iter().map(|&t| vocab.word(t).to_string()).collect();
    let history_csv = p
        .history_heat
        .as_deref()
        .map(|h| heat_map_csv(&topics, &history_words, h))
        .transpose()?;
    let interpreter_csv = p
        .interpreter_heat
        .as_deref()
        .map(|h| heat_map_csv(&topics, &emitted, h))
        .transpose()?;
    Ok(Inspection {
        generated: emitted,
        history_csv,
        interpreter_csv,
    })
}
