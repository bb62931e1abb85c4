use super::grammar::{GrammarSpec, SENTENCE_END};
use crate::classifier::Checklist;
use crate::encoders::TokenSequence;

/// Assigns every topic a state from report text.
///
/// Sentences end at `.`. A sentence mentions a topic when the topic's keyword
/// phrase occurs in it; the remaining words decide the state: a negation cue
/// gives negative, otherwise an uncertainty cue gives uncertain, otherwise
/// positive. When several sentences mention one topic, positive beats
/// uncertain beats negative. Unmentioned topics get the unmentioned state.
pub fn rule_label(report: &TokenSequence, grammar: &GrammarSpec) -> Checklist {
    let vocab = grammar.vocab();
    let words: Vec<&str> = report.ids().iter().map(|&id| vocab.word(id)).collect();
    label_words(&words, grammar)
}

pub fn rule_label_text(text: &str, grammar: &GrammarSpec) -> Checklist {
    let words: Vec<&str> = text.split_whitespace().collect();
    label_words(&words, grammar)
}

fn label_words(words: &[&str], grammar: &GrammarSpec) -> Checklist {
    let n = grammar.n();
    let negative = grammar.state_index("negative");
    let uncertain = grammar.state_index("uncertain");
    let rank = |s: usize| -> u8 {
        match s {
            _ if s == grammar.positive => 3,
            _ if Some(s) == uncertain => 2,
            _ if Some(s) == negative => 1,
            _ => 0,
        }
    };
    let keywords: Vec<Vec<&str>> = grammar
        .topics
        .iter()
        .map(|t| t.keyword.split_whitespace().collect())
        .collect();

    let mut found: Vec<Option<usize>> = vec![None; n];
    for sentence in words.split(|&w| w == SENTENCE_END) {
        if sentence.is_empty() {
            continue;
        }
        let mut covered = vec![false; sentence.len()];
        let mut topics = Vec::new();
        for (t, kw) in keywords.iter().enumerate() {
            if kw.is_empty() || kw.len() > sentence.len() {
                continue;
            }
            for start in 0..=sentence.len() - kw.len() {
                if sentence[start..start + kw.len()] == kw[..] {
                    covered[start..start + kw.len()].iter_mut().for_each(|c| *c = true);
                    if !topics.contains(&t) {
                        topics.push(t);
                    }
                }
            }
        }
        if topics.is_empty() {
            continue;
        }
        let rest = sentence
            .iter()
            .zip(&covered)
            .filter(|(_, &c)| !c)
            .map(|(w, _)| *w);
        let mut neg = false;
        let mut unc = false;
        for w in rest {
            neg |= grammar.negation_cues.iter().any(|c| c == w);
            unc |= grammar.uncertainty_cues.iter().any(|c| c == w);
        }
        let state = match (neg, unc) {
            (true, _) => negative.unwrap_or(grammar.unmentioned),
            (false, true) => uncertain.unwrap_or(grammar.positive),
            _ => grammar.positive,
        };
        for t in topics {
            found[t] = Some(match found[t] {
                Some(prev) if rank(prev) >= rank(state) => prev,
                _ => state,
            });
        }
    }
    let states: Vec<usize> = found
        .into_iter()
        .map(|s| s.unwrap_or(grammar.unmentioned))
        .collect();
    Checklist::one_hot(grammar.k(), &states).expect("labeler states in range")
}
