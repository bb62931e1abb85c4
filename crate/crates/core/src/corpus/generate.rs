use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal, WeightedIndex};
use rand_xoshiro::Xoshiro256PlusPlus;

use super::grammar::{glyph, GrammarSpec, GLYPH_SIZE, HISTORY_JOIN, HISTORY_LEAD, HISTORY_NONE, SENTENCE_END};
use super::Study;
use crate::classifier::Checklist;
use crate::encoders::{ViewImage, ViewTag};

/// Seed of study `index` in a corpus seeded with `seed`.
pub fn study_seed(seed: u64, index: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_add(0xD1B5_4A32_D192_ED03)
}

/// Samples one study. Pure in `(seed, grammar)`.
pub fn generate_study(seed: u64, id: &str, grammar: &GrammarSpec) -> Study {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let r = &grammar.render;
    let (n, k) = (grammar.n(), grammar.k());

    let base = WeightedIndex::new(&r.base_states).expect("validated distribution");
    let non_positive: Vec<f64> = r
        .base_states
        .iter()
        .enumerate()
        .map(|(s, &w)| if s == grammar.positive { 0.0 } else { w })
        .collect();
    let non_positive = WeightedIndex::new(&non_positive).expect("some non-positive mass");

    let mut states = Vec::with_capacity(n);
    let mut mentioned = Vec::new();
    for topic in 0..n {
        let state = if rng.gen_bool(r.p_mention) {
            mentioned.push(topic);
            if rng.gen_bool(r.symptom_precision) {
                grammar.positive
            } else {
                non_positive.sample(&mut rng)
            }
        } else {
            base.sample(&mut rng)
        };
        states.push(state);
    }

    let mut tags = vec![if rng.gen_bool(0.5) { ViewTag::Pa } else { ViewTag::Ap }];
    if rng.gen_bool(r.p_lateral) {
        tags.push(ViewTag::La);
    }
    if rng.gen_bool(r.p_extra_frontal) {
        tags.push(ViewTag::Ap);
    }
    let views = tags
        .into_iter()
        .map(|tag| render_view(tag, &states, grammar, &mut rng))
        .collect();

    mentioned.shuffle(&mut rng);
    let history_text = if mentioned.is_empty() {
        format!("{HISTORY_LEAD} {HISTORY_NONE} {SENTENCE_END}")
    } else {
        let symptoms: Vec<&str> = mentioned
            .iter()
            .map(|&t| grammar.topics[t].symptom.as_str())
            .collect();
        format!(
            "{HISTORY_LEAD} {} {SENTENCE_END}",
            symptoms.join(&format!(" {HISTORY_JOIN} "))
        )
    };

    let report_text = render_report(grammar, &states, &mut rng);
    let vocab = grammar.vocab();
    Study {
        id: id.to_string(),
        views,
        history: vocab.encode(&history_text),
        report: vocab.encode_report(&report_text),
        truth: Checklist::one_hot(k, &states).expect("sampled states in range"),
    }
}

/// Concatenates one sentence per mentioned topic, in topic order.
pub fn render_report(grammar: &GrammarSpec, states: &[usize], rng: &mut impl Rng) -> String {
    let mut sentences = Vec::new();
    for (topic, &state) in states.iter().enumerate() {
        let alts = grammar.templates[topic][state].len();
        let alt = if alts > 1 { rng.gen_range(0..alts) } else { 0 };
        let s = grammar.sentence(topic, state, alt);
        if !s.trim().is_empty() {
            sentences.push(s.trim().to_string());
        }
    }
    sentences.join(" ")
}

/// Top-left pixel of `topic`'s cell.
pub fn cell_origin(grammar: &GrammarSpec, topic: usize) -> (usize, usize) {
    let r = &grammar.render;
    let per_row = r.image_size / r.cell;
    ((topic / per_row) * r.cell, (topic % per_row) * r.cell)
}

fn render_view(tag: ViewTag, states: &[usize], grammar: &GrammarSpec, rng: &mut impl Rng) -> ViewImage {
    let r = &grammar.render;
    let s = r.image_size;
    let noise = Normal::new(0.0, r.noise.max(1e-12)).expect("finite sigma");
    let mut pixels: Vec<f32> = (0..s * s)
        .map(|_| r.background + noise.sample(rng) as f32)
        .collect();
    let slack = r.cell - GLYPH_SIZE;
    for (topic, &state) in states.iter().enumerate() {
        let visible_here = tag == ViewTag::La || !grammar.topics[topic].lateral_only;
        // Draws happen regardless so every view consumes the same randomness.
        let dropped = rng.gen_bool(r.p_drop);
        let (jy, jx) = (rng.gen_range(0..=slack), rng.gen_range(0..=slack));
        if !visible_here || dropped {
            continue;
        }
        let (oy, ox) = cell_origin(grammar, topic);
        let g = glyph(state).expect("validated state count");
        for (gy, row) in g.iter().enumerate() {
            for (gx, &on) in row.iter().enumerate() {
                if on {
                    let idx = (oy + jy + gy) * s + ox + jx + gx;
                    pixels[idx] = r.foreground + noise.sample(rng) as f32;
                }
            }
        }
    }
    ViewImage::new(tag, s, s, pixels).expect("square image")
}
