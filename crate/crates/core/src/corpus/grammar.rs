use super::vocab::Vocabulary;
use crate::error::{Error, Result};

/// 5×5 glyph bitmaps, one per state. A glyph is drawn in its topic's cell.
pub const GLYPH_SIZE: usize = 5;

const GLYPHS: [[&str; GLYPH_SIZE]; 6] = [
    ["#####", "#####", "#####", "#####", "#####"],
    ["#####", "#...#", "#...#", "#...#", "#####"],
    ["..#..", "..#..", "#####", "..#..", "..#.."],
    ["#...#", ".#.#.", "..#..", ".#.#.", "#...#"],
    ["#####", ".....", "#####", ".....", "#####"],
    ["#.#.#", "#.#.#", "#.#.#", "#.#.#", "#.#.#"],
];

pub fn glyph(state: usize) -> Option<[[bool; GLYPH_SIZE]; GLYPH_SIZE]> {
    let rows = GLYPHS.get(state)?;
    let mut out = [[false; GLYPH_SIZE]; GLYPH_SIZE];
    for (r, row) in rows.iter().enumerate() {
        for (c, ch) in row.bytes().enumerate() {
            out[r][c] = ch == b'#';
        }
    }
    Some(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Topic {
    pub name: String,
    /// Phrase the labeler looks for.
    pub keyword: String,
    /// Phrase that may appear in the clinical history.
    pub symptom: String,
    /// Glyph only drawn in lateral views.
    pub lateral_only: bool,
}

/// Rendering and sampling knobs.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderConfig {
    pub image_size: usize,
    /// Side of each topic's square cell; cells tile the image row-major.
    pub cell: usize,
    pub p_lateral: f64,
    pub p_extra_frontal: f64,
    /// Per-view probability a glyph is occluded.
    pub p_drop: f64,
    pub noise: f64,
    pub foreground: f32,
    pub background: f32,
    /// Sampling distribution over states for topics without a history cue.
    pub base_states: Vec<f64>,
    /// Probability a topic's symptom is mentioned in the history.
    pub p_mention: f64,
    /// `P(topic positive | its symptom is mentioned)`.
    pub symptom_precision: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            image_size: 32,
            cell: 8,
            p_lateral: 0.6,
            p_extra_frontal: 0.4,
            p_drop: 0.25,
            noise: 0.05,
            foreground: 0.9,
            background: 0.1,
            base_states: vec![0.3, 0.3, 0.15, 0.25],
            p_mention: 0.5,
            symptom_precision: 0.9,
        }
    }
}

/// Topics, states, sentence templates and rendering rules of a synthetic
/// corpus, plus the vocabulary they induce.
#[derive(Clone, Debug, PartialEq)]
pub struct GrammarSpec {
    pub name: String,
    pub topics: Vec<Topic>,
    pub states: Vec<String>,
    pub positive: usize,
    pub unmentioned: usize,
    /// `templates[topic][state]`: alternatives with `{}` standing for the
    /// keyword. The unmentioned state renders no sentence.
    pub templates: Vec<Vec<Vec<String>>>,
    pub negation_cues: Vec<String>,
    pub uncertainty_cues: Vec<String>,
    pub render: RenderConfig,
    vocab: Vocabulary,
}

pub const HISTORY_LEAD: &str = "indication :";
pub const HISTORY_NONE: &str = "routine exam";
pub const HISTORY_JOIN: &str = "and";
pub const SENTENCE_END: &str = ".";

fn default_state_templates() -> Vec<Vec<String>> {
    vec![
        vec!["there is {} .".into()],
        vec!["no {} .".into()],
        vec!["possible {} .".into()],
        vec![String::new()],
    ]
}

impl GrammarSpec {
    pub fn new(
        name: &str,
        topics: Vec<Topic>,
        templates: Vec<Vec<Vec<String>>>,
        render: RenderConfig,
    ) -> Result<Self> {
        let mut g = GrammarSpec {
            name: name.to_string(),
            topics,
            states: ["positive", "negative", "uncertain", "unmentioned"]
                .map(String::from)
                .to_vec(),
            positive: 0,
            unmentioned: 3,
            templates,
            negation_cues: vec!["no".into(), "without".into()],
            uncertainty_cues: vec!["possible".into(), "may".into(), "likely".into()],
            render,
            vocab: Vocabulary::from_words([]),
        };
        g.vocab = g.build_vocab();
        g.validate()?;
        Ok(g)
    }

    /// Six topics, two of them lateral-only.
    pub fn synth6() -> Self {
        let topics = [
            ("cardiomegaly", "cardiomegaly", "palpitations", false),
            ("effusion", "pleural effusion", "dyspnea", false),
            ("edema", "edema", "leg swelling", false),
            ("pneumonia", "pneumonia", "cough", false),
            ("atelectasis", "atelectasis", "hypoxia", true),
            ("pneumothorax", "pneumothorax", "chest pain", true),
        ];
        Self::from_table(
            "synth6",
            &topics,
            RenderConfig {
                image_size: 32,
                cell: 10,
                ..RenderConfig::default()
            },
        )
    }

    /// Fourteen CheXpert-named topics.
    pub fn chexpert14() -> Self {
        let topics = [
            ("no_finding", "normal study", "checkup", false),
            ("enlarged_cardiomediastinum", "enlarged cardiomediastinum", "hypertension", false),
            ("cardiomegaly", "cardiomegaly", "palpitations", false),
            ("lung_opacity", "lung opacity", "fever", false),
            ("lung_lesion", "lung lesion", "weight loss", true),
            ("edema", "edema", "leg swelling", false),
            ("consolidation", "consolidation", "sputum", false),
            ("pneumonia", "pneumonia", "cough", false),
            ("atelectasis", "atelectasis", "hypoxia", true),
            ("pneumothorax", "pneumothorax", "chest pain", true),
            ("pleural_effusion", "pleural effusion", "dyspnea", false),
            ("pleural_other", "pleural thickening", "asbestos exposure", true),
            ("fracture", "rib fracture", "trauma", false),
            ("support_devices", "support device", "line placement", false),
        ];
        Self::from_table("chexpert14", &topics, RenderConfig::default())
    }

    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "synth6" => Ok(Self::synth6()),
            "chexpert14" => Ok(Self::chexpert14()),
            other => Err(Error::Config(format!("unknown grammar {other:?} (synth6, chexpert14)"))),
        }
    }

    fn from_table(name: &str, table: &[(&str, &str, &str, bool)], render: RenderConfig) -> Self {
        let topics = table
            .iter()
            .map(|&(name, keyword, symptom, lateral_only)| Topic {
                name: name.into(),
                keyword: keyword.into(),
                symptom: symptom.into(),
                lateral_only,
            })
            .collect::<Vec<_>>();
        let templates = topics.iter().map(|_| default_state_templates()).collect();
        Self::new(name, topics, templates, render).expect("built-in grammar is valid")
    }

    pub fn n(&self) -> usize {
        self.topics.len()
    }

    pub fn k(&self) -> usize {
        self.states.len()
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    /// Words of one rendered sentence for `(topic, state)`, template `alt`.
    pub fn sentence(&self, topic: usize, state: usize, alt: usize) -> String {
        let t = &self.templates[topic][state];
        t[alt % t.len()].replace("{}", &self.topics[topic].keyword)
    }

    pub fn topic_index(&self, name: &str) -> Option<usize> {
        self.topics.iter().position(|t| t.name == name)
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.states.iter().position(|s| s == name)
    }

    fn build_vocab(&self) -> Vocabulary {
        let mut words: Vec<String> = Vec::new();
        let mut add = |s: &str| words.extend(s.split_whitespace().map(String::from));
        for (ti, topic) in self.templates.iter().enumerate() {
            for (si, alts) in topic.iter().enumerate() {
                for a in 0..alts.len() {
                    add(&self.sentence(ti, si, a));
                }
            }
        }
        for t in &self.topics {
            add(&t.keyword);
            add(&t.symptom);
        }
        for s in [HISTORY_LEAD, HISTORY_NONE, HISTORY_JOIN, SENTENCE_END] {
            add(s);
        }
        for c in self.negation_cues.iter().chain(&self.uncertainty_cues) {
            add(c);
        }
        Vocabulary::from_words(words.iter().map(String::as_str))
    }

    pub fn validate(&self) -> Result<()> {
        let (n, k) = (self.n(), self.k());
        let r = &self.render;
        let per_row = r.image_size / r.cell.max(1);
        if n == 0 || k < 2 {
            return Err(Error::Config("grammar needs topics and at least two states".into()));
        }
        if k > GLYPHS.len() {
            return Err(Error::Config(format!("at most {} states have glyphs", GLYPHS.len())));
        }
        if r.cell < GLYPH_SIZE || per_row * per_row < n {
            return Err(Error::Config(format!(
                "{n} topics do not fit {0}x{0} images with {1}px cells",
                r.image_size, r.cell
            )));
        }
        if self.positive >= k || self.unmentioned >= k || self.positive == self.unmentioned {
            return Err(Error::Config("positive/unmentioned state indices invalid".into()));
        }
        if r.base_states.len() != k || (r.base_states.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config("base state distribution must have k entries summing to 1".into()));
        }
        if self.templates.len() != n || self.templates.iter().any(|t| t.len() != k) {
            return Err(Error::Config("templates must be indexed [topic][state]".into()));
        }
        for (ti, topic) in self.templates.iter().enumerate() {
            for (si, alts) in topic.iter().enumerate() {
                if alts.is_empty() {
                    return Err(Error::Config(format!(
                        "no template for ({}, {})",
                        self.topics[ti].name, self.states[si]
                    )));
                }
                for a in 0..alts.len() {
                    let s = self.sentence(ti, si, a);
                    let blank = s.trim().is_empty();
                    if blank != (si == self.unmentioned) {
                        return Err(Error::Config(format!(
                            "template {s:?} for ({}, {}) must be {}",
                            self.topics[ti].name,
                            self.states[si],
                            if si == self.unmentioned { "empty" } else { "non-empty" }
                        )));
                    }
                    if !blank && !s.trim_end().ends_with(SENTENCE_END) {
                        return Err(Error::Config(format!("template {s:?} must end with '.'")));
                    }
                }
            }
        }
        let mut keywords: Vec<&str> = self.topics.iter().map(|t| t.keyword.as_str()).collect();
        keywords.sort_unstable();
        keywords.dedup();
        if keywords.len() != n {
            return Err(Error::Config("topic keywords must be distinct".into()));
        }
        Ok(())
    }
}
