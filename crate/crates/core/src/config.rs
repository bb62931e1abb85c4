//! Model dimensions and the run configuration.
//!
//! Run configuration files are flat `key = value` text; `#` starts a
//! comment. Precedence is command line over file over defaults, and the
//! `TRIAD_SEED` environment variable overrides the seed from either.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Side of the square input views.
    pub image_size: usize,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    /// Visual feature width.
    pub c: usize,
    /// Embedding width.
    pub e: usize,
    /// Number of disease topics.
    pub n: usize,
    /// Number of states per topic.
    pub k: usize,
    /// Vocabulary size.
    pub v: usize,
    pub layers: usize,
    pub heads: usize,
    /// Feed-forward hidden width.
    pub ffn: usize,
    /// Longest word sequence any stack accepts.
    pub max_len: usize,
    pub positional: bool,
    /// Scale disease-query logits by `1/sqrt(e)`.
    pub query_scaling: bool,
    /// Interpreter reuses the classifier's state embedding.
    pub share_states: bool,
    pub ln_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image_size: 32,
            conv1_channels: 8,
            conv2_channels: 8,
            c: 64,
            e: 64,
            n: 14,
            k: 4,
            v: 64,
            layers: 3,
            heads: 4,
            ffn: 256,
            max_len: 96,
            positional: true,
            query_scaling: false,
            share_states: false,
            ln_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("image_size", self.image_size),
            ("conv1_channels", self.conv1_channels),
            ("conv2_channels", self.conv2_channels),
            ("c", self.c),
            ("e", self.e),
            ("n", self.n),
            ("k", self.k),
            ("v", self.v),
            ("layers", self.layers),
            ("heads", self.heads),
            ("ffn", self.ffn),
            ("max_len", self.max_len),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, d)| *d == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !self.e.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "e = {} is not divisible by heads = {}",
                self.e, self.heads
            )));
        }
        if self.e < 2 {
            return Err(Error::Config("e must be at least 2".into()));
        }
        if self.image_size < 4 {
            return Err(Error::Config("image_size must be at least 4".into()));
        }
        Ok(())
    }

    /// Spatial side after the two stride-2 convolutions.
    pub fn feature_side(&self) -> usize {
        self.image_size.div_ceil(2).div_ceil(2)
    }
}

/// Which contributions to the enriched embedding and which inputs are used.
/// The defaults are the full pipeline (`MV+T+I`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Ablation {
    pub use_history: bool,
    pub use_multiview: bool,
    pub use_interpreter: bool,
    pub drop_states: bool,
    pub drop_topics: bool,
    pub drop_fused: bool,
    /// Stop gradients through the predicted checklist in the state embedding.
    pub detach_predicted: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation {
            use_history: true,
            use_multiview: true,
            use_interpreter: true,
            drop_states: false,
            drop_topics: false,
            drop_fused: false,
            detach_predicted: false,
        }
    }
}

/// Named configurations of the image/text/interpreter comparison.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    SingleView,
    MultiView,
    MultiViewText,
    MultiViewTextInterpreter,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::SingleView,
        Variant::MultiView,
        Variant::MultiViewText,
        Variant::MultiViewTextInterpreter,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Variant::SingleView => "SV",
            Variant::MultiView => "MV",
            Variant::MultiViewText => "MV+T",
            Variant::MultiViewTextInterpreter => "MV+T+I",
        }
    }

    pub fn apply(self, a: &mut Ablation) {
        let (mv, t, i) = match self {
            Variant::SingleView => (false, false, false),
            Variant::MultiView => (true, false, false),
            Variant::MultiViewText => (true, true, false),
            Variant::MultiViewTextInterpreter => (true, true, true),
        };
        a.use_multiview = mv;
        a.use_history = t;
        a.use_interpreter = i;
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?} (SV, MV, MV+T, MV+T+I)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub classifier: f64,
    pub generator: f64,
    pub interpreter: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            classifier: 1.0,
            generator: 1.0,
            interpreter: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimConfig {
    pub lr: f64,
    pub warmup: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm clip; 0 disables.
    pub clip_norm: f64,
    pub batch_size: usize,
    /// Joint-training steps.
    pub steps: usize,
    /// Frozen-interpreter fine-tuning steps after the joint phase.
    pub finetune_steps: usize,
    /// Validation interval in steps; 0 validates only at phase ends.
    pub eval_every: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 1e-3,
            warmup: 100,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: 1.0,
            batch_size: 8,
            steps: 2000,
            finetune_steps: 300,
            eval_every: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusConfig {
    /// Built-in grammar name: `synth6` or `chexpert14`.
    pub grammar: String,
    pub size: usize,
    pub val_ratio: f64,
    pub test_ratio: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            grammar: "synth6".into(),
            size: 1200,
            val_ratio: 0.1,
            test_ratio: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub loss: LossWeights,
    pub ablation: Ablation,
    pub optim: OptimConfig,
    pub corpus: CorpusConfig,
    pub corpus_dir: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 17,
            model: ModelConfig::default(),
            loss: LossWeights::default(),
            ablation: Ablation::default(),
            optim: OptimConfig::default(),
            corpus: CorpusConfig::default(),
            corpus_dir: PathBuf::from("corpus"),
            out_dir: PathBuf::from("runs"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean {value:?} for {key}"))),
    }
}

impl RunConfig {
    /// Every key accepted by [`set`](Self::set), in file order.
    pub const KEYS: &'static [&'static str] = &[
        "seed",
        "image_size",
        "conv1_channels",
        "conv2_channels",
        "c",
        "e",
        "n",
        "k",
        "v",
        "layers",
        "heads",
        "ffn",
        "max_len",
        "positional",
        "query_scaling",
        "share_states",
        "weight_c",
        "weight_g",
        "weight_i",
        "use_history",
        "use_multiview",
        "use_interpreter",
        "drop_states",
        "drop_topics",
        "drop_fused",
        "detach_predicted",
        "lr",
        "warmup",
        "beta1",
        "beta2",
        "adam_eps",
        "clip_norm",
        "batch_size",
        "steps",
        "finetune_steps",
        "eval_every",
        "grammar",
        "corpus_size",
        "val_ratio",
        "test_ratio",
        "corpus_dir",
        "out_dir",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let m = &mut self.model;
        let a = &mut self.ablation;
        let o = &mut self.optim;
        match key {
            "seed" => self.seed = parse(key, value)?,
            "image_size" => m.image_size = parse(key, value)?,
            "conv1_channels" => m.conv1_channels = parse(key, value)?,
            "conv2_channels" => m.conv2_channels = parse(key, value)?,
            "c" => m.c = parse(key, value)?,
            "e" => m.e = parse(key, value)?,
            "n" => m.n = parse(key, value)?,
            "k" => m.k = parse(key, value)?,
            "v" => m.v = parse(key, value)?,
            "layers" => m.layers = parse(key, value)?,
            "heads" => m.heads = parse(key, value)?,
            "ffn" => m.ffn = parse(key, value)?,
            "max_len" => m.max_len = parse(key, value)?,
            "positional" => m.positional = parse_bool(key, value)?,
            "query_scaling" => m.query_scaling = parse_bool(key, value)?,
            "share_states" => m.share_states = parse_bool(key, value)?,
            "weight_c" => self.loss.classifier = parse(key, value)?,
            "weight_g" => self.loss.generator = parse(key, value)?,
            "weight_i" => self.loss.interpreter = parse(key, value)?,
            "use_history" => a.use_history = parse_bool(key, value)?,
            "use_multiview" => a.use_multiview = parse_bool(key, value)?,
            "use_interpreter" => a.use_interpreter = parse_bool(key, value)?,
            "drop_states" => a.drop_states = parse_bool(key, value)?,
            "drop_topics" => a.drop_topics = parse_bool(key, value)?,
            "drop_fused" => a.drop_fused = parse_bool(key, value)?,
            "detach_predicted" => a.detach_predicted = parse_bool(key, value)?,
            "lr" => o.lr = parse(key, value)?,
            "warmup" => o.warmup = parse(key, value)?,
            "beta1" => o.beta1 = parse(key, value)?,
            "beta2" => o.beta2 = parse(key, value)?,
            "adam_eps" => o.adam_eps = parse(key, value)?,
            "clip_norm" => o.clip_norm = parse(key, value)?,
            "batch_size" => o.batch_size = parse(key, value)?,
            "steps" => o.steps = parse(key, value)?,
            "finetune_steps" => o.finetune_steps = parse(key, value)?,
            "eval_every" => o.eval_every = parse(key, value)?,
            "grammar" => self.corpus.grammar = value.trim().to_string(),
            "corpus_size" => self.corpus.size = parse(key, value)?,
            "val_ratio" => self.corpus.val_ratio = parse(key, value)?,
            "test_ratio" => self.corpus.test_ratio = parse(key, value)?,
            "corpus_dir" => self.corpus_dir = PathBuf::from(value.trim()),
            "out_dir" => self.out_dir = PathBuf::from(value.trim()),
            "variant" => value.parse::<Variant>()?.apply(a),
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let m = &self.model;
        let a = &self.ablation;
        let o = &self.optim;
        Some(match key {
            "seed" => self.seed.to_string(),
            "image_size" => m.image_size.to_string(),
            "conv1_channels" => m.conv1_channels.to_string(),
            "conv2_channels" => m.conv2_channels.to_string(),
            "c" => m.c.to_string(),
            "e" => m.e.to_string(),
            "n" => m.n.to_string(),
            "k" => m.k.to_string(),
            "v" => m.v.to_string(),
            "layers" => m.layers.to_string(),
            "heads" => m.heads.to_string(),
            "ffn" => m.ffn.to_string(),
            "max_len" => m.max_len.to_string(),
            "positional" => m.positional.to_string(),
            "query_scaling" => m.query_scaling.to_string(),
            "share_states" => m.share_states.to_string(),
            "weight_c" => self.loss.classifier.to_string(),
            "weight_g" => self.loss.generator.to_string(),
            "weight_i" => self.loss.interpreter.to_string(),
            "use_history" => a.use_history.to_string(),
            "use_multiview" => a.use_multiview.to_string(),
            "use_interpreter" => a.use_interpreter.to_string(),
            "drop_states" => a.drop_states.to_string(),
            "drop_topics" => a.drop_topics.to_string(),
            "drop_fused" => a.drop_fused.to_string(),
            "detach_predicted" => a.detach_predicted.to_string(),
            "lr" => o.lr.to_string(),
            "warmup" => o.warmup.to_string(),
            "beta1" => o.beta1.to_string(),
            "beta2" => o.beta2.to_string(),
            "adam_eps" => o.adam_eps.to_string(),
            "clip_norm" => o.clip_norm.to_string(),
            "batch_size" => o.batch_size.to_string(),
            "steps" => o.steps.to_string(),
            "finetune_steps" => o.finetune_steps.to_string(),
            "eval_every" => o.eval_every.to_string(),
            "grammar" => self.corpus.grammar.clone(),
            "corpus_size" => self.corpus.size.to_string(),
            "val_ratio" => self.corpus.val_ratio.to_string(),
            "test_ratio" => self.corpus.test_ratio.to_string(),
            "corpus_dir" => self.corpus_dir.display().to_string(),
            "out_dir" => self.out_dir.display().to_string(),
            _ => return None,
        })
    }

    /// Parses `key = value` lines into an ordered map.
    pub fn parse_text(text: &str) -> Result<BTreeMap<String, String>> {
        let mut out = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("expected key = value, got {line:?}"),
            })?;
            out.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(out)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        // Variant first so explicit flags in the same file win over it.
        let map = Self::parse_text(text)?;
        if let Some(v) = map.get("variant") {
            self.set("variant", v)?;
        }
        for (k, v) in map.iter().filter(|(k, _)| k.as_str() != "variant") {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        let text = std::fs::read_to_string(path)?;
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    /// Applies `TRIAD_SEED` when set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(s) = std::env::var("TRIAD_SEED") {
            self.set("seed", &s)?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for key in Self::KEYS {
            let _ = writeln!(s, "{key} = {}", self.get(key).expect("known key"));
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let c = &self.corpus;
        if !(0.0..1.0).contains(&c.val_ratio)
            || !(0.0..1.0).contains(&c.test_ratio)
            || c.val_ratio + c.test_ratio >= 1.0
        {
            return Err(Error::Config("split ratios must leave room for a train split".into()));
        }
        if self.optim.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        let w = &self.loss;
        if [w.classifier, w.generator, w.interpreter]
            .iter()
            .any(|x| !x.is_finite() || *x < 0.0)
        {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}
