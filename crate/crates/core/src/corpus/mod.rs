//! Synthetic chest-film corpus: grammar, rendering, rule labeler, JSONL I/O
//! and train/val/test splits.

pub mod generate;
pub mod grammar;
pub mod jsonl;
pub mod labeler;
pub mod vocab;

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifier::Checklist;
use crate::encoders::{TokenSequence, ViewImage};
use crate::error::{Error, Result};

pub use generate::{generate_study, study_seed};
pub use grammar::GrammarSpec;
pub use jsonl::{read_jsonl, write_jsonl, ReadOutcome};
pub use labeler::{rule_label, rule_label_text};
pub use vocab::{Vocabulary, BOS, EOS, PAD, UNK};

/// One imaging study with its paired history, report and checklist.
#[derive(Clone, Debug, PartialEq)]
pub struct Study {
    pub id: String,
    pub views: Vec<ViewImage>,
    pub history: TokenSequence,
    /// `BOS … EOS`.
    pub report: TokenSequence,
    pub truth: Checklist,
}

impl Study {
    pub fn view_refs(&self) -> Vec<&ViewImage> {
        self.views.iter().collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub grammar: String,
    pub seed: u64,
    pub size: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub grammar: GrammarSpec,
    pub train: Vec<Study>,
    pub val: Vec<Study>,
    pub test: Vec<Study>,
}

/// Split sizes: `floor(size·ratio)` for val and test, the rest to train.
pub fn split_sizes(size: usize, val_ratio: f64, test_ratio: f64) -> Result<(usize, usize, usize)> {
    if !(0.0..=1.0).contains(&val_ratio) || !(0.0..=1.0).contains(&test_ratio) || val_ratio + test_ratio > 1.0 {
        return Err(Error::Config(format!(
            "split ratios {val_ratio} + {test_ratio} must be in [0, 1]"
        )));
    }
    let val = (size as f64 * val_ratio).floor() as usize;
    let test = (size as f64 * test_ratio).floor() as usize;
    Ok((size - val - test, val, test))
}

impl Corpus {
    /// Generates `size` studies from `seed` and splits them in order.
    pub fn generate(grammar: GrammarSpec, seed: u64, size: usize, val_ratio: f64, test_ratio: f64) -> Result<Self> {
        let (n_train, n_val, _) = split_sizes(size, val_ratio, test_ratio)?;
        let mut studies: Vec<Study> = (0..size)
            .map(|i| generate_study(study_seed(seed, i as u64), &format!("s{seed}-{i:06}"), &grammar))
            .collect();
        let test = studies.split_off(n_train + n_val);
        let val = studies.split_off(n_train);
        Ok(Corpus { grammar, train: studies, val, test })
    }

    pub fn manifest(&self, seed: u64) -> Manifest {
        Manifest {
            grammar: self.grammar.name.clone(),
            seed,
            size: self.train.len() + self.val.len() + self.test.len(),
            train: self.train.len(),
            val: self.val.len(),
            test: self.test.len(),
        }
    }

    /// Writes `train.jsonl`, `val.jsonl`, `test.jsonl` and `manifest.json`.
    pub fn save(&self, dir: &Path, seed: u64, force: bool) -> Result<()> {
        let manifest = dir.join("manifest.json");
        if manifest.exists() && !force {
            return Err(Error::Exists(manifest));
        }
        fs::create_dir_all(dir)?;
        for (name, split) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            write_jsonl(&dir.join(format!("{name}.jsonl")), split, &self.grammar)?;
        }
        fs::write(&manifest, serde_json::to_string_pretty(&self.manifest(seed))?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::NotFound(format!("{}: {e}", path.display())))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        let grammar = GrammarSpec::builtin(&manifest.grammar)?;
        let mut splits = Vec::new();
        for name in ["train", "val", "test"] {
            let out = read_jsonl(&dir.join(format!("{name}.jsonl")), &grammar)?;
            if out.unknown_fields > 0 {
                log::warn!("{name}.jsonl: {} unknown fields ignored", out.unknown_fields);
            }
            splits.push(out.studies);
        }
        let test = splits.pop().unwrap_or_default();
        let val = splits.pop().unwrap_or_default();
        let train = splits.pop().unwrap_or_default();
        let corpus = Corpus { grammar, train, val, test };
        corpus.check_disjoint()?;
        Ok(corpus)
    }

    pub fn check_disjoint(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for s in self.train.iter().chain(&self.val).chain(&self.test) {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Contract(format!("study id {} appears twice", s.id)));
            }
        }
        Ok(())
    }
}
