//! Trains the image/text/interpreter variants and the enriched-embedding
//! ablations on one corpus and prints a score table.
//!
//! cargo run --release --example ablation [seeds] [steps] [finetune_steps] [labels] [grammar] [key=value,..]
//!
//! `labels` is a comma-separated subset such as `MV+T,w/o D_states`.

use std::time::Instant;

use triad::config::{RunConfig, Variant};
use triad::corpus::{Corpus, GrammarSpec};
use triad::eval::evaluate;
use triad::metrics::scores_csv;
use triad::train::{train, EpochLog, Observer};

/// Validation scores go to stderr so the table on stdout stays clean.
struct Validation;

impl Observer for Validation {
    fn epoch(&mut self, _: &EpochLog) {}

    fn validation(&mut self, step: usize, bleu4: f64) {
        eprintln!("  step {step:>5}  validation BLEU-4 {bleu4:.4}");
    }
}

fn main() -> triad::Result<()> {
    let arg = |i: usize, d: usize| std::env::args().nth(i).map_or(d, |s| s.parse().expect("number"));
    let (seeds, steps, finetune) = (arg(1, 1), arg(2, 1500), arg(3, 300));

    let mut runs: Vec<(String, RunConfig)> = Vec::new();
    for v in Variant::ALL {
        let mut r = RunConfig::default();
        v.apply(&mut r.ablation);
        runs.push((v.label().to_string(), r));
    }
    for (label, f) in [
        ("w/o D_states", 0),
        ("w/o D_topics", 1),
        ("w/o D_fused", 2),
    ] {
        let mut r = RunConfig::default();
        Variant::MultiViewText.apply(&mut r.ablation);
        match f {
            0 => r.ablation.drop_states = true,
            1 => r.ablation.drop_topics = true,
            _ => r.ablation.drop_fused = true,
        }
        runs.push((label.to_string(), r));
    }

    if let Some(pick) = std::env::args().nth(4) {
        let pick: Vec<&str> = pick.split(',').collect();
        runs.retain(|(l, _)| pick.contains(&l.as_str()));
    }

    let mut rows = Vec::new();
    for (label, base) in &runs {
        for seed in 0..seeds as u64 {
            let mut run = base.clone();
            run.seed = 100 + seed;
            run.model.e = 32;
            run.model.c = 32;
            run.model.ffn = 64;
            run.model.layers = 2;
            run.model.heads = 2;
            run.optim.steps = steps;
            run.optim.finetune_steps = finetune;
            run.optim.lr = 2e-3;
            run.corpus.size = 4000;
            run.corpus.val_ratio = 0.05;
            run.corpus.test_ratio = 0.15;
            if let Some(extra) = std::env::args().nth(6) {
                for kv in extra.split(',') {
                    let (k, v) = kv.split_once('=').expect("key=value");
                    run.set(k, v)?;
                }
            }
            let grammar = GrammarSpec::builtin(&std::env::args().nth(5).unwrap_or("synth6".into()))?;
            let corpus = Corpus::generate(grammar, run.seed, run.corpus.size, run.corpus.val_ratio, run.corpus.test_ratio)?;
            let t0 = Instant::now();
            let out = train(&run, &corpus, &mut Validation)?;
            let r = evaluate(&out.best, &run.ablation, &corpus.grammar, &corpus.test)?;
            // How often the written report agrees with the classifier.
            let (agree, total) = r.generations.iter().fold((0, 0), |(a, t), g| {
                let same = g.classifier_states.iter().zip(&g.labeled_states).filter(|(x, y)| x == y).count();
                (a + same, t + g.labeled_states.len())
            });
            println!(
                "{label:<14} seed {seed}  B-4 {:.4}  micro-F1 {:.4}  acc {:.4}  consistency {:.4}  ({:.0}s)",
                r.language.bleu4,
                r.clinical.micro_avg.f1,
                r.clinical.accuracy,
                agree as f64 / total as f64,
                t0.elapsed().as_secs_f64()
            );
            rows.push((format!("{label} seed {seed}"), r.language, r.clinical));
        }
    }
    print!("{}", scores_csv(&rows));
    Ok(())
}
