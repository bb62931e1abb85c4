//! Trains a small model briefly, then prints which history words each
//! disease query attends to and which report words the interpreter reads
//! for each topic.
//!
//! cargo run --release --example attention [steps]

use triad::config::RunConfig;
use triad::corpus::{Corpus, GrammarSpec};
use triad::eval::inspect;
use triad::train::train;

fn main() -> triad::Result<()> {
    let steps: usize = std::env::args().nth(1).map_or(600, |s| s.parse().expect("steps"));
    let mut run = RunConfig::default();
    run.model.e = 32;
    run.model.c = 32;
    run.model.ffn = 64;
    run.optim.steps = steps;
    run.optim.finetune_steps = steps / 5;
    run.optim.lr = 2e-3;
    let corpus = Corpus::generate(GrammarSpec::synth6(), 11, 400, 0.1, 0.1)?;
    let out = train(&run, &corpus, &mut ())?;

    let study = corpus
        .test
        .iter()
        .find(|s| s.history.0.len() > 4)
        .unwrap_or(&corpus.test[0]);
    let ins = inspect(&out.best, &run.ablation, &corpus.grammar, study)?;
    println!("study     {}", study.id);
    println!("history   {}", corpus.grammar.vocab().decode(&study.history));
    println!("reference {}", corpus.grammar.vocab().decode(&study.report));
    println!("generated {}", ins.generated.join(" "));
    if let Some(csv) = ins.history_csv {
        println!("\nhistory attention (rows: topics, columns: history words)\n{csv}");
    }
    if let Some(csv) = ins.interpreter_csv {
        println!("interpreter attention (rows: topics, columns: generated words)\n{csv}");
    }
    Ok(())
}
