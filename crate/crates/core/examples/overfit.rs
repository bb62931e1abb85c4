//! Overfits 32 synthetic studies and reports teacher-forced token accuracy,
//! train BLEU-4 and the clinical micro-F1 of greedy reports.
//!
//! cargo run --release --example overfit [steps]

use std::time::Instant;

use triad::config::RunConfig;
use triad::corpus::{Corpus, GrammarSpec};
use triad::eval::evaluate;
use triad::train::{train, EpochLog, Observer};

struct Progress;

impl Observer for Progress {
    fn epoch(&mut self, e: &EpochLog) {
        if e.epoch.is_multiple_of(25) {
            println!("{:>8} step {:>5}  L_C {:.4}  L_G {:.4}  L_I {:?}", e.stage.as_str(), e.step, e.l_c, e.l_g, e.l_i);
        }
    }
}

fn main() -> triad::Result<()> {
    let steps: usize = std::env::args().nth(1).map_or(Ok(1500), |s| s.parse()).expect("steps");
    let mut run = RunConfig::default();
    run.optim.steps = steps;
    run.optim.finetune_steps = 0;
    run.optim.lr = 2e-3;
    run.optim.warmup = 50;
    let corpus = Corpus::generate(GrammarSpec::synth6(), run.seed, 32, 0.0, 0.0)?;

    let t0 = Instant::now();
    let out = train(&run, &corpus, &mut Progress)?;
    println!("trained {} steps in {:.1}s", out.steps, t0.elapsed().as_secs_f64());

    let model = &out.best;
    let (mut hits, mut total) = (0, 0);
    for s in &corpus.train {
        let (h, t) = model.teacher_forced_hits(&run.ablation, s)?;
        hits += h;
        total += t;
    }
    let r = evaluate(model, &run.ablation, &corpus.grammar, &corpus.train)?;
    println!("teacher-forced accuracy {:.4}", hits as f64 / total as f64);
    println!("train BLEU-4 {:.4}", r.language.bleu4);
    println!("micro-F1 {:.4}", r.clinical.micro_avg.f1);
    Ok(())
}
