//! Compares the tape's gradients of the full training loss against central
//! differences, in both training phases, on a tiny f64 model.
//!
//! cargo run --release --example gradcheck [seed]

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use triad::config::{Ablation, LossWeights, RunConfig};
use triad::corpus::{generate_study, GrammarSpec};
use triad::interpreter::is_interpreter_param;
use triad::model::{Model, PassMode};
use triad::tensor::{relative_error, Tape};
use triad::train::fit_to_grammar;

fn loss(model: &Model<f64>, mode: PassMode, study: &triad::corpus::Study) -> f64 {
    let mut tape = Tape::new();
    let p = model.params.bind(&mut tape, |_| false);
    let f = model
        .forward(&mut tape, &p, &Ablation::default(), &LossWeights::default(), mode, study)
        .expect("forward");
    tape.value(f.total).item()
}

fn main() -> triad::Result<()> {
    let seed: u64 = std::env::args().nth(1).map_or(0, |s| s.parse().expect("seed"));
    let grammar = GrammarSpec::synth6();
    let mut cfg = RunConfig::default().model;
    cfg.e = 8;
    cfg.c = 8;
    cfg.ffn = 16;
    cfg.layers = 1;
    cfg.heads = 2;
    fit_to_grammar(&mut cfg, &grammar);
    let model: Model<f64> = Model::<f32>::init(cfg, seed)?.cast();
    let study = generate_study(seed, "g", &grammar);
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);

    for (name, mode, frozen) in [("joint", PassMode::JOINT, false), ("finetune", PassMode::FINETUNE, true)] {
        let trainable = |n: &str| !(frozen && is_interpreter_param(n));
        let mut tape = Tape::new();
        let p = model.params.bind(&mut tape, trainable);
        let f = model.forward(&mut tape, &p, &Ablation::default(), &LossWeights::default(), mode, &study)?;
        tape.backward(f.total)?;

        let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
        let mut work = model.clone();
        for (pname, &var) in p.iter().filter(|(n, _)| trainable(n)) {
            let numel = model.params.get(pname).expect("bound").numel();
            let grad = tape.grad(var).map_or(vec![0.0; numel], <[f64]>::to_vec);
            for _ in 0..4 {
                let i = rng.gen_range(0..numel);
                let orig = work.params.get(pname).expect("bound").data()[i];
                let mut at = |x: f64| {
                    work.params.get_mut(pname).expect("bound").data_mut()[i] = x;
                    loss(&work, mode, &study)
                };
                let d = (at(orig + 1e-5) - at(orig - 1e-5)) / 2e-5;
                work.params.get_mut(pname).expect("bound").data_mut()[i] = orig;
                analytic.push(grad[i]);
                numeric.push(d);
            }
        }
        println!(
            "{name:<9} loss {:.5}  {} coordinates  relative error {:.2e}",
            tape.value(f.total).item(),
            analytic.len(),
            relative_error(&analytic, &numeric, 1e-8)
        );
    }
    Ok(())
}
