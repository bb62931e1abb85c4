//! Drives the two training phases by hand: joint steps with ground-truth
//! states, then fine-tuning through the frozen interpreter on the soft
//! generated report. Prints the losses and the interpreter checksum.
//!
//! cargo run --release --example interpreter [joint_steps] [finetune_steps]

use triad::config::RunConfig;
use triad::corpus::{Corpus, GrammarSpec, Study};
use triad::interpreter::is_interpreter_param;
use triad::model::Model;
use triad::train::{fit_to_grammar, Trainer};

fn hex(b: [u8; 32]) -> String {
    b[..6].iter().map(|x| format!("{x:02x}")).collect()
}

fn main() -> triad::Result<()> {
    let arg = |i: usize, d: usize| std::env::args().nth(i).map_or(d, |s| s.parse().expect("number"));
    let (joint, fine) = (arg(1, 300), arg(2, 100));
    let corpus = Corpus::generate(GrammarSpec::synth6(), 3, 200, 0.0, 0.0)?;
    let mut run = RunConfig::default();
    run.model.e = 32;
    run.model.c = 32;
    run.model.ffn = 64;
    run.optim.lr = 2e-3;
    fit_to_grammar(&mut run.model, &corpus.grammar);
    let mut trainer = Trainer::new(Model::<f32>::init(run.model.clone(), run.seed)?, &run);

    let bs = run.optim.batch_size;
    let batch = |i: usize| -> Vec<&Study> { corpus.train.iter().cycle().skip(i * bs).take(bs).collect() };
    for i in 0..joint {
        let l = trainer.joint_step(&batch(i))?;
        if i % 50 == 0 || i + 1 == joint {
            println!("joint    {i:>4}  L_C {:.4}  L_G {:.4}  L_I {:.4}", l.l_c, l.l_g, l.l_i.unwrap_or(f64::NAN));
        }
    }

    trainer.freeze_interpreter();
    let before = hex(trainer.model.params.checksum(is_interpreter_param));
    for i in 0..fine {
        let l = trainer.fine_tune_step(&batch(joint + i))?;
        if i % 25 == 0 || i + 1 == fine {
            println!("finetune {i:>4}  L_C {:.4}  L_G {:.4}  L_I {:.4}", l.l_c, l.l_g, l.l_i.unwrap_or(f64::NAN));
        }
    }
    let after = hex(trainer.model.params.checksum(is_interpreter_param));
    println!("interpreter checksum {before} -> {after}");
    Ok(())
}
