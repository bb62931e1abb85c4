//! Generates a few synthetic studies, prints their text and truth, draws the
//! first view in ASCII and writes a small corpus to disk.
//!
//! cargo run --release --example corpus [synth6|chexpert14] [out_dir]

use std::path::PathBuf;

use triad::corpus::{generate_study, rule_label, Corpus, GrammarSpec};

fn main() -> triad::Result<()> {
    let name = std::env::args().nth(1).unwrap_or("synth6".into());
    let grammar = GrammarSpec::builtin(&name)?;
    let vocab = grammar.vocab();

    for seed in 0..3 {
        let s = generate_study(seed, &format!("demo{seed}"), &grammar);
        println!("study {}", s.id);
        println!("  views    {:?}", s.views.iter().map(|v| v.tag).collect::<Vec<_>>());
        println!("  history  {}", vocab.decode(&s.history));
        println!("  report   {}", vocab.decode(&s.report));
        let states: Vec<&str> = s.truth.argmax().iter().map(|&k| grammar.states[k].as_str()).collect();
        println!("  truth    {states:?}");
        assert_eq!(rule_label(&s.report, &grammar), s.truth);
    }

    let v = &generate_study(0, "demo0", &grammar).views[0];
    println!("\nview 0 ({:?})", v.tag);
    for y in 0..v.height {
        let row: String = (0..v.width)
            .map(|x| match v.pixels[y * v.width + x] {
                p if p > 0.6 => '#',
                p if p > 0.3 => '+',
                _ => '.',
            })
            .collect();
        println!("  {row}");
    }

    let dir = std::env::args().nth(2).map_or(std::env::temp_dir().join("triad-corpus"), PathBuf::from);
    let corpus = Corpus::generate(grammar, 7, 200, 0.1, 0.2)?;
    corpus.save(&dir, 7, true)?;
    let m = corpus.manifest(7);
    println!("\nwrote {} studies to {} (train {}, val {}, test {})", m.size, dir.display(), m.train, m.val, m.test);
    Ok(())
}
