//! Saves a freshly initialized model, loads it back bit for bit, and shows
//! that a flipped byte is caught by the checksum.

use triad::checkpoint;
use triad::config::RunConfig;
use triad::corpus::GrammarSpec;
use triad::model::Model;
use triad::train::fit_to_grammar;

fn main() -> triad::Result<()> {
    let mut run = RunConfig::default();
    fit_to_grammar(&mut run.model, &GrammarSpec::synth6());
    let model = Model::<f32>::init(run.model.clone(), run.seed)?;
    let path = std::env::temp_dir().join("triad-demo.ckpt");
    checkpoint::save(&path, &run, &model)?;
    let bytes = std::fs::read(&path)?;
    println!("wrote {} bytes, {} tensors", bytes.len(), model.params.iter().count());

    let (cfg, back) = checkpoint::load(&path)?;
    let same = model.params.checksum(|_| true) == back.params.checksum(|_| true);
    println!("config matches {}, parameters identical {same}", cfg.model == run.model);

    let mut bad = bytes.clone();
    let mid = bad.len() / 2;
    bad[mid] ^= 0x40;
    match checkpoint::from_bytes(&bad) {
        Ok(_) => println!("corruption went unnoticed"),
        Err(e) => println!("corrupted copy rejected: {e}"),
    }
    Ok(())
}
