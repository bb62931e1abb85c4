use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};

use triad::checkpoint;
use triad::config::RunConfig;
use triad::corpus::{Corpus, GrammarSpec, Study};
use triad::eval::{evaluate, evaluate_oracle, inspect, EvalResult};
use triad::metrics::{scores_csv, scores_json};
use triad::train::{interpreter_active, train, EpochLog, Observer};
use triad::Error;

fn cli() -> Command {
    let mut common = vec![
        Arg::new("config").long("config").value_name("FILE").help("key = value file; flags override it"),
        Arg::new("variant").long("variant").help("SV, MV, MV+T or MV+T+I"),
        Arg::new("no-interpreter")
            .long("no-interpreter")
            .action(ArgAction::SetTrue)
            .help("same as --use_interpreter false"),
    ];
    for key in RunConfig::KEYS {
        common.push(Arg::new(*key).long(*key).value_name("VALUE"));
    }
    let with_common = |c: Command| c.args(common.clone());
    let checkpoint_arg = || Arg::new("checkpoint").long("checkpoint").required(true).value_name("FILE");
    let split_arg = || Arg::new("split").long("split").default_value("test");
    Command::new("triad")
        .about("Classifier, generator and interpreter for synthetic chest-film reports")
        .subcommand_required(true)
        .subcommand(with_common(
            Command::new("gen-corpus")
                .about("Write train/val/test JSONL splits")
                .arg(Arg::new("force").long("force").action(ArgAction::SetTrue)),
        ))
        .subcommand(with_common(
            Command::new("train")
                .about("Train and save the best checkpoint by validation BLEU-4")
                .arg(Arg::new("force").long("force").action(ArgAction::SetTrue)),
        ))
        .subcommand(with_common(
            Command::new("eval")
                .about("Greedy-decode a split and score it")
                .arg(Arg::new("checkpoint").long("checkpoint").value_name("FILE"))
                .arg(split_arg())
                .arg(
                    Arg::new("oracle")
                        .long("oracle")
                        .action(ArgAction::SetTrue)
                        .help("score the references against themselves"),
                ),
        ))
        .subcommand(with_common(
            Command::new("generate")
                .about("Print generated reports")
                .arg(checkpoint_arg())
                .arg(split_arg())
                .arg(Arg::new("id").long("id").help("one study; all when absent")),
        ))
        .subcommand(with_common(
            Command::new("inspect")
                .about("Dump attention heat-maps of one study as CSV")
                .arg(checkpoint_arg())
                .arg(Arg::new("id").long("id").required(true)),
        ))
}

fn run_config(m: &ArgMatches) -> triad::Result<RunConfig> {
    let mut cfg = match m.get_one::<String>("config") {
        Some(path) => RunConfig::from_file(Path::new(path))?,
        None => RunConfig::default(),
    };
    cfg.apply_env()?;
    if let Some(v) = m.get_one::<String>("variant") {
        cfg.set("variant", v)?;
    }
    for key in RunConfig::KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            cfg.set(key, v)?;
        }
    }
    if m.get_flag("no-interpreter") {
        cfg.ablation.use_interpreter = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Checkpoint configuration with this invocation's ablation flags on top.
fn load_checkpoint(m: &ArgMatches, cli_cfg: &RunConfig) -> triad::Result<(RunConfig, triad::model::Model<f32>)> {
    let path = match m.get_one::<String>("checkpoint") {
        Some(p) => PathBuf::from(p),
        None => cli_cfg.out_dir.join("model.ckpt"),
    };
    let (mut saved, model) = checkpoint::load(&path)?;
    for key in RunConfig::KEYS {
        if m.get_one::<String>(key).is_some() && key.starts_with("use_") {
            saved.set(key, &cli_cfg.get(key).expect("known key"))?;
        }
    }
    if m.get_flag("no-interpreter") {
        saved.ablation.use_interpreter = false;
    }
    saved.corpus_dir = cli_cfg.corpus_dir.clone();
    saved.out_dir = cli_cfg.out_dir.clone();
    Ok((saved, model))
}

fn split<'a>(corpus: &'a Corpus, name: &str) -> triad::Result<&'a [Study]> {
    match name {
        "train" => Ok(&corpus.train),
        "val" => Ok(&corpus.val),
        "test" => Ok(&corpus.test),
        other => Err(Error::Config(format!("unknown split {other:?}"))),
    }
}

struct LogProgress;

impl Observer for LogProgress {
    fn epoch(&mut self, e: &EpochLog) {
        log::info!(
            "{} epoch {} step {}: L_C {:.4} L_G {:.4} L_I {}",
            e.stage.as_str(),
            e.epoch,
            e.step,
            e.l_c,
            e.l_g,
            e.l_i.map_or("-".into(), |x| format!("{x:.4}"))
        );
    }

    fn validation(&mut self, step: usize, bleu4: f64) {
        log::info!("step {step}: validation BLEU-4 {bleu4:.4}");
    }
}

fn write_results(dir: &Path, label: &str, r: &EvalResult) -> triad::Result<()> {
    fs::create_dir_all(dir)?;
    let json = scores_json(&r.language, &r.clinical);
    fs::write(dir.join("scores.json"), serde_json::to_string_pretty(&json)?)?;
    fs::write(
        dir.join("scores.csv"),
        scores_csv(&[(label.to_string(), r.language, r.clinical.clone())]),
    )?;
    let mut lines = String::new();
    for g in &r.generations {
        lines.push_str(&serde_json::to_string(g)?);
        lines.push('\n');
    }
    fs::write(dir.join("generations.jsonl"), lines)?;
    println!("{}", serde_json::to_string_pretty(&json)?);
    Ok(())
}

fn dispatch(matches: &ArgMatches) -> triad::Result<()> {
    let (name, m) = matches.subcommand().expect("subcommand required");
    let cfg = run_config(m)?;
    match name {
        "gen-corpus" => {
            let grammar = GrammarSpec::builtin(&cfg.corpus.grammar)?;
            let c = &cfg.corpus;
            let corpus = Corpus::generate(grammar, cfg.seed, c.size, c.val_ratio, c.test_ratio)?;
            corpus.save(&cfg.corpus_dir, cfg.seed, m.get_flag("force"))?;
            let man = corpus.manifest(cfg.seed);
            println!(
                "wrote {} studies to {} (train {}, val {}, test {})",
                man.size,
                cfg.corpus_dir.display(),
                man.train,
                man.val,
                man.test
            );
        }
        "train" => {
            let ckpt = cfg.out_dir.join("model.ckpt");
            if ckpt.exists() && !m.get_flag("force") {
                return Err(Error::Exists(ckpt));
            }
            let corpus = Corpus::load(&cfg.corpus_dir)?;
            let out = train(&cfg, &corpus, &mut LogProgress)?;
            fs::create_dir_all(&cfg.out_dir)?;
            let with_i = interpreter_active(&cfg.ablation, &cfg.loss);
            fs::write(cfg.out_dir.join("loss.csv"), out.loss_csv(with_i))?;
            if let Some(step) = out.aborted_at {
                checkpoint::save(&cfg.out_dir.join("last_good.ckpt"), &cfg, &out.last)?;
                return Err(Error::NumericAbort { step });
            }
            checkpoint::save(&ckpt, &cfg, &out.best)?;
            println!(
                "trained {} steps; best validation BLEU-4 {}; saved {}",
                out.steps,
                out.best_bleu4.map_or("n/a".into(), |b| format!("{b:.4}")),
                ckpt.display()
            );
        }
        "eval" => {
            let corpus = Corpus::load(&cfg.corpus_dir)?;
            let studies = split(&corpus, m.get_one::<String>("split").expect("default"))?;
            let dir = cfg.out_dir.join("eval");
            if m.get_flag("oracle") {
                write_results(&dir, "oracle", &evaluate_oracle(&corpus.grammar, studies)?)?;
            } else {
                let (saved, model) = load_checkpoint(m, &cfg)?;
                let r = evaluate(&model, &saved.ablation, &corpus.grammar, studies)?;
                write_results(&dir, "model", &r)?;
            }
        }
        "generate" => {
            let corpus = Corpus::load(&cfg.corpus_dir)?;
            let studies = split(&corpus, m.get_one::<String>("split").expect("default"))?;
            let (saved, model) = load_checkpoint(m, &cfg)?;
            triad::eval::check_vocab(&model, &corpus.grammar)?;
            let picked: Vec<&Study> = match m.get_one::<String>("id") {
                Some(id) => vec![find(&corpus, id)?],
                None => studies.iter().collect(),
            };
            for s in picked {
                let p = model.predict(&saved.ablation, s, model.config.max_len)?;
                println!("{}\t{}", s.id, corpus.grammar.vocab().decode(&p.tokens));
            }
        }
        "inspect" => {
            let corpus = Corpus::load(&cfg.corpus_dir)?;
            let id = m.get_one::<String>("id").expect("required");
            let study = find(&corpus, id)?;
            let (saved, model) = load_checkpoint(m, &cfg)?;
            let ins = inspect(&model, &saved.ablation, &corpus.grammar, study)?;
            let dir = cfg.out_dir.join("inspect").join(id);
            fs::create_dir_all(&dir)?;
            if let Some(csv) = &ins.history_csv {
                fs::write(dir.join("history_heatmap.csv"), csv)?;
            }
            if let Some(csv) = &ins.interpreter_csv {
                fs::write(dir.join("interpreter_heatmap.csv"), csv)?;
            }
            println!("{}\t{}", id, ins.generated.join(" "));
            println!("heat-maps in {}", dir.display());
        }
        _ => unreachable!("clap rejects unknown subcommands"),
    }
    Ok(())
}

fn find<'a>(corpus: &'a Corpus, id: &str) -> triad::Result<&'a Study> {
    corpus
        .train
        .iter()
        .chain(&corpus.val)
        .chain(&corpus.test)
        .find(|s| s.id == id)
        .ok_or_else(|| Error::NotFound(format!("study {id}")))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let matches = cli().get_matches();
    match dispatch(&matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) | Error::Parse { .. } => 2,
                Error::NumericAbort { .. } | Error::Numeric(_) => 3,
                _ => 1,
            })
        }
    }
}
