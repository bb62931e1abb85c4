//! Scores a handful of candidate reports against references with the
//! language and clinical metrics, and prints the result table row.

use triad::corpus::{rule_label_text, GrammarSpec};
use triad::metrics::{clinical_scores, language_scores, scores_csv};

fn main() -> triad::Result<()> {
    let g = GrammarSpec::synth6();
    let pairs = [
        ("there is effusion . no edema .", "there is effusion . no edema ."),
        ("there is effusion .", "there is effusion . possible edema ."),
        ("no effusion . there is edema .", "there is effusion . there is edema ."),
    ];
    let toks = |s: &str| s.split_whitespace().map(String::from).collect::<Vec<_>>();
    let cands: Vec<_> = pairs.iter().map(|p| toks(p.0)).collect();
    let refs: Vec<_> = pairs.iter().map(|p| toks(p.1)).collect();
    let lang = language_scores(&cands, &refs)?;
    println!("{lang:#?}");

    let pred: Vec<_> = pairs.iter().map(|p| rule_label_text(p.0, &g)).collect();
    let truth: Vec<_> = pairs.iter().map(|p| rule_label_text(p.1, &g)).collect();
    let clin = clinical_scores(&pred, &truth, g.positive)?;
    println!("accuracy {:.4}  micro-F1 {:.4}  macro-F1 {:.4}", clin.accuracy, clin.micro_avg.f1, clin.macro_avg.f1);
    println!("topics without any positive: {:?}", clin.excluded_topics);
    print!("{}", scores_csv(&[("demo".into(), lang, clin)]));
    Ok(())
}
