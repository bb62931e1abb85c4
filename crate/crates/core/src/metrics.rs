//! Corpus language metrics (BLEU-1..4, ROUGE-L, METEOR-lite) and checklist
//! clinical scores.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::classifier::Checklist;
use crate::error::{Error, Result};

pub const ROUGE_BETA: f64 = 1.2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LanguageScores {
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    /// Exact-match METEOR ("METEOR-lite").
    pub meteor: f64,
    pub rouge_l: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Averaged {
    pub auc: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClinicalScores {
    pub accuracy: f64,
    pub macro_avg: Averaged,
    pub micro_avg: Averaged,
    /// Topics left out of the macro average because neither side ever marks
    /// them positive.
    pub excluded_topics: Vec<usize>,
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Corpus BLEU for orders `1..=max_n`; entry `i` is BLEU-(i+1).
///
/// Clipped n-gram precisions are pooled over the corpus, combined by a
/// uniform geometric mean (zero if any order has no match) and scaled by the
/// brevity penalty `exp(1 - r/c)` when `c < r`.
pub fn bleu<T: Eq + Hash>(candidates: &[Vec<T>], references: &[Vec<T>], max_n: usize) -> Result<Vec<f64>> {
    if candidates.is_empty() {
        return Err(Error::Contract("BLEU of an empty corpus".into()));
    }
    if candidates.len() != references.len() {
        return Err(Error::Contract(format!(
            "{} candidates vs {} references",
            candidates.len(),
            references.len()
        )));
    }
    let mut matched = vec![0usize; max_n];
    let mut total = vec![0usize; max_n];
    let (mut c, mut r) = (0usize, 0usize);
    for (cand, refr) in candidates.iter().zip(references) {
        c += cand.len();
        r += refr.len();
        for n in 1..=max_n {
            let rc = ngram_counts(refr, n);
            for (gram, count) in ngram_counts(cand, n) {
                matched[n - 1] += count.min(rc.get(gram).copied().unwrap_or(0));
                total[n - 1] += count;
            }
        }
    }
    let bp = if c == 0 {
        0.0
    } else if c < r {
        (1.0 - r as f64 / c as f64).exp()
    } else {
        1.0
    };
    let mut out = Vec::with_capacity(max_n);
    let mut log_sum = 0.0;
    let mut zero = false;
    for n in 0..max_n {
        if matched[n] == 0 {
            zero = true;
        } else {
            log_sum += (matched[n] as f64 / total[n] as f64).ln();
        }
        out.push(if zero { 0.0 } else { bp * (log_sum / (n + 1) as f64).exp() });
    }
    Ok(out)
}

/// Sentence BLEU with add-one smoothing on every order; for debugging output.
pub fn sentence_bleu_smoothed<T: Eq + Hash>(candidate: &[T], reference: &[T], max_n: usize) -> f64 {
    if candidate.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let rc = ngram_counts(reference, n);
        let cc = ngram_counts(candidate, n);
        let m: usize = cc.iter().map(|(g, &k)| k.min(rc.get(g).copied().unwrap_or(0))).sum();
        let t: usize = cc.values().sum();
        log_sum += ((m + 1) as f64 / (t + 1) as f64).ln();
    }
    let (c, r) = (candidate.len() as f64, reference.len() as f64);
    let bp = if c < r { (1.0 - r / c).exp() } else { 1.0 };
    bp * (log_sum / max_n as f64).exp()
}

fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS F-measure `(1+β²)PR / (R + β²P)`.
pub fn rouge_l<T: Eq>(candidate: &[T], reference: &[T], beta: f64) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::Contract("ROUGE-L against an empty reference".into()));
    }
    let lcs = lcs_len(candidate, reference);
    if lcs == 0 {
        return Ok(0.0);
    }
    let p = lcs as f64 / candidate.len() as f64;
    let r = lcs as f64 / reference.len() as f64;
    let b2 = beta * beta;
    Ok((1.0 + b2) * p * r / (r + b2 * p))
}

/// Exact-match METEOR: greedy left-to-right unigram alignment,
/// `F = 10PR/(R+9P)`, fragmentation penalty `0.5·(chunks/matches)³`.
pub fn meteor_lite<T: Eq>(candidate: &[T], reference: &[T]) -> f64 {
    let mut used = vec![false; reference.len()];
    let mut alignment: Vec<(usize, usize)> = Vec::new();
    for (i, w) in candidate.iter().enumerate() {
        if let Some(j) = (0..reference.len()).find(|&j| !used[j] && reference[j] == *w) {
            used[j] = true;
            alignment.push((i, j));
        }
    }
    let m = alignment.len();
    if m == 0 {
        return 0.0;
    }
    let mut chunks = 1;
    for pair in alignment.windows(2) {
        let ((i0, j0), (i1, j1)) = (pair[0], pair[1]);
        if !(i1 == i0 + 1 && j1 == j0 + 1) {
            chunks += 1;
        }
    }
    let p = m as f64 / candidate.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let f = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (chunks as f64 / m as f64).powi(3);
    f * (1.0 - penalty)
}

pub fn language_scores<T: Eq + Hash>(candidates: &[Vec<T>], references: &[Vec<T>]) -> Result<LanguageScores> {
    let b = bleu(candidates, references, 4)?;
    let n = candidates.len() as f64;
    let mut rouge = 0.0;
    let mut meteor = 0.0;
    for (c, r) in candidates.iter().zip(references) {
        rouge += rouge_l(c, r, ROUGE_BETA)?;
        meteor += meteor_lite(c, r);
    }
    Ok(LanguageScores {
        bleu1: b[0],
        bleu2: b[1],
        bleu3: b[2],
        bleu4: b[3],
        meteor: meteor / n,
        rouge_l: rouge / n,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    fn ratio(a: usize, b: usize) -> f64 {
        if b == 0 {
            0.0
        } else {
            a as f64 / b as f64
        }
    }

    pub fn precision(&self) -> f64 {
        Self::ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        Self::ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        Self::ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }
}

/// Mann–Whitney AUC; ties count one half. `None` unless both classes occur.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    // Midranks over tie groups.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * idx[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Positive-versus-rest scores per topic. `positive` is the positive state.
pub fn clinical_scores(pred: &[Checklist], truth: &[Checklist], positive: usize) -> Result<ClinicalScores> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::Contract(format!(
            "clinical scores need aligned non-empty lists ({} vs {})",
            pred.len(),
            truth.len()
        )));
    }
    let n = truth[0].n();
    if pred.iter().chain(truth).any(|c| c.n() != n) {
        return Err(Error::Contract("checklists disagree on topic count".into()));
    }
    let mut per_topic = vec![Confusion::default(); n];
    let mut scores = vec![Vec::with_capacity(pred.len()); n];
    let mut labels = vec![Vec::with_capacity(pred.len()); n];
    let mut exact = 0usize;
    for (p, t) in pred.iter().zip(truth) {
        let (ps, ts) = (p.argmax(), t.argmax());
        for j in 0..n {
            exact += usize::from(ps[j] == ts[j]);
            let (yp, yt) = (ps[j] == positive, ts[j] == positive);
            let c = &mut per_topic[j];
            match (yp, yt) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
            scores[j].push(p.row(j)[positive]);
            labels[j].push(yt);
        }
    }

    let mut excluded = Vec::new();
    let mut macro_sum = Averaged::default();
    let mut kept = 0usize;
    let mut auc_sum = 0.0;
    let mut auc_kept = 0usize;
    for (j, c) in per_topic.iter().enumerate() {
        if c.tp + c.fp + c.fn_ == 0 {
            log::warn!("topic {j} never positive in predictions or truth; left out of macro scores");
            excluded.push(j);
            continue;
        }
        kept += 1;
        macro_sum.f1 += c.f1();
        macro_sum.precision += c.precision();
        macro_sum.recall += c.recall();
        if let Some(a) = auc(&scores[j], &labels[j]) {
            auc_sum += a;
            auc_kept += 1;
        }
    }
    let div = |x: f64, k: usize| if k == 0 { 0.0 } else { x / k as f64 };
    let macro_avg = Averaged {
        auc: div(auc_sum, auc_kept),
        f1: div(macro_sum.f1, kept),
        precision: div(macro_sum.precision, kept),
        recall: div(macro_sum.recall, kept),
    };

    let pooled = per_topic.iter().fold(Confusion::default(), |a, c| Confusion {
        tp: a.tp + c.tp,
        fp: a.fp + c.fp,
        fn_: a.fn_ + c.fn_,
        tn: a.tn + c.tn,
    });
    let all_scores: Vec<f64> = scores.concat();
    let all_labels: Vec<bool> = labels.concat();
    let micro_avg = Averaged {
        auc: auc(&all_scores, &all_labels).unwrap_or(0.0),
        f1: pooled.f1(),
        precision: pooled.precision(),
        recall: pooled.recall(),
    };
    Ok(ClinicalScores {
        accuracy: exact as f64 / (pred.len() * n) as f64,
        macro_avg,
        micro_avg,
        excluded_topics: excluded,
    })
}

/// Fixed report columns, named as in the result tables.
pub const CSV_COLUMNS: [&str; 15] = [
    "B-1", "B-2", "B-3", "B-4", "MTR", "RG-L", "Acc.", "Macro AUC", "Macro F-1", "Macro Prec.", "Macro Rec.",
    "Micro AUC", "Micro F-1", "Micro Prec.", "Micro Rec.",
];

/// Flat JSON object (`bleu1`, ..., `micro_recall`).
pub fn scores_json(lang: &LanguageScores, clin: &ClinicalScores) -> serde_json::Value {
    serde_json::json!({
        "bleu1": lang.bleu1,
        "bleu2": lang.bleu2,
        "bleu3": lang.bleu3,
        "bleu4": lang.bleu4,
        "meteor_lite": lang.meteor,
        "rouge_l": lang.rouge_l,
        "accuracy": clin.accuracy,
        "macro_auc": clin.macro_avg.auc,
        "macro_f1": clin.macro_avg.f1,
        "macro_precision": clin.macro_avg.precision,
        "macro_recall": clin.macro_avg.recall,
        "micro_auc": clin.micro_avg.auc,
        "micro_f1": clin.micro_avg.f1,
        "micro_precision": clin.micro_avg.precision,
        "micro_recall": clin.micro_avg.recall,
    })
}

/// Header line plus one row per `(label, scores)`.
pub fn scores_csv(rows: &[(String, LanguageScores, ClinicalScores)]) -> String {
    let mut s = format!("run,{}\n", CSV_COLUMNS.join(","));
    for (label, l, c) in rows {
        let vals = [
            l.bleu1,
            l.bleu2,
            l.bleu3,
            l.bleu4,
            l.meteor,
            l.rouge_l,
            c.accuracy,
            c.macro_avg.auc,
            c.macro_avg.f1,
            c.macro_avg.precision,
            c.macro_avg.recall,
            c.micro_avg.auc,
            c.micro_avg.f1,
            c.micro_avg.precision,
            c.micro_avg.recall,
        ];
        let cells: Vec<String> = vals.iter().map(|v| format!("{v:.6}")).collect();
        s.push_str(&format!("{label},{}\n", cells.join(",")));
    }
    s
}
