//! Two-phase training: joint training of all modules, then generator
//! fine-tuning through a frozen interpreter.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::config::{Ablation, LossWeights, ModelConfig, RunConfig};
use crate::corpus::{Corpus, GrammarSpec, Study};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::interpreter::is_interpreter_param;
use crate::model::{Model, PassMode};
use crate::optim::{Adam, Gradients};
use crate::tensor::Tape;

/// Mean losses of one batch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BatchLoss {
    pub l_c: f64,
    pub l_g: f64,
    pub l_i: Option<f64>,
    pub total: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Joint,
    FineTune,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Joint => "joint",
            Stage::FineTune => "finetune",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub stage: Stage,
    pub epoch: usize,
    pub step: usize,
    pub l_c: f64,
    pub l_g: f64,
    pub l_i: Option<f64>,
}

/// Sets the checklist and vocabulary sizes from the grammar.
pub fn fit_to_grammar(cfg: &mut ModelConfig, grammar: &GrammarSpec) {
    cfg.n = grammar.n();
    cfg.k = grammar.k();
    cfg.v = grammar.vocab().len();
}

/// Whether the interpreter contributes a loss under these settings.
pub fn interpreter_active(ablation: &Ablation, weights: &LossWeights) -> bool {
    ablation.use_interpreter && weights.interpreter != 0.0
}

pub struct Trainer {
    pub model: Model<f32>,
    pub ablation: Ablation,
    pub weights: LossWeights,
    optimizer: Adam,
    interpreter_frozen: bool,
    step: usize,
}

impl Trainer {
    pub fn new(model: Model<f32>, run: &RunConfig) -> Self {
        Trainer {
            model,
            ablation: run.ablation,
            weights: run.loss,
            optimizer: Adam::new(run.optim.clone()),
            interpreter_frozen: false,
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn freeze_interpreter(&mut self) {
        self.interpreter_frozen = true;
    }

    pub fn interpreter_frozen(&self) -> bool {
        self.interpreter_frozen
    }

    /// Gradients of the batch-mean loss; one tape per study.
    pub fn gradients(&self, batch: &[&Study], mode: PassMode) -> Result<(Gradients, BatchLoss)> {
        if batch.is_empty() {
            return Err(Error::Precondition("empty batch".into()));
        }
        let frozen = self.interpreter_frozen;
        let trainable = |name: &str| !(frozen && is_interpreter_param(name));
        let scale = 1.0 / batch.len() as f64;
        let mut grads = Gradients::new();
        let mut loss = BatchLoss::default();
        for study in batch {
            let mut tape = Tape::new();
            let p = self.model.params.bind(&mut tape, trainable);
            let f = self
                .model
                .forward(&mut tape, &p, &self.ablation, &self.weights, mode, study)?;
            let total = tape.value(f.total).item() as f64;
            if !total.is_finite() {
                return Err(Error::Numeric(format!("loss {total} on study {}", study.id)));
            }
            loss.l_c += tape.value(f.l_c).item() as f64 * scale;
            loss.l_g += tape.value(f.l_g).item() as f64 * scale;
            if let Some(l) = f.l_i {
                *loss.l_i.get_or_insert(0.0) += tape.value(l).item() as f64 * scale;
            }
            loss.total += total * scale;
            tape.backward(f.total)?;
            for (name, &v) in p.iter() {
                if let Some(g) = tape.grad(v) {
                    grads.accumulate(name, g, scale);
                }
            }
        }
        Ok((grads, loss))
    }

    fn apply(&mut self, grads: &Gradients) -> Result<()> {
        self.optimizer.step(&mut self.model.params, grads)?;
        self.step += 1;
        Ok(())
    }

    /// Joint update: ground-truth states, interpreter on reference words.
    pub fn joint_step(&mut self, batch: &[&Study]) -> Result<BatchLoss> {
        let (g, l) = self.gradients(batch, PassMode::JOINT)?;
        self.apply(&g)?;
        Ok(l)
    }

    /// Fine-tune update: predicted states, interpreter reading `p_word · W`.
    /// The interpreter must be frozen first.
    pub fn fine_tune_step(&mut self, batch: &[&Study]) -> Result<BatchLoss> {
        if !self.interpreter_frozen {
            return Err(Error::Contract("fine-tuning needs a frozen interpreter".into()));
        }
        let (g, l) = self.gradients(batch, PassMode::FINETUNE)?;
        if g.buffers.keys().any(|n| is_interpreter_param(n)) {
            return Err(Error::Contract("frozen interpreter received gradients".into()));
        }
        self.apply(&g)?;
        Ok(l)
    }
}

/// Result of [`train`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Best model by validation BLEU-4, or the last one without a validation
    /// split.
    pub best: Model<f32>,
    pub best_bleu4: Option<f64>,
    /// Parameters at the last finite step.
    pub last: Model<f32>,
    pub log: Vec<EpochLog>,
    pub steps: usize,
    /// Step at which a non-finite loss stopped training.
    pub aborted_at: Option<usize>,
}

impl TrainOutcome {
    pub fn loss_csv(&self, with_interpreter: bool) -> String {
        let mut s = String::from(if with_interpreter {
            "stage,epoch,step,l_c,l_g,l_i\n"
        } else {
            "stage,epoch,step,l_c,l_g\n"
        });
        for e in &self.log {
            let _ = write!(s, "{},{},{},{:.6},{:.6}", e.stage.as_str(), e.epoch, e.step, e.l_c, e.l_g);
            if with_interpreter {
                let _ = write!(s, ",{:.6}", e.l_i.unwrap_or(0.0));
            }
            s.push('\n');
        }
        s
    }
}

/// Hooks for progress reporting.
pub trait Observer {
    fn epoch(&mut self, _log: &EpochLog) {}
    fn validation(&mut self, _step: usize, _bleu4: f64) {}
}

impl Observer for () {}

/// Runs both phases on `corpus.train`, selecting by BLEU-4 on `corpus.val`.
pub fn train(run: &RunConfig, corpus: &Corpus, observer: &mut dyn Observer) -> Result<TrainOutcome> {
    let mut cfg = run.model.clone();
    fit_to_grammar(&mut cfg, &corpus.grammar);
    let model = Model::<f32>::init(cfg, run.seed)?;
    train_model(run, model, &corpus.grammar, &corpus.train, &corpus.val, observer)
}

pub fn train_model(
    run: &RunConfig,
    model: Model<f32>,
    grammar: &GrammarSpec,
    train_set: &[Study],
    val_set: &[Study],
    observer: &mut dyn Observer,
) -> Result<TrainOutcome> {
    if train_set.is_empty() {
        return Err(Error::Precondition("empty training split".into()));
    }
    let mut trainer = Trainer::new(model, run);
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(run.seed ^ 0x05EE_D0FB_A7C4);
    let batch = run.optim.batch_size.min(train_set.len());
    let mut log = Vec::new();
    let mut best: Option<(f64, Model<f32>)> = None;
    let mut last_good = trainer.model.clone();
    let mut aborted_at = None;
    let eval_every = run.optim.eval_every;

    let validate = |trainer: &Trainer, best: &mut Option<(f64, Model<f32>)>, obs: &mut dyn Observer| -> Result<()> {
        if val_set.is_empty() {
            return Ok(());
        }
        let r = evaluate(&trainer.model, &trainer.ablation, grammar, val_set)?;
        obs.validation(trainer.steps_taken(), r.language.bleu4);
        if best.as_ref().is_none_or(|(b, _)| r.language.bleu4 > *b) {
            *best = Some((r.language.bleu4, trainer.model.clone()));
        }
        Ok(())
    };

    let stages = [
        (Stage::Joint, run.optim.steps),
        (Stage::FineTune, run.optim.finetune_steps),
    ];
    'stages: for (stage, steps) in stages {
        if steps == 0 {
            continue;
        }
        if stage == Stage::FineTune {
            trainer.freeze_interpreter();
            // The objective changes here; fresh gradient directions meet
            // near-zero second moments, so ramp up again.
            trainer.optimizer.restart_warmup();
        }
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        let mut done = 0;
        let mut epoch = 0;
        while done < steps {
            order.shuffle(&mut rng);
            let (mut sum_c, mut sum_g, mut sum_i, mut count) = (0.0, 0.0, None::<f64>, 0usize);
            for chunk in order.chunks(batch) {
                if done >= steps {
                    break;
                }
                let studies: Vec<&Study> = chunk.iter().map(|&i| &train_set[i]).collect();
                let result = match stage {
                    Stage::Joint => trainer.joint_step(&studies),
                    Stage::FineTune => trainer.fine_tune_step(&studies),
                };
                let loss = match result {
                    Ok(l) => l,
                    Err(Error::Numeric(msg)) => {
                        log::error!("numeric failure at step {}: {msg}", trainer.steps_taken());
                        aborted_at = Some(trainer.steps_taken());
                        break 'stages;
                    }
                    Err(e) => return Err(e),
                };
                if !trainer.model.params.iter().all(|(_, t)| t.is_finite()) {
                    aborted_at = Some(trainer.steps_taken());
                    trainer.model = last_good.clone();
                    break 'stages;
                }
                last_good = trainer.model.clone();
                sum_c += loss.l_c;
                sum_g += loss.l_g;
                if let Some(l) = loss.l_i {
                    *sum_i.get_or_insert(0.0) += l;
                }
                count += 1;
                done += 1;
                if eval_every > 0 && trainer.steps_taken().is_multiple_of(eval_every) {
                    validate(&trainer, &mut best, observer)?;
                }
            }
            if count > 0 {
                let k = count as f64;
                let entry = EpochLog {
                    stage,
                    epoch,
                    step: trainer.steps_taken(),
                    l_c: sum_c / k,
                    l_g: sum_g / k,
                    l_i: sum_i.map(|x| x / k),
                };
                observer.epoch(&entry);
                log.push(entry);
            }
            epoch += 1;
        }
        if eval_every == 0 {
            validate(&trainer, &mut best, observer)?;
        }
    }
    if aborted_at.is_none() && eval_every > 0 && !trainer.steps_taken().is_multiple_of(eval_every) {
        validate(&trainer, &mut best, observer)?;
    }

    let steps = trainer.steps_taken();
    let last = trainer.model;
    let (best_bleu4, best) = match best {
        Some((b, m)) => (Some(b), m),
        None => (None, last.clone()),
    };
    Ok(TrainOutcome {
        best,
        best_bleu4,
        last,
        log,
        steps,
        aborted_at,
    })
}
