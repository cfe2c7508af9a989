use std::collections::BTreeSet;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::data::{sample_language_pair, LanguagePair, TrainingData};
use super::optimizer::{AmsGrad, AmsGradConfig};
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::generator::{ParamScope, ParamStore, VariantKind};
use crate::inference::{score_ids, DecodeOptions};
use crate::model::TranslationModel;
use crate::tensor::Element;
use crate::text::Vocabulary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSchedule {
    pub batch_size: usize,
    pub max_steps: u64,
    pub validation_interval: u64,
    /// Validations without improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Train on `(ℓ, ℓ)` auto-encoding pairs as well.
    pub autoencode: bool,
    /// Share of each parallel corpus kept as parallel data.
    pub parallel_fraction: f64,
    /// Beam width used for validation decoding.
    pub validation_beam: usize,
    pub optimizer: AmsGradConfig,
}

impl Default for TrainingSchedule {
    fn default() -> Self {
        TrainingSchedule {
            batch_size: 128,
            max_steps: 100_000,
            validation_interval: 500,
            patience: 5,
            seed: 0,
            autoencode: true,
            parallel_fraction: 1.0,
            validation_beam: 1,
            optimizer: AmsGradConfig::default(),
        }
    }
}

impl TrainingSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("training.batch_size must be positive".into()));
        }
        if self.validation_interval == 0 {
            return Err(Error::Config("training.validation_interval must be positive".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("training.patience must be at least 1".into()));
        }
        if !(self.parallel_fraction > 0.0 && self.parallel_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "training.parallel_fraction must lie in (0, 1], got {}",
                self.parallel_fraction
            )));
        }
        if self.validation_beam == 0 {
            return Err(Error::Config("training.validation_beam must be at least 1".into()));
        }
        let o = &self.optimizer;
        if !(o.learning_rate > 0.0)
            || !(0.0..1.0).contains(&o.beta1)
            || !(0.0..1.0).contains(&o.beta2)
            || !(o.epsilon > 0.0)
        {
            return Err(Error::Config("training.optimizer has out-of-range values".into()));
        }
        Ok(())
    }
}

/// Held-out examples of one direction.
#[derive(Debug, Clone, PartialEq)]
pub struct DevSet {
    pub pair: LanguagePair,
    pub examples: Vec<(Vec<usize>, Vec<usize>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub step: u64,
    pub pair: String,
    pub loss: f64,
    pub val_bleu: Option<f64>,
}

pub const METRICS_HEADER: &str = "step\tpair\tloss\tval_bleu";

impl MetricRow {
    pub fn to_tsv(&self) -> String {
        let bleu = self.val_bleu.map(|b| format!("{b:.6}")).unwrap_or_default();
        format!("{}\t{}\t{:.6}\t{}", self.step, self.pair, self.loss, bleu)
    }
}

pub fn write_metrics(rows: &[MetricRow], mut out: impl Write) -> Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    for r in rows {
        writeln!(out, "{}", r.to_tsv())?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T: Element> {
    /// Checkpoint with the best validation BLEU (the last one without dev data).
    pub best: Checkpoint<T>,
    pub best_bleu: Option<f64>,
    pub last: Checkpoint<T>,
    pub metrics: Vec<MetricRow>,
    pub skipped_steps: u64,
}

/// Mean validation BLEU over the dev sets.
pub fn validation_bleu<T: Element>(model: &TranslationModel<T>, dev: &[DevSet], beam: usize) -> Result<f64> {
    let opts = DecodeOptions {
        beam_size: beam,
        ..DecodeOptions::default()
    };
    let mut total = 0.0;
    for d in dev {
        total += score_ids(model, &d.pair.src, &d.pair.tgt, &d.examples, &opts)?.bleu;
    }
    Ok(total / dev.len() as f64)
}

/// Number of scalars in the named tensors.
pub fn trainable_scalar_count<T: Element>(params: &ParamStore<T>, names: &BTreeSet<String>) -> Result<u64> {
    names.iter().map(|n| params.get(n).map(|t| t.len() as u64)).sum()
}

/// Sample pair → sample batch → loss → backward → AMSGrad, with periodic
/// validation and early stopping. Only `trainable` tensors move when given.
pub fn train<T: Element>(
    start: Checkpoint<T>,
    data: &TrainingData,
    dev: &[DevSet],
    schedule: &TrainingSchedule,
    trainable: Option<&BTreeSet<String>>,
    mut on_row: impl FnMut(&MetricRow),
) -> Result<TrainOutcome<T>> {
    schedule.validate()?;
    let Checkpoint {
        mut model,
        optimizer,
        step: start_step,
        notes,
    } = start;
    let mut pairs = data.pairs(schedule.autoencode);
    if model.config().variant == VariantKind::Pairwise {
        // Pairwise models have no parameters for a language to itself.
        pairs.retain(|p| !p.is_autoencode());
    }
    if pairs.is_empty() {
        return Err(Error::contract("no training data"));
    }
    for p in pairs.iter().chain(dev.iter().map(|d| &d.pair)) {
        model.generator().language_index(&p.src)?;
        model.generator().language_index(&p.tgt)?;
    }
    let mut opt = optimizer.unwrap_or_else(|| AmsGrad::new(schedule.optimizer));
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed ^ start_step.rotate_left(32));

    let mut metrics = Vec::new();
    let mut best: Option<(f64, TranslationModel<T>, AmsGrad<T>, u64)> = None;
    let mut stale = 0usize;
    let mut skipped = 0u64;
    let mut step = start_step;
    for _ in 0..schedule.max_steps {
        let pair = sample_language_pair(&pairs, &mut rng)?.clone();
        let batch = data.sample_batch(&pair, schedule.batch_size, &mut rng)?;
        let (loss, grads) = {
            let tape = Tape::new();
            let scope = ParamScope::new(&tape, model.params());
            match model.pair_loss(&scope, &pair.src, &pair.tgt, &batch.sources, &batch.targets) {
                Ok(l) => (tape.scalar(l).as_f64(), Some(tape.backward(l)?)),
                Err(Error::NonFinite(_)) => (f64::NAN, None),
                Err(e) => return Err(e),
            }
        };
        let applied = match (&grads, loss.is_finite()) {
            (Some(g), true) => opt.step(model.params_mut(), g, trainable)?,
            _ => false,
        };
        if !applied {
            skipped += 1;
            log::warn!(
                "step {}: non-finite loss or gradient on {pair}, update skipped",
                step + 1
            );
        }
        step += 1;

        let mut row = MetricRow {
            step,
            pair: pair.to_string(),
            loss,
            val_bleu: None,
        };
        let mut stop = false;
        if !dev.is_empty() && step % schedule.validation_interval == 0 {
            let bleu = validation_bleu(&model, dev, schedule.validation_beam)?;
            row.val_bleu = Some(bleu);
            log::info!("step {step}: validation BLEU {bleu:.4}");
            if best.as_ref().is_none_or(|b| bleu > b.0) {
                best = Some((bleu, model.clone(), opt.clone(), step));
                stale = 0;
            } else {
                stale += 1;
                stop = stale >= schedule.patience;
            }
        }
        on_row(&row);
        metrics.push(row);
        if stop {
            log::info!(
                "step {step}: no improvement in {} validations, stopping",
                schedule.patience
            );
            break;
        }
    }

    let last = Checkpoint {
        model,
        optimizer: Some(opt),
        step,
        notes: notes.clone(),
    };
    let (best, best_bleu) = match best {
        Some((bleu, m, o, s)) => (
            Checkpoint {
                model: m,
                optimizer: Some(o),
                step: s,
                notes,
            },
            Some(bleu),
        ),
        None => (last.clone(), None),
    };
    Ok(TrainOutcome {
        best,
        best_bleu,
        last,
        metrics,
        skipped_steps: skipped,
    })
}

/// Registers `vocab`'s language in a generator-based model and trains only
/// its embedding, word embeddings and output projection on the data that
/// involves it. Everything else stays bit-identical.
pub fn adapt_new_language<T: Element>(
    mut base: Checkpoint<T>,
    vocab: Vocabulary,
    data: &TrainingData,
    dev: &[DevSet],
    schedule: &TrainingSchedule,
    on_row: impl FnMut(&MetricRow),
) -> Result<(TrainOutcome<T>, BTreeSet<String>)> {
    if !base.model.config().variant.is_cpg() {
        return Err(Error::contract(format!(
            "adaptation needs a generator-based model, this one is {}",
            base.model.config().variant
        )));
    }
    let lang = vocab.language().to_string();
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    base.model.add_language(vocab, &mut rng)?;
    let trainable: BTreeSet<String> = base.model.language_tensor_names(&lang)?.into_iter().collect();
    let local = data.involving(&lang);
    let dev: Vec<DevSet> = dev
        .iter()
        .filter(|d| d.pair.src == lang || d.pair.tgt == lang)
        .cloned()
        .collect();
    if schedule.max_steps == 0 {
        let ckpt = base;
        let outcome = TrainOutcome {
            best: ckpt.clone(),
            best_bleu: None,
            last: ckpt,
            metrics: Vec::new(),
            skipped_steps: 0,
        };
        return Ok((outcome, trainable));
    }
    let outcome = train(base, &local, &dev, schedule, Some(&trainable), on_row)?;
    Ok((outcome, trainable))
}
