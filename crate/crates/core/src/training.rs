//! Optimisation of the variational objective: loss assembly, annealing,
//! word dropout, slicing, validation and early stopping.
//!
//! Each dialog is cut into slices of `slice_len` tokens. Every utterance is
//! handled in the slice that holds its `__eou__`; the status states leaving
//! a slice enter the next one as constants, so gradients are truncated at
//! slice boundaries.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::vocab::UNK_ID;
use crate::corpus::{Dialog, Speaker, TokenId, Vocab};
use crate::error::{ensure, Error, Result};
use crate::latent::kl_on;
use crate::numeric::{adam_step, reparameterize, AdamConfig, AdamState, Gradients, ParamStore, Rng, Tape};
use crate::sphred::{decoder_inputs, ContextVars, Model};

/// A token-id dialog with one label per utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub dialog: Dialog<TokenId>,
    pub labels: Vec<usize>,
}

impl Example {
    pub fn new(dialog: Dialog<TokenId>, labels: Vec<usize>) -> Result<Self> {
        ensure!(
            labels.len() == dialog.num_utterances(),
            "{} labels for {} utterances",
            labels.len(),
            dialog.num_utterances()
        );
        Ok(Example { dialog, labels })
    }
}

/// Encodes labeled text dialogs.
pub fn encode_examples(dialogs: &[Dialog<String>], labels: &[Vec<usize>], vocab: &Vocab) -> Result<Vec<Example>> {
    ensure!(
        dialogs.len() == labels.len(),
        "{} label lines for {} dialogs",
        labels.len(),
        dialogs.len()
    );
    dialogs
        .iter()
        .zip(labels)
        .map(|(d, y)| Example::new(vocab.encode_dialog(d), y.clone()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Steps for the KL/classification weight to reach 1; `None` means two
    /// epochs' worth.
    pub anneal_steps: Option<usize>,
    pub word_dropout: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub slice_len: usize,
    pub clip_norm: f64,
    /// Posterior samples per utterance per step.
    pub latent_samples: usize,
    /// Multiplier on the classification term; 1 weights it like the KL.
    pub class_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            learning_rate: 1e-4,
            anneal_steps: None,
            word_dropout: 0.25,
            patience: 5,
            max_epochs: 30,
            seed: 0,
            slice_len: 80,
            clip_norm: 5.0,
            latent_samples: 1,
            class_weight: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.batch_size >= 1, "batch_size must be at least 1");
        ensure!(
            self.learning_rate > 0.0 && self.learning_rate.is_finite(),
            "learning_rate must be positive"
        );
        ensure!(
            self.anneal_steps.is_none_or(|n| n >= 1),
            "anneal_steps must be at least 1"
        );
        ensure!(
            (0.0..1.0).contains(&self.word_dropout),
            "word_dropout must lie in [0, 1)"
        );
        ensure!(self.patience >= 1, "patience must be at least 1");
        ensure!(self.slice_len >= 1, "slice_len must be at least 1");
        ensure!(self.clip_norm > 0.0, "clip_norm must be positive");
        ensure!(self.latent_samples >= 1, "latent_samples must be at least 1");
        ensure!(
            self.class_weight >= 0.0 && self.class_weight.is_finite(),
            "class_weight must be non-negative"
        );
        Ok(())
    }

    pub fn steps_per_epoch(&self, n_train: usize) -> usize {
        n_train.div_ceil(self.batch_size).max(1)
    }

    pub fn resolved_anneal_steps(&self, n_train: usize) -> usize {
        self.anneal_steps
            .unwrap_or_else(|| 2 * self.steps_per_epoch(n_train))
    }
}

/// `min(1, step / n)`.
pub fn anneal_weight(step: usize, anneal_steps: usize) -> f64 {
    assert!(anneal_steps >= 1, "anneal_steps must be at least 1");
    (step as f64 / anneal_steps as f64).min(1.0)
}

/// Replaces each token by `<unk>` with probability `rate`.
pub fn word_dropout(tokens: &[TokenId], rate: f64, rng: &mut Rng) -> Vec<TokenId> {
    tokens
        .iter()
        .map(|&t| if rate > 0.0 && rng.bernoulli(rate) { UNK_ID } else { t })
        .collect()
}

/// Per-utterance means of the loss terms over a batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub nll: f64,
    pub kl: f64,
    pub class: f64,
    pub weight: f64,
    pub class_weight: f64,
    /// `nll + weight · (kl + class_weight · class)`.
    pub total: f64,
    pub utterances: usize,
    pub tokens: usize,
}

impl LossBreakdown {
    pub fn nll_per_token(&self) -> f64 {
        self.nll * self.utterances as f64 / self.tokens as f64
    }
}

/// Where in training a loss is computed; used in divergence diagnostics and
/// to key the random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Progress {
    pub epoch: usize,
    pub step: usize,
}

/// Settings for one loss evaluation.
#[derive(Debug, Clone, Copy)]
pub struct LossSettings {
    pub weight: f64,
    pub class_weight: f64,
    pub word_dropout: f64,
    pub slice_len: usize,
    pub latent_samples: usize,
}

#[derive(Default)]
struct Sums {
    nll: f64,
    kl: f64,
    class: f64,
    tokens: usize,
    utterances: usize,
}

struct Item {
    turn: usize,
    index: usize,
    closes_turn: bool,
    slice: usize,
}

fn schedule(d: &Dialog<TokenId>, slice_len: usize) -> Vec<Item> {
    let mut items = Vec::with_capacity(d.num_utterances());
    let mut pos = 0;
    for (k, turn) in d.turns.iter().enumerate() {
        let n = turn.utterances.len();
        for (j, u) in turn.utterances.iter().enumerate() {
            pos += u.len();
            items.push(Item {
                turn: k,
                index: j,
                closes_turn: j + 1 == n,
                slice: (pos - 1) / slice_len,
            });
        }
    }
    items
}

/// Accumulates one dialog's loss terms; when `grads` is given, also adds
/// `scale ·` the gradient of its total.
fn run_example(
    model: &Model,
    store: &ParamStore,
    ex: &Example,
    set: &LossSettings,
    scale: f64,
    rng: &mut Rng,
    sums: &mut Sums,
    mut grads: Option<&mut Gradients>,
) -> Result<()> {
    let items = schedule(&ex.dialog, set.slice_len);
    let z_dim = model.config.latent_dim;
    let mut ctx_value = model.fresh_context();
    let mut u = 0;
    let mut start = 0;
    while start < items.len() {
        let slice = items[start].slice;
        let end = start + items[start..].iter().take_while(|i| i.slice == slice).count();
        let mut tape = Tape::new(store);
        let mut ctx = ContextVars::constant(&mut tape, &ctx_value);
        let mut terms = Vec::with_capacity(end - start);
        for item in &items[start..end] {
            let utt = &ex.dialog.turns[item.turn].utterances[item.index];
            let label = ex.labels[u];
            let speaker = Speaker::of_turn(item.turn);
            let context = model.conditioning_context(&mut tape, ctx, speaker);
            let y = model.label_embed(&mut tape, label);
            let h0 = model.zeros(&mut tape, model.config.encoder_dim);
            let enc = model.encode(&mut tape, utt, h0)?;
            let q = model.posterior_on(&mut tape, context, y, enc);
            let p = model.prior_on(&mut tape, context, y);
            let kl = kl_on(&mut tape, q, p);

            let gold_inputs = decoder_inputs(utt);
            let mut nlls = Vec::with_capacity(set.latent_samples);
            for _ in 0..set.latent_samples {
                let eps = rng.normals(z_dim);
                let z = reparameterize(&mut tape, q.mu, q.sigma, &eps);
                let cond = model.cond_bundle(&mut tape, context, z, y);
                let mut inputs = gold_inputs.clone();
                inputs[1..].copy_from_slice(&word_dropout(&gold_inputs[1..], set.word_dropout, rng));
                nlls.push(model.utterance_nll(&mut tape, cond, &inputs, utt));
            }
            let nll_sum = tape.add_all(&nlls);
            let nll = tape.scale(nll_sum, 1.0 / set.latent_samples as f64);

            let regular = match model.classifier_on(&mut tape, context) {
                Some(logits) => {
                    let ce = tape.softmax_xent(logits, label);
                    sums.class += tape.scalar(ce);
                    let ce = tape.scale(ce, set.class_weight);
                    tape.add(kl, ce)
                }
                None => kl,
            };
            sums.nll += tape.scalar(nll);
            sums.kl += tape.scalar(kl);
            sums.tokens += utt.len();
            sums.utterances += 1;
            let weighted = tape.scale(regular, set.weight);
            terms.push(tape.add(nll, weighted));

            if item.closes_turn {
                ctx = model.advance(&mut tape, ctx, enc, speaker);
            }
            u += 1;
        }
        if let Some(g) = grads.as_deref_mut() {
            let total = tape.add_all(&terms);
            let loss = tape.scale(total, scale);
            tape.backward_into(loss, g)?;
        }
        ctx_value = ctx.value(&tape);
        start = end;
    }
    Ok(())
}

fn finish(sums: Sums, set: &LossSettings, at: Progress) -> Result<LossBreakdown> {
    let n = sums.utterances as f64;
    let (nll, kl, class) = (sums.nll / n, sums.kl / n, sums.class / n);
    for (component, v) in [
        ("reconstruction loss", nll),
        ("KL divergence", kl),
        ("classification loss", class),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                component,
                epoch: at.epoch,
                step: at.step,
            });
        }
    }
    let weight = set.weight;
    Ok(LossBreakdown {
        nll,
        kl,
        class,
        weight,
        class_weight: set.class_weight,
        total: nll + weight * (kl + set.class_weight * class),
        utterances: sums.utterances,
        tokens: sums.tokens,
    })
}

/// Random stream for one example at one step.
pub fn example_rng(seed: u64, step: usize, example: usize) -> Rng {
    Rng::derived(seed, &[step as u64, example as u64])
}

/// Loss of a batch and, with `grads`, the gradient of its total.
/// `ids[i]` keys the random stream of `batch[i]`.
pub fn batch_loss(
    model: &Model,
    store: &ParamStore,
    batch: &[&Example],
    ids: &[usize],
    set: &LossSettings,
    seed: u64,
    at: Progress,
    mut grads: Option<&mut Gradients>,
) -> Result<LossBreakdown> {
    ensure!(!batch.is_empty(), "batch is empty");
    ensure!(ids.len() == batch.len(), "one id per example required");
    let n_utt: usize = batch.iter().map(|e| e.dialog.num_utterances()).sum();
    ensure!(n_utt >= 1, "batch has no utterances");
    for ex in batch {
        ensure!(
            ex.labels.iter().all(|&y| y < model.config.num_labels()),
            "label out of range for the {:?} scenario",
            model.config.scenario
        );
    }
    let scale = 1.0 / n_utt as f64;
    let mut sums = Sums::default();
    for (ex, &id) in batch.iter().zip(ids) {
        let mut rng = example_rng(seed, at.step, id);
        run_example(model, store, ex, set, scale, &mut rng, &mut sums, grads.as_deref_mut())?;
    }
    finish(sums, set, at)
}

/// Training loss and parameter gradient for one batch at `at.step`.
pub fn step_loss(
    model: &Model,
    store: &ParamStore,
    batch: &[&Example],
    ids: &[usize],
    config: &TrainConfig,
    anneal_steps: usize,
    at: Progress,
) -> Result<(LossBreakdown, Gradients)> {
    let set = LossSettings {
        weight: anneal_weight(at.step, anneal_steps),
        class_weight: config.class_weight,
        word_dropout: config.word_dropout,
        slice_len: config.slice_len,
        latent_samples: config.latent_samples,
    };
    let mut grads = Gradients::zeros_like(store);
    let loss = batch_loss(model, store, batch, ids, &set, config.seed, at, Some(&mut grads))?;
    Ok((loss, grads))
}

const EVAL_STREAM: usize = usize::MAX;

/// Loss over a dataset at weight 1, without dropout, with eps drawn from
/// fixed streams so repeated evaluations are comparable.
pub fn evaluate_loss(model: &Model, store: &ParamStore, data: &[Example], config: &TrainConfig) -> Result<LossBreakdown> {
    evaluate_at(model, store, data, config, 1.0)
}

fn evaluate_at(model: &Model, store: &ParamStore, data: &[Example], config: &TrainConfig, weight: f64) -> Result<LossBreakdown> {
    let set = LossSettings {
        weight,
        class_weight: config.class_weight,
        word_dropout: 0.0,
        slice_len: config.slice_len,
        latent_samples: 1,
    };
    let refs: Vec<&Example> = data.iter().collect();
    let ids: Vec<usize> = (0..data.len()).collect();
    let at = Progress {
        epoch: 0,
        step: EVAL_STREAM,
    };
    batch_loss(model, store, &refs, &ids, &set, config.seed, at, None)
}

/// Splits off the last `fraction` of examples (at least one) for validation.
pub fn split_validation<T: Clone>(data: &[T], fraction: f64) -> Result<(Vec<T>, Vec<T>)> {
    ensure!(data.len() >= 2, "need at least two dialogs to split");
    ensure!(
        fraction > 0.0 && fraction < 1.0,
        "validation fraction must lie in (0, 1)"
    );
    let n_val = ((data.len() as f64 * fraction).round() as usize).clamp(1, data.len() - 1);
    let cut = data.len() - n_val;
    Ok((data[..cut].to_vec(), data[cut..].to_vec()))
}

/// One metrics-log row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_nll_per_token: f64,
    pub train_kl: f64,
    pub train_class: f64,
    pub anneal_weight: f64,
    pub val_total: f64,
    pub val_nll: f64,
}

impl EpochMetrics {
    /// Tab-separated log line.
    pub fn log_line(&self) -> String {
        format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            self.epoch,
            self.train_nll_per_token,
            self.train_kl,
            self.train_class,
            self.anneal_weight,
            self.val_total
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the best validation epoch.
    pub params: ParamStore,
    pub best_epoch: usize,
    pub best_val_total: f64,
    /// Row 0 is the untrained model.
    pub metrics: Vec<EpochMetrics>,
    /// Anneal weight used at each optimiser step.
    pub anneal_log: Vec<f64>,
    pub steps: usize,
}

/// Trains with Adam and early stopping on validation total loss.
/// Metrics rows are appended to `log_path` as they are produced.
pub fn train(
    model: &Model,
    mut params: ParamStore,
    train_set: &[Example],
    val_set: &[Example],
    config: &TrainConfig,
    log_path: Option<&Path>,
) -> Result<TrainOutcome> {
    config.validate()?;
    ensure!(!train_set.is_empty(), "training set is empty");
    ensure!(!val_set.is_empty(), "validation set is empty");
    let mut log = match log_path {
        Some(p) => Some(File::create(p).map_err(|e| Error::io(p, e))?),
        None => None,
    };
    let mut emit = |row: &EpochMetrics| -> Result<()> {
        if let (Some(f), Some(p)) = (log.as_mut(), log_path) {
            writeln!(f, "{}", row.log_line())
                .and_then(|_| f.flush())
                .map_err(|e| Error::io(p, e))?;
        }
        Ok(())
    };

    let anneal_steps = config.resolved_anneal_steps(train_set.len());
    let adam_cfg = AdamConfig {
        lr: config.learning_rate,
        ..AdamConfig::default()
    };
    let mut adam = AdamState::new(&params);

    let start_train = evaluate_at(model, &params, train_set, config, 0.0)?;
    let start_val = evaluate_loss(model, &params, val_set, config)?;
    let row0 = EpochMetrics {
        epoch: 0,
        train_nll_per_token: start_train.nll_per_token(),
        train_kl: start_train.kl,
        train_class: start_train.class,
        anneal_weight: 0.0,
        val_total: start_val.total,
        val_nll: start_val.nll,
    };
    emit(&row0)?;
    let mut metrics = vec![row0];
    let mut best = (0, start_val.total, params.clone());
    let mut stale = 0;
    let mut step = 0;
    let mut anneal_log = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=config.max_epochs {
        Rng::derived(config.seed, &[epoch as u64]).shuffle(&mut order);
        let (mut nll, mut kl, mut class, mut tokens, mut utts) = (0.0, 0.0, 0.0, 0usize, 0usize);
        let mut weight = 0.0;
        for ids in order.chunks(config.batch_size) {
            let batch: Vec<&Example> = ids.iter().map(|&i| &train_set[i]).collect();
            let at = Progress { epoch, step };
            let (loss, mut grads) = step_loss(model, &params, &batch, ids, config, anneal_steps, at)?;
            if !grads.is_finite() {
                return Err(Error::NonFinite {
                    component: "gradient",
                    epoch,
                    step,
                });
            }
            grads.clip_global_norm(config.clip_norm);
            adam_step(&mut params, &grads, &mut adam, &adam_cfg)?;
            let n = loss.utterances as f64;
            nll += loss.nll * n;
            kl += loss.kl * n;
            class += loss.class * n;
            tokens += loss.tokens;
            utts += loss.utterances;
            weight = loss.weight;
            anneal_log.push(loss.weight);
            step += 1;
        }
        let val = evaluate_loss(model, &params, val_set, config)?;
        if !val.total.is_finite() {
            return Err(Error::NonFinite {
                component: "validation loss",
                epoch,
                step,
            });
        }
        let row = EpochMetrics {
            epoch,
            train_nll_per_token: nll / tokens as f64,
            train_kl: kl / utts as f64,
            train_class: class / utts as f64,
            anneal_weight: weight,
            val_total: val.total,
            val_nll: val.nll,
        };
        emit(&row)?;
        metrics.push(row);
        if val.total < best.1 {
            best = (epoch, val.total, params.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        params: best.2,
        best_epoch: best.0,
        best_val_total: best.1,
        metrics,
        anneal_log,
        steps: step,
    })
}
