//! Response generation: label resolution, latent draw from the prior, and
//! beam search.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::corpus::vocab::{BOS_ID, EOT_ID, EOU_ID, PAD_ID, UNK_ID};
use crate::corpus::{Dialog, Speaker, TokenId};
use crate::error::{ensure, Error, Result};
use crate::latent::{predicted_label, LabelDistribution};
use crate::numeric::{log_softmax, sample_gaussian, GateInputs, ParamStore, Rng, Tape, Tensor};
use crate::sphred::{ContextState, ContextVars, DecoderState, Model, Scenario};

/// A next-token model driven by beam search.
pub trait StepModel {
    type State: Clone;

    fn vocab_size(&self) -> usize;

    /// Consumes `token` from `state`; returns next-token logits and the new
    /// state.
    fn step(&self, state: &Self::State, token: TokenId) -> Result<(Vec<f64>, Self::State)>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamConfig {
    pub beam: usize,
    /// Maximum emitted tokens, the terminator included.
    pub max_len: usize,
    /// Rank finished hypotheses by mean rather than total log-probability.
    pub length_normalize: bool,
    pub start: TokenId,
    pub end: TokenId,
    /// Tokens whose logits are forced to −∞.
    pub banned: Vec<TokenId>,
}

pub const DEFAULT_BEAM: usize = 5;
pub const DEFAULT_MAX_LEN: usize = 30;

impl BeamConfig {
    pub fn new(beam: usize, max_len: usize) -> Self {
        BeamConfig {
            beam,
            max_len,
            length_normalize: false,
            start: BOS_ID,
            end: EOU_ID,
            banned: vec![PAD_ID, UNK_ID, BOS_ID, EOT_ID],
        }
    }
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig::new(DEFAULT_BEAM, DEFAULT_MAX_LEN)
    }
}

/// Log-softmax with `banned` entries excluded from the normaliser.
pub fn masked_log_softmax(logits: &[f64], banned: &[TokenId]) -> Vec<f64> {
    let mut masked = logits.to_vec();
    for &b in banned {
        if let Some(x) = masked.get_mut(b as usize) {
            *x = f64::NEG_INFINITY;
        }
    }
    log_softmax(&masked)
}

#[derive(Debug, Clone)]
pub struct Hypothesis<S> {
    pub tokens: Vec<TokenId>,
    pub log_prob: f64,
    pub state: S,
    pub finished: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamResult {
    pub tokens: Vec<TokenId>,
    pub log_prob: f64,
    /// No hypothesis reached the terminator within `max_len`.
    pub truncated: bool,
}

fn rank(h: &Hypothesis<impl Clone>, normalize: bool) -> f64 {
    if normalize {
        h.log_prob / h.tokens.len().max(1) as f64
    } else {
        h.log_prob
    }
}

/// Beam search from `init`. Each step expands every live hypothesis and
/// keeps the `beam` best candidates; candidates ending in `end` leave the
/// beam as finished. Returns the best finished hypothesis.
pub fn beam_search<M: StepModel>(model: &M, init: M::State, cfg: &BeamConfig) -> Result<BeamResult> {
    ensure!(cfg.beam >= 1, "beam size must be at least 1");
    ensure!(cfg.max_len >= 1, "max_len must be at least 1");
    ensure!(
        !cfg.banned.contains(&cfg.end),
        "the terminator cannot be banned"
    );
    let mut alive = vec![Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        state: init,
        finished: false,
    }];
    let mut finished: Vec<Hypothesis<M::State>> = Vec::new();
    for _ in 0..cfg.max_len {
        // (score, parent, token, child state)
        let mut cands: Vec<(f64, usize, TokenId, M::State)> = Vec::new();
        for (pi, h) in alive.iter().enumerate() {
            let prev = h.tokens.last().copied().unwrap_or(cfg.start);
            let (logits, next) = model.step(&h.state, prev)?;
            ensure!(
                logits.len() == model.vocab_size(),
                "step returned {} logits for a vocabulary of {}",
                logits.len(),
                model.vocab_size()
            );
            let lp = masked_log_softmax(&logits, &cfg.banned);
            for (v, &x) in lp.iter().enumerate() {
                if x > f64::NEG_INFINITY {
                    cands.push((h.log_prob + x, pi, v as TokenId, next.clone()));
                }
            }
        }
        cands.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(Ordering::Equal)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        cands.truncate(cfg.beam);
        let mut next_alive = Vec::with_capacity(cands.len());
        for (score, pi, v, state) in cands {
            let mut tokens = alive[pi].tokens.clone();
            tokens.push(v);
            let h = Hypothesis {
                tokens,
                log_prob: score,
                state,
                finished: v == cfg.end,
            };
            if h.finished {
                finished.push(h);
            } else {
                next_alive.push(h);
            }
        }
        alive = next_alive;
        if alive.is_empty() {
            break;
        }
        // scores only decrease, so no live hypothesis can overtake
        if !cfg.length_normalize {
            let best_done = finished.iter().map(|h| h.log_prob).fold(f64::NEG_INFINITY, f64::max);
            let best_alive = alive.iter().map(|h| h.log_prob).fold(f64::NEG_INFINITY, f64::max);
            if best_done >= best_alive {
                break;
            }
        }
    }
    let pick = |pool: &[Hypothesis<M::State>]| -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, h) in pool.iter().enumerate() {
            if best.is_none_or(|b| rank(h, cfg.length_normalize) > rank(&pool[b], cfg.length_normalize)) {
                best = Some(i);
            }
        }
        best
    };
    if let Some(i) = pick(&finished) {
        let h = &finished[i];
        return Ok(BeamResult {
            tokens: h.tokens.clone(),
            log_prob: h.log_prob,
            truncated: false,
        });
    }
    let i = pick(&alive).ok_or_else(|| Error::Contract("beam search produced no hypothesis".into()))?;
    Ok(BeamResult {
        tokens: alive[i].tokens.clone(),
        log_prob: alive[i].log_prob,
        truncated: true,
    })
}

/// The trained decoder under a fixed conditioning bundle.
pub struct DecoderStepper<'a> {
    model: &'a Model,
    store: &'a ParamStore,
    gates: [Vec<f64>; 3],
}

impl<'a> DecoderStepper<'a> {
    /// Returns the stepper and the initial hidden state.
    pub fn new(model: &'a Model, store: &'a ParamStore, cond: &Tensor) -> Result<(Self, Vec<f64>)> {
        ensure!(
            cond.len() == model.config.cond_dim(),
            "conditioning bundle has length {}, expected {}",
            cond.len(),
            model.config.cond_dim()
        );
        let mut tape = Tape::new(store);
        let c = tape.input_tensor(cond);
        let st = model.decoder_start(&mut tape, c);
        let g = st.cond_gates;
        let gates = [g.z, g.r, g.h].map(|v| tape.value(v).to_vec());
        let h0 = tape.value(st.hidden).to_vec();
        Ok((DecoderStepper { model, store, gates }, h0))
    }
}

impl StepModel for DecoderStepper<'_> {
    type State = Vec<f64>;

    fn vocab_size(&self) -> usize {
        self.model.config.vocab_size
    }

    fn step(&self, state: &Vec<f64>, token: TokenId) -> Result<(Vec<f64>, Vec<f64>)> {
        ensure!(
            (token as usize) < self.vocab_size(),
            "token id {token} outside the vocabulary"
        );
        let mut tape = Tape::new(self.store);
        let hidden = tape.input(state);
        let cond_gates = GateInputs {
            z: tape.input(&self.gates[0]),
            r: tape.input(&self.gates[1]),
            h: tape.input(&self.gates[2]),
        };
        let st = DecoderState { hidden, cond_gates };
        let (h, logits) = self.model.decoder_step(&mut tape, &st, token);
        Ok((tape.value(logits).to_vec(), tape.value(h).to_vec()))
    }
}

/// Log-probability of `tokens` under the decoder with the beam's mask.
pub fn score_tokens(model: &Model, store: &ParamStore, cond: &Tensor, tokens: &[TokenId], banned: &[TokenId]) -> Result<f64> {
    ensure!(!tokens.is_empty(), "nothing to score");
    let mut inputs = vec![BOS_ID];
    inputs.extend_from_slice(&tokens[..tokens.len() - 1]);
    let logits = model.decode_logits(store, &inputs, cond)?;
    Ok(tokens
        .iter()
        .enumerate()
        .map(|(i, &t)| masked_log_softmax(logits.row(i), banned)[t as usize])
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "value")]
pub enum LabelMode {
    Fixed(usize),
    Predict,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub history: Dialog<TokenId>,
    pub scenario: Scenario,
    pub label: LabelMode,
    pub beam: usize,
    pub max_len: usize,
    pub seed: u64,
    /// Use the prior mean instead of a sample.
    pub deterministic_z: bool,
}

impl GenerationRequest {
    pub fn new(history: Dialog<TokenId>, scenario: Scenario, label: LabelMode) -> Self {
        GenerationRequest {
            history,
            scenario,
            label,
            beam: DEFAULT_BEAM,
            max_len: DEFAULT_MAX_LEN,
            seed: 0,
            deterministic_z: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub tokens: Vec<TokenId>,
    pub label: usize,
    pub label_predicted: bool,
    pub label_probs: Option<Vec<f64>>,
    pub z: Vec<f64>,
    pub log_prob: f64,
    pub truncated: bool,
    /// The history was empty so the context was all zeros.
    pub empty_history: bool,
    /// Conditioning bundle the decoder ran under.
    pub cond: Tensor,
}

/// The label to generate with, and the classifier output when predicted.
pub fn resolve_label(model: &Model, store: &ParamStore, context: &Tensor, mode: LabelMode) -> Result<(usize, Option<LabelDistribution>)> {
    match mode {
        LabelMode::Fixed(y) => {
            if y >= model.config.num_labels() {
                return Err(Error::LabelDomain {
                    label: y,
                    num_labels: model.config.num_labels(),
                    scenario: model.config.scenario.number(),
                });
            }
            Ok((y, None))
        }
        LabelMode::Predict => {
            if !model.config.scenario.predicts_label() {
                return Err(Error::InvalidRequest(format!(
                    "scenario {} takes a fixed label; prediction is not available",
                    model.config.scenario.number()
                )));
            }
            let dist = model.classify_label(store, context)?;
            Ok((predicted_label(&dist), Some(dist)))
        }
    }
}

/// Context vector the heads see when `next` speaks in state `ctx`.
pub fn response_context(model: &Model, store: &ParamStore, ctx: &ContextState, next: Speaker) -> Tensor {
    let mut tape = Tape::new(store);
    let vars = ContextVars::constant(&mut tape, ctx);
    let c = model.conditioning_context(&mut tape, vars, next);
    Tensor::vector(tape.value(c).to_vec())
}

/// Generation settings shared by every entry point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeOptions {
    pub label: LabelMode,
    pub beam: usize,
    pub max_len: usize,
    pub seed: u64,
    pub deterministic_z: bool,
}

/// Generates the next utterance of `next` from dialog state `ctx`.
pub fn generate_from_context(model: &Model, store: &ParamStore, ctx: &ContextState, next: Speaker, opts: &DecodeOptions) -> Result<Generation> {
    if opts.beam == 0 || opts.max_len == 0 {
        return Err(Error::InvalidRequest("beam and max_len must be at least 1".into()));
    }
    let context = response_context(model, store, ctx, next);
    let (label, dist) = resolve_label(model, store, &context, opts.label)?;
    let y = model.label_embedding_value(store, label);
    let prior = model.prior(store, &context, &y)?;
    let z = if opts.deterministic_z {
        prior.mu.clone()
    } else {
        sample_gaussian(&prior.mu, &prior.sigma, &mut Rng::seed(opts.seed))?
    };
    let cond = model.cond_value(store, &context, &z, label)?;
    let (stepper, h0) = DecoderStepper::new(model, store, &cond)?;
    let cfg = BeamConfig::new(opts.beam, opts.max_len);
    let out = beam_search(&stepper, h0, &cfg)?;
    Ok(Generation {
        tokens: out.tokens,
        label,
        label_predicted: dist.is_some(),
        label_probs: dist.map(|d| d.probs),
        z: z.into_data(),
        log_prob: out.log_prob,
        truncated: out.truncated,
        empty_history: false,
        cond,
    })
}

/// Encodes the request's history and generates the next speaker's reply.
pub fn generate_response(model: &Model, store: &ParamStore, req: &GenerationRequest) -> Result<Generation> {
    if req.scenario != model.config.scenario {
        return Err(Error::InvalidRequest(format!(
            "request is for scenario {} but the model was trained for scenario {}",
            req.scenario.number(),
            model.config.scenario.number()
        )));
    }
    let ctx = model.encode_history(store, &req.history)?;
    let next = Speaker::of_turn(req.history.turns.len());
    let opts = DecodeOptions {
        label: req.label,
        beam: req.beam,
        max_len: req.max_len,
        seed: req.seed,
        deterministic_z: req.deterministic_z,
    };
    let mut g = generate_from_context(model, store, &ctx, next, &opts)?;
    g.empty_history = req.history.turns.is_empty();
    Ok(g)
}
