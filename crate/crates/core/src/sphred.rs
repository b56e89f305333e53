//! Hierarchical dialog encoder with one status GRU per speaker, and the
//! conditional decoder.
//!
//! A shared token-level GRU encodes each utterance. When a turn completes,
//! the final encoder state of its last utterance is fed to the status GRU of
//! the turn's speaker; the other speaker's status is untouched. The dialog
//! context is `concat(h_A, h_B)`.
//!
//! The decoder is conditioned on `concat(context, z, label embedding)`: the
//! bundle sets the initial state through `tanh(W c + b)` and is appended to
//! every step's token embedding.

use serde::{Deserialize, Serialize};

use crate::corpus::vocab::BOS_ID;
use crate::corpus::{Dialog, Speaker, TokenId};
use crate::error::{ensure, Result};
use crate::latent::{GaussianHead, Mlp};
use crate::numeric::{GateInputs, GruCell, ParamId, ParamStore, Rng, Tape, Tensor, Var};

/// Which attribute the label carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// Binary generic-response flag, always supplied.
    Generic,
    /// Three sentiment tags, predicted from the context at inference.
    Sentiment,
}

impl Scenario {
    pub fn from_number(n: u8) -> Option<Scenario> {
        match n {
            1 => Some(Scenario::Generic),
            2 => Some(Scenario::Sentiment),
            _ => None,
        }
    }

    pub fn number(self) -> u8 {
        match self {
            Scenario::Generic => 1,
            Scenario::Sentiment => 2,
        }
    }

    pub fn num_labels(self) -> usize {
        match self {
            Scenario::Generic => 2,
            Scenario::Sentiment => 3,
        }
    }

    pub fn predicts_label(self) -> bool {
        self == Scenario::Sentiment
    }
}

/// How the two status vectors are arranged when conditioning the heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextOrder {
    /// Always `(h_A, h_B)`.
    Fixed,
    /// `(h_next, h_other)`: the upcoming speaker's status first.
    Responder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub encoder_dim: usize,
    /// Hidden size of each speaker's status GRU.
    pub status_dim: usize,
    pub latent_dim: usize,
    pub label_dim: usize,
    pub decoder_dim: usize,
    /// Hidden width of the prior, posterior and classifier networks.
    pub mlp_dim: usize,
    pub scenario: Scenario,
    /// One status GRU of size `2 · status_dim` updated by both speakers
    /// (the single-context hierarchical baseline).
    pub shared_status: bool,
    pub context_order: ContextOrder,
    pub init_scale: f64,
}

impl ModelConfig {
    /// Defaults with `vocab_size` and `scenario` filled in.
    pub fn new(vocab_size: usize, scenario: Scenario) -> Self {
        let status_dim = 32;
        ModelConfig {
            vocab_size,
            embed_dim: 32,
            encoder_dim: 64,
            status_dim,
            latent_dim: 16,
            label_dim: 100,
            decoder_dim: 64,
            mlp_dim: 2 * status_dim,
            scenario,
            shared_status: false,
            context_order: ContextOrder::Fixed,
            init_scale: 0.08,
        }
    }

    pub fn context_dim(&self) -> usize {
        2 * self.status_dim
    }

    pub fn cond_dim(&self) -> usize {
        self.context_dim() + self.latent_dim + self.label_dim
    }

    pub fn num_labels(&self) -> usize {
        self.scenario.num_labels()
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("encoder_dim", self.encoder_dim),
            ("status_dim", self.status_dim),
            ("latent_dim", self.latent_dim),
            ("label_dim", self.label_dim),
            ("decoder_dim", self.decoder_dim),
            ("mlp_dim", self.mlp_dim),
        ] {
            ensure!(v >= 1, "{name} must be at least 1");
        }
        ensure!(
            self.vocab_size > BOS_ID as usize,
            "vocabulary must contain the reserved tokens"
        );
        ensure!(self.init_scale >= 0.0, "init_scale must be non-negative");
        Ok(())
    }
}

/// Per-speaker status vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextState {
    pub h_a: Tensor,
    pub h_b: Tensor,
}

impl ContextState {
    pub fn fresh(status_dim: usize) -> Self {
        ContextState {
            h_a: Tensor::zeros(&[status_dim]),
            h_b: Tensor::zeros(&[status_dim]),
        }
    }

    /// `concat(h_A, h_B)`.
    pub fn context_vector(&self) -> Tensor {
        let mut v = self.h_a.data().to_vec();
        v.extend_from_slice(self.h_b.data());
        Tensor::vector(v)
    }

    pub fn get(&self, s: Speaker) -> &Tensor {
        match s {
            Speaker::A => &self.h_a,
            Speaker::B => &self.h_b,
        }
    }
}

/// [`ContextState`] on a tape.
#[derive(Debug, Clone, Copy)]
pub struct ContextVars {
    pub h_a: Var,
    pub h_b: Var,
}

impl ContextVars {
    pub fn constant(tape: &mut Tape, ctx: &ContextState) -> Self {
        ContextVars {
            h_a: tape.input_tensor(&ctx.h_a),
            h_b: tape.input_tensor(&ctx.h_b),
        }
    }

    pub fn value(&self, tape: &Tape) -> ContextState {
        ContextState {
            h_a: Tensor::vector(tape.value(self.h_a).to_vec()),
            h_b: Tensor::vector(tape.value(self.h_b).to_vec()),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Status {
    Separate { a: GruCell, b: GruCell },
    Shared(GruCell),
}

#[derive(Debug, Clone, Copy)]
struct Decoder {
    init_w: ParamId,
    init_b: ParamId,
    gru: GruCell,
    cond_z: ParamId,
    cond_r: ParamId,
    cond_h: ParamId,
    out_w: ParamId,
    out_b: ParamId,
}

/// Decoder state for one utterance: the hidden vector plus the
/// conditioning bundle's (constant) contribution to each gate.
#[derive(Debug, Clone, Copy)]
pub struct DecoderState {
    pub hidden: Var,
    pub cond_gates: GateInputs,
}

/// Parameter handles and configuration of the full model.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    embedding: ParamId,
    encoder: GruCell,
    status: Status,
    label_embedding: ParamId,
    pub(crate) prior: GaussianHead,
    pub(crate) posterior: GaussianHead,
    pub(crate) classifier: Option<Mlp>,
    decoder: Decoder,
}

impl Model {
    /// Registers every parameter (zero-valued) in a fresh store.
    pub fn build(config: ModelConfig) -> Result<(Model, ParamStore)> {
        config.validate()?;
        let c = &config;
        let mut s = ParamStore::new();
        let embedding = s.weight("embedding", &[c.vocab_size, c.embed_dim]);
        let encoder = GruCell::register(&mut s, "encoder", c.embed_dim, c.encoder_dim);
        let status = if c.shared_status {
            Status::Shared(GruCell::register(
                &mut s,
                "status",
                c.encoder_dim,
                c.context_dim(),
            ))
        } else {
            Status::Separate {
                a: GruCell::register(&mut s, "status_a", c.encoder_dim, c.status_dim),
                b: GruCell::register(&mut s, "status_b", c.encoder_dim, c.status_dim),
            }
        };
        let label_embedding = s.weight("label_embedding", &[c.num_labels(), c.label_dim]);
        let prior = GaussianHead::register(
            &mut s,
            "prior",
            c.context_dim() + c.label_dim,
            c.mlp_dim,
            c.latent_dim,
        );
        let posterior = GaussianHead::register(
            &mut s,
            "posterior",
            c.context_dim() + c.label_dim + c.encoder_dim,
            c.mlp_dim,
            c.latent_dim,
        );
        let classifier = c.scenario.predicts_label().then(|| {
            Mlp::register(
                &mut s,
                "classifier",
                c.context_dim(),
                c.mlp_dim,
                c.num_labels(),
            )
        });
        let cd = c.cond_dim();
        let h = c.decoder_dim;
        let decoder = Decoder {
            init_w: s.weight("decoder.init.w", &[h, cd]),
            init_b: s.bias("decoder.init.b", h),
            gru: GruCell::register(&mut s, "decoder.gru", c.embed_dim, h),
            cond_z: s.weight("decoder.gru.c_z", &[h, cd]),
            cond_r: s.weight("decoder.gru.c_r", &[h, cd]),
            cond_h: s.weight("decoder.gru.c_h", &[h, cd]),
            out_w: s.weight("decoder.out.w", &[c.vocab_size, h]),
            out_b: s.bias("decoder.out.b", c.vocab_size),
        };
        let model = Model {
            config,
            embedding,
            encoder,
            status,
            label_embedding,
            prior,
            posterior,
            classifier,
            decoder,
        };
        Ok((model, s))
    }

    /// Builds and draws initial weights from `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<(Model, ParamStore)> {
        let (m, mut s) = Model::build(config)?;
        s.init_uniform(m.config.init_scale, &mut Rng::seed(seed));
        Ok((m, s))
    }

    pub fn fresh_context(&self) -> ContextState {
        ContextState::fresh(self.config.status_dim)
    }

    // ---- tape-level building blocks ----

    pub fn embed(&self, tape: &mut Tape, token: TokenId) -> Var {
        tape.gather(self.embedding, token as usize)
    }

    /// Runs the token GRU from `h0` over `tokens`; returns the final state.
    pub fn encode(&self, tape: &mut Tape, tokens: &[TokenId], h0: Var) -> Result<Var> {
        ensure!(!tokens.is_empty(), "cannot encode an empty utterance");
        let mut h = h0;
        for &t in tokens {
            h = self.encoder_step(tape, t, h);
        }
        Ok(h)
    }

    pub fn encoder_step(&self, tape: &mut Tape, token: TokenId, h: Var) -> Var {
        let x = self.embed(tape, token);
        self.encoder.step(tape, x, h)
    }

    pub fn zeros(&self, tape: &mut Tape, n: usize) -> Var {
        tape.input(&vec![0.0; n])
    }

    /// Feeds a completed turn's encoding to its speaker's status GRU.
    pub fn advance(&self, tape: &mut Tape, ctx: ContextVars, encoded: Var, speaker: Speaker) -> ContextVars {
        match self.status {
            Status::Separate { a, b } => match speaker {
                Speaker::A => ContextVars {
                    h_a: a.step(tape, encoded, ctx.h_a),
                    h_b: ctx.h_b,
                },
                Speaker::B => ContextVars {
                    h_a: ctx.h_a,
                    h_b: b.step(tape, encoded, ctx.h_b),
                },
            },
            Status::Shared(cell) => {
                let s = self.config.status_dim;
                let h = tape.concat(&[ctx.h_a, ctx.h_b]);
                let next = cell.step(tape, encoded, h);
                ContextVars {
                    h_a: tape.slice(next, 0, s),
                    h_b: tape.slice(next, s, s),
                }
            }
        }
    }

    /// Context vector as seen by the heads for an utterance of `next`.
    pub fn conditioning_context(&self, tape: &mut Tape, ctx: ContextVars, next: Speaker) -> Var {
        match (self.config.context_order, next) {
            (ContextOrder::Responder, Speaker::B) => tape.concat(&[ctx.h_b, ctx.h_a]),
            _ => tape.concat(&[ctx.h_a, ctx.h_b]),
        }
    }

    pub fn label_embed(&self, tape: &mut Tape, label: usize) -> Var {
        tape.gather(self.label_embedding, label)
    }

    /// `concat(context, z, label embedding)`.
    pub fn cond_bundle(&self, tape: &mut Tape, context: Var, z: Var, label_embed: Var) -> Var {
        tape.concat(&[context, z, label_embed])
    }

    pub fn decoder_start(&self, tape: &mut Tape, cond: Var) -> DecoderState {
        let d = &self.decoder;
        let pre = tape.matvec(d.init_w, cond);
        let b = tape.param(d.init_b);
        let pre = tape.add(pre, b);
        let hidden = tape.tanh(pre);
        let cond_gates = GateInputs {
            z: tape.matvec(d.cond_z, cond),
            r: tape.matvec(d.cond_r, cond),
            h: tape.matvec(d.cond_h, cond),
        };
        DecoderState { hidden, cond_gates }
    }

    /// Consumes `input` and returns the new hidden state and next-token
    /// logits.
    pub fn decoder_step(&self, tape: &mut Tape, state: &DecoderState, input: TokenId) -> (Var, Var) {
        let d = &self.decoder;
        let x = self.embed(tape, input);
        let gates = d.gru.project_input(tape, x).add(tape, state.cond_gates);
        let h = d.gru.step_projected(tape, gates, state.hidden);
        let logits = tape.matvec(d.out_w, h);
        let b = tape.param(d.out_b);
        (h, tape.add(logits, b))
    }

    /// Teacher-forced NLL of `targets` given decoder `inputs` (same length;
    /// `inputs[0]` is the start token).
    pub fn utterance_nll(&self, tape: &mut Tape, cond: Var, inputs: &[TokenId], targets: &[TokenId]) -> Var {
        assert_eq!(inputs.len(), targets.len());
        let mut state = self.decoder_start(tape, cond);
        let mut terms = Vec::with_capacity(targets.len());
        for (&inp, &tgt) in inputs.iter().zip(targets) {
            let (h, logits) = self.decoder_step(tape, &state, inp);
            state.hidden = h;
            terms.push(tape.softmax_xent(logits, tgt as usize));
        }
        tape.add_all(&terms)
    }

    /// Sum of utterance NLLs over a whole dialog with given latents and
    /// labels (one per utterance), advancing the context between turns.
    pub fn sequence_nll_on(&self, tape: &mut Tape, dialog: &Dialog<TokenId>, zs: &[Vec<f64>], labels: &[usize]) -> Result<Var> {
        let n = dialog.num_utterances();
        ensure!(n >= 1, "dialog has no utterances");
        ensure!(
            zs.len() == n && labels.len() == n,
            "need one latent and one label per utterance ({n}), got {} and {}",
            zs.len(),
            labels.len()
        );
        let fresh = self.fresh_context();
        let mut ctx = ContextVars::constant(tape, &fresh);
        let mut terms = Vec::with_capacity(n);
        let mut u = 0;
        for (k, turn) in dialog.turns.iter().enumerate() {
            let speaker = Speaker::of_turn(k);
            let mut last = None;
            for utt in &turn.utterances {
                let context = self.conditioning_context(tape, ctx, speaker);
                let z = tape.input(&zs[u]);
                let y = self.label_embed(tape, labels[u]);
                let cond = self.cond_bundle(tape, context, z, y);
                let inputs = decoder_inputs(utt);
                terms.push(self.utterance_nll(tape, cond, &inputs, utt));
                let h0 = self.zeros(tape, self.config.encoder_dim);
                last = Some(self.encode(tape, utt, h0)?);
                u += 1;
            }
            if let Some(enc) = last {
                ctx = self.advance(tape, ctx, enc, speaker);
            }
        }
        Ok(tape.add_all(&terms))
    }

    // ---- value-level operations ----

    /// Final encoder state of `tokens` starting from `h0`.
    pub fn encode_utterance(&self, store: &ParamStore, tokens: &[TokenId], h0: &Tensor) -> Result<Tensor> {
        ensure!(
            h0.len() == self.config.encoder_dim,
            "encoder state has length {}, expected {}",
            h0.len(),
            self.config.encoder_dim
        );
        self.check_tokens(tokens)?;
        let mut tape = Tape::new(store);
        let h = tape.input_tensor(h0);
        let out = self.encode(&mut tape, tokens, h)?;
        Ok(Tensor::vector(tape.value(out).to_vec()))
    }

    /// Applies `speaker`'s status GRU to a completed turn's encoding.
    pub fn update_context(&self, store: &ParamStore, ctx: &ContextState, encoded: &Tensor, speaker: Speaker) -> Result<ContextState> {
        ensure!(
            encoded.len() == self.config.encoder_dim,
            "encoded turn has length {}, expected {}",
            encoded.len(),
            self.config.encoder_dim
        );
        let mut tape = Tape::new(store);
        let vars = ContextVars::constant(&mut tape, ctx);
        let enc = tape.input_tensor(encoded);
        let next = self.advance(&mut tape, vars, enc, speaker);
        let mut out = next.value(&tape);
        // the untouched stream is returned bit-for-bit
        if !self.config.shared_status {
            match speaker {
                Speaker::A => out.h_b = ctx.h_b.clone(),
                Speaker::B => out.h_a = ctx.h_a.clone(),
            }
        }
        Ok(out)
    }

    /// Runs a whole dialog history through the encoder and status GRUs.
    pub fn encode_history(&self, store: &ParamStore, history: &Dialog<TokenId>) -> Result<ContextState> {
        let mut ctx = self.fresh_context();
        let h0 = Tensor::zeros(&[self.config.encoder_dim]);
        for (k, turn) in history.turns.iter().enumerate() {
            let last = turn
                .utterances
                .last()
                .ok_or_else(|| crate::Error::Contract(format!("turn {k} has no utterances")))?;
            let enc = self.encode_utterance(store, last, &h0)?;
            ctx = self.update_context(store, &ctx, &enc, Speaker::of_turn(k))?;
        }
        Ok(ctx)
    }

    /// Per-step logits (`T×V`) for decoder inputs `prev_tokens` under
    /// `cond`.
    pub fn decode_logits(&self, store: &ParamStore, prev_tokens: &[TokenId], cond: &Tensor) -> Result<Tensor> {
        ensure!(!prev_tokens.is_empty(), "decoder needs at least the start token");
        ensure!(
            cond.len() == self.config.cond_dim(),
            "conditioning bundle has length {}, expected {}",
            cond.len(),
            self.config.cond_dim()
        );
        self.check_tokens(prev_tokens)?;
        let mut tape = Tape::new(store);
        let c = tape.input_tensor(cond);
        let mut state = self.decoder_start(&mut tape, c);
        let mut rows = Vec::with_capacity(prev_tokens.len() * self.config.vocab_size);
        for &t in prev_tokens {
            let (h, logits) = self.decoder_step(&mut tape, &state, t);
            state.hidden = h;
            rows.extend_from_slice(tape.value(logits));
        }
        Tensor::matrix(prev_tokens.len(), self.config.vocab_size, rows)
    }

    /// Dialog NLL for fixed latents and labels.
    pub fn sequence_nll(&self, store: &ParamStore, dialog: &Dialog<TokenId>, zs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
        for (_, u) in dialog.utterances() {
            self.check_tokens(u)?;
        }
        for z in zs {
            ensure!(z.len() == self.config.latent_dim, "latent has wrong length");
        }
        for &y in labels {
            ensure!(y < self.config.num_labels(), "label {y} out of range");
        }
        let mut tape = Tape::new(store);
        let v = self.sequence_nll_on(&mut tape, dialog, zs, labels)?;
        Ok(tape.scalar(v))
    }

    /// Conditioning bundle as a plain tensor.
    pub fn cond_value(&self, store: &ParamStore, context: &Tensor, z: &Tensor, label: usize) -> Result<Tensor> {
        ensure!(context.len() == self.config.context_dim(), "context has wrong length");
        ensure!(z.len() == self.config.latent_dim, "latent has wrong length");
        ensure!(label < self.config.num_labels(), "label {label} out of range");
        let mut v = context.data().to_vec();
        v.extend_from_slice(z.data());
        v.extend_from_slice(store.get(self.label_embedding).row(label));
        Ok(Tensor::vector(v))
    }

    pub fn label_embedding_value(&self, store: &ParamStore, label: usize) -> Tensor {
        Tensor::vector(store.get(self.label_embedding).row(label).to_vec())
    }

    /// The learned input embedding table (`V × E`).
    pub fn embedding_table<'s>(&self, store: &'s ParamStore) -> &'s Tensor {
        store.get(self.embedding)
    }

    fn check_tokens(&self, tokens: &[TokenId]) -> Result<()> {
        for &t in tokens {
            ensure!(
                (t as usize) < self.config.vocab_size,
                "token id {t} outside vocabulary of {}",
                self.config.vocab_size
            );
        }
        Ok(())
    }
}

/// Decoder inputs for an utterance: the start token followed by all but the
/// last target.
pub fn decoder_inputs(utterance: &[TokenId]) -> Vec<TokenId> {
    std::iter::once(BOS_ID)
        .chain(utterance[..utterance.len().saturating_sub(1)].iter().copied())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::vocab::EOU_ID;
    use crate::numeric::{gru_step, softmax};

    fn micro(scenario: Scenario) -> ModelConfig {
        ModelConfig {
            vocab_size: 20,
            embed_dim: 4,
            encoder_dim: 5,
            status_dim: 3,
            latent_dim: 2,
            label_dim: 3,
            decoder_dim: 4,
            mlp_dim: 6,
            ..ModelConfig::new(20, scenario)
        }
    }

    fn dialog(turns: &[&[TokenId]]) -> Dialog<TokenId> {
        Dialog {
            turns: turns
                .iter()
                .map(|t| crate::corpus::Turn {
                    utterances: vec![t.to_vec()],
                })
                .collect(),
        }
    }

    #[test]
    fn zero_model_encodes_to_zero() {
        let (m, s) = Model::build(micro(Scenario::Generic)).unwrap();
        let h0 = Tensor::zeros(&[5]);
        let h = m.encode_utterance(&s, &[9, 10, EOU_ID], &h0).unwrap();
        assert!(h.data().iter().all(|&x| x == 0.0));
        assert!(m.encode_utterance(&s, &[], &h0).is_err());
    }

    #[test]
    fn encoding_is_composed_gru_steps() {
        let (m, s) = Model::init(micro(Scenario::Generic), 3).unwrap();
        let emb = m.embedding_table(&s);
        let cell = m.encoder.params(&s);
        let toks = [8u32, 12, EOU_ID];
        let mut h = Tensor::zeros(&[5]);
        for &t in &toks {
            let x = Tensor::vector(emb.row(t as usize).to_vec());
            h = gru_step(&x, &h, &cell).unwrap();
        }
        let got = m.encode_utterance(&s, &toks, &Tensor::zeros(&[5])).unwrap();
        for (a, b) in got.data().iter().zip(h.data()) {
            assert!((a - b).abs() < 1e-14);
        }
        let one = m.encode_utterance(&s, &[8], &Tensor::zeros(&[5])).unwrap();
        let x = Tensor::vector(emb.row(8).to_vec());
        let h1 = gru_step(&x, &Tensor::zeros(&[5]), &cell).unwrap();
        assert!(one.data().iter().zip(h1.data()).all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn context_update_touches_one_stream() {
        let (m, s) = Model::init(micro(Scenario::Generic), 5).unwrap();
        let ctx = ContextState {
            h_a: Tensor::vector(vec![0.1, 0.2, 0.3]),
            h_b: Tensor::vector(vec![-0.4, 0.5, 0.6]),
        };
        let enc = Tensor::vector(vec![0.3, -0.2, 0.1, 0.0, 0.9]);
        let next = m.update_context(&s, &ctx, &enc, Speaker::A).unwrap();
        assert_eq!(next.h_b, ctx.h_b);
        assert_ne!(next.h_a, ctx.h_a);
        let next = m.update_context(&s, &ctx, &enc, Speaker::B).unwrap();
        assert_eq!(next.h_a, ctx.h_a);
    }

    #[test]
    fn zero_status_params_halve_the_stream() {
        let (m, s) = Model::build(micro(Scenario::Generic)).unwrap();
        let ctx = ContextState {
            h_a: Tensor::vector(vec![1.0, -2.0, 4.0]),
            h_b: Tensor::vector(vec![1.0, 1.0, 1.0]),
        };
        let enc = Tensor::vector(vec![1.0; 5]);
        let next = m.update_context(&s, &ctx, &enc, Speaker::A).unwrap();
        assert_eq!(next.h_a.data(), &[0.5, -1.0, 2.0]);
    }

    #[test]
    fn context_vector_is_a_then_b() {
        let ctx = ContextState {
            h_a: Tensor::vector(vec![1.0, 2.0]),
            h_b: Tensor::vector(vec![3.0, 4.0]),
        };
        assert_eq!(ctx.context_vector().data(), &[1.0, 2.0, 3.0, 4.0]);
        assert!(ContextState::fresh(3)
            .context_vector()
            .data()
            .iter()
            .all(|&x| x == 0.0));
    }

    #[test]
    fn zero_decoder_is_uniform() {
        let (m, s) = Model::build(micro(Scenario::Generic)).unwrap();
        let cond = Tensor::vector(vec![0.7; m.config.cond_dim()]);
        let logits = m.decode_logits(&s, &[BOS_ID, 9, 10], &cond).unwrap();
        for r in 0..3 {
            for p in softmax(logits.row(r)) {
                assert!((p - 1.0 / 20.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn uniform_model_nll_is_tokens_times_ln_v() {
        let (m, s) = Model::build(micro(Scenario::Sentiment)).unwrap();
        let d = dialog(&[&[9, 10, EOU_ID], &[11, EOU_ID]]);
        let zs = vec![vec![0.3, -0.1]; 2];
        let nll = m.sequence_nll(&s, &d, &zs, &[0, 2]).unwrap();
        assert!((nll - 5.0 * (20f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn single_utterance_nll_is_decoder_nll() {
        let (m, s) = Model::init(micro(Scenario::Generic), 8).unwrap();
        let utt = [9u32, EOU_ID];
        let d = dialog(&[&utt]);
        let z = vec![0.4, -0.3];
        let nll = m.sequence_nll(&s, &d, std::slice::from_ref(&z), &[1]).unwrap();
        let ctx = m.fresh_context().context_vector();
        let cond = m.cond_value(&s, &ctx, &Tensor::vector(z), 1).unwrap();
        let logits = m.decode_logits(&s, &decoder_inputs(&utt), &cond).unwrap();
        let direct: f64 = utt
            .iter()
            .enumerate()
            .map(|(i, &t)| -crate::numeric::log_softmax(logits.row(i))[t as usize])
            .sum();
        assert!((nll - direct).abs() < 1e-12);
    }

    #[test]
    fn shared_status_mixes_speakers() {
        let mut cfg = micro(Scenario::Generic);
        cfg.shared_status = true;
        let (m, s) = Model::init(cfg, 2).unwrap();
        let ctx = m.fresh_context();
        let enc = Tensor::vector(vec![0.5; 5]);
        let next = m.update_context(&s, &ctx, &enc, Speaker::A).unwrap();
        assert_eq!(next.context_vector().len(), 6);
        // the single stream spans both halves
        assert!(next.h_b.data().iter().any(|&x| x != 0.0));
        assert!(s.id("status_a.w_z").is_none() && s.id("status.w_z").is_some());
    }
}
