//! Interactive conversations: one user and one model alternating turns
//! over a running dialog state.

use serde::{Deserialize, Serialize};

use crate::corpus::vocab::{EOT, EOU, EOU_ID};
use crate::corpus::{tokenize, Speaker, TokenId, Vocab};
use crate::decode::{generate_from_context, DecodeOptions, LabelMode, DEFAULT_BEAM, DEFAULT_MAX_LEN};
use crate::error::{Error, Result};
use crate::numeric::{ParamStore, Rng, Tensor};
use crate::sphred::{ContextState, Model, Scenario};

/// Label used in the generic scenario when the caller gives none.
pub const DEFAULT_GENERIC_LABEL: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Model,
}

impl Role {
    pub fn speaker(self) -> Speaker {
        match self {
            Role::User => Speaker::A,
            Role::Model => Speaker::B,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    Fixed,
    Predicted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub value: usize,
    pub source: LabelSource,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distribution: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub turn_index: usize,
    pub speaker: Role,
    pub text: String,
    /// Token ids of each utterance, terminators included.
    pub utterances: Vec<Vec<TokenId>>,
    /// Set on model turns.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<LabelRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_prob: Option<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub truncated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TurnOptions {
    pub label_override: Option<usize>,
    /// Decode from the prior mean instead of a sample.
    pub deterministic: bool,
    pub beam: usize,
    pub max_len: usize,
}

impl Default for TurnOptions {
    fn default() -> Self {
        TurnOptions {
            label_override: None,
            deterministic: false,
            beam: DEFAULT_BEAM,
            max_len: DEFAULT_MAX_LEN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnReply {
    pub response: String,
    pub label_used: usize,
    pub label_source: LabelSource,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label_distribution: Option<Vec<f64>>,
    pub log_prob: f64,
    pub turn_index: usize,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub id: String,
    pub scenario: Scenario,
    seed: u64,
    context: ContextState,
    transcript: Vec<TranscriptEntry>,
}

/// Splits user text into utterances, closing the last one if needed.
pub fn user_utterances(text: &str, vocab: &Vocab) -> Result<Vec<Vec<TokenId>>> {
    let tokens = tokenize(text);
    if tokens.iter().any(|t| t == EOT) {
        return Err(Error::InvalidRequest(format!("utterance text may not contain {EOT}")));
    }
    let mut utterances = Vec::new();
    let mut current = Vec::new();
    for tok in &tokens {
        current.push(vocab.id(tok));
        if tok == EOU {
            utterances.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        current.push(EOU_ID);
        utterances.push(current);
    }
    if utterances.iter().all(|u| u.len() == 1) {
        return Err(Error::InvalidRequest("utterance text is empty".into()));
    }
    Ok(utterances)
}

/// Display text of a generated utterance, without its terminator.
pub fn render_response(tokens: &[TokenId], vocab: &Vocab) -> String {
    let body = match tokens.last() {
        Some(&EOU_ID) => &tokens[..tokens.len() - 1],
        _ => tokens,
    };
    vocab.decode(body).join(" ")
}

impl Session {
    pub fn new(id: impl Into<String>, scenario: Scenario, model: &Model, seed: u64) -> Result<Self> {
        if scenario != model.config.scenario {
            return Err(Error::InvalidRequest(format!(
                "the loaded model serves scenario {}, not {}",
                model.config.scenario.number(),
                scenario.number()
            )));
        }
        Ok(Session {
            id: id.into(),
            scenario,
            seed,
            context: model.fresh_context(),
            transcript: Vec::new(),
        })
    }

    pub fn context(&self) -> &ContextState {
        &self.context
    }

    pub fn transcript(&self) -> &[TranscriptEntry] {
        &self.transcript
    }

    /// Completed exchanges so far.
    pub fn turns_taken(&self) -> usize {
        self.transcript.len() / 2
    }

    fn label_mode(&self, opts: &TurnOptions) -> Result<LabelMode> {
        let n = self.scenario.num_labels();
        match opts.label_override {
            Some(y) if y >= n => Err(Error::LabelDomain {
                label: y,
                num_labels: n,
                scenario: self.scenario.number(),
            }),
            Some(y) => Ok(LabelMode::Fixed(y)),
            None if self.scenario.predicts_label() => Ok(LabelMode::Predict),
            None => Ok(LabelMode::Fixed(DEFAULT_GENERIC_LABEL)),
        }
    }

    /// Feeds the user's text, then generates and records the model reply.
    /// On error the session is left unchanged.
    pub fn take_turn(&mut self, model: &Model, store: &ParamStore, vocab: &Vocab, text: &str, opts: &TurnOptions) -> Result<TurnReply> {
        let mode = self.label_mode(opts)?;
        let utterances = user_utterances(text, vocab)?;
        let turn_index = self.turns_taken();
        let h0 = Tensor::zeros(&[model.config.encoder_dim]);
        let last = utterances.last().expect("at least one utterance");
        let enc = model.encode_utterance(store, last, &h0)?;
        let after_user = model.update_context(store, &self.context, &enc, Role::User.speaker())?;

        let decode = DecodeOptions {
            label: mode,
            beam: opts.beam,
            max_len: opts.max_len,
            seed: Rng::derived(self.seed, &[turn_index as u64]).next_u64(),
            deterministic_z: opts.deterministic,
        };
        let g = generate_from_context(model, store, &after_user, Role::Model.speaker(), &decode)?;
        let mut reply_tokens = g.tokens.clone();
        if reply_tokens.last() != Some(&EOU_ID) {
            reply_tokens.push(EOU_ID);
        }
        let enc = model.encode_utterance(store, &reply_tokens, &h0)?;
        let after_model = model.update_context(store, &after_user, &enc, Role::Model.speaker())?;

        let source = if g.label_predicted {
            LabelSource::Predicted
        } else {
            LabelSource::Fixed
        };
        let response = render_response(&g.tokens, vocab);
        self.transcript.push(TranscriptEntry {
            turn_index,
            speaker: Role::User,
            text: text.trim().to_string(),
            utterances,
            label: None,
            log_prob: None,
            truncated: false,
        });
        self.transcript.push(TranscriptEntry {
            turn_index,
            speaker: Role::Model,
            text: response.clone(),
            utterances: vec![reply_tokens],
            label: Some(LabelRecord {
                value: g.label,
                source,
                distribution: g.label_probs.clone(),
            }),
            log_prob: Some(g.log_prob),
            truncated: g.truncated,
        });
        self.context = after_model;
        Ok(TurnReply {
            response,
            label_used: g.label,
            label_source: source,
            label_distribution: g.label_probs,
            log_prob: g.log_prob,
            turn_index,
            truncated: g.truncated,
        })
    }

    /// Recomputes the dialog state from the transcript alone.
    pub fn replay(&self, model: &Model, store: &ParamStore) -> Result<ContextState> {
        let h0 = Tensor::zeros(&[model.config.encoder_dim]);
        let mut ctx = model.fresh_context();
        for entry in &self.transcript {
            let last = entry
                .utterances
                .last()
                .ok_or_else(|| Error::Contract(format!("transcript entry for turn {} is empty", entry.turn_index)))?;
            let enc = model.encode_utterance(store, last, &h0)?;
            ctx = model.update_context(store, &ctx, &enc, entry.speaker.speaker())?;
        }
        Ok(ctx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::vocab::RESERVED;
    use crate::sphred::ModelConfig;

    fn setup(scenario: Scenario) -> (Model, ParamStore, Vocab) {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(["hi", "there", "how", "are", "you"].map(String::from));
        let vocab = Vocab::from_tokens(tokens).unwrap();
        let cfg = ModelConfig {
            embed_dim: 4,
            encoder_dim: 5,
            status_dim: 3,
            latent_dim: 2,
            label_dim: 3,
            decoder_dim: 4,
            mlp_dim: 6,
            init_scale: 0.5,
            ..ModelConfig::new(vocab.len(), scenario)
        };
        let (m, s) = Model::init(cfg, 4).unwrap();
        (m, s, vocab)
    }

    #[test]
    fn user_text_is_split_and_closed() {
        let (_, _, vocab) = setup(Scenario::Generic);
        let u = user_utterances("Hi there __eou__ how are you", &vocab).unwrap();
        assert_eq!(u.len(), 2);
        assert_eq!(u[0], vec![vocab.id("hi"), vocab.id("there"), EOU_ID]);
        assert_eq!(*u[1].last().unwrap(), EOU_ID);
        assert!(user_utterances("   ", &vocab).is_err());
        assert!(user_utterances("__eou__", &vocab).is_err());
        assert!(user_utterances("hi __eot__", &vocab).is_err());
    }

    #[test]
    fn replay_reproduces_context() {
        let (m, s, vocab) = setup(Scenario::Sentiment);
        let mut sess = Session::new("x", Scenario::Sentiment, &m, 1).unwrap();
        for (i, text) in ["hi there", "how are you :)", "you ?"].iter().enumerate() {
            let opts = TurnOptions {
                label_override: if i == 1 { Some(2) } else { None },
                max_len: 6,
                ..TurnOptions::default()
            };
            let r = sess.take_turn(&m, &s, &vocab, text, &opts).unwrap();
            assert_eq!(r.turn_index, i);
            assert_eq!(r.label_source == LabelSource::Fixed, i == 1);
            assert_eq!(r.label_distribution.is_some(), i != 1);
            assert_eq!(sess.replay(&m, &s).unwrap(), *sess.context());
        }
        assert_eq!(sess.transcript().len(), 6);
    }

    #[test]
    fn failed_turn_leaves_session_unchanged() {
        let (m, s, vocab) = setup(Scenario::Generic);
        let mut sess = Session::new("x", Scenario::Generic, &m, 1).unwrap();
        let before = sess.clone();
        let opts = TurnOptions {
            label_override: Some(2),
            ..TurnOptions::default()
        };
        let e = sess.take_turn(&m, &s, &vocab, "hi", &opts).unwrap_err();
        assert!(matches!(e, Error::LabelDomain { label: 2, .. }));
        assert_eq!(sess, before);
        let r = sess.take_turn(&m, &s, &vocab, "hi", &TurnOptions::default()).unwrap();
        assert_eq!((r.label_used, r.label_source), (DEFAULT_GENERIC_LABEL, LabelSource::Fixed));
        assert!(Session::new("y", Scenario::Sentiment, &m, 1).is_err());
    }

    #[test]
    fn deterministic_turns_repeat() {
        let (m, s, vocab) = setup(Scenario::Sentiment);
        let run = |seed| {
            let mut sess = Session::new("x", Scenario::Sentiment, &m, seed).unwrap();
            let opts = TurnOptions {
                deterministic: true,
                max_len: 6,
                ..TurnOptions::default()
            };
            (0..3)
                .map(|_| sess.take_turn(&m, &s, &vocab, "how are you", &opts).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(1), run(2));
    }
}
