use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dialog::{Dialog, Speaker};
use super::tokenize::tokenize;
use super::vocab::{
    TokenId, EOU, NEGATIVE, NEGATIVE_ID, NEUTRAL, NEUTRAL_ID, POSITIVE, POSITIVE_ID,
};
use crate::error::{ensure, Error, Result};
use crate::numeric::Rng;

pub const DEFAULT_GENERIC_PHRASES: [&str; 4] =
    ["i don't know", "i have no idea", "i'm not sure", "sorry i have no idea"];

/// Tokenized generic phrases.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhraseList {
    phrases: Vec<Vec<String>>,
}

impl Default for PhraseList {
    fn default() -> Self {
        PhraseList::new(DEFAULT_GENERIC_PHRASES.iter().copied()).expect("non-empty defaults")
    }
}

impl PhraseList {
    pub fn new<'a>(phrases: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let phrases: Vec<Vec<String>> = phrases
            .into_iter()
            .map(tokenize)
            .filter(|p| !p.is_empty())
            .collect();
        ensure!(!phrases.is_empty(), "generic phrase list is empty");
        Ok(PhraseList { phrases })
    }

    /// One phrase per line; blank lines are skipped.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        PhraseList::new(text.lines())
    }

    pub fn phrases(&self) -> &[Vec<String>] {
        &self.phrases
    }
}

/// 1 iff some phrase occurs as a contiguous token run in `utterance`.
pub fn label_generic<S: AsRef<str>>(utterance: &[S], phrases: &PhraseList) -> usize {
    let hit = phrases.phrases.iter().any(|p| {
        p.len() <= utterance.len()
            && utterance
                .windows(p.len())
                .any(|w| w.iter().zip(p).all(|(a, b)| a.as_ref() == b))
    });
    usize::from(hit)
}

/// Generic flags for every utterance of every dialog.
pub fn generic_labels(dialogs: &[Dialog<String>], phrases: &PhraseList) -> Vec<Vec<usize>> {
    dialogs
        .iter()
        .map(|d| d.utterances().map(|(_, u)| label_generic(u, phrases)).collect())
        .collect()
}

/// Simulated sentiment tag. The discriminant is the label index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sentiment {
    Positive = 0,
    Negative = 1,
    Neutral = 2,
}

impl Sentiment {
    pub const ALL: [Sentiment; 3] = [Sentiment::Positive, Sentiment::Negative, Sentiment::Neutral];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Sentiment> {
        Sentiment::ALL.get(i).copied()
    }

    pub fn token(self) -> &'static str {
        match self {
            Sentiment::Positive => POSITIVE,
            Sentiment::Negative => NEGATIVE,
            Sentiment::Neutral => NEUTRAL,
        }
    }

    pub fn token_id(self) -> TokenId {
        match self {
            Sentiment::Positive => POSITIVE_ID,
            Sentiment::Negative => NEGATIVE_ID,
            Sentiment::Neutral => NEUTRAL_ID,
        }
    }

    pub fn from_token(tok: &str) -> Option<Sentiment> {
        Sentiment::ALL.into_iter().find(|s| s.token() == tok)
    }

    pub fn from_token_id(id: TokenId) -> Option<Sentiment> {
        Sentiment::ALL.into_iter().find(|s| s.token_id() == id)
    }

    /// Signed value: negative −1, neutral 0, positive +1.
    pub fn value(self) -> i32 {
        match self {
            Sentiment::Positive => 1,
            Sentiment::Negative => -1,
            Sentiment::Neutral => 0,
        }
    }

    pub fn from_sign(x: i32) -> Sentiment {
        match x.signum() {
            1 => Sentiment::Positive,
            -1 => Sentiment::Negative,
            _ => Sentiment::Neutral,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SentimentRule {
    /// Each speaker keeps their own tag.
    Constant,
    /// Sign of the mean of the two speakers' latest tags.
    Average,
}

impl SentimentRule {
    pub fn from_number(n: u8) -> Option<SentimentRule> {
        match n {
            1 => Some(SentimentRule::Constant),
            2 => Some(SentimentRule::Average),
            _ => None,
        }
    }
}

/// Tag of the next utterance given the speaker's own latest tag and the
/// other speaker's latest tag.
pub fn next_sentiment(prev_self: Sentiment, prev_other: Sentiment, rule: SentimentRule) -> Sentiment {
    match rule {
        SentimentRule::Constant => prev_self,
        // sign((a + b) / 2) == sign(a + b)
        SentimentRule::Average => Sentiment::from_sign(prev_self.value() + prev_other.value()),
    }
}

/// Tags for a dialog's utterances in order: each speaker's first utterance
/// gets a uniformly random tag, later ones follow `rule`. An utterance whose
/// interlocutor has not spoken yet keeps the speaker's own tag.
pub fn sentiment_tags<T>(d: &Dialog<T>, rule: SentimentRule, rng: &mut Rng) -> Vec<Sentiment> {
    let mut last: [Option<Sentiment>; 2] = [None, None];
    let slot = |s: Speaker| match s {
        Speaker::A => 0,
        Speaker::B => 1,
    };
    let mut tags = Vec::with_capacity(d.num_utterances());
    for (k, _) in d.utterances() {
        let who = Speaker::of_turn(k);
        let tag = match (last[slot(who)], last[slot(who.other())]) {
            (None, _) => Sentiment::ALL[rng.below(3)],
            (Some(own), None) => own,
            (Some(own), Some(other)) => next_sentiment(own, other, rule),
        };
        last[slot(who)] = Some(tag);
        tags.push(tag);
    }
    tags
}

/// Re-derives the rule-determined tag of every utterance from the observed
/// tags of the preceding ones; `None` for randomly initialised utterances.
pub fn expected_tags(observed: &[Sentiment], speakers: &[Speaker], rule: SentimentRule) -> Vec<Option<Sentiment>> {
    let mut last: [Option<Sentiment>; 2] = [None, None];
    let slot = |s: Speaker| match s {
        Speaker::A => 0,
        Speaker::B => 1,
    };
    observed
        .iter()
        .zip(speakers)
        .map(|(&tag, &who)| {
            let expected = match (last[slot(who)], last[slot(who.other())]) {
                (None, _) => None,
                (Some(own), None) => Some(own),
                (Some(own), Some(other)) => Some(next_sentiment(own, other, rule)),
            };
            last[slot(who)] = Some(tag);
            expected
        })
        .collect()
}

/// Appends a sentiment token before each utterance's `__eou__`.
pub fn tag_corpus_sentiment(
    dialogs: &[Dialog<String>],
    rule: SentimentRule,
    rng: &mut Rng,
) -> (Vec<Dialog<String>>, Vec<Vec<usize>>) {
    let mut tagged = Vec::with_capacity(dialogs.len());
    let mut labels = Vec::with_capacity(dialogs.len());
    for d in dialogs {
        let tags = sentiment_tags(d, rule, rng);
        let mut it = tags.iter();
        let mut out = d.clone();
        for turn in &mut out.turns {
            for u in &mut turn.utterances {
                let tag = it.next().expect("one tag per utterance");
                debug_assert_eq!(u.last().map(String::as_str), Some(EOU));
                u.insert(u.len() - 1, tag.token().to_string());
            }
        }
        labels.push(tags.iter().map(|t| t.index()).collect());
        tagged.push(out);
    }
    (tagged, labels)
}

/// Sentiment label read from the token before `__eou__`.
pub fn trailing_sentiment<S: AsRef<str>>(utterance: &[S]) -> Option<Sentiment> {
    let body = match utterance.last().map(AsRef::as_ref) {
        Some(EOU) => &utterance[..utterance.len() - 1],
        _ => utterance,
    };
    body.last().and_then(|t| Sentiment::from_token(t.as_ref()))
}
