//! Synthetic two-party help-desk dialogs.
//!
//! Speaker A asks how to do something with a topic noun; B answers with a
//! topic-specific tool for the same noun; A follows up on a fresh topic, and
//! so on. A configurable share of the responses are replaced by generic
//! phrases.

use super::dialog::{Dialog, Turn};
use super::labels::{PhraseList, DEFAULT_GENERIC_PHRASES};
use super::tokenize::tokenize;
use super::vocab::EOU;
use crate::error::{ensure, Result};
use crate::numeric::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyCorpusSpec {
    /// Approximate number of distinct tokens to generate.
    pub vocab_size: usize,
    pub dialogs: usize,
    pub min_turns: usize,
    pub max_turns: usize,
    /// Probability that a response (any turn after the first) is generic.
    pub generic_rate: f64,
}

impl Default for ToyCorpusSpec {
    fn default() -> Self {
        ToyCorpusSpec {
            vocab_size: 200,
            dialogs: 2000,
            min_turns: 4,
            max_turns: 8,
            generic_rate: 0.02,
        }
    }
}

impl ToyCorpusSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.dialogs >= 1, "toy corpus needs at least one dialog");
        ensure!(self.min_turns >= 2, "dialogs need at least two turns");
        ensure!(
            self.min_turns <= self.max_turns,
            "min_turns {} exceeds max_turns {}",
            self.min_turns,
            self.max_turns
        );
        ensure!(
            (0.0..=1.0).contains(&self.generic_rate),
            "generic rate {} outside [0, 1]",
            self.generic_rate
        );
        ensure!(
            self.vocab_size >= BASE_WORDS.len() + 2 * WORDS_PER_TOPIC,
            "vocab size {} too small for the template grammar",
            self.vocab_size
        );
        Ok(())
    }
}

const BASE_WORDS: [&str; 34] = [
    "how", "do", "i", "can", "you", "the", "a", "to", "with", "use", "try", "ok", "thanks", "and",
    "what", "about", "?", ".", ",", "it", "my", "then", "restart", "run", "install", "configure",
    "remove", "update", "fix", "works", "now", "that", "worked", "is",
];
const VERBS: [&str; 5] = ["install", "configure", "remove", "update", "fix"];
const NOUNS_PER_TOPIC: usize = 5;
const TOOLS_PER_TOPIC: usize = 3;
const WORDS_PER_TOPIC: usize = NOUNS_PER_TOPIC + TOOLS_PER_TOPIC;
const SYLLABLES: [&str; 12] = ["ka", "lo", "mi", "ne", "ru", "so", "ta", "vi", "ze", "po", "du", "fe"];

fn pseudo_word(i: usize) -> String {
    let n = SYLLABLES.len();
    format!(
        "{}{}{}",
        SYLLABLES[i % n],
        SYLLABLES[(i / n) % n],
        SYLLABLES[(i / (n * n)) % n]
    )
}

struct Topic {
    nouns: Vec<String>,
    tools: Vec<String>,
}

fn topics(spec: &ToyCorpusSpec) -> Vec<Topic> {
    let generic_words = DEFAULT_GENERIC_PHRASES
        .iter()
        .flat_map(|p| tokenize(p))
        .filter(|w| !BASE_WORDS.contains(&w.as_str()))
        .collect::<std::collections::BTreeSet<_>>()
        .len();
    let room = spec.vocab_size.saturating_sub(BASE_WORDS.len() + generic_words + 4);
    let n_topics = (room / WORDS_PER_TOPIC).max(2);
    let mut next = 0;
    let mut fresh = |k: usize| {
        let words: Vec<String> = (next..next + k).map(pseudo_word).collect();
        next += k;
        words
    };
    (0..n_topics)
        .map(|_| Topic {
            nouns: fresh(NOUNS_PER_TOPIC),
            tools: fresh(TOOLS_PER_TOPIC),
        })
        .collect()
}

fn pick<'a>(rng: &mut Rng, xs: &'a [String]) -> &'a str {
    &xs[rng.below(xs.len())]
}

fn question(rng: &mut Rng, topic: &Topic, follow_up: bool) -> String {
    let verb = VERBS[rng.below(VERBS.len())];
    let noun = pick(rng, &topic.nouns);
    let opener = match (follow_up, rng.below(2)) {
        (false, 0) => "how do i",
        (false, _) => "how can i",
        (true, 0) => "ok thanks , and how do i",
        (true, _) => "that worked , now how can i",
    };
    format!("{opener} {verb} the {noun} ?")
}

fn answer(rng: &mut Rng, topic: &Topic, noun: &str) -> String {
    let tool = pick(rng, &topic.tools);
    match rng.below(3) {
        0 => format!("you can use {tool} to fix the {noun} ."),
        1 => format!("try {tool} with the {noun} ."),
        _ => format!("run {tool} , then restart the {noun} ."),
    }
}

fn utterance(text: &str) -> Vec<String> {
    let mut toks = tokenize(text);
    toks.push(EOU.to_string());
    toks
}

/// Generates `spec.dialogs` dialogs with one utterance per turn.
pub fn make_toy_corpus(spec: &ToyCorpusSpec, rng: &mut Rng) -> Result<Vec<Dialog<String>>> {
    spec.validate()?;
    let topics = topics(spec);
    let generic = PhraseList::default();
    let mut out = Vec::with_capacity(spec.dialogs);
    for _ in 0..spec.dialogs {
        let n_turns = spec.min_turns + rng.below(spec.max_turns - spec.min_turns + 1);
        let mut turns = Vec::with_capacity(n_turns);
        let mut topic = rng.below(topics.len());
        let mut noun = String::new();
        for k in 0..n_turns {
            let text = if k > 0 && rng.bernoulli(spec.generic_rate) {
                let p = &generic.phrases()[rng.below(generic.phrases().len())];
                format!("{} .", p.join(" "))
            } else if k % 2 == 0 {
                if k > 0 {
                    topic = rng.below(topics.len());
                }
                let q = question(rng, &topics[topic], k > 0);
                noun = q.split_whitespace().rev().nth(1).unwrap_or_default().to_string();
                q
            } else {
                answer(rng, &topics[topic], &noun)
            };
            turns.push(Turn {
                utterances: vec![utterance(&text)],
            });
        }
        out.push(Dialog { turns });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{label_generic, render_dialog, vocab::EOT};

    fn small() -> ToyCorpusSpec {
        ToyCorpusSpec {
            dialogs: 50,
            ..ToyCorpusSpec::default()
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = make_toy_corpus(&small(), &mut Rng::seed(5)).unwrap();
        let b = make_toy_corpus(&small(), &mut Rng::seed(5)).unwrap();
        let c = make_toy_corpus(&small(), &mut Rng::seed(6)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn turns_are_terminated() {
        for d in make_toy_corpus(&small(), &mut Rng::seed(1)).unwrap() {
            let line = render_dialog(&d);
            assert!(line.ends_with(EOT));
            assert_eq!(line.matches(EOT).count(), d.turns.len());
            for t in &d.turns {
                assert_eq!(t.utterances.len(), 1);
                assert_eq!(t.utterances[0].last().unwrap(), EOU);
            }
        }
    }

    #[test]
    fn templates_are_never_generic() {
        let spec = ToyCorpusSpec {
            generic_rate: 0.0,
            ..small()
        };
        let p = PhraseList::default();
        for d in make_toy_corpus(&spec, &mut Rng::seed(2)).unwrap() {
            for (_, u) in d.utterances() {
                assert_eq!(label_generic(u, &p), 0);
            }
        }
    }

    #[test]
    fn rejects_bad_specs() {
        let bad = [
            ToyCorpusSpec { dialogs: 0, ..small() },
            ToyCorpusSpec { min_turns: 1, ..small() },
            ToyCorpusSpec { min_turns: 5, max_turns: 4, ..small() },
            ToyCorpusSpec { generic_rate: 1.5, ..small() },
            ToyCorpusSpec { vocab_size: 10, ..small() },
        ];
        for spec in bad {
            assert!(make_toy_corpus(&spec, &mut Rng::seed(0)).is_err(), "{spec:?}");
        }
    }
}
