use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tokenize::tokenize;
use super::vocab::{EOT, EOU};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Speaker {
    A,
    B,
}

impl Speaker {
    /// Speaker of 0-indexed turn `k`: A on even turns, B on odd.
    pub fn of_turn(k: usize) -> Speaker {
        if k % 2 == 0 {
            Speaker::A
        } else {
            Speaker::B
        }
    }

    pub fn other(self) -> Speaker {
        match self {
            Speaker::A => Speaker::B,
            Speaker::B => Speaker::A,
        }
    }
}

/// One turn: utterances of a single speaker. Each utterance includes its
/// trailing `__eou__` token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn<T> {
    pub utterances: Vec<Vec<T>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialog<T> {
    pub turns: Vec<Turn<T>>,
}

impl<T> Default for Dialog<T> {
    fn default() -> Self {
        Dialog { turns: Vec::new() }
    }
}

impl<T> Dialog<T> {
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> Dialog<U> {
        Dialog {
            turns: self
                .turns
                .iter()
                .map(|t| Turn {
                    utterances: t
                        .utterances
                        .iter()
                        .map(|u| u.iter().map(&mut f).collect())
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn num_utterances(&self) -> usize {
        self.turns.iter().map(|t| t.utterances.len()).sum()
    }

    /// Utterances in order with their turn index.
    pub fn utterances(&self) -> impl Iterator<Item = (usize, &[T])> {
        self.turns
            .iter()
            .enumerate()
            .flat_map(|(k, t)| t.utterances.iter().map(move |u| (k, u.as_slice())))
    }

    /// Utterance tokens in order, without turn markers.
    pub fn tokens(&self) -> impl Iterator<Item = &T> {
        self.turns
            .iter()
            .flat_map(|t| t.utterances.iter().flatten())
    }

    pub fn num_tokens(&self) -> usize {
        self.tokens().count()
    }

    /// The first `turns` turns.
    pub fn prefix(&self, turns: usize) -> Dialog<T>
    where
        T: Clone,
    {
        Dialog {
            turns: self.turns[..turns.min(self.turns.len())].to_vec(),
        }
    }
}

/// Parses one corpus line: space-separated tokens, `__eou__` ends an
/// utterance and `__eot__` ends a turn. Tokens are lowercased.
pub fn parse_dialog(line: &str) -> Result<Dialog<String>> {
    parse_tokens(tokenize(line), 0)
}

fn parse_tokens(tokens: Vec<String>, line: usize) -> Result<Dialog<String>> {
    let mut turns = Vec::new();
    let mut utterances: Vec<Vec<String>> = Vec::new();
    let mut current: Vec<String> = Vec::new();
    let err = |message: String| Error::Parse { line, message };
    for tok in tokens {
        match tok.as_str() {
            EOU => {
                current.push(tok);
                utterances.push(std::mem::take(&mut current));
            }
            EOT => {
                if !current.is_empty() {
                    return Err(err(format!("{EOT} inside an unterminated utterance")));
                }
                if utterances.is_empty() {
                    return Err(err(format!("empty turn before {EOT}")));
                }
                turns.push(Turn {
                    utterances: std::mem::take(&mut utterances),
                });
            }
            _ => current.push(tok),
        }
    }
    if !current.is_empty() || !utterances.is_empty() {
        return Err(err(format!("dialog does not end with {EOT}")));
    }
    Ok(Dialog { turns })
}

/// Inverse of [`parse_dialog`] on normalised lines.
pub fn render_dialog<T: AsRef<str>>(d: &Dialog<T>) -> String {
    let mut out: Vec<&str> = Vec::new();
    for t in &d.turns {
        for u in &t.utterances {
            out.extend(u.iter().map(AsRef::as_ref));
        }
        out.push(EOT);
    }
    out.join(" ")
}

/// Reads a corpus file, one dialog per line.
pub fn read_corpus(path: &Path) -> Result<Vec<Dialog<String>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .map(|(i, l)| parse_tokens(tokenize(l), i + 1))
        .collect()
}

pub fn write_corpus<T: AsRef<str>>(path: &Path, dialogs: &[Dialog<T>]) -> Result<()> {
    let mut text = String::new();
    for d in dialogs {
        text.push_str(&render_dialog(d));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Per-utterance labels, one dialog per line, space-separated integers.
pub fn write_labels(path: &Path, labels: &[Vec<usize>]) -> Result<()> {
    let mut text = String::new();
    for row in labels {
        let line: Vec<String> = row.iter().map(usize::to_string).collect();
        text.push_str(&line.join(" "));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: &Path) -> Result<Vec<Vec<usize>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .map(|(i, l)| {
            l.split_whitespace()
                .map(|x| {
                    x.parse::<usize>().map_err(|e| Error::Parse {
                        line: i + 1,
                        message: format!("bad label {x:?}: {e}"),
                    })
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_turns_and_utterances() {
        let d = parse_dialog("hi there __eou__ anyone ? __eou__ __eot__ yes __eou__ __eot__").unwrap();
        assert_eq!(d.turns.len(), 2);
        assert_eq!(d.turns[0].utterances.len(), 2);
        assert_eq!(d.turns[0].utterances[1], ["anyone", "?", "__eou__"]);
        assert_eq!(d.num_utterances(), 3);
        assert_eq!(d.num_tokens(), 8);
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(parse_dialog("hi __eou__").is_err());
        assert!(parse_dialog("hi __eot__").is_err());
        assert!(parse_dialog("__eot__").is_err());
        assert_eq!(parse_dialog("").unwrap().turns.len(), 0);
    }

    #[test]
    fn speakers_alternate() {
        assert_eq!(Speaker::of_turn(0), Speaker::A);
        assert_eq!(Speaker::of_turn(1), Speaker::B);
        assert_eq!(Speaker::of_turn(4), Speaker::A);
        assert_eq!(Speaker::A.other(), Speaker::B);
    }

    #[test]
    fn labels_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("labels.txt");
        let rows = vec![vec![0, 1, 2], vec![1]];
        write_labels(&p, &rows).unwrap();
        assert_eq!(read_labels(&p).unwrap(), rows);
    }
}
