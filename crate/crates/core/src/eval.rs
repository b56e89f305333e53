//! Embedding-based response similarity (average, greedy, extrema) and
//! label-match accuracy.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::vocab::{BOS_ID, EOT_ID, EOU_ID, PAD_ID, UNK_ID};
use crate::corpus::{label_generic, trailing_sentiment, PhraseList, Sentiment, TokenId, Vocab};
use crate::error::{ensure, Error, Result};
use crate::numeric::ParamStore;
use crate::sphred::{Model, Scenario};

/// Word vectors indexed by token id, with the ids that metrics skip.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: Vec<Vec<f64>>,
    skipped: Vec<bool>,
}

fn skip_mask(n: usize, scenario: Scenario) -> Vec<bool> {
    let mut skip = vec![false; n];
    let mut ids = vec![PAD_ID, UNK_ID, BOS_ID, EOU_ID, EOT_ID];
    if scenario == Scenario::Sentiment {
        ids.extend(Sentiment::ALL.iter().map(|s| s.token_id()));
    }
    for id in ids {
        if let Some(s) = skip.get_mut(id as usize) {
            *s = true;
        }
    }
    skip
}

impl EmbeddingTable {
    pub fn new(vectors: Vec<Vec<f64>>, scenario: Scenario) -> Result<Self> {
        ensure!(!vectors.is_empty(), "embedding table is empty");
        let dim = vectors[0].len();
        ensure!(dim >= 1, "embedding dimension must be at least 1");
        ensure!(
            vectors.iter().all(|v| v.len() == dim),
            "embedding rows differ in length"
        );
        let skipped = skip_mask(vectors.len(), scenario);
        Ok(EmbeddingTable {
            dim,
            vectors,
            skipped,
        })
    }

    /// The model's learned input embeddings.
    pub fn from_model(model: &Model, store: &ParamStore) -> Self {
        let t = model.embedding_table(store);
        let (rows, _) = t.dims2();
        let vectors = (0..rows).map(|r| t.row(r).to_vec()).collect();
        EmbeddingTable::new(vectors, model.config.scenario).expect("model embeddings are well formed")
    }

    /// Reads `token v1 … vE` lines; every scored vocabulary token must be
    /// present. Tokens outside the vocabulary are ignored.
    pub fn from_file(path: &Path, vocab: &Vocab, scenario: Scenario) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut vectors: Vec<Option<Vec<f64>>> = vec![None; vocab.len()];
        let mut dim = None;
        for (i, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(tok) = parts.next() else { continue };
            let vals = parts
                .map(str::parse::<f64>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            if vals.is_empty() || *dim.get_or_insert(vals.len()) != vals.len() {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("expected {} values", dim.unwrap_or(1)),
                });
            }
            if let Some(id) = vocab.get(tok) {
                vectors[id as usize] = Some(vals);
            }
        }
        let dim = dim.ok_or_else(|| Error::Parse {
            line: 0,
            message: "embedding file is empty".into(),
        })?;
        let skipped = skip_mask(vocab.len(), scenario);
        let mut out = Vec::with_capacity(vectors.len());
        for (id, v) in vectors.into_iter().enumerate() {
            match v {
                Some(v) => out.push(v),
                None if skipped[id] => out.push(vec![0.0; dim]),
                None => {
                    return Err(Error::Parse {
                        line: 0,
                        message: format!("no vector for token {:?}", vocab.token(id as TokenId)),
                    })
                }
            }
        }
        EmbeddingTable::new(out, scenario)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vector(&self, id: TokenId) -> &[f64] {
        &self.vectors[id as usize]
    }

    pub fn is_scored(&self, id: TokenId) -> bool {
        !self.skipped.get(id as usize).copied().unwrap_or(true)
    }

    fn scored<'a>(&'a self, tokens: &[TokenId]) -> Vec<&'a [f64]> {
        tokens
            .iter()
            .filter(|&&t| self.is_scored(t))
            .map(|&t| self.vector(t))
            .collect()
    }
}

/// A similarity value; `degenerate` marks a zero-norm vector (score 0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    pub score: f64,
    pub degenerate: bool,
}

fn cosine(a: &[f64], b: &[f64]) -> Similarity {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Similarity {
            score: 0.0,
            degenerate: true,
        };
    }
    Similarity {
        score: (dot / (na * nb)).clamp(-1.0, 1.0),
        degenerate: false,
    }
}

fn scored_pair<'a>(resp: &[TokenId], refr: &[TokenId], emb: &'a EmbeddingTable) -> Result<(Vec<&'a [f64]>, Vec<&'a [f64]>)> {
    let (a, b) = (emb.scored(resp), emb.scored(refr));
    ensure!(
        !a.is_empty() && !b.is_empty(),
        "both sequences need at least one scored token"
    );
    Ok((a, b))
}

fn mean(vs: &[&[f64]], dim: usize) -> Vec<f64> {
    let mut m = vec![0.0; dim];
    for v in vs {
        for (acc, x) in m.iter_mut().zip(v.iter()) {
            *acc += x;
        }
    }
    m.iter_mut().for_each(|x| *x /= vs.len() as f64);
    m
}

/// Cosine between mean word vectors.
pub fn embedding_average(resp: &[TokenId], refr: &[TokenId], emb: &EmbeddingTable) -> Result<Similarity> {
    let (a, b) = scored_pair(resp, refr, emb)?;
    Ok(cosine(&mean(&a, emb.dim), &mean(&b, emb.dim)))
}

fn greedy_direction(a: &[&[f64]], b: &[&[f64]]) -> (f64, bool) {
    let mut total = 0.0;
    let mut degenerate = false;
    for x in a {
        let mut best = f64::NEG_INFINITY;
        for y in b {
            let c = cosine(x, y);
            degenerate |= c.degenerate;
            best = best.max(c.score);
        }
        total += best;
    }
    (total / a.len() as f64, degenerate)
}

/// Mean over tokens of the best cosine match in the other sequence,
/// averaged over both directions.
pub fn greedy_match(resp: &[TokenId], refr: &[TokenId], emb: &EmbeddingTable) -> Result<Similarity> {
    let (a, b) = scored_pair(resp, refr, emb)?;
    let (f, d1) = greedy_direction(&a, &b);
    let (g, d2) = greedy_direction(&b, &a);
    Ok(Similarity {
        score: 0.5 * (f + g),
        degenerate: d1 || d2,
    })
}

/// One direction of [`greedy_match`]: each `resp` token against `refr`.
pub fn greedy_forward(resp: &[TokenId], refr: &[TokenId], emb: &EmbeddingTable) -> Result<f64> {
    let (a, b) = scored_pair(resp, refr, emb)?;
    Ok(greedy_direction(&a, &b).0)
}

/// Per dimension the maximum, or the minimum when its magnitude is larger.
pub fn extrema(vs: &[&[f64]], dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|d| {
            let hi = vs.iter().map(|v| v[d]).fold(f64::NEG_INFINITY, f64::max);
            let lo = vs.iter().map(|v| v[d]).fold(f64::INFINITY, f64::min);
            if lo.abs() > hi {
                lo
            } else {
                hi
            }
        })
        .collect()
}

/// Cosine between the extrema vectors.
pub fn vector_extrema(resp: &[TokenId], refr: &[TokenId], emb: &EmbeddingTable) -> Result<Similarity> {
    let (a, b) = scored_pair(resp, refr, emb)?;
    Ok(cosine(&extrema(&a, emb.dim), &extrema(&b, emb.dim)))
}

/// Label a generated response carries under `scenario`; `None` when a
/// sentiment response has no trailing tag.
pub fn response_label<S: AsRef<str>>(resp: &[S], scenario: Scenario, phrases: &PhraseList) -> Option<usize> {
    match scenario {
        Scenario::Generic => Some(label_generic(resp, phrases)),
        Scenario::Sentiment => trailing_sentiment(resp).map(Sentiment::index),
    }
}

/// Fraction of responses whose label equals the expected one.
pub fn label_accuracy<S: AsRef<str>>(responses: &[Vec<S>], expected: &[usize], scenario: Scenario, phrases: &PhraseList) -> Result<f64> {
    ensure!(!responses.is_empty(), "no responses to score");
    ensure!(
        responses.len() == expected.len(),
        "{} responses but {} expected labels",
        responses.len(),
        expected.len()
    );
    let hits = responses
        .iter()
        .zip(expected)
        .filter(|(r, &y)| response_label(r, scenario, phrases) == Some(y))
        .count();
    Ok(hits as f64 / responses.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub average: f64,
    pub greedy: f64,
    pub extrema: f64,
    pub accuracy: Option<f64>,
    pub pairs: usize,
    /// Pairs where a side had no scored token or a zero vector.
    pub degenerate: usize,
}

impl EvalReport {
    pub fn tsv_line(&self) -> String {
        let acc = self.accuracy.map_or("NA".to_string(), |a| format!("{a:.6}"));
        format!(
            "{:.6}\t{:.6}\t{:.6}\t{}\t{}",
            self.average, self.greedy, self.extrema, acc, self.pairs
        )
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "pairs      {}", self.pairs)?;
        writeln!(f, "average    {:.4}", self.average)?;
        writeln!(f, "greedy     {:.4}", self.greedy)?;
        writeln!(f, "extrema    {:.4}", self.extrema)?;
        match self.accuracy {
            Some(a) => writeln!(f, "accuracy   {:.2}%", 100.0 * a)?,
            None => writeln!(f, "accuracy   n/a")?,
        }
        if self.degenerate > 0 {
            writeln!(f, "degenerate {}", self.degenerate)?;
        }
        Ok(())
    }
}

/// Mean metrics over aligned response/reference pairs. Pairs lacking a
/// scored token on either side count as 0 and as degenerate.
pub fn evaluate_pairs(responses: &[Vec<TokenId>], references: &[Vec<TokenId>], emb: &EmbeddingTable) -> Result<EvalReport> {
    ensure!(!responses.is_empty(), "no pairs to evaluate");
    ensure!(
        responses.len() == references.len(),
        "{} responses but {} references",
        responses.len(),
        references.len()
    );
    let (mut avg, mut gr, mut ex, mut degenerate) = (0.0, 0.0, 0.0, 0);
    for (r, g) in responses.iter().zip(references) {
        if emb.scored(r).is_empty() || emb.scored(g).is_empty() {
            degenerate += 1;
            continue;
        }
        let a = embedding_average(r, g, emb)?;
        let b = greedy_match(r, g, emb)?;
        let c = vector_extrema(r, g, emb)?;
        if a.degenerate || b.degenerate || c.degenerate {
            degenerate += 1;
        }
        avg += a.score;
        gr += b.score;
        ex += c.score;
    }
    let n = responses.len() as f64;
    Ok(EvalReport {
        average: avg / n,
        greedy: gr / n,
        extrema: ex / n,
        accuracy: None,
        pairs: responses.len(),
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const F: TokenId = 8;

    fn table(rows: &[&[f64]]) -> EmbeddingTable {
        let mut v = vec![vec![0.0; rows[0].len()]; F as usize];
        v.extend(rows.iter().map(|r| r.to_vec()));
        EmbeddingTable::new(v, Scenario::Sentiment).unwrap()
    }

    #[test]
    fn identical_sequences_score_one() {
        let e = table(&[&[1.0, 2.0], &[-0.5, 0.3], &[0.2, 0.0]]);
        let s = [F, F + 1, F + 2, EOU_ID];
        for m in [embedding_average, greedy_match, vector_extrema] {
            assert!((m(&s, &s, &e).unwrap().score - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn orthogonal_single_tokens_score_zero() {
        let e = table(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(embedding_average(&[F], &[F + 1], &e).unwrap().score, 0.0);
    }

    #[test]
    fn average_hand_computed() {
        let e = table(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0], &[2.0, -1.0], &[0.0, 3.0]]);
        // means (2/3, 2/3) and (1, 1) are parallel
        let s = embedding_average(&[F, F + 1, F + 2], &[F + 3, F + 4], &e).unwrap();
        assert!((s.score - 1.0).abs() < 1e-12);
        let s = embedding_average(&[F, F + 3], &[F + 1], &e).unwrap();
        let expected = -1.0 / (10f64).sqrt();
        assert!((s.score - expected).abs() < 1e-12);
    }

    #[test]
    fn extrema_rule() {
        let a: &[f64] = &[1.0, -3.0];
        let b: &[f64] = &[2.0, 1.0];
        assert_eq!(extrema(&[a, b], 2), [2.0, -3.0]);
    }

    #[test]
    fn markers_are_skipped() {
        let e = table(&[&[1.0, 0.0]]);
        assert!(!e.is_scored(EOU_ID) && !e.is_scored(Sentiment::Positive.token_id()));
        assert!(embedding_average(&[EOU_ID, UNK_ID], &[F], &e).is_err());
        let generic = EmbeddingTable::new(vec![vec![1.0]; 9], Scenario::Generic).unwrap();
        assert!(generic.is_scored(Sentiment::Positive.token_id()));
    }

    #[test]
    fn subset_forward_greedy_is_one() {
        let e = table(&[&[1.0, 0.2], &[-0.5, 0.3], &[0.2, 0.9]]);
        assert_eq!(greedy_forward(&[F, F + 2], &[F, F + 1, F + 2], &e).unwrap(), 1.0);
    }

    #[test]
    fn accuracy_counts() {
        let p = PhraseList::default();
        let r: Vec<Vec<&str>> = vec![
            vec!["i", "don't", "know", ".", "__eou__"],
            vec!["use", "it", "__eou__"],
            vec!["i", "have", "no", "idea", "__eou__"],
            vec!["i'm", "not", "sure", "__eou__"],
        ];
        assert_eq!(label_accuracy(&r, &[1, 1, 1, 1], Scenario::Generic, &p).unwrap(), 0.75);
        let s: Vec<Vec<&str>> = vec![vec!["ok", ":P", "__eou__"], vec!["ok", "__eou__"]];
        assert_eq!(label_accuracy(&s, &[2, 2], Scenario::Sentiment, &p).unwrap(), 0.5);
    }
}
