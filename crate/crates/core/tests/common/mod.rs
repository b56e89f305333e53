#![allow(dead_code)]

use condial_core::corpus::vocab::{EOU_ID, RESERVED};
use condial_core::corpus::{Dialog, TokenId, Turn};
use condial_core::decode::{masked_log_softmax, BeamConfig, StepModel};
use condial_core::numeric::Rng;
use condial_core::Result;

/// Best finished sequence by total log-probability over every sequence of
/// at most `cfg.max_len` tokens; `None` when none can finish.
pub fn exhaustive_best<M: StepModel>(model: &M, init: M::State, cfg: &BeamConfig) -> Result<Option<(Vec<TokenId>, f64)>> {
    fn walk<M: StepModel>(
        model: &M,
        state: &M::State,
        prefix: &mut Vec<TokenId>,
        lp: f64,
        cfg: &BeamConfig,
        best: &mut Option<(Vec<TokenId>, f64)>,
    ) -> Result<()> {
        if prefix.len() == cfg.max_len {
            return Ok(());
        }
        let prev = prefix.last().copied().unwrap_or(cfg.start);
        let (logits, next) = model.step(state, prev)?;
        let scores = masked_log_softmax(&logits, &cfg.banned);
        for (v, &s) in scores.iter().enumerate() {
            if s == f64::NEG_INFINITY {
                continue;
            }
            prefix.push(v as TokenId);
            let total = lp + s;
            if v as TokenId == cfg.end {
                if best.as_ref().is_none_or(|b| total > b.1) {
                    *best = Some((prefix.clone(), total));
                }
            } else {
                walk(model, &next, prefix, total, cfg, best)?;
            }
            prefix.pop();
        }
        Ok(())
    }
    let mut best = None;
    walk(model, &init, &mut Vec::new(), 0.0, cfg, &mut best)?;
    Ok(best)
}

/// Argmax decoding until the terminator or `cfg.max_len` tokens.
pub fn greedy<M: StepModel>(model: &M, init: M::State, cfg: &BeamConfig) -> Result<(Vec<TokenId>, f64)> {
    let mut state = init;
    let mut out = Vec::new();
    let mut lp = 0.0;
    while out.len() < cfg.max_len {
        let prev = out.last().copied().unwrap_or(cfg.start);
        let (logits, next) = model.step(&state, prev)?;
        let scores = masked_log_softmax(&logits, &cfg.banned);
        let mut arg = 0;
        for v in 1..scores.len() {
            if scores[v] > scores[arg] {
                arg = v;
            }
        }
        out.push(arg as TokenId);
        lp += scores[arg];
        state = next;
        if arg as TokenId == cfg.end {
            break;
        }
    }
    Ok((out, lp))
}

/// A tiny tanh RNN language model with random weights.
pub struct RandomRnn {
    pub vocab: usize,
    hidden: usize,
    embed: Vec<Vec<f64>>,
    rec: Vec<Vec<f64>>,
    out: Vec<Vec<f64>>,
}

impl RandomRnn {
    pub fn new(vocab: usize, hidden: usize, scale: f64, rng: &mut Rng) -> Self {
        let mut m = |r: usize, c: usize| -> Vec<Vec<f64>> {
            (0..r).map(|_| (0..c).map(|_| scale * rng.normal()).collect()).collect()
        };
        RandomRnn {
            vocab,
            hidden,
            embed: m(vocab, hidden),
            rec: m(hidden, hidden),
            out: m(vocab, hidden),
        }
    }

    pub fn init(&self) -> Vec<f64> {
        vec![0.0; self.hidden]
    }
}

impl StepModel for RandomRnn {
    type State = Vec<f64>;

    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn step(&self, h: &Vec<f64>, token: TokenId) -> Result<(Vec<f64>, Vec<f64>)> {
        let e = &self.embed[token as usize];
        let next: Vec<f64> = (0..self.hidden)
            .map(|i| (e[i] + (0..self.hidden).map(|j| self.rec[i][j] * h[j]).sum::<f64>()).tanh())
            .collect();
        let logits = self
            .out
            .iter()
            .map(|row| row.iter().zip(&next).map(|(a, b)| a * b).sum())
            .collect();
        Ok((logits, next))
    }
}

/// Random dialog over ids `first..vocab`, every utterance closed by
/// `__eou__`.
pub fn random_dialog(rng: &mut Rng, vocab: usize, turns: usize, max_utts: usize, max_len: usize) -> Dialog<TokenId> {
    let first = RESERVED.len();
    Dialog {
        turns: (0..turns)
            .map(|_| Turn {
                utterances: (0..1 + rng.below(max_utts))
                    .map(|_| {
                        let mut u: Vec<TokenId> = (0..rng.below(max_len + 1))
                            .map(|_| (first + rng.below(vocab - first)) as TokenId)
                            .collect();
                        u.push(EOU_ID);
                        u
                    })
                    .collect(),
            })
            .collect(),
    }
}

// ---- brute-force metric oracles over plain vectors ----

fn bf_cos(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    if aa == 0.0 || bb == 0.0 {
        0.0
    } else {
        dot / (aa.sqrt() * bb.sqrt())
    }
}

pub fn bf_average(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let avg = |vs: &[Vec<f64>]| -> Vec<f64> {
        let mut s = vec![0.0; vs[0].len()];
        for v in vs {
            for i in 0..s.len() {
                s[i] += v[i];
            }
        }
        s.iter().map(|x| x / vs.len() as f64).collect()
    };
    bf_cos(&avg(a), &avg(b))
}

pub fn bf_greedy(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let one = |x: &[Vec<f64>], y: &[Vec<f64>]| -> f64 {
        let mut total = 0.0;
        for u in x {
            let mut best = -2.0;
            for w in y {
                let c = bf_cos(u, w);
                if c > best {
                    best = c;
                }
            }
            total += best;
        }
        total / x.len() as f64
    };
    (one(a, b) + one(b, a)) / 2.0
}

pub fn bf_extrema(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let ext = |vs: &[Vec<f64>]| -> Vec<f64> {
        (0..vs[0].len())
            .map(|d| {
                let mut pick = vs[0][d];
                for v in vs {
                    let x = v[d];
                    if x.abs() > pick.abs() || (x.abs() == pick.abs() && x > pick) {
                        pick = x;
                    }
                }
                pick
            })
            .collect()
    };
    bf_cos(&ext(a), &ext(b))
}
