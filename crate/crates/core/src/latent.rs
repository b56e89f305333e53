//! Prior and posterior networks over the utterance latent, their KL
//! divergence, and the label classifier.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::numeric::{softmax, ParamId, ParamStore, Tape, Tensor, Var};
use crate::sphred::Model;

/// Added to softplus outputs so sigma stays strictly positive.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// Feed-forward network with one tanh hidden layer.
#[derive(Debug, Clone, Copy)]
pub struct Mlp {
    hidden_w: ParamId,
    hidden_b: ParamId,
    out_w: ParamId,
    out_b: ParamId,
}

impl Mlp {
    pub fn register(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, output: usize) -> Self {
        Mlp {
            hidden_w: store.weight(&format!("{prefix}.hidden.w"), &[hidden, input]),
            hidden_b: store.bias(&format!("{prefix}.hidden.b"), hidden),
            out_w: store.weight(&format!("{prefix}.out.w"), &[output, hidden]),
            out_b: store.bias(&format!("{prefix}.out.b"), output),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let a = tape.matvec(self.hidden_w, x);
        let b = tape.param(self.hidden_b);
        let a = tape.add(a, b);
        let h = tape.tanh(a);
        let o = tape.matvec(self.out_w, h);
        let b = tape.param(self.out_b);
        tape.add(o, b)
    }
}

/// An [`Mlp`] whose `2Z` outputs are read as `(mu, pre-sigma)`.
#[derive(Debug, Clone, Copy)]
pub struct GaussianHead {
    mlp: Mlp,
    latent: usize,
}

impl GaussianHead {
    pub fn register(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, latent: usize) -> Self {
        GaussianHead {
            mlp: Mlp::register(store, prefix, input, hidden, 2 * latent),
            latent,
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> GaussianVars {
        let out = self.mlp.forward(tape, x);
        let mu = tape.slice(out, 0, self.latent);
        let pre = tape.slice(out, self.latent, self.latent);
        let sp = tape.softplus(pre);
        let sigma = tape.offset(sp, SIGMA_FLOOR);
        GaussianVars { mu, sigma }
    }
}

/// Diagonal Gaussian on a tape.
#[derive(Debug, Clone, Copy)]
pub struct GaussianVars {
    pub mu: Var,
    pub sigma: Var,
}

impl GaussianVars {
    pub fn value(&self, tape: &Tape) -> GaussianParams {
        GaussianParams {
            mu: Tensor::vector(tape.value(self.mu).to_vec()),
            sigma: Tensor::vector(tape.value(self.sigma).to_vec()),
        }
    }
}

/// Diagonal Gaussian `N(mu, diag(sigma²))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub mu: Tensor,
    pub sigma: Tensor,
}

impl GaussianParams {
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        ensure!(
            mu.len() == sigma.len() && !mu.is_empty(),
            "mu and sigma must be nonempty and the same length"
        );
        ensure!(
            sigma.iter().all(|&s| s > 0.0),
            "sigma must be strictly positive"
        );
        Ok(GaussianParams {
            mu: Tensor::vector(mu),
            sigma: Tensor::vector(sigma),
        })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Probabilities over the active scenario's labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelDistribution {
    pub probs: Vec<f64>,
}

impl LabelDistribution {
    pub fn from_logits(logits: &[f64]) -> Self {
        LabelDistribution {
            probs: softmax(logits),
        }
    }
}

/// Argmax, lowest index on ties.
pub fn predicted_label(dist: &LabelDistribution) -> usize {
    let mut best = 0;
    for (i, &p) in dist.probs.iter().enumerate() {
        if p > dist.probs[best] {
            best = i;
        }
    }
    best
}

/// `KL(q || p)` for diagonal Gaussians.
pub fn kl_diag_gauss(q: &GaussianParams, p: &GaussianParams) -> Result<f64> {
    ensure!(q.dim() == p.dim(), "latent dims differ: {} vs {}", q.dim(), p.dim());
    let (mq, sq) = (q.mu.data(), q.sigma.data());
    let (mp, sp) = (p.mu.data(), p.sigma.data());
    ensure!(
        sq.iter().chain(sp).all(|&s| s > 0.0),
        "sigma must be strictly positive"
    );
    let mut total = 0.0;
    for i in 0..q.dim() {
        let d = mq[i] - mp[i];
        total += (sp[i] / sq[i]).ln() + (sq[i] * sq[i] + d * d) / (2.0 * sp[i] * sp[i]) - 0.5;
    }
    Ok(total)
}

/// [`kl_diag_gauss`] on a tape.
pub fn kl_on(tape: &mut Tape, q: GaussianVars, p: GaussianVars) -> Var {
    let z = tape.dim(q.mu);
    let ln_p = tape.ln(p.sigma);
    let ln_q = tape.ln(q.sigma);
    let d = tape.sub(q.mu, p.mu);
    let d2 = tape.square(d);
    let sq2 = tape.square(q.sigma);
    let num = tape.add(sq2, d2);
    let sp2 = tape.square(p.sigma);
    let den = tape.scale(sp2, 2.0);
    let frac = tape.div(num, den);
    let log_ratio = tape.sub(ln_p, ln_q);
    let terms = tape.add(log_ratio, frac);
    let s = tape.sum(terms);
    tape.offset(s, -0.5 * z as f64)
}

impl Model {
    pub fn prior_on(&self, tape: &mut Tape, context: Var, y_embed: Var) -> GaussianVars {
        let x = tape.concat(&[context, y_embed]);
        self.prior.forward(tape, x)
    }

    pub fn posterior_on(&self, tape: &mut Tape, context: Var, y_embed: Var, encoded_next: Var) -> GaussianVars {
        let x = tape.concat(&[context, y_embed, encoded_next]);
        self.posterior.forward(tape, x)
    }

    /// Classifier logits; `None` when the scenario has no classifier.
    pub fn classifier_on(&self, tape: &mut Tape, context: Var) -> Option<Var> {
        self.classifier.map(|c| c.forward(tape, context))
    }

    /// Prior over `z` given the context vector and label embedding.
    pub fn prior(&self, store: &ParamStore, context: &Tensor, y_embed: &Tensor) -> Result<GaussianParams> {
        self.check_context(context)?;
        self.check_label_embed(y_embed)?;
        let mut tape = Tape::new(store);
        let c = tape.input_tensor(context);
        let y = tape.input_tensor(y_embed);
        let g = self.prior_on(&mut tape, c, y);
        Ok(g.value(&tape))
    }

    /// Posterior over `z` given additionally the response's encoding.
    pub fn posterior(&self, store: &ParamStore, context: &Tensor, y_embed: &Tensor, encoded_next: &Tensor) -> Result<GaussianParams> {
        self.check_context(context)?;
        self.check_label_embed(y_embed)?;
        ensure!(
            encoded_next.len() == self.config.encoder_dim,
            "encoded response has length {}, expected {}",
            encoded_next.len(),
            self.config.encoder_dim
        );
        let mut tape = Tape::new(store);
        let c = tape.input_tensor(context);
        let y = tape.input_tensor(y_embed);
        let e = tape.input_tensor(encoded_next);
        let g = self.posterior_on(&mut tape, c, y, e);
        Ok(g.value(&tape))
    }

    /// Label distribution predicted from the context.
    pub fn classify_label(&self, store: &ParamStore, context: &Tensor) -> Result<LabelDistribution> {
        self.check_context(context)?;
        ensure!(
            self.classifier.is_some(),
            "the {:?} scenario has no label classifier",
            self.config.scenario
        );
        let mut tape = Tape::new(store);
        let c = tape.input_tensor(context);
        let logits = self.classifier_on(&mut tape, c).expect("classifier present");
        Ok(LabelDistribution::from_logits(tape.value(logits)))
    }

    fn check_context(&self, context: &Tensor) -> Result<()> {
        ensure!(
            context.len() == self.config.context_dim(),
            "context has length {}, expected {}",
            context.len(),
            self.config.context_dim()
        );
        Ok(())
    }

    fn check_label_embed(&self, y: &Tensor) -> Result<()> {
        ensure!(
            y.len() == self.config.label_dim,
            "label embedding has length {}, expected {}",
            y.len(),
            self.config.label_dim
        );
        Ok(())
    }
}
