//! Command-line entry points.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use condial_core::checkpoint::{Checkpoint, Provenance};
use condial_core::corpus::vocab::EOU;
use condial_core::corpus::{
    build_vocab, generic_labels, make_toy_corpus, parse_dialog, read_corpus, read_labels, tag_corpus_sentiment, tokenize,
    write_corpus, write_labels, PhraseList, SentimentRule, ToyCorpusSpec, Vocab,
};
use condial_core::decode::{generate_response, GenerationRequest, LabelMode, DEFAULT_BEAM, DEFAULT_MAX_LEN};
use condial_core::eval::{evaluate_pairs, label_accuracy, EmbeddingTable, EvalReport};
use condial_core::numeric::Rng;
use condial_core::session::render_response;
use condial_core::sphred::{ContextOrder, Model, ModelConfig, Scenario};
use condial_core::training::{encode_examples, split_validation, train, TrainConfig};

pub const CORPUS_FILE: &str = "corpus.txt";
pub const LABELS_FILE: &str = "labels.txt";
pub const VOCAB_FILE: &str = "vocab.txt";

/// A flag combination the command cannot honour.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(UsageError(msg.into()).into())
}

fn scenario_arg(n: u8) -> Result<Scenario> {
    match Scenario::from_number(n) {
        Some(s) => Ok(s),
        None => usage(format!("--scenario must be 1 or 2, got {n}")),
    }
}

#[derive(Debug, Parser)]
#[command(name = "condial", version, about = "Label-conditioned dialog generation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic or relabelled corpus with its vocabulary and labels.
    MakeCorpus(MakeCorpusArgs),
    /// Train a model and write the best-validation checkpoint.
    Train(TrainArgs),
    /// Generate one response per context line.
    Generate(GenerateArgs),
    /// Score responses against references.
    Evaluate(EvaluateArgs),
    /// Serve the HTTP chat API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct MakeCorpusArgs {
    /// Generate the synthetic help-desk corpus.
    #[arg(long, conflicts_with = "input")]
    pub toy: bool,
    /// Label an existing corpus file instead.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    pub dialogs: usize,
    #[arg(long)]
    pub scenario: u8,
    /// Sentiment propagation rule for scenario 2.
    #[arg(long, default_value_t = 1)]
    pub rule: u8,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Approximate number of distinct toy-grammar tokens.
    #[arg(long, default_value_t = 200)]
    pub vocab_size: usize,
    /// Vocabulary cap, reserved tokens excluded.
    #[arg(long, default_value_t = 20000)]
    pub max_vocab: usize,
    #[arg(long, default_value_t = 0.02)]
    pub generic_rate: f64,
    #[arg(long, default_value_t = 4)]
    pub min_turns: usize,
    #[arg(long, default_value_t = 8)]
    pub max_turns: usize,
    /// Generic phrase list, one phrase per line.
    #[arg(long)]
    pub phrases: Option<PathBuf>,
    #[arg(long, default_value = "data")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory holding corpus, labels and vocabulary files.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub scenario: u8,
    /// Checkpoint path; defaults to `<data>/model.ckpt`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Metrics log path; defaults to `<data>/metrics.tsv`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Small-corpus settings: batch 16, lr 3e-3, patience 3, label
    /// embedding 16, and in scenario 2 class weight 10, no KL ramp and
    /// responder-first context order.
    #[arg(long)]
    pub toy: bool,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub anneal_steps: Option<usize>,
    #[arg(long)]
    pub class_weight: Option<f64>,
    #[arg(long)]
    pub slice_len: Option<usize>,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    #[arg(long, default_value_t = 0.05)]
    pub val_fraction: f64,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub encoder_dim: Option<usize>,
    #[arg(long)]
    pub status_dim: Option<usize>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    pub label_dim: Option<usize>,
    #[arg(long)]
    pub decoder_dim: Option<usize>,
    #[arg(long)]
    pub mlp_dim: Option<usize>,
    /// One status GRU of width 2S instead of one per speaker.
    #[arg(long)]
    pub shared_status: bool,
    /// Order of the two status streams in the context seen by the heads.
    #[arg(long, value_enum)]
    pub context_order: Option<OrderArg>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OrderArg {
    /// Always [h_A; h_B].
    Fixed,
    /// The next speaker's stream first.
    Responder,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, env = "CONDIAL_CHECKPOINT")]
    pub checkpoint: PathBuf,
    /// Dialog histories, one per line in corpus format.
    #[arg(long)]
    pub contexts: PathBuf,
    #[arg(long, conflicts_with = "predict")]
    pub label: Option<usize>,
    /// Use the classifier's label (scenario 2).
    #[arg(long)]
    pub predict: bool,
    #[arg(long, default_value_t = DEFAULT_BEAM)]
    pub beam: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_LEN)]
    pub max_len: usize,
    /// Decode from the prior mean.
    #[arg(long)]
    pub det_z: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Supplies the vocabulary, scenario and default embeddings.
    #[arg(long, env = "CONDIAL_CHECKPOINT")]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub responses: PathBuf,
    #[arg(long)]
    pub references: PathBuf,
    /// Word vectors, `token v1 .. vE` per line.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Expected label per response line, for label accuracy.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub phrases: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "CONDIAL_CHECKPOINT")]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Append each session's transcript to `<dir>/<id>.jsonl`.
    #[arg(long)]
    pub transcripts: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::MakeCorpus(a) => make_corpus(&a),
        Command::Train(a) => train_cmd(&a),
        Command::Generate(a) => generate(&a),
        Command::Evaluate(a) => evaluate(&a),
        Command::Serve(a) => crate::server::serve_blocking(&a),
    }
}

fn phrase_list(path: Option<&Path>) -> Result<PhraseList> {
    Ok(match path {
        Some(p) => PhraseList::load(p)?,
        None => PhraseList::default(),
    })
}

pub fn make_corpus(a: &MakeCorpusArgs) -> Result<()> {
    let scenario = scenario_arg(a.scenario)?;
    let mut rng = Rng::seed(a.seed);
    let raw = match (&a.input, a.toy) {
        (Some(p), _) => read_corpus(p)?,
        (None, true) => {
            let spec = ToyCorpusSpec {
                vocab_size: a.vocab_size,
                dialogs: a.dialogs,
                min_turns: a.min_turns,
                max_turns: a.max_turns,
                generic_rate: a.generic_rate,
            };
            make_toy_corpus(&spec, &mut rng)?
        }
        (None, false) => return usage("give --toy or --input"),
    };
    let (dialogs, labels) = match scenario {
        Scenario::Generic => {
            let phrases = phrase_list(a.phrases.as_deref())?;
            let labels = generic_labels(&raw, &phrases);
            (raw, labels)
        }
        Scenario::Sentiment => {
            let Some(rule) = SentimentRule::from_number(a.rule) else {
                return usage(format!("--rule must be 1 or 2, got {}", a.rule));
            };
            tag_corpus_sentiment(&raw, rule, &mut rng)
        }
    };
    let vocab = build_vocab(dialogs.iter(), a.max_vocab);
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_corpus(&a.out.join(CORPUS_FILE), &dialogs)?;
    write_labels(&a.out.join(LABELS_FILE), &labels)?;
    vocab.save(&a.out.join(VOCAB_FILE))?;
    eprintln!(
        "wrote {} dialogs, {} vocabulary entries to {}",
        dialogs.len(),
        vocab.len(),
        a.out.display()
    );
    Ok(())
}

/// Resolves training and model settings from flags over the chosen preset.
pub fn train_settings(a: &TrainArgs, scenario: Scenario, vocab_size: usize) -> (TrainConfig, ModelConfig) {
    let mut tc = TrainConfig {
        seed: a.seed,
        ..TrainConfig::default()
    };
    let mut mc = ModelConfig::new(vocab_size, scenario);
    if a.toy {
        tc.batch_size = 16;
        tc.learning_rate = 3e-3;
        tc.patience = 3;
        mc.label_dim = 16;
        if scenario.predicts_label() {
            tc.class_weight = 10.0;
            tc.anneal_steps = Some(1);
            mc.context_order = ContextOrder::Responder;
        }
    }
    match a.context_order {
        Some(OrderArg::Fixed) => mc.context_order = ContextOrder::Fixed,
        Some(OrderArg::Responder) => mc.context_order = ContextOrder::Responder,
        None => {}
    }
    macro_rules! set {
        ($($flag:ident => $dst:expr),* $(,)?) => {
            $(if let Some(v) = a.$flag {
                $dst = v;
            })*
        };
    }
    set!(
        batch_size => tc.batch_size,
        lr => tc.learning_rate,
        epochs => tc.max_epochs,
        patience => tc.patience,
        dropout => tc.word_dropout,
        class_weight => tc.class_weight,
        slice_len => tc.slice_len,
        clip_norm => tc.clip_norm,
        embed_dim => mc.embed_dim,
        encoder_dim => mc.encoder_dim,
        status_dim => mc.status_dim,
        latent_dim => mc.latent_dim,
        label_dim => mc.label_dim,
        decoder_dim => mc.decoder_dim,
    );
    if let Some(n) = a.anneal_steps {
        tc.anneal_steps = Some(n);
    }
    match a.mlp_dim {
        Some(n) => mc.mlp_dim = n,
        None => mc.mlp_dim = 2 * mc.status_dim,
    }
    mc.shared_status = a.shared_status;
    (tc, mc)
}

pub fn train_cmd(a: &TrainArgs) -> Result<()> {
    let scenario = scenario_arg(a.scenario)?;
    let dialogs = read_corpus(&a.data.join(CORPUS_FILE))?;
    let labels = read_labels(&a.data.join(LABELS_FILE))?;
    let vocab = Vocab::load(&a.data.join(VOCAB_FILE))?;
    let k = scenario.num_labels();
    if let Some(bad) = labels.iter().flatten().find(|&&y| y >= k) {
        bail!("labels file holds label {bad}, outside the {k} labels of scenario {}", scenario.number());
    }
    let (tc, mc) = train_settings(a, scenario, vocab.len());
    let examples = encode_examples(&dialogs, &labels, &vocab)?;
    let (train_set, val_set) = split_validation(&examples, a.val_fraction)?;
    let (model, params) = Model::init(mc, a.seed)?;
    let log = a.log.clone().unwrap_or_else(|| a.data.join("metrics.tsv"));
    let out = a.out.clone().unwrap_or_else(|| a.data.join("model.ckpt"));
    eprintln!(
        "training on {} dialogs, validating on {}; log {}",
        train_set.len(),
        val_set.len(),
        log.display()
    );
    let outcome = train(&model, params, &train_set, &val_set, &tc, Some(&log))?;
    let provenance = Provenance {
        best_epoch: outcome.best_epoch,
        best_val_total: outcome.best_val_total,
        epochs_run: outcome.metrics.len() - 1,
        steps: outcome.steps,
        train_config: Some(tc),
    };
    Checkpoint::new(&model, outcome.params, vocab, a.seed, provenance)?.save(&out)?;
    eprintln!(
        "best epoch {} (validation loss {:.6}); checkpoint {}",
        outcome.best_epoch,
        outcome.best_val_total,
        out.display()
    );
    Ok(())
}

fn label_mode(scenario: Scenario, label: Option<usize>, predict: bool) -> Result<LabelMode> {
    match (label, predict) {
        (Some(y), _) if y >= scenario.num_labels() => usage(format!(
            "--label {y} is outside the {} labels of scenario {}",
            scenario.num_labels(),
            scenario.number()
        )),
        (Some(y), _) => Ok(LabelMode::Fixed(y)),
        (None, true) if !scenario.predicts_label() => {
            usage(format!("--predict is not available in scenario {}", scenario.number()))
        }
        (None, true) => Ok(LabelMode::Predict),
        (None, false) => usage("give --label or --predict"),
    }
}

pub fn generate(a: &GenerateArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let model = ck.model()?;
    let scenario = model.config.scenario;
    let mode = label_mode(scenario, a.label, a.predict)?;
    let text = fs::read_to_string(&a.contexts).with_context(|| format!("reading {}", a.contexts.display()))?;
    let mut out = String::new();
    for (i, line) in text.lines().enumerate() {
        let history = parse_dialog(line).with_context(|| format!("{}:{}", a.contexts.display(), i + 1))?;
        let mut req = GenerationRequest::new(ck.vocab.encode_dialog(&history), scenario, mode);
        req.beam = a.beam;
        req.max_len = a.max_len;
        req.deterministic_z = a.det_z;
        req.seed = Rng::derived(a.seed, &[i as u64]).next_u64();
        let g = generate_response(&model, &ck.params, &req)?;
        out.push_str(&render_response(&g.tokens, &ck.vocab));
        out.push('\n');
    }
    match &a.out {
        Some(p) => fs::write(p, out).with_context(|| format!("writing {}", p.display()))?,
        None => std::io::stdout().write_all(out.as_bytes())?,
    }
    Ok(())
}

/// Tokenized response lines, trailing terminators dropped.
pub fn read_responses(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text
        .lines()
        .map(|l| {
            let mut t = tokenize(l);
            if t.last().map(String::as_str) == Some(EOU) {
                t.pop();
            }
            t
        })
        .collect())
}

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let report = evaluation_report(a)?;
    println!("{}", report.tsv_line());
    print!("{report}");
    Ok(())
}

pub fn evaluation_report(a: &EvaluateArgs) -> Result<EvalReport> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let model = ck.model()?;
    let scenario = model.config.scenario;
    let responses = read_responses(&a.responses)?;
    let references = read_responses(&a.references)?;
    let emb = match &a.embeddings {
        Some(p) => EmbeddingTable::from_file(p, &ck.vocab, scenario)?,
        None => EmbeddingTable::from_model(&model, &ck.params),
    };
    let ids = |rows: &[Vec<String>]| rows.iter().map(|r| ck.vocab.encode(r)).collect::<Vec<_>>();
    let mut report = evaluate_pairs(&ids(&responses), &ids(&references), &emb)?;
    if let Some(p) = &a.labels {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let expected = text
            .lines()
            .enumerate()
            .map(|(i, l)| {
                l.trim()
                    .parse::<usize>()
                    .with_context(|| format!("{}:{}: bad label {l:?}", p.display(), i + 1))
            })
            .collect::<Result<Vec<_>>>()?;
        let phrases = phrase_list(a.phrases.as_deref())?;
        report.accuracy = Some(label_accuracy(&responses, &expected, scenario, &phrases)?);
    }
    Ok(report)
}
