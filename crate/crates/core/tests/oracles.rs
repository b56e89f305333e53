use condial_core::checkpoint::{Checkpoint, Provenance};
use condial_core::corpus::vocab::{EOU_ID, RESERVED};
use condial_core::corpus::{Dialog, Speaker, TokenId, Turn, Vocab};
use condial_core::latent::kl_diag_gauss;
use condial_core::numeric::{log_softmax, ParamStore, Tensor};
use condial_core::sphred::{decoder_inputs, ContextOrder, ContextState, Model, ModelConfig, Scenario};
use condial_core::training::{
    anneal_weight, example_rng, step_loss, train, word_dropout, Example, Progress, TrainConfig,
};

const V: usize = 14;

fn config(scenario: Scenario) -> ModelConfig {
    ModelConfig {
        embed_dim: 4,
        encoder_dim: 5,
        status_dim: 3,
        latent_dim: 2,
        label_dim: 3,
        decoder_dim: 4,
        mlp_dim: 5,
        init_scale: 0.4,
        ..ModelConfig::new(V, scenario)
    }
}

fn dialog(turns: &[&[&[TokenId]]]) -> Dialog<TokenId> {
    Dialog {
        turns: turns
            .iter()
            .map(|t| Turn {
                utterances: t.iter().map(|u| u.to_vec()).collect(),
            })
            .collect(),
    }
}

fn utterance_nll(model: &Model, store: &ParamStore, utt: &[TokenId], inputs: &[TokenId], cond: &Tensor) -> f64 {
    let logits = model.decode_logits(store, inputs, cond).unwrap();
    utt.iter()
        .enumerate()
        .map(|(i, &t)| -log_softmax(logits.row(i))[t as usize])
        .sum()
}

fn heads_context(model: &Model, ctx: &ContextState, next: Speaker) -> Tensor {
    match (model.config.context_order, next) {
        (ContextOrder::Responder, Speaker::B) => {
            let mut v = ctx.h_b.data().to_vec();
            v.extend_from_slice(ctx.h_a.data());
            Tensor::vector(v)
        }
        _ => ctx.context_vector(),
    }
}

#[test]
fn speaker_streams_match_two_independent_runs() {
    let (model, store) = Model::init(config(Scenario::Generic), 8).unwrap();
    let d = dialog(&[
        &[&[8, 9, EOU_ID]],
        &[&[10, EOU_ID]],
        &[&[11, 12, 13, EOU_ID]],
        &[&[9, EOU_ID], &[8, 8, EOU_ID]],
        &[&[13, EOU_ID]],
    ]);
    let h0 = Tensor::zeros(&[model.config.encoder_dim]);
    let mut only = [model.fresh_context(), model.fresh_context()];
    for k in 0..d.turns.len() {
        let full = model.encode_history(&store, &d.prefix(k + 1)).unwrap();
        let s = Speaker::of_turn(k);
        let enc = model
            .encode_utterance(&store, d.turns[k].utterances.last().unwrap(), &h0)
            .unwrap();
        let i = (k % 2) as usize;
        only[i] = model.update_context(&store, &only[i], &enc, s).unwrap();
        assert_eq!(full.h_a.data(), only[0].h_a.data(), "h_A after turn {k}");
        assert_eq!(full.h_b.data(), only[1].h_b.data(), "h_B after turn {k}");
    }
}

#[test]
fn two_turn_nll_factorizes() {
    for order in [ContextOrder::Fixed, ContextOrder::Responder] {
        let mut cfg = config(Scenario::Sentiment);
        cfg.context_order = order;
        let (model, store) = Model::init(cfg, 3).unwrap();
        let u0: &[TokenId] = &[8, 9, EOU_ID];
        let u1: &[TokenId] = &[10, 11, 12, EOU_ID];
        let d = dialog(&[&[u0], &[u1]]);
        let zs = vec![vec![0.3, -0.4], vec![-1.1, 0.2]];
        let labels = [2, 0];
        let got = model.sequence_nll(&store, &d, &zs, &labels).unwrap();

        let fresh = model.fresh_context();
        let c0 = model
            .cond_value(&store, &heads_context(&model, &fresh, Speaker::A), &Tensor::vector(zs[0].clone()), labels[0])
            .unwrap();
        let h0 = Tensor::zeros(&[model.config.encoder_dim]);
        let enc = model.encode_utterance(&store, u0, &h0).unwrap();
        let after = model.update_context(&store, &fresh, &enc, Speaker::A).unwrap();
        let c1 = model
            .cond_value(&store, &heads_context(&model, &after, Speaker::B), &Tensor::vector(zs[1].clone()), labels[1])
            .unwrap();
        let want = utterance_nll(&model, &store, u0, &decoder_inputs(u0), &c0)
            + utterance_nll(&model, &store, u1, &decoder_inputs(u1), &c1);
        assert!((got - want).abs() < 1e-9, "{order:?}: {got} vs {want}");
    }
}

/// The training objective recomputed from value-level pieces only.
fn straight_line_total(model: &Model, store: &ParamStore, batch: &[&Example], ids: &[usize], cfg: &TrainConfig, weight: f64, step: usize) -> f64 {
    let h0 = Tensor::zeros(&[model.config.encoder_dim]);
    let mut total = 0.0;
    let mut n = 0;
    for (ex, &id) in batch.iter().zip(ids) {
        let mut rng = example_rng(cfg.seed, step, id);
        let mut ctx = model.fresh_context();
        let mut u = 0;
        for (k, turn) in ex.dialog.turns.iter().enumerate() {
            let s = Speaker::of_turn(k);
            let context = heads_context(model, &ctx, s);
            for utt in &turn.utterances {
                let y = ex.labels[u];
                let y_emb = model.label_embedding_value(store, y);
                let enc = model.encode_utterance(store, utt, &h0).unwrap();
                let q = model.posterior(store, &context, &y_emb, &enc).unwrap();
                let p = model.prior(store, &context, &y_emb).unwrap();
                let kl = kl_diag_gauss(&q, &p).unwrap();
                let eps = rng.normals(model.config.latent_dim);
                let z: Vec<f64> = (0..eps.len()).map(|i| q.mu.data()[i] + q.sigma.data()[i] * eps[i]).collect();
                let gold = decoder_inputs(utt);
                let mut inputs = gold.clone();
                inputs[1..].copy_from_slice(&word_dropout(&gold[1..], cfg.word_dropout, &mut rng));
                let cond = model.cond_value(store, &context, &Tensor::vector(z), y).unwrap();
                let nll = utterance_nll(model, store, utt, &inputs, &cond);
                let class = if model.config.scenario.predicts_label() {
                    -model.classify_label(store, &context).unwrap().probs[y].ln()
                } else {
                    0.0
                };
                total += nll + weight * (kl + cfg.class_weight * class);
                n += 1;
                u += 1;
            }
            let enc = model
                .encode_utterance(store, turn.utterances.last().unwrap(), &h0)
                .unwrap();
            ctx = model.update_context(store, &ctx, &enc, s).unwrap();
        }
    }
    total / n as f64
}

#[test]
fn step_loss_matches_straight_line_oracle() {
    let a = dialog(&[&[&[8, 9, EOU_ID]], &[&[10, EOU_ID], &[11, 8, 12, EOU_ID]], &[&[9, EOU_ID]]]);
    let b = dialog(&[&[&[13, 13, EOU_ID]], &[&[8, EOU_ID]]]);
    for (scenario, order) in [
        (Scenario::Sentiment, ContextOrder::Fixed),
        (Scenario::Sentiment, ContextOrder::Responder),
        (Scenario::Generic, ContextOrder::Fixed),
    ] {
        let mut cfg = config(scenario);
        cfg.context_order = order;
        let k = cfg.num_labels();
        let (model, store) = Model::init(cfg, 21).unwrap();
        let ea = Example::new(a.clone(), vec![0, 1, 2 % k, 1]).unwrap();
        let eb = Example::new(b.clone(), vec![1, 0]).unwrap();
        let tc = TrainConfig {
            word_dropout: 0.25,
            class_weight: 1.7,
            seed: 11,
            ..TrainConfig::default()
        };
        let step = 3;
        let (loss, _) = step_loss(&model, &store, &[&ea, &eb], &[4, 7], &tc, 8, Progress { epoch: 1, step }).unwrap();
        let want = straight_line_total(&model, &store, &[&ea, &eb], &[4, 7], &tc, anneal_weight(step, 8), step);
        assert!((loss.total - want).abs() < 1e-9, "{scenario:?} {order:?}: {} vs {want}", loss.total);
        assert_eq!(loss.utterances, 6);
    }
}

fn toy_examples() -> Vec<Example> {
    let mut out = Vec::new();
    for i in 0..12u32 {
        let a = 8 + i % 3;
        let b = 11 + i % 3;
        let d = dialog(&[&[&[a, 8, EOU_ID]], &[&[b, EOU_ID]], &[&[a, b, EOU_ID]]]);
        out.push(Example::new(d, vec![(i % 2) as usize, 0, 1]).unwrap());
    }
    out
}

#[test]
fn training_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy_examples();
    let (train_set, val_set) = data.split_at(10);
    let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
    tokens.extend((RESERVED.len()..V).map(|i| format!("w{i}")));
    let vocab = Vocab::from_tokens(tokens).unwrap();
    let run = |tag: &str| {
        let (model, store) = Model::init(config(Scenario::Generic), 5).unwrap();
        let tc = TrainConfig {
            batch_size: 4,
            learning_rate: 1e-2,
            max_epochs: 3,
            seed: 9,
            ..TrainConfig::default()
        };
        let log = dir.path().join(format!("{tag}.tsv"));
        let out = train(&model, store, train_set, val_set, &tc, Some(&log)).unwrap();
        let prov = Provenance {
            best_epoch: out.best_epoch,
            best_val_total: out.best_val_total,
            epochs_run: out.metrics.len() - 1,
            steps: out.steps,
            train_config: Some(tc),
        };
        let ck = Checkpoint::new(&model, out.params, vocab.clone(), 5, prov).unwrap();
        (std::fs::read(&log).unwrap(), ck.to_bytes().unwrap())
    };
    let (log1, ck1) = run("a");
    let (log2, ck2) = run("b");
    assert_eq!(log1, log2);
    assert_eq!(ck1, ck2);
    assert_eq!(String::from_utf8(log1).unwrap().lines().count(), 4);
}
