//! Release gate: one test per shipping criterion. Each test ends with a
//! single `criterion NN PASS` line carrying its measured numbers, visible
//! under `--nocapture`.

use std::collections::HashMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mhred::data::{
    encode_examples, extract_examples, make_batches, render_example, synthesize_corpus,
    CorpusStyle, DialogueTranscript, ExtractedExample, ExtractionMode, FeatureStore,
    Speaker, Turn, Vocabulary,
};
use mhred::eval::{bleu4_sentence, bootstrap_compare, meteor_lite, rouge_l};
use mhred::gradcheck::check_gradients;
use mhred::model::{
    Batch, DecodeMode, Model, ModelConfig, TurnInput, RESERVED_TOKENS,
};
use mhred::tensor::{Graph, NodeId, SharedTensor, Tensor};
use mhred::train::{fit, TrainConfig};
use mhred::Result;

fn pass(criterion: usize, detail: String) {
    println!("criterion {criterion:02} PASS: {detail}");
}

fn toy_config() -> ModelConfig {
    ModelConfig {
        vocab_size: 11,
        emb_dim: 8,
        hid_dim: 8,
        img_dim: 12,
        max_images_per_turn: 2,
        context_size: 2,
        multimodal: true,
        use_attention: true,
        bidirectional_encoder: true,
        tied_embeddings: true,
        max_decode_len: 8,
        attend_last_turn_only: false,
    }
}

fn random_batch(config: &ModelConfig, batch: usize, seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = config.vocab_size;
    let mut turns = Vec::new();
    for _ in 0..config.context_size {
        let tokens: Vec<Vec<usize>> = (0..batch)
            .map(|_| {
                let len = rng.random_range(2..5);
                (0..len)
                    .map(|_| rng.random_range(RESERVED_TOKENS..vocab))
                    .collect()
            })
            .collect();
        let images: Vec<Vec<Vec<f64>>> = (0..batch)
            .map(|_| {
                let count = rng.random_range(1..=config.max_images_per_turn);
                (0..count)
                    .map(|_| {
                        (0..config.img_dim)
                            .map(|_| rng.random_range(-1.0..1.0))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        turns.push(TurnInput { tokens, images });
    }
    let targets: Vec<Vec<usize>> = (0..batch)
        .map(|_| {
            let len = rng.random_range(2..5);
            (0..len)
                .map(|_| rng.random_range(RESERVED_TOKENS..vocab))
                .collect()
        })
        .collect();
    Batch { turns, targets }
}

fn leaf_param(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> SharedTensor {
    let len = shape.iter().product();
    let data: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
    SharedTensor::new(Tensor::from_vec(shape, data).unwrap().with_grad())
}

#[test]
fn criterion_01_gradients_match_finite_differences() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut op_results: Vec<(&str, f64)> = Vec::new();
    let mut check = |name: &'static str,
                     params: Vec<SharedTensor>,
                     f: &mut dyn FnMut(&mut Graph, &[NodeId]) -> Result<NodeId>| {
        let named: Vec<(String, SharedTensor)> = params
            .iter()
            .enumerate()
            .map(|(i, p)| (format!("{name}.{i}"), p.clone()))
            .collect();
        let report = check_gradients(
            &named,
            || {
                let mut g = Graph::new();
                let leaves: Vec<NodeId> = params.iter().map(|p| g.leaf(p)).collect();
                let out = f(&mut g, &leaves)?;
                let loss = g.sum_all(out);
                g.backward(loss)?;
                Ok(g.scalar(loss))
            },
            1e-5,
        )
        .unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(
            report.max_rel_err <= 1e-4,
            "{name}: rel err {} at {}[{}]",
            report.max_rel_err,
            report.worst_param,
            report.worst_index
        );
        op_results.push((name, report.max_rel_err));
    };

    let weight = Tensor::from_vec(
        vec![3, 4],
        (0..12).map(|i| (i as f64 * 0.37).sin()).collect(),
    )
    .unwrap();
    let w34 = weight.clone();
    check(
        "matmul",
        vec![leaf_param(&mut rng, vec![2, 3]), leaf_param(&mut rng, vec![3, 4])],
        &mut |g, l| g.matmul(l[0], l[1]),
    );
    check(
        "add",
        vec![leaf_param(&mut rng, vec![2, 3]), leaf_param(&mut rng, vec![2, 3])],
        &mut |g, l| g.add(l[0], l[1]),
    );
    check(
        "sub",
        vec![leaf_param(&mut rng, vec![2, 3]), leaf_param(&mut rng, vec![2, 3])],
        &mut |g, l| g.sub(l[0], l[1]),
    );
    check(
        "mul",
        vec![leaf_param(&mut rng, vec![2, 3]), leaf_param(&mut rng, vec![2, 3])],
        &mut |g, l| g.mul(l[0], l[1]),
    );
    check(
        "add_bias",
        vec![leaf_param(&mut rng, vec![3, 4]), leaf_param(&mut rng, vec![1, 4])],
        &mut |g, l| g.add_bias(l[0], l[1]),
    );
    check(
        "sigmoid",
        vec![leaf_param(&mut rng, vec![2, 5])],
        &mut |g, l| Ok(g.sigmoid(l[0])),
    );
    check(
        "tanh",
        vec![leaf_param(&mut rng, vec![2, 5])],
        &mut |g, l| Ok(g.tanh(l[0])),
    );
    check(
        "scale",
        vec![leaf_param(&mut rng, vec![2, 5])],
        &mut |g, l| Ok(g.scale(l[0], -1.7)),
    );
    check(
        "concat_rows",
        vec![leaf_param(&mut rng, vec![2, 3]), leaf_param(&mut rng, vec![1, 3])],
        &mut |g, l| {
            let c = g.concat(&[l[0], l[1]], 0)?;
            Ok(g.tanh(c))
        },
    );
    check(
        "concat_cols",
        vec![leaf_param(&mut rng, vec![2, 2]), leaf_param(&mut rng, vec![2, 3])],
        &mut |g, l| {
            let c = g.concat(&[l[0], l[1]], 1)?;
            Ok(g.tanh(c))
        },
    );
    check(
        "reshape",
        vec![leaf_param(&mut rng, vec![2, 6])],
        &mut |g, l| {
            let r = g.reshape(l[0], vec![3, 4])?;
            let c = g.constant(w34.clone());
            g.mul(r, c)
        },
    );
    let sm_weight = w34.clone();
    check(
        "softmax_rows",
        vec![leaf_param(&mut rng, vec![3, 4])],
        &mut |g, l| {
            let s = g.softmax_rows(l[0])?;
            let c = g.constant(sm_weight.clone());
            g.mul(s, c)
        },
    );
    check(
        "gather_rows",
        vec![leaf_param(&mut rng, vec![7, 3])],
        &mut |g, l| {
            let rows = g.gather_rows(l[0], &[0, 3, 3, 6, 2])?;
            Ok(g.tanh(rows))
        },
    );
    check(
        "batch_dot",
        vec![leaf_param(&mut rng, vec![2, 4]), leaf_param(&mut rng, vec![2, 3, 4])],
        &mut |g, l| {
            let d = g.batch_dot(l[0], l[1])?;
            Ok(g.tanh(d))
        },
    );
    check(
        "batch_weighted_sum",
        vec![leaf_param(&mut rng, vec![2, 3]), leaf_param(&mut rng, vec![2, 3, 4])],
        &mut |g, l| {
            let s = g.batch_weighted_sum(l[0], l[1])?;
            Ok(g.tanh(s))
        },
    );
    check(
        "softmax_cross_entropy",
        vec![leaf_param(&mut rng, vec![4, 5])],
        &mut |g, l| g.softmax_cross_entropy(l[0], &[0, 2, 4, 1], &[1.0, 1.0, 0.0, 1.0]),
    );

    let model = Model::new(toy_config(), 6).unwrap();
    for (_, p) in model.named_params() {
        p.borrow_mut().data_mut().iter_mut().for_each(|v| *v *= 8.0);
    }
    let batch = random_batch(&model.config, 3, 1);
    let report = check_gradients(
        &model.named_params(),
        || {
            let mut g = Graph::new();
            let decoded = model.batch_loss(&mut g, &batch)?;
            g.backward(decoded.loss)?;
            Ok(g.scalar(decoded.loss))
        },
        1e-5,
    )
    .unwrap();
    assert!(
        report.max_rel_err <= 1e-4,
        "model loss: rel err {} at {}[{}]",
        report.max_rel_err,
        report.worst_param,
        report.worst_index
    );

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "took {elapsed:.1}s, budget is 60s");
    let worst_op = op_results
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    pass(
        1,
        format!(
            "{} ops worst rel err {:.2e} ({}), full loss over {} params rel err {:.2e}, in {elapsed:.1}s",
            op_results.len(),
            worst_op.1,
            worst_op.0,
            report.checked,
            report.max_rel_err
        ),
    );
}

#[test]
fn criterion_02_boundary_states_hold_exactly() {
    let mut checked = 0usize;
    for model_seed in [42, 7] {
        let model = Model::new(toy_config(), model_seed).unwrap();
        for batch_seed in [7, 19, 23] {
            let batch = random_batch(&model.config, 3, batch_seed);
            let mut g = Graph::new();
            let enc = model.encode_context(&mut g, &batch).unwrap();
            assert!(g.data(enc.encoder_initial).iter().all(|&v| v == 0.0));
            assert!(g.data(enc.context_initial).iter().all(|&v| v == 0.0));
            assert_eq!(*enc.context_states.last().unwrap(), enc.context_final);
            let decoded = model
                .decode_teacher_forced(&mut g, &enc, &batch.targets)
                .unwrap();
            assert_eq!(decoded.decoder_initial, enc.context_final);
            assert_eq!(
                g.data(decoded.decoder_initial),
                g.data(enc.context_final)
            );
            checked += 1;
        }
    }
    pass(
        2,
        format!("zero initial text/context states and decoder start = final context state on {checked} random inputs"),
    );
}

fn text_pipeline(
    sessions: &[DialogueTranscript],
    context_size: usize,
) -> (Vec<ExtractedExample>, Vocabulary) {
    let examples: Vec<ExtractedExample> = sessions
        .iter()
        .flat_map(|s| extract_examples(s, context_size, ExtractionMode::Aggregated).unwrap())
        .collect();
    let seqs: Vec<Vec<String>> = examples
        .iter()
        .flat_map(|e| {
            e.context
                .iter()
                .map(|t| t.tokens.clone())
                .chain([e.target_tokens.clone()])
        })
        .collect();
    let vocabulary = Vocabulary::build(seqs.iter(), 1);
    (examples, vocabulary)
}

#[test]
fn criterion_03_toy_corpus_is_memorized_within_budget() {
    let start = Instant::now();
    let (sessions, store) = synthesize_corpus(4, 20, CorpusStyle::TextDriven, 4).unwrap();
    let (examples, vocabulary) = text_pipeline(&sessions, 5);
    assert_eq!(examples.len(), 20);
    let encoded = encode_examples(&examples, &vocabulary, &store, 5);
    let units = make_batches(&encoded, 1).unwrap();
    let config = ModelConfig {
        vocab_size: vocabulary.len(),
        emb_dim: 32,
        hid_dim: 32,
        img_dim: 4,
        max_images_per_turn: 2,
        context_size: 5,
        multimodal: false,
        use_attention: true,
        bidirectional_encoder: true,
        tied_embeddings: true,
        max_decode_len: 16,
        attend_last_turn_only: false,
    };
    let model = Model::new(config, 1).unwrap();
    let train_config = TrainConfig {
        learning_rate: 0.02,
        batch_size: 4,
        max_epochs: 400,
        patience: 400,
        seed: 1,
        ..TrainConfig::default()
    };
    let outcome = fit(&model, &units, &units, &train_config).unwrap();
    let steps = outcome.history.len() * units.len().div_ceil(train_config.batch_size);
    assert!(steps <= 2000, "{steps} optimizer steps exceed the 2000 budget");

    let merged = Batch::merge(units.iter()).unwrap();
    let accuracy = model
        .teacher_forced_accuracy(std::slice::from_ref(&merged))
        .unwrap();
    assert!(accuracy >= 0.99, "teacher-forced accuracy {accuracy:.4}");

    let mut g = Graph::new();
    let enc = model.encode_context(&mut g, &merged).unwrap();
    let generated = model.generate(&mut g, &enc, DecodeMode::Greedy).unwrap();
    let verbatim = generated
        .iter()
        .zip(&encoded)
        .filter(|(hyp, ex)| **hyp == ex.target_ids)
        .count();
    assert!(verbatim >= 18, "only {verbatim}/20 regenerated verbatim");

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 300.0, "took {elapsed:.1}s, budget is 300s");
    pass(
        3,
        format!("accuracy {accuracy:.4}, {verbatim}/20 verbatim, {steps} steps, in {elapsed:.1}s"),
    );
}

#[test]
fn criterion_04_text_only_models_are_bitwise_image_independent() {
    let mut config = toy_config();
    config.multimodal = false;
    let model = Model::new(config, 3).unwrap();
    let batch = random_batch(&model.config, 3, 11);

    let mut scrambled = batch.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for turn in &mut scrambled.turns {
        for images in &mut turn.images {
            *images = (0..model.config.max_images_per_turn)
                .map(|_| {
                    (0..model.config.img_dim)
                        .map(|_| rng.random_range(-5.0..5.0))
                        .collect()
                })
                .collect();
        }
    }

    let run = |b: &Batch| {
        let mut g = Graph::new();
        let enc = model.encode_context(&mut g, b).unwrap();
        assert!(enc.turn_image_encodings.is_none());
        let decoded = model
            .decode_teacher_forced(&mut g, &enc, &b.targets)
            .unwrap();
        let loss_bits = g.scalar(decoded.loss).to_bits();
        let logit_bits: Vec<u64> = decoded
            .step_logits
            .iter()
            .flat_map(|l| g.data(*l).iter().map(|v| v.to_bits()).collect::<Vec<_>>())
            .collect();
        let generated = model.generate(&mut g, &enc, DecodeMode::Greedy).unwrap();
        (loss_bits, logit_bits, generated)
    };
    let original = run(&batch);
    let replaced = run(&scrambled);
    assert_eq!(original.0, replaced.0);
    assert_eq!(original.1, replaced.1);
    assert_eq!(original.2, replaced.2);
    pass(
        4,
        format!(
            "loss, {} logit entries, and generations identical to the last bit under random image swaps",
            original.1.len()
        ),
    );
}

#[test]
fn criterion_05_imageless_turns_equal_explicit_zero_features() {
    let model = Model::new(toy_config(), 5).unwrap();
    let mut imageless = random_batch(&model.config, 2, 13);
    for turn in &mut imageless.turns {
        for images in &mut turn.images {
            images.clear();
        }
    }
    let run = |b: &Batch| {
        let mut g = Graph::new();
        let enc = model.encode_context(&mut g, b).unwrap();
        let h_img_bits: Vec<u64> = enc
            .turn_image_encodings
            .as_ref()
            .unwrap()
            .iter()
            .flat_map(|n| g.data(*n).iter().map(|v| v.to_bits()).collect::<Vec<_>>())
            .collect();
        let decoded = model
            .decode_teacher_forced(&mut g, &enc, &b.targets)
            .unwrap();
        (h_img_bits, g.scalar(decoded.loss).to_bits())
    };
    let baseline = run(&imageless);
    for zero_count in 1..=model.config.max_images_per_turn {
        let mut zeroed = imageless.clone();
        for turn in &mut zeroed.turns {
            for images in &mut turn.images {
                *images = vec![vec![0.0; model.config.img_dim]; zero_count];
            }
        }
        assert_eq!(baseline, run(&zeroed), "{zero_count} zero vectors");
    }
    pass(
        5,
        format!(
            "image encodings and loss bitwise equal for missing images and 1..={} explicit zero vectors",
            model.config.max_images_per_turn
        ),
    );
}

fn gap_model_config(
    vocab_size: usize,
    img_dim: usize,
    context_size: usize,
    multimodal: bool,
) -> ModelConfig {
    ModelConfig {
        vocab_size,
        emb_dim: 32,
        hid_dim: 32,
        img_dim,
        max_images_per_turn: 5,
        context_size,
        multimodal,
        use_attention: true,
        bidirectional_encoder: true,
        tied_embeddings: true,
        max_decode_len: 16,
        attend_last_turn_only: false,
    }
}

fn train_and_score_heldout(
    train_examples: &[ExtractedExample],
    held_examples: &[ExtractedExample],
    store: &FeatureStore,
    config_of: impl Fn(usize) -> ModelConfig,
    learning_rate: f64,
    max_epochs: usize,
) -> Vec<f64> {
    let seqs: Vec<Vec<String>> = train_examples
        .iter()
        .flat_map(|e| {
            e.context
                .iter()
                .map(|t| t.tokens.clone())
                .chain([e.target_tokens.clone()])
        })
        .collect();
    let vocabulary = Vocabulary::build(seqs.iter(), 1);
    let encoded_train = encode_examples(train_examples, &vocabulary, store, 5);
    let encoded_held = encode_examples(held_examples, &vocabulary, store, 5);
    let units = make_batches(&encoded_train, 1).unwrap();
    let model = Model::new(config_of(vocabulary.len()), 1).unwrap();
    let train_config = TrainConfig {
        learning_rate,
        batch_size: 8,
        max_epochs,
        patience: max_epochs,
        seed: 1,
        ..TrainConfig::default()
    };
    fit(&model, &units, &units, &train_config).unwrap();

    let held_batch = Batch::merge(make_batches(&encoded_held, 1).unwrap().iter()).unwrap();
    let mut g = Graph::new();
    let enc = model.encode_context(&mut g, &held_batch).unwrap();
    let hyps = model.generate(&mut g, &enc, DecodeMode::Greedy).unwrap();
    hyps.iter()
        .zip(held_examples)
        .map(|(hyp_ids, ex)| {
            let hyp = vocabulary.decode(hyp_ids).unwrap();
            bleu4_sentence(&hyp, &ex.target_tokens)
        })
        .collect()
}

#[test]
fn criterion_06_image_grounding_lifts_heldout_bleu() {
    let start = Instant::now();
    let (sessions, store) = synthesize_corpus(11, 104, CorpusStyle::ImageDriven, 16).unwrap();
    let (train_sessions, held_sessions) = sessions.split_at(80);
    let extract = |part: &[DialogueTranscript]| -> Vec<ExtractedExample> {
        part.iter()
            .flat_map(|s| extract_examples(s, 2, ExtractionMode::Aggregated).unwrap())
            .collect()
    };
    let train_examples = extract(train_sessions);
    let held_examples = extract(held_sessions);

    let score = |multimodal: bool| {
        train_and_score_heldout(
            &train_examples,
            &held_examples,
            &store,
            |vocab| gap_model_config(vocab, 16, 2, multimodal),
            0.02,
            150,
        )
    };
    let multimodal_scores = score(true);
    let text_only_scores = score(false);
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let (mean_m, mean_t) = (mean(&multimodal_scores), mean(&text_only_scores));
    let gap = mean_m - mean_t;
    assert!(
        gap >= 0.10,
        "multimodal {mean_m:.4} vs text-only {mean_t:.4}: gap {:.1} points",
        gap * 100.0
    );
    let verdict = bootstrap_compare(&multimodal_scores, &text_only_scores, 1000, 0).unwrap();
    assert!(verdict.significant, "win fraction {}", verdict.win_fraction_a);
    assert!(verdict.win_fraction_a >= 0.95);

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 900.0, "took {elapsed:.1}s, budget is 900s");
    pass(
        6,
        format!(
            "held-out BLEU-4 {mean_m:.4} vs {mean_t:.4} (gap {:.1} points), win fraction {:.3}, significant, in {elapsed:.1}s",
            gap * 100.0,
            verdict.win_fraction_a
        ),
    );
}

#[test]
fn criterion_07_longer_context_lifts_heldout_bleu() {
    let start = Instant::now();
    let (sessions, store) = synthesize_corpus(11, 184, CorpusStyle::TextDriven, 4).unwrap();
    let (train_sessions, held_sessions) = sessions.split_at(160);
    let extract = |part: &[DialogueTranscript], cxt: usize| -> Vec<ExtractedExample> {
        part.iter()
            .flat_map(|s| extract_examples(s, cxt, ExtractionMode::Aggregated).unwrap())
            .collect()
    };
    let score = |cxt: usize| {
        train_and_score_heldout(
            &extract(train_sessions, cxt),
            &extract(held_sessions, cxt),
            &store,
            |vocab| gap_model_config(vocab, 4, cxt, false),
            0.01,
            300,
        )
    };
    let wide_scores = score(5);
    let narrow_scores = score(2);
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let (mean_wide, mean_narrow) = (mean(&wide_scores), mean(&narrow_scores));
    let gap = mean_wide - mean_narrow;
    assert!(
        gap >= 0.10,
        "context 5 {mean_wide:.4} vs context 2 {mean_narrow:.4}: gap {:.1} points",
        gap * 100.0
    );
    let elapsed = start.elapsed().as_secs_f64();
    pass(
        7,
        format!(
            "held-out BLEU-4 {mean_wide:.4} at context 5 vs {mean_narrow:.4} at context 2 (gap {:.1} points), in {elapsed:.1}s",
            gap * 100.0
        ),
    );
}

fn oracle_ngrams(tokens: &[String], n: usize) -> HashMap<Vec<String>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for window in tokens.windows(n) {
            *counts.entry(window.to_vec()).or_insert(0) += 1;
        }
    }
    counts
}

fn oracle_bleu4(hypothesis: &[String], reference: &[String]) -> f64 {
    if hypothesis.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let hyp = oracle_ngrams(hypothesis, n);
        let reference = oracle_ngrams(reference, n);
        let total: usize = hyp.values().sum();
        let matched: usize = hyp
            .iter()
            .map(|(gram, &c)| c.min(reference.get(gram).copied().unwrap_or(0)))
            .sum();
        let precision = if n == 1 {
            if matched == 0 {
                return 0.0;
            }
            matched as f64 / total as f64
        } else {
            (matched as f64 + 1.0) / (total as f64 + 1.0)
        };
        log_sum += precision.ln();
    }
    let brevity = if hypothesis.len() < reference.len() {
        (1.0 - reference.len() as f64 / hypothesis.len() as f64).exp()
    } else {
        1.0
    };
    brevity * (log_sum / 4.0).exp()
}

fn oracle_lcs(a: &[String], b: &[String]) -> usize {
    if a.is_empty() || b.is_empty() {
        0
    } else if a[a.len() - 1] == b[b.len() - 1] {
        1 + oracle_lcs(&a[..a.len() - 1], &b[..b.len() - 1])
    } else {
        oracle_lcs(&a[..a.len() - 1], b).max(oracle_lcs(a, &b[..b.len() - 1]))
    }
}

fn oracle_rouge_l(hypothesis: &[String], reference: &[String]) -> f64 {
    if hypothesis.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let lcs = oracle_lcs(hypothesis, reference) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let precision = lcs / hypothesis.len() as f64;
    let recall = lcs / reference.len() as f64;
    let beta_sq = 1.2f64 * 1.2;
    (1.0 + beta_sq) * precision * recall / (recall + beta_sq * precision)
}

fn random_sentence(rng: &mut ChaCha8Rng, vocab: &[&str], max_len: usize) -> Vec<String> {
    let len = rng.random_range(0..=max_len);
    (0..len)
        .map(|_| vocab[rng.random_range(0..vocab.len())].to_string())
        .collect()
}

#[test]
fn criterion_08_metrics_agree_with_independent_oracles() {
    let vocab = ["the", "cat", "sat", "on", "a", "mat", "dog", "ran"];
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut worst_bleu = 0.0f64;
    let mut worst_rouge = 0.0f64;
    for _ in 0..200 {
        let hyp = random_sentence(&mut rng, &vocab, 10);
        let reference = random_sentence(&mut rng, &vocab, 10);
        let bleu_diff = (bleu4_sentence(&hyp, &reference) - oracle_bleu4(&hyp, &reference)).abs();
        worst_bleu = worst_bleu.max(bleu_diff);
        let short_hyp = &hyp[..hyp.len().min(8)];
        let short_ref = &reference[..reference.len().min(8)];
        let rouge_diff = (rouge_l(short_hyp, short_ref) - oracle_rouge_l(short_hyp, short_ref)).abs();
        worst_rouge = worst_rouge.max(rouge_diff);
    }
    assert!(worst_bleu <= 1e-12, "BLEU-4 disagrees by {worst_bleu:.3e}");
    assert!(worst_rouge <= 1e-12, "ROUGE-L disagrees by {worst_rouge:.3e}");

    let two = |s: &str| -> Vec<String> { s.split(' ').map(str::to_string).collect() };
    let example = rouge_l(&two("the cat"), &two("the cat sat"));
    assert!((example - 0.7722).abs() < 1e-4, "got {example:.6}");

    for _ in 0..20 {
        let sentence = {
            let s = random_sentence(&mut rng, &vocab, 9);
            if s.is_empty() {
                vec!["mat".to_string()]
            } else {
                s
            }
        };
        assert_eq!(bleu4_sentence(&sentence, &sentence), 1.0);
        assert_eq!(rouge_l(&sentence, &sentence), 1.0);
        let len = sentence.len() as f64;
        let identity = 1.0 - 0.5 / (len * len * len);
        assert!((meteor_lite(&sentence, &sentence) - identity).abs() <= 1e-15);
    }

    for trial_seed in 0..100 {
        let scores: Vec<f64> = (0..40).map(|_| rng.random_range(0.0..1.0)).collect();
        let verdict = bootstrap_compare(&scores, &scores, 1000, trial_seed).unwrap();
        assert!(!verdict.significant, "seed {trial_seed}");
        assert_eq!(verdict.win_fraction_a, 0.0);
    }
    pass(
        8,
        format!(
            "200 oracle cases within {worst_bleu:.1e} (BLEU) and {worst_rouge:.1e} (ROUGE), worked example {example:.4}, identities exact, 100 self-comparisons non-significant"
        ),
    );
}

fn image_catalogue_session() -> DialogueTranscript {
    DialogueTranscript {
        session_id: "catalogue".into(),
        turns: vec![
            Turn {
                speaker: Speaker::Agent,
                text: "Sorry i don't think i have any 100 % acrylic but i can show \
                       you in knit"
                    .into(),
                image_ids: (1..=5).map(|i| format!("Img {i}")).collect(),
            },
            Turn {
                speaker: Speaker::User,
                text: "Show me something similar to the 4th image but with the \
                       material different"
                    .into(),
                image_ids: vec![],
            },
            Turn {
                speaker: Speaker::Agent,
                text: "The similar looking ones are".into(),
                image_ids: vec![],
            },
        ],
    }
}

#[test]
fn criterion_09_context_layouts_match_the_golden_files() {
    let session = image_catalogue_session();
    let mut rendered = Vec::new();
    for mode in [ExtractionMode::Aggregated, ExtractionMode::Unrolled] {
        let examples = extract_examples(&session, 2, mode).unwrap();
        let example = examples.iter().find(|e| e.target_turn == 2).unwrap();
        rendered.push(render_example(example, mode, 5));
    }
    let aggregated_golden = include_str!("golden/catalogue_aggregated.txt");
    let unrolled_golden = include_str!("golden/catalogue_unrolled.txt");
    assert_eq!(rendered[0].as_bytes(), aggregated_golden.as_bytes());
    assert_eq!(rendered[1].as_bytes(), unrolled_golden.as_bytes());
    pass(
        9,
        format!(
            "aggregated and unrolled renderings byte-equal to their golden files ({} and {} bytes)",
            aggregated_golden.len(),
            unrolled_golden.len()
        ),
    );
}

#[test]
fn criterion_10_full_scale_configuration_runs_unchanged() {
    let full = ModelConfig::full_scale(24);
    assert_eq!(
        (full.emb_dim, full.hid_dim, full.img_dim, full.context_size),
        (512, 512, 4096, 5)
    );
    full.validate().unwrap();
    let model = Model::new(full, 0).unwrap();
    let batch = random_batch(&model.config, 1, 2);
    let mut g = Graph::new();
    let decoded = model.batch_loss(&mut g, &batch).unwrap();
    g.backward(decoded.loss).unwrap();
    assert!(g.scalar(decoded.loss).is_finite());

    let mut matrix_runs = 0usize;
    for multimodal in [false, true] {
        for use_attention in [false, true] {
            for context_size in [2, 5] {
                let config = ModelConfig {
                    vocab_size: 24,
                    emb_dim: 12,
                    hid_dim: 12,
                    img_dim: 16,
                    max_images_per_turn: 5,
                    context_size,
                    multimodal,
                    use_attention,
                    bidirectional_encoder: true,
                    tied_embeddings: true,
                    max_decode_len: 8,
                    attend_last_turn_only: false,
                };
                let variant = Model::new(config, 0).unwrap();
                let batch = random_batch(&variant.config, 2, 3);
                let mut g = Graph::new();
                let decoded = variant.batch_loss(&mut g, &batch).unwrap();
                g.backward(decoded.loss).unwrap();
                let enc = variant.encode_context(&mut g, &batch).unwrap();
                variant.generate(&mut g, &enc, DecodeMode::Greedy).unwrap();
                matrix_runs += 1;
            }
        }
    }
    assert_eq!(matrix_runs, 8);
    pass(
        10,
        format!(
            "full-scale dims train and all {matrix_runs} variant configurations run end to end; absolute full-corpus scores are out of scope at desk scale and are not asserted"
        ),
    );
}
