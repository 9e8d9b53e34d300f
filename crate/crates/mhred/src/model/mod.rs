//! Hierarchical encoder-decoder over text+image dialogue context.
//!
//! A batch flows through four stages, each on the same graph: every context
//! turn's tokens run through the utterance encoder (initial state zero), each
//! turn's image features collapse through one linear layer, the per-turn
//! `[text, image]` pairs drive the context GRU (initial state zero), and the
//! decoder starts from the final context state to produce the response.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rnn::{
    bigru_encode, gru_step, luong_attend, run_sequence, AttentionParams, GruParams,
};
use crate::tensor::{Graph, NodeId, SharedTensor, Tensor};

pub const BOS_ID: usize = 0;
pub const EOS_ID: usize = 1;
pub const PAD_ID: usize = 2;
pub const UNK_ID: usize = 3;
/// Number of reserved vocabulary ids (BOS, EOS, PAD, UNK).
pub const RESERVED_TOKENS: usize = 4;

const INIT_RANGE: f64 = 0.08;

fn default_max_images() -> usize {
    5
}

fn default_false() -> bool {
    false
}

/// Architecture hyperparameters; fully determines parameter shapes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub emb_dim: usize,
    pub hid_dim: usize,
    pub img_dim: usize,
    /// Image slots per turn; extra images are dropped with a warning.
    #[serde(default = "default_max_images")]
    pub max_images_per_turn: usize,
    pub context_size: usize,
    /// False builds the text-only variant that ignores images entirely.
    pub multimodal: bool,
    pub use_attention: bool,
    pub bidirectional_encoder: bool,
    pub tied_embeddings: bool,
    /// Hard cap on decoded length counting the terminating EOS, so greedy
    /// output holds at most `max_decode_len - 1` tokens.
    pub max_decode_len: usize,
    /// Restrict the attention memory to the most recent turn's token states.
    #[serde(default = "default_false")]
    pub attend_last_turn_only: bool,
}

impl ModelConfig {
    /// Production-scale defaults for a given vocabulary.
    pub fn full_scale(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            emb_dim: 512,
            hid_dim: 512,
            img_dim: 4096,
            max_images_per_turn: 5,
            context_size: 5,
            multimodal: true,
            use_attention: true,
            bidirectional_encoder: true,
            tied_embeddings: true,
            max_decode_len: 30,
            attend_last_turn_only: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive: [(&str, usize); 7] = [
            ("vocab_size", self.vocab_size),
            ("emb_dim", self.emb_dim),
            ("hid_dim", self.hid_dim),
            ("img_dim", self.img_dim),
            ("max_images_per_turn", self.max_images_per_turn),
            ("context_size", self.context_size),
            ("max_decode_len", self.max_decode_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.vocab_size < RESERVED_TOKENS {
            return Err(Error::Config(format!(
                "vocab_size {} cannot hold the {RESERVED_TOKENS} reserved tokens",
                self.vocab_size
            )));
        }
        Ok(())
    }

    fn decoder_in_dim(&self) -> usize {
        if self.use_attention {
            self.emb_dim + self.hid_dim
        } else {
            self.emb_dim
        }
    }

    fn context_in_dim(&self) -> usize {
        if self.multimodal {
            2 * self.hid_dim
        } else {
            self.hid_dim
        }
    }

    /// Longest permitted response, excluding the EOS slot.
    pub fn max_response_len(&self) -> usize {
        self.max_decode_len - 1
    }
}

/// Every learnable tensor of the model, grouped by stage.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub embedding: SharedTensor,
    pub encoder_fwd: GruParams,
    pub encoder_bwd: Option<GruParams>,
    pub encoder_proj: Option<SharedTensor>,
    pub img_weight: Option<SharedTensor>,
    pub img_bias: Option<SharedTensor>,
    pub context: GruParams,
    pub decoder: GruParams,
    pub attention: Option<AttentionParams>,
    pub output_weight: SharedTensor,
    pub output_bias: SharedTensor,
    pub dec_embedding: Option<SharedTensor>,
}

impl ModelParams {
    fn new(config: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let uniform = |shape: Vec<usize>, rng: &mut ChaCha8Rng| {
            SharedTensor::param_uniform(shape, -INIT_RANGE, INIT_RANGE, rng)
        };
        let embedding = uniform(vec![config.vocab_size, config.emb_dim], rng);
        let encoder_fwd = GruParams::new(config.emb_dim, config.hid_dim, rng);
        let (encoder_bwd, encoder_proj) = if config.bidirectional_encoder {
            (
                Some(GruParams::new(config.emb_dim, config.hid_dim, rng)),
                Some(uniform(vec![2 * config.hid_dim, config.hid_dim], rng)),
            )
        } else {
            (None, None)
        };
        let (img_weight, img_bias) = if config.multimodal {
            (
                Some(uniform(
                    vec![config.max_images_per_turn * config.img_dim, config.hid_dim],
                    rng,
                )),
                Some(uniform(vec![1, config.hid_dim], rng)),
            )
        } else {
            (None, None)
        };
        let context = GruParams::new(config.context_in_dim(), config.hid_dim, rng);
        let decoder = GruParams::new(config.decoder_in_dim(), config.hid_dim, rng);
        let attention = config
            .use_attention
            .then(|| AttentionParams::new(config.hid_dim, rng));
        let output_weight = uniform(vec![config.hid_dim, config.vocab_size], rng);
        let output_bias = uniform(vec![1, config.vocab_size], rng);
        let dec_embedding = (!config.tied_embeddings)
            .then(|| uniform(vec![config.vocab_size, config.emb_dim], rng));
        Self {
            embedding,
            encoder_fwd,
            encoder_bwd,
            encoder_proj,
            img_weight,
            img_bias,
            context,
            decoder,
            attention,
            output_weight,
            output_bias,
            dec_embedding,
        }
    }

    /// All tensors in a fixed canonical order (also the checkpoint order).
    pub fn named(&self) -> Vec<(String, SharedTensor)> {
        let mut out = vec![("embedding".to_string(), self.embedding.clone())];
        out.extend(self.encoder_fwd.named("encoder.fwd"));
        if let Some(bwd) = &self.encoder_bwd {
            out.extend(bwd.named("encoder.bwd"));
        }
        if let Some(proj) = &self.encoder_proj {
            out.push(("encoder.proj".to_string(), proj.clone()));
        }
        if let Some(w) = &self.img_weight {
            out.push(("img.weight".to_string(), w.clone()));
        }
        if let Some(b) = &self.img_bias {
            out.push(("img.bias".to_string(), b.clone()));
        }
        out.extend(self.context.named("context"));
        out.extend(self.decoder.named("decoder"));
        if let Some(attn) = &self.attention {
            out.extend(attn.named("attn"));
        }
        out.push(("output.weight".to_string(), self.output_weight.clone()));
        out.push(("output.bias".to_string(), self.output_bias.clone()));
        if let Some(dec) = &self.dec_embedding {
            out.push(("dec_embedding".to_string(), dec.clone()));
        }
        out
    }
}

/// One turn of dialogue context for a whole batch.
///
/// `tokens[i]` are content token ids of example `i` (empty for turns with no
/// text); `images[i]` holds up to `max_images_per_turn` feature vectors of
/// length `img_dim` each.
#[derive(Debug, Clone, Default)]
pub struct TurnInput {
    pub tokens: Vec<Vec<usize>>,
    pub images: Vec<Vec<Vec<f64>>>,
}

impl TurnInput {
    pub fn text_only(tokens: Vec<Vec<usize>>) -> Self {
        let images = vec![Vec::new(); tokens.len()];
        Self { tokens, images }
    }
}

/// Model input: `context_size` turns plus the gold responses.
#[derive(Debug, Clone)]
pub struct Batch {
    pub turns: Vec<TurnInput>,
    /// Content token ids per example; framing tokens are added internally.
    pub targets: Vec<Vec<usize>>,
}

impl Batch {
    pub fn batch_size(&self) -> usize {
        self.targets.len()
    }

    /// Stacks batches example-wise; all parts must share one context length.
    pub fn merge<'a>(parts: impl IntoIterator<Item = &'a Batch>) -> Result<Batch> {
        let mut iter = parts.into_iter();
        let mut out = iter
            .next()
            .ok_or_else(|| Error::Contract("cannot merge zero batches".into()))?
            .clone();
        for part in iter {
            if part.turns.len() != out.turns.len() {
                return Err(Error::Contract(format!(
                    "cannot merge batches with {} and {} context turns",
                    out.turns.len(),
                    part.turns.len()
                )));
            }
            for (dst, src) in out.turns.iter_mut().zip(&part.turns) {
                dst.tokens.extend(src.tokens.iter().cloned());
                dst.images.extend(src.images.iter().cloned());
            }
            out.targets.extend(part.targets.iter().cloned());
        }
        Ok(out)
    }
}

/// Everything the decoder needs about an encoded context, plus the boundary
/// states the architecture pins to zero.
#[derive(Debug)]
pub struct EncodedContext {
    pub batch_size: usize,
    /// Zero state every utterance encoder starts from.
    pub encoder_initial: NodeId,
    /// Zero state the context GRU starts from.
    pub context_initial: NodeId,
    /// Final text state of each context turn, `[batch, hid]` each.
    pub turn_text_finals: Vec<NodeId>,
    /// Per-turn image encodings, present exactly in multimodal mode.
    pub turn_image_encodings: Option<Vec<NodeId>>,
    pub context_states: Vec<NodeId>,
    /// `h_cxt` after the last turn; the decoder's initial state.
    pub context_final: NodeId,
    /// Token-state memory `[batch, positions, hid]` when attention is on.
    pub attention_keys: Option<NodeId>,
    /// Row-major `[batch, positions]` readability mask for the memory.
    pub attention_mask: Vec<f64>,
}

/// Output of one teacher-forced decode.
#[derive(Debug)]
pub struct Decoded {
    /// Masked mean cross-entropy over predicted tokens.
    pub loss: NodeId,
    /// Per-step `[batch, vocab]` logits.
    pub step_logits: Vec<NodeId>,
    /// The state the decoder GRU started from (the context final).
    pub decoder_initial: NodeId,
    /// Gold ids in step-major order matching concatenated logits rows.
    pub flat_targets: Vec<usize>,
    pub flat_mask: Vec<f64>,
    /// Number of unmasked prediction positions.
    pub token_count: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    Greedy,
    Beam { width: usize },
}

struct UtteranceEncoding {
    token_states: Vec<NodeId>,
    final_state: NodeId,
    /// One mask row per token position, each `batch` long.
    step_masks: Vec<Vec<f64>>,
}

/// Frames a response for the decoder: `[BOS, tokens…, EOS]`.
pub fn frame_target(tokens: &[usize]) -> Vec<usize> {
    let mut framed = Vec::with_capacity(tokens.len() + 2);
    framed.push(BOS_ID);
    framed.extend_from_slice(tokens);
    framed.push(EOS_ID);
    framed
}

fn log_softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|&v| v - max - log_sum).collect()
}

fn argmax_lowest_id(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// The full model: configuration plus parameters.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl Model {
    /// Builds a model with seeded uniform initialization. The draw order is
    /// fixed by the canonical parameter order, so (config, seed) determines
    /// every weight.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = ModelParams::new(&config, &mut rng);
        Ok(Self { config, params })
    }

    pub fn named_params(&self) -> Vec<(String, SharedTensor)> {
        self.params.named()
    }

    pub fn zero_grads(&self) {
        for (_, p) in self.named_params() {
            p.zero_grad();
        }
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, p)| p.numel()).sum()
    }

    fn decoder_embedding(&self) -> &SharedTensor {
        self.params
            .dec_embedding
            .as_ref()
            .unwrap_or(&self.params.embedding)
    }

    fn validate_batch(&self, batch: &Batch) -> Result<()> {
        let b = batch.batch_size();
        if b == 0 {
            return Err(Error::Contract("empty batch".into()));
        }
        if batch.turns.len() != self.config.context_size {
            return Err(Error::Contract(format!(
                "batch has {} context turns, model expects {}",
                batch.turns.len(),
                self.config.context_size
            )));
        }
        for (n, turn) in batch.turns.iter().enumerate() {
            if turn.tokens.len() != b || turn.images.len() != b {
                return Err(Error::Contract(format!(
                    "turn {n} covers {} examples, batch has {b}",
                    turn.tokens.len().max(turn.images.len())
                )));
            }
            for tokens in &turn.tokens {
                if let Some(&id) = tokens.iter().find(|&&id| id >= self.config.vocab_size) {
                    return Err(Error::IndexOutOfRange {
                        op: "encode_context",
                        index: id,
                        size: self.config.vocab_size,
                    });
                }
            }
            for images in &turn.images {
                for feat in images {
                    if feat.len() != self.config.img_dim {
                        return Err(Error::Contract(format!(
                            "image feature has {} dims, model expects {}",
                            feat.len(),
                            self.config.img_dim
                        )));
                    }
                }
            }
        }
        for target in &batch.targets {
            if let Some(&id) = target.iter().find(|&&id| id >= self.config.vocab_size) {
                return Err(Error::IndexOutOfRange {
                    op: "decode_teacher_forced",
                    index: id,
                    size: self.config.vocab_size,
                });
            }
        }
        Ok(())
    }

    /// Encodes one turn's token batch: embeds, runs the (bi)GRU from the
    /// zero state, and reports per-position states with their masks. An
    /// example with no tokens occupies a fully masked PAD position and keeps
    /// the zero state as its final.
    fn encode_utterance(
        &self,
        g: &mut Graph,
        h0: NodeId,
        tokens: &[Vec<usize>],
    ) -> Result<UtteranceEncoding> {
        let batch = tokens.len();
        let max_len = tokens.iter().map(Vec::len).max().unwrap_or(0).max(1);
        let embedding = g.leaf(&self.params.embedding);

        let mut xs = Vec::with_capacity(max_len);
        let mut step_masks = Vec::with_capacity(max_len);
        for t in 0..max_len {
            let ids: Vec<usize> = tokens
                .iter()
                .map(|seq| seq.get(t).copied().unwrap_or(PAD_ID))
                .collect();
            let mask: Vec<f64> = tokens
                .iter()
                .map(|seq| if t < seq.len() { 1.0 } else { 0.0 })
                .collect();
            xs.push(g.gather_rows(embedding, &ids)?);
            step_masks.push(mask);
        }
        debug_assert_eq!(step_masks[0].len(), batch);

        let (token_states, final_state) = match (&self.params.encoder_bwd, &self.params.encoder_proj)
        {
            (Some(bwd), Some(proj)) => {
                bigru_encode(g, &xs, &step_masks, h0, &self.params.encoder_fwd, bwd, proj)?
            }
            _ => run_sequence(g, &xs, &step_masks, h0, &self.params.encoder_fwd)?,
        };
        Ok(UtteranceEncoding {
            token_states,
            final_state,
            step_masks,
        })
    }

    /// Collapses a turn's image features to one `[batch, hid]` encoding:
    /// concatenates up to `max_images_per_turn` vectors (zero vectors fill
    /// empty slots, extras are dropped with a warning) and applies the
    /// image linear layer.
    fn aggregate_images(&self, g: &mut Graph, images: &[Vec<Vec<f64>>]) -> Result<NodeId> {
        let (weight, bias) = match (&self.params.img_weight, &self.params.img_bias) {
            (Some(w), Some(b)) => (w, b),
            _ => {
                return Err(Error::Contract(
                    "image aggregation requires a multimodal model".into(),
                ))
            }
        };
        let k = self.config.max_images_per_turn;
        let d = self.config.img_dim;
        let batch = images.len();
        let mut flat = vec![0.0; batch * k * d];
        for (i, feats) in images.iter().enumerate() {
            if feats.len() > k {
                log::warn!(
                    "turn carries {} images, keeping the first {k}",
                    feats.len()
                );
            }
            for (slot, feat) in feats.iter().take(k).enumerate() {
                let start = i * k * d + slot * d;
                flat[start..start + d].copy_from_slice(feat);
            }
        }
        let features = g.constant(Tensor::from_vec(vec![batch, k * d], flat)?);
        let w = g.leaf(weight);
        let b = g.leaf(bias);
        let projected = g.matmul(features, w)?;
        g.add_bias(projected, b)
    }

    /// Runs the full context side: every turn's utterance encoder and image
    /// aggregation, then the context GRU from the zero state.
    pub fn encode_context(&self, g: &mut Graph, batch: &Batch) -> Result<EncodedContext> {
        self.validate_batch(batch)?;
        let b = batch.batch_size();
        let hid = self.config.hid_dim;
        let encoder_initial = g.zeros(vec![b, hid]);
        let context_initial = g.zeros(vec![b, hid]);

        let mut turn_text_finals = Vec::with_capacity(batch.turns.len());
        let mut turn_image_encodings = self.config.multimodal.then(Vec::new);
        let mut memory_states: Vec<NodeId> = Vec::new();
        let mut memory_mask: Vec<Vec<f64>> = Vec::new();
        let mut h_ctx = context_initial;
        let mut context_states = Vec::with_capacity(batch.turns.len());

        for turn in &batch.turns {
            let encoded = self.encode_utterance(g, encoder_initial, &turn.tokens)?;
            turn_text_finals.push(encoded.final_state);
            if self.config.attend_last_turn_only {
                memory_states.clear();
                memory_mask.clear();
            }
            memory_states.extend(&encoded.token_states);
            memory_mask.extend(encoded.step_masks.iter().cloned());

            let ctx_in = if let Some(encodings) = turn_image_encodings.as_mut() {
                let h_img = self.aggregate_images(g, &turn.images)?;
                encodings.push(h_img);
                g.concat(&[encoded.final_state, h_img], 1)?
            } else {
                encoded.final_state
            };
            h_ctx = gru_step(g, ctx_in, h_ctx, &self.params.context)?;
            context_states.push(h_ctx);
        }

        let (attention_keys, attention_mask) = if self.config.use_attention {
            let positions = memory_states.len();
            let mut rows = Vec::with_capacity(positions);
            for state in &memory_states {
                rows.push(g.reshape(*state, vec![b, 1, hid])?);
            }
            let keys = g.concat(&rows, 1)?;
            // memory_mask is position-major; attention wants batch-major rows.
            let mut mask = vec![0.0; b * positions];
            for (pos, step) in memory_mask.iter().enumerate() {
                for (i, &m) in step.iter().enumerate() {
                    mask[i * positions + pos] = m;
                }
            }
            // A context with no tokens at all still needs one readable
            // position; position 0 carries the zero state there, so reading
            // it adds nothing.
            for row in mask.chunks_mut(positions) {
                if row.iter().all(|&m| m == 0.0) {
                    row[0] = 1.0;
                }
            }
            (Some(keys), mask)
        } else {
            (None, Vec::new())
        };

        Ok(EncodedContext {
            batch_size: b,
            encoder_initial,
            context_initial,
            turn_text_finals,
            turn_image_encodings,
            context_states,
            context_final: h_ctx,
            attention_keys,
            attention_mask,
        })
    }

    fn check_target_lengths(&self, targets: &[Vec<usize>]) -> Result<()> {
        let cap = self.config.max_response_len();
        for (i, t) in targets.iter().enumerate() {
            if t.len() > cap {
                return Err(Error::Contract(format!(
                    "target {i} has {} tokens, the decode limit allows {cap}",
                    t.len()
                )));
            }
        }
        Ok(())
    }

    /// One decoder step shared by training and generation.
    fn decoder_step(
        &self,
        g: &mut Graph,
        enc: &EncodedContext,
        input_ids: &[usize],
        h: NodeId,
        attn_feed: NodeId,
    ) -> Result<(NodeId, NodeId, NodeId)> {
        let table = g.leaf(self.decoder_embedding());
        let x = g.gather_rows(table, input_ids)?;
        let gru_in = if self.config.use_attention {
            g.concat(&[x, attn_feed], 1)?
        } else {
            x
        };
        let h_next = gru_step(g, gru_in, h, &self.params.decoder)?;
        let readout = match (&self.params.attention, &enc.attention_keys) {
            (Some(attn), Some(keys)) => {
                luong_attend(g, h_next, *keys, &enc.attention_mask, attn)?.output
            }
            _ => h_next,
        };
        let w = g.leaf(&self.params.output_weight);
        let b = g.leaf(&self.params.output_bias);
        let scores = g.matmul(readout, w)?;
        let logits = g.add_bias(scores, b)?;
        Ok((h_next, readout, logits))
    }

    /// Teacher-forced decode of the gold responses, yielding the masked mean
    /// cross-entropy loss. The decoder starts from the final context state
    /// and, with attention on, feeds each step's attention output into the
    /// next step's input.
    pub fn decode_teacher_forced(
        &self,
        g: &mut Graph,
        enc: &EncodedContext,
        targets: &[Vec<usize>],
    ) -> Result<Decoded> {
        let b = enc.batch_size;
        if targets.len() != b {
            return Err(Error::Contract(format!(
                "{} targets for a batch of {b}",
                targets.len()
            )));
        }
        self.check_target_lengths(targets)?;
        let framed: Vec<Vec<usize>> = targets.iter().map(|t| frame_target(t)).collect();
        let steps = framed.iter().map(Vec::len).max().unwrap_or(2) - 1;

        let mut h = enc.context_final;
        let decoder_initial = h;
        let mut attn_feed = g.zeros(vec![b, self.config.hid_dim]);
        let mut step_logits = Vec::with_capacity(steps);
        let mut flat_targets = Vec::with_capacity(steps * b);
        let mut flat_mask = Vec::with_capacity(steps * b);

        for t in 0..steps {
            let input_ids: Vec<usize> = framed
                .iter()
                .map(|f| f.get(t).copied().unwrap_or(PAD_ID))
                .collect();
            let (h_next, readout, logits) =
                self.decoder_step(g, enc, &input_ids, h, attn_feed)?;
            h = h_next;
            attn_feed = readout;
            step_logits.push(logits);
            for f in &framed {
                match f.get(t + 1) {
                    Some(&id) => {
                        flat_targets.push(id);
                        flat_mask.push(1.0);
                    }
                    None => {
                        flat_targets.push(PAD_ID);
                        flat_mask.push(0.0);
                    }
                }
            }
        }

        let all_logits = g.concat(&step_logits, 0)?;
        let loss = g.softmax_cross_entropy(all_logits, &flat_targets, &flat_mask)?;
        let token_count = flat_mask.iter().sum();
        Ok(Decoded {
            loss,
            step_logits,
            decoder_initial,
            flat_targets,
            flat_mask,
            token_count,
        })
    }

    /// Encode + teacher-forced decode in one call.
    pub fn batch_loss(&self, g: &mut Graph, batch: &Batch) -> Result<Decoded> {
        let enc = self.encode_context(g, batch)?;
        self.decode_teacher_forced(g, &enc, &batch.targets)
    }

    /// Log-probability of each target under the model: the sum of per-step
    /// log softmax values at the gold tokens. With `terminated` the product
    /// includes the probability of emitting EOS after the last token, making
    /// `exp` of it the model's probability of the exact finished response;
    /// without it the value is the prefix probability, which sums to 1 over
    /// all same-length token sequences.
    pub fn sequence_log_prob(
        &self,
        g: &mut Graph,
        enc: &EncodedContext,
        targets: &[Vec<usize>],
        terminated: bool,
    ) -> Result<Vec<f64>> {
        let decoded = self.decode_teacher_forced(g, enc, targets)?;
        let b = enc.batch_size;
        let mut totals = vec![0.0; b];
        for (t, logits) in decoded.step_logits.iter().enumerate() {
            let data = g.data(*logits);
            let vocab = self.config.vocab_size;
            for (i, target) in targets.iter().enumerate() {
                let scored_steps = target.len() + usize::from(terminated);
                if t < scored_steps {
                    let row = &data[i * vocab..(i + 1) * vocab];
                    let gold = if t < target.len() { target[t] } else { EOS_ID };
                    totals[i] += log_softmax_row(row)[gold];
                }
            }
        }
        Ok(totals)
    }

    /// Fraction of unmasked teacher-forced predictions whose argmax equals
    /// the gold token, over a whole dataset.
    pub fn teacher_forced_accuracy(&self, batches: &[Batch]) -> Result<f64> {
        let mut correct = 0usize;
        let mut total = 0usize;
        for batch in batches {
            let mut g = Graph::new();
            let decoded = self.batch_loss(&mut g, batch)?;
            let b = batch.batch_size();
            let vocab = self.config.vocab_size;
            for (t, logits) in decoded.step_logits.iter().enumerate() {
                let data = g.data(*logits);
                for i in 0..b {
                    let flat = t * b + i;
                    if decoded.flat_mask[flat] == 1.0 {
                        total += 1;
                        let row = &data[i * vocab..(i + 1) * vocab];
                        if argmax_lowest_id(row) == decoded.flat_targets[flat] {
                            correct += 1;
                        }
                    }
                }
            }
        }
        if total == 0 {
            return Err(Error::Contract("no unmasked prediction positions".into()));
        }
        Ok(correct as f64 / total as f64)
    }

    /// Generates a response per example. Greedy feeds back the argmax token
    /// (ties to the lowest id) until EOS or the length cap; beam keeps
    /// `width` length-unnormalized hypotheses and needs a batch of one.
    pub fn generate(
        &self,
        g: &mut Graph,
        enc: &EncodedContext,
        mode: DecodeMode,
    ) -> Result<Vec<Vec<usize>>> {
        match mode {
            DecodeMode::Greedy => self.generate_greedy(g, enc),
            DecodeMode::Beam { width } => {
                if width == 0 {
                    return Err(Error::Contract("beam width must be positive".into()));
                }
                if enc.batch_size != 1 {
                    return Err(Error::Contract(format!(
                        "beam search decodes one example at a time, got a batch of {}",
                        enc.batch_size
                    )));
                }
                Ok(vec![self.generate_beam(g, enc, width)?])
            }
        }
    }

    fn generate_greedy(&self, g: &mut Graph, enc: &EncodedContext) -> Result<Vec<Vec<usize>>> {
        let b = enc.batch_size;
        let cap = self.config.max_response_len();
        let mut outputs: Vec<Vec<usize>> = vec![Vec::new(); b];
        if cap == 0 {
            return Ok(outputs);
        }
        let mut h = enc.context_final;
        let mut attn_feed = g.zeros(vec![b, self.config.hid_dim]);
        let mut prev: Vec<usize> = vec![BOS_ID; b];
        let mut done = vec![false; b];
        let vocab = self.config.vocab_size;

        for _ in 0..cap {
            let (h_next, readout, logits) = self.decoder_step(g, enc, &prev, h, attn_feed)?;
            h = h_next;
            attn_feed = readout;
            let data = g.data(logits).to_vec();
            for i in 0..b {
                if done[i] {
                    prev[i] = EOS_ID;
                    continue;
                }
                let next = argmax_lowest_id(&data[i * vocab..(i + 1) * vocab]);
                if next == EOS_ID {
                    done[i] = true;
                    prev[i] = EOS_ID;
                } else {
                    outputs[i].push(next);
                    prev[i] = next;
                }
            }
            if done.iter().all(|&d| d) {
                break;
            }
        }
        Ok(outputs)
    }

    fn generate_beam(&self, g: &mut Graph, enc: &EncodedContext, width: usize) -> Result<Vec<usize>> {
        struct Hypothesis {
            tokens: Vec<usize>,
            log_prob: f64,
            h: NodeId,
            attn_feed: NodeId,
            done: bool,
        }

        let cap = self.config.max_response_len();
        if cap == 0 {
            return Ok(Vec::new());
        }
        let attn_zero = g.zeros(vec![1, self.config.hid_dim]);
        let mut beam = vec![Hypothesis {
            tokens: Vec::new(),
            log_prob: 0.0,
            h: enc.context_final,
            attn_feed: attn_zero,
            done: false,
        }];

        while beam.iter().any(|h| !h.done) {
            let mut candidates: Vec<Hypothesis> = Vec::new();
            for hyp in beam {
                if hyp.done {
                    candidates.push(hyp);
                    continue;
                }
                let prev = *hyp.tokens.last().unwrap_or(&BOS_ID);
                let (h_next, readout, logits) =
                    self.decoder_step(g, enc, &[prev], hyp.h, hyp.attn_feed)?;
                let log_probs = log_softmax_row(g.data(logits));
                for (token, &lp) in log_probs.iter().enumerate() {
                    let mut tokens = hyp.tokens.clone();
                    let done = if token == EOS_ID {
                        true
                    } else {
                        tokens.push(token);
                        tokens.len() == cap
                    };
                    candidates.push(Hypothesis {
                        tokens,
                        log_prob: hyp.log_prob + lp,
                        h: h_next,
                        attn_feed: readout,
                        done,
                    });
                }
            }
            candidates.sort_by(|a, b| {
                b.log_prob
                    .partial_cmp(&a.log_prob)
                    .expect("finite log probs")
                    .then_with(|| a.tokens.cmp(&b.tokens))
            });
            candidates.truncate(width);
            beam = candidates;
        }
        Ok(beam.into_iter().next().expect("nonempty beam").tokens)
    }
}
