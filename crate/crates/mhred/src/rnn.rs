//! GRU cells, masked sequence runners, and Luong-style attention.
//!
//! All functions build nodes on a caller-supplied [`Graph`]; nothing here
//! owns a graph. Batches are row-major `[batch, dim]` matrices and sequences
//! are step-major slices of node ids, one `[batch, dim]` matrix per step.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Graph, NodeId, SharedTensor, Tensor};

const INIT_RANGE: f64 = 0.08;

/// Weights for one GRU cell.
///
/// Update gate: `z = sigmoid(x W_z + h U_z + b_z)`.
/// Reset gate: `r = sigmoid(x W_r + h U_r + b_r)`.
/// Candidate: `h~ = tanh(x W_h + (r * h) U_h + b_h)`.
/// New state: `h' = (1 - z) * h + z * h~`.
#[derive(Debug, Clone)]
pub struct GruParams {
    pub w_z: SharedTensor,
    pub u_z: SharedTensor,
    pub b_z: SharedTensor,
    pub w_r: SharedTensor,
    pub u_r: SharedTensor,
    pub b_r: SharedTensor,
    pub w_h: SharedTensor,
    pub u_h: SharedTensor,
    pub b_h: SharedTensor,
    in_dim: usize,
    hid_dim: usize,
}

impl GruParams {
    pub fn new<R: Rng>(in_dim: usize, hid_dim: usize, rng: &mut R) -> Self {
        let w = |rng: &mut R| {
            SharedTensor::param_uniform(vec![in_dim, hid_dim], -INIT_RANGE, INIT_RANGE, rng)
        };
        let u = |rng: &mut R| {
            SharedTensor::param_uniform(vec![hid_dim, hid_dim], -INIT_RANGE, INIT_RANGE, rng)
        };
        let b = |rng: &mut R| {
            SharedTensor::param_uniform(vec![1, hid_dim], -INIT_RANGE, INIT_RANGE, rng)
        };
        Self {
            w_z: w(rng),
            u_z: u(rng),
            b_z: b(rng),
            w_r: w(rng),
            u_r: u(rng),
            b_r: b(rng),
            w_h: w(rng),
            u_h: u(rng),
            b_h: b(rng),
            in_dim,
            hid_dim,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn hid_dim(&self) -> usize {
        self.hid_dim
    }

    /// Tensors in their canonical order, names prefixed with `prefix.`.
    pub fn named(&self, prefix: &str) -> Vec<(String, SharedTensor)> {
        [
            ("w_z", &self.w_z),
            ("u_z", &self.u_z),
            ("b_z", &self.b_z),
            ("w_r", &self.w_r),
            ("u_r", &self.u_r),
            ("b_r", &self.b_r),
            ("w_h", &self.w_h),
            ("u_h", &self.u_h),
            ("b_h", &self.b_h),
        ]
        .into_iter()
        .map(|(suffix, t)| (format!("{prefix}.{suffix}"), t.clone()))
        .collect()
    }
}

fn gate_preactivation(
    g: &mut Graph,
    x: NodeId,
    h: NodeId,
    w: &SharedTensor,
    u: &SharedTensor,
    b: &SharedTensor,
) -> Result<NodeId> {
    let wl = g.leaf(w);
    let ul = g.leaf(u);
    let bl = g.leaf(b);
    let xw = g.matmul(x, wl)?;
    let hu = g.matmul(h, ul)?;
    let sum = g.add(xw, hu)?;
    g.add_bias(sum, bl)
}

/// One GRU transition from `h_prev` under input `x`, both `[batch, dim]`.
pub fn gru_step(g: &mut Graph, x: NodeId, h_prev: NodeId, p: &GruParams) -> Result<NodeId> {
    let z_pre = gate_preactivation(g, x, h_prev, &p.w_z, &p.u_z, &p.b_z)?;
    let z = g.sigmoid(z_pre);
    let r_pre = gate_preactivation(g, x, h_prev, &p.w_r, &p.u_r, &p.b_r)?;
    let r = g.sigmoid(r_pre);

    let gated_h = g.mul(r, h_prev)?;
    let cand_pre = gate_preactivation(g, x, gated_h, &p.w_h, &p.u_h, &p.b_h)?;
    let cand = g.tanh(cand_pre);

    // (1 - z) * h + z * h~  ==  h + z * (h~ - h)
    let delta = g.sub(cand, h_prev)?;
    let step = g.mul(z, delta)?;
    g.add(h_prev, step)
}

fn validate_masks(masks: &[Vec<f64>], steps: usize, batch: usize) -> Result<()> {
    if masks.len() != steps {
        return Err(Error::Contract(format!(
            "expected {steps} mask steps, got {}",
            masks.len()
        )));
    }
    for (t, m) in masks.iter().enumerate() {
        if m.len() != batch {
            return Err(Error::Contract(format!(
                "mask step {t} has {} entries for batch of {batch}",
                m.len()
            )));
        }
        if let Some(&v) = m.iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::Contract(format!(
                "mask step {t} contains {v}, expected 0 or 1"
            )));
        }
    }
    Ok(())
}

/// `[batch, hid]` constants that keep (`mask`) or carry (`1 - mask`) state.
fn mask_constants(g: &mut Graph, mask: &[f64], hid: usize) -> (NodeId, NodeId) {
    let batch = mask.len();
    let mut keep = Vec::with_capacity(batch * hid);
    let mut carry = Vec::with_capacity(batch * hid);
    for &m in mask {
        keep.extend(std::iter::repeat(m).take(hid));
        carry.extend(std::iter::repeat(1.0 - m).take(hid));
    }
    let keep = g.constant(Tensor::from_vec(vec![batch, hid], keep).expect("mask shape"));
    let carry = g.constant(Tensor::from_vec(vec![batch, hid], carry).expect("mask shape"));
    (keep, carry)
}

/// Runs a GRU over a step-major sequence with per-step binary masks.
///
/// Masked steps carry the previous state through unchanged, so right-padded
/// batches produce the same per-example states as unpadded runs. Returns the
/// state after every step and the final state (`h0` if every step of an
/// example is masked).
pub fn run_sequence(
    g: &mut Graph,
    xs: &[NodeId],
    masks: &[Vec<f64>],
    h0: NodeId,
    p: &GruParams,
) -> Result<(Vec<NodeId>, NodeId)> {
    let batch = g.shape(h0)[0];
    validate_masks(masks, xs.len(), batch)?;
    let hid = p.hid_dim;
    let mut h = h0;
    let mut states = Vec::with_capacity(xs.len());
    for (&x, mask) in xs.iter().zip(masks) {
        let candidate = gru_step(g, x, h, p)?;
        let (keep, carry) = mask_constants(g, mask, hid);
        let kept = g.mul(keep, candidate)?;
        let carried = g.mul(carry, h)?;
        h = g.add(kept, carried)?;
        states.push(h);
    }
    Ok((states, h))
}

/// Bidirectional GRU encoder.
///
/// Runs `fwd` left to right and `bwd` right to left over the same masked
/// sequence, concatenates the two states at every position, and projects the
/// pair back to `hid` through `proj` (`[2 hid, hid]`, no bias). Returns
/// per-position states and the projected pair of final states.
pub fn bigru_encode(
    g: &mut Graph,
    xs: &[NodeId],
    masks: &[Vec<f64>],
    h0: NodeId,
    fwd: &GruParams,
    bwd: &GruParams,
    proj: &SharedTensor,
) -> Result<(Vec<NodeId>, NodeId)> {
    let (fwd_states, fwd_final) = run_sequence(g, xs, masks, h0, fwd)?;

    let rev_xs: Vec<NodeId> = xs.iter().rev().copied().collect();
    let rev_masks: Vec<Vec<f64>> = masks.iter().rev().cloned().collect();
    let (rev_states, bwd_final) = run_sequence(g, &rev_xs, &rev_masks, h0, bwd)?;
    let bwd_states: Vec<NodeId> = rev_states.into_iter().rev().collect();

    let proj_node = g.leaf(proj);
    let mut states = Vec::with_capacity(xs.len());
    for (f, b) in fwd_states.iter().zip(&bwd_states) {
        let pair = g.concat(&[*f, *b], 1)?;
        states.push(g.matmul(pair, proj_node)?);
    }
    let final_pair = g.concat(&[fwd_final, bwd_final], 1)?;
    let final_state = g.matmul(final_pair, proj_node)?;
    Ok((states, final_state))
}

/// Weights for one attention head in the multiplicative (`general`) form.
#[derive(Debug, Clone)]
pub struct AttentionParams {
    /// `[hid, hid]` bilinear score weight.
    pub w_a: SharedTensor,
    /// `[2 hid, hid]` combiner applied to `[context, query]`.
    pub w_c: SharedTensor,
}

impl AttentionParams {
    pub fn new<R: Rng>(hid_dim: usize, rng: &mut R) -> Self {
        Self {
            w_a: SharedTensor::param_uniform(
                vec![hid_dim, hid_dim],
                -INIT_RANGE,
                INIT_RANGE,
                rng,
            ),
            w_c: SharedTensor::param_uniform(
                vec![2 * hid_dim, hid_dim],
                -INIT_RANGE,
                INIT_RANGE,
                rng,
            ),
        }
    }

    pub fn named(&self, prefix: &str) -> Vec<(String, SharedTensor)> {
        vec![
            (format!("{prefix}.w_a"), self.w_a.clone()),
            (format!("{prefix}.w_c"), self.w_c.clone()),
        ]
    }
}

/// Result of one attention read.
#[derive(Debug, Clone, Copy)]
pub struct Attended {
    /// `tanh([context, query] W_c)`, shape `[batch, hid]`.
    pub output: NodeId,
    /// Softmax weights over memory positions, shape `[batch, positions]`.
    pub weights: NodeId,
}

const MASK_PENALTY: f64 = 1e9;

/// Attends `query` (`[batch, hid]`) over `keys` (`[batch, positions, hid]`).
///
/// `mask` is row-major `[batch, positions]` with 1 for readable positions.
/// Masked positions receive a `-1e9` score penalty before the softmax, which
/// drives their weights to exactly zero. A row with no readable position has
/// no meaningful distribution and is rejected.
pub fn luong_attend(
    g: &mut Graph,
    query: NodeId,
    keys: NodeId,
    mask: &[f64],
    p: &AttentionParams,
) -> Result<Attended> {
    let key_shape = g.shape(keys).to_vec();
    if key_shape.len() != 3 {
        return Err(Error::InvalidShape {
            op: "luong_attend",
            msg: format!("keys must be [batch, positions, hid], got {key_shape:?}"),
        });
    }
    let (batch, positions) = (key_shape[0], key_shape[1]);
    if mask.len() != batch * positions {
        return Err(Error::Contract(format!(
            "attention mask has {} entries for {batch}x{positions} memory",
            mask.len()
        )));
    }
    for (b, row) in mask.chunks(positions).enumerate() {
        if row.iter().all(|&m| m == 0.0) {
            return Err(Error::Contract(format!(
                "attention row {b} has no readable position"
            )));
        }
    }

    let w_a = g.leaf(&p.w_a);
    let w_c = g.leaf(&p.w_c);
    let transformed = g.matmul(query, w_a)?;
    let scores = g.batch_dot(transformed, keys)?;

    let penalty: Vec<f64> = mask.iter().map(|&m| (m - 1.0) * MASK_PENALTY).collect();
    let penalty = g.constant(Tensor::from_vec(vec![batch, positions], penalty).expect("mask"));
    let masked = g.add(scores, penalty)?;
    let weights = g.softmax_rows(masked)?;

    let context = g.batch_weighted_sum(weights, keys)?;
    let pair = g.concat(&[context, query], 1)?;
    let combined = g.matmul(pair, w_c)?;
    Ok(Attended {
        output: g.tanh(combined),
        weights,
    })
}
