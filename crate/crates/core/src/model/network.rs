//! The encoder–decoder expressed over tape primitives. Training and decoding
//! both run through these functions, so there is exactly one definition of
//! the forward computation.

use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

use super::params::{ModelParams, ParamId};

/// Tape handles for every parameter tensor.
pub(crate) struct ParamVars {
    vars: Vec<Var>,
}

impl ParamVars {
    pub(crate) fn register<'p>(tape: &mut Tape<'p>, params: &'p ModelParams) -> Self {
        Self { vars: params.tensors().iter().map(|t| tape.leaf_ref(t)).collect() }
    }

    pub(crate) fn get(&self, id: ParamId) -> Var {
        self.vars[id as usize]
    }

    pub(crate) fn all(&self) -> &[Var] {
        &self.vars
    }
}

pub(crate) struct LstmVars {
    pub w: Var,
    pub u: Var,
    pub b: Var,
}

/// One LSTM transition. Returns `(hidden, cell)`.
pub(crate) fn lstm(
    tape: &mut Tape<'_>,
    block: &LstmVars,
    input: Var,
    prev_hidden: Var,
    prev_cell: Var,
    hidden_dim: usize,
    standard_output: bool,
) -> (Var, Var) {
    let wx = tape.matmul(block.w, input);
    let uh = tape.matmul(block.u, prev_hidden);
    let pre = tape.add(wx, uh);
    let pre = tape.add(pre, block.b);
    let h = hidden_dim;
    let cand = tape.slice(pre, 0, h);
    let cand = tape.tanh(cand);
    let forget = tape.slice(pre, h, h);
    let forget = tape.sigmoid(forget);
    let input_gate = tape.slice(pre, 2 * h, h);
    let input_gate = tape.sigmoid(input_gate);
    let output_gate = tape.slice(pre, 3 * h, h);
    let output_gate = tape.sigmoid(output_gate);
    let kept = tape.mul(forget, prev_cell);
    let written = tape.mul(input_gate, cand);
    let cell = tape.add(kept, written);
    let hidden = if standard_output {
        let squashed = tape.tanh(cell);
        tape.mul(output_gate, squashed)
    } else {
        tape.mul(output_gate, cell)
    };
    (hidden, cell)
}

pub(crate) fn block(pv: &ParamVars, w: ParamId, u: ParamId, b: ParamId) -> LstmVars {
    LstmVars { w: pv.get(w), u: pv.get(u), b: pv.get(b) }
}

pub(crate) struct EncodedVars {
    /// `[J, 2H]` annotations.
    pub annotations: Var,
    /// `[J, H]` annotations projected by the attention's `U_a`.
    pub keys: Var,
    pub init_state: Var,
    pub init_cell: Var,
}

/// Bidirectional encoder plus the decoder's initial state. Source ids must
/// already be validated.
pub(crate) fn encode(
    tape: &mut Tape<'_>,
    pv: &ParamVars,
    params: &ModelParams,
    src: &[usize],
) -> EncodedVars {
    let cfg = params.config();
    let h = cfg.hidden_dim;
    let std_out = cfg.standard_lstm_output;
    let j = src.len();
    let embeds: Vec<Var> = src.iter().map(|&id| tape.gather(pv.get(ParamId::SrcEmbed), id)).collect();

    let fwd_block = block(pv, ParamId::EncFwdW, ParamId::EncFwdU, ParamId::EncFwdB);
    let bwd_block = block(pv, ParamId::EncBwdW, ParamId::EncBwdU, ParamId::EncBwdB);
    let zero = tape.leaf(Tensor::zeros(&[h]));

    let mut fwd = Vec::with_capacity(j);
    let (mut hs, mut cs) = (zero, zero);
    for &x in &embeds {
        (hs, cs) = lstm(tape, &fwd_block, x, hs, cs, h, std_out);
        fwd.push(hs);
    }
    let mut bwd = vec![zero; j];
    let (mut hs, mut cs) = (zero, zero);
    for pos in (0..j).rev() {
        (hs, cs) = lstm(tape, &bwd_block, embeds[pos], hs, cs, h, std_out);
        bwd[pos] = hs;
    }
    let mut parts = Vec::with_capacity(2 * j);
    for pos in 0..j {
        parts.push(fwd[pos]);
        parts.push(bwd[pos]);
    }
    let flat = tape.concat(&parts);
    let annotations = tape.reshape(flat, &[j, 2 * h]);
    let keys = tape.matmul(annotations, pv.get(ParamId::AttU));

    let weights = tape.leaf(Tensor::full(&[j], 1.0 / j as f64));
    let mean = tape.vecmat(weights, annotations);
    let s = tape.matmul(pv.get(ParamId::InitStateW), mean);
    let s = tape.add(s, pv.get(ParamId::InitStateB));
    let init_state = tape.tanh(s);
    let c = tape.matmul(pv.get(ParamId::InitCellW), mean);
    let c = tape.add(c, pv.get(ParamId::InitCellB));
    let init_cell = tape.tanh(c);
    EncodedVars { annotations, keys, init_state, init_cell }
}

pub(crate) struct AttentionVars {
    pub scores: Var,
    pub weights: Var,
    pub context: Var,
}

/// `e_j = wᵀ tanh(W_a s′ + U_a h_j + b)`, `α = softmax(e)`, `z = Σ α_j h_j`.
pub(crate) fn attend(
    tape: &mut Tape<'_>,
    pv: &ParamVars,
    query: Var,
    annotations: Var,
    keys: Var,
) -> AttentionVars {
    let q = tape.matmul(pv.get(ParamId::AttW), query);
    let q = tape.add(q, pv.get(ParamId::AttB));
    let mixed = tape.add_rows(keys, q);
    let mixed = tape.tanh(mixed);
    let scores = tape.matmul(mixed, pv.get(ParamId::AttV));
    let weights = tape.softmax(scores);
    let context = tape.vecmat(weights, annotations);
    AttentionVars { scores, weights, context }
}

pub(crate) struct StepVars {
    pub state: Var,
    pub cell: Var,
    pub state1: Var,
    pub cell1: Var,
    pub probs: Var,
    pub attention: AttentionVars,
}

/// One cLSTM decoder step followed by the deep output layer and softmax.
#[allow(clippy::too_many_arguments)]
pub(crate) fn decoder_step(
    tape: &mut Tape<'_>,
    pv: &ParamVars,
    params: &ModelParams,
    annotations: Var,
    keys: Var,
    prev_state: Var,
    prev_cell: Var,
    prev_cell1: Var,
    prev_token: usize,
) -> StepVars {
    let cfg = params.config();
    let (h, std_out) = (cfg.hidden_dim, cfg.standard_lstm_output);
    let emb = tape.gather(pv.get(ParamId::TrgEmbed), prev_token);

    let first = block(pv, ParamId::Lstm1W, ParamId::Lstm1U, ParamId::Lstm1B);
    let (state1, cell1) = lstm(tape, &first, emb, prev_state, prev_cell1, h, std_out);

    let attention = attend(tape, pv, state1, annotations, keys);

    let second = block(pv, ParamId::Lstm2W, ParamId::Lstm2U, ParamId::Lstm2B);
    let (state, cell) = lstm(tape, &second, attention.context, state1, prev_cell, h, std_out);

    let a = tape.vecmat(state, pv.get(ParamId::OutState));
    let b = tape.vecmat(attention.context, pv.get(ParamId::OutContext));
    let c = tape.vecmat(emb, pv.get(ParamId::OutEmbed));
    let deep = tape.add(a, b);
    let deep = tape.add(deep, c);
    let deep = tape.add(deep, pv.get(ParamId::OutB));
    let deep = tape.tanh(deep);
    let logits = tape.matmul(pv.get(ParamId::Proj), deep);
    let logits = tape.add(logits, pv.get(ParamId::ProjB));
    let probs = tape.softmax(logits);
    StepVars { state, cell, state1, cell1, probs, attention }
}

/// Teacher-forced negative log-likelihood of `trg` given `src`.
pub(crate) fn sentence_nll(
    tape: &mut Tape<'_>,
    pv: &ParamVars,
    params: &ModelParams,
    src: &[usize],
    trg: &[usize],
) -> Var {
    let enc = encode(tape, pv, params, src);
    let zero = tape.leaf(Tensor::zeros(&[params.config().hidden_dim]));
    let (mut s, mut c, mut c1) = (enc.init_state, enc.init_cell, zero);
    let mut prev = crate::vocab::BOS;
    let mut terms = Vec::with_capacity(trg.len());
    for &y in trg {
        let step = decoder_step(tape, pv, params, enc.annotations, enc.keys, s, c, c1, prev);
        terms.push(tape.neg_log_pick(step.probs, y));
        (s, c, c1) = (step.state, step.cell, step.cell1);
        prev = y;
    }
    let all = tape.concat(&terms);
    tape.sum(all)
}
