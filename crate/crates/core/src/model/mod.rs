//! Attention encoder–decoder: a bidirectional LSTM encoder and a conditional
//! LSTM decoder (two LSTM blocks with attention in between) feeding a deep
//! output layer and a softmax over the target vocabulary.

mod checkpoint;
pub(crate) mod network;
mod params;

pub use checkpoint::Checkpoint;
pub use params::{ModelConfig, ModelParams, ParamId};

use crate::error::{Error, Result};
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::vocab::{TokenId, BOS};
use network::{LstmVars, ParamVars};

/// Per-position encoder outputs plus everything the decoder precomputes
/// from them.
#[derive(Clone, Debug)]
pub struct EncoderAnnotations {
    /// `[J, 2H]`, each row the forward state concatenated with the backward one.
    pub annotations: Tensor,
    /// `[J, H]` attention keys `h_j U_a`.
    pub keys: Tensor,
    pub initial: DecoderState,
}

impl EncoderAnnotations {
    pub fn source_len(&self) -> usize {
        self.annotations.rows()
    }

    pub fn annotation(&self, j: usize) -> &[f64] {
        self.annotations.row(j)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderState {
    /// Hidden state of the second block.
    pub state: Tensor,
    pub cell: Tensor,
    /// Hidden state of the first block.
    pub state1: Tensor,
    pub cell1: Tensor,
    pub prev_token: TokenId,
}

#[derive(Clone, Debug)]
pub struct AttentionOutput {
    pub scores: Vec<f64>,
    pub weights: Vec<f64>,
    pub context: Tensor,
}

/// Weights of one LSTM block, gate matrices stacked as candidate, forget,
/// input, output.
#[derive(Clone, Copy, Debug)]
pub struct LstmWeights<'a> {
    pub input: &'a Tensor,
    pub recurrent: &'a Tensor,
    pub bias: &'a Tensor,
}

/// A single LSTM transition on plain tensors. Returns `(hidden, cell)`.
pub fn lstm_step(
    input: &Tensor,
    prev_hidden: &Tensor,
    prev_cell: &Tensor,
    weights: LstmWeights<'_>,
    standard_output: bool,
) -> Result<(Tensor, Tensor)> {
    let h = prev_hidden.len();
    let ok = weights.input.shape() == [4 * h, input.len()]
        && weights.recurrent.shape() == [4 * h, h]
        && weights.bias.shape() == [4 * h]
        && prev_cell.shape() == [h]
        && prev_hidden.shape() == [h]
        && input.shape().len() == 1;
    if !ok {
        return Err(Error::Shape(format!(
            "lstm_step: input {:?}, hidden {:?}, cell {:?}, W {:?}, U {:?}, b {:?}",
            input.shape(),
            prev_hidden.shape(),
            prev_cell.shape(),
            weights.input.shape(),
            weights.recurrent.shape(),
            weights.bias.shape()
        )));
    }
    let mut tape = Tape::new();
    let block = LstmVars {
        w: tape.leaf_ref(weights.input),
        u: tape.leaf_ref(weights.recurrent),
        b: tape.leaf_ref(weights.bias),
    };
    let x = tape.leaf_ref(input);
    let hp = tape.leaf_ref(prev_hidden);
    let cp = tape.leaf_ref(prev_cell);
    let (hn, cn) = network::lstm(&mut tape, &block, x, hp, cp, h, standard_output);
    Ok((tape.value(hn).clone(), tape.value(cn).clone()))
}

pub(crate) fn check_ids(ids: &[TokenId], size: usize, what: &'static str) -> Result<()> {
    if ids.is_empty() {
        return Err(Error::Empty(what));
    }
    if let Some(&id) = ids.iter().find(|&&id| id >= size) {
        return Err(Error::IdOutOfRange { id, size });
    }
    Ok(())
}

/// Runs the encoder over `src` and derives the decoder's initial state from
/// the mean annotation.
pub fn encode(params: &ModelParams, src: &[TokenId]) -> Result<EncoderAnnotations> {
    check_ids(src, params.config().src_vocab, "source sentence")?;
    let mut tape = Tape::new();
    let pv = ParamVars::register(&mut tape, params);
    let enc = network::encode(&mut tape, &pv, params, src);
    let h = params.config().hidden_dim;
    Ok(EncoderAnnotations {
        annotations: tape.value(enc.annotations).clone(),
        keys: tape.value(enc.keys).clone(),
        initial: DecoderState {
            state: tape.value(enc.init_state).clone(),
            cell: tape.value(enc.init_cell).clone(),
            state1: Tensor::zeros(&[h]),
            cell1: Tensor::zeros(&[h]),
            prev_token: BOS,
        },
    })
}

fn check_annotations(params: &ModelParams, ann: &EncoderAnnotations) -> Result<()> {
    let h = params.config().hidden_dim;
    let j = ann.annotations.rows();
    if ann.annotations.shape() != [j, 2 * h] || ann.keys.shape() != [j, h] {
        return Err(Error::Shape(format!(
            "annotations {:?} / keys {:?} do not match hidden size {h}",
            ann.annotations.shape(),
            ann.keys.shape()
        )));
    }
    Ok(())
}

/// Attention over `ann` for the first block's output `query`.
pub fn attend(params: &ModelParams, query: &Tensor, ann: &EncoderAnnotations) -> Result<AttentionOutput> {
    check_annotations(params, ann)?;
    if query.shape() != [params.config().hidden_dim] {
        return Err(Error::Shape(format!("attention query {:?}", query.shape())));
    }
    let mut tape = Tape::new();
    let pv = ParamVars::register(&mut tape, params);
    let q = tape.leaf_ref(query);
    let a = tape.leaf_ref(&ann.annotations);
    let k = tape.leaf_ref(&ann.keys);
    let out = network::attend(&mut tape, &pv, q, a, k);
    Ok(AttentionOutput {
        scores: tape.value(out.scores).data().to_vec(),
        weights: tape.value(out.weights).data().to_vec(),
        context: tape.value(out.context).clone(),
    })
}

/// Feeds `prev_token` and returns the next state with the distribution over
/// the target vocabulary.
pub fn decoder_step(
    params: &ModelParams,
    prev_token: TokenId,
    state: &DecoderState,
    ann: &EncoderAnnotations,
) -> Result<(DecoderState, Vec<f64>)> {
    let (step, _) = decoder_step_with_attention(params, prev_token, state, ann)?;
    Ok(step)
}

pub fn decoder_step_with_attention(
    params: &ModelParams,
    prev_token: TokenId,
    state: &DecoderState,
    ann: &EncoderAnnotations,
) -> Result<((DecoderState, Vec<f64>), AttentionOutput)> {
    let cfg = params.config();
    if prev_token >= cfg.trg_vocab {
        return Err(Error::IdOutOfRange { id: prev_token, size: cfg.trg_vocab });
    }
    check_annotations(params, ann)?;
    let h = cfg.hidden_dim;
    for t in [&state.state, &state.cell, &state.state1, &state.cell1] {
        if t.shape() != [h] {
            return Err(Error::Shape(format!("decoder state vector {:?}", t.shape())));
        }
    }
    let mut tape = Tape::new();
    let pv = ParamVars::register(&mut tape, params);
    let a = tape.leaf_ref(&ann.annotations);
    let k = tape.leaf_ref(&ann.keys);
    let s = tape.leaf_ref(&state.state);
    let c = tape.leaf_ref(&state.cell);
    let c1 = tape.leaf_ref(&state.cell1);
    let out = network::decoder_step(&mut tape, &pv, params, a, k, s, c, c1, prev_token);
    let next = DecoderState {
        state: tape.value(out.state).clone(),
        cell: tape.value(out.cell).clone(),
        state1: tape.value(out.state1).clone(),
        cell1: tape.value(out.cell1).clone(),
        prev_token,
    };
    let probs = tape.value(out.probs).data().to_vec();
    let attention = AttentionOutput {
        scores: tape.value(out.attention.scores).data().to_vec(),
        weights: tape.value(out.attention.weights).data().to_vec(),
        context: tape.value(out.attention.context).clone(),
    };
    Ok(((next, probs), attention))
}
