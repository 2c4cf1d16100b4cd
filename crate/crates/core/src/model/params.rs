use std::ops::{Index, IndexMut};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Dimensions of the encoder–decoder. The attention layer uses `hidden_dim`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub src_vocab: usize,
    pub trg_vocab: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    /// Use `o ⊙ tanh(c)` for LSTM hidden states instead of `o ⊙ c`.
    pub standard_lstm_output: bool,
}

impl ModelConfig {
    /// Desk-scale defaults: 32-dimensional embeddings, states and deep output.
    pub fn desk(src_vocab: usize, trg_vocab: usize) -> Self {
        Self {
            src_vocab,
            trg_vocab,
            embed_dim: 32,
            hidden_dim: 32,
            output_dim: 32,
            standard_lstm_output: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.src_vocab, self.trg_vocab, self.embed_dim, self.hidden_dim, self.output_dim];
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Invalid(format!("model dimensions must be positive: {self:?}")));
        }
        if self.trg_vocab <= crate::vocab::UNK {
            return Err(Error::Invalid("target vocabulary must include the reserved tokens".into()));
        }
        Ok(())
    }
}

macro_rules! param_ids {
    ($($variant:ident => $name:literal),* $(,)?) => {
        /// Every trainable tensor of the model.
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum ParamId { $($variant),* }

        impl ParamId {
            pub const ALL: &'static [ParamId] = &[$(ParamId::$variant),*];

            pub fn name(self) -> &'static str {
                match self { $(ParamId::$variant => $name),* }
            }

            pub fn from_name(name: &str) -> Option<Self> {
                match name { $($name => Some(ParamId::$variant),)* _ => None }
            }
        }
    };
}

param_ids! {
    SrcEmbed => "src_embed",
    TrgEmbed => "trg_embed",
    EncFwdW => "enc.fwd.W",
    EncFwdU => "enc.fwd.U",
    EncFwdB => "enc.fwd.b",
    EncBwdW => "enc.bwd.W",
    EncBwdU => "enc.bwd.U",
    EncBwdB => "enc.bwd.b",
    InitStateW => "dec.init.state.W",
    InitStateB => "dec.init.state.b",
    InitCellW => "dec.init.cell.W",
    InitCellB => "dec.init.cell.b",
    Lstm1W => "dec.lstm1.W",
    Lstm1U => "dec.lstm1.U",
    Lstm1B => "dec.lstm1.b",
    AttW => "att.W",
    AttU => "att.U",
    AttB => "att.b",
    AttV => "att.w",
    Lstm2W => "dec.lstm2.W",
    Lstm2U => "dec.lstm2.U",
    Lstm2B => "dec.lstm2.b",
    OutState => "out.W_t1",
    OutContext => "out.W_t2",
    OutEmbed => "out.W_t3",
    OutB => "out.b",
    Proj => "out.V",
    ProjB => "out.V.b",
}

impl ParamId {
    /// Expected shape. LSTM blocks stack their gate matrices row-wise in the
    /// order candidate, forget, input, output.
    pub fn shape(self, c: &ModelConfig) -> Vec<usize> {
        let (e, h, l) = (c.embed_dim, c.hidden_dim, c.output_dim);
        use ParamId::*;
        match self {
            SrcEmbed => vec![c.src_vocab, e],
            TrgEmbed => vec![c.trg_vocab, e],
            EncFwdW | EncBwdW | Lstm1W => vec![4 * h, e],
            EncFwdU | EncBwdU | Lstm1U | Lstm2U => vec![4 * h, h],
            EncFwdB | EncBwdB | Lstm1B | Lstm2B => vec![4 * h],
            InitStateW | InitCellW => vec![h, 2 * h],
            InitStateB | InitCellB => vec![h],
            AttW => vec![h, h],
            AttU => vec![2 * h, h],
            AttB | AttV => vec![h],
            Lstm2W => vec![4 * h, 2 * h],
            OutState => vec![h, l],
            OutContext => vec![2 * h, l],
            OutEmbed => vec![e, l],
            OutB => vec![l],
            Proj => vec![c.trg_vocab, l],
            ProjB => vec![c.trg_vocab],
        }
    }

    fn is_bias(self) -> bool {
        use ParamId::*;
        matches!(self, EncFwdB | EncBwdB | InitStateB | InitCellB | Lstm1B | AttB | Lstm2B | OutB | ProjB)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    tensors: Vec<Tensor>,
}

impl ModelParams {
    /// Random initialisation: Glorot-uniform matrices, small uniform
    /// embeddings and attention vector, zero biases.
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let tensors = ParamId::ALL
            .iter()
            .map(|&id| {
                let shape = id.shape(&config);
                if id.is_bias() {
                    Tensor::zeros(&shape)
                } else if matches!(id, ParamId::SrcEmbed | ParamId::TrgEmbed | ParamId::AttV) {
                    Tensor::uniform(&shape, 0.1, rng)
                } else {
                    let scale = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                    Tensor::uniform(&shape, scale, rng)
                }
            })
            .collect();
        Ok(Self { config, tensors })
    }

    pub fn from_tensors(config: ModelConfig, tensors: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        if tensors.len() != ParamId::ALL.len() {
            return Err(Error::Shape(format!(
                "expected {} tensors, got {}",
                ParamId::ALL.len(),
                tensors.len()
            )));
        }
        let params = Self { config, tensors };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        for &id in ParamId::ALL {
            let t = &self[id];
            let expected = id.shape(&self.config);
            if t.shape() != expected.as_slice() {
                return Err(Error::Shape(format!(
                    "{}: expected {expected:?}, got {:?}",
                    id.name(),
                    t.shape()
                )));
            }
            if !t.is_finite() {
                return Err(Error::NonFinite(id.name().to_string()));
            }
        }
        Ok(())
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        ParamId::ALL.iter().copied().zip(&self.tensors)
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// Order-sensitive checksum of every value; cheap equality probe.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in &self.tensors {
            for v in t.data() {
                h ^= v.to_bits();
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}

impl Index<ParamId> for ModelParams {
    type Output = Tensor;

    fn index(&self, id: ParamId) -> &Tensor {
        &self.tensors[id as usize]
    }
}

impl IndexMut<ParamId> for ModelParams {
    fn index_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id as usize]
    }
}
