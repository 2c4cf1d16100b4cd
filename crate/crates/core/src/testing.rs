use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::engine::{Engine, ParallelCorpus};
use crate::model::{ModelConfig, ParamId};
use crate::tensor::Tensor;

pub fn small_corpus() -> ParallelCorpus {
    ParallelCorpus::from_lines(&[
        ("das haus ist klein", "the house is small"),
        ("das buch ist gut", "the book is good"),
        ("ein kleines haus", "a small house"),
    ])
    .unwrap()
}

pub fn small_dims() -> ModelConfig {
    ModelConfig { src_vocab: 0, trg_vocab: 0, embed_dim: 6, hidden_dim: 5, output_dim: 6, standard_lstm_output: false }
}

/// Untrained engine with a sharpened output layer, so beams are not flat.
pub fn random_engine(seed: u64) -> Engine {
    let mut e = Engine::initialize(&[&small_corpus()], 8, small_dims(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = e.params[ParamId::Proj].shape().to_vec();
    e.params[ParamId::Proj] = Tensor::randn(&shape, 2.0, &mut rng);
    e
}
