//! Shared fixtures for the benchmarks.

use codemix::toygen::{generate_toy, ToyCorpus, ToySpec};
use codemix::victim::{JointLinearModel, ModelConfig};

pub struct Fixture {
    pub toy: ToyCorpus,
    pub model: JointLinearModel,
}

/// Toy corpus with `n_test` test utterances and a victim trained on its pivot side.
pub fn fixture(n_train: usize, n_test: usize) -> Fixture {
    let toy = generate_toy(&ToySpec {
        n_train,
        n_test,
        ..ToySpec::default()
    })
    .expect("toy corpus");
    let (model, _) = JointLinearModel::train(&ModelConfig::default(), toy.train.pivot.utterances()).expect("training");
    Fixture { toy, model }
}
