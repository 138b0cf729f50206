//! Code-switched adversarial examples for joint intent/slot NLU models.
//!
//! * [`corpus`]: utterances, datasets, TSV I/O, BIO validation.
//! * [`candidates`]: word-level (lexicon) and phrase-level (alignment) substitutions.
//! * [`victim`]: the scorer abstraction, a built-in joint linear model and a protocol client.
//! * [`attack`]: the greedy loss-guided attack.
//! * [`augment`]: model-free code-mixed training data and splitting.
//! * [`eval`]: intent accuracy, slot F1, semantic accuracy and report tables.
//! * [`toygen`]: a synthetic bilingual corpus for self-contained experiments.

pub mod attack;
pub mod augment;
pub mod candidates;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod rng;
pub mod toygen;
pub mod victim;

pub use attack::{attack, attack_dataset, AttackConfig, AttackMode, AttackResult, DatasetAttack};
pub use augment::{generate_adversarial_set, split, AugmentConfig};
pub use candidates::{extend_slot_labels, AlignmentTable, BilingualLexicon, Candidate, CandidateSource};
pub use corpus::{load_dataset, pair_parallel, validate_bio, Dataset, ParallelCorpus, Utterance};
pub use error::{Error, Result, ScorerError};
pub use eval::{evaluate, render_report, EvalReport};
pub use victim::{ExternalScorerClient, JointLinearModel, LabeledSequence, Prediction, Scorer};

use rayon::prelude::*;

/// Maps `f` over `items` on up to `parallelism` threads, keeping input order.
pub(crate) fn ordered_map<T, R, F>(items: &[T], parallelism: usize, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    if parallelism <= 1 {
        return Ok(items.iter().map(f).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(|| items.par_iter().map(f).collect()))
}
