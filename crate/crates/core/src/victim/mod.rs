//! The attacked model.
//!
//! A [`Scorer`] answers two questions: how large is the joint loss of a
//! labeled token sequence, and what does the model predict for an unlabeled
//! one. The attack engine only ever talks to this trait, so the built-in
//! [`JointLinearModel`] and a remote model behind [`ExternalScorerClient`]
//! are interchangeable.

mod client;
mod model;
pub mod protocol;

pub use client::{ClientConfig, ExternalScorerClient};
pub use model::{JointLinearModel, ModelConfig, TrainLog};

use serde::{Deserialize, Serialize};

use crate::corpus::Utterance;
use crate::error::ScorerError;

/// Tokens with gold labels, the unit sent to [`Scorer::loss_batch`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSequence {
    pub tokens: Vec<String>,
    pub slots: Vec<String>,
    pub intent: String,
}

impl From<&Utterance> for LabeledSequence {
    fn from(u: &Utterance) -> Self {
        LabeledSequence {
            tokens: u.tokens.clone(),
            slots: u.slots.clone(),
            intent: u.intent.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub intent: String,
    pub slots: Vec<String>,
}

pub trait Scorer: Send + Sync {
    /// Joint loss per item; `loss_batch(xs)[i]` must equal `loss(&xs[i])`.
    fn loss_batch(&self, items: &[LabeledSequence]) -> Result<Vec<f64>, ScorerError>;

    fn predict_batch(&self, items: &[Vec<String>]) -> Result<Vec<Prediction>, ScorerError>;

    fn loss(&self, item: &LabeledSequence) -> Result<f64, ScorerError> {
        let mut out = self.loss_batch(std::slice::from_ref(item))?;
        out.pop()
            .ok_or_else(|| ScorerError::Protocol("empty loss response".into()))
    }

    fn predict(&self, tokens: &[String]) -> Result<Prediction, ScorerError> {
        let mut out = self.predict_batch(&[tokens.to_vec()])?;
        out.pop()
            .ok_or_else(|| ScorerError::Protocol("empty predict response".into()))
    }
}

impl<S: Scorer + ?Sized> Scorer for &S {
    fn loss_batch(&self, items: &[LabeledSequence]) -> Result<Vec<f64>, ScorerError> {
        (**self).loss_batch(items)
    }

    fn predict_batch(&self, items: &[Vec<String>]) -> Result<Vec<Prediction>, ScorerError> {
        (**self).predict_batch(items)
    }
}

impl<S: Scorer + ?Sized> Scorer for Box<S> {
    fn loss_batch(&self, items: &[LabeledSequence]) -> Result<Vec<f64>, ScorerError> {
        (**self).loss_batch(items)
    }

    fn predict_batch(&self, items: &[Vec<String>]) -> Result<Vec<Prediction>, ScorerError> {
        (**self).predict_batch(items)
    }
}
