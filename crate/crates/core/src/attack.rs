//! Greedy loss-guided code-switching attack.
//!
//! Original token positions are visited once, in a seeded random order. At
//! each position every candidate replacement is scored in the context of the
//! current (partially substituted) utterance, and the highest-loss candidate
//! is kept if it does not lower the loss. The utterance is tracked as a list
//! of segments, one per original token, so positions stay stable when a
//! replacement spans several tokens; a replaced segment is never revisited.

use serde::{Deserialize, Serialize};

use crate::candidates::{Candidate, CandidateSource, Provenance, DEFAULT_K_MAX};
use crate::corpus::{Dataset, Utterance};
use crate::error::{Error, Result};
use crate::ordered_map;
use crate::rng::SplitMix64;
use crate::victim::{LabeledSequence, Scorer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackMode {
    #[default]
    Word,
    Phrase,
}

impl std::str::FromStr for AttackMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "word" => Ok(AttackMode::Word),
            "phrase" => Ok(AttackMode::Phrase),
            other => Err(format!("unknown mode {other:?} (expected word or phrase)")),
        }
    }
}

impl std::fmt::Display for AttackMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AttackMode::Word => "word",
            AttackMode::Phrase => "phrase",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub mode: AttackMode,
    pub embedded_lang: String,
    pub k_max: usize,
    pub seed: u64,
    /// Accept a candidate whose loss equals the current loss.
    pub accept_on_tie: bool,
}

impl AttackConfig {
    pub fn new(mode: AttackMode, embedded_lang: impl Into<String>, seed: u64) -> Self {
        AttackConfig {
            mode,
            embedded_lang: embedded_lang.into(),
            k_max: DEFAULT_K_MAX,
            seed,
            accept_on_tie: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Substitution {
    pub position: usize,
    pub original: String,
    pub replacement: Vec<String>,
    pub provenance: Provenance,
}

/// What happened at one visited position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub position: usize,
    pub n_candidates: usize,
    /// Index of the highest-loss candidate (first one on ties).
    pub best: Option<usize>,
    pub best_loss: Option<f64>,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub original: Utterance,
    pub adversarial: Utterance,
    /// Initial loss, then the loss after each accepted substitution.
    pub loss_trace: Vec<f64>,
    pub substitutions: Vec<Substitution>,
    pub visit_order: Vec<usize>,
    pub steps: Vec<Step>,
}

impl AttackResult {
    pub fn initial_loss(&self) -> f64 {
        self.loss_trace[0]
    }

    pub fn final_loss(&self) -> f64 {
        *self.loss_trace.last().expect("trace has the initial loss")
    }

    /// Fraction of original tokens that were replaced.
    pub fn code_switch_ratio(&self) -> f64 {
        self.substitutions.len() as f64 / self.original.len() as f64
    }
}

#[derive(Debug, Clone)]
struct Segment {
    tokens: Vec<String>,
    labels: Vec<String>,
    replaced: bool,
}

fn flatten(segments: &[Segment], intent: &str) -> LabeledSequence {
    LabeledSequence {
        tokens: segments.iter().flat_map(|s| s.tokens.iter().cloned()).collect(),
        slots: segments.iter().flat_map(|s| s.labels.iter().cloned()).collect(),
        intent: intent.to_string(),
    }
}

fn check_pairing<C: CandidateSource + ?Sized>(u: &Utterance, source: &C, cfg: &AttackConfig) -> Result<()> {
    if cfg.embedded_lang == u.lang {
        return Err(Error::Config(format!(
            "embedded language {} equals the utterance language",
            cfg.embedded_lang
        )));
    }
    if source.src_lang() != u.lang || source.tgt_lang() != cfg.embedded_lang {
        return Err(Error::Config(format!(
            "candidate source is {}->{}, attack needs {}->{}",
            source.src_lang(),
            source.tgt_lang(),
            u.lang,
            cfg.embedded_lang
        )));
    }
    if cfg.k_max == 0 {
        return Err(Error::Config("k_max must be positive".into()));
    }
    Ok(())
}

/// Visit order for `u`: a permutation drawn from the stream keyed by (seed, id).
pub fn visit_order(u: &Utterance, seed: u64) -> Vec<usize> {
    SplitMix64::derived(seed, &[&u.id]).permutation(u.len())
}

pub fn attack<S, C>(u: &Utterance, scorer: &S, source: &C, cfg: &AttackConfig) -> Result<AttackResult>
where
    S: Scorer + ?Sized,
    C: CandidateSource + ?Sized,
{
    attack_in_order(u, scorer, source, cfg, visit_order(u, cfg.seed))
}

/// Runs the attack with an explicit visit order over original positions.
pub fn attack_in_order<S, C>(
    u: &Utterance,
    scorer: &S,
    source: &C,
    cfg: &AttackConfig,
    order: Vec<usize>,
) -> Result<AttackResult>
where
    S: Scorer + ?Sized,
    C: CandidateSource + ?Sized,
{
    check_pairing(u, source, cfg)?;
    let mut sorted = order.clone();
    sorted.sort_unstable();
    if sorted != (0..u.len()).collect::<Vec<_>>() {
        return Err(Error::Config(format!("visit order {order:?} is not a permutation of 0..{}", u.len())));
    }

    let mut segments: Vec<Segment> = u
        .tokens
        .iter()
        .zip(&u.slots)
        .map(|(t, l)| Segment {
            tokens: vec![t.clone()],
            labels: vec![l.clone()],
            replaced: false,
        })
        .collect();
    let mut current = scorer.loss(&flatten(&segments, &u.intent))?;
    let mut trace = vec![current];
    let mut substitutions = Vec::new();
    let mut steps = Vec::with_capacity(u.len());

    for &pos in &order {
        if segments[pos].replaced {
            continue;
        }
        let candidates: Vec<Candidate> = source.candidates(u, pos, cfg.k_max)?;
        if candidates.is_empty() {
            steps.push(Step {
                position: pos,
                n_candidates: 0,
                best: None,
                best_loss: None,
                accepted: false,
            });
            continue;
        }
        let variants: Vec<LabeledSequence> = candidates
            .iter()
            .map(|c| {
                let saved = std::mem::replace(
                    &mut segments[pos],
                    Segment {
                        tokens: c.tokens.clone(),
                        labels: c.labels.clone(),
                        replaced: true,
                    },
                );
                let seq = flatten(&segments, &u.intent);
                segments[pos] = saved;
                seq
            })
            .collect();
        let losses = scorer.loss_batch(&variants)?;
        if losses.len() != candidates.len() {
            return Err(Error::Scorer(crate::error::ScorerError::Protocol(format!(
                "{} losses for {} candidates",
                losses.len(),
                candidates.len()
            ))));
        }
        let mut best = 0;
        for (i, &l) in losses.iter().enumerate() {
            if l > losses[best] {
                best = i;
            }
        }
        let best_loss = losses[best];
        let accepted = if cfg.accept_on_tie {
            best_loss >= current
        } else {
            best_loss > current
        };
        steps.push(Step {
            position: pos,
            n_candidates: candidates.len(),
            best: Some(best),
            best_loss: Some(best_loss),
            accepted,
        });
        if accepted {
            let c = &candidates[best];
            segments[pos] = Segment {
                tokens: c.tokens.clone(),
                labels: c.labels.clone(),
                replaced: true,
            };
            current = best_loss;
            trace.push(current);
            substitutions.push(Substitution {
                position: pos,
                original: u.tokens[pos].clone(),
                replacement: c.tokens.clone(),
                provenance: c.provenance,
            });
        }
    }

    let flat = flatten(&segments, &u.intent);
    let lang = if substitutions.is_empty() {
        u.lang.clone()
    } else {
        cfg.embedded_lang.clone()
    };
    let adversarial = Utterance {
        id: u.id.clone(),
        lang,
        tokens: flat.tokens,
        slots: flat.slots,
        intent: flat.intent,
    };
    Ok(AttackResult {
        original: u.clone(),
        adversarial,
        loss_trace: trace,
        substitutions,
        visit_order: order,
        steps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackFailure {
    pub index: usize,
    pub id: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AttackSummary {
    pub n_attacked: usize,
    pub n_failed: usize,
    pub n_tokens: usize,
    pub n_replaced: usize,
    pub mean_substitutions: f64,
    pub mean_loss_increase: f64,
    /// Replaced original tokens over all original tokens.
    pub code_switch_ratio: f64,
}

impl AttackSummary {
    pub fn from_results(results: &[AttackResult], n_failed: usize) -> Self {
        let n = results.len();
        if n == 0 {
            return AttackSummary {
                n_failed,
                ..AttackSummary::default()
            };
        }
        let n_tokens: usize = results.iter().map(|r| r.original.len()).sum();
        let n_replaced: usize = results.iter().map(|r| r.substitutions.len()).sum();
        AttackSummary {
            n_attacked: n,
            n_failed,
            n_tokens,
            n_replaced,
            mean_substitutions: n_replaced as f64 / n as f64,
            mean_loss_increase: results.iter().map(|r| r.final_loss() - r.initial_loss()).sum::<f64>() / n as f64,
            code_switch_ratio: n_replaced as f64 / n_tokens as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetAttack {
    pub results: Vec<AttackResult>,
    pub failures: Vec<AttackFailure>,
    pub summary: AttackSummary,
}

impl DatasetAttack {
    /// The adversarial utterances as a dataset tagged with `lang`.
    pub fn adversarial_dataset(&self, lang: &str) -> Result<Dataset> {
        Dataset::new(lang, self.results.iter().map(|r| r.adversarial.clone()).collect())
    }

    /// One JSON object per line, in input order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.results {
            out.push_str(&serde_json::to_string(r).expect("attack result serializes"));
            out.push('\n');
        }
        out
    }
}

fn error_chain(e: &dyn std::error::Error) -> String {
    let mut msg = e.to_string();
    let mut cause = e.source();
    while let Some(c) = cause {
        msg.push_str(": ");
        msg.push_str(&c.to_string());
        cause = c.source();
    }
    msg
}

/// Attacks every utterance, up to `parallelism` at a time; results keep input order.
///
/// Scorer failures are recorded per utterance and skipped. Configuration
/// errors abort the whole run.
pub fn attack_dataset<S, C>(
    ds: &Dataset,
    scorer: &S,
    source: &C,
    cfg: &AttackConfig,
    parallelism: usize,
) -> Result<DatasetAttack>
where
    S: Scorer + ?Sized,
    C: CandidateSource + ?Sized,
{
    let outcomes = ordered_map(ds.utterances(), parallelism, |u| attack(u, scorer, source, cfg))?;

    let mut results = Vec::with_capacity(outcomes.len());
    let mut failures = Vec::new();
    for (index, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(r) => results.push(r),
            Err(e @ Error::Config(_)) => return Err(e),
            Err(e) => {
                let id = ds.utterances()[index].id.clone();
                log::warn!("attack on {id} failed: {e}");
                failures.push(AttackFailure {
                    index,
                    id,
                    message: error_chain(&e),
                });
            }
        }
    }
    let summary = AttackSummary::from_results(&results, failures.len());
    Ok(DatasetAttack {
        results,
        failures,
        summary,
    })
}
