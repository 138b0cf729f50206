use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LabeledSequence, Prediction, Scorer};
use crate::corpus::{fold, Utterance};
use crate::error::{Error, Result, ScorerError};
use crate::rng::SplitMix64;

const FORMAT: &str = "codemix-joint-linear";
const VERSION: u32 = 1;
const BOS: &str = "<s>";
const EOS: &str = "</s>";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Context tokens on each side for the slot head.
    pub window: usize,
    /// Longest prefix/suffix feature.
    pub affix_max: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            window: 2,
            affix_max: 3,
            epochs: 12,
            learning_rate: 0.5,
            l2: 1e-4,
            batch_size: 16,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub heldout_loss: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelData {
    format: String,
    version: u32,
    config: ModelConfig,
    vocab: Vec<String>,
    intents: Vec<String>,
    slots: Vec<String>,
    intent_features: Vec<String>,
    slot_features: Vec<String>,
    /// Row-major `[feature][intent]`.
    intent_weights: Vec<f64>,
    /// Row-major `[feature][slot label]`.
    slot_weights: Vec<f64>,
}

/// Log-linear joint intent classifier and per-token slot tagger.
///
/// The intent head scores case-folded unigrams and bigrams; the slot head
/// scores a token window, prefixes and suffixes, and an out-of-vocabulary
/// indicator. The joint loss is intent NLL plus mean per-token slot NLL.
#[derive(Debug, Clone)]
pub struct JointLinearModel {
    data: ModelData,
    vocab: HashSet<String>,
    intent_feat: HashMap<String, usize>,
    slot_feat: HashMap<String, usize>,
    intent_label: HashMap<String, usize>,
    slot_label: HashMap<String, usize>,
}

fn index_of(names: &[String]) -> HashMap<String, usize> {
    names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect()
}

fn intent_features(folded: &[String]) -> Vec<String> {
    let mut feats = Vec::with_capacity(2 * folded.len() + 2);
    feats.push("bias".to_string());
    for t in folded {
        feats.push(format!("u={t}"));
    }
    let mut prev = BOS;
    for t in folded.iter().map(String::as_str).chain(std::iter::once(EOS)) {
        feats.push(format!("b={prev}|{t}"));
        prev = t;
    }
    feats
}

fn slot_features(folded: &[String], i: usize, cfg: &ModelConfig, vocab: &HashSet<String>) -> Vec<String> {
    let mut feats = Vec::with_capacity(4 + 2 * cfg.window + 2 * cfg.affix_max);
    feats.push("bias".to_string());
    let w = cfg.window as isize;
    for off in -w..=w {
        let j = i as isize + off;
        let tok = if j < 0 {
            BOS
        } else if j as usize >= folded.len() {
            EOS
        } else {
            folded[j as usize].as_str()
        };
        feats.push(format!("w{off}={tok}"));
    }
    let chars: Vec<char> = folded[i].chars().collect();
    for n in 1..=cfg.affix_max.min(chars.len()) {
        let p: String = chars[..n].iter().collect();
        let s: String = chars[chars.len() - n..].iter().collect();
        feats.push(format!("p{n}={p}"));
        feats.push(format!("s{n}={s}"));
    }
    if !vocab.contains(&folded[i]) {
        feats.push("oov".to_string());
    }
    feats
}

fn register(index: &mut HashMap<String, usize>, names: &mut Vec<String>, feats: Vec<String>) -> Vec<usize> {
    feats
        .into_iter()
        .map(|f| {
            if let Some(&i) = index.get(&f) {
                i
            } else {
                let i = names.len();
                names.push(f.clone());
                index.insert(f, i);
                i
            }
        })
        .collect()
}

fn lookup(index: &HashMap<String, usize>, feats: Vec<String>) -> Vec<usize> {
    feats.into_iter().filter_map(|f| index.get(&f).copied()).collect()
}

fn scores(weights: &[f64], n_labels: usize, feats: &[usize]) -> Vec<f64> {
    let mut s = vec![0.0; n_labels];
    for &f in feats {
        let row = &weights[f * n_labels..(f + 1) * n_labels];
        for (acc, w) in s.iter_mut().zip(row) {
            *acc += w;
        }
    }
    s
}

fn log_sum_exp(s: &[f64]) -> f64 {
    let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + s.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Negative log-likelihood of `gold`. A label outside the model's vocabulary
/// is scored as an extra class with score 0.
fn nll(s: &[f64], gold: Option<usize>) -> f64 {
    match gold {
        Some(g) => log_sum_exp(s) - s[g],
        None => {
            let mut ext = s.to_vec();
            ext.push(0.0);
            log_sum_exp(&ext)
        }
    }
}

fn argmax(s: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in s.iter().enumerate() {
        if v > s[best] {
            best = i;
        }
    }
    best
}

fn softmax_into(s: &[f64], out: &mut Vec<f64>) {
    let lse = log_sum_exp(s);
    out.clear();
    out.extend(s.iter().map(|x| (x - lse).exp()));
}

struct Encoded {
    intent_feats: Vec<usize>,
    intent_gold: usize,
    slot_feats: Vec<Vec<usize>>,
    slot_gold: Vec<usize>,
}

impl JointLinearModel {
    pub fn train(cfg: &ModelConfig, data: &[Utterance]) -> Result<(Self, TrainLog)> {
        Self::train_with_heldout(cfg, data, &[])
    }

    /// Trains by mini-batch gradient descent with L2 decay. When `heldout` is
    /// non-empty its mean loss is logged after every epoch.
    pub fn train_with_heldout(cfg: &ModelConfig, data: &[Utterance], heldout: &[Utterance]) -> Result<(Self, TrainLog)> {
        if data.is_empty() {
            return Err(Error::Data("cannot train on an empty dataset".into()));
        }
        if cfg.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        let vocab_sorted: BTreeSet<String> = data.iter().flat_map(|u| u.tokens.iter().map(|t| fold(t))).collect();
        let intents: Vec<String> = data.iter().map(|u| u.intent.clone()).collect::<BTreeSet<_>>().into_iter().collect();
        let slots: Vec<String> = data
            .iter()
            .flat_map(|u| u.slots.iter().cloned())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let vocab: HashSet<String> = vocab_sorted.iter().cloned().collect();
        let intent_label = index_of(&intents);
        let slot_label = index_of(&slots);

        let mut intent_names = vec!["bias".to_string()];
        let mut slot_names = vec!["bias".to_string(), "oov".to_string()];
        let mut intent_feat = index_of(&intent_names);
        let mut slot_feat = index_of(&slot_names);

        let mut encoded = Vec::with_capacity(data.len());
        for u in data {
            let folded: Vec<String> = u.tokens.iter().map(|t| fold(t)).collect();
            let intent_feats = register(&mut intent_feat, &mut intent_names, intent_features(&folded));
            let slot_feats = (0..folded.len())
                .map(|i| register(&mut slot_feat, &mut slot_names, slot_features(&folded, i, cfg, &vocab)))
                .collect();
            encoded.push(Encoded {
                intent_feats,
                intent_gold: intent_label[&u.intent],
                slot_feats,
                slot_gold: u.slots.iter().map(|s| slot_label[s]).collect(),
            });
        }

        let n_int = intents.len();
        let n_slot = slots.len();
        let mut model = JointLinearModel {
            data: ModelData {
                format: FORMAT.to_string(),
                version: VERSION,
                config: cfg.clone(),
                vocab: vocab_sorted.into_iter().collect(),
                intents,
                slots,
                intent_weights: vec![0.0; intent_names.len() * n_int],
                slot_weights: vec![0.0; slot_names.len() * n_slot],
                intent_features: intent_names,
                slot_features: slot_names,
            },
            vocab,
            intent_feat,
            slot_feat,
            intent_label,
            slot_label,
        };

        let heldout: Vec<LabeledSequence> = heldout.iter().map(LabeledSequence::from).collect();
        let mut rng = SplitMix64::new(cfg.seed);
        let mut log = TrainLog::default();
        let mut g_int = vec![0.0; model.data.intent_weights.len()];
        let mut g_slot = vec![0.0; model.data.slot_weights.len()];
        let mut probs = Vec::new();

        for epoch in 1..=cfg.epochs {
            let order = rng.permutation(encoded.len());
            for batch in order.chunks(cfg.batch_size) {
                g_int.iter_mut().for_each(|g| *g = 0.0);
                g_slot.iter_mut().for_each(|g| *g = 0.0);
                for &ex in batch {
                    let e = &encoded[ex];
                    let s = scores(&model.data.intent_weights, n_int, &e.intent_feats);
                    softmax_into(&s, &mut probs);
                    probs[e.intent_gold] -= 1.0;
                    for &f in &e.intent_feats {
                        for (g, p) in g_int[f * n_int..(f + 1) * n_int].iter_mut().zip(&probs) {
                            *g += p;
                        }
                    }
                    let scale = 1.0 / e.slot_feats.len() as f64;
                    for (feats, &gold) in e.slot_feats.iter().zip(&e.slot_gold) {
                        let s = scores(&model.data.slot_weights, n_slot, feats);
                        softmax_into(&s, &mut probs);
                        probs[gold] -= 1.0;
                        for &f in feats {
                            for (g, p) in g_slot[f * n_slot..(f + 1) * n_slot].iter_mut().zip(&probs) {
                                *g += p * scale;
                            }
                        }
                    }
                }
                let step = cfg.learning_rate / batch.len() as f64;
                let decay = cfg.learning_rate * cfg.l2;
                for (w, g) in model.data.intent_weights.iter_mut().zip(&g_int) {
                    *w -= step * g + decay * *w;
                }
                for (w, g) in model.data.slot_weights.iter_mut().zip(&g_slot) {
                    *w -= step * g + decay * *w;
                }
            }
            let train_loss = encoded.iter().map(|e| model.encoded_loss(e)).sum::<f64>() / encoded.len() as f64;
            let heldout_loss = if heldout.is_empty() {
                None
            } else {
                Some(heldout.iter().map(|x| model.joint_loss(x)).sum::<f64>() / heldout.len() as f64)
            };
            log::debug!("epoch {epoch}: train loss {train_loss:.6}");
            log.epochs.push(EpochStats {
                epoch,
                train_loss,
                heldout_loss,
            });
        }
        Ok((model, log))
    }

    fn encoded_loss(&self, e: &Encoded) -> f64 {
        let n_int = self.data.intents.len();
        let n_slot = self.data.slots.len();
        let intent = nll(&scores(&self.data.intent_weights, n_int, &e.intent_feats), Some(e.intent_gold));
        let slot: f64 = e
            .slot_feats
            .iter()
            .zip(&e.slot_gold)
            .map(|(f, &g)| nll(&scores(&self.data.slot_weights, n_slot, f), Some(g)))
            .sum();
        intent + slot / e.slot_feats.len() as f64
    }

    fn featurize(&self, tokens: &[String]) -> (Vec<usize>, Vec<Vec<usize>>) {
        let folded: Vec<String> = tokens.iter().map(|t| fold(t)).collect();
        let intent = lookup(&self.intent_feat, intent_features(&folded));
        let slots = (0..folded.len())
            .map(|i| lookup(&self.slot_feat, slot_features(&folded, i, &self.data.config, &self.vocab)))
            .collect();
        (intent, slots)
    }

    pub fn joint_loss(&self, x: &LabeledSequence) -> f64 {
        let n_int = self.data.intents.len();
        let n_slot = self.data.slots.len();
        let (intent_feats, slot_feats) = self.featurize(&x.tokens);
        let intent = nll(
            &scores(&self.data.intent_weights, n_int, &intent_feats),
            self.intent_label.get(&x.intent).copied(),
        );
        let slot: f64 = slot_feats
            .iter()
            .zip(&x.slots)
            .map(|(f, gold)| nll(&scores(&self.data.slot_weights, n_slot, f), self.slot_label.get(gold).copied()))
            .sum();
        intent + slot / slot_feats.len().max(1) as f64
    }

    pub fn predict_tokens(&self, tokens: &[String]) -> Prediction {
        let (intent_feats, slot_feats) = self.featurize(tokens);
        let n_int = self.data.intents.len();
        let n_slot = self.data.slots.len();
        let intent = argmax(&scores(&self.data.intent_weights, n_int, &intent_feats));
        Prediction {
            intent: self.data.intents[intent].clone(),
            slots: slot_feats
                .iter()
                .map(|f| self.data.slots[argmax(&scores(&self.data.slot_weights, n_slot, f))].clone())
                .collect(),
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.data.config
    }

    pub fn intents(&self) -> &[String] {
        &self.data.intents
    }

    pub fn slot_labels(&self) -> &[String] {
        &self.data.slots
    }

    pub fn intent_weights(&self) -> &[f64] {
        &self.data.intent_weights
    }

    pub fn slot_weights(&self) -> &[f64] {
        &self.data.slot_weights
    }

    pub fn in_vocab(&self, token: &str) -> bool {
        self.vocab.contains(&fold(token))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.data).expect("model data serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let data: ModelData = serde_json::from_str(text).map_err(|e| Error::Data(format!("model file: {e}")))?;
        if data.format != FORMAT || data.version != VERSION {
            return Err(Error::Data(format!(
                "unsupported model format {} v{}",
                data.format, data.version
            )));
        }
        if data.intent_weights.len() != data.intent_features.len() * data.intents.len()
            || data.slot_weights.len() != data.slot_features.len() * data.slots.len()
        {
            return Err(Error::Data("model file: weight table size mismatch".into()));
        }
        Ok(JointLinearModel {
            vocab: data.vocab.iter().cloned().collect(),
            intent_feat: index_of(&data.intent_features),
            slot_feat: index_of(&data.slot_features),
            intent_label: index_of(&data.intents),
            slot_label: index_of(&data.slots),
            data,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

impl Scorer for JointLinearModel {
    fn loss_batch(&self, items: &[LabeledSequence]) -> Result<Vec<f64>, ScorerError> {
        items
            .iter()
            .map(|x| {
                if x.tokens.len() != x.slots.len() {
                    return Err(ScorerError::Protocol(format!(
                        "{} tokens but {} slot labels",
                        x.tokens.len(),
                        x.slots.len()
                    )));
                }
                Ok(self.joint_loss(x))
            })
            .collect()
    }

    fn predict_batch(&self, items: &[Vec<String>]) -> Result<Vec<Prediction>, ScorerError> {
        Ok(items.iter().map(|t| self.predict_tokens(t)).collect())
    }
}
