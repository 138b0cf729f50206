//! Synthetic bilingual intent/slot corpus.
//!
//! Utterances are sampled from per-intent templates whose `{slot}`
//! placeholders are filled with slot values. The embedded language is a
//! pseudo-language: every pivot word gets a unique invented word, so the
//! lexicon is a bijection and every translation aligns token for token.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::candidates::{AlignedSentence, AlignmentTable, BilingualLexicon};
use crate::corpus::{Dataset, ParallelCorpus, Utterance};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentTemplates {
    pub intent: String,
    pub patterns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotFiller {
    pub slot: String,
    pub values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToySpec {
    pub n_train: usize,
    pub n_test: usize,
    pub pivot_lang: String,
    pub embedded_lang: String,
    pub intents: Vec<IntentTemplates>,
    pub fillers: Vec<SlotFiller>,
    pub seed: u64,
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

const CITIES: &[&str] = &[
    "boston",
    "denver",
    "las vegas",
    "ontario",
    "kansas city",
    "newark",
    "dallas",
    "salt lake city",
    "atlanta",
    "new york",
    "seattle",
    "pittsburgh",
    "san francisco",
    "miami",
    "phoenix",
    "chicago",
];

impl Default for ToySpec {
    fn default() -> Self {
        let intents = vec![
            IntentTemplates {
                intent: "atis_flight".into(),
                patterns: strings(&[
                    "what are the flights from {fromloc.city_name} to {toloc.city_name}",
                    "show me flights from {fromloc.city_name} to {toloc.city_name} on {depart_date.day_name}",
                    "i need a flight from {fromloc.city_name} to {toloc.city_name} in the {depart_time.period_of_day}",
                    "list {airline_name} flights from {fromloc.city_name} to {toloc.city_name}",
                    "please find flights available from {fromloc.city_name} to {toloc.city_name}",
                ]),
            },
            IntentTemplates {
                intent: "atis_airfare".into(),
                patterns: strings(&[
                    "how much is a {class_type} ticket from {fromloc.city_name} to {toloc.city_name}",
                    "what is the fare from {fromloc.city_name} to {toloc.city_name} on {airline_name}",
                    "show me the cheapest fares from {fromloc.city_name} to {toloc.city_name}",
                    "what does a {class_type} fare cost from {fromloc.city_name} to {toloc.city_name} on {depart_date.day_name}",
                ]),
            },
            IntentTemplates {
                intent: "atis_ground_service".into(),
                patterns: strings(&[
                    "what ground transportation is available in {toloc.city_name}",
                    "is there a limousine service in {toloc.city_name}",
                    "how do i get from the airport to downtown {toloc.city_name}",
                    "show ground transportation in {toloc.city_name} on {depart_date.day_name}",
                ]),
            },
            IntentTemplates {
                intent: "atis_airline".into(),
                patterns: strings(&[
                    "which airlines fly from {fromloc.city_name} to {toloc.city_name}",
                    "what airlines have flights from {fromloc.city_name} to {toloc.city_name} in the {depart_time.period_of_day}",
                    "does {airline_name} fly from {fromloc.city_name} to {toloc.city_name}",
                    "list all airlines serving {toloc.city_name}",
                ]),
            },
        ];
        let fillers = vec![
            SlotFiller {
                slot: "fromloc.city_name".into(),
                values: strings(CITIES),
            },
            SlotFiller {
                slot: "toloc.city_name".into(),
                values: strings(CITIES),
            },
            SlotFiller {
                slot: "depart_date.day_name".into(),
                values: strings(&["monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"]),
            },
            SlotFiller {
                slot: "depart_time.period_of_day".into(),
                values: strings(&["morning", "afternoon", "evening", "night"]),
            },
            SlotFiller {
                slot: "airline_name".into(),
                values: strings(&["delta", "united", "american airlines", "us air", "continental", "lufthansa"]),
            },
            SlotFiller {
                slot: "class_type".into(),
                values: strings(&["first class", "economy", "business", "coach"]),
            },
        ];
        ToySpec {
            n_train: 500,
            n_test: 100,
            pivot_lang: "en".into(),
            embedded_lang: "xx".into(),
            intents,
            fillers,
            seed: 2021,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyCorpus {
    pub train: ParallelCorpus,
    pub test: ParallelCorpus,
    pub lexicon: BilingualLexicon,
    /// Alignments for both train and test ids.
    pub alignments: AlignmentTable,
}

impl ToyCorpus {
    pub fn pivot_lang(&self) -> &str {
        self.train.pivot.lang()
    }

    pub fn embedded_lang(&self) -> &str {
        self.train.others.keys().next().expect("one embedded language")
    }

    /// Writes the standard file formats into `dir`:
    /// `{p}.train.tsv`, `{p}.test.tsv`, `{e}.train.tsv`, `{e}.test.tsv`,
    /// `lexicon.{p}-{e}.tsv` and `align.{p}-{e}.txt`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let p = self.pivot_lang().to_string();
        let e = self.embedded_lang().to_string();
        self.train.pivot.write_tsv(&dir.join(format!("{p}.train.tsv")), false)?;
        self.test.pivot.write_tsv(&dir.join(format!("{p}.test.tsv")), false)?;
        self.train.others[&e].write_tsv(&dir.join(format!("{e}.train.tsv")), false)?;
        self.test.others[&e].write_tsv(&dir.join(format!("{e}.test.tsv")), false)?;
        self.lexicon.write(&dir.join(format!("lexicon.{p}-{e}.tsv")))?;
        self.alignments.write(&dir.join(format!("align.{p}-{e}.txt")))
    }
}

enum Piece<'a> {
    Word(&'a str),
    Slot(&'a SlotFiller),
}

fn compile<'a>(pattern: &'a str, fillers: &'a [SlotFiller]) -> Result<Vec<Piece<'a>>> {
    let pieces: Vec<Piece> = pattern
        .split_whitespace()
        .map(|w| match w.strip_prefix('{').and_then(|w| w.strip_suffix('}')) {
            Some(name) => fillers
                .iter()
                .find(|f| f.slot == name)
                .map(Piece::Slot)
                .ok_or_else(|| Error::Config(format!("template {pattern:?} uses unknown slot {name:?}"))),
            None if w.contains(['{', '}']) => Err(Error::Config(format!("malformed placeholder {w:?}"))),
            None => Ok(Piece::Word(w)),
        })
        .collect::<Result<_>>()?;
    if pieces.is_empty() {
        return Err(Error::Config("empty template".into()));
    }
    Ok(pieces)
}

fn validate(spec: &ToySpec) -> Result<()> {
    if spec.pivot_lang == spec.embedded_lang {
        return Err(Error::Config("pivot and embedded languages must differ".into()));
    }
    if spec.intents.is_empty() || spec.intents.iter().any(|i| i.patterns.is_empty()) {
        return Err(Error::Config("every intent needs at least one template".into()));
    }
    for f in &spec.fillers {
        if f.slot.is_empty() || f.slot.contains(char::is_whitespace) {
            return Err(Error::Config(format!("invalid slot name {:?}", f.slot)));
        }
        if f.values.is_empty() || f.values.iter().any(|v| v.split_whitespace().next().is_none()) {
            return Err(Error::Config(format!("slot {} needs non-empty values", f.slot)));
        }
    }
    Ok(())
}

const ONSETS: &[&str] = &["b", "d", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "sh", "kr", "tl"];
const NUCLEI: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou"];

fn pseudo_word(rng: &mut SplitMix64) -> String {
    let syllables = 2 + rng.below(2);
    let mut w = String::new();
    for _ in 0..syllables {
        w.push_str(ONSETS[rng.below(ONSETS.len())]);
        w.push_str(NUCLEI[rng.below(NUCLEI.len())]);
    }
    w.push_str(["q", "x", "j"][rng.below(3)]);
    w
}

pub fn generate_toy(spec: &ToySpec) -> Result<ToyCorpus> {
    validate(spec)?;
    let compiled: Vec<(String, Vec<Vec<Piece>>)> = spec
        .intents
        .iter()
        .map(|i| {
            let ps = i
                .patterns
                .iter()
                .map(|p| compile(p, &spec.fillers))
                .collect::<Result<Vec<_>>>()?;
            Ok((i.intent.clone(), ps))
        })
        .collect::<Result<_>>()?;

    let mut vocab = BTreeSet::new();
    for (_, patterns) in &compiled {
        for pieces in patterns {
            for piece in pieces {
                if let Piece::Word(w) = piece {
                    vocab.insert(w.to_string());
                }
            }
        }
    }
    for f in &spec.fillers {
        for v in &f.values {
            vocab.extend(v.split_whitespace().map(str::to_string));
        }
    }

    let mut word_rng = SplitMix64::derived(spec.seed, &["lexicon"]);
    let mut used: HashSet<String> = vocab.iter().cloned().collect();
    let mut translation = BTreeMap::new();
    for w in &vocab {
        let mut t = pseudo_word(&mut word_rng);
        while used.contains(&t) {
            t = pseudo_word(&mut word_rng);
        }
        used.insert(t.clone());
        translation.insert(w.clone(), t);
    }
    let mut lexicon = BilingualLexicon::new(&spec.pivot_lang, &spec.embedded_lang);
    for (src, tgt) in &translation {
        lexicon.insert(src, vec![tgt.clone()]);
    }

    let mut rng = SplitMix64::derived(spec.seed, &["utterances"]);
    let mut alignments = AlignmentTable::new(&spec.pivot_lang, &spec.embedded_lang);
    let mut make = |prefix: &str, n: usize| -> Result<(Dataset, Dataset)> {
        let mut pivot = Vec::with_capacity(n);
        let mut embedded = Vec::with_capacity(n);
        for k in 0..n {
            let (intent, patterns) = &compiled[rng.below(compiled.len())];
            let pieces = &patterns[rng.below(patterns.len())];
            let mut tokens = Vec::new();
            let mut slots = Vec::new();
            for piece in pieces {
                match piece {
                    Piece::Word(w) => {
                        tokens.push(w.to_string());
                        slots.push("O".to_string());
                    }
                    Piece::Slot(f) => {
                        let value = &f.values[rng.below(f.values.len())];
                        for (i, w) in value.split_whitespace().enumerate() {
                            tokens.push(w.to_string());
                            slots.push(format!("{}-{}", if i == 0 { 'B' } else { 'I' }, f.slot));
                        }
                    }
                }
            }
            let id = format!("{prefix}-{k:05}");
            let tgt: Vec<String> = tokens.iter().map(|t| translation[t].clone()).collect();
            alignments.insert(id.clone(), AlignedSentence::new(tgt.clone(), (0..tokens.len()).map(|i| (i, i)))?);
            embedded.push(Utterance::new(id.clone(), &spec.embedded_lang, tgt, slots.clone(), intent)?);
            pivot.push(Utterance::new(id, &spec.pivot_lang, tokens, slots, intent)?);
        }
        Ok((Dataset::new(&spec.pivot_lang, pivot)?, Dataset::new(&spec.embedded_lang, embedded)?))
    };
    let (train_p, train_e) = make("train", spec.n_train)?;
    let (test_p, test_e) = make("test", spec.n_test)?;
    let parallel = |p: Dataset, e: Dataset| {
        ParallelCorpus::new(p, BTreeMap::from([(spec.embedded_lang.clone(), e)]))
    };
    Ok(ToyCorpus {
        train: parallel(train_p, train_e)?,
        test: parallel(test_p, test_e)?,
        lexicon,
        alignments,
    })
}
