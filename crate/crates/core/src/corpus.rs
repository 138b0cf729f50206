//! Labeled utterances, datasets and parallel corpora.
//!
//! Datasets are stored as UTF-8 TSV with a header line. The 4-column layout is
//! `id\tutterance\tslot_labels\tintent`; the 5-column layout used for mixed
//! (code-switched) data inserts a `lang` column after the id. Tokens and labels
//! are space-separated and written back verbatim, so a well-formed file
//! round-trips byte for byte.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HEADER_4: &str = "id\tutterance\tslot_labels\tintent";
pub const HEADER_5: &str = "id\tlang\tutterance\tslot_labels\tintent";

/// Case folding used for every lexicon and vocabulary lookup.
pub fn fold(token: &str) -> String {
    token.to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: String,
    pub lang: String,
    pub tokens: Vec<String>,
    pub slots: Vec<String>,
    pub intent: String,
}

impl Utterance {
    /// Builds an utterance, checking lengths and label syntax (not BIO order).
    pub fn new(
        id: impl Into<String>,
        lang: impl Into<String>,
        tokens: Vec<String>,
        slots: Vec<String>,
        intent: impl Into<String>,
    ) -> Result<Self> {
        let u = Utterance {
            id: id.into(),
            lang: lang.into(),
            tokens,
            slots,
            intent: intent.into(),
        };
        u.check_shape().map_err(Error::Data)?;
        Ok(u)
    }

    fn check_shape(&self) -> std::result::Result<(), String> {
        if self.tokens.is_empty() {
            return Err(format!("utterance {}: no tokens", self.id));
        }
        if self.tokens.len() != self.slots.len() {
            return Err(format!(
                "utterance {}: length mismatch ({} tokens, {} slot labels)",
                self.id,
                self.tokens.len(),
                self.slots.len()
            ));
        }
        if let Some(t) = self.tokens.iter().find(|t| t.is_empty() || t.contains(char::is_whitespace)) {
            return Err(format!("utterance {}: invalid token {t:?}", self.id));
        }
        if let Some(l) = self.slots.iter().find(|l| !is_label(l)) {
            return Err(format!("utterance {}: malformed slot label {l:?}", self.id));
        }
        if self.intent.is_empty() || self.intent.contains(char::is_whitespace) {
            return Err(format!("utterance {}: invalid intent {:?}", self.id, self.intent));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Splits a BIO label into its prefix and slot type.
pub fn parse_label(label: &str) -> Option<(char, &str)> {
    if label == "O" {
        return Some(('O', ""));
    }
    let (prefix, ty) = label.split_once('-')?;
    match prefix {
        "B" | "I" if !ty.is_empty() => Some((prefix.chars().next().unwrap(), ty)),
        _ => None,
    }
}

fn is_label(label: &str) -> bool {
    parse_label(label).is_some()
}

/// Positions where an `I-<t>` label is not preceded by `B-<t>` or `I-<t>`.
pub fn validate_bio<S: AsRef<str>>(slots: &[S]) -> Vec<usize> {
    let mut violations = Vec::new();
    let mut prev: Option<&str> = None;
    for (i, label) in slots.iter().enumerate() {
        let label = label.as_ref();
        if let Some(('I', ty)) = parse_label(label) {
            let ok = matches!(prev.and_then(parse_label), Some(('B' | 'I', p)) if p == ty);
            if !ok {
                violations.push(i);
            }
        }
        prev = Some(label);
    }
    violations
}

/// Rewrites orphan `I-x` labels to `B-x`, returning the positions touched.
pub fn repair_bio(slots: &mut [String]) -> Vec<usize> {
    let bad = validate_bio(slots);
    for &i in &bad {
        let ty = slots[i][2..].to_string();
        slots[i] = format!("B-{ty}");
    }
    bad
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BioPolicy {
    /// Orphan `I-x` becomes `B-x`; a warning is recorded.
    #[default]
    Repair,
    /// Any violation is a load error.
    Strict,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadWarning {
    pub line: usize,
    pub id: String,
    pub positions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    lang: String,
    utterances: Vec<Utterance>,
    intent_vocab: BTreeSet<String>,
    slot_vocab: BTreeSet<String>,
}

impl Dataset {
    pub fn new(lang: impl Into<String>, utterances: Vec<Utterance>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(utterances.len());
        for u in &utterances {
            if !seen.insert(u.id.as_str()) {
                return Err(Error::Data(format!("duplicate utterance id {:?}", u.id)));
            }
        }
        let intent_vocab = utterances.iter().map(|u| u.intent.clone()).collect();
        let slot_vocab = utterances.iter().flat_map(|u| u.slots.iter().cloned()).collect();
        Ok(Dataset {
            lang: lang.into(),
            utterances,
            intent_vocab,
            slot_vocab,
        })
    }

    pub fn empty(lang: impl Into<String>) -> Self {
        Dataset::new(lang, Vec::new()).expect("empty dataset is valid")
    }

    pub fn lang(&self) -> &str {
        &self.lang
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn into_utterances(self) -> Vec<Utterance> {
        self.utterances
    }

    pub fn intent_vocab(&self) -> &BTreeSet<String> {
        &self.intent_vocab
    }

    pub fn slot_vocab(&self) -> &BTreeSet<String> {
        &self.slot_vocab
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Utterance> {
        self.utterances.iter().find(|u| u.id == id)
    }

    /// Concatenates datasets; ids must stay unique across parts.
    pub fn concat(lang: impl Into<String>, parts: &[&Dataset]) -> Result<Dataset> {
        let all = parts.iter().flat_map(|d| d.utterances.iter().cloned()).collect();
        Dataset::new(lang, all)
    }

    /// 4-column TSV.
    pub fn to_tsv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.len() + 1));
        out.push_str(HEADER_4);
        out.push('\n');
        for u in &self.utterances {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}",
                u.id,
                u.tokens.join(" "),
                u.slots.join(" "),
                u.intent
            );
        }
        out
    }

    /// 5-column TSV carrying each utterance's own language tag.
    pub fn to_tsv_with_lang(&self) -> String {
        let mut out = String::with_capacity(64 * (self.len() + 1));
        out.push_str(HEADER_5);
        out.push('\n');
        for u in &self.utterances {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                u.id,
                u.lang,
                u.tokens.join(" "),
                u.slots.join(" "),
                u.intent
            );
        }
        out
    }

    pub fn write_tsv(&self, path: &Path, with_lang: bool) -> Result<()> {
        let text = if with_lang {
            self.to_tsv_with_lang()
        } else {
            self.to_tsv()
        };
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Loads a dataset with the default (repair) BIO policy; repairs are logged.
pub fn load_dataset(path: &Path, lang: &str) -> Result<Dataset> {
    let (ds, warnings) = load_dataset_with(path, lang, BioPolicy::Repair)?;
    for w in &warnings {
        warn!(
            "{}:{}: repaired orphan I- labels at {:?} in utterance {}",
            path.display(),
            w.line,
            w.positions,
            w.id
        );
    }
    Ok(ds)
}

pub fn load_dataset_with(path: &Path, lang: &str, policy: BioPolicy) -> Result<(Dataset, Vec<LoadWarning>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, lang, policy).map_err(|(line, msg)| Error::parse(path, line, msg))
}

/// Parses TSV text. Errors carry the 1-based line number.
pub fn parse_dataset(
    text: &str,
    lang: &str,
    policy: BioPolicy,
) -> std::result::Result<(Dataset, Vec<LoadWarning>), (usize, String)> {
    let mut lines = text.lines();
    let header = lines.next().ok_or((1, "missing header".to_string()))?;
    let with_lang = match header {
        HEADER_4 => false,
        HEADER_5 => true,
        other => return Err((1, format!("unexpected header {other:?}"))),
    };
    let n_cols = if with_lang { 5 } else { 4 };
    let mut utterances = Vec::new();
    let mut warnings = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != n_cols {
            return Err((line_no, format!("expected {n_cols} columns, found {}", cols.len())));
        }
        let (id, row_lang, rest) = if with_lang {
            (cols[0], cols[1], &cols[2..])
        } else {
            (cols[0], lang, &cols[1..])
        };
        if id.is_empty() {
            return Err((line_no, "empty id".to_string()));
        }
        if !seen.insert(id.to_string()) {
            return Err((line_no, format!("duplicate id {id:?}")));
        }
        let tokens: Vec<String> = rest[0].split(' ').map(str::to_string).collect();
        let mut slots: Vec<String> = rest[1].split(' ').map(str::to_string).collect();
        if tokens.len() != slots.len() {
            return Err((
                line_no,
                format!(
                    "length mismatch at line {line_no}: {} tokens, {} slot labels",
                    tokens.len(),
                    slots.len()
                ),
            ));
        }
        if tokens.iter().any(String::is_empty) {
            return Err((line_no, "empty token".to_string()));
        }
        if let Some(l) = slots.iter().find(|l| !is_label(l)) {
            return Err((line_no, format!("malformed slot label {l:?}")));
        }
        let bad = validate_bio(&slots);
        if !bad.is_empty() {
            match policy {
                BioPolicy::Strict => {
                    return Err((line_no, format!("BIO violation at positions {bad:?}")));
                }
                BioPolicy::Repair => {
                    repair_bio(&mut slots);
                    warnings.push(LoadWarning {
                        line: line_no,
                        id: id.to_string(),
                        positions: bad,
                    });
                }
            }
        }
        let u = Utterance::new(id, row_lang, tokens, slots, rest[2]).map_err(|e| (line_no, e.to_string()))?;
        utterances.push(u);
    }
    let ds = Dataset::new(lang, utterances).map_err(|e| (0, e.to_string()))?;
    Ok((ds, warnings))
}

/// Result of matching a pivot dataset against one translation.
#[derive(Debug, Clone, Default)]
pub struct PairingReport {
    pub pairs: Vec<(Utterance, Utterance)>,
    pub only_in_pivot: usize,
    pub only_in_other: usize,
    /// Ids of pairs whose intent labels differ.
    pub intent_mismatches: Vec<String>,
}

impl PairingReport {
    pub fn omitted(&self) -> usize {
        self.only_in_pivot + self.only_in_other
    }
}

/// Pairs utterances by id in pivot order.
pub fn pair_parallel(pivot: &Dataset, other: &Dataset) -> Result<PairingReport> {
    let mut by_id: HashMap<&str, &Utterance> = HashMap::with_capacity(other.len());
    for u in other.utterances() {
        if by_id.insert(u.id.as_str(), u).is_some() {
            return Err(Error::Data(format!("duplicate id {:?} in {} dataset", u.id, other.lang())));
        }
    }
    let mut report = PairingReport::default();
    let mut matched = 0;
    for p in pivot.utterances() {
        match by_id.get(p.id.as_str()) {
            Some(o) => {
                matched += 1;
                if p.intent != o.intent {
                    report.intent_mismatches.push(p.id.clone());
                }
                report.pairs.push((p.clone(), (*o).clone()));
            }
            None => report.only_in_pivot += 1,
        }
    }
    report.only_in_other = other.len() - matched;
    Ok(report)
}

/// A pivot (matrix-language) dataset and its translations.
#[derive(Debug, Clone)]
pub struct ParallelCorpus {
    pub pivot: Dataset,
    pub others: BTreeMap<String, Dataset>,
}

impl ParallelCorpus {
    pub fn new(pivot: Dataset, others: BTreeMap<String, Dataset>) -> Result<Self> {
        for (lang, ds) in &others {
            if lang != ds.lang() {
                return Err(Error::Data(format!(
                    "dataset registered as {lang} has language {}",
                    ds.lang()
                )));
            }
            if lang == pivot.lang() {
                return Err(Error::Data(format!("pivot language {lang} listed among translations")));
            }
        }
        Ok(ParallelCorpus { pivot, others })
    }

    pub fn pairing(&self, lang: &str) -> Result<PairingReport> {
        let other = self
            .others
            .get(lang)
            .ok_or_else(|| Error::Data(format!("no {lang} dataset in parallel corpus")))?;
        pair_parallel(&self.pivot, other)
    }
}
