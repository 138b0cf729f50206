//! Substitution candidates for a token position.
//!
//! Word-level candidates come from a [`BilingualLexicon`], phrase-level ones
//! from an [`AlignmentTable`] built over a parallel corpus. Either way the
//! replacement may span several tokens, and the original slot label is
//! stretched over it with [`extend_slot_labels`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{fold, Dataset, Utterance};
use crate::error::{Error, Result};

pub const DEFAULT_K_MAX: usize = 8;

/// Stretches one slot label over `num_tokens` replacement tokens.
///
/// A `B-x` label opens the span and the remaining tokens continue it with
/// `I-x`; any other label is repeated as is.
pub fn extend_slot_labels(label: &str, num_tokens: usize) -> Vec<String> {
    assert!(num_tokens >= 1, "replacement must have at least one token");
    let mut labels = vec![label.to_string()];
    if num_tokens > 1 {
        if let Some(rest) = label.strip_prefix('B') {
            labels.extend(std::iter::repeat_n(format!("I{rest}"), num_tokens - 1));
        } else {
            labels = vec![label.to_string(); num_tokens];
        }
    }
    labels
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Lexicon,
    Alignment,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub position: usize,
    pub tokens: Vec<String>,
    pub labels: Vec<String>,
    pub provenance: Provenance,
}

/// Anything that proposes replacements for an original token position.
pub trait CandidateSource: Sync {
    fn src_lang(&self) -> &str;
    fn tgt_lang(&self) -> &str;
    fn candidates(&self, u: &Utterance, position: usize, k_max: usize) -> Result<Vec<Candidate>>;
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BilingualLexicon {
    src_lang: String,
    tgt_lang: String,
    entries: BTreeMap<String, Vec<Vec<String>>>,
}

impl BilingualLexicon {
    pub fn new(src_lang: impl Into<String>, tgt_lang: impl Into<String>) -> Self {
        BilingualLexicon {
            src_lang: src_lang.into(),
            tgt_lang: tgt_lang.into(),
            entries: BTreeMap::new(),
        }
    }

    /// Adds a translation; empty phrases and duplicates are ignored.
    pub fn insert(&mut self, src: &str, phrase: Vec<String>) {
        if phrase.is_empty() || phrase.iter().any(String::is_empty) {
            return;
        }
        let list = self.entries.entry(fold(src)).or_default();
        if !list.contains(&phrase) {
            list.push(phrase);
        }
    }

    pub fn lookup(&self, token: &str) -> &[Vec<String>] {
        self.entries.get(&fold(token)).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &[Vec<String>])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Reads `src_token\ttgt_phrase` rows (no header).
    pub fn load(path: &Path, src_lang: &str, tgt_lang: &str) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, src_lang, tgt_lang).map_err(|(line, msg)| Error::parse(path, line, msg))
    }

    pub fn parse(text: &str, src_lang: &str, tgt_lang: &str) -> std::result::Result<Self, (usize, String)> {
        let mut lex = BilingualLexicon::new(src_lang, tgt_lang);
        for (idx, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (src, tgt) = line
                .split_once('\t')
                .ok_or((idx + 1, "expected src_token<TAB>tgt_phrase".to_string()))?;
            if src.is_empty() || tgt.contains('\t') {
                return Err((idx + 1, "malformed lexicon row".to_string()));
            }
            let phrase: Vec<String> = tgt.split_whitespace().map(str::to_string).collect();
            if phrase.is_empty() {
                return Err((idx + 1, "empty target phrase".to_string()));
            }
            lex.insert(src, phrase);
        }
        Ok(lex)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (src, phrases) in &self.entries {
            for p in phrases {
                let _ = writeln!(out, "{src}\t{}", p.join(" "));
            }
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }
}

/// First `k_max` lexicon translations of the token at `position`.
pub fn word_candidates(u: &Utterance, position: usize, lex: &BilingualLexicon, k_max: usize) -> Vec<Candidate> {
    let label = &u.slots[position];
    lex.lookup(&u.tokens[position])
        .iter()
        .take(k_max)
        .map(|phrase| Candidate {
            position,
            tokens: phrase.clone(),
            labels: extend_slot_labels(label, phrase.len()),
            provenance: Provenance::Lexicon,
        })
        .collect()
}

impl CandidateSource for BilingualLexicon {
    fn src_lang(&self) -> &str {
        &self.src_lang
    }

    fn tgt_lang(&self) -> &str {
        &self.tgt_lang
    }

    fn candidates(&self, u: &Utterance, position: usize, k_max: usize) -> Result<Vec<Candidate>> {
        Ok(word_candidates(u, position, self, k_max))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignedSentence {
    pub tgt_tokens: Vec<String>,
    pub links: BTreeSet<(usize, usize)>,
}

impl AlignedSentence {
    pub fn new(tgt_tokens: Vec<String>, links: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let links: BTreeSet<_> = links.into_iter().collect();
        if let Some(&(i, j)) = links.iter().find(|&&(_, j)| j >= tgt_tokens.len()) {
            return Err(Error::Data(format!(
                "link {i}-{j} outside target of length {}",
                tgt_tokens.len()
            )));
        }
        Ok(AlignedSentence { tgt_tokens, links })
    }

    /// Target tokens linked to source position `i`, in target order.
    pub fn aligned_tokens(&self, i: usize) -> Vec<String> {
        // BTreeSet order is (src, tgt) so targets for a fixed source come out ascending.
        self.links
            .range((i, 0)..(i + 1, 0))
            .map(|&(_, j)| self.tgt_tokens[j].clone())
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AlignmentTable {
    src_lang: String,
    tgt_lang: String,
    sentences: BTreeMap<String, AlignedSentence>,
}

impl AlignmentTable {
    pub fn new(src_lang: impl Into<String>, tgt_lang: impl Into<String>) -> Self {
        AlignmentTable {
            src_lang: src_lang.into(),
            tgt_lang: tgt_lang.into(),
            sentences: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, id: impl Into<String>, sentence: AlignedSentence) {
        self.sentences.insert(id.into(), sentence);
    }

    pub fn get(&self, id: &str) -> Option<&AlignedSentence> {
        self.sentences.get(id)
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Reads `id\ttgt_tokens\tlinks` rows with Pharaoh `i-j` links.
    pub fn load(path: &Path, src_lang: &str, tgt_lang: &str) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, src_lang, tgt_lang).map_err(|(line, msg)| Error::parse(path, line, msg))
    }

    pub fn parse(text: &str, src_lang: &str, tgt_lang: &str) -> std::result::Result<Self, (usize, String)> {
        let mut table = AlignmentTable::new(src_lang, tgt_lang);
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err((line_no, format!("expected 3 columns, found {}", cols.len())));
            }
            let tgt: Vec<String> = cols[1].split_whitespace().map(str::to_string).collect();
            let links = cols[2]
                .split_whitespace()
                .map(parse_pharaoh)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|m| (line_no, m))?;
            let sentence = AlignedSentence::new(tgt, links).map_err(|e| (line_no, e.to_string()))?;
            if table.sentences.contains_key(cols[0]) {
                return Err((line_no, format!("duplicate id {:?}", cols[0])));
            }
            table.insert(cols[0], sentence);
        }
        Ok(table)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (id, s) in &self.sentences {
            let links: Vec<String> = s.links.iter().map(|(i, j)| format!("{i}-{j}")).collect();
            let _ = writeln!(out, "{id}\t{}\t{}", s.tgt_tokens.join(" "), links.join(" "));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Checks source-side link bounds against the utterances they describe.
    pub fn validate_against(&self, ds: &Dataset) -> Result<()> {
        for u in ds.utterances() {
            if let Some(s) = self.sentences.get(&u.id) {
                if let Some(&(i, j)) = s.links.iter().find(|&&(i, _)| i >= u.len()) {
                    return Err(Error::Data(format!(
                        "alignment for {}: link {i}-{j} outside source of length {}",
                        u.id,
                        u.len()
                    )));
                }
            }
        }
        Ok(())
    }
}

fn parse_pharaoh(pair: &str) -> std::result::Result<(usize, usize), String> {
    let (i, j) = pair.split_once('-').ok_or_else(|| format!("bad link {pair:?}"))?;
    let i = i.parse().map_err(|_| format!("bad link {pair:?}"))?;
    let j = j.parse().map_err(|_| format!("bad link {pair:?}"))?;
    Ok((i, j))
}

/// The target tokens aligned to `position`, as at most one candidate.
pub fn phrase_candidates(u: &Utterance, position: usize, align: &AlignmentTable) -> Result<Vec<Candidate>> {
    let sentence = align
        .get(&u.id)
        .ok_or_else(|| Error::Data(format!("no alignment for utterance {:?}", u.id)))?;
    let tokens = sentence.aligned_tokens(position);
    if tokens.is_empty() {
        return Ok(Vec::new());
    }
    let labels = extend_slot_labels(&u.slots[position], tokens.len());
    Ok(vec![Candidate {
        position,
        tokens,
        labels,
        provenance: Provenance::Alignment,
    }])
}

impl CandidateSource for AlignmentTable {
    fn src_lang(&self) -> &str {
        &self.src_lang
    }

    fn tgt_lang(&self) -> &str {
        &self.tgt_lang
    }

    fn candidates(&self, u: &Utterance, position: usize, _k_max: usize) -> Result<Vec<Candidate>> {
        phrase_candidates(u, position, self)
    }
}
