//! Intent accuracy, slot F1 and semantic accuracy, plus report tables.
//!
//! Slot F1 is micro-averaged over token-level labels by default: a position
//! whose gold and predicted labels agree and are not `O` is a true positive, a
//! non-`O` prediction that disagrees with gold is a false positive, and a
//! non-`O` gold label that is missed is a false negative. Span-level F1 (exact
//! type and boundaries) is computed alongside and selectable with
//! [`F1Mode::Span`]. When there is nothing to find and nothing was predicted,
//! F1 is 1.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{parse_label, Dataset, Utterance};
use crate::error::{Error, Result};
use crate::victim::{Prediction, Scorer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum F1Mode {
    #[default]
    Token,
    Span,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCounts {
    pub n_utterances: usize,
    pub n_tokens: usize,
    pub intent_correct: usize,
    pub slots_exact: usize,
    pub semantic_correct: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub span_tp: usize,
    pub span_fp: usize,
    pub span_fn: usize,
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        1.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl EvalCounts {
    pub fn intent_accuracy(&self) -> f64 {
        ratio(self.intent_correct, self.n_utterances)
    }

    pub fn semantic_accuracy(&self) -> f64 {
        ratio(self.semantic_correct, self.n_utterances)
    }

    pub fn slot_exact_rate(&self) -> f64 {
        ratio(self.slots_exact, self.n_utterances)
    }

    pub fn token_f1(&self) -> f64 {
        f1(self.tp, self.fp, self.fn_)
    }

    pub fn span_f1(&self) -> f64 {
        f1(self.span_tp, self.span_fp, self.span_fn)
    }

    pub fn add(&mut self, other: &EvalCounts) {
        self.n_utterances += other.n_utterances;
        self.n_tokens += other.n_tokens;
        self.intent_correct += other.intent_correct;
        self.slots_exact += other.slots_exact;
        self.semantic_correct += other.semantic_correct;
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.span_tp += other.span_tp;
        self.span_fp += other.span_fp;
        self.span_fn += other.span_fn;
    }
}

/// `(type, start, end_exclusive)` spans of a BIO sequence. An `I-x` that does
/// not continue an open `x` span starts a new one.
pub fn spans<S: AsRef<str>>(labels: &[S]) -> Vec<(String, usize, usize)> {
    let mut out = Vec::new();
    let mut open: Option<(String, usize)> = None;
    for (i, label) in labels.iter().enumerate() {
        let parsed = parse_label(label.as_ref());
        let continues = matches!((&open, parsed), (Some((ty, _)), Some(('I', t))) if ty == t);
        if continues {
            continue;
        }
        if let Some((ty, start)) = open.take() {
            out.push((ty, start, i));
        }
        if let Some(('B' | 'I', t)) = parsed {
            open = Some((t.to_string(), i));
        }
    }
    if let Some((ty, start)) = open {
        out.push((ty, start, labels.len()));
    }
    out
}

/// Compares predictions with gold labels. Lengths must agree.
pub fn count(gold: &[Utterance], predictions: &[Prediction]) -> Result<EvalCounts> {
    if gold.len() != predictions.len() {
        return Err(Error::Data(format!(
            "{} predictions for {} utterances",
            predictions.len(),
            gold.len()
        )));
    }
    let mut c = EvalCounts::default();
    for (g, p) in gold.iter().zip(predictions) {
        if g.slots.len() != p.slots.len() {
            return Err(Error::Data(format!(
                "prediction for {} has {} slot labels, expected {}",
                g.id,
                p.slots.len(),
                g.slots.len()
            )));
        }
        c.n_utterances += 1;
        c.n_tokens += g.len();
        let intent_ok = g.intent == p.intent;
        let slots_ok = g.slots == p.slots;
        c.intent_correct += intent_ok as usize;
        c.slots_exact += slots_ok as usize;
        c.semantic_correct += (intent_ok && slots_ok) as usize;
        for (gl, pl) in g.slots.iter().zip(&p.slots) {
            let g_pos = gl != "O";
            let p_pos = pl != "O";
            if gl == pl {
                c.tp += g_pos as usize;
            } else {
                c.fp += p_pos as usize;
                c.fn_ += g_pos as usize;
            }
        }
        let gs = spans(&g.slots);
        let ps = spans(&p.slots);
        let hits = ps.iter().filter(|s| gs.contains(s)).count();
        c.span_tp += hits;
        c.span_fp += ps.len() - hits;
        c.span_fn += gs.len() - hits;
    }
    Ok(c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LangScores {
    pub lang: String,
    pub intent_accuracy: f64,
    pub slot_f1: f64,
    pub semantic_accuracy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts: Option<EvalCounts>,
}

impl LangScores {
    pub fn from_counts(lang: impl Into<String>, counts: EvalCounts, mode: F1Mode) -> Self {
        LangScores {
            lang: lang.into(),
            intent_accuracy: counts.intent_accuracy(),
            slot_f1: match mode {
                F1Mode::Token => counts.token_f1(),
                F1Mode::Span => counts.span_f1(),
            },
            semantic_accuracy: counts.semantic_accuracy(),
            counts: Some(counts),
        }
    }

    /// A row from already-computed values (no raw counts).
    pub fn from_values(lang: impl Into<String>, intent_accuracy: f64, slot_f1: f64, semantic_accuracy: f64) -> Self {
        LangScores {
            lang: lang.into(),
            intent_accuracy,
            slot_f1,
            semantic_accuracy,
            counts: None,
        }
    }

    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Intent => self.intent_accuracy,
            Metric::SlotF1 => self.slot_f1,
            Metric::Semantic => self.semantic_accuracy,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(default)]
    pub f1_mode: F1Mode,
    pub rows: Vec<LangScores>,
}

impl EvalReport {
    pub fn row(&self, lang: &str) -> Option<&LangScores> {
        self.rows.iter().find(|r| r.lang == lang)
    }

    /// Unweighted mean over language rows.
    pub fn average(&self, metric: Metric) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().map(|r| r.get(metric)).sum::<f64>() / self.rows.len() as f64
    }
}

pub fn predict_all<S: Scorer + ?Sized>(scorer: &S, ds: &Dataset) -> Result<Vec<Prediction>> {
    let tokens: Vec<Vec<String>> = ds.utterances().iter().map(|u| u.tokens.clone()).collect();
    let preds = scorer.predict_batch(&tokens)?;
    if preds.len() != tokens.len() {
        return Err(Error::Data(format!(
            "scorer returned {} predictions for {} utterances",
            preds.len(),
            tokens.len()
        )));
    }
    Ok(preds)
}

/// Scores `scorer` on one dataset; the report has a single row for `ds.lang()`.
pub fn evaluate<S: Scorer + ?Sized>(scorer: &S, ds: &Dataset) -> Result<EvalReport> {
    evaluate_many(scorer, &[ds], F1Mode::Token)
}

/// One row per dataset, in the order given.
pub fn evaluate_many<S: Scorer + ?Sized>(scorer: &S, datasets: &[&Dataset], mode: F1Mode) -> Result<EvalReport> {
    let mut rows = Vec::with_capacity(datasets.len());
    for ds in datasets {
        if ds.is_empty() {
            return Err(Error::Data(format!("cannot evaluate on empty {} dataset", ds.lang())));
        }
        let preds = predict_all(scorer, ds)?;
        let counts = count(ds.utterances(), &preds)?;
        rows.push(LangScores::from_counts(ds.lang(), counts, mode));
    }
    Ok(EvalReport { f1_mode: mode, rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Intent,
    SlotF1,
    Semantic,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Intent, Metric::SlotF1, Metric::Semantic];

    pub fn title(self) -> &'static str {
        match self {
            Metric::Intent => "Intent accuracy",
            Metric::SlotF1 => "Slots F1 score",
            Metric::Semantic => "Semantic accuracy",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    #[default]
    Tsv,
    Markdown,
}

/// Rounds half up to three decimals and formats with exactly three.
pub fn fmt3(x: f64) -> String {
    // The epsilon absorbs binary representation error of decimal ties like 0.9725.
    let r = ((x * 1000.0) + 0.5 + 1e-9).floor() / 1000.0;
    format!("{r:.3}")
}

/// One row per condition, one column per language (first-seen order) plus `avg`.
/// A language missing from a condition prints as `-` and is left out of its average.
pub fn render_report(reports: &[(String, EvalReport)], metric: Metric, fmt: TableFormat) -> String {
    let mut langs: Vec<&str> = Vec::new();
    for (_, r) in reports {
        for row in &r.rows {
            if !langs.contains(&row.lang.as_str()) {
                langs.push(&row.lang);
            }
        }
    }
    let mut header = vec!["condition".to_string()];
    header.extend(langs.iter().map(|l| l.to_string()));
    header.push("avg".to_string());

    let mut body = Vec::with_capacity(reports.len());
    for (name, report) in reports {
        let mut cells = vec![name.clone()];
        let mut present = Vec::new();
        for lang in &langs {
            match report.row(lang) {
                Some(row) => {
                    let v = row.get(metric);
                    present.push(v);
                    cells.push(fmt3(v));
                }
                None => cells.push("-".to_string()),
            }
        }
        cells.push(if present.is_empty() {
            "-".to_string()
        } else {
            fmt3(present.iter().sum::<f64>() / present.len() as f64)
        });
        body.push(cells);
    }

    let mut out = String::new();
    match fmt {
        TableFormat::Tsv => {
            for row in std::iter::once(&header).chain(&body) {
                let _ = writeln!(out, "{}", row.join("\t"));
            }
        }
        TableFormat::Markdown => {
            let _ = writeln!(out, "| {} |", header.join(" | "));
            let _ = writeln!(out, "|{}", " --- |".repeat(header.len()));
            for row in &body {
                let _ = writeln!(out, "| {} |", row.join(" | "));
            }
        }
    }
    out
}
