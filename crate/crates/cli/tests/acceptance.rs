//! Acceptance suite.
//!
//! Runs every criterion, prints one `[PASS]`/`[FAIL]` line each and exits
//! non-zero if any fails. Pass a criterion id (e.g. `C4`) to run just that one.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use codemix::attack::{attack_dataset, attack_in_order, AttackConfig, AttackMode, AttackResult};
use codemix::augment::{generate_adversarial_set, AugmentConfig};
use codemix::candidates::{AlignedSentence, AlignmentTable, BilingualLexicon, CandidateSource};
use codemix::corpus::{repair_bio, Dataset, Utterance};
use codemix::eval::{evaluate, evaluate_many, render_report, EvalReport, F1Mode, LangScores, Metric, TableFormat};
use codemix::rng::SplitMix64;
use codemix::toygen::{generate_toy, ToyCorpus, ToySpec};
use codemix::victim::{JointLinearModel, LabeledSequence, ModelConfig, Prediction, Scorer};
use codemix::{extend_slot_labels, validate_bio, ScorerError};

type Outcome = Result<String, String>;
type Check = (&'static str, &'static str, u64, fn() -> Outcome);
type Segment = (Vec<String>, Vec<String>);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn main() -> ExitCode {
    let checks: [Check; 10] = [
        ("C1", "label extension reference", 1, c1_extension),
        ("C2", "greedy monotonicity", 60, c2_monotonicity),
        ("C3", "greedy replay oracle", 60, c3_replay_oracle),
        ("C4", "attack lowers semantic accuracy", 300, c4_attack_effect),
        ("C5", "augmented training recovers", 600, c5_defense),
        ("C6", "augmentation accounting", 60, c6_accounting),
        ("C7", "replacement rate", 60, c7_replacement_rate),
        ("C8", "metric oracle", 60, c8_metrics),
        ("C9", "report row fidelity", 60, c9_report_row),
        ("C10", "CLI determinism", 300, c10_cli_determinism),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (id, name, budget, check) in checks {
        if !only.is_empty() && !only.iter().any(|o| o.eq_ignore_ascii_case(id)) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(d) if elapsed > Duration::from_secs(budget) => {
                Err(format!("{d}; took {:.1}s, budget {budget}s", elapsed.as_secs_f64()))
            }
            o => o,
        };
        match outcome {
            Ok(detail) => println!("[PASS] {id} {name}: {detail} ({:.2}s)", elapsed.as_secs_f64()),
            Err(why) => {
                failed += 1;
                println!("[FAIL] {id} {name}: {why} ({:.2}s)", elapsed.as_secs_f64());
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

// ---------------------------------------------------------------- helpers

fn fnv(parts: &[&[String]], salt: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ salt;
    for part in parts {
        for s in part.iter() {
            for b in s.bytes().chain([0xFF]) {
                h ^= b as u64;
                h = h.wrapping_mul(0x100_0000_01b3);
            }
        }
        h ^= 0xFE;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

/// Loss is a hash of the labeled sequence folded into a few levels, so ties are common.
struct QuantizedScorer {
    salt: u64,
    levels: u64,
}

impl Scorer for QuantizedScorer {
    fn loss_batch(&self, items: &[LabeledSequence]) -> Result<Vec<f64>, ScorerError> {
        Ok(items
            .iter()
            .map(|x| (fnv(&[&x.tokens, &x.slots], self.salt) % self.levels) as f64)
            .collect())
    }

    fn predict_batch(&self, items: &[Vec<String>]) -> Result<Vec<Prediction>, ScorerError> {
        Ok(items
            .iter()
            .map(|t| Prediction {
                intent: String::new(),
                slots: vec!["O".into(); t.len()],
            })
            .collect())
    }
}

/// Answers predictions from a fixed table keyed by tokens.
struct TableScorer(BTreeMap<Vec<String>, Prediction>);

impl Scorer for TableScorer {
    fn loss_batch(&self, items: &[LabeledSequence]) -> Result<Vec<f64>, ScorerError> {
        Ok(vec![0.0; items.len()])
    }

    fn predict_batch(&self, items: &[Vec<String>]) -> Result<Vec<Prediction>, ScorerError> {
        items
            .iter()
            .map(|t| self.0.get(t).cloned().ok_or_else(|| ScorerError::Remote("unknown item".into())))
            .collect()
    }
}

fn model_cfg(seed: u64) -> ModelConfig {
    ModelConfig {
        seed,
        ..ModelConfig::default()
    }
}

fn semantic(scorer: &dyn Scorer, ds: &Dataset) -> f64 {
    evaluate(scorer, ds).expect("evaluate").rows[0].semantic_accuracy
}

fn check_traces(results: &[AttackResult], scorer: &dyn Scorer) -> Result<usize, String> {
    for r in results {
        let t = &r.loss_trace;
        ensure!(t.windows(2).all(|w| w[1] >= w[0]), "{}: trace {t:?} decreases", r.original.id);
        ensure!(t.last() >= t.first(), "{}: final below initial", r.original.id);
        ensure!(t.len() == r.substitutions.len() + 1, "{}: trace length", r.original.id);
        let final_loss = scorer.loss(&LabeledSequence::from(&r.adversarial)).map_err(|e| e.to_string())?;
        ensure!(final_loss == r.final_loss(), "{}: final trace entry is not the loss of the output", r.original.id);
        ensure!(validate_bio(&r.adversarial.slots).is_empty(), "{}: output BIO invalid", r.original.id);
    }
    Ok(results.len())
}

/// Copies the toy alignments for `ds` with extra many-to-one links and some dropped ones.
fn noisy_alignments(toy: &ToyCorpus, ds: &Dataset, seed: u64) -> AlignmentTable {
    let mut rng = SplitMix64::derived(seed, &["noisy-alignments"]);
    let mut table = AlignmentTable::new(toy.pivot_lang(), toy.embedded_lang());
    for u in ds.utterances() {
        let tgt = toy.alignments.get(&u.id).expect("aligned").tgt_tokens.clone();
        let mut links = Vec::new();
        for i in 0..u.len() {
            if rng.next_f64() >= 0.1 {
                links.push((i, i));
            }
            if i + 1 < tgt.len() && rng.next_f64() < 0.3 {
                links.push((i, i + 1));
            }
        }
        table.insert(u.id.clone(), AlignedSentence::new(tgt, links).expect("links in range"));
    }
    table
}

// ---------------------------------------------------------------- C1

/// Reference: the first token keeps the label; later tokens continue a `B`
/// span as `I` and otherwise repeat the label.
fn reference_extension(label: &str, n: usize) -> Vec<String> {
    (0..n)
        .map(|k| match (k, label.strip_prefix('B')) {
            (0, _) | (_, None) => label.to_string(),
            (_, Some(rest)) => format!("I{rest}"),
        })
        .collect()
}

fn c1_extension() -> Outcome {
    let labels = [
        "O",
        "B-x",
        "I-x",
        "B-city",
        "I-city",
        "B-toloc.city_name",
        "I-toloc.city_name",
        "B-a-b",
        "I-a-b",
    ];
    let mut cases = 0;
    for label in labels {
        for n in 1..=5 {
            let got = extend_slot_labels(label, n);
            let want = reference_extension(label, n);
            ensure!(got == want, "{label} x{n}: got {got:?}, want {want:?}");
            cases += 1;
        }
    }
    ensure!(cases == 45, "ran {cases} cases");
    let literal = extend_slot_labels("B-toloc.city_name", 2);
    ensure!(literal == ["B-toloc.city_name", "I-toloc.city_name"], "{literal:?}");
    Ok(format!("{cases}/45 cases match"))
}

// ---------------------------------------------------------------- C2

fn c2_monotonicity() -> Outcome {
    let seed = 11;
    let toy = generate_toy(&ToySpec {
        n_test: 600,
        seed,
        ..ToySpec::default()
    })
    .map_err(|e| e.to_string())?;
    let (model, _) = JointLinearModel::train(&model_cfg(seed), toy.train.pivot.utterances()).map_err(|e| e.to_string())?;
    let test = &toy.test.pivot;

    let word = attack_dataset(test, &model, &toy.lexicon, &AttackConfig::new(AttackMode::Word, "xx", seed), 4)
        .map_err(|e| e.to_string())?;
    let table = noisy_alignments(&toy, test, seed);
    let phrase = attack_dataset(test, &model, &table, &AttackConfig::new(AttackMode::Phrase, "xx", seed), 4)
        .map_err(|e| e.to_string())?;
    ensure!(word.failures.is_empty() && phrase.failures.is_empty(), "attack failures");
    let multi = phrase
        .results
        .iter()
        .flat_map(|r| &r.substitutions)
        .filter(|s| s.replacement.len() > 1)
        .count();
    ensure!(multi > 0, "no multi-token phrase substitutions exercised");
    let n = check_traces(&word.results, &model)? + check_traces(&phrase.results, &model)?;
    ensure!(n >= 1000, "only {n} attacked utterances");
    Ok(format!("{n} traces, 0 violations ({multi} multi-token splices)"))
}

// ---------------------------------------------------------------- C3

struct ReplayStep {
    position: usize,
    best: Option<usize>,
    accepted: bool,
}

struct Replay {
    steps: Vec<ReplayStep>,
    tokens: Vec<String>,
    slots: Vec<String>,
    trace: Vec<f64>,
}

fn flatten(segments: &[Segment], intent: &str) -> LabeledSequence {
    LabeledSequence {
        tokens: segments.iter().flat_map(|s| s.0.clone()).collect(),
        slots: segments.iter().flat_map(|s| s.1.clone()).collect(),
        intent: intent.to_string(),
    }
}

/// Straightforward re-execution of the greedy procedure.
fn replay(u: &Utterance, lex: &BilingualLexicon, scorer: &dyn Scorer, order: &[usize], on_tie: bool) -> Replay {
    let mut segments: Vec<Segment> =
        u.tokens.iter().zip(&u.slots).map(|(t, l)| (vec![t.clone()], vec![l.clone()])).collect();
    let loss = |segs: &[Segment]| scorer.loss(&flatten(segs, &u.intent)).unwrap();
    let mut current = loss(&segments);
    let mut out = Replay {
        steps: Vec::new(),
        tokens: Vec::new(),
        slots: Vec::new(),
        trace: vec![current],
    };
    for &pos in order {
        let phrases = lex.lookup(&u.tokens[pos].to_lowercase());
        let mut best: Option<(usize, f64, Segment)> = None;
        for (i, phrase) in phrases.iter().enumerate() {
            let seg = (phrase.clone(), reference_extension(&u.slots[pos], phrase.len()));
            let mut trial = segments.clone();
            trial[pos] = seg.clone();
            let l = loss(&trial);
            if best.as_ref().is_none_or(|b| l > b.1) {
                best = Some((i, l, seg));
            }
        }
        let Some((i, l, seg)) = best else {
            out.steps.push(ReplayStep {
                position: pos,
                best: None,
                accepted: false,
            });
            continue;
        };
        let accepted = if on_tie { l >= current } else { l > current };
        if accepted {
            segments[pos] = seg;
            current = l;
            out.trace.push(l);
        }
        out.steps.push(ReplayStep {
            position: pos,
            best: Some(i),
            accepted,
        });
    }
    let flat = flatten(&segments, &u.intent);
    out.tokens = flat.tokens;
    out.slots = flat.slots;
    out
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for k in 0..=p.len() {
            let mut q = p.clone();
            q.insert(k, n - 1);
            out.push(q);
        }
    }
    out
}

/// Highest loss over every combination of keeping or replacing each position.
fn best_assignment(u: &Utterance, lex: &BilingualLexicon, scorer: &dyn Scorer) -> f64 {
    let options: Vec<Vec<Segment>> = (0..u.len())
        .map(|i| {
            let mut v = vec![(vec![u.tokens[i].clone()], vec![u.slots[i].clone()])];
            for p in lex.lookup(&u.tokens[i]) {
                v.push((p.clone(), reference_extension(&u.slots[i], p.len())));
            }
            v
        })
        .collect();
    let mut best = f64::NEG_INFINITY;
    let mut idx = vec![0usize; u.len()];
    loop {
        let segs: Vec<_> = idx.iter().enumerate().map(|(i, &k)| options[i][k].clone()).collect();
        best = best.max(scorer.loss(&flatten(&segs, &u.intent)).unwrap());
        let mut i = 0;
        loop {
            if i == idx.len() {
                return best;
            }
            idx[i] += 1;
            if idx[i] < options[i].len() {
                break;
            }
            idx[i] = 0;
            i += 1;
        }
    }
}

fn c3_replay_oracle() -> Outcome {
    let mut rng = SplitMix64::new(3);
    let vocab = ["a", "b", "c", "d", "e"];
    let targets = ["p", "q", "r", "s"];
    let labels = ["O", "B-x", "I-x", "B-y", "I-y"];
    let mut n_cases = 0;
    let mut n_runs = 0;
    let mut n_decisions = 0;
    for case in 0..240u64 {
        let len = 1 + rng.below(4);
        let tokens: Vec<String> = (0..len).map(|_| vocab[rng.below(vocab.len())].to_string()).collect();
        let mut slots: Vec<String> = (0..len).map(|_| labels[rng.below(labels.len())].to_string()).collect();
        repair_bio(&mut slots);
        let u = Utterance::new(format!("c{case}"), "en", tokens, slots, "q").map_err(|e| e.to_string())?;
        let mut lex = BilingualLexicon::new("en", "xx");
        for w in vocab {
            for _ in 0..rng.below(3) {
                let plen = 1 + rng.below(2);
                lex.insert(w, (0..plen).map(|_| targets[rng.below(targets.len())].to_string()).collect());
            }
        }
        let scorer = QuantizedScorer {
            salt: case,
            levels: 2 + rng.below(4) as u64,
        };
        let optimum = best_assignment(&u, &lex, &scorer);
        for order in permutations(len) {
            for on_tie in [true, false] {
                let cfg = AttackConfig {
                    accept_on_tie: on_tie,
                    ..AttackConfig::new(AttackMode::Word, "xx", 0)
                };
                let got = attack_in_order(&u, &scorer, &lex, &cfg, order.clone()).map_err(|e| e.to_string())?;
                let want = replay(&u, &lex, &scorer, &order, on_tie);
                let tag = format!("case {case} order {order:?} tie {on_tie}");
                ensure!(got.steps.len() == want.steps.len(), "{tag}: step count");
                for (g, w) in got.steps.iter().zip(&want.steps) {
                    ensure!(
                        (g.position, g.best, g.accepted) == (w.position, w.best, w.accepted),
                        "{tag}: decision at {} differs",
                        w.position
                    );
                    n_decisions += 1;
                }
                ensure!(got.adversarial.tokens == want.tokens, "{tag}: tokens differ");
                ensure!(got.adversarial.slots == want.slots, "{tag}: labels differ");
                ensure!(got.loss_trace == want.trace, "{tag}: traces differ");
                ensure!(got.final_loss() <= optimum, "{tag}: exceeds exhaustive optimum");
                n_runs += 1;
            }
        }
        n_cases += 1;
    }
    ensure!(n_cases >= 200, "only {n_cases} cases");
    Ok(format!(
        "{n_cases} cases, {n_runs} order/tie runs, {n_decisions} decisions, 0 mismatches"
    ))
}

// ---------------------------------------------------------------- C4 / C5

const SEEDS: [u64; 3] = [1, 2, 3];

struct Baseline {
    toy: ToyCorpus,
    clean: f64,
    attacked: f64,
}

fn baselines() -> &'static Vec<Baseline> {
    static CELL: OnceLock<Vec<Baseline>> = OnceLock::new();
    CELL.get_or_init(|| {
        SEEDS
            .iter()
            .map(|&seed| {
                let toy = generate_toy(&ToySpec {
                    seed,
                    ..ToySpec::default()
                })
                .expect("toy");
                let (model, _) = JointLinearModel::train(&model_cfg(seed), toy.train.pivot.utterances()).expect("train");
                let clean = semantic(&model, &toy.test.pivot);
                let attacked = attacked_semantic(&model, &toy, seed);
                Baseline { toy, clean, attacked }
            })
            .collect()
    })
}

fn attacked_semantic(model: &JointLinearModel, toy: &ToyCorpus, seed: u64) -> f64 {
    let cfg = AttackConfig::new(AttackMode::Word, toy.embedded_lang(), seed);
    let run = attack_dataset(&toy.test.pivot, model, &toy.lexicon, &cfg, 4).expect("attack");
    assert!(run.failures.is_empty());
    semantic(model, &run.adversarial_dataset(toy.pivot_lang()).expect("adversarial"))
}

fn c4_attack_effect() -> Outcome {
    let mut parts = Vec::new();
    for (seed, b) in SEEDS.iter().zip(baselines()) {
        ensure!(b.clean >= 0.90, "seed {seed}: clean semantic accuracy {:.3} < 0.90", b.clean);
        let drop = b.clean - b.attacked;
        ensure!(drop >= 0.20, "seed {seed}: drop {drop:.3} < 0.20 ({:.3} -> {:.3})", b.clean, b.attacked);
        parts.push(format!("seed {seed} {:.3}->{:.3}", b.clean, b.attacked));
    }
    Ok(parts.join(", "))
}

fn c5_defense() -> Outcome {
    let mut parts = Vec::new();
    for (seed, b) in SEEDS.iter().zip(baselines()) {
        let toy = &b.toy;
        let lang = toy.embedded_lang().to_string();
        let mut sources: BTreeMap<String, &dyn CandidateSource> = BTreeMap::new();
        sources.insert(lang.clone(), &toy.alignments);
        let aug = generate_adversarial_set(&toy.train.pivot, &sources, &AugmentConfig::new(vec![lang], *seed), 4)
            .map_err(|e| e.to_string())?;
        let mut data = toy.train.pivot.utterances().to_vec();
        data.extend(aug.dataset.utterances().iter().cloned());
        let (model, _) = JointLinearModel::train(&model_cfg(*seed), &data).map_err(|e| e.to_string())?;
        let clean = semantic(&model, &toy.test.pivot);
        let attacked = attacked_semantic(&model, toy, *seed);
        ensure!(
            attacked >= 1.2 * b.attacked,
            "seed {seed}: attacked {attacked:.3} < 1.2 x {:.3}",
            b.attacked
        );
        ensure!(
            b.clean - clean <= 0.05,
            "seed {seed}: clean accuracy fell {:.3} -> {clean:.3}",
            b.clean
        );
        parts.push(format!("seed {seed} attacked {:.3}->{attacked:.3} clean {:.3}->{clean:.3}", b.attacked, b.clean));
    }
    Ok(parts.join(", "))
}

// ---------------------------------------------------------------- C6

fn renamed_lexicon(base: &BilingualLexicon, tgt: &str, keep: impl Fn(&str) -> bool) -> BilingualLexicon {
    let mut lex = BilingualLexicon::new(base.src_lang(), tgt);
    for (src, phrases) in base.entries() {
        if keep(src) {
            for p in phrases {
                lex.insert(src, p.iter().map(|t| format!("{t}_{tgt}")).collect());
            }
        }
    }
    lex
}

fn covered_utterances(ds: &Dataset, words: &BTreeSet<String>) -> usize {
    ds.utterances()
        .iter()
        .filter(|u| u.tokens.iter().any(|t| words.contains(&t.to_lowercase())))
        .count()
}

fn augment_sizes(pivot: &Dataset, sources: &[(String, &dyn CandidateSource)], mode: AttackMode) -> Result<Vec<usize>, String> {
    let langs: Vec<String> = sources.iter().map(|s| s.0.clone()).collect();
    let map: BTreeMap<String, &dyn CandidateSource> = sources.iter().map(|(l, s)| (l.clone(), *s)).collect();
    let cfg = AugmentConfig {
        mode,
        ..AugmentConfig::new(langs, 6)
    };
    let out = generate_adversarial_set(pivot, &map, &cfg, 2).map_err(|e| e.to_string())?;
    let sizes: Vec<usize> = out.stats.iter().map(|s| s.n_generated).collect();
    ensure!(sizes.iter().sum::<usize>() == out.dataset.len(), "stats disagree with output size");
    for lang in cfg.embedded_langs.iter() {
        let n = out.dataset.utterances().iter().filter(|u| u.id.ends_with(&format!("-{lang}"))).count();
        ensure!(sizes[cfg.embedded_langs.iter().position(|l| l == lang).unwrap()] == n, "per-language count for {lang}");
    }
    Ok(sizes)
}

fn c6_accounting() -> Outcome {
    let toy = generate_toy(&ToySpec {
        seed: 6,
        ..ToySpec::default()
    })
    .map_err(|e| e.to_string())?;
    let pivot = &toy.train.pivot;
    let n = pivot.len();
    let vocab: Vec<String> = toy.lexicon.entries().map(|(s, _)| s.to_string()).collect();
    let langs = ["xx", "yy", "zz"];

    // Full coverage.
    let full: Vec<BilingualLexicon> = langs.iter().map(|l| renamed_lexicon(&toy.lexicon, l, |_| true)).collect();
    let sources: Vec<(String, &dyn CandidateSource)> =
        langs.iter().zip(&full).map(|(l, s)| (l.to_string(), s as &dyn CandidateSource)).collect();
    let sizes = augment_sizes(pivot, &sources, AttackMode::Word)?;
    ensure!(sizes.iter().sum::<usize>() == langs.len() * n, "full coverage: {sizes:?} != {} x {n}", langs.len());

    // Partial coverage, one word subset per language.
    let mut rng = SplitMix64::new(66);
    let subsets: Vec<BTreeSet<String>> = langs
        .iter()
        .map(|_| vocab.iter().filter(|_| rng.next_f64() < 0.03).cloned().collect())
        .collect();
    let partial: Vec<BilingualLexicon> = langs
        .iter()
        .zip(&subsets)
        .map(|(l, s)| renamed_lexicon(&toy.lexicon, l, |w| s.contains(w)))
        .collect();
    let sources: Vec<(String, &dyn CandidateSource)> =
        langs.iter().zip(&partial).map(|(l, s)| (l.to_string(), s as &dyn CandidateSource)).collect();
    let sizes = augment_sizes(pivot, &sources, AttackMode::Word)?;
    let expected: Vec<usize> = subsets.iter().map(|s| covered_utterances(pivot, s)).collect();
    ensure!(expected.iter().all(|&k| k > 0 && k < n), "subsets do not give partial coverage: {expected:?}");
    ensure!(sizes == expected, "partial word coverage: {sizes:?} != {expected:?}");

    // Shared subset: size is exactly L x N'.
    let shared = &subsets[0];
    let n_prime = covered_utterances(pivot, shared);
    let same: Vec<BilingualLexicon> = langs
        .iter()
        .map(|l| renamed_lexicon(&toy.lexicon, l, |w| shared.contains(w)))
        .collect();
    let sources: Vec<(String, &dyn CandidateSource)> =
        langs.iter().zip(&same).map(|(l, s)| (l.to_string(), s as &dyn CandidateSource)).collect();
    let total: usize = augment_sizes(pivot, &sources, AttackMode::Word)?.iter().sum();
    ensure!(total == langs.len() * n_prime, "shared subset: {total} != {} x {n_prime}", langs.len());

    // Phrase mode with alignments linking only the chosen words.
    let mut table = AlignmentTable::new(toy.pivot_lang(), "xx");
    for u in pivot.utterances() {
        let tgt = toy.alignments.get(&u.id).expect("aligned").tgt_tokens.clone();
        let links = (0..u.len()).filter(|&i| shared.contains(&u.tokens[i].to_lowercase())).map(|i| (i, i));
        table.insert(u.id.clone(), AlignedSentence::new(tgt, links).map_err(|e| e.to_string())?);
    }
    let sizes = augment_sizes(pivot, &[("xx".to_string(), &table as &dyn CandidateSource)], AttackMode::Phrase)?;
    ensure!(sizes == [n_prime], "phrase partial coverage: {sizes:?} != [{n_prime}]");

    Ok(format!(
        "full {} = {} x {n}; partial {expected:?}; shared {total} = {} x {n_prime}",
        langs.len() * n,
        langs.len(),
        langs.len()
    ))
}

// ---------------------------------------------------------------- C7

fn c7_replacement_rate() -> Outcome {
    let toy = generate_toy(&ToySpec {
        n_train: 2000,
        n_test: 0,
        seed: 7,
        ..ToySpec::default()
    })
    .map_err(|e| e.to_string())?;
    let pivot = &toy.train.pivot;
    let mut rng = SplitMix64::new(77);
    let keep: BTreeSet<String> = toy
        .lexicon
        .entries()
        .map(|(s, _)| s.to_string())
        .filter(|_| rng.next_f64() < 0.5)
        .collect();
    let lex = renamed_lexicon(&toy.lexicon, "xx", |w| keep.contains(w));
    let n_total: usize = pivot.utterances().iter().map(Utterance::len).sum();
    let n_cov: usize = pivot
        .utterances()
        .iter()
        .flat_map(|u| &u.tokens)
        .filter(|t| keep.contains(&t.to_lowercase()))
        .count();
    ensure!(n_total >= 10_000, "only {n_total} positions");

    let mut parts = Vec::new();
    for p in [0.2, 0.5, 0.8] {
        let mut sources: BTreeMap<String, &dyn CandidateSource> = BTreeMap::new();
        sources.insert("xx".into(), &lex);
        let cfg = AugmentConfig {
            replace_prob: p,
            mode: AttackMode::Word,
            ..AugmentConfig::new(vec!["xx".into()], 70)
        };
        let out = generate_adversarial_set(pivot, &sources, &cfg, 4).map_err(|e| e.to_string())?;
        let s = &out.stats[0];
        ensure!(s.n_positions == n_total, "positions {} != {n_total}", s.n_positions);
        ensure!(s.n_covered == n_cov, "covered {} != independently counted {n_cov}", s.n_covered);
        let rate = s.n_replaced as f64 / n_total as f64;
        let expected = p * n_cov as f64 / n_total as f64;
        let se = (n_cov as f64 * p * (1.0 - p)).sqrt() / n_total as f64;
        let z = (rate - expected) / se;
        ensure!(z.abs() <= 3.0, "p={p}: rate {rate:.4} vs p*c {expected:.4}, z={z:.2}");
        parts.push(format!("p={p} z={z:+.2}"));
    }
    Ok(format!("{n_total} positions, c={:.3}: {}", n_cov as f64 / n_total as f64, parts.join(", ")))
}

// ---------------------------------------------------------------- C8

struct Oracle {
    intent: f64,
    token_f1: f64,
    span_f1: f64,
    semantic: f64,
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    if 2 * tp + fp + fn_ == 0 {
        1.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

fn oracle_spans(labels: &[String]) -> BTreeSet<(String, usize, usize)> {
    let mut out = BTreeSet::new();
    let mut i = 0;
    while i < labels.len() {
        if labels[i] == "O" {
            i += 1;
            continue;
        }
        let ty = &labels[i][2..];
        let mut j = i + 1;
        while j < labels.len() && labels[j] == format!("I-{ty}") {
            j += 1;
        }
        out.insert((ty.to_string(), i, j));
        i = j;
    }
    out
}

fn oracle(gold: &[Utterance], preds: &[Prediction]) -> Oracle {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    let (mut stp, mut sfp, mut sfn) = (0, 0, 0);
    let (mut intent, mut semantic) = (0, 0);
    for (g, p) in gold.iter().zip(preds) {
        for (a, b) in g.slots.iter().zip(&p.slots) {
            match (a == "O", b == "O", a == b) {
                (false, _, true) => tp += 1,
                (true, true, _) => {}
                (true, false, _) => fp += 1,
                (false, true, _) => fn_ += 1,
                (false, false, false) => {
                    fp += 1;
                    fn_ += 1;
                }
            }
        }
        let gs = oracle_spans(&g.slots);
        let ps = oracle_spans(&p.slots);
        let hit = gs.intersection(&ps).count();
        stp += hit;
        sfp += ps.len() - hit;
        sfn += gs.len() - hit;
        intent += (g.intent == p.intent) as usize;
        semantic += (g.intent == p.intent && g.slots == p.slots) as usize;
    }
    let n = gold.len() as f64;
    Oracle {
        intent: intent as f64 / n,
        token_f1: f1(tp, fp, fn_),
        span_f1: f1(stp, sfp, sfn),
        semantic: semantic as f64 / n,
    }
}

fn c8_metrics() -> Outcome {
    let mut rng = SplitMix64::new(8);
    let labels = ["O", "B-a", "I-a", "B-b", "I-b", "B-c", "I-c"];
    let intents = ["i0", "i1", "i2", "i3"];
    let mut worst: f64 = 0.0;
    for f in 0..50 {
        let all_o = f % 10 == 0;
        let n = 1 + rng.below(30);
        let mut gold = Vec::new();
        let mut table = BTreeMap::new();
        let mut preds = Vec::new();
        for i in 0..n {
            let len = 1 + rng.below(8);
            let tokens: Vec<String> = (0..len).map(|k| format!("f{f}u{i}t{k}")).collect();
            let mut slots: Vec<String> = (0..len)
                .map(|_| if all_o { "O" } else { labels[rng.below(labels.len())] }.to_string())
                .collect();
            repair_bio(&mut slots);
            let intent = intents[rng.below(intents.len())].to_string();
            let mut p_slots = slots.clone();
            if rng.next_f64() < 0.5 && !all_o {
                for s in p_slots.iter_mut() {
                    if rng.next_f64() < 0.3 {
                        *s = labels[rng.below(labels.len())].to_string();
                    }
                }
            }
            let p_intent = if rng.next_f64() < 0.7 {
                intent.clone()
            } else {
                intents[rng.below(intents.len())].to_string()
            };
            let pred = Prediction {
                intent: p_intent,
                slots: p_slots,
            };
            table.insert(tokens.clone(), pred.clone());
            preds.push(pred);
            gold.push(Utterance::new(format!("{i}"), "en", tokens, slots, intent).map_err(|e| e.to_string())?);
        }
        let ds = Dataset::new("en", gold.clone()).map_err(|e| e.to_string())?;
        let scorer = TableScorer(table);
        let token = evaluate(&scorer, &ds).map_err(|e| e.to_string())?;
        let span = evaluate_many(&scorer, &[&ds], F1Mode::Span).map_err(|e| e.to_string())?;
        let want = oracle(&gold, &preds);
        let (t, s) = (&token.rows[0], &span.rows[0]);
        for (name, got, exp) in [
            ("intent", t.intent_accuracy, want.intent),
            ("token f1", t.slot_f1, want.token_f1),
            ("span f1", s.slot_f1, want.span_f1),
            ("semantic", t.semantic_accuracy, want.semantic),
        ] {
            let d = (got - exp).abs();
            worst = worst.max(d);
            ensure!(d <= 1e-12, "fixture {f}: {name} {got} vs oracle {exp}");
        }
        ensure!(t.semantic_accuracy <= t.intent_accuracy, "fixture {f}: semantic above intent");
        if all_o {
            ensure!(t.slot_f1 == 1.0, "fixture {f}: all-O F1 {}", t.slot_f1);
        }
    }
    Ok(format!("50 fixtures, max deviation {worst:.1e}"))
}

// ---------------------------------------------------------------- C9

fn c9_report_row() -> Outcome {
    let langs = ["en", "de", "es", "fr", "ja", "pt", "zh"];
    let values = [0.980, 0.975, 0.968, 0.972, 0.977, 0.970, 0.968];
    let report = EvalReport {
        rows: langs
            .iter()
            .zip(values)
            .map(|(l, v)| LangScores::from_values(*l, v, 0.0, 0.0))
            .collect(),
        ..EvalReport::default()
    };
    let reports = vec![("xlm-r".to_string(), report)];
    let tsv = render_report(&reports, Metric::Intent, TableFormat::Tsv);
    let want_header = "condition\ten\tde\tes\tfr\tja\tpt\tzh\tavg";
    let want_row = "xlm-r\t0.980\t0.975\t0.968\t0.972\t0.977\t0.970\t0.968\t0.973";
    let lines: Vec<&str> = tsv.lines().collect();
    ensure!(lines == [want_header, want_row], "tsv rendered as {tsv:?}");

    let md = render_report(&reports, Metric::Intent, TableFormat::Markdown);
    let want_md = "| xlm-r | 0.980 | 0.975 | 0.968 | 0.972 | 0.977 | 0.970 | 0.968 | 0.973 |";
    ensure!(md.lines().nth(2) == Some(want_md), "markdown rendered as {md:?}");

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let scores = dir.path().join("scores.tsv");
    let mut text = String::from("condition\tlang\tintent_accuracy\tslot_f1\tsemantic_accuracy\n");
    for (l, v) in langs.iter().zip(values) {
        text.push_str(&format!("xlm-r\t{l}\t{v}\t0\t0\n"));
    }
    std::fs::write(&scores, text).map_err(|e| e.to_string())?;
    let out = dir.path().join("report");
    common::run_ok(&["report", "--scores", common::p(&scores), "--format", "tsv", "--out", common::p(&out)]);
    let cli = std::fs::read_to_string(out.join("report_intent.tsv")).map_err(|e| e.to_string())?;
    ensure!(cli == tsv, "CLI table differs: {cli:?}");
    Ok(format!("{want_row:?} byte-exact (library and CLI)"))
}

// ---------------------------------------------------------------- C10

fn cli_pipeline(root: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let r = |s: &str| root.join(s).to_str().expect("utf-8").to_string();
    let toy = r("toy");
    let steps: Vec<(&str, Vec<String>)> = vec![
        ("toy", vec!["toy".into(), "--seed".into(), "3".into(), "--n-train".into(), "200".into(), "--n-test".into(), "60".into(), "--out".into(), toy.clone()]),
        ("train", vec![
            "train".into(), "--seed".into(), "3".into(),
            "--data".into(), format!("en={toy}/en.train.tsv"),
            "--heldout".into(), format!("en={toy}/en.test.tsv"),
            "--out".into(), r("model"),
        ]),
        ("attack-word", vec![
            "attack".into(), "--seed".into(), "3".into(), "--parallelism".into(), "4".into(),
            "--data".into(), format!("en={toy}/en.test.tsv"),
            "--model".into(), r("model/model.json"),
            "--lexicon".into(), format!("xx={toy}/lexicon.en-xx.tsv"),
            "--embedded".into(), "xx".into(), "--out".into(), r("attack-word"),
        ]),
        ("attack-phrase", vec![
            "attack".into(), "--seed".into(), "3".into(), "--mode".into(), "phrase".into(),
            "--data".into(), format!("en={toy}/en.test.tsv"),
            "--model".into(), r("model/model.json"),
            "--alignment".into(), format!("xx={toy}/align.en-xx.txt"),
            "--embedded".into(), "xx".into(), "--out".into(), r("attack-phrase"),
        ]),
        ("augment", vec![
            "augment".into(), "--seed".into(), "3".into(), "--parallelism".into(), "3".into(),
            "--data".into(), format!("en={toy}/en.train.tsv"),
            "--alignment".into(), format!("xx={toy}/align.en-xx.txt"),
            "--langs".into(), "xx".into(), "--lang-column".into(), "--out".into(), r("augment"),
        ]),
        ("eval", vec![
            "eval".into(), "--seed".into(), "3".into(),
            "--data".into(), format!("clean/en={toy}/en.test.tsv"),
            "--data".into(), format!("attacked/en={}", r("attack-word/adversarial.tsv")),
            "--data".into(), format!("translated/xx={toy}/xx.test.tsv"),
            "--model".into(), r("model/model.json"), "--out".into(), r("eval"),
        ]),
        ("report", vec!["report".into(), "--input".into(), r("eval/eval.json"), "--format".into(), "tsv".into(), "--out".into(), r("report")]),
    ];
    steps
        .into_iter()
        .map(|(name, args)| {
            let args: Vec<&str> = args.iter().map(String::as_str).collect();
            (name.to_string(), common::run_ok(&args).stdout)
        })
        .collect()
}

fn c10_cli_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path().join("run");
    let first_out = cli_pipeline(&root);
    let first = common::snapshot(&root);
    std::fs::remove_dir_all(&root).map_err(|e| e.to_string())?;
    let second_out = cli_pipeline(&root);
    let second = common::snapshot(&root);

    ensure!(
        first.keys().eq(second.keys()),
        "file sets differ: {:?} vs {:?}",
        first.keys().collect::<Vec<_>>(),
        second.keys().collect::<Vec<_>>()
    );
    let differing: Vec<_> = first.iter().filter(|(k, v)| second[*k] != **v).map(|(k, _)| k.display().to_string()).collect();
    ensure!(differing.is_empty(), "outputs differ between runs: {differing:?}");
    for ((name, a), (_, b)) in first_out.iter().zip(&second_out) {
        ensure!(a == b, "stdout of {name} differs");
    }
    let commands: BTreeSet<&str> = first_out.iter().map(|(n, _)| n.split('-').next().unwrap()).collect();
    Ok(format!(
        "{} files from {} commands ({}) byte-identical across runs",
        first.len(),
        commands.len(),
        commands.into_iter().collect::<Vec<_>>().join(", ")
    ))
}
