//! Model-free code-mixed training data.
//!
//! For each embedded language and each pivot utterance, original positions are
//! visited in a seeded order; wherever candidates exist a fair coin (biased by
//! `replace_prob`) decides whether to splice in one of them, chosen uniformly.
//! No scorer is consulted.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::attack::AttackMode;
use crate::candidates::{CandidateSource, DEFAULT_K_MAX};
use crate::corpus::{Dataset, Utterance};
use crate::error::{Error, Result};
use crate::ordered_map;
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub embedded_langs: Vec<String>,
    pub replace_prob: f64,
    pub mode: AttackMode,
    pub seed: u64,
    pub split_ratio: (u32, u32),
    pub k_max: usize,
    /// Drop utterances in which no position has a candidate.
    pub drop_uncovered: bool,
}

impl AugmentConfig {
    pub fn new(embedded_langs: Vec<String>, seed: u64) -> Self {
        AugmentConfig {
            embedded_langs,
            replace_prob: 0.5,
            mode: AttackMode::Phrase,
            seed,
            split_ratio: (9, 1),
            k_max: DEFAULT_K_MAX,
            drop_uncovered: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LangStats {
    pub lang: String,
    pub n_generated: usize,
    pub n_dropped: usize,
    pub n_positions: usize,
    pub n_covered: usize,
    pub n_replaced: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentOutput {
    /// Concatenation over languages, in configured language order then pivot order.
    pub dataset: Dataset,
    pub stats: Vec<LangStats>,
}

struct Mixed {
    utterance: Utterance,
    n_covered: usize,
    n_replaced: usize,
}

/// Mixes one utterance toward `lang`. The stream is keyed by (seed, lang, id),
/// so the outcome is independent of every other language and utterance.
fn mix_one<C: CandidateSource + ?Sized>(
    u: &Utterance,
    source: &C,
    lang: &str,
    cfg: &AugmentConfig,
) -> Result<Mixed> {
    let mut rng = SplitMix64::derived(cfg.seed, &[lang, &u.id]);
    let order = rng.permutation(u.len());
    let mut segments: Vec<(Vec<String>, Vec<String>)> = u
        .tokens
        .iter()
        .zip(&u.slots)
        .map(|(t, l)| (vec![t.clone()], vec![l.clone()]))
        .collect();
    let mut n_covered = 0;
    let mut n_replaced = 0;
    for pos in order {
        let candidates = source.candidates(u, pos, cfg.k_max)?;
        if candidates.is_empty() {
            continue;
        }
        n_covered += 1;
        // (1 - U) lies in (0, 1], so p = 1 always replaces and p = 0 never does.
        let draw = 1.0 - rng.next_f64();
        if draw > 1.0 - cfg.replace_prob {
            let c = &candidates[rng.below(candidates.len())];
            segments[pos] = (c.tokens.clone(), c.labels.clone());
            n_replaced += 1;
        }
    }
    let utterance = Utterance {
        id: format!("{}-{lang}", u.id),
        lang: if n_replaced > 0 { lang.to_string() } else { u.lang.clone() },
        tokens: segments.iter().flat_map(|s| s.0.iter().cloned()).collect(),
        slots: segments.iter().flat_map(|s| s.1.iter().cloned()).collect(),
        intent: u.intent.clone(),
    };
    Ok(Mixed {
        utterance,
        n_covered,
        n_replaced,
    })
}

pub fn generate_adversarial_set(
    pivot: &Dataset,
    sources: &BTreeMap<String, &dyn CandidateSource>,
    cfg: &AugmentConfig,
    parallelism: usize,
) -> Result<AugmentOutput> {
    if cfg.embedded_langs.is_empty() {
        return Err(Error::Config("no embedded languages configured".into()));
    }
    if !(0.0..=1.0).contains(&cfg.replace_prob) {
        return Err(Error::Config(format!("replace_prob {} outside [0, 1]", cfg.replace_prob)));
    }
    if cfg.k_max == 0 {
        return Err(Error::Config("k_max must be positive".into()));
    }
    for lang in &cfg.embedded_langs {
        if lang == pivot.lang() {
            return Err(Error::Config(format!("pivot language {lang} cannot be embedded")));
        }
        let source = sources
            .get(lang)
            .ok_or_else(|| Error::Config(format!("no candidate source for {lang}")))?;
        if source.src_lang() != pivot.lang() || source.tgt_lang() != lang {
            return Err(Error::Config(format!(
                "candidate source for {lang} is {}->{}",
                source.src_lang(),
                source.tgt_lang()
            )));
        }
    }

    let mut all = Vec::new();
    let mut stats = Vec::with_capacity(cfg.embedded_langs.len());
    for lang in &cfg.embedded_langs {
        let source = sources[lang];
        let mixed = ordered_map(pivot.utterances(), parallelism, |u| mix_one(u, source, lang, cfg))?;
        let mut s = LangStats {
            lang: lang.clone(),
            ..LangStats::default()
        };
        for (m, u) in mixed.into_iter().zip(pivot.utterances()) {
            let m = m?;
            s.n_positions += u.len();
            s.n_covered += m.n_covered;
            s.n_replaced += m.n_replaced;
            if m.n_covered == 0 && cfg.drop_uncovered {
                s.n_dropped += 1;
                continue;
            }
            s.n_generated += 1;
            all.push(m.utterance);
        }
        stats.push(s);
    }
    Ok(AugmentOutput {
        dataset: Dataset::new(pivot.lang(), all)?,
        stats,
    })
}

/// Size of the first part under a `train:test` ratio, rounded half up.
pub fn split_sizes(n: usize, ratio: (u32, u32)) -> (usize, usize) {
    let (a, b) = (ratio.0 as u128, ratio.1 as u128);
    let n_train = ((2 * n as u128 * a + a + b) / (2 * (a + b))) as usize;
    (n_train, n - n_train)
}

/// Seeded random split; each part keeps the original relative order.
pub fn split(ds: &Dataset, ratio: (u32, u32), seed: u64) -> Result<(Dataset, Dataset)> {
    if ratio.0 == 0 || ratio.1 == 0 {
        return Err(Error::Config(format!(
            "split ratio {}:{} must have two positive parts",
            ratio.0, ratio.1
        )));
    }
    let (n_train, _) = split_sizes(ds.len(), ratio);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    SplitMix64::derived(seed, &["split"]).shuffle(&mut order);
    let mut in_train = vec![false; ds.len()];
    for &i in &order[..n_train] {
        in_train[i] = true;
    }
    let (train, test): (Vec<_>, Vec<_>) = ds.utterances().iter().zip(&in_train).partition(|(_, t)| **t);
    let strip = |v: Vec<(&Utterance, &bool)>| v.into_iter().map(|(u, _)| u.clone()).collect();
    Ok((Dataset::new(ds.lang(), strip(train))?, Dataset::new(ds.lang(), strip(test))?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::candidates::BilingualLexicon;
    use crate::corpus::validate_bio;

    fn toks(s: &str) -> Vec<String> {
        s.split(' ').map(str::to_string).collect()
    }

    fn pivot() -> Dataset {
        let rows = [
            ("1", "flights from las vegas", "O O B-f I-f", "flight"),
            ("2", "fare to boston", "O O B-t", "fare"),
            ("3", "zzz qqq", "O O", "other"),
        ];
        Dataset::new(
            "en",
            rows.iter()
                .map(|(i, t, s, n)| Utterance::new(*i, "en", toks(t), toks(s), *n).unwrap())
                .collect(),
        )
        .unwrap()
    }

    fn lexicon(tgt: &str) -> BilingualLexicon {
        let mut lex = BilingualLexicon::new("en", tgt);
        for w in ["flights", "from", "las", "vegas", "fare", "to", "boston"] {
            lex.insert(w, vec![format!("{w}_{tgt}")]);
        }
        lex.insert("vegas", vec![format!("vegas_{tgt}"), "stadt".into()]);
        lex
    }

    fn run(p: f64, langs: &[&str]) -> AugmentOutput {
        let lexes: Vec<BilingualLexicon> = langs.iter().map(|l| lexicon(l)).collect();
        let sources: BTreeMap<String, &dyn CandidateSource> = langs
            .iter()
            .zip(&lexes)
            .map(|(l, x)| (l.to_string(), x as &dyn CandidateSource))
            .collect();
        let mut cfg = AugmentConfig::new(langs.iter().map(|s| s.to_string()).collect(), 17);
        cfg.mode = AttackMode::Word;
        cfg.replace_prob = p;
        generate_adversarial_set(&pivot(), &sources, &cfg, 1).unwrap()
    }

    #[test]
    fn zero_probability_copies_pivot() {
        let out = run(0.0, &["de", "fr"]);
        // The uncovered utterance "zzz qqq" is dropped for each language.
        assert_eq!(out.dataset.len(), 4);
        for u in out.dataset.utterances() {
            let orig = pivot().utterances().iter().find(|o| u.id.starts_with(&o.id)).unwrap().clone();
            assert_eq!(u.tokens, orig.tokens);
            assert_eq!(u.slots, orig.slots);
        }
        assert_eq!(out.stats[0].n_dropped, 1);
        assert_eq!(out.stats[0].n_replaced, 0);
    }

    #[test]
    fn full_probability_replaces_everything_covered() {
        let out = run(1.0, &["de"]);
        let s = &out.stats[0];
        assert_eq!(s.n_replaced, s.n_covered);
        assert_eq!(s.n_covered, 7);
        for u in out.dataset.utterances() {
            assert!(u.tokens.iter().all(|t| t.ends_with("_de") || t == "stadt"), "{:?}", u.tokens);
            assert!(validate_bio(&u.slots).is_empty());
            assert_eq!(u.lang, "de");
        }
    }

    #[test]
    fn keeps_uncovered_when_asked() {
        let lex = lexicon("de");
        let sources: BTreeMap<String, &dyn CandidateSource> = [("de".to_string(), &lex as &dyn CandidateSource)].into();
        let mut cfg = AugmentConfig::new(vec!["de".into()], 1);
        cfg.drop_uncovered = false;
        let out = generate_adversarial_set(&pivot(), &sources, &cfg, 1).unwrap();
        assert_eq!(out.dataset.len(), 3);
    }

    #[test]
    fn configuration_errors() {
        let lex = lexicon("de");
        let sources: BTreeMap<String, &dyn CandidateSource> = [("de".to_string(), &lex as &dyn CandidateSource)].into();
        let bad = |langs: Vec<&str>, p: f64| {
            let mut cfg = AugmentConfig::new(langs.into_iter().map(String::from).collect(), 0);
            cfg.replace_prob = p;
            generate_adversarial_set(&pivot(), &sources, &cfg, 1).is_err()
        };
        assert!(bad(vec![], 0.5));
        assert!(bad(vec!["fr"], 0.5));
        assert!(bad(vec!["en"], 0.5));
        assert!(bad(vec!["de"], 1.5));
        assert!(!bad(vec!["de"], 0.5));
    }

    #[test]
    fn per_language_independence() {
        let both = run(0.5, &["de", "fr"]);
        let only_fr = run(0.5, &["fr"]);
        let fr_part: Vec<&Utterance> = both.dataset.utterances().iter().filter(|u| u.id.ends_with("-fr")).collect();
        assert_eq!(fr_part.len(), only_fr.dataset.len());
        for (a, b) in fr_part.iter().zip(only_fr.dataset.utterances()) {
            assert_eq!(*a, b);
        }
    }

    #[test]
    fn deterministic_and_parallel_agnostic() {
        let lex = lexicon("de");
        let sources: BTreeMap<String, &dyn CandidateSource> = [("de".to_string(), &lex as &dyn CandidateSource)].into();
        let cfg = AugmentConfig::new(vec!["de".into()], 99);
        let a = generate_adversarial_set(&pivot(), &sources, &cfg, 1).unwrap();
        let b = generate_adversarial_set(&pivot(), &sources, &cfg, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn split_arithmetic() {
        assert_eq!(split_sizes(29304, (9, 1)), (26374, 2930));
        assert_eq!(split_sizes(10, (9, 1)), (9, 1));
        assert_eq!(split_sizes(5, (1, 1)), (3, 2));
        assert_eq!(split_sizes(0, (9, 1)), (0, 0));
    }

    #[test]
    fn split_is_disjoint_exhaustive_and_seeded() {
        let utts = (0..10)
            .map(|i| Utterance::new(i.to_string(), "en", toks("a"), toks("O"), "x").unwrap())
            .collect();
        let ds = Dataset::new("en", utts).unwrap();
        let (tr, te) = split(&ds, (9, 1), 4).unwrap();
        assert_eq!((tr.len(), te.len()), (9, 1));
        let mut ids: Vec<String> = tr.utterances().iter().chain(te.utterances()).map(|u| u.id.clone()).collect();
        ids.sort();
        let mut expected: Vec<String> = (0..10).map(|i| i.to_string()).collect();
        expected.sort();
        assert_eq!(ids, expected);
        assert_eq!(split(&ds, (9, 1), 4).unwrap(), (tr, te));
        assert!(split(&ds, (1, 0), 4).is_err());
    }
}
