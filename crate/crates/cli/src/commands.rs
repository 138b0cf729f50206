use std::collections::BTreeMap;
use std::io;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context};
use codemix::attack::{attack_dataset, AttackConfig, AttackMode};
use codemix::augment::{generate_adversarial_set, split, AugmentConfig};
use codemix::eval::{evaluate_many, render_report, EvalReport, LangScores, Metric, TableFormat};
use codemix::toygen::{generate_toy, ToySpec};
use codemix::victim::protocol::{serve_stream, serve_tcp};
use codemix::victim::{ClientConfig, ExternalScorerClient, JointLinearModel, Scorer};
use codemix::{load_dataset, AlignmentTable, BilingualLexicon, CandidateSource, Dataset};
use serde::{Deserialize, Serialize};

use crate::config::{parse_lang_path, parse_ratio, require_paths, DataSpec, RunConfig};
use crate::{StrictFailures, Usage};

fn write(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(path, text)
}

fn open_scorer(cfg: &RunConfig) -> anyhow::Result<Box<dyn Scorer>> {
    if let Some(endpoint) = &cfg.scorer.endpoint {
        let client = ExternalScorerClient::connect(ClientConfig {
            endpoint: endpoint.clone(),
            timeout: Duration::from_secs(cfg.scorer.timeout_secs),
            batch_size: cfg.scorer.batch_size,
        })?;
        log::info!("using external scorer at {endpoint}");
        return Ok(Box::new(client));
    }
    match &cfg.scorer.model {
        Some(path) => Ok(Box::new(JointLinearModel::load(path)?)),
        None => bail!(Usage("no scorer configured: pass --model or --scorer".into())),
    }
}

/// Paths the scorer needs on disk; none for an external endpoint.
fn scorer_paths(cfg: &RunConfig) -> Vec<&Path> {
    match (&cfg.scorer.endpoint, &cfg.scorer.model) {
        (None, Some(m)) => vec![m.as_path()],
        _ => Vec::new(),
    }
}

fn single_dataset(cfg: &RunConfig) -> anyhow::Result<DataSpec> {
    let mut specs = cfg.data_specs()?;
    if specs.len() != 1 {
        bail!(Usage(format!("expected exactly one --data, got {}", specs.len())));
    }
    Ok(specs.remove(0))
}

/// Resource path for `lang` under `mode`: lexicon for word mode, alignment for phrase mode.
fn resource_path(cfg: &RunConfig, mode: AttackMode, lang: &str) -> anyhow::Result<PathBuf> {
    let (map, flag) = match mode {
        AttackMode::Word => (&cfg.lexicons, "--lexicon"),
        AttackMode::Phrase => (&cfg.alignments, "--alignment"),
    };
    map.get(lang)
        .cloned()
        .ok_or_else(|| Usage(format!("{mode} mode needs {flag} {lang}=PATH")).into())
}

fn load_source(cfg: &RunConfig, mode: AttackMode, lang: &str, path: &Path) -> anyhow::Result<Box<dyn CandidateSource>> {
    let source: Box<dyn CandidateSource> = match mode {
        AttackMode::Word => Box::new(BilingualLexicon::load(path, &cfg.pivot_lang, lang)?),
        AttackMode::Phrase => Box::new(AlignmentTable::load(path, &cfg.pivot_lang, lang)?),
    };
    Ok(source)
}

pub fn toy(cfg: &RunConfig) -> anyhow::Result<()> {
    let spec = ToySpec {
        n_train: cfg.toy.n_train,
        n_test: cfg.toy.n_test,
        pivot_lang: cfg.pivot_lang.clone(),
        embedded_lang: cfg.toy.embedded_lang.clone(),
        seed: cfg.seed,
        ..ToySpec::default()
    };
    let toy = generate_toy(&spec)?;
    let out = cfg.prepare_out()?;
    toy.write(&out)?;
    log::info!(
        "wrote toy corpus ({} train, {} test) to {}",
        spec.n_train,
        spec.n_test,
        out.display()
    );
    Ok(())
}

pub fn train(cfg: &RunConfig) -> anyhow::Result<()> {
    let specs = cfg.data_specs()?;
    if specs.is_empty() {
        bail!(Usage("no training data (--data)".into()));
    }
    let heldout = cfg.train.heldout.as_deref().map(parse_lang_path).transpose()?;
    require_paths(specs.iter().map(|s| s.path.as_path()).chain(heldout.iter().map(|h| h.1.as_path())))?;
    let out = cfg.prepare_out()?;

    let mut data = Vec::new();
    for spec in &specs {
        let ds = load_dataset(&spec.path, &spec.lang)?;
        data.extend(
            ds.into_utterances()
                .into_iter()
                .filter(|u| cfg.train.langs.is_empty() || cfg.train.langs.contains(&u.lang)),
        );
    }
    if data.is_empty() {
        bail!(Usage("no training utterances left after language filtering".into()));
    }
    let (model, log) = match &heldout {
        Some((lang, path)) => {
            let h = load_dataset(path, lang)?;
            JointLinearModel::train_with_heldout(&cfg.model, &data, h.utterances())?
        }
        None => JointLinearModel::train(&cfg.model, &data)?,
    };
    model.save(&out.join("model.json"))?;
    let mut tsv = String::from("epoch\ttrain_loss\theldout_loss\n");
    for e in &log.epochs {
        let h = e.heldout_loss.map_or_else(|| "-".to_string(), |h| h.to_string());
        tsv.push_str(&format!("{}\t{}\t{}\n", e.epoch, e.train_loss, h));
    }
    write(&out.join("train_log.tsv"), tsv)?;
    log::info!("trained on {} utterances; model written to {}", data.len(), out.display());
    Ok(())
}

pub fn attack(cfg: &RunConfig) -> anyhow::Result<()> {
    let spec = single_dataset(cfg)?;
    let mode = cfg.attack.mode;
    let embedded = cfg
        .attack
        .embedded_lang
        .clone()
        .ok_or_else(|| Usage("no embedded language (--embedded)".into()))?;
    let resource = resource_path(cfg, mode, &embedded)?;
    require_paths([spec.path.as_path(), resource.as_path()].into_iter().chain(scorer_paths(cfg)))?;
    let scorer = open_scorer(cfg)?;
    let out = cfg.prepare_out()?;

    let ds = load_dataset(&spec.path, &spec.lang)?;
    let source = load_source(cfg, mode, &embedded, &resource)?;
    let acfg = AttackConfig {
        mode,
        embedded_lang: embedded.clone(),
        k_max: cfg.attack.k_max,
        seed: cfg.seed,
        accept_on_tie: cfg.attack.accept_on_tie,
    };
    let run = attack_dataset(&ds, scorer.as_ref(), source.as_ref(), &acfg, cfg.parallelism)?;

    write(&out.join("attack_results.jsonl"), run.to_jsonl())?;
    run.adversarial_dataset(ds.lang())?
        .write_tsv(&out.join("adversarial.tsv"), true)?;
    write_json(
        &out.join("attack_summary.json"),
        &serde_json::json!({
            "seed": cfg.seed,
            "mode": mode,
            "embedded_lang": embedded,
            "dataset_lang": ds.lang(),
            "n_input": ds.len(),
            "summary": run.summary,
            "failures": run.failures,
        }),
    )?;
    log::info!(
        "attacked {} utterances ({} failed); mean loss increase {:.4}",
        run.summary.n_attacked,
        run.summary.n_failed,
        run.summary.mean_loss_increase
    );
    if cfg.strict && !run.failures.is_empty() {
        bail!(StrictFailures {
            failed: run.failures.len(),
            total: ds.len(),
        });
    }
    Ok(())
}

pub fn augment(cfg: &RunConfig) -> anyhow::Result<()> {
    let spec = single_dataset(cfg)?;
    let a = &cfg.augment;
    if a.embedded_langs.is_empty() {
        bail!(Usage("no embedded languages (--langs)".into()));
    }
    let ratio = parse_ratio(&a.split_ratio)?;
    let resources = a
        .embedded_langs
        .iter()
        .map(|l| Ok((l.clone(), resource_path(cfg, a.mode, l)?)))
        .collect::<anyhow::Result<Vec<_>>>()?;
    require_paths(std::iter::once(spec.path.as_path()).chain(resources.iter().map(|r| r.1.as_path())))?;
    let out = cfg.prepare_out()?;

    let pivot = load_dataset(&spec.path, &spec.lang)?;
    let loaded = resources
        .iter()
        .map(|(l, p)| Ok((l.clone(), load_source(cfg, a.mode, l, p)?)))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let sources: BTreeMap<String, &dyn CandidateSource> = loaded.iter().map(|(l, s)| (l.clone(), s.as_ref())).collect();
    let acfg = AugmentConfig {
        embedded_langs: a.embedded_langs.clone(),
        replace_prob: a.replace_prob,
        mode: a.mode,
        seed: cfg.seed,
        split_ratio: ratio,
        k_max: a.k_max,
        drop_uncovered: a.drop_uncovered,
    };
    let output = generate_adversarial_set(&pivot, &sources, &acfg, cfg.parallelism)?;
    let (train, test) = split(&output.dataset, ratio, cfg.seed)?;

    output.dataset.write_tsv(&out.join("augmented.tsv"), a.lang_column)?;
    train.write_tsv(&out.join("augmented.train.tsv"), a.lang_column)?;
    test.write_tsv(&out.join("augmented.test.tsv"), a.lang_column)?;
    write_json(
        &out.join("augment_summary.json"),
        &serde_json::json!({
            "seed": cfg.seed,
            "mode": a.mode,
            "replace_prob": a.replace_prob,
            "split_ratio": [ratio.0, ratio.1],
            "n_input": pivot.len(),
            "n_output": output.dataset.len(),
            "n_train": train.len(),
            "n_test": test.len(),
            "langs": output.stats,
        }),
    )?;
    log::info!(
        "generated {} mixed utterances from {} ({} train / {} test)",
        output.dataset.len(),
        pivot.len(),
        train.len(),
        test.len()
    );
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct EvalFile {
    seed: u64,
    conditions: Vec<ConditionReport>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ConditionReport {
    condition: String,
    report: EvalReport,
}

fn metric_key(m: Metric) -> &'static str {
    match m {
        Metric::Intent => "intent",
        Metric::SlotF1 => "slot_f1",
        Metric::Semantic => "semantic",
    }
}

/// Writes one table per metric as `{stem}_{metric}.{md|tsv}` and echoes them to stdout.
fn write_tables(out: &Path, stem: &str, reports: &[(String, EvalReport)], fmt: TableFormat) -> anyhow::Result<()> {
    let ext = match fmt {
        TableFormat::Markdown => "md",
        TableFormat::Tsv => "tsv",
    };
    for metric in Metric::ALL {
        let table = render_report(reports, metric, fmt);
        write(&out.join(format!("{stem}_{}.{ext}", metric_key(metric))), &table)?;
        println!("{}\n\n{table}", metric.title());
    }
    Ok(())
}

const DEFAULT_CONDITION: &str = "default";

pub fn eval(cfg: &RunConfig) -> anyhow::Result<()> {
    let specs = cfg.data_specs()?;
    if specs.is_empty() {
        bail!(Usage("no evaluation data (--data)".into()));
    }
    require_paths(specs.iter().map(|s| s.path.as_path()).chain(scorer_paths(cfg)))?;
    let scorer = open_scorer(cfg)?;
    let out = cfg.prepare_out()?;

    let mut groups: Vec<(String, Vec<Dataset>)> = Vec::new();
    for spec in &specs {
        let name = spec.condition.clone().unwrap_or_else(|| DEFAULT_CONDITION.to_string());
        let ds = load_dataset(&spec.path, &spec.lang)?;
        let idx = match groups.iter().position(|g| g.0 == name) {
            Some(i) => i,
            None => {
                groups.push((name.clone(), Vec::new()));
                groups.len() - 1
            }
        };
        if groups[idx].1.iter().any(|d| d.lang() == ds.lang()) {
            bail!(Usage(format!("condition {name:?} lists language {} twice", ds.lang())));
        }
        groups[idx].1.push(ds);
    }

    let mut reports = Vec::with_capacity(groups.len());
    for (name, datasets) in &groups {
        let refs: Vec<&Dataset> = datasets.iter().collect();
        reports.push((name.clone(), evaluate_many(scorer.as_ref(), &refs, cfg.eval.f1_mode)?));
    }
    let file = EvalFile {
        seed: cfg.seed,
        conditions: reports
            .iter()
            .map(|(c, r)| ConditionReport {
                condition: c.clone(),
                report: r.clone(),
            })
            .collect(),
    };
    write_json(&out.join("eval.json"), &file)?;
    write_tables(&out, "eval", &reports, cfg.eval.format)
}

const SCORES_HEADER: &str = "condition\tlang\tintent_accuracy\tslot_f1\tsemantic_accuracy";

fn parse_scores(path: &Path) -> anyhow::Result<Vec<(String, EvalReport)>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let bad = |line: usize, msg: String| Usage(format!("{}:{line}: {msg}", path.display()));
    let mut lines = text.lines();
    if lines.next() != Some(SCORES_HEADER) {
        bail!(bad(1, format!("expected header {SCORES_HEADER:?}")));
    }
    let mut out: Vec<(String, EvalReport)> = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            bail!(bad(i + 2, format!("expected 5 columns, got {}", cols.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(i + 2, format!("{s:?}: {e}")));
        let row = LangScores::from_values(cols[1], num(cols[2])?, num(cols[3])?, num(cols[4])?);
        match out.iter_mut().find(|(c, _)| c == cols[0]) {
            Some((_, r)) => r.rows.push(row),
            None => out.push((
                cols[0].to_string(),
                EvalReport {
                    rows: vec![row],
                    ..EvalReport::default()
                },
            )),
        }
    }
    Ok(out)
}

pub fn report(cfg: &RunConfig, inputs: &[PathBuf], scores: &[PathBuf]) -> anyhow::Result<()> {
    if inputs.is_empty() && scores.is_empty() {
        bail!(Usage("nothing to report: pass --input or --scores".into()));
    }
    require_paths(inputs.iter().chain(scores).map(PathBuf::as_path))?;
    let out = cfg.prepare_out()?;
    let mut reports = Vec::new();
    for path in inputs {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let file: EvalFile =
            serde_json::from_str(&text).map_err(|e| Usage(format!("{}: not an eval.json: {e}", path.display())))?;
        reports.extend(file.conditions.into_iter().map(|c| (c.condition, c.report)));
    }
    for path in scores {
        reports.extend(parse_scores(path)?);
    }
    write_tables(&out, "report", &reports, cfg.eval.format)
}

pub fn serve(model: &Path, listen: Option<&str>) -> anyhow::Result<()> {
    require_paths([model])?;
    let model = JointLinearModel::load(model)?;
    match listen {
        Some(addr) => {
            let listener = TcpListener::bind(addr).map_err(|e| Usage(format!("cannot listen on {addr}: {e}")))?;
            log::info!("serving on {}", listener.local_addr()?);
            serve_tcp(Arc::new(model), listener)?;
        }
        None => serve_stream(&model, io::stdin().lock(), io::stdout().lock())?,
    }
    Ok(())
}
