//! `codemix` command-line tool.
//!
//! Exit codes: 0 success, 2 configuration or data error, 3 scorer or
//! transport error, 4 per-item failures under `--strict`.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use codemix::ScorerError;

use crate::config::{parse_lang_path, RunConfig};

/// A configuration or input problem; exits with status 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

/// Some items failed while `strict` was set; exits with status 4.
#[derive(Debug)]
pub struct StrictFailures {
    pub failed: usize,
    pub total: usize,
}

impl std::fmt::Display for StrictFailures {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} of {} items failed (strict mode)", self.failed, self.total)
    }
}

impl std::error::Error for StrictFailures {}

#[derive(Parser, Debug)]
#[command(name = "codemix", version, about = "Code-switching adversarial attacks and augmentation for intent/slot models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the synthetic bilingual toy corpus.
    Toy(ToyArgs),
    /// Train the built-in joint model.
    Train(TrainArgs),
    /// Run the greedy code-switching attack on a dataset.
    Attack(AttackArgs),
    /// Generate randomly code-mixed training data and split it.
    Augment(AugmentArgs),
    /// Evaluate a scorer on one or more datasets.
    Eval(EvalArgs),
    /// Render report tables from evaluation results.
    Report(ReportArgs),
    /// Serve a built-in model over the line protocol.
    Serve(ServeArgs),
}

#[derive(Args, Debug, Default)]
struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Global seed [config default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for attack and augmentation [default: 1].
    #[arg(long)]
    parallelism: Option<usize>,
    /// Exit with status 4 if any item fails.
    #[arg(long)]
    strict: bool,
    /// Pivot (matrix) language [default: en].
    #[arg(long)]
    pivot_lang: Option<String>,
    /// Dataset, repeatable. Replaces the configured list.
    #[arg(long = "data", value_name = "[COND/]LANG=PATH")]
    data: Vec<String>,
}

#[derive(Args, Debug, Default)]
struct Resources {
    /// Bilingual lexicon from the pivot language, repeatable.
    #[arg(long = "lexicon", value_name = "LANG=PATH")]
    lexicons: Vec<String>,
    /// Alignment file from the pivot language, repeatable.
    #[arg(long = "alignment", value_name = "LANG=PATH")]
    alignments: Vec<String>,
}

#[derive(Args, Debug, Default)]
struct ScorerArgs {
    /// Built-in model file.
    #[arg(long)]
    model: Option<PathBuf>,
    /// External scorer endpoint; takes precedence over --model.
    #[arg(long, env = "CODEMIX_SCORER", value_name = "ENDPOINT")]
    scorer: Option<String>,
    /// Items per request to an external scorer [default: 64].
    #[arg(long)]
    scorer_batch: Option<usize>,
}

#[derive(Args, Debug)]
struct ToyArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    /// Name of the embedded pseudo-language [default: xx].
    #[arg(long)]
    embedded: Option<String>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated languages to keep; e.g. `en` for pivot-only training.
    #[arg(long, value_delimiter = ',')]
    langs: Vec<String>,
    #[arg(long, value_name = "LANG=PATH")]
    heldout: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
}

#[derive(Args, Debug)]
struct AttackArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    resources: Resources,
    #[command(flatten)]
    scorer: ScorerArgs,
    /// `word` (lexicon) or `phrase` (alignment) [default: word].
    #[arg(long)]
    mode: Option<String>,
    /// Embedded language to switch into.
    #[arg(long)]
    embedded: Option<String>,
    #[arg(long)]
    k_max: Option<usize>,
    /// Accept a substitution only if it strictly increases the loss.
    #[arg(long)]
    strict_ties: bool,
}

#[derive(Args, Debug)]
struct AugmentArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    resources: Resources,
    /// Comma-separated embedded languages.
    #[arg(long, value_delimiter = ',')]
    langs: Vec<String>,
    /// Replacement probability per covered position [default: 0.5].
    #[arg(long)]
    replace_prob: Option<f64>,
    /// `word` or `phrase` [default: phrase].
    #[arg(long)]
    mode: Option<String>,
    /// Train:test split ratio [default: 9:1].
    #[arg(long)]
    ratio: Option<String>,
    #[arg(long)]
    k_max: Option<usize>,
    /// Keep utterances with no candidate position instead of dropping them.
    #[arg(long)]
    keep_uncovered: bool,
    /// Write five-column TSV with a lang column.
    #[arg(long)]
    lang_column: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    scorer: ScorerArgs,
    /// `token` or `span` [default: token].
    #[arg(long)]
    f1: Option<String>,
    /// `markdown` or `tsv` [default: markdown].
    #[arg(long)]
    format: Option<String>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[command(flatten)]
    common: Common,
    /// `eval.json` produced by `codemix eval`, repeatable.
    #[arg(long = "input")]
    inputs: Vec<PathBuf>,
    /// TSV of precomputed scores: condition, lang, intent_accuracy, slot_f1, semantic_accuracy.
    #[arg(long)]
    scores: Vec<PathBuf>,
    #[arg(long)]
    format: Option<String>,
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[arg(long)]
    model: PathBuf,
    /// Listen address; without it requests are read from stdin.
    #[arg(long)]
    listen: Option<String>,
}

fn resolve_common(common: &Common) -> anyhow::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out = Some(out.clone());
    }
    if let Some(p) = common.parallelism {
        cfg.parallelism = p;
    }
    cfg.strict |= common.strict;
    if let Some(lang) = &common.pivot_lang {
        cfg.pivot_lang = lang.clone();
    }
    if !common.data.is_empty() {
        cfg.data = common.data.clone();
    }
    if cfg.parallelism == 0 {
        anyhow::bail!(Usage("parallelism must be at least 1".into()));
    }
    cfg.model.seed = cfg.seed;
    Ok(cfg)
}

fn apply_resources(cfg: &mut RunConfig, r: &Resources) -> anyhow::Result<()> {
    for spec in &r.lexicons {
        let (lang, path) = parse_lang_path(spec)?;
        cfg.lexicons.insert(lang, path);
    }
    for spec in &r.alignments {
        let (lang, path) = parse_lang_path(spec)?;
        cfg.alignments.insert(lang, path);
    }
    Ok(())
}

fn apply_scorer(cfg: &mut RunConfig, s: &ScorerArgs) {
    if let Some(m) = &s.model {
        cfg.scorer.model = Some(m.clone());
    }
    if let Some(e) = &s.scorer {
        cfg.scorer.endpoint = Some(e.clone());
    }
    if let Some(b) = s.scorer_batch {
        cfg.scorer.batch_size = b;
    }
}

fn parse_mode(s: &str) -> anyhow::Result<codemix::AttackMode> {
    s.parse().map_err(|e: String| Usage(e).into())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Toy(a) => {
            let mut cfg = resolve_common(&a.common)?;
            if let Some(n) = a.n_train {
                cfg.toy.n_train = n;
            }
            if let Some(n) = a.n_test {
                cfg.toy.n_test = n;
            }
            if let Some(e) = a.embedded {
                cfg.toy.embedded_lang = e;
            }
            commands::toy(&cfg)
        }
        Command::Train(a) => {
            let mut cfg = resolve_common(&a.common)?;
            if !a.langs.is_empty() {
                cfg.train.langs = a.langs;
            }
            if let Some(h) = a.heldout {
                cfg.train.heldout = Some(h);
            }
            if let Some(e) = a.epochs {
                cfg.model.epochs = e;
            }
            if let Some(lr) = a.learning_rate {
                cfg.model.learning_rate = lr;
            }
            commands::train(&cfg)
        }
        Command::Attack(a) => {
            let mut cfg = resolve_common(&a.common)?;
            apply_resources(&mut cfg, &a.resources)?;
            apply_scorer(&mut cfg, &a.scorer);
            if let Some(m) = &a.mode {
                cfg.attack.mode = parse_mode(m)?;
            }
            if let Some(e) = a.embedded {
                cfg.attack.embedded_lang = Some(e);
            }
            if let Some(k) = a.k_max {
                cfg.attack.k_max = k;
            }
            if a.strict_ties {
                cfg.attack.accept_on_tie = false;
            }
            commands::attack(&cfg)
        }
        Command::Augment(a) => {
            let mut cfg = resolve_common(&a.common)?;
            apply_resources(&mut cfg, &a.resources)?;
            if !a.langs.is_empty() {
                cfg.augment.embedded_langs = a.langs;
            }
            if let Some(p) = a.replace_prob {
                cfg.augment.replace_prob = p;
            }
            if let Some(m) = &a.mode {
                cfg.augment.mode = parse_mode(m)?;
            }
            if let Some(r) = a.ratio {
                cfg.augment.split_ratio = r;
            }
            if let Some(k) = a.k_max {
                cfg.augment.k_max = k;
            }
            if a.keep_uncovered {
                cfg.augment.drop_uncovered = false;
            }
            if a.lang_column {
                cfg.augment.lang_column = true;
            }
            commands::augment(&cfg)
        }
        Command::Eval(a) => {
            let mut cfg = resolve_common(&a.common)?;
            apply_scorer(&mut cfg, &a.scorer);
            if let Some(f) = &a.f1 {
                cfg.eval.f1_mode = config::parse_f1_mode(f)?;
            }
            if let Some(f) = &a.format {
                cfg.eval.format = config::parse_format(f)?;
            }
            commands::eval(&cfg)
        }
        Command::Report(a) => {
            let mut cfg = resolve_common(&a.common)?;
            if let Some(f) = &a.format {
                cfg.eval.format = config::parse_format(f)?;
            }
            commands::report(&cfg, &a.inputs, &a.scores)
        }
        Command::Serve(a) => commands::serve(&a.model, a.listen.as_deref()),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<StrictFailures>().is_some() {
            return 4;
        }
        if cause.downcast_ref::<ScorerError>().is_some()
            || matches!(cause.downcast_ref::<codemix::Error>(), Some(codemix::Error::Scorer(_)))
        {
            return 3;
        }
    }
    2
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            log::error!("{err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
