//! Run configuration: a TOML file plus command-line overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use codemix::attack::AttackMode;
use codemix::candidates::DEFAULT_K_MAX;
use codemix::eval::{F1Mode, TableFormat};
use codemix::victim::ModelConfig;
use serde::{Deserialize, Serialize};

use crate::Usage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub parallelism: usize,
    /// Any per-item failure makes the command exit with status 4.
    pub strict: bool,
    pub pivot_lang: String,
    /// Dataset specs, `[CONDITION/]LANG=PATH`.
    pub data: Vec<String>,
    /// Bilingual lexicons from the pivot language, keyed by target language.
    pub lexicons: BTreeMap<String, PathBuf>,
    /// Alignment files from the pivot language, keyed by target language.
    pub alignments: BTreeMap<String, PathBuf>,
    pub scorer: ScorerSection,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub attack: AttackSection,
    pub augment: AugmentSection,
    pub eval: EvalSection,
    pub toy: ToySection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: None,
            parallelism: 1,
            strict: false,
            pivot_lang: "en".into(),
            data: Vec::new(),
            lexicons: BTreeMap::new(),
            alignments: BTreeMap::new(),
            scorer: ScorerSection::default(),
            model: ModelConfig::default(),
            train: TrainSection::default(),
            attack: AttackSection::default(),
            augment: AugmentSection::default(),
            eval: EvalSection::default(),
            toy: ToySection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerSection {
    /// Built-in model file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    /// External scorer, `host:port`, `tcp://host:port` or `exec:<command>`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    pub batch_size: usize,
    pub timeout_secs: u64,
}

impl Default for ScorerSection {
    fn default() -> Self {
        ScorerSection {
            model: None,
            endpoint: None,
            batch_size: 64,
            timeout_secs: 30,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// Keep only utterances in these languages; empty keeps all.
    pub langs: Vec<String>,
    /// Held-out set, `LANG=PATH`, scored after every epoch.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heldout: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSection {
    pub mode: AttackMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embedded_lang: Option<String>,
    pub k_max: usize,
    pub accept_on_tie: bool,
}

impl Default for AttackSection {
    fn default() -> Self {
        AttackSection {
            mode: AttackMode::Word,
            embedded_lang: None,
            k_max: DEFAULT_K_MAX,
            accept_on_tie: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSection {
    pub embedded_langs: Vec<String>,
    pub replace_prob: f64,
    pub mode: AttackMode,
    /// `TRAIN:TEST`.
    pub split_ratio: String,
    pub k_max: usize,
    pub drop_uncovered: bool,
    /// Write the five-column format with a `lang` column.
    pub lang_column: bool,
}

impl Default for AugmentSection {
    fn default() -> Self {
        AugmentSection {
            embedded_langs: Vec::new(),
            replace_prob: 0.5,
            mode: AttackMode::Phrase,
            split_ratio: "9:1".into(),
            k_max: DEFAULT_K_MAX,
            drop_uncovered: true,
            lang_column: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub f1_mode: F1Mode,
    pub format: TableFormat,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            f1_mode: F1Mode::Token,
            format: TableFormat::Markdown,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToySection {
    pub n_train: usize,
    pub n_test: usize,
    pub embedded_lang: String,
}

impl Default for ToySection {
    fn default() -> Self {
        ToySection {
            n_train: 500,
            n_test: 100,
            embedded_lang: "xx".into(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Usage(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|e| Usage(format!("invalid config {}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        toml::to_string_pretty(self).context("serializing config")
    }

    pub fn out_dir(&self) -> anyhow::Result<&Path> {
        match &self.out {
            Some(p) => Ok(p),
            None => bail!(Usage("no output directory (--out)".into())),
        }
    }

    pub fn data_specs(&self) -> anyhow::Result<Vec<DataSpec>> {
        self.data.iter().map(|s| DataSpec::parse(s, &self.pivot_lang)).collect()
    }

    /// Creates the output directory and echoes the resolved configuration into it.
    pub fn prepare_out(&self) -> anyhow::Result<PathBuf> {
        let out = self.out_dir()?.to_path_buf();
        std::fs::create_dir_all(&out).map_err(|e| Usage(format!("cannot create {}: {e}", out.display())))?;
        std::fs::write(out.join("config.toml"), self.to_toml()?)
            .with_context(|| format!("writing {}", out.join("config.toml").display()))?;
        Ok(out)
    }
}

/// A dataset reference, `[CONDITION/]LANG=PATH`. Without `LANG=` the pivot language is assumed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataSpec {
    pub condition: Option<String>,
    pub lang: String,
    pub path: PathBuf,
}

impl DataSpec {
    pub fn parse(spec: &str, default_lang: &str) -> anyhow::Result<Self> {
        let (key, path) = match spec.split_once('=') {
            Some((k, p)) => (Some(k), p),
            None => (None, spec),
        };
        let (condition, lang) = match key {
            None => (None, default_lang.to_string()),
            Some(k) => match k.rsplit_once('/') {
                Some((c, l)) => (Some(c.to_string()), l.to_string()),
                None => (None, k.to_string()),
            },
        };
        if path.is_empty() || lang.is_empty() || condition.as_deref() == Some("") {
            bail!(Usage(format!("malformed dataset spec {spec:?}, expected [COND/]LANG=PATH")));
        }
        Ok(DataSpec {
            condition,
            lang,
            path: PathBuf::from(path),
        })
    }
}

/// Parses `LANG=PATH` into a map entry.
pub fn parse_lang_path(spec: &str) -> anyhow::Result<(String, PathBuf)> {
    match spec.split_once('=') {
        Some((l, p)) if !l.is_empty() && !p.is_empty() => Ok((l.to_string(), PathBuf::from(p))),
        _ => bail!(Usage(format!("malformed spec {spec:?}, expected LANG=PATH"))),
    }
}

pub fn parse_ratio(s: &str) -> anyhow::Result<(u32, u32)> {
    let parsed = s
        .split_once(':')
        .and_then(|(a, b)| Some((a.trim().parse::<u32>().ok()?, b.trim().parse::<u32>().ok()?)));
    match parsed {
        Some((a, b)) if a > 0 && b > 0 => Ok((a, b)),
        Some(_) => bail!(Usage(format!("split ratio {s:?} would leave a part empty"))),
        None => bail!(Usage(format!("malformed split ratio {s:?}, expected TRAIN:TEST"))),
    }
}

pub fn parse_f1_mode(s: &str) -> anyhow::Result<F1Mode> {
    match s {
        "token" => Ok(F1Mode::Token),
        "span" => Ok(F1Mode::Span),
        _ => bail!(Usage(format!("unknown F1 mode {s:?}, expected token or span"))),
    }
}

pub fn parse_format(s: &str) -> anyhow::Result<TableFormat> {
    match s {
        "markdown" | "md" => Ok(TableFormat::Markdown),
        "tsv" => Ok(TableFormat::Tsv),
        _ => bail!(Usage(format!("unknown table format {s:?}, expected markdown or tsv"))),
    }
}

/// Fails with a usage error unless every path exists.
pub fn require_paths<'a>(paths: impl IntoIterator<Item = &'a Path>) -> anyhow::Result<()> {
    let missing: Vec<String> = paths
        .into_iter()
        .filter(|p| !p.exists())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        bail!(Usage(format!("missing input file(s): {}", missing.join(", "))));
    }
    Ok(())
}
