//! Flat `key = value` run configuration.
//!
//! A config file is a TOML document with no tables; every key is listed in
//! [`KEYS`]. Unknown keys and ill-typed values are errors, and every problem
//! in a file is reported at once. The same keys can be overridden from
//! strings (command-line flags) with [`RunConfig::set_text`].

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::eval::TiePolicy;
use crate::train::{preset, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Count,
    Seed,
    Real,
    Flag,
    Rates,
    Text,
    Path,
}

/// Every accepted key with its type and a one-line description.
pub const KEYS: &[(&str, Kind, &str)] = &[
    ("preset", Kind::Text, "start from a named preset (applied before other keys)"),
    ("dataset", Kind::Path, "dataset directory or preprocessed cache file"),
    ("output", Kind::Path, "run directory"),
    ("batch_size", Kind::Count, "(h, r) queries per step"),
    ("learning_rate", Kind::Real, "Adam step size"),
    ("beta1", Kind::Real, "Adam first-moment decay"),
    ("beta2", Kind::Real, "Adam second-moment decay"),
    ("adam_eps", Kind::Real, "Adam denominator offset"),
    ("epochs", Kind::Count, "maximum epochs"),
    ("label_smoothing", Kind::Real, "label smoothing toward 1/N"),
    ("eval_every", Kind::Count, "epochs between validations"),
    ("patience", Kind::Count, "validations without improvement before stopping"),
    ("seed", Kind::Seed, "seed for initialization, shuffling and dropout"),
    ("head_mode", Kind::Text, "reciprocal | direct"),
    ("tie_policy", Kind::Text, "mean | optimistic | pessimistic"),
    ("embedding_dim", Kind::Count, "entity and relation width m"),
    ("reshape_rows", Kind::Count, "rows n1 of the 2-D reshape"),
    ("reshape_cols", Kind::Count, "columns n2 of the 2-D reshape"),
    ("kernel_size", Kind::Count, "square kernel size k"),
    ("filters", Kind::Count, "filters F per convolution stage"),
    ("rates", Kind::Rates, "atrous rates, one per atrous stage"),
    ("structure", Kind::Text, "serial | parallel"),
    ("integration", Kind::Text, "add | concat (parallel only)"),
    ("input_dropout", Kind::Real, "dropout on the reshaped input"),
    ("feature_dropout", Kind::Real, "dropout on the feature map"),
    ("hidden_dropout", Kind::Real, "dropout on the projected vector"),
    ("batch_norm", Kind::Flag, "batch normalization on/off"),
];

fn kind_of(key: &str) -> Option<Kind> {
    KEYS.iter().find(|(k, _, _)| *k == key).map(|&(_, kind, _)| kind)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub preset: Option<String>,
    pub dataset: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub tie_policy: TiePolicy,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            preset: None,
            dataset: None,
            output: None,
            tie_policy: TiePolicy::Mean,
            train: TrainConfig::default(),
        }
    }
}

enum Typed {
    Count(usize),
    Seed(u64),
    Real(f64),
    Flag(bool),
    Rates(Vec<usize>),
    Text(String),
}

fn from_toml(key: &str, kind: Kind, v: &toml::Value) -> Result<Typed, String> {
    let bad = || format!("`{key}`: expected {}, got `{v}`", describe(kind));
    Ok(match kind {
        Kind::Count => Typed::Count(v.as_integer().and_then(|i| usize::try_from(i).ok()).ok_or_else(bad)?),
        Kind::Seed => Typed::Seed(v.as_integer().and_then(|i| u64::try_from(i).ok()).ok_or_else(bad)?),
        Kind::Real => Typed::Real(v.as_float().or_else(|| v.as_integer().map(|i| i as f64)).ok_or_else(bad)?),
        Kind::Flag => Typed::Flag(v.as_bool().ok_or_else(bad)?),
        Kind::Rates => Typed::Rates(
            v.as_array()
                .ok_or_else(bad)?
                .iter()
                .map(|x| x.as_integer().and_then(|i| usize::try_from(i).ok()))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(bad)?,
        ),
        Kind::Text | Kind::Path => Typed::Text(v.as_str().ok_or_else(bad)?.to_string()),
    })
}

fn from_text(key: &str, kind: Kind, s: &str) -> Result<Typed, String> {
    let bad = || format!("`{key}`: expected {}, got `{s}`", describe(kind));
    Ok(match kind {
        Kind::Count => Typed::Count(s.parse().map_err(|_| bad())?),
        Kind::Seed => Typed::Seed(s.parse().map_err(|_| bad())?),
        Kind::Real => Typed::Real(s.parse().map_err(|_| bad())?),
        Kind::Flag => Typed::Flag(match s {
            "true" | "on" | "1" => true,
            "false" | "off" | "0" => false,
            _ => return Err(bad()),
        }),
        Kind::Rates => {
            let trimmed = s.trim().trim_start_matches('[').trim_end_matches(']');
            if trimmed.trim().is_empty() {
                Typed::Rates(vec![])
            } else {
                Typed::Rates(trimmed.split(',').map(|x| x.trim().parse()).collect::<Result<_, _>>().map_err(|_| bad())?)
            }
        }
        Kind::Text | Kind::Path => Typed::Text(s.to_string()),
    })
}

fn describe(kind: Kind) -> &'static str {
    match kind {
        Kind::Count => "a non-negative integer",
        Kind::Seed => "a non-negative integer seed",
        Kind::Real => "a number",
        Kind::Flag => "true or false",
        Kind::Rates => "a list of integers",
        Kind::Text => "a string",
        Kind::Path => "a path string",
    }
}

impl RunConfig {
    fn assign(&mut self, key: &str, value: Typed) -> Result<(), String> {
        let t = &mut self.train;
        let m = &mut t.model;
        match (key, value) {
            ("preset", Typed::Text(name)) => {
                let p = preset(&name).ok_or_else(|| format!("`preset`: unknown preset `{name}`"))?;
                self.train = p.train;
                self.preset = Some(name);
            }
            ("dataset", Typed::Text(p)) => self.dataset = Some(PathBuf::from(p)),
            ("output", Typed::Text(p)) => self.output = Some(PathBuf::from(p)),
            ("batch_size", Typed::Count(v)) => t.batch_size = v,
            ("learning_rate", Typed::Real(v)) => t.learning_rate = v,
            ("beta1", Typed::Real(v)) => t.adam.beta1 = v,
            ("beta2", Typed::Real(v)) => t.adam.beta2 = v,
            ("adam_eps", Typed::Real(v)) => t.adam.eps = v,
            ("epochs", Typed::Count(v)) => t.epochs = v,
            ("label_smoothing", Typed::Real(v)) => t.label_smoothing = v,
            ("eval_every", Typed::Count(v)) => t.eval_every = v,
            ("patience", Typed::Count(v)) => t.patience = v,
            ("seed", Typed::Seed(v)) => t.seed = v,
            ("head_mode", Typed::Text(v)) => t.head_mode = v.parse().map_err(|e| format!("`head_mode`: {e}"))?,
            ("tie_policy", Typed::Text(v)) => self.tie_policy = v.parse().map_err(|e| format!("`tie_policy`: {e}"))?,
            ("embedding_dim", Typed::Count(v)) => m.embedding_dim = v,
            ("reshape_rows", Typed::Count(v)) => m.reshape_rows = v,
            ("reshape_cols", Typed::Count(v)) => m.reshape_cols = v,
            ("kernel_size", Typed::Count(v)) => m.kernel_size = v,
            ("filters", Typed::Count(v)) => m.filters = v,
            ("rates", Typed::Rates(v)) => m.rates = v,
            ("structure", Typed::Text(v)) => m.structure = v.parse().map_err(|e| format!("`structure`: {e}"))?,
            ("integration", Typed::Text(v)) => m.integration = v.parse().map_err(|e| format!("`integration`: {e}"))?,
            ("input_dropout", Typed::Real(v)) => m.input_dropout = v,
            ("feature_dropout", Typed::Real(v)) => m.feature_dropout = v,
            ("hidden_dropout", Typed::Real(v)) => m.hidden_dropout = v,
            ("batch_norm", Typed::Flag(v)) => m.batch_norm = v,
            (other, _) => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    /// Sets one key from its textual form.
    pub fn set_text(&mut self, key: &str, value: &str) -> Result<(), String> {
        let kind = kind_of(key).ok_or_else(|| format!("unknown key `{key}`"))?;
        self.assign(key, from_text(key, kind, value)?)
    }

    /// Applies every key of a TOML document on top of `self`, `preset`
    /// first. Collects all problems instead of stopping at the first.
    pub fn apply_toml(&mut self, text: &str) -> Result<(), Vec<String>> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| vec![e.message().to_string()])?;
        let mut errors = Vec::new();
        let mut keys: Vec<&String> = table.keys().collect();
        keys.sort_by_key(|k| *k != "preset");
        for key in keys {
            let value = &table[key];
            let result = match kind_of(key) {
                None => Err(format!("unknown key `{key}`")),
                Some(kind) => from_toml(key, kind, value).and_then(|typed| self.assign(key, typed)),
            };
            if let Err(e) = result {
                errors.push(e);
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, Vec<String>> {
        let mut cfg = RunConfig::default();
        cfg.apply_toml(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, Vec<String>> {
        let text = std::fs::read_to_string(path).map_err(|e| vec![format!("{}: {e}", path.display())])?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), Vec<String>> {
        self.train.validate()
    }

    /// Every key, fully resolved. Reloading the output yields `self`.
    pub fn to_toml(&self) -> String {
        let t = &self.train;
        let m = &t.model;
        let mut out = String::new();
        let s = |v: &str| toml::Value::String(v.to_string()).to_string();
        if let Some(p) = &self.preset {
            let _ = writeln!(out, "# resolved from preset {}", s(p));
        }
        if let Some(p) = &self.dataset {
            let _ = writeln!(out, "dataset = {}", s(&p.display().to_string()));
        }
        if let Some(p) = &self.output {
            let _ = writeln!(out, "output = {}", s(&p.display().to_string()));
        }
        let real = |v: f64| toml::Value::Float(v).to_string();
        let rates = m.rates.iter().map(usize::to_string).collect::<Vec<_>>().join(", ");
        let lines: Vec<(&str, String)> = vec![
            ("batch_size", t.batch_size.to_string()),
            ("learning_rate", real(t.learning_rate)),
            ("beta1", real(t.adam.beta1)),
            ("beta2", real(t.adam.beta2)),
            ("adam_eps", real(t.adam.eps)),
            ("epochs", t.epochs.to_string()),
            ("label_smoothing", real(t.label_smoothing)),
            ("eval_every", t.eval_every.to_string()),
            ("patience", t.patience.to_string()),
            ("seed", t.seed.to_string()),
            ("head_mode", s(&t.head_mode.to_string())),
            ("tie_policy", s(&self.tie_policy.to_string())),
            ("embedding_dim", m.embedding_dim.to_string()),
            ("reshape_rows", m.reshape_rows.to_string()),
            ("reshape_cols", m.reshape_cols.to_string()),
            ("kernel_size", m.kernel_size.to_string()),
            ("filters", m.filters.to_string()),
            ("rates", format!("[{rates}]")),
            ("structure", s(&m.structure.to_string())),
            ("integration", s(&m.integration.to_string())),
            ("input_dropout", real(m.input_dropout)),
            ("feature_dropout", real(m.feature_dropout)),
            ("hidden_dropout", real(m.hidden_dropout)),
            ("batch_norm", m.batch_norm.to_string()),
        ];
        for (k, v) in lines {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}
