//! `key=value` run configuration. Later sources override earlier ones:
//! built-in defaults, the config file, `BIQE_*` environment variables,
//! then command-line flags.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use biqe_core::datagen::Split;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const ENV_PREFIX: &str = "BIQE_";
pub const FILE_NAME: &str = "config.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ModelChoice {
    Biqe,
    GqeMp,
}

impl ModelChoice {
    pub fn name(self) -> &'static str {
        match self {
            ModelChoice::Biqe => "biqe",
            ModelChoice::GqeMp => "gqe-mp",
        }
    }
}

impl FromStr for ModelChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "biqe" => Ok(ModelChoice::Biqe),
            "gqe-mp" => Ok(ModelChoice::GqeMp),
            _ => Err(format!("expected biqe or gqe-mp, got `{s}`")),
        }
    }
}

impl Display for ModelChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

trait Value: Sized {
    fn parse(s: &str) -> Result<Self, String>;
    fn render(&self) -> String;
}

macro_rules! plain_value {
    ($($t:ty),*) => {$(
        impl Value for $t {
            fn parse(s: &str) -> Result<Self, String> {
                s.parse().map_err(|e| format!("`{s}`: {e}"))
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

plain_value!(u64, usize, f64, bool, ModelChoice);

impl Value for PathBuf {
    fn parse(s: &str) -> Result<Self, String> {
        Ok(PathBuf::from(s))
    }
    fn render(&self) -> String {
        self.display().to_string()
    }
}

/// `none` or a value.
impl<T: Value> Value for Option<T> {
    fn parse(s: &str) -> Result<Self, String> {
        if s == "none" {
            Ok(None)
        } else {
            T::parse(s).map(Some)
        }
    }
    fn render(&self) -> String {
        self.as_ref().map_or_else(|| "none".to_string(), T::render)
    }
}

impl Value for Split {
    fn parse(s: &str) -> Result<Self, String> {
        Split::ALL.into_iter().find(|x| x.name() == s).ok_or_else(|| format!("expected train, dev or test, got `{s}`"))
    }
    fn render(&self) -> String {
        self.name().to_string()
    }
}

macro_rules! run_config {
    ($($(#[doc = $doc:literal])* $field:ident: $ty:ty = $default:expr,)*) => {
        /// Every setting of every subcommand; each has a default.
        #[derive(Debug, Clone, PartialEq)]
        pub struct RunConfig {
            $($(#[doc = $doc])* pub $field: $ty,)*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                Self { $($field: $default,)* }
            }
        }

        impl RunConfig {
            pub const KEYS: &'static [&'static str] = &[$(stringify!($field)),*];

            pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
                match key {
                    $(stringify!($field) => {
                        self.$field = Value::parse(value.trim())
                            .map_err(|e| CliError::user(format!("config key `{key}`: {e}")))?;
                    })*
                    _ => return Err(CliError::user(format!("unknown config key `{key}`"))),
                }
                Ok(())
            }

            pub fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$((stringify!($field), Value::render(&self.$field)),)*]
            }
        }
    };
}

run_config! {
    seed: u64 = 0,
    model: ModelChoice = ModelChoice::Biqe,
    /// Input: a triples file or directory for `generate`, a dataset directory otherwise.
    data: PathBuf = PathBuf::from("data"),
    out: PathBuf = PathBuf::from("out"),
    checkpoint: Option<PathBuf> = None,
    split: Split = Split::Test,
    epochs: usize = 20,
    batch_size: usize = 128,
    lr: f64 = 1e-3,
    gqe_lr: f64 = 1e-2,
    warmup_steps: u64 = 0,
    linear_decay: bool = false,
    max_len: usize = 64,
    layers: usize = 2,
    heads: usize = 4,
    hidden: usize = 64,
    ff_hidden: usize = 256,
    max_positions: usize = 16,
    dropout: f64 = 0.1,
    gqe_dim: usize = 64,
    /// Run the encoder with no-future attention.
    ablation: bool = false,
    /// Score with the ground-truth answer sets instead of a model.
    oracle: bool = false,
    dev_fraction: f64 = 0.15,
    test_fraction: f64 = 0.15,
    walks_per_node: usize = 1,
    train_path_limit: Option<usize> = None,
    eval_path_limit: Option<usize> = None,
    dag_limit: Option<usize> = None,
    max_branches: usize = 3,
    distinct_positions: bool = false,
}

/// `(line, key, value)` for every non-blank, non-comment line.
pub fn parse_lines(text: &str) -> CliResult<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::user(format!("config line {}: expected key=value", i + 1)))?;
        out.push((i + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    pub fn apply_text(&mut self, text: &str) -> CliResult<()> {
        for (line, k, v) in parse_lines(text)? {
            self.set(&k, &v).map_err(|e| CliError::user(format!("config line {line}: {e}")))?;
        }
        Ok(())
    }

    /// Applies `BIQE_<KEY>` variables; other variables are ignored.
    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> CliResult<()> {
        let mut vars: Vec<_> = vars.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
        vars.sort();
        for (k, v) in vars {
            let key = k[ENV_PREFIX.len()..].to_ascii_lowercase();
            self.set(&key, &v).map_err(|e| CliError::user(format!("environment variable {k}: {e}")))?;
        }
        Ok(())
    }

    pub fn resolve(
        file: Option<&Path>,
        env: impl IntoIterator<Item = (String, String)>,
        flags: &[(&str, String)],
    ) -> CliResult<Self> {
        let mut cfg = Self::default();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            cfg.apply_text(&text)?;
        }
        cfg.apply_env(env)?;
        for (k, v) in flags {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn render(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// SHA-256 of the rendered configuration.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.render().as_bytes()))
    }

    /// Writes the resolved configuration into `dir`.
    pub fn echo_into(&self, dir: &Path) -> CliResult<()> {
        let path = dir.join(FILE_NAME);
        std::fs::write(&path, self.render()).map_err(|e| CliError::io(&path, e))
    }
}
