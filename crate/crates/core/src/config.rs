//! JSON run configuration shared by the CLI subcommands.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::cascade::CascadeConfig;
use crate::corpus::{BuildMode, CorpusConfig, DEFAULT_MAX_LEN};
use crate::error::{Error, Result};
use crate::simprov::{
    EmbeddingCache, LexicalProvider, RemoteProvider, RemoteSettings, SimilarityProvider, VectorFileProvider,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProviderSpec {
    Lexical,
    Vectors(PathBuf),
    Remote(String),
}

impl FromStr for ProviderSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            _ if s == "lexical" => Ok(ProviderSpec::Lexical),
            Some(("vectors", path)) if !path.is_empty() => Ok(ProviderSpec::Vectors(path.into())),
            Some(("remote", url)) if !url.is_empty() => Ok(ProviderSpec::Remote(url.to_owned())),
            _ => Err(Error::Config(format!(
                "provider {s:?} is not one of lexical, vectors:<path>, remote:<url>"
            ))),
        }
    }
}

impl fmt::Display for ProviderSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProviderSpec::Lexical => f.write_str("lexical"),
            ProviderSpec::Vectors(p) => write!(f, "vectors:{}", p.display()),
            ProviderSpec::Remote(u) => write!(f, "remote:{u}"),
        }
    }
}

impl Serialize for ProviderSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ProviderSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl ProviderSpec {
    pub fn instantiate(&self, remote: &RemoteSettings) -> Result<Box<dyn SimilarityProvider>> {
        Ok(match self {
            ProviderSpec::Lexical => Box::new(LexicalProvider::new()),
            ProviderSpec::Vectors(path) => Box::new(VectorFileProvider::from_path(path)?),
            ProviderSpec::Remote(url) => Box::new(RemoteProvider::new(
                url,
                Arc::new(EmbeddingCache::new()),
                remote.clone(),
            )),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub store: Option<PathBuf>,
    pub dialogues: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub cascade: CascadeConfig,
    pub provider: ProviderSpec,
    pub remote: RemoteSettings,
    pub max_len: usize,
    pub seed: Option<u64>,
    pub mode: BuildMode,
    pub profanity: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            store: None,
            dialogues: None,
            output: None,
            cascade: CascadeConfig::default(),
            provider: ProviderSpec::Lexical,
            remote: RemoteSettings::default(),
            max_len: DEFAULT_MAX_LEN,
            seed: None,
            mode: BuildMode::default(),
            profanity: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn corpus_config(&self) -> CorpusConfig {
        CorpusConfig {
            cascade: self.cascade.clone(),
            max_len: self.max_len,
        }
    }

    /// Check values and that every referenced input path exists.
    pub fn validate(&self) -> Result<()> {
        self.cascade.validate()?;
        if self.max_len == 0 {
            return Err(Error::Config("max_len must be positive".into()));
        }
        let mut inputs: Vec<&Path> = [&self.store, &self.dialogues, &self.profanity]
            .into_iter()
            .flatten()
            .map(PathBuf::as_path)
            .collect();
        if let ProviderSpec::Vectors(p) = &self.provider {
            inputs.push(p);
        }
        for p in inputs {
            if !p.exists() {
                return Err(Error::Config(format!("{} does not exist", p.display())));
            }
        }
        Ok(())
    }

    /// Warnings worth printing before a run.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.cascade.sem_threshold == CascadeConfig::default().sem_threshold {
            out.push(format!(
                "sem_threshold {} was calibrated for a sentence-embedding model; provider {} may need a different value",
                self.cascade.sem_threshold, self.provider
            ));
        }
        out
    }
}
