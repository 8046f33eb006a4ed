use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::toy::{ToyEmbedder, ToyIqa, ToyVqa, ToyWeights, DEFAULT_EMBED_DIM, DEFAULT_WIDTH};
use super::{EmbeddingModel, LayeredImageMetric, VideoQualityMetric};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AdapterKind {
    #[serde(rename = "toy-iqa")]
    ToyIqa,
    #[serde(rename = "toy-vqa")]
    ToyVqa,
    #[serde(rename = "toy-embed")]
    ToyEmbed,
}

impl AdapterKind {
    pub const ALL: [AdapterKind; 3] = [AdapterKind::ToyIqa, AdapterKind::ToyVqa, AdapterKind::ToyEmbed];

    pub fn as_str(self) -> &'static str {
        match self {
            AdapterKind::ToyIqa => "toy-iqa",
            AdapterKind::ToyVqa => "toy-vqa",
            AdapterKind::ToyEmbed => "toy-embed",
        }
    }
}

impl fmt::Display for AdapterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AdapterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AdapterKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown adapter kind `{s}` (expected one of: toy-iqa, toy-vqa, toy-embed)"
                ))
            })
    }
}

/// How to build one adapter instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterSpec {
    pub kind: AdapterKind,
    pub seed: u64,
    pub width: usize,
    pub embed_dim: usize,
    /// Optional weight file overriding the seeded weights.
    pub weights: Option<PathBuf>,
}

impl AdapterSpec {
    pub fn toy(kind: AdapterKind, seed: u64) -> Self {
        Self {
            kind,
            seed,
            width: DEFAULT_WIDTH,
            embed_dim: DEFAULT_EMBED_DIM,
            weights: None,
        }
    }

    fn weights(&self) -> Result<ToyWeights> {
        match &self.weights {
            Some(path) => ToyWeights::load(path),
            None => Ok(ToyWeights::generate(self.seed, self.width, self.embed_dim)),
        }
    }
}

/// Adapter specifications keyed by name. Each `build_*` call returns a fresh
/// instance, so workers never share mutable adapter state.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Registry {
    entries: BTreeMap<String, AdapterSpec>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, spec: AdapterSpec) {
        self.entries.insert(name.into(), spec);
    }

    pub fn get(&self, name: &str) -> Result<&AdapterSpec> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown adapter `{name}`")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    fn expect(&self, name: &str, kind: AdapterKind) -> Result<&AdapterSpec> {
        let spec = self.get(name)?;
        if spec.kind != kind {
            return Err(Error::Config(format!(
                "adapter `{name}` is a {} but a {kind} is required",
                spec.kind
            )));
        }
        Ok(spec)
    }

    pub fn build_iqa(&self, name: &str) -> Result<Box<dyn LayeredImageMetric>> {
        let spec = self.expect(name, AdapterKind::ToyIqa)?;
        Ok(Box::new(ToyIqa::new(name, spec.weights()?)))
    }

    pub fn build_vqa(&self, name: &str) -> Result<Box<dyn VideoQualityMetric>> {
        let spec = self.expect(name, AdapterKind::ToyVqa)?;
        Ok(Box::new(ToyVqa::new(name, spec.weights()?)))
    }

    pub fn build_embedder(&self, name: &str) -> Result<Box<dyn EmbeddingModel>> {
        let spec = self.expect(name, AdapterKind::ToyEmbed)?;
        Ok(Box::new(ToyEmbedder::new(name, spec.weights()?)))
    }
}
