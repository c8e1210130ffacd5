//! Declarative application configuration, loaded from one TOML file.
//!
//! API keys are never stored here; only the names of the environment
//! variables that hold them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, Context};
use serde::{Deserialize, Serialize};
use svoa_core::embedding::EmbedOptions;
use svoa_core::extraction::{ExtractionConfig, ExtractionMode};
use svoa_core::retrieval::{Aggregation, ScoringConfig, FULL_COMBINATION};
use svoa_core::ComponentKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChatProvider {
    /// Any endpoint speaking the OpenAI chat-completions protocol.
    #[default]
    Openai,
    /// The rule-based offline backend.
    Mock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingProvider {
    /// Any endpoint speaking the OpenAI embeddings protocol.
    #[default]
    Openai,
    /// Feature-hashed bag of words; offline and deterministic.
    Hashed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChatSection {
    pub provider: ChatProvider,
    pub base_url: String,
    pub api_key_env: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_secs: u64,
    /// Attempts per request on transport errors, 429 and 5xx.
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
}

impl Default for ChatSection {
    fn default() -> Self {
        Self {
            provider: ChatProvider::Openai,
            base_url: "https://api.openai.com/v1".to_owned(),
            api_key_env: "OPENAI_API_KEY".to_owned(),
            model: "gpt-3.5-turbo".to_owned(),
            temperature: 0.0,
            max_tokens: 1024,
            timeout_secs: 60,
            max_attempts: 3,
            initial_backoff_ms: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingSection {
    pub provider: EmbeddingProvider,
    pub base_url: String,
    pub api_key_env: String,
    pub model_id: String,
    pub dimension: usize,
    pub instruction_prefix: String,
    pub batch_size: usize,
    pub timeout_secs: u64,
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        Self {
            provider: EmbeddingProvider::Openai,
            base_url: "https://api.openai.com/v1".to_owned(),
            api_key_env: "OPENAI_API_KEY".to_owned(),
            model_id: "text-embedding-3-large".to_owned(),
            dimension: 3072,
            instruction_prefix: String::new(),
            batch_size: 64,
            timeout_secs: 60,
            max_attempts: 3,
            initial_backoff_ms: 200,
        }
    }
}

impl EmbeddingSection {
    pub fn embed_options(&self) -> EmbedOptions {
        EmbedOptions {
            batch_size: self.batch_size,
            instruction_prefix: self.instruction_prefix.clone(),
            max_attempts: self.max_attempts,
            initial_backoff: Duration::from_millis(self.initial_backoff_ms),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractionSection {
    pub context_k: usize,
    pub mode: ExtractionMode,
    pub max_parse_retries: u32,
}

impl Default for ExtractionSection {
    fn default() -> Self {
        let d = ExtractionConfig::default();
        Self {
            context_k: d.context_window_k,
            mode: d.mode,
            max_parse_retries: d.max_parse_retries,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringSection {
    pub combination: String,
    /// Per-kind weights keyed by `conversation`, `message`, `sv`, `svo` or
    /// `svoa`; unlisted kinds weigh 1.
    pub weights: BTreeMap<String, f64>,
    pub bm25_weight: f64,
    pub aggregation: String,
    pub top_k: usize,
}

impl Default for ScoringSection {
    fn default() -> Self {
        Self {
            combination: FULL_COMBINATION.to_owned(),
            weights: BTreeMap::new(),
            bm25_weight: 0.0,
            aggregation: "max".to_owned(),
            top_k: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub index: Option<PathBuf>,
    /// Persistent embedding cache; in-memory when unset.
    pub cache: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerSection {
    /// Upper bound on concurrent query-embedding calls.
    pub max_concurrent_embeddings: usize,
    /// Rewrite the index file after `/indices/remove`.
    pub persist_removals: bool,
}

impl Default for ServerSection {
    fn default() -> Self {
        Self {
            max_concurrent_embeddings: 4,
            persist_removals: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub chat: ChatSection,
    pub embedding: EmbeddingSection,
    pub extraction: ExtractionSection,
    pub scoring: ScoringSection,
    pub paths: PathsSection,
    pub server: ServerSection,
}

impl AppConfig {
    pub fn load(path: impl AsRef<Path>) -> anyhow::Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Offline setup: rule-based extraction and hashed embeddings.
    pub fn offline(dimension: usize) -> Self {
        let mut cfg = Self::default();
        cfg.chat.provider = ChatProvider::Mock;
        cfg.embedding.provider = EmbeddingProvider::Hashed;
        cfg.embedding.dimension = dimension;
        cfg
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.embedding.batch_size == 0 {
            return Err(anyhow!("embedding.batch_size must be positive"));
        }
        if self.embedding.dimension < 2 {
            return Err(anyhow!("embedding.dimension must be at least 2"));
        }
        if self.server.max_concurrent_embeddings == 0 {
            return Err(anyhow!("server.max_concurrent_embeddings must be positive"));
        }
        if self.scoring.top_k == 0 {
            return Err(anyhow!("scoring.top_k must be positive"));
        }
        self.scoring_config(None, None)?;
        Ok(())
    }

    pub fn extraction_config(&self) -> ExtractionConfig {
        ExtractionConfig {
            context_window_k: self.extraction.context_k,
            temperature: self.chat.temperature,
            max_tokens: self.chat.max_tokens,
            max_parse_retries: self.extraction.max_parse_retries,
            mode: self.extraction.mode,
        }
    }

    /// Scoring settings with optional overrides of the combination and the
    /// BM25 weight. Configured weights apply to whichever kinds are active.
    pub fn scoring_config(&self, combination: Option<&str>, bm25_weight: Option<f64>) -> anyhow::Result<ScoringConfig> {
        let name = combination.unwrap_or(&self.scoring.combination);
        let aggregation: Aggregation = self.scoring.aggregation.parse().map_err(|e: String| anyhow!(e))?;
        let cfg = ScoringConfig::from_combination(name)?
            .with_weights(&parse_weights(&self.scoring.weights)?)
            .with_bm25_weight(bm25_weight.unwrap_or(self.scoring.bm25_weight))
            .with_aggregation(aggregation);
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses `kind -> weight` pairs with string keys.
pub fn parse_weights(raw: &BTreeMap<String, f64>) -> anyhow::Result<BTreeMap<ComponentKind, f64>> {
    raw.iter()
        .map(|(k, w)| {
            let kind: ComponentKind = k.parse().map_err(|e: String| anyhow!(e))?;
            Ok((kind, *w))
        })
        .collect()
}
