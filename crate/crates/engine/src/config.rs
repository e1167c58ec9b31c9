//! Service configuration: one JSON file, overridden by `GUARDQA_*`
//! environment variables (env > file > defaults).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use guardqa_core::generation::{PromptTemplate, RetryPolicy, DEFAULT_CONTEXT_PASSAGES, DEFAULT_ICL_EXAMPLES};
use guardqa_core::guardrails::{EnforcementTemplates, DEFAULT_GROUNDING_THRESHOLD, DEFAULT_TOPIC_THRESHOLD};
use guardqa_core::provider::DEFAULT_DIMENSION;
use guardqa_core::retrieval::relevance::DEFAULT_THRESHOLD;
use guardqa_core::retrieval::HybridConfig;
use serde::{Deserialize, Serialize};

use crate::langbridge::LanguageRoute;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("invalid value for {key}: {message}")]
    Invalid { key: String, message: String },
    #[error("{key} refers to missing path {path}")]
    MissingPath { key: String, path: PathBuf },
}

/// Where a provider lives. `id = "mock"` selects the offline implementation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub id: String,
    pub url: Option<String>,
    pub model: Option<String>,
    /// Name of the environment variable holding the API key.
    pub key_env: Option<String>,
    pub timeout_ms: u64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            id: "mock".into(),
            url: None,
            model: None,
            key_env: None,
            timeout_ms: 10_000,
        }
    }
}

impl ProviderConfig {
    pub fn is_mock(&self) -> bool {
        self.id == "mock"
    }

    pub fn disabled() -> Self {
        Self {
            id: "none".into(),
            ..Self::default()
        }
    }

    pub fn is_disabled(&self) -> bool {
        self.id == "none"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Providers {
    pub embedding: ProviderConfig,
    pub llm: ProviderConfig,
    pub asr: ProviderConfig,
    pub mt: ProviderConfig,
    pub tts: ProviderConfig,
    pub judge: ProviderConfig,
}

impl Default for Providers {
    fn default() -> Self {
        let llm = ProviderConfig {
            timeout_ms: 30_000,
            ..ProviderConfig::default()
        };
        Self {
            embedding: ProviderConfig::default(),
            llm: llm.clone(),
            asr: ProviderConfig::default(),
            mt: ProviderConfig::default(),
            tts: ProviderConfig::default(),
            judge: llm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AuthConfig {
    /// Accepted on `/v1/ask`. Unset disables auth for that tier.
    pub user_token: Option<String>,
    /// Moderation, import, and everything the user token allows.
    pub admin_token: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Limits {
    pub provider_permits: usize,
    pub eval_parallelism: usize,
    pub shutdown_deadline_ms: u64,
    pub max_body_bytes: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            provider_permits: 8,
            eval_parallelism: 4,
            shutdown_deadline_ms: 10_000,
            max_body_bytes: 16 * 1024 * 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub temperature: f64,
    pub max_tokens: u32,
    pub icl_examples: usize,
    pub context_passages: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            temperature: guardqa_core::generation::DEFAULT_TEMPERATURE,
            max_tokens: guardqa_core::generation::DEFAULT_MAX_TOKENS,
            icl_examples: DEFAULT_ICL_EXAMPLES,
            context_passages: DEFAULT_CONTEXT_PASSAGES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub listen: String,
    pub store_dir: PathBuf,
    /// JSON list of rail rules; built-in rules when unset.
    pub rules_path: Option<PathBuf>,
    /// JSON `PiiRules`; built-in rules when unset.
    pub pii_rules_path: Option<PathBuf>,
    /// Word-per-line file of extra names for the PII lexicon.
    pub name_lexicon_path: Option<PathBuf>,
    /// Word-per-line file of extra places for the gazetteer.
    pub gazetteer_path: Option<PathBuf>,
    /// JSON map of fixture audio uri to transcript, for the mock ASR.
    pub asr_fixtures_path: Option<PathBuf>,
    pub providers: Providers,
    pub tau: f64,
    pub topic_threshold: f64,
    pub grounding_threshold: f64,
    pub route: LanguageRoute,
    pub auth: AuthConfig,
    pub limits: Limits,
    pub retrieval: HybridConfig,
    pub embedding_dimension: usize,
    pub generation: GenerationConfig,
    pub retry: RetryPolicy,
    pub prompt: PromptTemplate,
    pub templates: EnforcementTemplates,
    /// Term to forced translation, applied around the MT provider.
    pub glossary: BTreeMap<String, String>,
    /// Write a compacted snapshot after this many events.
    pub snapshot_every: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8080".into(),
            store_dir: PathBuf::from("data/store"),
            rules_path: None,
            pii_rules_path: None,
            name_lexicon_path: None,
            gazetteer_path: None,
            asr_fixtures_path: None,
            providers: Providers::default(),
            tau: DEFAULT_THRESHOLD,
            topic_threshold: DEFAULT_TOPIC_THRESHOLD,
            grounding_threshold: DEFAULT_GROUNDING_THRESHOLD,
            route: LanguageRoute::default(),
            auth: AuthConfig::default(),
            limits: Limits::default(),
            retrieval: HybridConfig::default(),
            embedding_dimension: DEFAULT_DIMENSION,
            generation: GenerationConfig::default(),
            retry: RetryPolicy::default(),
            prompt: PromptTemplate::default(),
            templates: EnforcementTemplates::default(),
            glossary: BTreeMap::new(),
            snapshot_every: 1000,
        }
    }
}

pub const ENV_PREFIX: &str = "GUARDQA_";

impl ServiceConfig {
    /// Defaults, then the file if given, then the process environment.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let vars: Vec<(String, String)> = std::env::vars().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
        Self::load_with_env(path, vars)
    }

    pub fn load_with_env(
        path: Option<&Path>,
        env: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self, ConfigError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
                    path: p.to_path_buf(),
                    source,
                })?;
                let mut cfg: ServiceConfig = serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
                    path: p.to_path_buf(),
                    source,
                })?;
                cfg.resolve_relative(p.parent().unwrap_or(Path::new(".")));
                cfg
            }
            None => ServiceConfig::default(),
        };
        for (k, v) in env {
            cfg.apply_env(&k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.store_dir);
        for p in [
            &mut self.rules_path,
            &mut self.pii_rules_path,
            &mut self.name_lexicon_path,
            &mut self.gazetteer_path,
            &mut self.asr_fixtures_path,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    fn apply_env(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let Some(name) = key.strip_prefix(ENV_PREFIX) else {
            return Ok(());
        };
        let num = |v: &str| -> Result<f64, ConfigError> {
            v.parse().map_err(|_| ConfigError::Invalid {
                key: key.into(),
                message: format!("not a number: {v}"),
            })
        };
        match name {
            "LISTEN" => self.listen = value.into(),
            "STORE_DIR" => self.store_dir = value.into(),
            "RULES_PATH" => self.rules_path = Some(value.into()),
            "ASR_FIXTURES_PATH" => self.asr_fixtures_path = Some(value.into()),
            "TAU" => self.tau = num(value)?,
            "TOPIC_THRESHOLD" => self.topic_threshold = num(value)?,
            "GROUNDING_THRESHOLD" => self.grounding_threshold = num(value)?,
            "ROUTE_MODE" => {
                self.route.mode = serde_json::from_value(serde_json::Value::String(value.to_ascii_lowercase()))
                    .map_err(|_| ConfigError::Invalid {
                        key: key.into(),
                        message: format!("unknown route mode {value}"),
                    })?
            }
            "SOURCE_LANG" => self.route.source_lang = value.into(),
            "PIPELINE_LANG" => self.route.pipeline_lang = value.into(),
            "OUTPUT_LANG" => self.route.output_lang = value.into(),
            "USER_TOKEN" => self.auth.user_token = Some(value.into()),
            "ADMIN_TOKEN" => self.auth.admin_token = Some(value.into()),
            "PROVIDER_PERMITS" => self.limits.provider_permits = num(value)? as usize,
            _ => {
                // GUARDQA_<PROVIDER>_<FIELD>, e.g. GUARDQA_LLM_URL
                let Some((prov, field)) = name.split_once('_') else {
                    return Ok(());
                };
                let p = match prov {
                    "EMBEDDING" => &mut self.providers.embedding,
                    "LLM" => &mut self.providers.llm,
                    "ASR" => &mut self.providers.asr,
                    "MT" => &mut self.providers.mt,
                    "TTS" => &mut self.providers.tts,
                    "JUDGE" => &mut self.providers.judge,
                    _ => return Ok(()),
                };
                match field {
                    "ID" => p.id = value.into(),
                    "URL" => p.url = Some(value.into()),
                    "MODEL" => p.model = Some(value.into()),
                    "KEY_ENV" => p.key_env = Some(value.into()),
                    "TIMEOUT_MS" => p.timeout_ms = num(value)? as u64,
                    _ => {}
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (key, v) in [
            ("tau", self.tau),
            ("topic_threshold", self.topic_threshold),
            ("grounding_threshold", self.grounding_threshold),
            ("retrieval.rerank_weight", self.retrieval.rerank_weight),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ConfigError::Invalid {
                    key: key.into(),
                    message: format!("{v} is outside [0, 1]"),
                });
            }
        }
        if self.embedding_dimension == 0 {
            return Err(ConfigError::Invalid {
                key: "embedding_dimension".into(),
                message: "must be positive".into(),
            });
        }
        if self.limits.provider_permits == 0 {
            return Err(ConfigError::Invalid {
                key: "limits.provider_permits".into(),
                message: "must be positive".into(),
            });
        }
        self.route.validate().map_err(|message| ConfigError::Invalid {
            key: "route".into(),
            message,
        })?;
        for (key, path) in [
            ("rules_path", &self.rules_path),
            ("pii_rules_path", &self.pii_rules_path),
            ("name_lexicon_path", &self.name_lexicon_path),
            ("gazetteer_path", &self.gazetteer_path),
            ("asr_fixtures_path", &self.asr_fixtures_path),
        ] {
            if let Some(p) = path {
                if !p.exists() {
                    return Err(ConfigError::MissingPath {
                        key: key.into(),
                        path: p.clone(),
                    });
                }
            }
        }
        for (name, p) in [
            ("embedding", &self.providers.embedding),
            ("llm", &self.providers.llm),
            ("asr", &self.providers.asr),
            ("mt", &self.providers.mt),
            ("tts", &self.providers.tts),
            ("judge", &self.providers.judge),
        ] {
            if !p.is_mock() && !p.is_disabled() && p.url.is_none() {
                return Err(ConfigError::Invalid {
                    key: format!("providers.{name}.url"),
                    message: format!("provider {} needs a url", p.id),
                });
            }
        }
        Ok(())
    }
}
