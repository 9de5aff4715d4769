//! Service configuration file and backend construction.
//!
//! ```toml
//! bind = "127.0.0.1:8080"
//! data_dir = "runs"
//! max_text_bytes = 1048576
//! z_threshold = 1.5
//!
//! [[backends]]
//! type = "replay"
//! path = "fixtures/replay"
//!
//! [[backends]]
//! type = "http"
//! id = "remote-lm"
//! url = "http://127.0.0.1:9000/score"
//! vocab = "vocab.json"
//! top_k = 20
//! ```
//!
//! Relative paths resolve against the directory holding the config file.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use mirror_core::backend::{
    Backend, BackendDescriptor, BackendError, HttpBackend, HttpConfig, LogBase, ReplayBackend, ScoredSequence,
    Tokenization, Vocab,
};
use mirror_core::expectancy::DEFAULT_Z_THRESHOLD;
use mirror_core::{TokenId, TokenSpan};
use serde::Deserialize;
use thiserror::Error;

/// Environment variable naming the config file when no flag is given.
pub const CONFIG_ENV: &str = "MIRROR_CONFIG";

pub const DEFAULT_BIND: &str = "127.0.0.1:8080";
pub const DEFAULT_MAX_TEXT_BYTES: usize = 1 << 20;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: field `{field}`: {message}")]
    Invalid {
        path: PathBuf,
        field: String,
        message: String,
    },
    #[error("backend `{id}`: {source}")]
    Backend { id: String, source: BackendError },
    #[error("no config file: pass --config or set {CONFIG_ENV}")]
    Missing,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default = "default_bind")]
    bind: String,
    data_dir: PathBuf,
    #[serde(default = "default_max_text_bytes")]
    max_text_bytes: usize,
    #[serde(default = "default_z_threshold")]
    z_threshold: f64,
    #[serde(default)]
    backends: Vec<BackendConfig>,
}

fn default_bind() -> String {
    DEFAULT_BIND.to_string()
}

fn default_max_text_bytes() -> usize {
    DEFAULT_MAX_TEXT_BYTES
}

fn default_z_threshold() -> f64 {
    DEFAULT_Z_THRESHOLD
}

fn default_top_k() -> usize {
    20
}

fn default_timeout() -> u64 {
    60
}

fn default_max_context() -> usize {
    2048
}

/// One configured backend.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum BackendConfig {
    /// Recorded fixtures: a `.jsonl` file or a directory of them.
    Replay {
        /// Defaults to the `backend_id` recorded in the fixture.
        id: Option<String>,
        path: PathBuf,
    },
    /// Remote top-k scoring endpoint.
    Http {
        id: String,
        url: String,
        /// JSON array of token strings indexed by id.
        vocab: PathBuf,
        #[serde(default = "default_top_k")]
        top_k: usize,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
        #[serde(default)]
        log_base: LogBase,
        bos_id: Option<TokenId>,
        #[serde(default = "default_max_context")]
        max_context: usize,
        /// Header sent with every request, its value read from `auth_env`.
        auth_header: Option<String>,
        auth_env: Option<String>,
    },
}

/// A validated configuration with paths made absolute.
#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub bind: String,
    pub data_dir: PathBuf,
    pub max_text_bytes: usize,
    pub z_threshold: f64,
    pub backends: Vec<BackendConfig>,
}

impl ServiceConfig {
    /// Reads the file at `path`, or at `$MIRROR_CONFIG` when `path` is `None`.
    pub fn locate(path: Option<&Path>) -> Result<Self, ConfigError> {
        match path {
            Some(p) => Self::load(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) => Self::load(Path::new(&p)),
                None => Err(ConfigError::Missing),
            },
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let raw = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&raw, path, base)
    }

    /// Parses config text; `origin` names it in diagnostics and `base`
    /// anchors relative paths.
    pub fn parse(raw: &str, origin: &Path, base: &Path) -> Result<Self, ConfigError> {
        let parsed: RawConfig = toml::from_str(raw).map_err(|e| {
            let (line, column) = e.span().map_or((0, 0), |s| line_column(raw, s.start));
            ConfigError::Parse {
                path: origin.to_path_buf(),
                line,
                column,
                message: e.message().to_string(),
            }
        })?;
        let invalid = |field: &str, message: &str| ConfigError::Invalid {
            path: origin.to_path_buf(),
            field: field.to_string(),
            message: message.to_string(),
        };
        if parsed.max_text_bytes == 0 {
            return Err(invalid("max_text_bytes", "must be positive"));
        }
        if !parsed.z_threshold.is_finite() {
            return Err(invalid("z_threshold", "must be finite"));
        }
        if parsed.bind.parse::<std::net::SocketAddr>().is_err() {
            return Err(invalid("bind", "expected an address like 127.0.0.1:8080"));
        }
        let backends = parsed
            .backends
            .into_iter()
            .enumerate()
            .map(|(i, b)| match b {
                BackendConfig::Replay { id, path } => Ok(BackendConfig::Replay {
                    id,
                    path: base.join(path),
                }),
                BackendConfig::Http {
                    id,
                    url,
                    vocab,
                    top_k,
                    timeout_secs,
                    log_base,
                    bos_id,
                    max_context,
                    auth_header,
                    auth_env,
                } => {
                    if top_k == 0 {
                        return Err(invalid(&format!("backends[{i}].top_k"), "must be at least 1"));
                    }
                    if auth_header.is_some() != auth_env.is_some() {
                        return Err(invalid(
                            &format!("backends[{i}].auth_header"),
                            "auth_header and auth_env must be set together",
                        ));
                    }
                    Ok(BackendConfig::Http {
                        id,
                        url,
                        vocab: base.join(vocab),
                        top_k,
                        timeout_secs,
                        log_base,
                        bos_id,
                        max_context,
                        auth_header,
                        auth_env,
                    })
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            bind: parsed.bind,
            data_dir: base.join(parsed.data_dir),
            max_text_bytes: parsed.max_text_bytes,
            z_threshold: parsed.z_threshold,
            backends,
        })
    }

    /// Instantiates every configured backend. Ids must be unique.
    pub fn build_backends(&self) -> Result<Vec<Arc<dyn Backend>>, ConfigError> {
        let mut out: Vec<Arc<dyn Backend>> = Vec::new();
        for b in &self.backends {
            let backend = build_backend(b)?;
            let id = &backend.descriptor().backend_id;
            if out.iter().any(|o| &o.descriptor().backend_id == id) {
                return Err(ConfigError::Backend {
                    id: id.clone(),
                    source: BackendError::Unavailable("duplicate backend id".into()),
                });
            }
            out.push(backend);
        }
        Ok(out)
    }
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

/// Builds one backend from its configuration.
pub fn build_backend(config: &BackendConfig) -> Result<Arc<dyn Backend>, ConfigError> {
    match config {
        BackendConfig::Replay { id, path } => {
            let wrap = |source| ConfigError::Backend {
                id: id.clone().unwrap_or_else(|| path.display().to_string()),
                source,
            };
            let replay = ReplayBackend::load(path).map_err(wrap)?;
            Ok(match id {
                Some(id) if *id != replay.descriptor().backend_id => Arc::new(Renamed::new(id, Arc::new(replay))),
                _ => Arc::new(replay),
            })
        }
        BackendConfig::Http {
            id,
            url,
            vocab,
            top_k,
            timeout_secs,
            log_base,
            bos_id,
            max_context,
            auth_header,
            auth_env,
        } => {
            let wrap = |source| ConfigError::Backend { id: id.clone(), source };
            let auth = match (auth_header, auth_env) {
                (Some(h), Some(env)) => {
                    let value = std::env::var(env)
                        .map_err(|_| wrap(BackendError::Unavailable(format!("environment variable {env} is not set"))))?;
                    Some((h.clone(), value))
                }
                _ => None,
            };
            let vocab = Vocab::load(vocab).map_err(wrap)?;
            let backend = HttpBackend::new(
                HttpConfig {
                    backend_id: id.clone(),
                    url: url.clone(),
                    top_k: *top_k,
                    timeout: Duration::from_secs(*timeout_secs),
                    auth_header: auth,
                    log_base: *log_base,
                    bos_id: *bos_id,
                    max_context: *max_context,
                },
                vocab,
            )
            .map_err(wrap)?;
            Ok(Arc::new(backend))
        }
    }
}

/// A backend exposed under a different id.
pub struct Renamed {
    descriptor: BackendDescriptor,
    inner: Arc<dyn Backend>,
}

impl Renamed {
    pub fn new(id: &str, inner: Arc<dyn Backend>) -> Self {
        let mut descriptor = inner.descriptor().clone();
        descriptor.backend_id = id.to_string();
        Self { descriptor, inner }
    }
}

impl Backend for Renamed {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn tokenize(&self, text: &str) -> Result<Tokenization, BackendError> {
        self.inner.tokenize(text)
    }

    fn score_sequence(&self, tokens: &[TokenSpan]) -> Result<ScoredSequence, BackendError> {
        self.inner.score_sequence(tokens)
    }

    fn greedy_continuation(&self, prefix: &[TokenId], n: usize) -> Result<Vec<TokenId>, BackendError> {
        self.inner.greedy_continuation(prefix, n)
    }

    fn token_text(&self, id: TokenId) -> Option<String> {
        self.inner.token_text(id)
    }
}
