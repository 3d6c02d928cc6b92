//! Configuration resolution: flags win over `SAAP_*` environment variables,
//! which win over the TOML file.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use saap_core::gateway::{BindingKind, ProviderBinding, StubScript};
use saap_core::SchemaConfig;
use serde::Deserialize;

pub const DEFAULT_CONFIG_FILE: &str = "saap.toml";
pub const DEFAULT_STORE_PATH: &str = "saap-store.jsonl";
pub const DEFAULT_LISTEN: &str = "127.0.0.1:8080";
pub const DEFAULT_WORKERS: usize = 4;

/// Flags shared by every command.
#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// Config file (TOML). Defaults to ./saap.toml when present.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub store: Option<PathBuf>,
    /// `stub` or `hosted`.
    #[arg(long, global = true)]
    pub provider: Option<String>,
    /// Chat-completions URL for the hosted provider.
    #[arg(long, global = true)]
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the API key.
    #[arg(long, global = true)]
    pub credentials_ref: Option<String>,
    #[arg(long, global = true)]
    pub model: Option<String>,
    /// JSON stub script for the offline provider.
    #[arg(long, global = true)]
    pub stub_script: Option<PathBuf>,
    #[arg(long, global = true)]
    pub schema_version: Option<String>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileProvider {
    pub kind: Option<String>,
    pub endpoint: Option<String>,
    pub credentials_ref: Option<String>,
    pub model: Option<String>,
    pub stub_script: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub store_path: Option<PathBuf>,
    pub schema_version: Option<String>,
    pub listen: Option<String>,
    pub workers: Option<usize>,
    #[serde(default)]
    pub provider: FileProvider,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: FileConfig = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        // script paths are relative to the config file
        if let (Some(script), Some(dir)) = (&cfg.provider.stub_script, path.parent()) {
            if script.is_relative() {
                cfg.provider.stub_script = Some(dir.join(script));
            }
        }
        Ok(cfg)
    }
}

/// Fully resolved settings.
#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    pub store_path: PathBuf,
    pub provider_kind: BindingKind,
    pub endpoint: Option<String>,
    pub credentials_ref: Option<String>,
    pub model: Option<String>,
    pub stub_script: Option<PathBuf>,
    pub schema_version: String,
    pub listen: SocketAddr,
    pub workers: usize,
}

fn pick<T: Clone>(flag: Option<T>, env: Option<T>, file: Option<T>) -> Option<T> {
    flag.or(env).or(file)
}

fn parse_env<T: std::str::FromStr>(env: &HashMap<String, String>, key: &str) -> Result<Option<T>> {
    match env.get(key) {
        None => Ok(None),
        Some(raw) => match raw.parse() {
            Ok(v) => Ok(Some(v)),
            Err(_) => bail!("{key}={raw:?} is not valid"),
        },
    }
}

impl CliConfig {
    /// Reads the process environment and the config file, then resolves.
    pub fn from_process(flags: &GlobalArgs, listen_flag: Option<&str>) -> Result<Self> {
        let env: HashMap<String, String> = std::env::vars().filter(|(k, _)| k.starts_with("SAAP_")).collect();
        let path = flags
            .config
            .clone()
            .or_else(|| env.get("SAAP_CONFIG").map(PathBuf::from))
            .or_else(|| Some(PathBuf::from(DEFAULT_CONFIG_FILE)).filter(|p| p.exists()));
        let file = match path {
            Some(p) => FileConfig::load(&p)?,
            None => FileConfig::default(),
        };
        Self::resolve(flags, listen_flag, &env, file)
    }

    pub fn resolve(
        flags: &GlobalArgs,
        listen_flag: Option<&str>,
        env: &HashMap<String, String>,
        file: FileConfig,
    ) -> Result<Self> {
        let var = |k: &str| env.get(k).cloned();
        let kind = pick(flags.provider.clone(), var("SAAP_PROVIDER"), file.provider.kind)
            .unwrap_or_else(|| "stub".into());
        let provider_kind = match kind.as_str() {
            "stub" => BindingKind::Stub,
            "hosted" => BindingKind::Hosted,
            other => bail!("provider must be stub or hosted, got {other:?}"),
        };
        let listen_raw = pick(listen_flag.map(str::to_string), var("SAAP_LISTEN"), file.listen)
            .unwrap_or_else(|| DEFAULT_LISTEN.into());
        let listen: SocketAddr = listen_raw
            .parse()
            .with_context(|| format!("listen address {listen_raw:?} is not host:port"))?;
        let workers = pick(flags.workers, parse_env(env, "SAAP_WORKERS")?, file.workers).unwrap_or(DEFAULT_WORKERS);
        if workers == 0 {
            bail!("workers must be at least 1");
        }
        let schema_version = pick(flags.schema_version.clone(), var("SAAP_SCHEMA_VERSION"), file.schema_version)
            .unwrap_or_else(|| SchemaConfig::DEFAULT_VERSION.into());
        SchemaConfig::by_version(&schema_version)?;
        Ok(Self {
            store_path: pick(flags.store.clone(), var("SAAP_STORE_PATH").map(PathBuf::from), file.store_path)
                .unwrap_or_else(|| DEFAULT_STORE_PATH.into()),
            provider_kind,
            endpoint: pick(flags.endpoint.clone(), var("SAAP_ENDPOINT"), file.provider.endpoint),
            credentials_ref: pick(flags.credentials_ref.clone(), var("SAAP_CREDENTIALS_REF"), file.provider.credentials_ref),
            model: pick(flags.model.clone(), var("SAAP_MODEL"), file.provider.model),
            stub_script: pick(flags.stub_script.clone(), var("SAAP_STUB_SCRIPT").map(PathBuf::from), file.provider.stub_script),
            schema_version,
            listen,
            workers,
        })
    }

    pub fn binding(&self) -> Result<ProviderBinding> {
        let stub_script = match (self.provider_kind, &self.stub_script) {
            (BindingKind::Stub, Some(path)) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading stub script {}", path.display()))?;
                let script: StubScript = serde_json::from_str(&text)
                    .with_context(|| format!("parsing stub script {}", path.display()))?;
                Some(script)
            }
            (BindingKind::Stub, None) => Some(StubScript::default()),
            (BindingKind::Hosted, _) => None,
        };
        let binding = ProviderBinding {
            kind: self.provider_kind,
            endpoint: self.endpoint.clone(),
            credentials_ref: self.credentials_ref.clone(),
            model: self.model.clone(),
            stub_script,
        };
        binding.check()?;
        Ok(binding)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(pairs: &[(&str, &str)]) -> HashMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn defaults() {
        let c = CliConfig::resolve(&GlobalArgs::default(), None, &HashMap::new(), FileConfig::default()).unwrap();
        assert_eq!(c.store_path, PathBuf::from(DEFAULT_STORE_PATH));
        assert_eq!(c.provider_kind, BindingKind::Stub);
        assert_eq!(c.workers, DEFAULT_WORKERS);
        assert_eq!(c.listen.to_string(), DEFAULT_LISTEN);
        assert_eq!(c.schema_version, "core-v1");
    }

    #[test]
    fn flags_beat_env_beat_file() {
        let file: FileConfig = toml::from_str(
            "store_path = \"file.jsonl\"\nworkers = 2\nschema_version = \"wide63-v1\"\n[provider]\nmodel = \"file-model\"\n",
        )
        .unwrap();
        let e = env(&[("SAAP_WORKERS", "3"), ("SAAP_STORE_PATH", "env.jsonl")]);
        let flags = GlobalArgs {
            workers: Some(5),
            ..GlobalArgs::default()
        };
        let c = CliConfig::resolve(&flags, Some("0.0.0.0:9000"), &e, file.clone()).unwrap();
        assert_eq!(c.workers, 5);
        assert_eq!(c.store_path, PathBuf::from("env.jsonl"));
        assert_eq!(c.model.as_deref(), Some("file-model"));
        assert_eq!(c.schema_version, "wide63-v1");
        assert_eq!(c.listen.port(), 9000);

        let c = CliConfig::resolve(&GlobalArgs::default(), None, &e, file.clone()).unwrap();
        assert_eq!(c.workers, 3);
        let c = CliConfig::resolve(&GlobalArgs::default(), None, &HashMap::new(), file).unwrap();
        assert_eq!((c.workers, c.store_path), (2, PathBuf::from("file.jsonl")));
    }

    #[test]
    fn invalid_values_rejected() {
        let none = FileConfig::default;
        assert!(CliConfig::resolve(&GlobalArgs::default(), None, &env(&[("SAAP_WORKERS", "0")]), none()).is_err());
        assert!(CliConfig::resolve(&GlobalArgs::default(), None, &env(&[("SAAP_WORKERS", "x")]), none()).is_err());
        assert!(CliConfig::resolve(&GlobalArgs::default(), Some("nowhere"), &HashMap::new(), none()).is_err());
        let flags = GlobalArgs {
            provider: Some("local".into()),
            ..GlobalArgs::default()
        };
        assert!(CliConfig::resolve(&flags, None, &HashMap::new(), none()).is_err());
        assert!(toml::from_str::<FileConfig>("colour = \"red\"").is_err());
    }

    #[test]
    fn hosted_needs_endpoint_and_credentials() {
        let flags = GlobalArgs {
            provider: Some("hosted".into()),
            ..GlobalArgs::default()
        };
        let c = CliConfig::resolve(&flags, None, &HashMap::new(), FileConfig::default()).unwrap();
        assert!(c.binding().is_err());
        let e = env(&[("SAAP_ENDPOINT", "http://localhost:1/v1"), ("SAAP_CREDENTIALS_REF", "KEY")]);
        let c = CliConfig::resolve(&flags, None, &e, FileConfig::default()).unwrap();
        assert_eq!(c.binding().unwrap().kind, BindingKind::Hosted);
    }
}
