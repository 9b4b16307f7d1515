//! Run configuration: TOML file plus CLI overrides, a semantic digest that
//! names the run, and gateway construction from the per-role endpoint table.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineError;
use crate::dataset::DatasetKind;
use crate::eval::OptionOrder;
use crate::evidence::EvidenceStyle;
use crate::gateway::http::{HttpChatBackend, HttpEntailmentBackend};
use crate::gateway::mock::{HeuristicEntailer, SeededChatMock};
use crate::gateway::{Gateway, ModelRole};

pub const ROLE_NAMES: [&str; 4] = ["generator", "evaluee", "judge", "entailer"];

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct RoleConfig {
    /// Use the seeded offline mock instead of a live endpoint.
    #[serde(default)]
    pub mock: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    /// Environment variable holding the bearer token. When unset, the
    /// role-specific `CREDENCE_<ROLE>_TOKEN` variable is used if present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_env: Option<String>,
}

impl RoleConfig {
    pub fn mocked() -> Self {
        RoleConfig {
            mock: true,
            ..RoleConfig::default()
        }
    }
}

fn default_n() -> usize {
    7
}
fn default_max_regen() -> u32 {
    5
}
fn default_parallelism() -> usize {
    4
}
fn default_seed() -> u64 {
    7
}
fn default_styles() -> Vec<EvidenceStyle> {
    EvidenceStyle::all()
}
fn default_orders() -> Vec<OptionOrder> {
    vec![OptionOrder::MaFirst, OptionOrder::CmaFirst]
}
fn default_out() -> PathBuf {
    PathBuf::from("run-out")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub kind: DatasetKind,
    /// Paraphrases per question for the consistency measurement.
    #[serde(default = "default_n")]
    pub n: usize,
    /// Regeneration budget for a paraphrase slot that keeps failing its gate.
    #[serde(default = "default_max_regen")]
    pub max_regen: u32,
    #[serde(default = "default_styles")]
    pub styles: Vec<EvidenceStyle>,
    #[serde(default = "default_orders")]
    pub orders: Vec<OptionOrder>,
    /// Worker bound for per-question parallelism.
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    /// Call-cache file shared across runs; unset disables caching.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache: Option<PathBuf>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Seed for the offline mock backends.
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub roles: BTreeMap<String, RoleConfig>,
}

impl RunConfig {
    /// Offline configuration with every role mocked; the common test setup.
    pub fn mocked(dataset: &Path, kind: DatasetKind, out: &Path) -> Self {
        let roles = ROLE_NAMES
            .iter()
            .map(|r| (r.to_string(), RoleConfig::mocked()))
            .collect();
        RunConfig {
            dataset: dataset.to_path_buf(),
            kind,
            n: default_n(),
            max_regen: default_max_regen(),
            styles: default_styles(),
            orders: default_orders(),
            parallelism: default_parallelism(),
            cache: None,
            out: out.to_path_buf(),
            seed: default_seed(),
            roles,
        }
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let raw = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let cfg: RunConfig = toml::from_str(&raw)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.n < 2 {
            return Err(PipelineError::Config(format!(
                "n = {} cannot measure consistency; need at least 2 paraphrases",
                self.n
            )));
        }
        if self.max_regen < 1 {
            return Err(PipelineError::Config("max_regen must be at least 1".into()));
        }
        if self.styles.is_empty() {
            return Err(PipelineError::Config("styles list is empty".into()));
        }
        if self.orders.is_empty() {
            return Err(PipelineError::Config("orders list is empty".into()));
        }
        for role in self.roles.keys() {
            if !ROLE_NAMES.contains(&role.as_str()) {
                return Err(PipelineError::Config(format!(
                    "unknown role {role:?}; roles are {ROLE_NAMES:?}"
                )));
            }
        }
        Ok(())
    }

    /// Digest over the fields that change what the run computes. Where
    /// outputs land, how parallel the run is, and where calls are cached do
    /// not affect results and are excluded.
    pub fn digest(&self) -> String {
        #[derive(Serialize)]
        struct Semantic<'a> {
            dataset: String,
            kind: DatasetKind,
            n: usize,
            max_regen: u32,
            styles: &'a [EvidenceStyle],
            orders: &'a [OptionOrder],
            seed: u64,
            roles: &'a BTreeMap<String, RoleConfig>,
        }
        let view = Semantic {
            dataset: self.dataset.display().to_string(),
            kind: self.kind,
            n: self.n,
            max_regen: self.max_regen,
            styles: &self.styles,
            orders: &self.orders,
            seed: self.seed,
            roles: &self.roles,
        };
        let json = serde_json::to_string(&view).expect("config digest serialization");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn run_id(&self) -> String {
        self.digest()[..12].to_string()
    }

    /// Label for the report `model` column, taken from the evaluee role.
    pub fn model_label(&self) -> String {
        match self.roles.get("evaluee") {
            Some(rc) if rc.mock => format!("seeded-mock:{}", self.seed),
            Some(rc) => rc
                .model
                .clone()
                .or_else(|| rc.endpoint.clone())
                .unwrap_or_else(|| "unconfigured".into()),
            None => "unconfigured".into(),
        }
    }
}

fn resolve_token(role: &str, rc: &RoleConfig) -> Result<Option<String>, PipelineError> {
    if let Some(var) = &rc.token_env {
        return match std::env::var(var) {
            Ok(v) => Ok(Some(v)),
            Err(_) => Err(PipelineError::Config(format!(
                "role {role} names token_env {var}, but that variable is not set"
            ))),
        };
    }
    let fallback = format!("CREDENCE_{}_TOKEN", role.to_uppercase());
    Ok(std::env::var(fallback).ok())
}

/// Wires the configured backends into a gateway. Roles left unconfigured are
/// simply absent; a stage that needs one fails with a missing-role error at
/// call time.
pub fn build_gateway(cfg: &RunConfig) -> Result<Gateway, PipelineError> {
    let mut builder = Gateway::builder();
    for role in [ModelRole::Generator, ModelRole::Evaluee, ModelRole::Judge] {
        let Some(rc) = cfg.roles.get(role.as_str()) else {
            continue;
        };
        if rc.mock {
            builder = builder.chat(role, Arc::new(SeededChatMock::new(cfg.seed)));
            continue;
        }
        let endpoint = rc.endpoint.as_deref().ok_or_else(|| {
            PipelineError::Config(format!(
                "role {role} needs endpoint = \"...\" or mock = true"
            ))
        })?;
        let token = resolve_token(role.as_str(), rc)?;
        let backend =
            HttpChatBackend::new(endpoint, rc.model.as_deref().unwrap_or("default"), token)
                .map_err(|e| PipelineError::Config(format!("role {role}: {e}")))?;
        builder = builder.chat(role, Arc::new(backend));
    }
    if let Some(rc) = cfg.roles.get("entailer") {
        if rc.mock {
            builder = builder.entailer(Arc::new(HeuristicEntailer), cfg.parallelism);
        } else {
            let endpoint = rc.endpoint.as_deref().ok_or_else(|| {
                PipelineError::Config(
                    "role entailer needs endpoint = \"...\" or mock = true".into(),
                )
            })?;
            let token = resolve_token("entailer", rc)?;
            let backend = HttpEntailmentBackend::new(endpoint, token)
                .map_err(|e| PipelineError::Config(format!("role entailer: {e}")))?;
            builder = builder.entailer(Arc::new(backend), cfg.parallelism);
        }
    }
    if let Some(cache) = &cfg.cache {
        if let Some(parent) = cache.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| PipelineError::io(parent, e))?;
            }
        }
        builder = builder.cache_path(cache)?;
    }
    Ok(builder.build())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(dir: &Path) -> RunConfig {
        RunConfig::mocked(&dir.join("data.jsonl"), DatasetKind::Nq, &dir.join("out"))
    }

    #[test]
    fn digest_tracks_semantic_fields_only() {
        let dir = tempfile::tempdir().unwrap();
        let base = sample(dir.path());
        let mut cosmetic = base.clone();
        cosmetic.parallelism = 99;
        cosmetic.out = dir.path().join("elsewhere");
        cosmetic.cache = Some(dir.path().join("cache.jsonl"));
        assert_eq!(base.digest(), cosmetic.digest());

        let mut semantic = base.clone();
        semantic.n = 5;
        assert_ne!(base.digest(), semantic.digest());
        let mut reseeded = base.clone();
        reseeded.seed = 8;
        assert_ne!(base.digest(), reseeded.digest());
        assert_eq!(base.run_id().len(), 12);
    }

    #[test]
    fn toml_round_trip_with_role_sections() {
        let raw = r#"
            dataset = "data/nq.jsonl"
            kind = "nq"
            n = 5
            styles = ["direct:1", "indirect:2"]
            orders = ["ma-first"]

            [roles.generator]
            mock = true

            [roles.evaluee]
            endpoint = "http://localhost:9000"
            model = "local-7b"
        "#;
        let cfg: RunConfig = toml::from_str(raw).unwrap();
        assert_eq!(cfg.n, 5);
        assert_eq!(cfg.max_regen, 5, "default applies");
        assert_eq!(cfg.styles.len(), 2);
        assert_eq!(cfg.orders, vec![OptionOrder::MaFirst]);
        assert!(cfg.roles["generator"].mock);
        assert_eq!(cfg.roles["evaluee"].model.as_deref(), Some("local-7b"));
        assert_eq!(cfg.model_label(), "local-7b");
        cfg.validate().unwrap();
    }

    #[test]
    fn validation_rejects_bad_knobs() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = sample(dir.path());
        cfg.n = 1;
        assert!(cfg.validate().is_err());

        let mut cfg = sample(dir.path());
        cfg.roles.insert("narrator".into(), RoleConfig::mocked());
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("narrator"));

        let mut cfg = sample(dir.path());
        cfg.styles.clear();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn live_role_without_endpoint_fails_fast() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = sample(dir.path());
        cfg.roles.insert("evaluee".into(), RoleConfig::default());
        let Err(err) = build_gateway(&cfg) else {
            panic!("expected a missing-endpoint error");
        };
        assert!(err.to_string().contains("evaluee"), "got {err}");

        let mut cfg = sample(dir.path());
        cfg.roles.insert(
            "judge".into(),
            RoleConfig {
                mock: false,
                endpoint: Some("http://localhost:1".into()),
                model: None,
                token_env: Some("CREDENCE_TEST_TOKEN_THAT_DOES_NOT_EXIST".into()),
            },
        );
        let Err(err) = build_gateway(&cfg) else {
            panic!("expected a missing-token error");
        };
        assert!(err.to_string().contains("token_env"), "got {err}");
    }
}
