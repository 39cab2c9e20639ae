//! TOML run configuration and the setup it drives.
//!
//! Relative paths are resolved against the config file's directory. Every
//! default is written out by [`RunConfig::resolve`] so `run.json` records
//! exactly what ran.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{connect_chat, connect_detector, connect_segmenter, BackendConfig, MockContext, MockSettings};
use crate::datasets::{ground_truth_store, load_manifest, Manifest};
use crate::evalstats::MethodInfo;
use crate::methods::{MethodKind, MethodSpec};
use crate::pipeline::{Backends, Pipeline};
use crate::prompting::TemplateRegistry;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
}

fn default_jobs() -> usize {
    4
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendsConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chat: Option<BackendConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detector: Option<BackendConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segmenter: Option<BackendConfig>,
    /// Automatic-mode segmenter; `segmenter` is used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auto: Option<BackendConfig>,
}

impl BackendsConfig {
    fn all_mut(&mut self) -> impl Iterator<Item = &mut BackendConfig> {
        [&mut self.chat, &mut self.detector, &mut self.segmenter, &mut self.auto]
            .into_iter()
            .flatten()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub ks: Vec<usize>,
    /// Label of the method to sweep; the first tv_sam method by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub output: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub templates_dir: Option<PathBuf>,
    #[serde(default)]
    pub prompt_cache: bool,
    #[serde(default)]
    pub dump_masks: bool,
    #[serde(default)]
    pub backends: BackendsConfig,
    #[serde(default)]
    pub mocks: MockSettings,
    pub methods: Vec<MethodSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

/// Command-line overrides applied before defaults are resolved.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
}

fn absolute(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Reads, resolves and validates a config file.
    pub fn load(path: &Path, overrides: Overrides) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let mut cfg = Self::from_toml(&text, path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.rebase(base);
        if let Some(seed) = overrides.seed {
            cfg.seed = seed;
        }
        if let Some(jobs) = overrides.jobs {
            cfg.jobs = jobs;
        }
        cfg.resolve();
        cfg.validate()?;
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        self.manifest = absolute(base, &self.manifest);
        self.output = absolute(base, &self.output);
        if let Some(t) = &self.templates_dir {
            self.templates_dir = Some(absolute(base, t));
        }
        if let Some(s) = &self.mocks.scripted_chat.script {
            self.mocks.scripted_chat.script = Some(absolute(base, s));
        }
    }

    /// Materializes defaults: method fields and per-backend seeds.
    pub fn resolve(&mut self) {
        let seed = self.seed;
        for b in self.backends.all_mut() {
            b.seed.get_or_insert(seed);
        }
        self.methods = self.methods.iter().map(MethodSpec::resolved).collect();
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.methods.is_empty() {
            return bad("at least one [[methods]] entry is required".into());
        }
        if self.jobs == 0 {
            return bad("jobs must be at least 1".into());
        }
        let mut labels = BTreeSet::new();
        for m in &self.methods {
            m.validate().map_err(ConfigError::Invalid)?;
            if !labels.insert(m.label()) {
                return bad(format!("duplicate method label '{}'", m.label()));
            }
            let needs: &[(&str, bool)] = match m.kind {
                MethodKind::TvSam => &[
                    ("chat", self.backends.chat.is_some()),
                    ("detector", self.backends.detector.is_some()),
                    ("segmenter", self.backends.segmenter.is_some()),
                ],
                MethodKind::Gsam => &[
                    ("detector", self.backends.detector.is_some()),
                    ("segmenter", self.backends.segmenter.is_some()),
                ],
                MethodKind::SamAuto => &[(
                    "auto or segmenter",
                    self.backends.auto.is_some() || self.backends.segmenter.is_some(),
                )],
                MethodKind::SamBbox => &[("segmenter", self.backends.segmenter.is_some())],
            };
            for (role, present) in needs {
                if !present {
                    return bad(format!("method '{}' needs a [backends.{role}] entry", m.label()));
                }
            }
        }
        if let Some(s) = &self.sweep {
            self.sweep_method(s.method.as_deref())?;
        }
        Ok(())
    }

    /// The method a sweep runs: by label, or the first tv_sam method.
    pub fn sweep_method(&self, label: Option<&str>) -> Result<&MethodSpec, ConfigError> {
        let found = match label {
            Some(l) => self.methods.iter().find(|m| m.label() == l),
            None => self.methods.iter().find(|m| m.kind == MethodKind::TvSam),
        };
        let m = found.ok_or_else(|| {
            ConfigError::Invalid(match label {
                Some(l) => format!("sweep method '{l}' is not configured"),
                None => "sweep needs a tv_sam method".into(),
            })
        })?;
        if !m.kind.uses_grounding() {
            return Err(ConfigError::Invalid(format!(
                "cannot sweep '{}': it uses no boxes from grounding",
                m.label()
            )));
        }
        Ok(m)
    }

    pub fn method_infos(&self) -> Vec<MethodInfo> {
        self.methods
            .iter()
            .map(|m| MethodInfo {
                label: m.label().to_string(),
                kind: m.kind,
                selection: m.selection,
            })
            .collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// Loads the manifest, builds mock ground truth, connects backends and
    /// checks template ids.
    pub fn prepare(&self) -> Result<Prepared, ConfigError> {
        let manifest = load_manifest(&self.manifest).map_err(|e| ConfigError::Invalid(format!("manifest: {e}")))?;
        let (store, unreadable) = ground_truth_store(&manifest);
        for (id, e) in &unreadable {
            tracing::warn!(sample = %id, "ground truth unavailable to mocks: {e}");
        }
        let ctx = MockContext {
            settings: self.mocks.clone(),
            ground_truth: Arc::new(store),
        };
        fn backend_err(role: &'static str) -> impl Fn(crate::backends::BackendError) -> ConfigError {
            move |e| ConfigError::Invalid(format!("backends.{role}: {e}"))
        }
        let b = &self.backends;
        let backends = Backends {
            chat: b
                .chat
                .as_ref()
                .map(|c| connect_chat(c, &ctx))
                .transpose()
                .map_err(backend_err("chat"))?,
            detector: b
                .detector
                .as_ref()
                .map(|c| connect_detector(c, &ctx))
                .transpose()
                .map_err(backend_err("detector"))?,
            segmenter: b
                .segmenter
                .as_ref()
                .map(|c| connect_segmenter(c, &ctx))
                .transpose()
                .map_err(backend_err("segmenter"))?,
            auto: b
                .auto
                .as_ref()
                .map(|c| connect_segmenter(c, &ctx))
                .transpose()
                .map_err(backend_err("auto"))?,
        };
        let templates = self.templates()?;
        Ok(Prepared {
            manifest,
            pipeline: Pipeline::new(backends, templates),
            mock_context: ctx,
        })
    }

    pub fn templates(&self) -> Result<TemplateRegistry, ConfigError> {
        let mut reg = TemplateRegistry::default();
        if let Some(dir) = &self.templates_dir {
            reg.load_dir(dir).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        for m in &self.methods {
            if let Some(id) = &m.dialog_template {
                if !reg.has_dialog(id) {
                    return Err(ConfigError::Invalid(format!(
                        "method '{}': unknown dialog template '{id}'",
                        m.label()
                    )));
                }
            }
            if let Some(id) = &m.prompt_template {
                if !reg.has_prompt(id) {
                    return Err(ConfigError::Invalid(format!(
                        "method '{}': unknown prompt template '{id}'",
                        m.label()
                    )));
                }
            }
        }
        Ok(reg)
    }
}

/// Everything a run needs after setup.
#[derive(Debug)]
pub struct Prepared {
    pub manifest: Manifest,
    pub pipeline: Pipeline,
    pub mock_context: MockContext,
}
