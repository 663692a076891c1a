//! Run configuration: defaults, then the TOML file, then flags.
//!
//! ```toml
//! corpus_path = "corpus"
//! sections_per_article = 5
//! seed = 7
//! output_dir = "out"
//!
//! [backend.default]
//! kind = "remote"
//! endpoint_url = "https://api.example.com/v1/chat/completions"
//!
//! [backend.splitter]
//! kind = "mock"
//! script_path = "splitter.jsonl"
//! ```
//!
//! Relative paths in the file resolve against the file's directory;
//! relative paths given as flags resolve against the working directory.

use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use craqan_core::persona::{default_prompts_dir, PersonaRole};
use craqan_core::rci::DEFAULT_MAX_ITERATIONS;
use craqan_core::{BackendConfig, PanelSpec, PersonaRegistry};

/// Backend per persona role. A role without its own entry uses `default`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Backends {
    pub default: Option<BackendConfig>,
    pub generator: Option<BackendConfig>,
    pub reviewer: Option<BackendConfig>,
    pub splitter: Option<BackendConfig>,
}

impl Backends {
    pub fn for_role(&self, role: PersonaRole) -> anyhow::Result<&BackendConfig> {
        let specific = match role {
            PersonaRole::Generator => &self.generator,
            PersonaRole::Reviewer => &self.reviewer,
            PersonaRole::Splitter => &self.splitter,
        };
        specific
            .as_ref()
            .or(self.default.as_ref())
            .with_context(|| format!("no backend configured for the {role:?} role; set [backend.default] or pass --mock-script"))
    }

    fn all_mut(&mut self) -> impl Iterator<Item = &mut BackendConfig> {
        [&mut self.default, &mut self.generator, &mut self.reviewer, &mut self.splitter]
            .into_iter()
            .flatten()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus_path: Option<PathBuf>,
    pub sections_per_article: usize,
    pub seed: u64,
    /// Defaults to `run-<seed>`.
    pub run_id: Option<String>,
    pub backend: Backends,
    /// Reviewer persona names; empty means every reviewer.
    pub panel: Vec<String>,
    pub prompts_dir: Option<PathBuf>,
    pub max_iterations: u32,
    pub parallelism: usize,
    pub output_dir: PathBuf,
    pub service_host: IpAddr,
    pub service_port: u16,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus_path: None,
            sections_per_article: 5,
            seed: 0,
            run_id: None,
            backend: Backends::default(),
            panel: Vec::new(),
            prompts_dir: None,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            parallelism: 4,
            output_dir: PathBuf::from("craqan-out"),
            service_host: IpAddr::V4(Ipv4Addr::LOCALHOST),
            service_port: 8080,
        }
    }
}

/// Values given on the command line. `None` leaves the file value alone.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub mock_script: Option<PathBuf>,
    pub corpus_path: Option<PathBuf>,
    pub sections_per_article: Option<usize>,
    pub run_id: Option<String>,
    pub parallelism: Option<usize>,
    pub max_iterations: Option<u32>,
    pub service_port: Option<u16>,
}

impl RunConfig {
    /// Reads `path` (or starts from defaults) and applies `overrides`.
    pub fn load(path: Option<&Path>, overrides: Overrides) -> anyhow::Result<Self> {
        let mut config = match path {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("cannot read config {}", path.display()))?;
                let mut config: RunConfig =
                    toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
                config.resolve_relative(path.parent().unwrap_or(Path::new(".")));
                config
            }
            None => RunConfig::default(),
        };
        config.apply(overrides);
        config.validate()?;
        Ok(config)
    }

    fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.corpus_path.iter_mut().for_each(fix);
        self.prompts_dir.iter_mut().for_each(fix);
        fix(&mut self.output_dir);
        for backend in self.backend.all_mut() {
            backend.script_path.iter_mut().for_each(fix);
        }
    }

    fn apply(&mut self, o: Overrides) {
        if let Some(v) = o.output_dir {
            self.output_dir = v;
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(script) = o.mock_script {
            // a mock script replaces every configured backend
            self.backend = Backends { default: Some(BackendConfig::mock(script)), ..Backends::default() };
        }
        if let Some(v) = o.corpus_path {
            self.corpus_path = Some(v);
        }
        if let Some(v) = o.sections_per_article {
            self.sections_per_article = v;
        }
        if let Some(v) = o.run_id {
            self.run_id = Some(v);
        }
        if let Some(v) = o.parallelism {
            self.parallelism = v;
        }
        if let Some(v) = o.max_iterations {
            self.max_iterations = v;
        }
        if let Some(v) = o.service_port {
            self.service_port = v;
        }
    }

    fn validate(&self) -> anyhow::Result<()> {
        if self.max_iterations < 1 {
            bail!("max_iterations must be at least 1");
        }
        if self.parallelism < 1 {
            bail!("parallelism must be at least 1");
        }
        if let Some(id) = &self.run_id {
            if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
                bail!("run_id {id:?} may contain only letters, digits, '-', '_' and '.'");
            }
        }
        Ok(())
    }

    pub fn run_id(&self) -> String {
        self.run_id.clone().unwrap_or_else(|| format!("run-{}", self.seed))
    }

    pub fn personas(&self) -> anyhow::Result<PersonaRegistry> {
        let dir = self.prompts_dir.clone().unwrap_or_else(default_prompts_dir);
        PersonaRegistry::load_dir(&dir).with_context(|| format!("cannot load personas from {}", dir.display()))
    }

    pub fn panel(&self, registry: &PersonaRegistry) -> anyhow::Result<PanelSpec> {
        let panel = if self.panel.is_empty() { registry.default_panel() } else { registry.panel(&self.panel) };
        panel.context("invalid panel")
    }

    pub fn service_addr(&self) -> SocketAddr {
        SocketAddr::new(self.service_host, self.service_port)
    }
}
