//! Run manifests: a JSON file naming the harness, the failing test and the
//! search settings. Relative paths resolve against the manifest's directory.
//!
//! ```json
//! {
//!   "harness": {"command": "./harness", "args": ["--fast"], "env": {"LANG": "C"}},
//!   "original": {"test_id": "t1", "oracle_id": "hex-parse", "args": ["0Xfade"]},
//!   "config": {"target_passing": 3, "rng_seed": 42},
//!   "suite": "suite.json",
//!   "disabled_mutators": ["text.transpose"]
//! }
//! ```
//!
//! `original` may also be a path to a JSON file holding the test spec.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use causa_core::model::{InputValue, SearchConfig, TestSpec};
use causa_core::{Error, MutatorCatalog, Result};
use serde::Deserialize;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarnessSpec {
    pub command: String,
    #[serde(default)]
    pub args: Vec<String>,
    #[serde(default)]
    pub env: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
enum OriginalSource {
    Inline(TestSpec),
    Path(PathBuf),
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawManifest {
    harness: Option<HarnessSpec>,
    original: Option<OriginalSource>,
    #[serde(default)]
    config: SearchConfig,
    suite: Option<PathBuf>,
    #[serde(default)]
    disabled_mutators: Vec<String>,
}

/// A fully resolved run description.
#[derive(Debug, Clone, PartialEq)]
#[derive(Default)]
pub struct RunManifest {
    pub harness: Option<HarnessSpec>,
    pub original: Option<TestSpec>,
    pub config: SearchConfig,
    pub suite: Vec<TestSpec>,
    pub suite_path: Option<PathBuf>,
    pub disabled_mutators: Vec<String>,
}


/// Command-line values that take precedence over the manifest.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub harness_cmd: Option<String>,
    pub args_json: Option<String>,
    pub oracle: Option<String>,
    pub suite: Option<PathBuf>,
    pub target_passing: Option<usize>,
    pub max_candidates: Option<usize>,
    pub timeout_ms: Option<u64>,
    pub total_budget_ms: Option<u64>,
    pub seed: Option<u64>,
    pub env_seed: Option<String>,
    pub parallelism: Option<usize>,
    pub weights: Option<String>,
    pub repeat: Option<usize>,
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}

fn read(path: &Path, what: &str) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| config_err(format!("{what} {}: {e}", path.display())))
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub fn load_suite(path: &Path) -> Result<Vec<TestSpec>> {
    serde_json::from_str(&read(path, "suite")?)
        .map_err(|e| config_err(format!("suite {}: {e}", path.display())))
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = read(path, "manifest")?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).map_err(|e| match e {
            Error::InvalidConfig(m) => config_err(format!("manifest {}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let raw: RawManifest = serde_json::from_str(text).map_err(|e| config_err(e.to_string()))?;
        let original = match raw.original {
            None => None,
            Some(OriginalSource::Inline(spec)) => Some(spec),
            Some(OriginalSource::Path(p)) => {
                let p = resolve(base, &p);
                let spec = serde_json::from_str(&read(&p, "original")?)
                    .map_err(|e| config_err(format!("original {}: {e}", p.display())))?;
                Some(spec)
            }
        };
        let suite_path = raw.suite.map(|p| resolve(base, &p));
        let suite = match &suite_path {
            Some(p) => load_suite(p)?,
            None => Vec::new(),
        };
        Ok(RunManifest {
            harness: raw.harness,
            original,
            config: raw.config,
            suite,
            suite_path,
            disabled_mutators: raw.disabled_mutators,
        })
    }

    /// Applies command-line overrides field by field.
    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(cmd) = &o.harness_cmd {
            let mut words = shlex::split(cmd)
                .filter(|w| !w.is_empty())
                .ok_or_else(|| config_err(format!("--harness-cmd: cannot split {cmd:?}")))?;
            let command = words.remove(0);
            let env = self.harness.take().map(|h| h.env).unwrap_or_default();
            self.harness = Some(HarnessSpec { command, args: words, env });
        }
        if let Some(json) = &o.args_json {
            let args: Vec<InputValue> =
                serde_json::from_str(json).map_err(|e| config_err(format!("--args-json: {e}")))?;
            match &mut self.original {
                Some(spec) => spec.args = args,
                None => self.original = Some(TestSpec::new("cli", o.oracle.clone().unwrap_or_default(), args)),
            }
        }
        if let Some(oracle) = &o.oracle {
            match &mut self.original {
                Some(spec) => spec.oracle_id = oracle.clone(),
                None => return Err(config_err("--oracle given without test arguments (use --args-json)")),
            }
        }
        if let Some(p) = &o.suite {
            self.suite = load_suite(p)?;
            self.suite_path = Some(p.clone());
        }
        let c = &mut self.config;
        if let Some(v) = o.target_passing {
            c.target_passing = v;
            c.report_k = c.report_k.min(v);
        }
        if let Some(v) = o.max_candidates {
            c.max_candidates = v;
        }
        if let Some(v) = o.timeout_ms {
            c.per_execution_timeout_ms = v;
        }
        if let Some(v) = o.total_budget_ms {
            c.total_budget_ms = v;
        }
        match (o.seed, &o.env_seed) {
            (Some(v), _) => c.rng_seed = v,
            (None, Some(s)) => {
                c.rng_seed = s.trim().parse().map_err(|_| config_err(format!("CAUSA_SEED: not a number: {s:?}")))?
            }
            (None, None) => {}
        }
        if let Some(v) = o.parallelism {
            c.parallelism = v;
        }
        if let Some(w) = &o.weights {
            let parsed = w
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| config_err(format!("--weights: {e}")))?;
            c.weights = Some(parsed);
        }
        if let Some(v) = o.repeat {
            c.repeat = v;
        }
        Ok(())
    }

    pub fn original(&self) -> Result<&TestSpec> {
        self.original
            .as_ref()
            .ok_or_else(|| config_err("no original test: give a manifest with \"original\" or --args-json"))
    }

    pub fn harness(&self) -> Result<&HarnessSpec> {
        self.harness
            .as_ref()
            .ok_or_else(|| config_err("no harness: give a manifest with \"harness\" or --harness-cmd"))
    }

    pub fn catalog(&self) -> Result<MutatorCatalog> {
        let mut catalog = MutatorCatalog::default();
        for name in &self.disabled_mutators {
            catalog.set_enabled(name, false)?;
        }
        Ok(catalog)
    }
}
