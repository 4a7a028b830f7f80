//! TOML configuration. Command-line flags override file values, which
//! override the built-in defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bench::{DEFAULT_ITERS, DEFAULT_WARMUP};
use crate::error::{Error, Result};
use crate::io::read_to_string;
use crate::pipeline::PipelineConfig;
use crate::simulator::RenderOptions;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub warmup: usize,
    pub iters: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            warmup: DEFAULT_WARMUP,
            iters: DEFAULT_ITERS,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToolConfig {
    pub pipeline: PipelineConfig,
    pub render: RenderOptions,
    pub bench: BenchConfig,
}

impl ToolConfig {
    pub fn from_toml_str(text: &str, source: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::format(source, None, e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&read_to_string(path)?, &path.display().to_string())
    }

    /// File contents when `path` is given, defaults otherwise.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration always serializes")
    }
}
