use std::fmt;
use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use syncurator_core::curation::leave_one_out_weights;
use syncurator_core::{Channel, Composition, DspConfig, Ratio, ScoringWeights};

use crate::args::GlobalArgs;

/// Invocation or configuration error. Maps to exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dsp: DspConfig,
    pub weights: ScoringWeights,
    pub drop_channel: Option<Channel>,
    pub coverage_threshold: f64,
    pub target_size: usize,
    pub ratio: Ratio,
    pub composition: Composition,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dsp: DspConfig::default(),
            weights: ScoringWeights::default(),
            drop_channel: None,
            coverage_threshold: 0.5,
            target_size: 512,
            ratio: Ratio::default(),
            composition: Composition::Filtered,
            seed: 0,
        }
    }
}

impl RunConfig {
    /// Reads a TOML or JSON config. Output files are accepted too: their
    /// `header.config` echo is used.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let is_toml = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("toml"));
        let mut value: serde_json::Value = if is_toml {
            let t: toml::Value =
                toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            serde_json::to_value(t)?
        } else {
            serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?
        };
        if let Some(echo) = value.pointer("/header/config") {
            value = echo.clone();
        }
        serde_json::from_value(value).map_err(|e| usage(format!("{}: {e}", path.display())))
    }

    /// Defaults, then the config file, then explicit flags.
    pub fn resolve(args: &GlobalArgs) -> anyhow::Result<Self> {
        let mut cfg = match &args.config {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if let Some(w) = args.weights {
            cfg.weights = w;
        }
        if args.drop_channel.is_some() {
            cfg.drop_channel = args.drop_channel;
        }
        if let Some(c) = args.composition {
            cfg.composition = c;
        }
        if let Some(n) = args.target_size {
            cfg.target_size = n;
        }
        if let Some(r) = args.ratio {
            cfg.ratio = r;
        }
        if let Some(s) = args.seed {
            cfg.seed = s;
        }
        if let Some(c) = args.coverage_threshold {
            cfg.coverage_threshold = c;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.dsp.validate().map_err(|e| usage(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.coverage_threshold) {
            return Err(usage(format!(
                "coverage_threshold must lie in [0, 1], got {}",
                self.coverage_threshold
            )));
        }
        if self.target_size == 0 {
            return Err(usage("target_size must be positive"));
        }
        self.effective_weights()?;
        Ok(())
    }

    /// Weights after applying `drop_channel`.
    pub fn effective_weights(&self) -> anyhow::Result<ScoringWeights> {
        match self.drop_channel {
            None => Ok(self.weights),
            Some(c) => leave_one_out_weights(&self.weights, c).map_err(|e| usage(e.to_string())),
        }
    }

    pub fn sha256(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}

/// Provenance block written at the top of every output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_sha256: String,
    pub config: RunConfig,
}

impl Header {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_sha256: config.sha256(),
            config: config.clone(),
        }
    }

    /// `#`-prefixed lines for CSV outputs.
    pub fn csv_comment(&self) -> String {
        format!(
            "# {} {} {}\n# config_sha256={}\n# config={}\n",
            self.tool,
            self.version,
            self.command,
            self.config_sha256,
            serde_json::to_string(&self.config).expect("config serializes")
        )
    }
}
