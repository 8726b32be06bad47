//! Run configuration: one JSON file, command-line overrides on top, and a
//! stable fingerprint for provenance.
//!
//! Every pipeline command reads the same [`RunConfig`]. A config file is
//! optional — the defaults describe the standard mock-backend desk run —
//! and individual flags always win over the file. Reports embed
//! [`RunConfig::fingerprint`] so any output file can be traced back to the
//! exact configuration that produced it.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chaingen::ChainGenConfig;
use crate::error::{Error, Result};
use crate::gateway::{BackendConfig, BackendKind};
use crate::rankloss::LossConfig;
use crate::synth::SynthConfig;
use crate::train::TrainConfig;

/// Everything a pipeline command needs, in one serializable bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Master seed; per-item randomness is derived from it, never shared.
    pub seed: u64,
    /// Primary input dataset of the command (chain-gen reads caption
    /// records from it, audit/transform read chains, train reads training
    /// data). Commands with several inputs take the extras as flags.
    pub input: PathBuf,
    /// Directory all outputs are written into.
    pub out_dir: PathBuf,
    /// Error-taxonomy JSON; empty path selects the built-in taxonomy.
    pub taxonomy_path: PathBuf,
    /// Prompt-template directory overriding the built-ins per file; empty
    /// path selects the built-ins unchanged.
    pub template_dir: PathBuf,
    /// Completion backend (mock by default).
    pub backend: BackendConfig,
    /// Ranking objective and its knobs.
    pub loss: LossConfig,
    /// Optimizer loop settings.
    pub train: TrainConfig,
    /// Synthetic-dataset settings (`synth` command, and the policy shape
    /// used whenever chains are encoded into tokens).
    pub synth: SynthConfig,
    /// Corruption steps per generated chain; a chain holds `chain_len + 1`
    /// captions.
    pub chain_len: usize,
    /// Generate single-error independent negatives instead of nested
    /// chains.
    pub independent_negatives: bool,
    /// Per-error-type sampling weights; absent types keep weight 1.
    pub error_weights: BTreeMap<String, f64>,
    /// Worker threads for chain generation and judging.
    pub concurrency: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            input: PathBuf::new(),
            out_dir: PathBuf::from("out"),
            taxonomy_path: PathBuf::new(),
            template_dir: PathBuf::new(),
            backend: BackendConfig::default(),
            loss: LossConfig::default(),
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
            chain_len: 3,
            independent_negatives: false,
            error_weights: BTreeMap::new(),
            concurrency: 4,
        }
    }
}

impl RunConfig {
    /// Read a config file; `serde(default)` makes every field optional, so
    /// a file only states what it changes.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("config file {}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.chain_len == 0 {
            return Err(Error::Config("chain_len must be at least 1".into()));
        }
        if self.concurrency == 0 {
            return Err(Error::Config("concurrency must be at least 1".into()));
        }
        self.loss.validate()?;
        self.train.validate()?;
        self.synth.validate()?;
        Ok(())
    }

    /// The `input` path, or a configuration error naming the command that
    /// needed it.
    pub fn require_input(&self, command: &str) -> Result<&Path> {
        if self.input.as_os_str().is_empty() {
            return Err(Error::Config(format!(
                "{command} needs an input dataset; set `input` in the config or pass --input"
            )));
        }
        Ok(&self.input)
    }

    /// Short, stable content hash of the configuration. Identical configs
    /// — not merely identical files — share a fingerprint, because it is
    /// computed on the serialized struct rather than the file bytes. The
    /// output directory is excluded: it is the one field that can never
    /// change a computed byte, so the same run into two directories keeps
    /// one fingerprint.
    pub fn fingerprint(&self) -> String {
        let mut fingerprinted = self.clone();
        fingerprinted.out_dir = PathBuf::new();
        let canonical =
            serde_json::to_string(&fingerprinted).expect("RunConfig serialization cannot fail");
        let digest = Sha256::digest(canonical.as_bytes());
        let mut hex = String::with_capacity(16);
        for byte in &digest[..8] {
            hex.push_str(&format!("{byte:02x}"));
        }
        hex
    }

    /// View of the chain-generation fields as the chaingen module's own
    /// config.
    pub fn chain_gen(&self) -> ChainGenConfig {
        ChainGenConfig {
            chain_len: self.chain_len,
            independent: self.independent_negatives,
            error_weights: self.error_weights.clone(),
            seed: self.seed,
        }
    }
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub mock: bool,
    pub concurrency: Option<usize>,
    pub out: Option<PathBuf>,
    pub input: Option<PathBuf>,
}

impl Overrides {
    /// Flags win over the file.
    pub fn apply(&self, config: &mut RunConfig) {
        if let Some(seed) = self.seed {
            config.seed = seed;
            config.synth.seed = seed;
            config.train.seed = seed;
        }
        if self.mock {
            config.backend.kind = BackendKind::Mock;
        }
        if let Some(concurrency) = self.concurrency {
            config.concurrency = concurrency;
        }
        if let Some(out) = &self.out {
            config.out_dir = out.clone();
        }
        if let Some(input) = &self.input {
            config.input = input.clone();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rankloss::Objective;

    #[test]
    fn defaults_validate_and_roundtrip() {
        let config = RunConfig::default();
        config.validate().unwrap();
        let json = serde_json::to_string_pretty(&config).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, config);
    }

    #[test]
    fn partial_files_fill_in_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, r#"{"seed": 9, "chain_len": 5}"#).unwrap();
        let config = RunConfig::load(&path).unwrap();
        assert_eq!(config.seed, 9);
        assert_eq!(config.chain_len, 5);
        assert_eq!(config.concurrency, RunConfig::default().concurrency);
    }

    #[test]
    fn malformed_files_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, "{not json").unwrap();
        assert!(matches!(RunConfig::load(&path), Err(Error::Config(_))));
        let missing = dir.path().join("absent.json");
        assert!(matches!(RunConfig::load(&missing), Err(Error::Io { .. })));
    }

    #[test]
    fn fingerprint_tracks_content_not_formatting() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint().len(), 16);

        b.seed = 1;
        assert_ne!(a.fingerprint(), b.fingerprint());

        // Where the outputs land is not part of what was computed.
        b.seed = 0;
        b.out_dir = PathBuf::from("elsewhere");
        assert_eq!(a.fingerprint(), b.fingerprint());

        // A config loaded from a differently formatted file fingerprints
        // the same as the struct it denotes.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, serde_json::to_string_pretty(&a).unwrap()).unwrap();
        assert_eq!(RunConfig::load(&path).unwrap().fingerprint(), a.fingerprint());
    }

    #[test]
    fn overrides_win_over_the_file() {
        let mut config = RunConfig { seed: 3, concurrency: 2, ..Default::default() };
        let overrides = Overrides {
            seed: Some(11),
            mock: true,
            concurrency: Some(8),
            out: Some(PathBuf::from("elsewhere")),
            input: Some(PathBuf::from("records.jsonl")),
        };
        overrides.apply(&mut config);
        assert_eq!(config.seed, 11);
        assert_eq!(config.synth.seed, 11);
        assert_eq!(config.train.seed, 11);
        assert_eq!(config.backend.kind, BackendKind::Mock);
        assert_eq!(config.concurrency, 8);
        assert_eq!(config.out_dir, PathBuf::from("elsewhere"));
        assert_eq!(config.input, PathBuf::from("records.jsonl"));
    }

    #[test]
    fn invalid_settings_are_rejected() {
        let zero_chain = RunConfig { chain_len: 0, ..Default::default() };
        assert!(zero_chain.validate().is_err());
        let zero_workers = RunConfig { concurrency: 0, ..Default::default() };
        assert!(zero_workers.validate().is_err());
        let bad_loss = RunConfig {
            loss: LossConfig { beta: -1.0, ..LossConfig::new(Objective::PlDpo) },
            ..Default::default()
        };
        assert!(bad_loss.validate().is_err());
    }

    #[test]
    fn missing_input_names_the_command() {
        let config = RunConfig::default();
        let err = config.require_input("chain-gen").unwrap_err();
        assert!(err.to_string().contains("chain-gen"), "{err}");
    }
}
