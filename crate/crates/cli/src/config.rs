//! Experiment configuration file and its hash.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use rfmsm_core::eval::SweepGrid;
use rfmsm_core::siggen::{default_snr_grid, GeneratorConfig};
use rfmsm_core::train::{FinetuneConfig, PretrainConfig};

use crate::Invalid;

/// One dataset the `generate` command can produce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSet {
    pub n_frames_per_cell: usize,
    #[serde(default = "yes")]
    pub labeled: bool,
    #[serde(default)]
    pub seed: u64,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorSection {
    pub waveform: GeneratorConfig,
    pub snr_grid: Vec<i16>,
    pub sets: BTreeMap<String, DatasetSet>,
}

impl Default for GeneratorSection {
    fn default() -> Self {
        let set = |n, labeled, seed| DatasetSet {
            n_frames_per_cell: n,
            labeled,
            seed,
        };
        Self {
            waveform: GeneratorConfig::default(),
            snr_grid: default_snr_grid(),
            sets: BTreeMap::from([
                ("corpus".to_string(), set(100, false, 1)),
                ("pool".to_string(), set(1, true, 2)),
                ("test".to_string(), set(50, true, 3)),
            ]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FewShotSection {
    /// Labeled frames per (class, snr) cell drawn for fine-tuning.
    pub n_shots: usize,
    #[serde(flatten)]
    pub train: FinetuneConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub pca_dims: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { pca_dims: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedsSection {
    pub pretrain: u64,
    pub finetune: u64,
    /// Seed of the n-shot draw.
    pub shots: u64,
    /// One full pretrain/fine-tune/evaluate run per seed and sweep cell.
    pub sweep: Vec<u64>,
}

impl Default for SeedsSection {
    fn default() -> Self {
        Self {
            pretrain: 0,
            finetune: 0,
            shots: 0,
            sweep: vec![0],
        }
    }
}

/// Default input and output locations; command-line paths take precedence.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub corpus: Option<PathBuf>,
    pub pool: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub generator: GeneratorSection,
    pub pretrain: PretrainConfig,
    pub finetune: FewShotSection,
    pub eval: EvalSection,
    pub sweep: SweepGrid,
    pub paths: PathsSection,
    pub seeds: SeedsSection,
}

impl Default for FewShotSection {
    fn default() -> Self {
        Self {
            n_shots: 1,
            train: FinetuneConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Invalid(format!("config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.generator.waveform.validate()?;
        if self.generator.snr_grid.is_empty() || self.generator.snr_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Invalid("generator.snr_grid must be nonempty and strictly increasing".into()).into());
        }
        if let Some((name, _)) = self.generator.sets.iter().find(|(_, s)| s.n_frames_per_cell == 0) {
            return Err(Invalid(format!("generator.sets.{name}: n_frames_per_cell must be at least 1")).into());
        }
        self.pretrain.validate()?;
        self.finetune.train.validate()?;
        if self.finetune.n_shots == 0 {
            return Err(Invalid("finetune.n_shots must be at least 1".into()).into());
        }
        if self.eval.pca_dims == 0 {
            return Err(Invalid("eval.pca_dims must be at least 1".into()).into());
        }
        self.sweep.validate()?;
        if self.seeds.sweep.is_empty() {
            return Err(Invalid("seeds.sweep must list at least one seed".into()).into());
        }
        Ok(())
    }

    /// Replaces every seed with `seed`.
    pub fn override_seeds(&mut self, seed: u64) {
        self.seeds.pretrain = seed;
        self.seeds.finetune = seed;
        self.seeds.shots = seed;
        self.seeds.sweep = vec![seed];
        for set in self.generator.sets.values_mut() {
            set.seed = seed;
        }
    }

    /// Hex SHA-256 of the serialized config without its paths section, so
    /// moving files around does not change the hash.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        value.as_object_mut().expect("object").remove("paths");
        let bytes = serde_json::to_vec(&value).expect("value serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        PretrainConfig {
            seed: self.seeds.pretrain,
            ..self.pretrain.clone()
        }
    }

    pub fn finetune_config(&self) -> FinetuneConfig {
        FinetuneConfig {
            seed: self.seeds.finetune,
            ..self.finetune.train.clone()
        }
    }
}
