//! Experiment configuration: one JSON document wiring a model file, a
//! dataset, the schedule and the optimizer into a reproducible run.
//!
//! Unknown fields anywhere in the document are rejected, so typos fail
//! loudly before any compute happens.

use anyhow::{Context, Result};
use bcdlab_core::data::DatasetSpec;
use bcdlab_core::engine::ScheduleConfig;
use bcdlab_core::memledger::MemoryMode;
use bcdlab_core::model::ModelSpec;
use bcdlab_core::optim::OptimHyper;
use serde::Deserialize;
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Path to the model JSON, relative to this config file.
    pub model: String,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    pub optim: OptimHyper,
    #[serde(default = "default_memory_mode")]
    pub memory_mode: MemoryMode,
    /// Optional path to a benchmark-records JSON for report tooling.
    #[serde(default)]
    pub econ_records: Option<String>,
    #[serde(default = "default_out_dir")]
    pub out_dir: String,
    /// Master seed; when present it overrides the model, schedule and
    /// generator seeds (see [`ExperimentConfig::apply_seed`]).
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_memory_mode() -> MemoryMode {
    MemoryMode::Table
}

fn default_out_dir() -> String {
    "out".into()
}

/// A fully-resolved experiment: model loaded, seeds applied.
pub struct Experiment {
    pub name: String,
    pub config: ExperimentConfig,
    pub model: ModelSpec,
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    /// Loads and validates a config; `seed_override` (the `--seed` flag)
    /// wins over the config's own `seed` field.
    pub fn load(path: &Path, seed_override: Option<u64>) -> Result<Experiment> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut config: ExperimentConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        let base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        let model_path = if Path::new(&config.model).is_absolute() {
            PathBuf::from(&config.model)
        } else {
            base_dir.join(&config.model)
        };
        let model_text = std::fs::read_to_string(&model_path)
            .with_context(|| format!("reading model {}", model_path.display()))?;
        let mut model: ModelSpec = serde_json::from_str(&model_text)
            .with_context(|| format!("parsing model {}", model_path.display()))?;
        model.validate().context("validating model")?;
        config.schedule.validate().context("validating schedule")?;
        config.optim.validate().context("validating optimizer")?;
        if let Some(seed) = seed_override.or(config.seed) {
            config.seed = Some(seed);
            apply_seed(&mut model, &mut config, seed);
        }
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "experiment".into());
        Ok(Experiment { name, config, model, base_dir })
    }
}

/// Derives all subsystem seeds from one master seed: model init gets
/// `seed`, the schedule (subsampling, batch order) gets `seed + 1`, and
/// synthetic dataset generators get `seed + 2`.
fn apply_seed(model: &mut ModelSpec, config: &mut ExperimentConfig, seed: u64) {
    model.seed = seed;
    config.schedule.seed = seed.wrapping_add(1);
    let generator_seed = seed.wrapping_add(2);
    match &mut config.dataset {
        DatasetSpec::TeacherStudent { seed, .. } | DatasetSpec::Classification { seed, .. } => {
            *seed = generator_seed;
        }
        DatasetSpec::Csv { .. } | DatasetSpec::Jsonl { .. } => {}
    }
}
