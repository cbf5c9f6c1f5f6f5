//! JSON run configurations. Every struct rejects unknown keys; relative
//! paths inside a config file resolve against the file's directory.

use std::path::{Path, PathBuf};

use mcsd_core::data::{gen_blobs, gen_moons, gen_ood, split, Dataset, IdentitySpec, IdentityWorld, SplitSpec};
use mcsd_core::verify::StreamAssignment;
use mcsd_core::{Regime, TrainConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::output::CliError;

pub const FORMAT_VERSION: u32 = 1;

/// Reads a config file, or returns the default when no path is given.
pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<(T, PathBuf), CliError> {
    let Some(path) = path else {
        return Ok((T::default(), PathBuf::from(".")));
    };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::input(format!("cannot read config {}: {e}", path.display())))?;
    let cfg = serde_json::from_str(&text).map_err(|e| CliError::input(format!("invalid config {}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    Ok((cfg, base))
}

pub fn check_version(v: Option<u32>) -> Result<(), CliError> {
    match v {
        Some(v) if v != FORMAT_VERSION => Err(CliError::input(format!(
            "format_version {v} is not supported (expected {FORMAT_VERSION})"
        ))),
        _ => Ok(()),
    }
}

pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Moons { n: usize, noise: f64 },
    Blobs { n: usize, centers: Vec<Vec<f64>>, sigma: f64 },
    Identities { world: IdentitySpec, per_identity: usize },
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Moons { n: 600, noise: 0.3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OodSpec {
    pub shift: Vec<f64>,
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenDataConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format_version: Option<u32>,
    #[serde(default)]
    pub dataset: DatasetSource,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitSpec>,
    /// Shifted copy of the test split (or of the whole set without a split).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ood: Option<OodSpec>,
}

impl Default for GenDataConfig {
    fn default() -> Self {
        GenDataConfig {
            format_version: None,
            dataset: DatasetSource::default(),
            seed: 0,
            split: Some(SplitSpec {
                train_frac: 0.6,
                val_frac: 0.2,
                test_frac: 0.2,
                seed: 0,
            }),
            ood: None,
        }
    }
}

/// Named datasets produced by a generation config, in output order.
pub struct Generated {
    pub sets: Vec<(&'static str, Dataset)>,
}

impl Generated {
    pub fn get(&self, name: &str) -> Option<&Dataset> {
        self.sets.iter().find(|(n, _)| *n == name).map(|(_, d)| d)
    }
}

impl GenDataConfig {
    pub fn generate(&self) -> Result<Generated, CliError> {
        check_version(self.format_version)?;
        let ds = match &self.dataset {
            DatasetSource::Moons { n, noise } => gen_moons(*n, *noise, self.seed)?,
            DatasetSource::Blobs { n, centers, sigma } => gen_blobs(*n, centers, *sigma, self.seed)?,
            DatasetSource::Identities { world, per_identity } => {
                IdentityWorld::new(world, self.seed)?.sample(*per_identity, self.seed)?
            }
        };
        let mut sets = Vec::new();
        let ood_base = match &self.split {
            Some(spec) => {
                let parts = split(&ds, spec)?;
                sets.push(("train", parts.train));
                sets.push(("val", parts.val));
                sets.push(("test", parts.test.clone()));
                parts.test
            }
            None => {
                sets.push(("data", ds.clone()));
                ds
            }
        };
        if let Some(ood) = &self.ood {
            sets.push(("ood", gen_ood(&ood_base, &ood.shift, ood.scale, self.seed)?));
        }
        Ok(Generated { sets })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataFiles {
    pub train: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    /// Inferred from the labels when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Files(DataFiles),
    Generate(GenDataConfig),
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Generate(GenDataConfig::default())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub hidden_dim: usize,
    pub num_blocks: usize,
    pub use_batchnorm: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            hidden_dim: 32,
            num_blocks: 8,
            use_batchnorm: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    pub candidates: Vec<f64>,
    #[serde(default = "default_passes")]
    pub passes: usize,
}

fn default_passes() -> usize {
    mcsd_core::stochastic::DEFAULT_PASSES
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainRunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub format_version: Option<u32>,
    pub data: DataSource,
    pub network: NetworkConfig,
    pub training: TrainConfig,
    /// Standardize features with training-split statistics.
    pub standardize: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub search: Option<SearchConfig>,
    /// MC passes for the held-out evaluation in the report.
    pub eval_passes: usize,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        TrainRunConfig {
            format_version: None,
            data: DataSource::default(),
            network: NetworkConfig::default(),
            training: TrainConfig::default(),
            standardize: true,
            search: None,
            eval_passes: default_passes(),
        }
    }
}

/// Fields shared by eval, ood and verify; absent values are filled from
/// flags, the checkpoint, or defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McRunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regime: Option<Regime>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub passes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_final: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropout_rate: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format_version: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bins: Option<usize>,
    #[serde(default, flatten)]
    pub mc: McRunConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OodConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format_version: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ood_data: Option<PathBuf>,
    #[serde(default, flatten)]
    pub mc: McRunConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticPairs {
    #[serde(default)]
    pub world: IdentitySpec,
    /// Seed the identities were generated with (must match training data).
    #[serde(default)]
    pub world_seed: u64,
    #[serde(default = "default_impostor_pairs")]
    pub impostor_pairs: usize,
    #[serde(default = "default_morph_pairs")]
    pub morph_pairs: usize,
}

fn default_impostor_pairs() -> usize {
    200
}

fn default_morph_pairs() -> usize {
    48
}

impl Default for SyntheticPairs {
    fn default() -> Self {
        SyntheticPairs {
            world: IdentitySpec::default(),
            world_seed: 0,
            impostor_pairs: default_impostor_pairs(),
            morph_pairs: default_morph_pairs(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format_version: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticPairs>,
    /// Morph pairs CSV: `a0..a{d-1},b0..b{d-1}` (accomplice, impostor).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairs: Option<PathBuf>,
    /// Calibration impostor pairs, same layout.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub impostors: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alphas: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub far_target: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub streams: Option<StreamAssignment>,
    #[serde(default, flatten)]
    pub mc: McRunConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradCheckConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub format_version: Option<u32>,
    pub trials: usize,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_blocks: usize,
    pub num_classes: usize,
    pub use_batchnorm: bool,
    pub batch: usize,
    pub weight_decay: f64,
    pub q_final: f64,
    pub dropout_rate: f64,
    pub step: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            format_version: None,
            trials: 10,
            input_dim: 3,
            hidden_dim: 5,
            num_blocks: 3,
            num_classes: 3,
            use_batchnorm: true,
            batch: 6,
            weight_decay: 0.1,
            q_final: 0.5,
            dropout_rate: 0.2,
            step: 1e-5,
            tolerance: 1e-4,
            seed: 0,
        }
    }
}
