//! Pipeline configuration: one JSON document covering every stage.
//!
//! Stage seeds are derived from the master `seed`, so a run is reproduced by
//! the config alone. `XAI_PROBE_SEED` replaces the master seed.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::attack::AttackConfig;
use crate::data::{default_architecture, DatasetConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::explain::LimeConfig;
use crate::net::LayerSpec;
use crate::rng::{derive_seed, stage};
use crate::segmentation::SegmentParams;

pub const SEED_ENV: &str = "XAI_PROBE_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackStageConfig {
    #[serde(flatten)]
    pub attack: AttackConfig,
    /// Largest regions attacked per image.
    pub regions_per_image: usize,
    pub segmentation: SegmentParams,
}

impl Default for AttackStageConfig {
    fn default() -> Self {
        Self { attack: AttackConfig::default(), regions_per_image: 10, segmentation: SegmentParams::attack() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// `None` selects the built-in architecture for the dataset's size.
    pub architecture: Option<Vec<LayerSpec>>,
    pub init_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Seed of the random-mask baseline.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    /// Example plotted and overlaid; `None` picks the first.
    pub example: Option<usize>,
    /// Superpixel count whose budget is used for the overlay panels.
    pub overlay_n: usize,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self { example: None, overlay_n: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Training images.
    pub dataset: DatasetConfig,
    /// Images per class of the held-out set that is attacked and explained.
    pub attack_images_per_class: usize,
    pub model: ModelConfig,
    pub training: TrainConfig,
    pub attack: AttackStageConfig,
    pub lime: LimeConfig,
    pub evaluation: EvaluationConfig,
    pub report: ReportConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            dataset: DatasetConfig::default(),
            attack_images_per_class: 25,
            model: ModelConfig::default(),
            training: TrainConfig::default(),
            attack: AttackStageConfig::default(),
            lime: LimeConfig::default(),
            evaluation: EvaluationConfig::default(),
            report: ReportConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Reads a config file; missing fields take their defaults.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("config serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// Applies `key=value` overrides; dotted keys address nested fields and
    /// the value is parsed as JSON, falling back to a plain string.
    pub fn with_overrides<S: AsRef<str>>(self, sets: &[S]) -> Result<Self> {
        if sets.is_empty() {
            return Ok(self);
        }
        let mut doc = serde_json::to_value(&self).expect("config serializes");
        for s in sets {
            let s = s.as_ref();
            let (key, raw) = s
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects key=value, got {s:?}")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut doc, key, value)?;
        }
        serde_json::from_value(doc).map_err(|e| Error::Config(format!("after overrides: {e}")))
    }

    /// Replaces the master seed from the environment, if set.
    pub fn with_env_seed(mut self) -> Result<Self> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV} must be an unsigned integer, got {v:?}")))?;
        }
        Ok(self)
    }

    /// Fills every stage seed from the master seed and validates.
    pub fn resolve(mut self) -> Result<Self> {
        self.dataset.seed = derive_seed(self.seed, stage::DATASET, 0);
        self.model.init_seed = derive_seed(self.seed, stage::INIT, 0);
        self.training.seed = derive_seed(self.seed, stage::TRAIN, 0);
        self.lime.seed = derive_seed(self.seed, stage::LIME, 0);
        self.evaluation.seed = derive_seed(self.seed, stage::RANDOM_BASELINE, 0);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.attack_set().validate()?;
        self.attack.attack.validate()?;
        self.attack.segmentation.validate()?;
        self.lime.validate()?;
        if self.attack.regions_per_image == 0 {
            return Err(Error::Config("attack.regions_per_image must be at least 1".into()));
        }
        if self.attack.attack.target_label >= self.dataset.num_classes {
            return Err(Error::Config(format!(
                "attack.target_label {} is not one of the {} classes",
                self.attack.attack.target_label, self.dataset.num_classes
            )));
        }
        if self.report.overlay_n == 0 {
            return Err(Error::Config("report.overlay_n must be at least 1".into()));
        }
        Ok(())
    }

    /// The held-out set: same generator, independent seed.
    pub fn attack_set(&self) -> DatasetConfig {
        DatasetConfig {
            images_per_class: self.attack_images_per_class,
            seed: derive_seed(self.seed, stage::HOLDOUT, 0),
            ..self.dataset.clone()
        }
    }

    pub fn architecture(&self) -> Vec<LayerSpec> {
        self.model.architecture.clone().unwrap_or_else(|| {
            default_architecture(self.dataset.height, self.dataset.width, self.dataset.num_classes)
        })
    }

    /// Short hash of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

fn set_path(doc: &mut Value, key: &str, value: Value) -> Result<()> {
    let unknown = || Error::Config(format!("unknown config key {key:?}"));
    let mut parts = key.split('.').peekable();
    let mut cur = doc;
    while let Some(part) = parts.next() {
        let obj = cur.as_object_mut().ok_or_else(unknown)?;
        if parts.peek().is_none() {
            // optional fields serialize as null, so presence is enough
            let slot = obj.get_mut(part).ok_or_else(unknown)?;
            *slot = value;
            return Ok(());
        }
        cur = obj.get_mut(part).ok_or_else(unknown)?;
        if cur.is_null() {
            *cur = Value::Object(Default::default());
        }
    }
    Err(unknown())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        let c = PipelineConfig::default().resolve().unwrap();
        c.save(&p).unwrap();
        assert_eq!(PipelineConfig::load(&p).unwrap(), c);
    }

    #[test]
    fn partial_file_takes_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"seed": 3, "lime": {"num_samples": 50}}"#).unwrap();
        let c = PipelineConfig::load(&p).unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.lime.num_samples, 50);
        assert_eq!(c.lime.kernel_width, LimeConfig::default().kernel_width);
        std::fs::write(&p, r#"{"sed": 3}"#).unwrap();
        assert!(matches!(PipelineConfig::load(&p), Err(Error::Json { .. })));
    }

    #[test]
    fn overrides() {
        let c = PipelineConfig::default()
            .with_overrides(&["lime.num_samples=123", "attack.step_eps=0.01", "attack.ball_eps=0.1", "report.example=4"])
            .unwrap();
        assert_eq!(c.lime.num_samples, 123);
        assert_eq!(c.attack.attack.step_eps, 0.01);
        assert_eq!(c.attack.attack.ball_eps, Some(0.1));
        assert_eq!(c.report.example, Some(4));
        let c = c.with_overrides(&["lime.baseline=global_mean"]).unwrap();
        assert_eq!(c.lime.baseline, crate::explain::LimeBaseline::GlobalMean);
        for bad in ["nokey", "lime.nope=1", "lime.num_samples=abc", "seed.x=1"] {
            assert!(matches!(PipelineConfig::default().with_overrides(&[bad]), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn resolve_derives_seeds_and_validates() {
        let a = PipelineConfig::default().resolve().unwrap();
        let b = PipelineConfig { seed: 8, ..PipelineConfig::default() }.resolve().unwrap();
        assert_ne!(a.dataset.seed, b.dataset.seed);
        assert_ne!(a.dataset.seed, a.attack_set().seed);
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint(), PipelineConfig::default().resolve().unwrap().fingerprint());
        let bad = PipelineConfig::default().with_overrides(&["attack.target_label=9"]).unwrap();
        assert!(matches!(bad.resolve(), Err(Error::Config(_))));
    }
}
