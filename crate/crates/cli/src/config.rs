use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cirkit_core::annotate::{HttpPolicy, DEFAULT_MAX_RANGE, DEFAULT_MEAN_THRESHOLD};
use cirkit_core::eval::{DEFAULT_K_LIST, DEFAULT_MAP_K_LIST};
use cirkit_core::{AnnotationMode, ModelDims, TrainConfig};
use serde::{Deserialize, Serialize};

pub const CONFIG_FILE: &str = "config.json";

/// Optimizer settings for one training stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSettings {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lambda_txt: f64,
    pub lambda_info: f64,
    pub tau: f64,
    #[serde(default)]
    pub momentum: f64,
}

impl StageSettings {
    fn from_train(c: &TrainConfig) -> Self {
        Self {
            learning_rate: c.learning_rate,
            batch_size: c.batch_size,
            epochs: c.epochs,
            lambda_txt: c.lambda_txt,
            lambda_info: c.lambda_info,
            tau: c.tau,
            momentum: c.momentum,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnnotationSettings {
    pub mean_threshold: f64,
    pub max_range: u8,
    /// Number of mock judges when running with `--mock`.
    pub mock_judges: usize,
    pub generator_url: Option<String>,
    pub judge_urls: Vec<String>,
    pub http: HttpPolicy,
}

impl Default for AnnotationSettings {
    fn default() -> Self {
        Self {
            mean_threshold: DEFAULT_MEAN_THRESHOLD,
            max_range: DEFAULT_MAX_RANGE,
            mock_judges: 3,
            generator_url: None,
            judge_urls: Vec::new(),
            http: HttpPolicy::default(),
        }
    }
}

/// Synthetic world parameters used by `synth`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldSettings {
    pub items: usize,
    pub attributes: usize,
    pub holdout: usize,
    pub subset_size: usize,
    pub max_flips: usize,
    pub noise: f64,
}

impl Default for WorldSettings {
    fn default() -> Self {
        let c = cirkit_core::dataset::SynthConfig::default();
        Self {
            items: c.n_items,
            attributes: c.n_attrs,
            holdout: 100,
            subset_size: c.subset_size,
            max_flips: c.max_flips,
            noise: c.noise,
        }
    }
}

/// Everything a run needs. Relative paths are taken relative to the
/// directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub embeddings: PathBuf,
    pub train_triplets: PathBuf,
    pub test_triplets: PathBuf,
    pub nli_pairs: PathBuf,
    pub annotations: PathBuf,
    pub accepted: PathBuf,
    pub rejected: PathBuf,
    pub stage1_checkpoint: PathBuf,
    pub checkpoint: PathBuf,
    pub stage1_loss_log: PathBuf,
    pub stage2_loss_log: PathBuf,
    pub report: PathBuf,
    pub ranked: PathBuf,
    pub model: ModelDims,
    pub annotation_mode: AnnotationMode,
    pub stage1: StageSettings,
    pub stage2: StageSettings,
    pub annotation: AnnotationSettings,
    pub world: WorldSettings,
    pub k_list: Vec<usize>,
    pub map_k_list: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            embeddings: "embeddings/manifest.json".into(),
            train_triplets: "train.jsonl".into(),
            test_triplets: "test.jsonl".into(),
            nli_pairs: "nli.jsonl".into(),
            annotations: "annotations.jsonl".into(),
            accepted: "accepted.jsonl".into(),
            rejected: "rejected.jsonl".into(),
            stage1_checkpoint: "stage1.ckpt".into(),
            checkpoint: "model.ckpt".into(),
            stage1_loss_log: "loss_stage1.jsonl".into(),
            stage2_loss_log: "loss_stage2.jsonl".into(),
            report: "report.json".into(),
            ranked: "ranked.jsonl".into(),
            model: ModelDims::default(),
            annotation_mode: AnnotationMode::Full,
            stage1: StageSettings::from_train(&TrainConfig::stage1()),
            stage2: StageSettings::from_train(&TrainConfig::stage2()),
            annotation: AnnotationSettings::default(),
            world: WorldSettings::default(),
            k_list: DEFAULT_K_LIST.to_vec(),
            map_k_list: DEFAULT_MAP_K_LIST.to_vec(),
        }
    }
}

fn check_k_list(name: &str, ks: &[usize]) -> Result<()> {
    if ks.is_empty() || ks[0] == 0 || ks.windows(2).any(|w| w[0] >= w[1]) {
        bail!("{name} must be strictly increasing positive integers, got {ks:?}");
    }
    Ok(())
}

impl RunConfig {
    /// Reads a config file and makes its relative paths absolute.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut c: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        c.rebase(path.parent().unwrap_or(Path::new(".")));
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()? + "\n").with_context(|| format!("writing {}", path.display()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Joins every relative path onto `base`.
    pub fn rebase(&mut self, base: &Path) {
        for p in self.paths_mut() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    fn paths_mut(&mut self) -> [&mut PathBuf; 13] {
        [
            &mut self.embeddings,
            &mut self.train_triplets,
            &mut self.test_triplets,
            &mut self.nli_pairs,
            &mut self.annotations,
            &mut self.accepted,
            &mut self.rejected,
            &mut self.stage1_checkpoint,
            &mut self.checkpoint,
            &mut self.stage1_loss_log,
            &mut self.stage2_loss_log,
            &mut self.report,
            &mut self.ranked,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        check_k_list("k_list", &self.k_list)?;
        check_k_list("map_k_list", &self.map_k_list)?;
        self.train_config(1)?.validate()?;
        self.train_config(2)?.validate()?;
        if !(1.0..=5.0).contains(&self.annotation.mean_threshold) {
            bail!("annotation.mean_threshold must be in [1, 5]");
        }
        Ok(())
    }

    pub fn train_config(&self, stage: u8) -> Result<TrainConfig> {
        let s = match stage {
            1 => &self.stage1,
            2 => &self.stage2,
            _ => bail!("stage must be 1 or 2, got {stage}"),
        };
        Ok(TrainConfig {
            stage,
            learning_rate: s.learning_rate,
            batch_size: s.batch_size,
            epochs: s.epochs,
            lambda_txt: s.lambda_txt,
            lambda_info: s.lambda_info,
            tau: s.tau,
            seed: self.seed,
            annotation_mode: self.annotation_mode,
            momentum: s.momentum,
        })
    }
}
