//! End-to-end runs on a synthetic world: mock annotation, filtering,
//! two-stage training and held-out evaluation.

use crate::annotate::{annotate_triplets, filter_annotations, mock_judges, MockGenerator, MockJudge};
use crate::annotate::{DEFAULT_MAX_RANGE, DEFAULT_MEAN_THRESHOLD};
use crate::dataset::{generate_synthetic_world, split_holdout, SynthConfig, SynthWorld, Triplet};
use crate::error::Result;
use crate::eval::{evaluate_model, EvalRun, DEFAULT_K_LIST, DEFAULT_MAP_K_LIST};
use crate::model::{ModelDims, ParamSet};
use crate::trainer::{build_examples, train_stage1, train_stage2, LossRecord, TrainConfig};

/// Training recipe compared in ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Text pretraining, then the combined objective with CoT supervision.
    Full,
    /// Text pretraining, then contrastive loss only.
    Stage1Only,
    /// Contrastive loss only, from a fresh initialization.
    Neither,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Full, Variant::Stage1Only, Variant::Neither];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "stage1+cot",
            Variant::Stage1Only => "stage1",
            Variant::Neither => "neither",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub world: SynthConfig,
    pub holdout: usize,
    pub dims: ModelDims,
    pub stage1: TrainConfig,
    pub stage2: TrainConfig,
}

impl ExperimentConfig {
    /// Default world, model and training settings under one seed.
    pub fn new(seed: u64) -> Self {
        let world = SynthConfig {
            seed,
            ..SynthConfig::default()
        };
        let dims = ModelDims {
            vocab: world.vocab,
            image_dims: world.image_dims,
            ..ModelDims::default()
        };
        Self {
            world,
            holdout: 100,
            dims,
            stage1: TrainConfig::stage1().with_seed(seed),
            stage2: TrainConfig::stage2().with_seed(seed),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub eval: EvalRun,
    pub accepted: usize,
    pub rejected: usize,
    pub params: ParamSet,
    pub log: Vec<LossRecord>,
}

/// World plus its train/test split.
pub fn prepare(config: &ExperimentConfig) -> Result<(SynthWorld, Vec<Triplet>, Vec<Triplet>)> {
    let world = generate_synthetic_world(&config.world)?;
    let (train, test) = split_holdout(&world.triplets, config.holdout, config.world.seed)?;
    Ok((world, train, test))
}

pub fn run_experiment(config: &ExperimentConfig, variant: Variant) -> Result<ExperimentResult> {
    let seed = config.world.seed;
    let (world, train, test) = prepare(config)?;

    let judges: Vec<MockJudge> = mock_judges(3, seed);
    let refs: Vec<&MockJudge> = judges.iter().collect();
    let run = annotate_triplets(&train, &MockGenerator { seed }, &refs)?;
    let records = run
        .annotations
        .into_iter()
        .map(|a| {
            let s = a.judge_scores.clone();
            (a, s)
        })
        .collect();
    let (accepted, rejected) = filter_annotations(records, DEFAULT_MEAN_THRESHOLD, DEFAULT_MAX_RANGE)?;

    let mut params = ParamSet::init(config.dims, seed)?;
    let mut log = Vec::new();
    if variant != Variant::Neither {
        let out = train_stage1(&world.nli_pairs, params, &config.stage1)?;
        params = out.params;
        log.extend(out.log);
    }
    let mut examples = build_examples(
        &world.embeddings,
        &train,
        &accepted,
        config.stage2.annotation_mode,
        config.dims.vocab,
    )?;
    let mut stage2 = config.stage2;
    if variant != Variant::Full {
        stage2.lambda_txt = 0.0;
        for e in &mut examples {
            e.supervision = None;
        }
    }
    let out = train_stage2(&examples, params, &stage2)?;
    log.extend(out.log);
    let eval = evaluate_model(
        &out.params,
        &world.embeddings,
        &test,
        &DEFAULT_K_LIST,
        &DEFAULT_MAP_K_LIST,
    )?;
    Ok(ExperimentResult {
        eval,
        accepted: accepted.len(),
        rejected: rejected.len(),
        params: out.params,
        log,
    })
}
