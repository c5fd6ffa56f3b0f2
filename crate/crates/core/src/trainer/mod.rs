//! Objectives, exact gradients, the gradient oracle, SGD and the two
//! training stages.
//!
//! Stage 1 trains only the text side (token table and text projection) with
//! InfoNCE over sentence/paraphrase pairs. Stage 2 trains everything with
//! `lambda_txt * CE + lambda_info * InfoNCE` on annotated triplets.
//!
//! Losses and gradients are accumulated in f64 in a fixed sequential order,
//! so a run is a pure function of its inputs and seed.

mod checkpoint;
mod loss;

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{batch_indices, fnv1a, tokenize, CoTAnnotation, NliPair, TokenSeq, Triplet};
use crate::error::{Error, Result};
use crate::jsonl;
use crate::model::{
    backprop_from_hidden, backprop_text, decoder_cross_entropy, encode_text_traced, forward_batch,
    forward_batch_hidden, Example, ForwardOutput, GradientSet, ParamSet, Tensor, TextTrace, Weights,
};
use crate::store::EmbeddingMatrix;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CheckpointHeader,
    FORMAT_VERSION,
};
pub use loss::{combined_loss, cross_entropy_seq, cross_entropy_value, info_nce, InfoNce};

/// Which annotation text supervises the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotationMode {
    /// Caption, reasoning steps and conclusion.
    #[default]
    Full,
    /// Conclusion only.
    Fast,
}

impl std::str::FromStr for AnnotationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "fast" => Ok(Self::Fast),
            other => Err(Error::InvalidArgument(format!(
                "annotation mode must be full or fast, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub stage: u8,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lambda_txt: f64,
    pub lambda_info: f64,
    pub tau: f64,
    pub seed: u64,
    pub annotation_mode: AnnotationMode,
    /// Heavy-ball momentum; 0 is plain SGD.
    #[serde(default)]
    pub momentum: f64,
}

impl TrainConfig {
    pub fn stage1() -> Self {
        Self {
            stage: 1,
            learning_rate: 0.05,
            batch_size: 32,
            epochs: 30,
            lambda_txt: 0.0,
            lambda_info: 1.0,
            tau: crate::model::DEFAULT_TAU,
            seed: 0,
            annotation_mode: AnnotationMode::Full,
            momentum: 0.0,
        }
    }

    pub fn stage2() -> Self {
        Self {
            stage: 2,
            epochs: 10,
            lambda_txt: 1.0,
            ..Self::stage1()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !matches!(self.stage, 1 | 2) {
            return bad("stage must be 1 or 2");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lambda_txt >= 0.0 && self.lambda_info >= 0.0) {
            return bad("loss weights must be non-negative");
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad("tau must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        Ok(())
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda_txt: self.lambda_txt,
            lambda_info: self.lambda_info,
            tau: self.tau,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_txt: f64,
    pub lambda_info: f64,
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        TrainConfig::stage2().weights()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_txt: f64,
    pub l_info: f64,
    pub combined: f64,
}

/// Forward-only value of the stage-2 objective on one batch.
pub fn objective(p: &ParamSet, batch: &[Example], w: &LossWeights) -> Result<LossBreakdown> {
    let fwd = forward_batch(p, batch)?;
    let l_info = info_nce(&fwd.queries, &fwd.targets, w.tau)?.loss;
    let l_txt = if fwd.decoder_targets.iter().any(|t| !t.is_empty()) {
        cross_entropy_value(&fwd.logits, &fwd.decoder_targets)?
    } else {
        0.0
    };
    Ok(LossBreakdown {
        l_txt,
        l_info,
        combined: combined_loss(l_txt, l_info, w.lambda_txt, w.lambda_info),
    })
}

fn scaled(rows: Vec<Vec<f64>>, c: f64) -> Vec<Vec<f64>> {
    rows.into_iter()
        .map(|r| r.into_iter().map(|v| v * c).collect())
        .collect()
}

/// Exact gradient of the combined objective for a batch whose forward pass
/// produced `fwd` (with or without materialized logits).
pub fn backward(
    p: &ParamSet,
    fwd: &ForwardOutput,
    batch: &[Example],
    w: &LossWeights,
) -> Result<(LossBreakdown, GradientSet)> {
    if fwd.trace.len() != batch.len() {
        return Err(Error::CountMismatch(format!(
            "trace has {} items but batch has {}",
            fwd.trace.len(),
            batch.len()
        )));
    }
    let info = info_nce(&fwd.queries, &fwd.targets, w.tau)?;
    let mut g = GradientSet::zeros(&p.dims);
    let (l_txt, d_hidden) = if fwd.decoder_targets.iter().any(|t| !t.is_empty()) {
        decoder_cross_entropy(p, fwd, w.lambda_txt, &mut g)?
    } else {
        (0.0, fwd.decoder_targets.iter().map(|_| Vec::new()).collect())
    };
    let g = backprop_from_hidden(
        p,
        fwd,
        &scaled(info.d_queries, w.lambda_info),
        &scaled(info.d_targets, w.lambda_info),
        &d_hidden,
        g,
    )?;
    let breakdown = LossBreakdown {
        l_txt,
        l_info: info.loss,
        combined: combined_loss(l_txt, info.loss, w.lambda_txt, w.lambda_info),
    };
    Ok((breakdown, g))
}

pub fn loss_and_grad(
    p: &ParamSet,
    batch: &[Example],
    w: &LossWeights,
) -> Result<(LossBreakdown, GradientSet)> {
    let fwd = forward_batch_hidden(p, batch)?;
    backward(p, &fwd, batch, w)
}

type PairTraces = (Vec<TextTrace>, Vec<TextTrace>);

fn encode_pairs(p: &ParamSet, pairs: &[(TokenSeq, TokenSeq)]) -> Result<PairTraces> {
    let mut a = Vec::with_capacity(pairs.len());
    let mut b = Vec::with_capacity(pairs.len());
    for (x, y) in pairs {
        a.push(encode_text_traced(p, x)?);
        b.push(encode_text_traced(p, y)?);
    }
    Ok((a, b))
}

/// Text-only InfoNCE over tokenized (premise, positive) pairs.
pub fn text_pair_objective(
    p: &ParamSet,
    pairs: &[(TokenSeq, TokenSeq)],
    tau: f64,
) -> Result<f64> {
    let (a, b) = encode_pairs(p, pairs)?;
    let qa: Vec<Vec<f64>> = a.into_iter().map(|t| t.out).collect();
    let qb: Vec<Vec<f64>> = b.into_iter().map(|t| t.out).collect();
    Ok(info_nce(&qa, &qb, tau)?.loss)
}

pub fn text_pair_loss_and_grad(
    p: &ParamSet,
    pairs: &[(TokenSeq, TokenSeq)],
    tau: f64,
) -> Result<(f64, GradientSet)> {
    let (a, b) = encode_pairs(p, pairs)?;
    let qa: Vec<Vec<f64>> = a.iter().map(|t| t.out.clone()).collect();
    let qb: Vec<Vec<f64>> = b.iter().map(|t| t.out.clone()).collect();
    let info = info_nce(&qa, &qb, tau)?;
    let mut g = GradientSet::zeros(&p.dims);
    for (trace, d) in a.iter().zip(&info.d_queries) {
        backprop_text(p, trace, d, &mut g);
    }
    for (trace, d) in b.iter().zip(&info.d_targets) {
        backprop_text(p, trace, d, &mut g);
    }
    Ok((info.loss, g))
}

/// Central differences `(f(x + eps) - f(x - eps)) / (2 eps)` for every
/// scalar parameter of `p`.
pub fn finite_diff<F>(p: &ParamSet, epsilon: f64, f: F) -> Result<GradientSet>
where
    F: FnMut(&ParamSet) -> Result<f64>,
{
    finite_diff_where(p, epsilon, f, |_, _| true)
}

/// [`finite_diff`] restricted to the entries `(tensor, index)` accepted by
/// `include`; the others are left at zero.
pub fn finite_diff_where<F, I>(p: &ParamSet, epsilon: f64, mut f: F, include: I) -> Result<GradientSet>
where
    F: FnMut(&ParamSet) -> Result<f64>,
    I: Fn(usize, usize) -> bool,
{
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::InvalidArgument("epsilon must be positive".into()));
    }
    let mut probe = p.clone();
    let mut g = GradientSet::zeros(&p.dims);
    for t in 0..11 {
        for i in 0..p.w.tensors()[t].data.len() {
            if !include(t, i) {
                continue;
            }
            let x = p.w.tensors()[t].data[i];
            probe.w.tensors_mut()[t].data[i] = x + epsilon;
            let up = f(&probe)?;
            probe.w.tensors_mut()[t].data[i] = x - epsilon;
            let down = f(&probe)?;
            probe.w.tensors_mut()[t].data[i] = x;
            g.tensors_mut()[t].data[i] = (up - down) / (2.0 * epsilon);
        }
    }
    Ok(g)
}

/// Per-tensor `||a - b|| / max(||a||, ||b||)` in the L2 norm; 0 when both
/// tensors are exactly zero.
pub fn relative_errors(a: &GradientSet, b: &GradientSet) -> Result<[f64; 11]> {
    if a.shapes() != b.shapes() {
        return Err(Error::InvalidArgument("gradient shapes differ".into()));
    }
    let mut out = [0.0; 11];
    for (i, (x, y)) in a.tensors().into_iter().zip(b.tensors()).enumerate() {
        let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|e| e * e).sum::<f64>().sqrt();
        let diff = norm(&mut x.data.iter().zip(&y.data).map(|(p, q)| p - q));
        let scale = norm(&mut x.data.iter().copied()).max(norm(&mut y.data.iter().copied()));
        out[i] = if scale == 0.0 { 0.0 } else { diff / scale };
    }
    Ok(out)
}

/// Finite-difference gradient of the stage-2 objective.
pub fn finite_diff_grad(
    p: &ParamSet,
    batch: &[Example],
    w: &LossWeights,
    epsilon: f64,
) -> Result<GradientSet> {
    // token rows the batch never reads cannot move the objective
    let mut used = HashSet::from([p.dims.bos() as usize]);
    for ex in batch {
        used.extend(ex.modification.as_slice().iter().map(|&t| t as usize));
        if let Some(s) = &ex.supervision {
            used.extend(s.as_slice().iter().map(|&t| t as usize));
        }
    }
    let cols = p.dims.token_dims;
    finite_diff_where(
        p,
        epsilon,
        |probe| Ok(objective(probe, batch, w)?.combined),
        |t, i| t != 0 || used.contains(&(i / cols)),
    )
}

fn check_shapes(p: &ParamSet, g: &GradientSet) -> Result<()> {
    if p.w.shapes() != g.shapes() {
        return Err(Error::InvalidArgument(format!(
            "gradient shapes {:?} do not match parameters {:?}",
            g.shapes(),
            p.w.shapes()
        )));
    }
    Ok(())
}

fn round_f32(x: f64) -> f64 {
    f64::from(x as f32)
}

/// `theta - lr * g` for every tensor; the temperature is not touched.
/// Results are stored at f32 precision so checkpoints are lossless.
pub fn sgd_step(p: &ParamSet, g: &GradientSet, lr: f64) -> Result<ParamSet> {
    check_shapes(p, g)?;
    let mut out = p.clone();
    for (t, gt) in out.w.tensors_mut().into_iter().zip(g.tensors()) {
        for (v, d) in t.data.iter_mut().zip(&gt.data) {
            *v = round_f32(*v - lr * d);
        }
    }
    Ok(out)
}

/// SGD with optional heavy-ball momentum over a subset of tensors.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Option<Weights>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Self {
            lr,
            momentum,
            velocity: None,
        }
    }

    /// Updates only tensors whose `trainable` flag is set.
    pub fn step(&mut self, p: &mut ParamSet, g: &GradientSet, trainable: &[bool; 11]) -> Result<()> {
        check_shapes(p, g)?;
        let step = if self.momentum > 0.0 {
            let v = self.velocity.get_or_insert_with(|| Weights::zeros(&p.dims));
            v.scale(self.momentum);
            v.add_scaled(g, 1.0);
            &*v
        } else {
            g
        };
        for ((t, d), &on) in p.w.tensors_mut().into_iter().zip(step.tensors()).zip(trainable) {
            if on {
                update(t, d, self.lr);
            }
        }
        Ok(())
    }
}

fn update(t: &mut Tensor, d: &Tensor, lr: f64) {
    for (v, g) in t.data.iter_mut().zip(&d.data) {
        *v = round_f32(*v - lr * g);
    }
}

pub const ALL_TENSORS: [bool; 11] = [true; 11];
/// Token table and text projection.
pub const TEXT_TENSORS: [bool; 11] = [
    true, true, true, false, false, false, false, false, false, false, false,
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub stage: u8,
    pub epoch: usize,
    pub step: usize,
    pub l_txt: f64,
    pub l_info: f64,
    pub combined: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ParamSet,
    pub log: Vec<LossRecord>,
}

impl TrainOutcome {
    /// Mean combined loss of each epoch, in order.
    pub fn epoch_means(&self) -> Vec<f64> {
        let mut sums: Vec<(f64, usize)> = Vec::new();
        for r in &self.log {
            if sums.len() <= r.epoch {
                sums.resize(r.epoch + 1, (0.0, 0));
            }
            sums[r.epoch].0 += r.combined;
            sums[r.epoch].1 += 1;
        }
        sums.into_iter().map(|(s, n)| s / n.max(1) as f64).collect()
    }
}

pub fn write_loss_log(path: &Path, log: &[LossRecord]) -> Result<()> {
    jsonl::write(path, log)
}

fn epoch_seed(seed: u64, stage: u8, epoch: usize) -> u64 {
    fnv1a(format!("{seed}/{stage}/{epoch}").as_bytes())
}

/// Text-only contrastive pretraining.
pub fn train_stage1(pairs: &[NliPair], init: ParamSet, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if config.stage != 1 {
        return Err(Error::InvalidArgument("train_stage1 needs a stage-1 config".into()));
    }
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no text pairs".into()));
    }
    let vocab = init.dims.vocab;
    let tokenized: Vec<_> = pairs
        .iter()
        .map(|pr| (tokenize(&pr.premise, vocab), tokenize(&pr.positive, vocab)))
        .filter(|(a, b)| !a.is_empty() && !b.is_empty())
        .collect();
    if tokenized.is_empty() {
        return Err(Error::InvalidArgument("every text pair tokenizes to nothing".into()));
    }
    let mut p = init.with_tau(config.tau);
    let mut opt = Sgd::new(config.learning_rate, config.momentum);
    let mut log = Vec::new();
    let mut step = 0;
    for epoch in 0..config.epochs {
        for batch in batch_indices(tokenized.len(), config.batch_size, epoch_seed(config.seed, 1, epoch))? {
            let items: Vec<_> = batch.iter().map(|&i| tokenized[i].clone()).collect();
            let (loss, mut g) = text_pair_loss_and_grad(&p, &items, config.tau)?;
            g.scale(config.lambda_info);
            opt.step(&mut p, &g, &TEXT_TENSORS)?;
            log.push(LossRecord {
                stage: 1,
                epoch,
                step,
                l_txt: 0.0,
                l_info: loss,
                combined: config.lambda_info * loss,
            });
            step += 1;
        }
    }
    Ok(TrainOutcome { params: p, log })
}

/// Builds stage-2 examples from triplets that have an accepted annotation.
/// Triplets without one are skipped.
pub fn build_examples(
    embeddings: &EmbeddingMatrix,
    triplets: &[Triplet],
    annotations: &[CoTAnnotation],
    mode: AnnotationMode,
    vocab: usize,
) -> Result<Vec<Example>> {
    let accepted: HashMap<&str, &CoTAnnotation> = annotations
        .iter()
        .filter(|a| a.accepted)
        .map(|a| (a.pair_id.as_str(), a))
        .collect();
    if accepted.is_empty() {
        return Err(Error::InvalidArgument("no accepted annotations".into()));
    }
    let vec64 = |id: &str| -> Result<Vec<f64>> {
        Ok(embeddings.lookup(id)?.iter().map(|&v| f64::from(v)).collect())
    };
    let mut out = Vec::new();
    for t in triplets {
        let Some(a) = accepted.get(t.pair_id.as_str()) else {
            continue;
        };
        let modification = tokenize(&t.modification_text, vocab);
        if modification.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "pair {}: modification text has no tokens",
                t.pair_id
            )));
        }
        let text = match mode {
            AnnotationMode::Full => a.full_text(),
            AnnotationMode::Fast => a.conclusion.clone(),
        };
        out.push(Example {
            reference: vec64(&t.reference_id)?,
            modification,
            target: vec64(&t.target_id)?,
            supervision: Some(tokenize(&text, vocab)),
        });
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument(
            "no triplet has an accepted annotation".into(),
        ));
    }
    Ok(out)
}

/// Multimodal stage: all parameters, combined objective.
pub fn train_stage2(examples: &[Example], init: ParamSet, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if config.stage != 2 {
        return Err(Error::InvalidArgument("train_stage2 needs a stage-2 config".into()));
    }
    if examples.is_empty() {
        return Err(Error::InvalidArgument("no training examples".into()));
    }
    let w = config.weights();
    let mut p = init.with_tau(config.tau);
    let mut opt = Sgd::new(config.learning_rate, config.momentum);
    let mut log = Vec::new();
    let mut step = 0;
    for epoch in 0..config.epochs {
        for batch in batch_indices(examples.len(), config.batch_size, epoch_seed(config.seed, 2, epoch))? {
            let items: Vec<Example> = batch.iter().map(|&i| examples[i].clone()).collect();
            let (losses, g) = loss_and_grad(&p, &items, &w)?;
            opt.step(&mut p, &g, &ALL_TENSORS)?;
            log.push(LossRecord {
                stage: 2,
                epoch,
                step,
                l_txt: losses.l_txt,
                l_info: losses.l_info,
                combined: losses.combined,
            });
            step += 1;
        }
    }
    Ok(TrainOutcome { params: p, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelDims;

    fn dims() -> ModelDims {
        ModelDims {
            vocab: 8,
            token_dims: 2,
            image_dims: 3,
            embed_dims: 2,
            hidden_dims: 2,
        }
    }

    #[test]
    fn finite_diff_of_square() {
        let mut p = ParamSet::zeros(dims()).unwrap();
        p.w.txt_b.data[0] = 3.0;
        let g = finite_diff(&p, 1e-4, |q| Ok(q.w.txt_b.data[0].powi(2))).unwrap();
        assert!((g.txt_b.data[0] - 6.0).abs() < 1e-6);
        assert_eq!(g.tok.data.iter().filter(|v| **v != 0.0).count(), 0);
        assert!(finite_diff(&p, 0.0, |_| Ok(0.0)).is_err());
    }

    #[test]
    fn sgd_arithmetic() {
        let mut p = ParamSet::zeros(dims()).unwrap();
        p.w.txt_w.data[0] = 1.0;
        let mut g = GradientSet::zeros(&p.dims);
        g.txt_w.data[0] = 0.5;
        let q = sgd_step(&p, &g, 0.1).unwrap();
        assert_eq!(q.w.txt_w.data[0], f64::from(0.95f32));
        assert_eq!(sgd_step(&p, &g, 0.0).unwrap(), p);

        let mut wrong = ParamSet::zeros(ModelDims { vocab: 9, ..dims() }).unwrap();
        wrong.tau = 1.0;
        assert!(sgd_step(&p, &wrong.w, 0.1).is_err());
    }

    #[test]
    fn two_steps_equal_one_doubled_step() {
        let p = ParamSet::init(dims(), 1).unwrap();
        let g = ParamSet::init(dims(), 2).unwrap().w;
        let two = sgd_step(&sgd_step(&p, &g, 0.01).unwrap(), &g, 0.01).unwrap();
        let one = sgd_step(&p, &g, 0.02).unwrap();
        for (a, b) in two.w.tensors().iter().zip(one.w.tensors()) {
            for (x, y) in a.data.iter().zip(&b.data) {
                // both sides round to f32 storage
                assert!((x - y).abs() <= 2.0 * f64::from(f32::EPSILON) * x.abs().max(1.0));
            }
        }
    }

    #[test]
    fn mode_parses() {
        assert_eq!("fast".parse::<AnnotationMode>().unwrap(), AnnotationMode::Fast);
        assert!("both".parse::<AnnotationMode>().is_err());
    }

    #[test]
    fn config_bounds() {
        assert!(TrainConfig::stage2().validate().is_ok());
        let mut c = TrainConfig::stage2();
        c.tau = 0.0;
        assert!(c.validate().is_err());
        c = TrainConfig::stage2();
        c.batch_size = 0;
        assert!(c.validate().is_err());
        assert_eq!(TrainConfig::stage2().lambda_txt, 1.0);
        assert_eq!(TrainConfig::stage2().lambda_info, 1.0);
    }
}
