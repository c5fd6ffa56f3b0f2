//! Query construction and scoring of a triplet set against a gallery.

use std::collections::HashSet;

use crate::dataset::{tokenize, SynthWorld, Triplet};
use crate::error::{Error, Result};
use crate::metrics::{EvalReport, QueryOutcome};
use crate::model::{compose_query, encode_text, project_image, ParamSet};
use crate::retrieval::{build_index, GalleryIndex, RankedResult};
use crate::store::EmbeddingMatrix;

pub const DEFAULT_K_LIST: [usize; 4] = [1, 5, 10, 50];
pub const DEFAULT_MAP_K_LIST: [usize; 4] = [5, 10, 25, 50];

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRun {
    pub report: EvalReport,
    pub ranked: Vec<RankedResult>,
}

fn widen(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| f64::from(x)).collect()
}

/// Projects every gallery image into the joint space.
pub fn project_gallery(p: &ParamSet, gallery: &EmbeddingMatrix) -> Result<GalleryIndex> {
    if gallery.dims() != p.dims.image_dims {
        return Err(Error::DimMismatch {
            context: "gallery vs checkpoint image dims",
            expected: p.dims.image_dims,
            actual: gallery.dims(),
        });
    }
    let mut values = Vec::with_capacity(gallery.count() * p.dims.embed_dims);
    for (_, row) in gallery.rows() {
        values.extend(project_image(p, &widen(row))?);
    }
    GalleryIndex::from_rows(p.dims.embed_dims, gallery.ids().to_vec(), values)
}

/// Composed query embedding for one triplet.
pub fn model_query(p: &ParamSet, gallery: &EmbeddingMatrix, t: &Triplet) -> Result<Vec<f64>> {
    let reference = widen(gallery.lookup(&t.reference_id)?);
    let text = encode_text(p, &tokenize(&t.modification_text, p.dims.vocab))?;
    compose_query(p, &reference, &text)
}

/// Ranks every query against `index` and aggregates the metrics. Each
/// exported list holds the top `max(k_list ∪ map_k_list)` items.
pub fn evaluate_queries(
    index: &GalleryIndex,
    triplets: &[Triplet],
    queries: &[Vec<f64>],
    k_list: &[usize],
    map_k_list: &[usize],
) -> Result<EvalRun> {
    if triplets.is_empty() {
        return Err(Error::InvalidArgument("empty query set".into()));
    }
    if triplets.len() != queries.len() {
        return Err(Error::CountMismatch(format!(
            "{} triplets but {} queries",
            triplets.len(),
            queries.len()
        )));
    }
    let depth = k_list
        .iter()
        .chain(map_k_list)
        .copied()
        .max()
        .unwrap_or(1)
        .min(index.len());
    let mut outcomes = Vec::with_capacity(triplets.len());
    let mut ranked = Vec::with_capacity(triplets.len());
    for (t, q) in triplets.iter().zip(queries) {
        let list = index.search_topk(q, depth)?;
        let rank = index.rank_of(q, &t.target_id)?;
        let subset_rank = match &t.subset_ids {
            Some(s) => Some(index.subset_rank(q, s, &t.target_id)?),
            None => None,
        };
        let gt_ids = t
            .gt_ids
            .as_ref()
            .map(|g| g.iter().cloned().collect::<HashSet<_>>());
        let result = RankedResult::new(t.pair_id.clone(), &list);
        outcomes.push(QueryOutcome {
            rank,
            subset_rank,
            ranked_ids: result.ranked_ids.clone(),
            gt_ids,
        });
        ranked.push(result);
    }
    Ok(EvalRun {
        report: EvalReport::compute(&outcomes, k_list, map_k_list)?,
        ranked,
    })
}

pub fn evaluate_model(
    p: &ParamSet,
    gallery: &EmbeddingMatrix,
    triplets: &[Triplet],
    k_list: &[usize],
    map_k_list: &[usize],
) -> Result<EvalRun> {
    let index = project_gallery(p, gallery)?;
    let queries = triplets
        .iter()
        .map(|t| model_query(p, gallery, t))
        .collect::<Result<Vec<_>>>()?;
    evaluate_queries(&index, triplets, &queries, k_list, map_k_list)
}

/// Scores the ground-truth composition rule of a synthetic world directly
/// against the raw gallery.
pub fn evaluate_oracle(
    world: &SynthWorld,
    triplets: &[Triplet],
    k_list: &[usize],
    map_k_list: &[usize],
) -> Result<EvalRun> {
    let index = build_index(&world.embeddings)?;
    let queries = triplets
        .iter()
        .map(|t| world.oracle_query(t))
        .collect::<Result<Vec<_>>>()?;
    evaluate_queries(&index, triplets, &queries, k_list, map_k_list)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic_world, SynthConfig};
    use crate::model::ModelDims;

    #[test]
    fn oracle_world_is_perfect() {
        let world = generate_synthetic_world(&SynthConfig::default()).unwrap();
        let run = evaluate_oracle(&world, &world.triplets, &DEFAULT_K_LIST, &DEFAULT_MAP_K_LIST).unwrap();
        assert_eq!(run.report.recall[&1], 100.0);
        assert_eq!(run.report.subset_recall[&1], 100.0);
        assert_eq!(run.ranked.len(), world.triplets.len());
        assert_eq!(run.ranked[0].ranked_ids.len(), 50);
    }

    #[test]
    fn empty_queries_and_dim_mismatch_fail() {
        let world = generate_synthetic_world(&SynthConfig::default()).unwrap();
        assert!(evaluate_oracle(&world, &[], &[1], &[5]).is_err());
        let dims = ModelDims {
            vocab: 64,
            image_dims: 8,
            ..ModelDims::default()
        };
        let p = ParamSet::init(dims, 0).unwrap();
        assert_eq!(
            evaluate_model(&p, &world.embeddings, &world.triplets, &[1], &[5])
                .unwrap_err()
                .code(),
            "dim_mismatch"
        );
    }

    #[test]
    fn model_eval_is_deterministic() {
        let world = generate_synthetic_world(&SynthConfig::new(1, 40, 6, 256)).unwrap();
        let dims = ModelDims {
            vocab: 256,
            ..ModelDims::default()
        };
        let p = ParamSet::init(dims, 3).unwrap();
        let a = evaluate_model(&p, &world.embeddings, &world.triplets, &[1, 5], &[5]).unwrap();
        let b = evaluate_model(&p, &world.embeddings, &world.triplets, &[1, 5], &[5]).unwrap();
        assert_eq!(a, b);
    }
}
