//! Exact cosine retrieval over a normalized gallery.
//!
//! Ordering everywhere is score descending, then id ascending.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;
use crate::store::{dot, l2_normalize, EmbeddingMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct GalleryIndex {
    dims: usize,
    rows: Vec<f64>,
    ids: Vec<String>,
    by_id: HashMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub items: Vec<(String, f64)>,
}

impl RankedList {
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(|(id, _)| id.as_str())
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

fn order(a: (&str, f64), b: (&str, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0))
}

/// Normalizes every row of `m` into a searchable index.
pub fn build_index(m: &EmbeddingMatrix) -> Result<GalleryIndex> {
    GalleryIndex::from_rows(
        m.dims(),
        m.ids().to_vec(),
        m.values().iter().map(|&v| f64::from(v)).collect(),
    )
}

impl GalleryIndex {
    /// Builds an index from f64 row-major values (e.g. projected embeddings).
    pub fn from_rows(dims: usize, ids: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if dims == 0 || values.len() != ids.len() * dims {
            return Err(Error::CountMismatch(format!(
                "{} values for {} ids of dimension {dims}",
                values.len(),
                ids.len()
            )));
        }
        let mut rows = Vec::with_capacity(values.len());
        let mut by_id = HashMap::with_capacity(ids.len());
        for (i, (id, row)) in ids.iter().zip(values.chunks_exact(dims)).enumerate() {
            let unit = l2_normalize(row).map_err(|_| Error::ZeroRow(id.clone()))?;
            rows.extend(unit);
            if by_id.insert(id.clone(), i).is_some() {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        Ok(Self {
            dims,
            rows,
            ids,
            by_id,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dims..(i + 1) * self.dims]
    }

    fn unit_query(&self, q: &[f64]) -> Result<Vec<f64>> {
        if q.len() != self.dims {
            return Err(Error::DimMismatch {
                context: "query",
                expected: self.dims,
                actual: q.len(),
            });
        }
        l2_normalize(q)
    }

    fn row_of(&self, id: &str) -> Result<usize> {
        self.by_id
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownId(id.to_string()))
    }

    /// Cosine score of every gallery row against `q`, in gallery order.
    pub fn scores(&self, q: &[f64]) -> Result<Vec<f64>> {
        let q = self.unit_query(q)?;
        Ok(self.rows.chunks_exact(self.dims).map(|r| dot(r, &q)).collect())
    }

    pub fn search_topk(&self, q: &[f64], k: usize) -> Result<RankedList> {
        if k == 0 || k > self.len() {
            return Err(Error::InvalidArgument(format!(
                "k = {k} outside 1..={}",
                self.len()
            )));
        }
        let scores = self.scores(q)?;
        let mut idx: Vec<usize> = (0..self.len()).collect();
        let cmp = |&a: &usize, &b: &usize| {
            order((&self.ids[a], scores[a]), (&self.ids[b], scores[b]))
        };
        if k < idx.len() {
            idx.select_nth_unstable_by(k - 1, cmp);
            idx.truncate(k);
        }
        idx.sort_unstable_by(cmp);
        Ok(RankedList {
            items: idx
                .into_iter()
                .map(|i| (self.ids[i].clone(), scores[i]))
                .collect(),
        })
    }

    /// 1-based rank of `target_id` over the whole gallery.
    pub fn rank_of(&self, q: &[f64], target_id: &str) -> Result<usize> {
        let t = self.row_of(target_id)?;
        let scores = self.scores(q)?;
        Ok(self.rank_among(&scores, t, 0..self.len()))
    }

    /// 1-based rank of `target_id` among `subset_ids` only.
    pub fn subset_rank(&self, q: &[f64], subset_ids: &[String], target_id: &str) -> Result<usize> {
        if !subset_ids.iter().any(|s| s == target_id) {
            return Err(Error::InvalidArgument(format!(
                "target {target_id} is not in its subset"
            )));
        }
        let t = self.row_of(target_id)?;
        let members = subset_ids
            .iter()
            .map(|s| self.row_of(s))
            .collect::<Result<Vec<_>>>()?;
        let scores = self.scores(q)?;
        Ok(self.rank_among(&scores, t, members.into_iter()))
    }

    fn rank_among(&self, scores: &[f64], t: usize, members: impl Iterator<Item = usize>) -> usize {
        let target = (self.ids[t].as_str(), scores[t]);
        1 + members
            .filter(|&j| {
                j != t && order((&self.ids[j], scores[j]), target) == Ordering::Less
            })
            .count()
    }
}

/// One exported result line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub pair_id: String,
    pub ranked_ids: Vec<String>,
    pub scores: Vec<f64>,
}

impl RankedResult {
    pub fn new(pair_id: impl Into<String>, list: &RankedList) -> Self {
        Self {
            pair_id: pair_id.into(),
            ranked_ids: list.ids().map(str::to_string).collect(),
            scores: list.items.iter().map(|(_, s)| *s).collect(),
        }
    }
}

pub fn write_ranked(path: &Path, results: &[RankedResult]) -> Result<()> {
    jsonl::write(path, results)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn index(rows: &[&[f64]], ids: &[&str]) -> GalleryIndex {
        GalleryIndex::from_rows(
            rows[0].len(),
            ids.iter().map(|s| s.to_string()).collect(),
            rows.concat(),
        )
        .unwrap()
    }

    #[test]
    fn build_normalizes_rows() {
        let m = EmbeddingMatrix::new(
            2,
            vec![3.0, 4.0, 1.0, 0.0, 0.0, 2.0],
            vec!["a".into(), "b".into(), "c".into()],
        )
        .unwrap();
        let idx = build_index(&m).unwrap();
        assert_eq!(idx.len(), 3);
        for i in 0..3 {
            let n: f64 = idx.row(i).iter().map(|x| x * x).sum();
            assert!((n.sqrt() - 1.0).abs() < 1e-12);
        }
        assert_eq!(build_index(&m).unwrap(), idx);
    }

    #[test]
    fn zero_row_names_its_id() {
        let m = EmbeddingMatrix::new(2, vec![1.0, 0.0, 0.0, 0.0], vec!["a".into(), "b".into()])
            .unwrap();
        match build_index(&m).unwrap_err() {
            Error::ZeroRow(id) => assert_eq!(id, "b"),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn identity_query_ranks_first() {
        let idx = index(&[&[1.0, 2.0], &[2.0, -1.0], &[1.0, 1.0]], &["a", "b", "c"]);
        let top = idx.search_topk(&[2.0, -1.0], 1).unwrap();
        assert_eq!(top.items[0].0, "b");
        assert!((top.items[0].1 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn ties_break_by_ascending_id() {
        // rows chosen so cosine scores are 0.9, 0.2, 0.9, 0.5 against e0
        let rows: Vec<Vec<f64>> = [0.9f64, 0.2, 0.9, 0.5]
            .iter()
            .map(|&c| vec![c, (1.0 - c * c).sqrt()])
            .collect();
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let idx = index(&refs, &["a", "b", "c", "d"]);
        let top = idx.search_topk(&[1.0, 0.0], 2).unwrap();
        assert_eq!(top.ids().collect::<Vec<_>>(), vec!["a", "c"]);
    }

    #[test]
    fn k_bounds_and_zero_query() {
        let idx = index(&[&[1.0, 0.0], &[0.0, 1.0]], &["a", "b"]);
        assert!(idx.search_topk(&[1.0, 0.0], 0).is_err());
        assert!(idx.search_topk(&[1.0, 0.0], 3).is_err());
        assert_eq!(
            idx.search_topk(&[0.0, 0.0], 1).unwrap_err().code(),
            "degenerate_input"
        );
    }

    #[test]
    fn rank_of_cases() {
        let idx = index(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 0.1]], &["t", "x", "y"]);
        assert_eq!(idx.rank_of(&[1.0, 0.0], "t").unwrap(), 1);
        // orthogonal to t, collinear with x
        assert!(idx.rank_of(&[0.0, 1.0], "t").unwrap() > 1);
        assert_eq!(idx.rank_of(&[1.0, 0.0], "zz").unwrap_err().code(), "unknown_id");
    }

    #[test]
    fn subset_rank_cases() {
        let idx = index(&[&[1.0, 0.0], &[0.0, 1.0], &[0.7, 0.7]], &["t", "x", "y"]);
        let q = [0.0, 1.0];
        assert_eq!(idx.subset_rank(&q, &["t".into()], "t").unwrap(), 1);
        assert_eq!(idx.rank_of(&q, "t").unwrap(), 3);
        assert_eq!(idx.subset_rank(&q, &["y".into(), "t".into()], "t").unwrap(), 2);
        assert!(idx.subset_rank(&q, &["x".into()], "t").is_err());
        assert!(idx.subset_rank(&q, &["t".into(), "nope".into()], "t").is_err());
    }
}
