//! Retrieval metrics and the benchmark aggregation formulas.
//!
//! Recalls are percentages in `[0, 100]` kept at full precision; rounding
//! to two decimals happens only in [`display`].

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_ranks(ranks: &[usize], k: usize) -> Result<()> {
    if ranks.is_empty() {
        return Err(Error::InvalidArgument("empty rank list".into()));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    if ranks.contains(&0) {
        return Err(Error::InvalidArgument("ranks are 1-based".into()));
    }
    Ok(())
}

/// Percentage of queries whose target rank is at most `k`.
pub fn recall_at_k(ranks: &[usize], k: usize) -> Result<f64> {
    check_ranks(ranks, k)?;
    let hits = ranks.iter().filter(|&&r| r <= k).count();
    Ok(100.0 * hits as f64 / ranks.len() as f64)
}

/// Recall over per-query subset ranks.
pub fn subset_recall_at_k(subset_ranks: &[usize], k: usize) -> Result<f64> {
    recall_at_k(subset_ranks, k)
}

/// Average precision truncated at `k`, normalized by `min(|gt|, k)`.
pub fn ap_at_k<S: AsRef<str>>(ranked_ids: &[S], gt_ids: &HashSet<String>, k: usize) -> Result<f64> {
    if gt_ids.is_empty() {
        return Err(Error::InvalidArgument("empty ground-truth set".into()));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, id) in ranked_ids.iter().take(k).enumerate() {
        if gt_ids.contains(id.as_ref()) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / gt_ids.len().min(k) as f64)
}

pub fn map_at_k<S: AsRef<str>>(
    ranked: &[Vec<S>],
    gts: &[HashSet<String>],
    k: usize,
) -> Result<f64> {
    if ranked.len() != gts.len() {
        return Err(Error::CountMismatch(format!(
            "{} ranked lists for {} ground-truth sets",
            ranked.len(),
            gts.len()
        )));
    }
    if ranked.is_empty() {
        return Err(Error::InvalidArgument("no queries".into()));
    }
    let mut total = 0.0;
    for (r, g) in ranked.iter().zip(gts) {
        total += ap_at_k(r, g, k)?;
    }
    Ok(total / ranked.len() as f64)
}

fn check_percent(x: f64) -> Result<()> {
    if (0.0..=100.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{x} is not a percentage")))
    }
}

/// `(R@5 + R_subset@1) / 2`, the CIRR headline average.
pub fn cirr_average(r5: f64, rs1: f64) -> Result<f64> {
    check_percent(r5)?;
    check_percent(rs1)?;
    Ok((r5 + rs1) / 2.0)
}

/// Mean over the three fashion categories.
pub fn fiq_average(per_category: &[f64]) -> Result<f64> {
    if per_category.len() != 3 {
        return Err(Error::InvalidArgument(format!(
            "expected 3 category values, got {}",
            per_category.len()
        )));
    }
    Ok(per_category.iter().sum::<f64>() / 3.0)
}

/// Two-decimal display string. Rounds the exact binary value half-to-even.
pub fn display(x: f64) -> String {
    format!("{x:.2}")
}

/// All evaluation numbers for one run. Maps are keyed by K so that the
/// serialized key order is stable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub query_count: usize,
    pub recall: BTreeMap<usize, f64>,
    pub subset_recall: BTreeMap<usize, f64>,
    pub map: BTreeMap<usize, f64>,
    /// `(R@5 + R_subset@1) / 2` when both are available.
    pub cirr_average: Option<f64>,
    /// Mean of R@K over `recall`, a single-number summary.
    pub mean_recall: f64,
}

/// Per-query inputs for [`EvalReport::compute`].
#[derive(Debug, Clone, Default)]
pub struct QueryOutcome {
    pub rank: usize,
    pub subset_rank: Option<usize>,
    pub ranked_ids: Vec<String>,
    pub gt_ids: Option<HashSet<String>>,
}

impl EvalReport {
    pub fn compute(outcomes: &[QueryOutcome], k_list: &[usize], map_k_list: &[usize]) -> Result<Self> {
        if outcomes.is_empty() {
            return Err(Error::InvalidArgument("no queries to evaluate".into()));
        }
        let ranks: Vec<usize> = outcomes.iter().map(|o| o.rank).collect();
        let mut recall = BTreeMap::new();
        for &k in k_list {
            recall.insert(k, recall_at_k(&ranks, k)?);
        }
        let subset: Vec<usize> = outcomes.iter().filter_map(|o| o.subset_rank).collect();
        let mut subset_recall = BTreeMap::new();
        if !subset.is_empty() {
            for k in [1, 2, 3] {
                subset_recall.insert(k, subset_recall_at_k(&subset, k)?);
            }
        }
        let (lists, gts): (Vec<Vec<String>>, Vec<HashSet<String>>) = outcomes
            .iter()
            .filter_map(|o| o.gt_ids.clone().map(|g| (o.ranked_ids.clone(), g)))
            .unzip();
        let mut map = BTreeMap::new();
        if !gts.is_empty() {
            for &k in map_k_list {
                map.insert(k, map_at_k(&lists, &gts, k)?);
            }
        }
        let cirr = match (recall.get(&5), subset_recall.get(&1)) {
            (Some(&r5), Some(&rs1)) => Some(cirr_average(r5, rs1)?),
            _ => None,
        };
        let mean_recall = if recall.is_empty() {
            0.0
        } else {
            recall.values().sum::<f64>() / recall.len() as f64
        };
        Ok(Self {
            query_count: outcomes.len(),
            recall,
            subset_recall,
            map,
            cirr_average: cirr,
            mean_recall,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(ids: &[&str]) -> HashSet<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn recall_examples() {
        let r = recall_at_k(&[1, 7, 4], 5).unwrap();
        assert!((r - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!(display(r), "66.67");
        assert_eq!(recall_at_k(&[1, 1, 1], 3).unwrap(), 100.0);
        assert_eq!(recall_at_k(&[4, 9], 3).unwrap(), 0.0);
        assert!(recall_at_k(&[], 3).is_err());
    }

    #[test]
    fn subset_recall_examples() {
        assert_eq!(display(subset_recall_at_k(&[1, 2, 6], 2).unwrap()), "66.67");
        assert_eq!(subset_recall_at_k(&[1, 2, 6], 6).unwrap(), 100.0);
        assert_eq!(subset_recall_at_k(&[1], 1).unwrap(), 100.0);
    }

    #[test]
    fn ap_examples() {
        assert_eq!(ap_at_k(&["g", "x"], &set(&["g"]), 5).unwrap(), 1.0);
        let ap = ap_at_k(&["a", "x", "b"], &set(&["a", "b"]), 3).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert_eq!(ap_at_k(&["x", "y"], &set(&["g"]), 2).unwrap(), 0.0);
        assert!(ap_at_k(&["x"], &HashSet::new(), 2).is_err());
    }

    #[test]
    fn map_examples() {
        let lists = vec![vec!["g"], vec!["x"]];
        let gts = vec![set(&["g"]), set(&["g"])];
        assert_eq!(map_at_k(&lists, &gts, 1).unwrap(), 0.5);
        assert_eq!(map_at_k(&lists[..1], &gts[..1], 1).unwrap(), 1.0);
        assert!(map_at_k(&lists, &gts[..1], 1).is_err());
    }

    #[test]
    fn aggregation_formulas() {
        assert_eq!(cirr_average(85.04, 79.35).unwrap(), 82.195);
        assert_eq!(display(cirr_average(85.04, 79.35).unwrap()), "82.19");
        assert_eq!(cirr_average(82.12, 80.65).unwrap(), 81.385);
        assert_eq!(display(cirr_average(82.12, 80.65).unwrap()), "81.39");
        assert_eq!(cirr_average(40.0, 40.0).unwrap(), 40.0);
        assert!(cirr_average(101.0, 3.0).is_err());
        assert_eq!(fiq_average(&[50.82, 57.26, 60.79]).unwrap(), 56.29);
        let r50 = fiq_average(&[74.57, 75.76, 78.94]).unwrap();
        assert!((r50 - 76.4233).abs() < 1e-4);
        assert_eq!(display(r50), "76.42");
        assert_eq!(fiq_average(&[7.5, 7.5, 7.5]).unwrap(), 7.5);
        assert!(fiq_average(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn report_is_monotone_and_keyed() {
        let outcomes: Vec<QueryOutcome> = [1, 3, 8, 20]
            .iter()
            .map(|&r| QueryOutcome {
                rank: r,
                subset_rank: Some(r.min(6)),
                ranked_ids: vec!["a".into(), "b".into()],
                gt_ids: Some(set(&["b"])),
            })
            .collect();
        let rep = EvalReport::compute(&outcomes, &[1, 5, 10, 50], &[5, 10]).unwrap();
        let v: Vec<f64> = rep.recall.values().copied().collect();
        assert!(v.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(rep.cirr_average, Some((50.0 + 25.0) / 2.0));
        assert_eq!(rep.map[&5], 0.5);
        let json = serde_json::to_string(&rep).unwrap();
        assert!(json.starts_with("{\"query_count\":4,\"recall\":{\"1\":25.0,\"5\":50.0"));
    }
}
