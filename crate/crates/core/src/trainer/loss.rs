//! Contrastive and token-level losses with exact gradients.

use crate::error::{Error, Result};

/// In-batch InfoNCE value and its gradients w.r.t. both embedding sets.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoNce {
    pub loss: f64,
    pub d_queries: Vec<Vec<f64>>,
    pub d_targets: Vec<Vec<f64>>,
}

fn unit(v: &[f64]) -> Option<(Vec<f64>, f64)> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (norm > 0.0 && norm.is_finite()).then(|| (v.iter().map(|x| x / norm).collect(), norm))
}

/// `-(1/N) sum_j log softmax_k(cos(q_j, t_k) / tau)[j]`, negatives drawn from
/// the other rows of the batch. Gradients include the normalization.
pub fn info_nce(queries: &[Vec<f64>], targets: &[Vec<f64>], tau: f64) -> Result<InfoNce> {
    let n = queries.len();
    if n == 0 || targets.len() != n {
        return Err(Error::CountMismatch(format!(
            "{n} queries vs {} targets (need equal, non-zero)",
            targets.len()
        )));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidArgument(format!("temperature {tau} must be positive")));
    }
    let dim = queries[0].len();
    let normalize = |rows: &[Vec<f64>], what: &str| -> Result<Vec<(Vec<f64>, f64)>> {
        rows.iter()
            .enumerate()
            .map(|(i, r)| {
                if r.len() != dim {
                    return Err(Error::DimMismatch {
                        context: "info_nce row",
                        expected: dim,
                        actual: r.len(),
                    });
                }
                unit(r).ok_or_else(|| Error::Degenerate(format!("{what} row {i} has zero norm")))
            })
            .collect()
    };
    let q = normalize(queries, "query")?;
    let t = normalize(targets, "target")?;

    let nf = n as f64;
    let mut loss = 0.0;
    let mut d_qn = vec![vec![0.0; dim]; n];
    let mut d_tn = vec![vec![0.0; dim]; n];
    for j in 0..n {
        let s: Vec<f64> = t
            .iter()
            .map(|(tk, _)| q[j].0.iter().zip(tk).map(|(a, b)| a * b).sum::<f64>() / tau)
            .collect();
        let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = s.iter().map(|x| (x - m).exp()).sum();
        // both terms are non-negative: m >= s[j] and z >= 1
        loss += (m - s[j]) + z.ln();
        for k in 0..n {
            let p = (s[k] - m).exp() / z;
            let g = (p - if k == j { 1.0 } else { 0.0 }) / (nf * tau);
            for c in 0..dim {
                d_qn[j][c] += g * t[k].0[c];
                d_tn[k][c] += g * q[j].0[c];
            }
        }
    }

    let through_norm = |units: &[(Vec<f64>, f64)], d_units: Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        units
            .iter()
            .zip(d_units)
            .map(|((u, norm), du)| {
                let proj: f64 = u.iter().zip(&du).map(|(a, b)| a * b).sum();
                u.iter().zip(&du).map(|(ui, gi)| (gi - ui * proj) / norm).collect()
            })
            .collect()
    };
    Ok(InfoNce {
        loss: loss / nf,
        d_queries: through_norm(&q, d_qn),
        d_targets: through_norm(&t, d_tn),
    })
}

/// Mean token cross-entropy over every position of every sequence, with
/// `d loss / d logits = (softmax - onehot) / positions`.
pub fn cross_entropy_seq(
    logits: &[Vec<Vec<f64>>],
    targets: &[Vec<u32>],
) -> Result<(f64, Vec<Vec<Vec<f64>>>)> {
    if logits.len() != targets.len() {
        return Err(Error::CountMismatch(format!(
            "{} logit sequences for {} target sequences",
            logits.len(),
            targets.len()
        )));
    }
    let positions: usize = targets.iter().map(Vec::len).sum();
    if positions == 0 {
        return Err(Error::InvalidArgument("no token positions".into()));
    }
    let scale = 1.0 / positions as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for (seq, tgt) in logits.iter().zip(targets) {
        if seq.len() != tgt.len() {
            return Err(Error::CountMismatch(format!(
                "{} logit positions for {} targets",
                seq.len(),
                tgt.len()
            )));
        }
        let mut seq_grads = Vec::with_capacity(seq.len());
        for (row, &y) in seq.iter().zip(tgt) {
            let y = y as usize;
            if y >= row.len() {
                return Err(Error::TokenOutOfRange {
                    token: y,
                    vocab: row.len(),
                });
            }
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut g: Vec<f64> = row.iter().map(|x| (x - m).exp()).collect();
            let z: f64 = g.iter().sum();
            total += (m - row[y]) + z.ln();
            let c = scale / z;
            g.iter_mut().for_each(|v| *v *= c);
            g[y] -= scale;
            seq_grads.push(g);
        }
        grads.push(seq_grads);
    }
    Ok((total * scale, grads))
}

/// Value of [`cross_entropy_seq`] without the gradient.
pub fn cross_entropy_value(logits: &[Vec<Vec<f64>>], targets: &[Vec<u32>]) -> Result<f64> {
    if logits.len() != targets.len() {
        return Err(Error::CountMismatch(format!(
            "{} logit sequences for {} target sequences",
            logits.len(),
            targets.len()
        )));
    }
    let positions: usize = targets.iter().map(Vec::len).sum();
    if positions == 0 {
        return Err(Error::InvalidArgument("no token positions".into()));
    }
    let mut total = 0.0;
    for (seq, tgt) in logits.iter().zip(targets) {
        if seq.len() != tgt.len() {
            return Err(Error::CountMismatch(format!(
                "{} logit positions for {} targets",
                seq.len(),
                tgt.len()
            )));
        }
        for (row, &y) in seq.iter().zip(tgt) {
            let y = y as usize;
            if y >= row.len() {
                return Err(Error::TokenOutOfRange {
                    token: y,
                    vocab: row.len(),
                });
            }
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - m).exp()).sum();
            total += (m - row[y]) + z.ln();
        }
    }
    Ok(total / positions as f64)
}

/// `lambda_txt * l_txt + lambda_info * l_info`.
pub fn combined_loss(l_txt: f64, l_info: f64, lambda_txt: f64, lambda_info: f64) -> f64 {
    lambda_txt * l_txt + lambda_info * l_info
}
