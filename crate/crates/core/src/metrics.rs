//! Filtering and forecasting scores.
//!
//! Ensembles are `N×d` tensors, one per time step; the truth is `T×d`.

use serde::Serialize;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub fn rmse(estimates: &Tensor, truth: &Tensor) -> Result<f64> {
    if estimates.shape() != truth.shape() {
        return Err(Error::shape(
            "rmse",
            format!("{:?} vs {:?}", estimates.shape(), truth.shape()),
        ));
    }
    if truth.len() == 0 {
        return Ok(0.0);
    }
    let sq: f64 = estimates.data().iter().zip(truth.data()).map(|(a, b)| (a - b).powi(2)).sum();
    Ok((sq / truth.len() as f64).sqrt())
}

fn check_ensembles(ensembles: &[Tensor], truth: Option<&Tensor>) -> Result<()> {
    for (t, e) in ensembles.iter().enumerate() {
        if e.rows() < 2 {
            return Err(Error::Contract(format!("ensemble at step {t} has {} members", e.rows())));
        }
        if let Some(tr) = truth {
            if e.cols() != tr.cols() {
                return Err(Error::shape("metrics", format!("ensemble width {} vs truth width {}", e.cols(), tr.cols())));
            }
        }
    }
    if let Some(tr) = truth {
        if tr.rows() != ensembles.len() {
            return Err(Error::shape("metrics", format!("{} ensembles for {} truth rows", ensembles.len(), tr.rows())));
        }
    }
    Ok(())
}

/// Per-step ensemble means stacked into a `T×d` tensor.
pub fn ensemble_means(ensembles: &[Tensor]) -> Tensor {
    let d = ensembles.first().map_or(0, |e| e.cols());
    let mut out = Tensor::zeros(ensembles.len(), d);
    for (t, e) in ensembles.iter().enumerate() {
        let m = e.mean_rows();
        for c in 0..d {
            out.set(t, c, m.get(0, c));
        }
    }
    out
}

/// `√(mean_t tr(cov_t) / d)` with `N − 1` normalization.
pub fn spread(ensembles: &[Tensor]) -> Result<f64> {
    check_ensembles(ensembles, None)?;
    if ensembles.is_empty() {
        return Ok(0.0);
    }
    let mut acc = 0.0;
    for e in ensembles {
        let (n, d) = (e.rows(), e.cols());
        let m = e.mean_rows();
        let mut tr = 0.0;
        for c in 0..d {
            tr += (0..n).map(|r| (e.get(r, c) - m.get(0, c)).powi(2)).sum::<f64>() / (n - 1) as f64;
        }
        acc += tr / d as f64;
    }
    Ok((acc / ensembles.len() as f64).sqrt())
}

/// Quantile of sorted data by linear interpolation between order
/// statistics at position `p (n − 1)`.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let pos = p.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let w = pos - lo as f64;
    sorted[lo] + w * (sorted[hi] - sorted[lo])
}

fn column_sorted(e: &Tensor, c: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..e.rows()).map(|r| e.get(r, c)).collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Fraction of `(t, d)` pairs whose truth lies inside the central
/// `level` interval of the ensemble marginal.
pub fn coverage(ensembles: &[Tensor], truth: &Tensor, level: f64) -> Result<f64> {
    check_ensembles(ensembles, Some(truth))?;
    if truth.len() == 0 {
        return Ok(0.0);
    }
    let tail = 0.5 * (1.0 - level);
    let mut hits = 0usize;
    for (t, e) in ensembles.iter().enumerate() {
        for c in 0..e.cols() {
            let s = column_sorted(e, c);
            let (lo, hi) = (quantile(&s, tail), quantile(&s, 1.0 - tail));
            let y = truth.get(t, c);
            if lo <= y && y <= hi {
                hits += 1;
            }
        }
    }
    Ok(hits as f64 / truth.len() as f64)
}

/// Ensemble CRPS of one scalar: `mean|X − y| − ½ mean|X − X′|` over all
/// ordered pairs, or over distinct pairs when `fair`.
pub fn crps_scalar(members: &[f64], y: f64, fair: bool) -> f64 {
    let n = members.len();
    let mut s = members.to_vec();
    s.sort_by(f64::total_cmp);
    let abs_dev = s.iter().map(|x| (x - y).abs()).sum::<f64>() / n as f64;
    let pair_sum: f64 = s
        .iter()
        .enumerate()
        .map(|(i, x)| 2.0 * (2.0 * i as f64 - n as f64 + 1.0) * x)
        .sum();
    let pairs = if fair { (n * (n - 1)) as f64 } else { (n * n) as f64 };
    abs_dev - 0.5 * pair_sum / pairs
}

/// CRPS averaged over coordinates and time.
pub fn crps(ensembles: &[Tensor], truth: &Tensor, fair: bool) -> Result<f64> {
    check_ensembles(ensembles, Some(truth))?;
    if truth.len() == 0 {
        return Ok(0.0);
    }
    let mut acc = 0.0;
    for (t, e) in ensembles.iter().enumerate() {
        for c in 0..e.cols() {
            let col: Vec<f64> = (0..e.rows()).map(|r| e.get(r, c)).collect();
            acc += crps_scalar(&col, truth.get(t, c), fair);
        }
    }
    Ok(acc / truth.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FilterMetrics {
    pub rmse: f64,
    pub spread: f64,
    pub coverage: f64,
    pub crps: f64,
    pub rmse_per_dim: Vec<f64>,
}

pub fn filter_metrics(ensembles: &[Tensor], truth: &Tensor) -> Result<FilterMetrics> {
    let means = ensemble_means(ensembles);
    let rmse_per_dim = (0..truth.cols())
        .map(|c| rmse(&means.slice_cols(c, c + 1), &truth.slice_cols(c, c + 1)))
        .collect::<Result<Vec<_>>>()?;
    Ok(FilterMetrics {
        rmse: rmse(&means, truth)?,
        spread: spread(ensembles)?,
        coverage: coverage(ensembles, truth, 0.95)?,
        crps: crps(ensembles, truth, false)?,
        rmse_per_dim,
    })
}
