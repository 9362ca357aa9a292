use crate::error::{Error, Result};
use crate::geometry::Point;

fn check(truth: &[Point], samples: &[Vec<Point>], op: &str) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Invalid(format!("{op}: no samples")));
    }
    if truth.is_empty() {
        return Err(Error::Invalid(format!("{op}: empty trajectory")));
    }
    if let Some(s) = samples.iter().find(|s| s.len() != truth.len()) {
        return Err(Error::Invalid(format!("{op}: sample of length {} for truth of length {}", s.len(), truth.len())));
    }
    Ok(())
}

/// Mean per-step Euclidean error.
pub fn ade(truth: &[Point], sample: &[Point]) -> f64 {
    truth.iter().zip(sample).map(|(a, b)| a.dist(*b)).sum::<f64>() / truth.len() as f64
}

pub fn fde(truth: &[Point], sample: &[Point]) -> f64 {
    truth.last().unwrap().dist(*sample.last().unwrap())
}

/// Smallest ADE over the samples.
pub fn made(truth: &[Point], samples: &[Vec<Point>]) -> Result<f64> {
    check(truth, samples, "mADE")?;
    Ok(samples.iter().map(|s| ade(truth, s)).fold(f64::INFINITY, f64::min))
}

/// Smallest FDE over the samples and the index of the first sample
/// achieving it.
pub fn mfde(truth: &[Point], samples: &[Vec<Point>]) -> Result<(f64, usize)> {
    check(truth, samples, "mFDE")?;
    let mut best = (f64::INFINITY, 0);
    for (k, s) in samples.iter().enumerate() {
        let e = fde(truth, s);
        if e < best.0 {
            best = (e, k);
        }
    }
    Ok(best)
}

/// Mean final-position distance over unordered pairs of samples.
pub fn diversity(samples: &[Vec<Point>]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::Invalid(format!("diversity needs at least 2 samples, got {}", samples.len())));
    }
    let ends: Vec<Point> = samples
        .iter()
        .map(|s| s.last().copied().ok_or_else(|| Error::Invalid("diversity: empty sample".into())))
        .collect::<Result<_>>()?;
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for a in 0..ends.len() {
        for b in a + 1..ends.len() {
            sum += ends[a].dist(ends[b]);
            pairs += 1;
        }
    }
    Ok(sum / pairs as f64)
}

/// Area under the ROC curve of `scores` for binary `labels`, as the
/// Mann–Whitney statistic with ties counted half. `None` when either class
/// is empty.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let mut idx: Vec<usize> = (0..scores.len().min(labels.len())).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let pos = idx.iter().filter(|&&i| labels[i]).count();
    let neg = idx.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    // Sum of positive ranks, average ranks within ties.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += rank * idx[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Some(u / (pos * neg) as f64)
}
