//! Detection metrics over stego-class scores.

use serde::Serialize;

use super::TrainError;

/// Minimum over thresholds of `(P_FA + P_MD) / 2`, where an item is called
/// stego when its score exceeds the threshold. `labels[i]` is true for stego.
pub fn p_e(scores: &[f64], labels: &[bool]) -> Result<f64, TrainError> {
    let (n_cover, n_stego) = class_counts(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // threshold below every score: all called stego
    let mut fa = n_cover;
    let mut md = 0usize;
    let mut best = error_rate(fa, md, n_cover, n_stego);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        // move the whole tie group below the threshold
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                md += 1;
            } else {
                fa -= 1;
            }
            i += 1;
        }
        best = best.min(error_rate(fa, md, n_cover, n_stego));
    }
    Ok(best)
}

pub(crate) fn error_rate(fa: usize, md: usize, n_cover: usize, n_stego: usize) -> f64 {
    0.5 * (fa as f64 / n_cover as f64 + md as f64 / n_stego as f64)
}

pub(crate) fn class_counts(scores: &[f64], labels: &[bool]) -> Result<(usize, usize), TrainError> {
    if scores.len() != labels.len() {
        return Err(TrainError::Metrics(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(TrainError::Metrics("NaN score".into()));
    }
    let n_stego = labels.iter().filter(|&&l| l).count();
    let n_cover = labels.len() - n_stego;
    if n_stego == 0 || n_cover == 0 {
        return Err(TrainError::Metrics("both classes must be present".into()));
    }
    Ok((n_cover, n_stego))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ItemScore {
    pub path: String,
    pub label: u8,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub p_e: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub scores: Vec<ItemScore>,
}

impl Metrics {
    /// Accuracy uses `score > 0.5` as the stego decision.
    pub fn from_scores(items: Vec<ItemScore>) -> Result<Self, TrainError> {
        let scores: Vec<f64> = items.iter().map(|s| s.score).collect();
        let labels: Vec<bool> = items.iter().map(|s| s.label == 1).collect();
        let p_e = p_e(&scores, &labels)?;
        let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
        for (&s, &l) in scores.iter().zip(&labels) {
            match (s > 0.5, l) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, false) => tn += 1,
                (false, true) => fn_ += 1,
            }
        }
        Ok(Self {
            accuracy: (tp + tn) as f64 / items.len() as f64,
            p_e,
            tp,
            fp,
            tn,
            fn_,
            scores: items,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }
}
