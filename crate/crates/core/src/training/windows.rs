//! Positive / negative narration windows around a node timestamp.

use crate::io::NarrationSet;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Windows {
    /// Same-video narrations with `|p - t| <= 2^alpha`.
    pub positives: Vec<usize>,
    /// Same-video narrations with `2^alpha < |p - t| <= 2^beta`.
    pub same_negatives: Vec<usize>,
    /// `(video, narration)` pairs from every other video, indices into `others`.
    pub other_negatives: Vec<(usize, usize)>,
}

impl Windows {
    pub fn negative_count(&self) -> usize {
        self.same_negatives.len() + self.other_negatives.len()
    }
}

/// Radii `(2^alpha, 2^beta)` of the positive window and negative annulus.
pub fn window_radii(alpha: f64, beta: f64) -> (f64, f64) {
    (2f64.powf(alpha), 2f64.powf(beta))
}

/// Indices of `times` split into positives and the same-video annulus.
pub fn split_by_distance(center: f64, times: impl IntoIterator<Item = f64>, alpha: f64, beta: f64) -> (Vec<usize>, Vec<usize>) {
    let (r_pos, r_neg) = window_radii(alpha, beta);
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for (i, t) in times.into_iter().enumerate() {
        let d = (center - t).abs();
        if d <= r_pos {
            pos.push(i);
        } else if d <= r_neg {
            neg.push(i);
        }
    }
    (pos, neg)
}

pub fn sample_windows(node_time: f64, narrations: &NarrationSet, others: &[&NarrationSet], alpha: f64, beta: f64) -> Windows {
    let (positives, same_negatives) = split_by_distance(node_time, narrations.items.iter().map(|n| n.timestamp), alpha, beta);
    let other_negatives = others.iter().enumerate().flat_map(|(v, set)| (0..set.len()).map(move |i| (v, i))).collect();
    Windows { positives, same_negatives, other_negatives }
}
