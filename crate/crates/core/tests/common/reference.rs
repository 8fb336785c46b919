//! Naive loop implementations used as oracles by the integration tests.
//! Nothing here calls into the library's kernels; only parameter storage
//! is read through the public types.

#![allow(dead_code)]

use hiero::model::params::{Activation, Linear, ModelParams, TdgcLayerParams};
use hiero::DenseMatrix;

pub type Mat = Vec<Vec<f64>>;

pub fn to_rows(m: &DenseMatrix) -> Mat {
    (0..m.rows()).map(|r| (0..m.cols()).map(|c| m.get(r, c)).collect()).collect()
}

pub fn max_diff(a: &Mat, b: &DenseMatrix) -> f64 {
    assert_eq!(a.len(), b.rows(), "row count");
    let mut worst = 0.0f64;
    for (r, row) in a.iter().enumerate() {
        assert_eq!(row.len(), b.cols(), "column count");
        for (c, v) in row.iter().enumerate() {
            worst = worst.max((v - b.get(r, c)).abs());
        }
    }
    worst
}

fn act(v: f64, a: Activation) -> f64 {
    match a {
        Activation::Relu => v.max(0.0),
        Activation::Tanh => v.tanh(),
        Activation::Identity => v,
    }
}

fn affine(x: &[f64], lin: &Linear) -> Vec<f64> {
    let (rows, cols) = (lin.weight.rows(), lin.weight.cols());
    assert_eq!(x.len(), rows);
    let mut out = vec![0.0; cols];
    for (j, o) in out.iter_mut().enumerate() {
        let mut s = 0.0;
        for (i, xi) in x.iter().enumerate() {
            s += xi * lin.weight.get(i, j);
        }
        *o = s + lin.bias.get(0, j);
    }
    out
}

fn affine_raw(x: &[f64], w: &DenseMatrix, b: &DenseMatrix) -> Vec<f64> {
    let mut out = vec![0.0; w.cols()];
    for (j, o) in out.iter_mut().enumerate() {
        let mut s = 0.0;
        for (i, xi) in x.iter().enumerate() {
            s += xi * w.get(i, j);
        }
        *o = s + b.get(0, j);
    }
    out
}

/// One gated graph convolution with a double loop over node pairs.
pub fn tdgc(layer: &TdgcLayerParams, a: Activation, x: &Mat, ts: &[f64], threshold: f64, groups: Option<&[usize]>) -> Mat {
    let n = x.len();
    let xn: Mat = x.iter().map(|r| affine_raw(r, &layer.w_n, &layer.b_n).into_iter().map(|v| act(v, a)).collect()).collect();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut row = affine_raw(&x[i], &layer.w_r, &DenseMatrix::zeros(1, layer.w_r.cols()));
        let neighbors: Vec<usize> = (0..n)
            .filter(|&j| j != i && (ts[i] - ts[j]).abs() <= threshold && groups.is_none_or(|g| g[i] == g[j]))
            .collect();
        let deg = neighbors.len() as f64;
        for &j in &neighbors {
            let diff = ts[i] - ts[j];
            let sign = if diff > 0.0 { 1.0 } else if diff < 0.0 { -1.0 } else { continue };
            let hidden: Vec<f64> = affine(&[diff.abs()], &layer.mlp_hidden).into_iter().map(|v| v.max(0.0)).collect();
            let gate = affine(&hidden, &layer.mlp_out);
            for (k, r) in row.iter_mut().enumerate() {
                *r += sign / deg * gate[k] * xn[j][k];
            }
        }
        for (k, r) in row.iter_mut().enumerate() {
            *r += layer.b_r.get(0, k);
        }
        out.push(row);
    }
    out
}

fn interpolate(src_ts: &[f64], src: &Mat, target: &[f64]) -> Mat {
    target
        .iter()
        .map(|&t| {
            let last = src_ts.len() - 1;
            if t <= src_ts[0] {
                return src[0].clone();
            }
            if t >= src_ts[last] {
                return src[last].clone();
            }
            let mut k = 1;
            while src_ts[k] < t {
                k += 1;
            }
            if src_ts[k] == t {
                return src[k].clone();
            }
            let w = (t - src_ts[k - 1]) / (src_ts[k] - src_ts[k - 1]);
            src[k - 1].iter().zip(&src[k]).map(|(a, b)| (1.0 - w) * a + w * b).collect()
        })
        .collect()
}

fn evens<T: Clone>(v: &[T]) -> Vec<T> {
    v.iter().step_by(2).cloned().collect()
}

pub struct RefTrace {
    pub encoder: Vec<Mat>,
    pub decoder: Vec<Mat>,
    pub output: Mat,
}

/// Full encoder/decoder pass with the decoder groups supplied by the caller.
pub fn forward(params: &ModelParams, features: &DenseMatrix, ts: &[f64], base_threshold: f64, groups: &[Vec<usize>]) -> RefTrace {
    let dims = params.dims;
    let mut levels = vec![ts.to_vec()];
    for s in 0..dims.stages {
        let next = evens(&levels[s]);
        levels.push(next);
    }
    let thr = |level: usize| base_threshold * (1u64 << level) as f64;
    let mut x: Mat = to_rows(features).iter().map(|r| affine(r, &params.input_proj)).collect();
    let mut encoder = Vec::new();
    for s in 0..dims.stages {
        for layer in &params.encoder[s] {
            x = tdgc(layer, dims.activation, &x, &levels[s], thr(s), None);
        }
        x = evens(&x);
        encoder.push(x.clone());
    }
    let mut decoder: Vec<Mat> = vec![Vec::new(); dims.stages];
    for s in (0..dims.stages).rev() {
        let mut y = encoder[s].clone();
        if s + 1 < dims.stages {
            let up = interpolate(&levels[s + 2], &decoder[s + 1], &levels[s + 1]);
            for (r, u) in y.iter_mut().zip(&up) {
                for (a, b) in r.iter_mut().zip(u) {
                    *a += b;
                }
            }
        }
        for layer in &params.decoder[s] {
            y = tdgc(layer, dims.activation, &y, &levels[s + 1], thr(s + 1), Some(&groups[s]));
        }
        decoder[s] = y;
    }
    let output = interpolate(&levels[1], &decoder[0], &levels[0]);
    RefTrace { encoder, decoder, output }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `-log(Σ_pos e^{s/τ} / Σ_den e^{s/τ})` summed plainly.
fn nce_term(scores: &[f64], positives: &[usize], denominator: &[usize], tau: f64) -> f64 {
    let num: f64 = positives.iter().map(|&i| (scores[i] / tau).exp()).sum();
    let den: f64 = denominator.iter().map(|&i| (scores[i] / tau).exp()).sum();
    -(num / den).ln()
}

/// Alignment loss by direct summation over videos, nodes and narrations.
/// `nodes[v]` and `texts[v]` hold unit rows already.
pub fn vna(nodes: &[Mat], node_times: &[Vec<f64>], texts: &[Mat], text_times: &[Vec<f64>], alpha: f64, beta: f64, tau: f64) -> f64 {
    let (rp, rn) = (2f64.powf(alpha), 2f64.powf(beta));
    let videos = nodes.len();
    let mut per_dir = [Vec::new(), Vec::new()];
    for v in 0..videos {
        for dir in 0..2 {
            let (anchors, anchor_t, items, item_t) =
                if dir == 0 { (&nodes[v], &node_times[v], &texts, &text_times) } else { (&texts[v], &text_times[v], &nodes, &node_times) };
            let mut terms = Vec::new();
            for (a, &ta) in anchors.iter().zip(anchor_t.iter()) {
                let mut scores = Vec::new();
                let mut pos = Vec::new();
                let mut den = Vec::new();
                for u in 0..videos {
                    for (it, &ti) in items[u].iter().zip(item_t[u].iter()) {
                        let idx = scores.len();
                        scores.push(dot(a, it));
                        let d = (ta - ti).abs();
                        if u != v {
                            den.push(idx);
                        } else if d <= rp {
                            pos.push(idx);
                            den.push(idx);
                        } else if d <= rn {
                            den.push(idx);
                        }
                    }
                }
                if !pos.is_empty() {
                    terms.push(nce_term(&scores, &pos, &den, tau));
                }
            }
            per_dir[dir].push(terms);
        }
    }
    let mut total = 0.0;
    for dir in per_dir {
        let active = dir.iter().filter(|t| !t.is_empty()).count() as f64;
        for terms in dir.iter().filter(|t| !t.is_empty()) {
            total += terms.iter().sum::<f64>() / terms.len() as f64 / active;
        }
    }
    total
}

/// Thread loss over one stage by direct summation; `None` with no partner.
pub fn ft(h: &Mat, assignments: &[usize], tau: f64) -> Option<f64> {
    let n = h.len();
    let mut terms = Vec::new();
    for i in 0..n {
        let scores: Vec<f64> = (0..n).map(|j| dot(&h[i], &h[j])).collect();
        let pos: Vec<usize> = (0..n).filter(|&j| j != i && assignments[j] == assignments[i]).collect();
        if pos.is_empty() {
            continue;
        }
        let den: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        terms.push(nce_term(&scores, &pos, &den, tau));
    }
    (!terms.is_empty()).then(|| terms.iter().sum::<f64>() / terms.len() as f64)
}

pub fn unit_rows(m: &Mat) -> Mat {
    m.iter()
        .map(|r| {
            let n = dot(r, r).sqrt().max(1e-12);
            r.iter().map(|v| v / n).collect()
        })
        .collect()
}

pub fn project(m: &Mat, lin: &Linear) -> Mat {
    m.iter().map(|r| affine(r, lin)).collect()
}

/// Adjusted Rand index by counting agreeing pairs.
pub fn ari(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    let (mut both, mut in_a, mut in_b) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for j in (i + 1)..n {
            let sa = a[i] == a[j];
            let sb = b[i] == b[j];
            in_a += sa as u8 as f64;
            in_b += sb as u8 as f64;
            both += (sa && sb) as u8 as f64;
        }
    }
    let pairs = (n * n.saturating_sub(1) / 2) as f64;
    if pairs == 0.0 {
        return 1.0;
    }
    let expected = in_a * in_b / pairs;
    let max = 0.5 * (in_a + in_b);
    if max == expected {
        return 1.0;
    }
    (both - expected) / (max - expected)
}

/// Minimum over all injective row-to-column maps (rows <= cols) or the
/// transpose, enumerated by recursion.
pub fn brute_force_assignment(cost: &Mat) -> f64 {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    if rows > cols {
        let t: Mat = (0..cols).map(|c| (0..rows).map(|r| cost[r][c]).collect()).collect();
        return brute_force_assignment(&t);
    }
    fn go(cost: &Mat, r: usize, used: &mut Vec<bool>) -> f64 {
        if r == cost.len() {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for c in 0..used.len() {
            if !used[c] {
                used[c] = true;
                best = best.min(cost[r][c] + go(cost, r + 1, used));
                used[c] = false;
            }
        }
        best
    }
    go(cost, 0, &mut vec![false; cols])
}
