//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

/// Exact Shapley values of `f` at `x` with absent features drawn from each
/// background row, by enumerating all subsets.
pub fn shapley_brute(f: impl Fn(&[f64]) -> f64, x: &[f64], background: &[Vec<f64>]) -> Vec<f64> {
    let n = x.len();
    let value = |mask: usize| -> f64 {
        background
            .iter()
            .map(|b| {
                let z: Vec<f64> = (0..n)
                    .map(|i| if mask >> i & 1 == 1 { x[i] } else { b[i] })
                    .collect();
                f(&z)
            })
            .sum::<f64>()
            / background.len() as f64
    };
    let fact = |k: usize| (1..=k).map(|v| v as f64).product::<f64>();
    let mut phi = vec![0.0; n];
    for mask in 0..1usize << n {
        let s = mask.count_ones() as usize;
        let v = value(mask);
        for (i, p) in phi.iter_mut().enumerate() {
            if mask >> i & 1 == 0 {
                let w = fact(s) * fact(n - s - 1) / fact(n);
                *p += w * (value(mask | 1 << i) - v);
            }
        }
    }
    phi
}

fn entropy(counts: impl Iterator<Item = usize>, n: usize) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n as f64;
            -p * p.ln()
        })
        .sum()
}

/// Homogeneity, completeness and V-measure from raw label vectors.
pub fn hcv_oracle(labels: &[u32], clusters: &[usize]) -> (f64, f64, f64) {
    let n = labels.len();
    let mut joint: BTreeMap<(u32, usize), usize> = BTreeMap::new();
    let mut by_label: BTreeMap<u32, usize> = BTreeMap::new();
    let mut by_cluster: BTreeMap<usize, usize> = BTreeMap::new();
    for (&l, &k) in labels.iter().zip(clusters) {
        *joint.entry((l, k)).or_default() += 1;
        *by_label.entry(l).or_default() += 1;
        *by_cluster.entry(k).or_default() += 1;
    }
    let h_c = entropy(by_label.values().copied(), n);
    let h_k = entropy(by_cluster.values().copied(), n);
    // H(C|K) = -sum n_ck/n * ln(n_ck/n_k)
    let mut h_c_given_k = 0.0;
    let mut h_k_given_c = 0.0;
    for (&(l, k), &c) in &joint {
        let p = c as f64 / n as f64;
        h_c_given_k -= p * (c as f64 / by_cluster[&k] as f64).ln();
        h_k_given_c -= p * (c as f64 / by_label[&l] as f64).ln();
    }
    let h = if h_c == 0.0 {
        1.0
    } else {
        1.0 - h_c_given_k / h_c
    };
    let c = if h_k == 0.0 {
        1.0
    } else {
        1.0 - h_k_given_c / h_k
    };
    let v = if h + c == 0.0 {
        0.0
    } else {
        2.0 * h * c / (h + c)
    };
    (h, c, v)
}

/// Bilinear resampling with half-pixel centres and edge clamping, written
/// pixel by pixel from the textbook formula.
pub fn bilinear_oracle(src: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let at = |y: isize, x: isize| {
        let y = y.clamp(0, h as isize - 1) as usize;
        let x = x.clamp(0, w as isize - 1) as usize;
        src[y * w + x]
    };
    let mut out = vec![0.0; oh * ow];
    for oy in 0..oh {
        for ox in 0..ow {
            let sy = ((oy as f64 + 0.5) * h as f64 / oh as f64 - 0.5).max(0.0);
            let sx = ((ox as f64 + 0.5) * w as f64 / ow as f64 - 0.5).max(0.0);
            let (y0, x0) = (sy.floor(), sx.floor());
            let (fy, fx) = (sy - y0, sx - x0);
            let (y0, x0) = (y0 as isize, x0 as isize);
            out[oy * ow + ox] = (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1))
                + fy * ((1.0 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
        }
    }
    out
}

/// Per-class (precision, recall, f1, support) and accuracy by direct counting.
pub fn report_oracle(
    y_true: &[&str],
    y_pred: &[&str],
    classes: &[&str],
) -> (Vec<(f64, f64, f64, usize)>, f64) {
    let per_class = classes
        .iter()
        .map(|c| {
            let tp = y_true
                .iter()
                .zip(y_pred)
                .filter(|(t, p)| *t == c && *p == c)
                .count();
            let fp = y_true
                .iter()
                .zip(y_pred)
                .filter(|(t, p)| *t != c && *p == c)
                .count();
            let fnn = y_true
                .iter()
                .zip(y_pred)
                .filter(|(t, p)| *t == c && *p != c)
                .count();
            let div = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
            let p = div(tp, tp + fp);
            let r = div(tp, tp + fnn);
            let f = if p + r == 0.0 {
                0.0
            } else {
                2.0 * p * r / (p + r)
            };
            (p, r, f, tp + fnn)
        })
        .collect();
    let correct = y_true.iter().zip(y_pred).filter(|(t, p)| t == p).count();
    (per_class, correct as f64 / y_true.len() as f64)
}
