//! Reference implementations used as test oracles. Written independently of
//! the library: plain loops, no shared helpers.
#![allow(dead_code)]

use eada_core::{Model, Sample64};

/// `ln(1 + r)` by Kahan's correction, accurate for small `r`.
pub fn kahan_log1p(r: f64) -> f64 {
    let u = 1.0 + r;
    if u == 1.0 {
        r
    } else {
        u.ln() * r / (u - 1.0)
    }
}

/// Softmax of `-e` with a max shift.
pub fn softmax_neg(e: &[f64]) -> Vec<f64> {
    let m = e.iter().cloned().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = e.iter().map(|&v| (-(v - m)).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|v| v / z).collect()
}

/// `-log Σ exp(-e)`.
pub fn free_energy(e: &[f64]) -> f64 {
    let (k, m) = e.iter().cloned().enumerate().fold((0, f64::INFINITY), |a, (i, v)| if v < a.1 { (i, v) } else { a });
    let tail: f64 = e.iter().enumerate().filter(|&(i, _)| i != k).map(|(_, &v)| (-(v - m)).exp()).sum();
    m - kahan_log1p(tail)
}

/// `-ln p_y` of the softmax distribution; near `p_y = 1` the complement is
/// summed directly so small losses keep their relative precision.
pub fn cross_entropy(e: &[f64], y: usize) -> f64 {
    let p = softmax_neg(e);
    if p[y] > 0.5 {
        let rest: f64 = p.iter().enumerate().filter(|&(c, _)| c != y).map(|(_, &v)| v).sum();
        -kahan_log1p(-rest)
    } else {
        -p[y].ln()
    }
}

/// Shannon entropy of the softmax distribution.
pub fn entropy(e: &[f64]) -> f64 {
    softmax_neg(e).iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum()
}

/// Energies of a linear model read back through its public layer fields.
pub fn linear_energies(model: &Model, x: &[f64]) -> Vec<f64> {
    let layer = &model.layers()[0];
    (0..layer.outputs)
        .map(|c| {
            let mut acc = layer.bias.as_ref().map_or(0.0, |b| b[c]);
            for j in 0..layer.inputs {
                acc += layer.weights[c * layer.inputs + j] * x[j];
            }
            acc
        })
        .collect()
}

/// Energies of either architecture through the public layer fields.
pub fn energies(model: &Model, x: &[f64]) -> Vec<f64> {
    let layers = model.layers();
    let affine = |k: usize, input: &[f64]| -> Vec<f64> {
        let l = &layers[k];
        (0..l.outputs)
            .map(|r| {
                let mut acc = l.bias.as_ref().map_or(0.0, |b| b[r]);
                for j in 0..l.inputs {
                    acc += l.weights[r * l.inputs + j] * input[j];
                }
                acc
            })
            .collect()
    };
    if layers.len() == 1 {
        affine(0, x)
    } else {
        let h: Vec<f64> = affine(0, x).into_iter().map(f64::tanh).collect();
        affine(1, &h)
    }
}

/// Indices ordered by `key` descending, ties by ascending index.
pub fn rank_desc(keys: &[(usize, f64)]) -> Vec<usize> {
    let mut v = keys.to_vec();
    // insertion sort: obviously correct for the tiny pools used here
    for i in 1..v.len() {
        let mut j = i;
        while j > 0 && (v[j].1 > v[j - 1].1 || (v[j].1 == v[j - 1].1 && v[j].0 < v[j - 1].0)) {
            v.swap(j, j - 1);
            j -= 1;
        }
    }
    v.into_iter().map(|p| p.0).collect()
}

/// Every size-`k` subset of `items`, in lexicographic order.
pub fn subsets(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    if items.len() < k {
        return vec![];
    }
    let mut out = Vec::new();
    for (i, &first) in items.iter().enumerate() {
        for mut rest in subsets(&items[i + 1..], k - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// The unique size-`k` subset whose members all beat every non-member under
/// (score descending, index ascending), found by exhaustive search.
pub fn brute_top_k(scored: &[(usize, f64)], k: usize) -> Vec<usize> {
    let items: Vec<usize> = scored.iter().map(|p| p.0).collect();
    let score = |i: usize| scored.iter().find(|p| p.0 == i).unwrap().1;
    let beats = |a: usize, b: usize| score(a) > score(b) || (score(a) == score(b) && a < b);
    let winners: Vec<Vec<usize>> = subsets(&items, k)
        .into_iter()
        .filter(|s| s.iter().all(|&a| items.iter().filter(|i| !s.contains(i)).all(|&b| beats(a, b))))
        .collect();
    assert_eq!(winners.len(), 1, "top-k subset must be unique");
    winners.into_iter().next().unwrap()
}

pub fn features(samples: &[Sample64]) -> Vec<Vec<f64>> {
    samples.iter().map(|s| s.features.clone()).collect()
}
