//! Independent reference implementations used by the integration tests.

#![allow(dead_code)]

use std::collections::BTreeMap;

/// λ-return as an explicit weighted sum of n-step returns.
pub fn naive_lambda_returns(rewards: &[f64], bootstrap: &[f64], gamma: f64, lambda: f64, terminal: bool) -> Vec<f64> {
    let len = rewards.len();
    (0..len)
        .map(|t| {
            let horizon = len - t;
            let n_step = |n: usize| {
                let mut g = 0.0;
                for k in 0..n {
                    g += gamma.powi(k as i32) * rewards[t + k];
                }
                let last = t + n - 1;
                if !(terminal && last == len - 1) {
                    g += gamma.powi(n as i32) * bootstrap[last];
                }
                g
            };
            let mut total = 0.0;
            for n in 1..horizon {
                total += (1.0 - lambda) * lambda.powi(n as i32 - 1) * n_step(n);
            }
            total + lambda.powi(horizon as i32 - 1) * n_step(horizon)
        })
        .collect()
}

/// Jensen-Shannon distance between two discrete distributions given as maps.
pub fn js_distance_oracle(p: &BTreeMap<Vec<u64>, f64>, q: &BTreeMap<Vec<u64>, f64>, base: f64) -> f64 {
    let mut keys: Vec<&Vec<u64>> = p.keys().chain(q.keys()).collect();
    keys.sort();
    keys.dedup();
    let mut div = 0.0;
    for k in keys {
        let a = p.get(k).copied().unwrap_or(0.0);
        let b = q.get(k).copied().unwrap_or(0.0);
        let m = 0.5 * (a + b);
        if a > 0.0 {
            div += 0.5 * a * (a / m).ln();
        }
        if b > 0.0 {
            div += 0.5 * b * (b / m).ln();
        }
    }
    (div.max(0.0) / base.ln()).sqrt()
}

/// Revisitation pairs `(t', t)` by direct evaluation of the definition on a distance matrix.
pub fn brute_force_revisits(m: &[Vec<f64>], delta: f64) -> Vec<(usize, usize)> {
    let n = m.len();
    let mut out = Vec::new();
    for t in 0..n {
        for earlier in 0..t {
            let mut exceeded = false;
            for tau in earlier + 1..t {
                if m[tau][t] > delta {
                    exceeded = true;
                }
            }
            if exceeded && m[earlier][t] < delta {
                out.push((earlier, t));
            }
        }
    }
    out
}

/// Scaling factor using every buffer entry and a full sort.
pub fn knn_alpha(obs: &[f64], buffer: &[Vec<f64>], k: usize, epsilon: f64) -> f64 {
    let mut d2: Vec<f64> = buffer
        .iter()
        .map(|b| b.iter().zip(obs).map(|(x, y)| (x - y) * (x - y)).sum())
        .collect();
    d2.sort_by(f64::total_cmp);
    let s: f64 = d2.iter().take(k).map(|d| epsilon / (d + epsilon)).sum();
    1.0 / (s.sqrt() + epsilon)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Flattened joint observations of both agents for a list of cell pairs.
pub fn joint_obs(a: (usize, usize), b: (usize, usize)) -> Vec<f64> {
    let (a0, a1, b0, b1) = (a.0 as f64, a.1 as f64, b.0 as f64, b.1 as f64);
    vec![a0, a1, b0, b1, b0, b1, a0, a1]
}

/// Joint observations with both agents inside the given column range of the 6x12 grid.
pub fn region(cols: std::ops::Range<usize>) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for r0 in 0..6 {
        for c0 in cols.clone() {
            for r1 in 0..6 {
                for c1 in cols.clone() {
                    if (r0 + c0 + r1 + c1) % 3 == 0 {
                        out.push(joint_obs((r0, c0), (r1, c1)));
                    }
                }
            }
        }
    }
    out
}
