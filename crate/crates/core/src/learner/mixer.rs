//! Mixing of per-agent utilities into `Q_tot`.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// State-conditioned monotonic mixer.
///
/// Linear hypernetworks map the state features to the mixing weights, which
/// pass through `abs` so that every path from a utility to the output has a
/// non-negative weight:
///
/// ```text
/// z_h   = sum_i |W1(s)|_{h,i} u_i + b1(s)_h
/// Q_tot = sum_h |w2(s)|_h elu(z_h) + b2(s)
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicMixer {
    agents: usize,
    state_dim: usize,
    hidden: usize,
    params: Vec<f64>,
}

struct Layout {
    a1: usize,
    c1: usize,
    b1: usize,
    d1: usize,
    a2: usize,
    c2: usize,
    v: usize,
    e: usize,
    len: usize,
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl MonotonicMixer {
    pub fn new<R: Rng + ?Sized>(agents: usize, state_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let mut m = Self { agents, state_dim, hidden, params: Vec::new() };
        let l = m.layout();
        let bound = 1.0 / ((state_dim + 1) as f64).sqrt();
        m.params = (0..l.len).map(|_| rng.gen_range(-bound..bound)).collect();
        m
    }

    fn layout(&self) -> Layout {
        let (n, s, h) = (self.agents, self.state_dim, self.hidden);
        let a1 = 0;
        let c1 = a1 + h * n * s;
        let b1 = c1 + h * n;
        let d1 = b1 + h * s;
        let a2 = d1 + h;
        let c2 = a2 + h * s;
        let v = c2 + h;
        let e = v + s;
        Layout { a1, c1, b1, d1, a2, c2, v, e, len: e + 1 }
    }

    fn affine(&self, weights: usize, bias: usize, row: usize, state: &[f64]) -> f64 {
        let s = self.state_dim;
        let w = &self.params[weights + row * s..weights + (row + 1) * s];
        self.params[bias + row] + w.iter().zip(state).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn forward(&self, utilities: &[f64], state: &[f64]) -> f64 {
        let l = self.layout();
        let n = self.agents;
        let mut q = self.params[l.e] + self.params[l.v..l.v + self.state_dim].iter().zip(state).map(|(a, b)| a * b).sum::<f64>();
        for h in 0..self.hidden {
            let mut z = self.affine(l.b1, l.d1, h, state);
            for (i, u) in utilities.iter().enumerate() {
                z += self.affine(l.a1, l.c1, h * n + i, state).abs() * u;
            }
            q += self.affine(l.a2, l.c2, h, state).abs() * elu(z);
        }
        q
    }

    /// Returns `(Q_tot, dQ_tot/du)` and accumulates `upstream * dQ_tot/dparams` into `grads`.
    pub fn backward(&self, utilities: &[f64], state: &[f64], upstream: f64, grads: &mut [f64]) -> (f64, Vec<f64>) {
        let l = self.layout();
        let (n, s) = (self.agents, self.state_dim);
        let mut q = self.params[l.e] + self.params[l.v..l.v + s].iter().zip(state).map(|(a, b)| a * b).sum::<f64>();
        grads[l.e] += upstream;
        for k in 0..s {
            grads[l.v + k] += upstream * state[k];
        }
        let mut du = vec![0.0; n];
        for h in 0..self.hidden {
            let pre1: Vec<f64> = (0..n).map(|i| self.affine(l.a1, l.c1, h * n + i, state)).collect();
            let mut z = self.affine(l.b1, l.d1, h, state);
            for (p, u) in pre1.iter().zip(utilities) {
                z += p.abs() * u;
            }
            let pre2 = self.affine(l.a2, l.c2, h, state);
            let w2 = pre2.abs();
            let y = elu(z);
            q += w2 * y;

            let g_pre2 = upstream * y * sign(pre2);
            for k in 0..s {
                grads[l.a2 + h * s + k] += g_pre2 * state[k];
            }
            grads[l.c2 + h] += g_pre2;

            let dz = w2 * elu_grad(z);
            let gz = upstream * dz;
            for k in 0..s {
                grads[l.b1 + h * s + k] += gz * state[k];
            }
            grads[l.d1 + h] += gz;
            for i in 0..n {
                let row = h * n + i;
                let g_pre1 = gz * utilities[i] * sign(pre1[i]);
                for k in 0..s {
                    grads[l.a1 + row * s + k] += g_pre1 * state[k];
                }
                grads[l.c1 + row] += g_pre1;
                du[i] += dz * pre1[i].abs();
            }
        }
        (q, du)
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Mixer {
    /// `Q_tot = sum_i u_i`.
    Additive,
    Monotonic(MonotonicMixer),
}

impl Mixer {
    pub fn mix(&self, utilities: &[f64], state: &[f64]) -> f64 {
        match self {
            Mixer::Additive => utilities.iter().sum(),
            Mixer::Monotonic(m) => m.forward(utilities, state),
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            Mixer::Additive => 0,
            Mixer::Monotonic(m) => m.params.len(),
        }
    }

    /// Returns `(Q_tot, dQ_tot/du)`; parameter gradients scaled by `upstream`
    /// are accumulated into `grads` (length [`Mixer::num_params`]).
    pub fn backward(&self, utilities: &[f64], state: &[f64], upstream: f64, grads: &mut [f64]) -> (f64, Vec<f64>) {
        match self {
            Mixer::Additive => (utilities.iter().sum(), vec![1.0; utilities.len()]),
            Mixer::Monotonic(m) => m.backward(utilities, state, upstream, grads),
        }
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        match self {
            Mixer::Additive => &mut [],
            Mixer::Monotonic(m) => m.params_mut(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn additive_sums() {
        assert_eq!(Mixer::Additive.mix(&[1.5, 2.5], &[]), 4.0);
        assert_eq!(Mixer::Additive.mix(&[0.0, 0.0], &[]), 0.0);
    }

    #[test]
    fn monotonic_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut m = MonotonicMixer::new(2, 4, 6, &mut rng);
        let u = [0.7, -1.3];
        let s = [0.2, 0.9, 0.4, 0.1];
        let mut grads = vec![0.0; m.params.len()];
        let (q, du) = m.backward(&u, &s, 1.0, &mut grads);
        assert!((q - m.forward(&u, &s)).abs() < 1e-12);
        let h = 1e-6;
        for i in 0..m.params.len() {
            let orig = m.params[i];
            m.params[i] = orig + h;
            let up = m.forward(&u, &s);
            m.params[i] = orig - h;
            let down = m.forward(&u, &s);
            m.params[i] = orig;
            assert!(((up - down) / (2.0 * h) - grads[i]).abs() < 1e-6, "param {i}");
        }
        for i in 0..2 {
            let mut up = u;
            up[i] += h;
            let mut down = u;
            down[i] -= h;
            let fd = (m.forward(&up, &s) - m.forward(&down, &s)) / (2.0 * h);
            assert!((fd - du[i]).abs() < 1e-6);
            assert!(du[i] >= 0.0);
        }
    }

    #[test]
    fn raising_a_utility_never_lowers_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mixer = Mixer::Monotonic(MonotonicMixer::new(2, 4, 8, &mut rng));
        for _ in 0..200 {
            let u: Vec<f64> = (0..2).map(|_| rng.gen_range(-50.0..50.0)).collect();
            let s: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..1.0)).collect();
            let base = mixer.mix(&u, &s);
            for i in 0..2 {
                let mut v = u.clone();
                v[i] += 1.0;
                assert!(mixer.mix(&v, &s) >= base);
            }
        }
    }
}
