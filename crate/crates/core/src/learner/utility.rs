//! Per-agent utility functions `Q_i(history, action)`.
//!
//! A history is summarised by the agent's latest observation and its previous
//! action, which is what both backends condition on.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::maze::Action;
use crate::nn::{Activation, Mlp, RmsProp};

pub type Utilities = [f64; Action::COUNT];

/// Exact identity of an (observation, previous action) pair.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HistoryKey {
    obs: SmallVec<[u64; 8]>,
    prev: u8,
}

impl HistoryKey {
    pub fn new(obs: &[f64], prev: Option<Action>) -> Self {
        Self {
            obs: obs.iter().map(|v| v.to_bits()).collect(),
            prev: prev.map_or(Action::COUNT as u8, |a| a.index() as u8),
        }
    }

    fn prev_action(&self) -> Option<Action> {
        Action::from_index(self.prev as usize)
    }
}

/// Lookup tables, one per agent, zero-initialised.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "TableDump", from = "TableDump")]
pub struct TabularUtilities {
    tables: Vec<HashMap<HistoryKey, Utilities>>,
}

#[derive(Serialize, Deserialize)]
struct TableEntry {
    obs: Vec<f64>,
    prev: Option<Action>,
    values: Utilities,
}

#[derive(Serialize, Deserialize)]
struct TableDump {
    agents: Vec<Vec<TableEntry>>,
}

impl From<TabularUtilities> for TableDump {
    fn from(t: TabularUtilities) -> Self {
        let agents = t
            .tables
            .into_iter()
            .map(|table| {
                let mut entries: Vec<TableEntry> = table
                    .into_iter()
                    .map(|(k, values)| TableEntry {
                        obs: k.obs.iter().map(|b| f64::from_bits(*b)).collect(),
                        prev: k.prev_action(),
                        values,
                    })
                    .collect();
                entries.sort_by(|a, b| {
                    a.obs
                        .partial_cmp(&b.obs)
                        .unwrap_or(std::cmp::Ordering::Equal)
                        .then(a.prev.cmp(&b.prev))
                });
                entries
            })
            .collect();
        TableDump { agents }
    }
}

impl From<TableDump> for TabularUtilities {
    fn from(d: TableDump) -> Self {
        let tables = d
            .agents
            .into_iter()
            .map(|entries| {
                entries
                    .into_iter()
                    .map(|e| (HistoryKey::new(&e.obs, e.prev), e.values))
                    .collect()
            })
            .collect();
        TabularUtilities { tables }
    }
}

impl TabularUtilities {
    pub fn new(num_agents: usize) -> Self {
        Self { tables: vec![HashMap::new(); num_agents] }
    }

    pub fn get(&self, agent: usize, key: &HistoryKey) -> Utilities {
        self.tables[agent].get(key).copied().unwrap_or([0.0; Action::COUNT])
    }

    pub fn len(&self, agent: usize) -> usize {
        self.tables[agent].len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.iter().all(HashMap::is_empty)
    }
}

/// One small network per agent over `[observation, one-hot previous action]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpUtilities {
    nets: Vec<Mlp>,
    /// Observations are multiplied by this before entering the network.
    input_scale: f64,
}

impl MlpUtilities {
    pub fn new<R: Rng + ?Sized>(
        num_agents: usize,
        obs_dim: usize,
        hidden: usize,
        input_scale: f64,
        rng: &mut R,
    ) -> Self {
        let sizes = [obs_dim + Action::COUNT + 1, hidden, hidden, Action::COUNT];
        let nets = (0..num_agents).map(|_| Mlp::new(&sizes, Activation::Relu, 1.0, rng)).collect();
        Self { nets, input_scale }
    }

    fn input(&self, obs: &[f64], prev: Option<Action>) -> Vec<f64> {
        let mut x: Vec<f64> = obs.iter().map(|v| v * self.input_scale).collect();
        let mut onehot = [0.0; Action::COUNT + 1];
        onehot[prev.map_or(Action::COUNT, Action::index)] = 1.0;
        x.extend_from_slice(&onehot);
        x
    }

    fn values(&self, agent: usize, obs: &[f64], prev: Option<Action>) -> Utilities {
        let out = self.nets[agent].forward(&self.input(obs, prev));
        let mut u = [0.0; Action::COUNT];
        u.copy_from_slice(&out);
        u
    }

    fn num_params(&self) -> usize {
        self.nets.iter().map(|n| n.params().len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum UtilityBackend {
    Tabular(TabularUtilities),
    Mlp(MlpUtilities),
}

/// Gradient of the loss with respect to the chosen utility of one agent at one step.
#[derive(Debug, Clone)]
pub struct UtilityGrad<'a> {
    pub agent: usize,
    pub obs: &'a [f64],
    pub prev: Option<Action>,
    pub action: Action,
    /// `d loss / d Q_i(history, action)` for the batch-mean loss.
    pub grad: f64,
}

/// Optimizer state matching a backend.
#[derive(Debug, Clone)]
pub enum UtilityOptimizer {
    /// Each touched entry moves by `step_size` times its mean residual
    /// over the occurrences in the batch.
    Tabular { step_size: f64 },
    Mlp(RmsProp),
}

impl UtilityBackend {
    pub fn values(&self, agent: usize, obs: &[f64], prev: Option<Action>) -> Utilities {
        match self {
            UtilityBackend::Tabular(t) => t.get(agent, &HistoryKey::new(obs, prev)),
            UtilityBackend::Mlp(m) => m.values(agent, obs, prev),
        }
    }

    pub fn optimizer(&self, learning_rate: f64, tabular_step_size: f64) -> UtilityOptimizer {
        match self {
            UtilityBackend::Tabular(_) => UtilityOptimizer::Tabular { step_size: tabular_step_size },
            UtilityBackend::Mlp(m) => UtilityOptimizer::Mlp(RmsProp::new(learning_rate, m.num_params())),
        }
    }

    /// Applies one optimizer step from per-sample gradients of the batch-mean loss.
    ///
    /// `per_sample_scale` converts a batch-mean gradient back into a
    /// per-sample residual (the tabular step works on residuals).
    pub fn apply(&mut self, grads: &[UtilityGrad<'_>], optimizer: &mut UtilityOptimizer, per_sample_scale: f64) {
        match (self, optimizer) {
            (UtilityBackend::Tabular(t), UtilityOptimizer::Tabular { step_size }) => {
                let mut acc: HashMap<(usize, HistoryKey), ([f64; Action::COUNT], [u32; Action::COUNT])> =
                    HashMap::new();
                for g in grads {
                    let slot = acc
                        .entry((g.agent, HistoryKey::new(g.obs, g.prev)))
                        .or_insert(([0.0; Action::COUNT], [0; Action::COUNT]));
                    slot.0[g.action.index()] += -g.grad * per_sample_scale;
                    slot.1[g.action.index()] += 1;
                }
                for ((agent, key), (sums, counts)) in acc {
                    let entry = t.tables[agent].entry(key).or_insert([0.0; Action::COUNT]);
                    for a in 0..Action::COUNT {
                        if counts[a] > 0 {
                            entry[a] += *step_size * sums[a] / counts[a] as f64;
                        }
                    }
                }
            }
            (UtilityBackend::Mlp(m), UtilityOptimizer::Mlp(opt)) => {
                let sizes: Vec<usize> = m.nets.iter().map(|n| n.params().len()).collect();
                let mut flat = vec![0.0; sizes.iter().sum()];
                let offsets: Vec<usize> = sizes
                    .iter()
                    .scan(0, |acc, s| {
                        let o = *acc;
                        *acc += s;
                        Some(o)
                    })
                    .collect();
                for g in grads {
                    let net = &m.nets[g.agent];
                    let trace = net.forward_trace(&m.input(g.obs, g.prev));
                    let mut grad_out = [0.0; Action::COUNT];
                    grad_out[g.action.index()] = g.grad;
                    let off = offsets[g.agent];
                    net.backward(&trace, &grad_out, &mut flat[off..off + sizes[g.agent]]);
                }
                let mut params: Vec<f64> =
                    m.nets.iter().flat_map(|n| n.params().iter().copied()).collect();
                opt.step(&mut params, &flat);
                for (net, (off, len)) in m.nets.iter_mut().zip(offsets.iter().zip(&sizes)) {
                    net.params_mut().copy_from_slice(&params[*off..off + len]);
                }
            }
            _ => panic!("optimizer does not match utility backend"),
        }
    }
}
