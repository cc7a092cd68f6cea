//! Seeded generators: stochastic-block-model classification tasks and
//! transport trajectories with known ground-truth flows.
//!
//! Every generator is a pure function of its spec (including the seed); the
//! draw order is fixed, so identical specs produce bit-identical output.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::graph::{EdgeField, Graph, NodeField};
use crate::transport::{self, Trajectory};

/// Stochastic-block-model spec: `blocks` contiguous communities (remainder
/// nodes fall in the last one), unit-weight Bernoulli edges with
/// probability `p_in` inside a block and `p_out` across, and Gaussian node
/// features whose first coordinate carries a per-class mean offset.
#[derive(Debug, Clone)]
pub struct SbmSpec {
    pub n: usize,
    pub blocks: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    /// Distance between adjacent class means on the first feature
    /// coordinate (for two blocks: means at ±separation/2).
    pub feature_separation: f64,
    pub seed: u64,
}

impl SbmSpec {
    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidConfig("SBM needs at least one node"));
        }
        if self.blocks == 0 || self.blocks > self.n {
            return Err(Error::InvalidConfig("block count must be in 1..=n"));
        }
        for (name, p) in [("p_in", self.p_in), ("p_out", self.p_out)] {
            if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParameter { name, value: p });
            }
        }
        if self.p_in < self.p_out {
            return Err(Error::InvalidConfig(
                "community structure requires p_in >= p_out",
            ));
        }
        if self.feature_dim == 0 {
            return Err(Error::InvalidConfig("feature_dim must be at least 1"));
        }
        if !self.feature_separation.is_finite() || self.feature_separation < 0.0 {
            return Err(Error::InvalidParameter {
                name: "feature_separation",
                value: self.feature_separation,
            });
        }
        Ok(())
    }

    fn block_of(&self, node: usize) -> usize {
        let base = self.n / self.blocks;
        if base == 0 {
            return self.blocks - 1;
        }
        (node / base).min(self.blocks - 1)
    }
}

/// Generated SBM instance. Disconnected samples are legal and only flagged.
#[derive(Debug, Clone)]
pub struct SbmSample {
    pub graph: Graph,
    pub labels: Vec<usize>,
    pub features: NodeField,
    pub connected: bool,
}

/// Draws a graph, labels and features from the spec (edges first, then
/// features, in fixed node order).
pub fn generate_sbm(spec: &SbmSpec) -> Result<SbmSample> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let labels: Vec<usize> = (0..spec.n).map(|i| spec.block_of(i)).collect();

    let mut edges = Vec::new();
    for i in 0..spec.n {
        for j in i + 1..spec.n {
            let p = if labels[i] == labels[j] {
                spec.p_in
            } else {
                spec.p_out
            };
            if rng.random_range(0.0..1.0) < p {
                edges.push((i, j, 1.0));
            }
        }
    }
    let graph = Graph::build(spec.n, &edges)?;

    let mut values = vec![0.0f64; spec.n * spec.feature_dim];
    let offset = (spec.blocks - 1) as f64 / 2.0;
    for i in 0..spec.n {
        for c in 0..spec.feature_dim {
            let mean = if c == 0 {
                (labels[i] as f64 - offset) * spec.feature_separation
            } else {
                0.0
            };
            values[i * spec.feature_dim + c] = mean + rng.sample::<f64, _>(StandardNormal);
        }
    }
    let features = NodeField::from_values(spec.n, spec.feature_dim, values)?;
    let connected = graph.is_connected();
    Ok(SbmSample {
        graph,
        labels,
        features,
        connected,
    })
}

/// Where the transport graph comes from.
#[derive(Debug, Clone)]
pub enum GraphSource {
    Explicit(Graph),
    /// Erdős–Rényi with unit weights, re-drawn until connected.
    RandomConnected { n: usize, edge_probability: f64 },
}

/// Per-edge ground-truth conductivity distribution.
#[derive(Debug, Clone)]
pub enum AlphaSpec {
    Constant(f64),
    Uniform { lo: f64, hi: f64 },
}

/// Initial potential.
#[derive(Debug, Clone)]
pub enum InitialPotential {
    /// All mass on one node.
    Spike { node: usize, mass: f64 },
    /// Independent uniform values.
    Uniform { lo: f64, hi: f64 },
}

/// Spec for a synthetic transport dataset.
#[derive(Debug, Clone)]
pub struct TransportSpec {
    pub graph: GraphSource,
    pub alpha: AlphaSpec,
    pub u0: InitialPotential,
    /// Number of simulation steps.
    pub steps: usize,
    /// Simulation step size; `None` picks 0.8 × the stability bound.
    pub dt: Option<f64>,
    /// Observation stride: every `stride`-th state (plus t = 0) is observed.
    pub stride: usize,
    /// Standard deviation of Gaussian noise added to observations only.
    pub noise_sigma: f64,
    pub seed: u64,
}

/// Synthetic transport dataset: noisy observations plus clean ground truth.
#[derive(Debug, Clone)]
pub struct TransportData {
    pub graph: Graph,
    /// Observed (noisy) trajectory, subsampled by the stride.
    pub trajectory: Trajectory,
    /// Noise-free observations at the same times.
    pub clean: Trajectory,
    /// Per-observation-interval flow increments accumulated from the
    /// simulator; they satisfy the interval conservation identity against
    /// the clean observations exactly.
    pub ground_truth_flows: Vec<EdgeField>,
    pub alpha_true: EdgeField,
}

const CONNECTED_ATTEMPTS: usize = 1000;

fn build_graph(source: &GraphSource, rng: &mut ChaCha8Rng) -> Result<Graph> {
    match source {
        GraphSource::Explicit(g) => Ok(g.clone()),
        GraphSource::RandomConnected {
            n,
            edge_probability,
        } => {
            if *n == 0 {
                return Err(Error::InvalidConfig("graph needs at least one node"));
            }
            if !edge_probability.is_finite() || !(0.0..=1.0).contains(edge_probability) {
                return Err(Error::InvalidParameter {
                    name: "edge_probability",
                    value: *edge_probability,
                });
            }
            for _ in 0..CONNECTED_ATTEMPTS {
                let mut edges = Vec::new();
                for i in 0..*n {
                    for j in i + 1..*n {
                        if rng.random_range(0.0..1.0) < *edge_probability {
                            edges.push((i, j, 1.0));
                        }
                    }
                }
                let g = Graph::build(*n, &edges)?;
                if g.is_connected() {
                    return Ok(g);
                }
            }
            Err(Error::InvalidConfig(
                "failed to draw a connected graph; raise edge_probability",
            ))
        }
    }
}

/// Simulates transport with known conductivities, subsamples observations by
/// the stride, and adds Gaussian noise to the observations only.
pub fn generate_transport_data(spec: &TransportSpec) -> Result<TransportData> {
    if spec.stride == 0 {
        return Err(Error::InvalidParameter {
            name: "stride",
            value: 0.0,
        });
    }
    if !spec.noise_sigma.is_finite() || spec.noise_sigma < 0.0 {
        return Err(Error::InvalidParameter {
            name: "noise_sigma",
            value: spec.noise_sigma,
        });
    }
    if spec.steps == 0 {
        return Err(Error::InvalidParameter {
            name: "steps",
            value: 0.0,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let graph = build_graph(&spec.graph, &mut rng)?;
    let n = graph.node_count();

    let alpha_values: Vec<f64> = match &spec.alpha {
        AlphaSpec::Constant(v) => {
            if !v.is_finite() || *v < 0.0 {
                return Err(Error::InvalidParameter {
                    name: "alpha",
                    value: *v,
                });
            }
            vec![*v; graph.edge_count()]
        }
        AlphaSpec::Uniform { lo, hi } => {
            if !(lo.is_finite() && hi.is_finite()) || *lo < 0.0 || hi < lo {
                return Err(Error::InvalidConfig("alpha range must be 0 <= lo <= hi"));
            }
            (0..graph.edge_count())
                .map(|_| {
                    if hi > lo {
                        rng.random_range(*lo..*hi)
                    } else {
                        *lo
                    }
                })
                .collect()
        }
    };
    let alpha_true = EdgeField::symmetric(&graph, 1, &alpha_values)?;

    let u0 = match &spec.u0 {
        InitialPotential::Spike { node, mass } => {
            if *node >= n {
                return Err(Error::IndexOutOfRange { index: *node, n });
            }
            let mut u = NodeField::zeros(n, 1);
            u.set(*node, 0, *mass);
            u
        }
        InitialPotential::Uniform { lo, hi } => {
            if !(lo.is_finite() && hi.is_finite()) || hi < lo {
                return Err(Error::InvalidConfig("u0 range must satisfy lo <= hi"));
            }
            let values = (0..n)
                .map(|_| {
                    if hi > lo {
                        rng.random_range(*lo..*hi)
                    } else {
                        *lo
                    }
                })
                .collect();
            NodeField::from_values(n, 1, values)?
        }
    };

    let dt = match spec.dt {
        Some(v) => v,
        None => {
            let bound = transport::max_stable_dt(&graph, &alpha_true);
            if bound.is_finite() {
                0.8 * bound
            } else {
                1.0
            }
        }
    };
    let (full, step_flows) = transport::simulate(&graph, &u0, &alpha_true, spec.steps, dt)?;

    // Subsample: observation k sits at simulation step k·stride.
    let obs_count = spec.steps / spec.stride + 1;
    let mut times = Vec::with_capacity(obs_count);
    let mut clean_states = Vec::with_capacity(obs_count);
    for k in 0..obs_count {
        let idx = k * spec.stride;
        times.push(full.times[idx]);
        clean_states.push(full.states[idx].clone());
    }
    // Accumulate per-step increments into per-interval ground-truth flows.
    let mut flows = Vec::with_capacity(obs_count - 1);
    for k in 0..obs_count - 1 {
        let mut acc = EdgeField::zeros(&graph, 1);
        for step in k * spec.stride..(k + 1) * spec.stride {
            for (slot, v) in acc.values_mut().iter_mut().enumerate() {
                *v += step_flows[step].values()[slot];
            }
        }
        flows.push(acc);
    }

    let mut observed_states = clean_states.clone();
    if spec.noise_sigma > 0.0 {
        for s in observed_states.iter_mut() {
            for v in s.values_mut() {
                *v += spec.noise_sigma * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }

    Ok(TransportData {
        graph,
        trajectory: Trajectory {
            times: times.clone(),
            states: observed_states,
        },
        clean: Trajectory {
            times,
            states: clean_states,
        },
        ground_truth_flows: flows,
        alpha_true,
    })
}
