//! Pairwise fusion over a network of nodes with exactly tracked truth.
//!
//! The harness keeps the joint covariance of all node errors. Every fusion
//! is a linear map of the stacked error vector, so the joint is propagated
//! exactly and each fused covariance can be compared with the truth.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::ci::{solve_ci, CostFunction};
use crate::error::{Error, Result};
use crate::linalg::{loewner_compare, numerical_rank, pd_certify, PsdMatrix, SymMatrix, PSD_TOL};
use crate::problem::{stack_rows, FusionProblem, PartialEstimate, RANK_RTOL};
use crate::sampling::{
    gaussian_matrix, gaussian_vector, random_observation, random_pd, random_psd, seeded_rng,
};
use crate::verify::violation_tolerance;

#[derive(Debug, Clone, PartialEq)]
pub struct NodeState {
    pub id: usize,
    pub h: DMatrix<f64>,
    pub x_hat: DVector<f64>,
    pub p_hat: PsdMatrix,
    /// Indices of the fusion events that wrote into this node.
    pub lineage: Vec<usize>,
}

impl NodeState {
    pub fn rows(&self) -> usize {
        self.h.nrows()
    }

    fn estimate(&self) -> Result<PartialEstimate> {
        PartialEstimate::new(
            self.h.clone(),
            self.x_hat.clone(),
            self.p_hat.as_sym().clone(),
        )
    }
}

/// The true state and the exact joint covariance of all node errors.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub x_true: DVector<f64>,
    joint: SymMatrix,
    dims: Vec<usize>,
}

impl GroundTruth {
    pub fn joint(&self) -> &SymMatrix {
        &self.joint
    }

    fn offset(&self, node: usize) -> usize {
        self.dims[..node].iter().sum()
    }

    /// True error covariance of one node.
    pub fn node_covariance(&self, node: usize) -> SymMatrix {
        let (o, d) = (self.offset(node), self.dims[node]);
        SymMatrix::new(self.joint.as_matrix().view((o, o), (d, d)).into_owned())
            .expect("square block")
    }
}

/// Which components each node observes.
#[derive(Debug, Clone, PartialEq)]
pub enum Observations {
    /// Node `i` observes state component `i mod n`.
    Axes,
    /// Every node observes the full state.
    Full,
    /// Random row counts and Gaussian observation matrices.
    Random,
    /// Every node observes the first component only.
    FirstAxis,
    Explicit(Vec<DMatrix<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub observations: Observations,
    /// Bound on the condition number of each true covariance.
    pub cond_max: f64,
    /// Inflation `P̂i − Pi` has trace at most this fraction of `tr(Pi)`.
    pub inflation: f64,
    /// Weight of the random correlated part of the joint, in `[0, 1)`.
    pub correlation: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            observations: Observations::Axes,
            cond_max: 100.0,
            inflation: 0.5,
            correlation: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub n: usize,
    pub nodes: Vec<NodeState>,
}

fn observation_matrices<R: Rng>(
    rng: &mut R,
    n: usize,
    nodes: usize,
    spec: &Observations,
) -> Result<Vec<DMatrix<f64>>> {
    let unit = |i: usize| DMatrix::from_fn(1, n, |_, j| if j == i { 1.0 } else { 0.0 });
    Ok(match spec {
        Observations::Axes => (0..nodes).map(|i| unit(i % n)).collect(),
        Observations::Full => (0..nodes).map(|_| DMatrix::identity(n, n)).collect(),
        Observations::FirstAxis => (0..nodes).map(|_| unit(0)).collect(),
        Observations::Random => (0..nodes)
            .map(|_| {
                let p = rng.random_range(1..=n);
                random_observation(rng, p, n)
            })
            .collect(),
        Observations::Explicit(hs) => {
            if hs.len() != nodes {
                return Err(Error::InvalidInput(format!(
                    "{} observation matrices for {nodes} nodes",
                    hs.len()
                )));
            }
            hs.clone()
        }
    })
}

/// Builds `nodes` estimates of a random true state.
///
/// The true joint is `D^{1/2} C D^{1/2}` with `D = diag(P1, …, PN)` and `C`
/// a mix of the identity and a random correlation with identity diagonal
/// blocks. Each node reports `P̂i = Pi + Gi` with a random PSD `Gi`.
pub fn init_network(
    n: usize,
    nodes: usize,
    seed: u64,
    noise: &NoiseSpec,
) -> Result<(Network, GroundTruth)> {
    if n == 0 || nodes == 0 {
        return Err(Error::InvalidInput(
            "state dimension and node count must be positive".into(),
        ));
    }
    if !(0.0..1.0).contains(&noise.correlation) || noise.inflation < 0.0 || noise.cond_max < 1.0 {
        return Err(Error::InvalidInput(
            "noise specification out of range".into(),
        ));
    }
    let mut rng = seeded_rng(seed);
    let hs = observation_matrices(&mut rng, n, nodes, &noise.observations)?;
    for (i, h) in hs.iter().enumerate() {
        if h.ncols() != n || h.nrows() == 0 || numerical_rank(h, RANK_RTOL) != h.nrows() {
            return Err(Error::InvalidInput(format!(
                "observation matrix of node {i} must have {n} columns and full row rank"
            )));
        }
    }
    let stacked = hs
        .iter()
        .skip(1)
        .fold(hs[0].clone(), |acc, h| stack_rows(&acc, h));
    let rank = numerical_rank(&stacked, RANK_RTOL);
    if rank < n {
        return Err(Error::Unreachable(format!(
            "all observations together have rank {rank} < {n}"
        )));
    }

    let dims: Vec<usize> = hs.iter().map(|h| h.nrows()).collect();
    let m: usize = dims.iter().sum();
    let truths: Vec<SymMatrix> = dims
        .iter()
        .map(|&d| random_pd(&mut rng, d, noise.cond_max))
        .collect();

    let w = gaussian_matrix(&mut rng, m, m);
    let raw = &w * w.transpose();
    let mut block_scale = DMatrix::zeros(m, m);
    let mut root = DMatrix::zeros(m, m);
    let mut o = 0;
    for (d, p) in dims.iter().zip(&truths) {
        let block = SymMatrix::new(raw.view((o, o), (*d, *d)).into_owned())?;
        let inv_root = crate::linalg::inv_sqrt_pd(&block)?;
        block_scale
            .view_mut((o, o), (*d, *d))
            .copy_from(inv_root.as_matrix());
        let p_root = crate::linalg::sqrt_psd(&pd_certify(p, PSD_TOL)?);
        root.view_mut((o, o), (*d, *d))
            .copy_from(p_root.as_matrix());
        o += d;
    }
    let corr = &block_scale * raw * &block_scale;
    let c = corr * noise.correlation + DMatrix::identity(m, m) * (1.0 - noise.correlation);
    let joint = SymMatrix::new(&root * c * &root)?;

    let x_true = gaussian_vector(&mut rng, n);
    let chol = joint
        .as_matrix()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InternalInconsistency("true joint is not PD".into()))?;
    let errors = chol.l() * gaussian_vector(&mut rng, m);

    let mut states = Vec::with_capacity(nodes);
    let mut o = 0;
    for (i, (h, p)) in hs.into_iter().zip(&truths).enumerate() {
        let d = dims[i];
        let budget = rng.random::<f64>() * noise.inflation * p.trace();
        let p_hat = p.add(&random_psd(&mut rng, d, d).scaled(budget));
        if !loewner_compare(&p_hat, p, PSD_TOL)?.is_ge() {
            return Err(Error::InternalInconsistency(format!(
                "node {i} is not conservative"
            )));
        }
        let x_hat = &h * &x_true + errors.rows(o, d);
        states.push(NodeState {
            id: i,
            h,
            x_hat,
            p_hat: pd_certify(&p_hat, PSD_TOL)?,
            lineage: Vec::new(),
        });
        o += d;
    }
    Ok((
        Network { n, nodes: states },
        GroundTruth {
            x_true,
            joint,
            dims,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Topology {
    /// Node `i + 1` receives from node `i`, cycling along the chain.
    Chain,
    /// Node `k mod N` receives from node `(k + 1) mod N`.
    Ring,
    /// Uniformly random ordered pairs.
    Random { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FusionEvent {
    /// Receives the fused estimate.
    pub a: usize,
    /// Keeps its estimate.
    pub b: usize,
    pub cost: CostFunction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub events: Vec<FusionEvent>,
    pub topology: Topology,
}

impl Schedule {
    pub fn generate(
        topology: Topology,
        nodes: usize,
        events: usize,
        cost: CostFunction,
    ) -> Result<Self> {
        if nodes < 2 {
            return Err(Error::InvalidInput(
                "a schedule needs at least two nodes".into(),
            ));
        }
        let mut rng = match topology {
            Topology::Random { seed } => Some(seeded_rng(seed)),
            _ => None,
        };
        let events = (0..events)
            .map(|k| {
                let (a, b) = match topology {
                    Topology::Chain => {
                        let i = k % (nodes - 1);
                        (i + 1, i)
                    }
                    Topology::Ring => (k % nodes, (k + 1) % nodes),
                    Topology::Random { .. } => {
                        let rng = rng.as_mut().expect("seeded for random topology");
                        let a = rng.random_range(0..nodes);
                        let b = (a + rng.random_range(1..nodes)) % nodes;
                        (a, b)
                    }
                };
                FusionEvent { a, b, cost }
            })
            .collect();
        Ok(Self { events, topology })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventOutcome {
    Fused {
        alpha: f64,
        cost_value: f64,
        /// `λmin(P̂ − P_true)` of the fused estimate.
        margin: f64,
        /// `(det P̂a before, det P̂a after)` when node `a` held a full-state estimate before.
        det_change: Option<(f64, f64)>,
        conservative: bool,
    },
    Skipped {
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub index: usize,
    pub a: usize,
    pub b: usize,
    pub cost: CostFunction,
    pub outcome: EventOutcome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub events: Vec<EventRecord>,
}

impl SimReport {
    pub fn violations(&self) -> usize {
        self.events
            .iter()
            .filter(|e| {
                matches!(
                    e.outcome,
                    EventOutcome::Fused {
                        conservative: false,
                        ..
                    }
                )
            })
            .count()
    }

    pub fn fused(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e.outcome, EventOutcome::Fused { .. }))
            .count()
    }

    /// One line per event plus a summary line; floats use 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            let _ = write!(out, "event={} a={} b={} cost={}", e.index, e.a, e.b, e.cost);
            match &e.outcome {
                EventOutcome::Fused {
                    alpha,
                    cost_value,
                    margin,
                    conservative,
                    ..
                } => {
                    let _ = writeln!(
                        out,
                        " alpha={alpha:.16e} cost_value={cost_value:.16e} margin={margin:.16e} status={}",
                        if *conservative { "ok" } else { "violation" }
                    );
                }
                EventOutcome::Skipped { reason } => {
                    let _ = writeln!(out, " status=skipped reason=\"{reason}\"");
                }
            }
        }
        let _ = writeln!(
            out,
            "summary events={} fused={} skipped={} violations={}",
            self.events.len(),
            self.fused(),
            self.events.len() - self.fused(),
            self.violations()
        );
        out
    }
}

/// Runs every event in order, fusing node `b` into node `a` by covariance
/// intersection and propagating the exact joint.
///
/// Events whose stacked observations do not have rank `n` are skipped and
/// recorded as such.
pub fn run_schedule(
    network: &mut Network,
    truth: &mut GroundTruth,
    schedule: &Schedule,
) -> Result<SimReport> {
    let count = network.nodes.len();
    let n = network.n;
    let mut records = Vec::with_capacity(schedule.events.len());
    for (index, ev) in schedule.events.iter().enumerate() {
        let fail = |reason: String| Error::Schedule { index, reason };
        if ev.a >= count || ev.b >= count {
            return Err(fail(format!("node index out of range ({} nodes)", count)));
        }
        if ev.a == ev.b {
            return Err(fail("a node cannot fuse with itself".into()));
        }
        let record = |outcome| EventRecord {
            index,
            a: ev.a,
            b: ev.b,
            cost: ev.cost,
            outcome,
        };
        let (na, nb) = (&network.nodes[ev.a], &network.nodes[ev.b]);
        let rank = numerical_rank(&stack_rows(&na.h, &nb.h), RANK_RTOL);
        if rank < n {
            records.push(record(EventOutcome::Skipped {
                reason: format!("stacked observations have rank {rank} < {n}"),
            }));
            continue;
        }
        let problem = FusionProblem::new(
            na.estimate().map_err(|e| fail(e.to_string()))?,
            nb.estimate().map_err(|e| fail(e.to_string()))?,
        )
        .map_err(|e| fail(e.to_string()))?;
        let result = solve_ci(&problem, ev.cost).map_err(|e| fail(e.to_string()))?;

        let m: usize = truth.dims.iter().sum();
        let new_dims: Vec<usize> = truth
            .dims
            .iter()
            .enumerate()
            .map(|(i, &d)| if i == ev.a { n } else { d })
            .collect();
        let m_new: usize = new_dims.iter().sum();
        let mut t = DMatrix::zeros(m_new, m);
        let (mut row, mut col) = (0, 0);
        for (i, &d) in truth.dims.iter().enumerate() {
            if i == ev.a {
                t.view_mut((row, truth.offset(ev.a)), (n, d))
                    .copy_from(&result.k1);
                t.view_mut((row, truth.offset(ev.b)), (n, truth.dims[ev.b]))
                    .copy_from(&result.k2);
            } else {
                t.view_mut((row, col), (d, d)).fill_with_identity();
            }
            row += new_dims[i];
            col += d;
        }
        truth.joint = truth.joint.congruence(&t);
        truth.dims = new_dims;

        let p_true = truth.node_covariance(ev.a);
        let slack = result.p_hat.as_sym().sub(&p_true);
        let margin = slack.min_eigenvalue();
        let conservative = margin >= -violation_tolerance(result.p_hat.as_sym());

        let node = &mut network.nodes[ev.a];
        let full_before = node.h.shape() == (n, n) && node.h == DMatrix::identity(n, n);
        let det_change = full_before.then(|| {
            (
                node.p_hat.as_sym().determinant(),
                result.p_hat.as_sym().determinant(),
            )
        });
        node.h = DMatrix::identity(n, n);
        node.x_hat = result.fused_x.clone();
        node.p_hat = result.p_hat.clone();
        node.lineage.push(index);

        records.push(record(EventOutcome::Fused {
            alpha: result.alpha,
            cost_value: result.cost_value,
            margin,
            det_change,
            conservative,
        }));
    }
    Ok(SimReport { events: records })
}
