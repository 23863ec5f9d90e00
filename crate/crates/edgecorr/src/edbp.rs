//! Edge-deletion belief propagation: choose a set of equivalence edges to
//! delete, replace each with a pair of unary edge parameters, and iterate
//! the derivative update
//!
//!   theta(x_i) <- alpha * dZ'/dtheta(x_j)
//!   theta(x_j) <- alpha * dZ'/dtheta(x_i)
//!
//! to a fixed point, with each derivative computed by exact inference in
//! the simplified model. At a fixed point the simplified distribution is
//! invariant to the normalization constants: both endpoint marginals equal
//! theta(x_i) * theta(x_j) / z_ij.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::inference::{derivative_with_order, marginal, min_fill_order};
use crate::model::{EquivalenceEdge, ExtendedModel, Factor, FactorId, FactorNetwork, VarId};

/// The two unary parameter vectors standing in for a deleted equivalence
/// edge. Both are kept normalized to sum one; any other scaling changes
/// only the simplified partition function, never its distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeParameters {
    pub edge_index: usize,
    pub theta_i: Vec<f64>,
    pub theta_j: Vec<f64>,
}

impl EdgeParameters {
    pub fn uniform(edge_index: usize, card: usize) -> Self {
        EdgeParameters {
            edge_index,
            theta_i: vec![1.0 / card as f64; card],
            theta_j: vec![1.0 / card as f64; card],
        }
    }
}

/// Iteration settings. The defaults reproduce four printed digits on the
/// worked examples with room to spare.
#[derive(Debug, Clone)]
pub struct EdbpConfig {
    pub tolerance: f64,
    pub max_iters: usize,
    /// Blend factor for damped updates: `new <- damping * old + (1 - damping) * new`.
    pub damping: f64,
    pub schedule: Schedule,
}

impl Default for EdbpConfig {
    fn default() -> Self {
        EdbpConfig {
            tolerance: 1e-10,
            max_iters: 1000,
            damping: 0.0,
            schedule: Schedule::Sequential,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    /// Sweep deleted edges in ascending index, installing each pair of
    /// updates before moving on.
    Sequential,
    /// Compute every update from the same state, then install all.
    Synchronous,
}

/// Outcome of an iteration run. Non-convergence is reported, not raised,
/// so batch drivers can drop such instances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceReport {
    pub converged: bool,
    pub iterations: usize,
    pub final_residual: f64,
}

/// An extended model with a chosen deletion set and current edge
/// parameters, plus the assembled simplified network: deleted equivalence
/// factors removed, two unary parameter factors added per deleted edge,
/// every recovered equivalence edge still present as an identity factor.
#[derive(Debug, Clone)]
pub struct ParametrizedModel {
    base: ExtendedModel,
    deleted: Vec<usize>,
    params: BTreeMap<usize, EdgeParameters>,
    net_prime: FactorNetwork,
    theta_pos: BTreeMap<usize, (FactorId, FactorId)>,
    /// Elimination orders planned once per assembly, one per deleted-edge
    /// endpoint; parameter updates change table values but never the
    /// graph, so the plans stay valid for the model's whole lifetime.
    derivative_orders: BTreeMap<VarId, Vec<VarId>>,
}

/// Start a parametrization from uniform edge parameters.
pub fn init_parameters(base: ExtendedModel, deleted: BTreeSet<usize>) -> ParametrizedModel {
    let params = deleted
        .iter()
        .map(|&e| (e, EdgeParameters::uniform(e, base.equiv_edges[e].card)))
        .collect();
    ParametrizedModel::with_parameters(base, deleted, params)
}

impl ParametrizedModel {
    /// Assemble the simplified network for a deletion set and explicit
    /// parameters (used for warm starts after edge recovery).
    pub fn with_parameters(
        base: ExtendedModel,
        deleted: BTreeSet<usize>,
        params: BTreeMap<usize, EdgeParameters>,
    ) -> ParametrizedModel {
        assert!(deleted.iter().all(|&e| e < base.equiv_edges.len()));
        assert!(deleted.iter().all(|e| params.contains_key(e)));
        let removed: BTreeSet<FactorId> =
            deleted.iter().map(|&e| base.equiv_factor[e]).collect();
        let mut factors: Vec<Factor> = base
            .net
            .factors
            .iter()
            .enumerate()
            .filter(|(fid, _)| !removed.contains(fid))
            .map(|(_, f)| f.clone())
            .collect();
        let mut theta_pos = BTreeMap::new();
        for &e in &deleted {
            let edge = base.equiv_edges[e];
            let p = &params[&e];
            theta_pos.insert(e, (factors.len(), factors.len() + 1));
            factors.push(Factor::unary(edge.i, p.theta_i.clone()));
            factors.push(Factor::unary(edge.j, p.theta_j.clone()));
        }
        let net_prime = FactorNetwork {
            variables: base.net.variables.clone(),
            factors,
        };
        let mut derivative_orders = BTreeMap::new();
        for &e in &deleted {
            let edge = base.equiv_edges[e];
            for v in [edge.i, edge.j] {
                derivative_orders.entry(v).or_insert_with(|| {
                    min_fill_order(&net_prime, &[v].into_iter().collect()).order
                });
            }
        }
        ParametrizedModel {
            base,
            deleted: deleted.into_iter().collect(),
            params,
            net_prime,
            theta_pos,
            derivative_orders,
        }
    }

    pub fn base(&self) -> &ExtendedModel {
        &self.base
    }

    pub fn net_prime(&self) -> &FactorNetwork {
        &self.net_prime
    }

    pub fn deleted(&self) -> &[usize] {
        &self.deleted
    }

    pub fn parameters(&self, edge: usize) -> &EdgeParameters {
        &self.params[&edge]
    }

    pub fn all_parameters(&self) -> &BTreeMap<usize, EdgeParameters> {
        &self.params
    }

    pub fn edge(&self, edge: usize) -> EquivalenceEdge {
        self.base.equiv_edges[edge]
    }

    /// Factor ids of the two parameter factors inside the simplified net.
    pub fn theta_factors(&self, edge: usize) -> (FactorId, FactorId) {
        self.theta_pos[&edge]
    }

    /// One derivative update for a deleted edge, computed from the current
    /// simplified network and normalized to sum one. Does not install.
    pub fn update_edge(&self, edge: usize) -> Result<EdgeParameters> {
        let e = self.edge(edge);
        let (fi, fj) = self.theta_factors(edge);
        let d_j = derivative_with_order(&self.net_prime, fj, e.j, &self.derivative_orders[&e.j]);
        let d_i = derivative_with_order(&self.net_prime, fi, e.i, &self.derivative_orders[&e.i]);
        let theta_i = normalize(&d_j.table).ok_or_else(|| {
            Error::DegenerateUpdate(format!("zero derivative for edge {edge} side i"))
        })?;
        let theta_j = normalize(&d_i.table).ok_or_else(|| {
            Error::DegenerateUpdate(format!("zero derivative for edge {edge} side j"))
        })?;
        Ok(EdgeParameters {
            edge_index: edge,
            theta_i,
            theta_j,
        })
    }

    /// Install parameters for a deleted edge, updating the simplified
    /// network tables in place.
    pub fn set_parameters(&mut self, new: EdgeParameters) {
        let edge = new.edge_index;
        let (fi, fj) = self.theta_pos[&edge];
        self.net_prime.factors[fi].table = new.theta_i.clone();
        self.net_prime.factors[fi].log_scale = 0.0;
        self.net_prime.factors[fj].table = new.theta_j.clone();
        self.net_prime.factors[fj].log_scale = 0.0;
        self.params.insert(edge, new);
    }
}

fn normalize(table: &[f64]) -> Option<Vec<f64>> {
    let total: f64 = table.iter().sum();
    if total <= 0.0 {
        return None;
    }
    Some(table.iter().map(|&t| t / total).collect())
}

fn damped(old: &[f64], new: &[f64], damping: f64) -> Vec<f64> {
    if damping == 0.0 {
        return new.to_vec();
    }
    old.iter()
        .zip(new)
        .map(|(&o, &n)| damping * o + (1.0 - damping) * n)
        .collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Iterate updates until the largest parameter change in a sweep drops
/// below tolerance, or the iteration cap is hit.
pub fn edbp_iterate(model: &mut ParametrizedModel, config: &EdbpConfig) -> Result<ConvergenceReport> {
    assert!(config.tolerance > 0.0);
    if model.deleted.is_empty() {
        return Ok(ConvergenceReport {
            converged: true,
            iterations: 0,
            final_residual: 0.0,
        });
    }
    let edges: Vec<usize> = model.deleted.clone();
    let mut residual = f64::INFINITY;
    for iter in 1..=config.max_iters {
        residual = 0.0;
        match config.schedule {
            Schedule::Sequential => {
                for &e in &edges {
                    let fresh = model.update_edge(e)?;
                    let old = model.parameters(e).clone();
                    let next = EdgeParameters {
                        edge_index: e,
                        theta_i: damped(&old.theta_i, &fresh.theta_i, config.damping),
                        theta_j: damped(&old.theta_j, &fresh.theta_j, config.damping),
                    };
                    residual = residual
                        .max(max_abs_diff(&old.theta_i, &next.theta_i))
                        .max(max_abs_diff(&old.theta_j, &next.theta_j));
                    model.set_parameters(next);
                }
            }
            Schedule::Synchronous => {
                let fresh: Vec<EdgeParameters> = edges
                    .iter()
                    .map(|&e| model.update_edge(e))
                    .collect::<Result<_>>()?;
                for f in fresh {
                    let e = f.edge_index;
                    let old = model.parameters(e).clone();
                    let next = EdgeParameters {
                        edge_index: e,
                        theta_i: damped(&old.theta_i, &f.theta_i, config.damping),
                        theta_j: damped(&old.theta_j, &f.theta_j, config.damping),
                    };
                    residual = residual
                        .max(max_abs_diff(&old.theta_i, &next.theta_i))
                        .max(max_abs_diff(&old.theta_j, &next.theta_j));
                    model.set_parameters(next);
                }
            }
        }
        if residual < config.tolerance {
            return Ok(ConvergenceReport {
                converged: true,
                iterations: iter,
                final_residual: residual,
            });
        }
    }
    Ok(ConvergenceReport {
        converged: false,
        iterations: config.max_iters,
        final_residual: residual,
    })
}

/// Largest violation, over deleted edges and states, of the fixed-point
/// marginal identities: endpoint marginals must agree with each other and
/// with `theta_i(x) * theta_j(x) / z_ij`.
pub fn fixed_point_check(model: &ParametrizedModel) -> Result<f64> {
    let mut worst = 0.0f64;
    for &e in model.deleted() {
        let edge = model.edge(e);
        let p = model.parameters(e);
        let z: f64 = p.theta_i.iter().zip(&p.theta_j).map(|(a, b)| a * b).sum();
        let mi = marginal(&model.net_prime, &[edge.i].into_iter().collect())?;
        let mj = marginal(&model.net_prime, &[edge.j].into_iter().collect())?;
        for x in 0..edge.card {
            let invariant = p.theta_i[x] * p.theta_j[x] / z;
            worst = worst
                .max((mi.probs[x] - invariant).abs())
                .max((mi.probs[x] - mj.probs[x]).abs());
        }
    }
    Ok(worst)
}
