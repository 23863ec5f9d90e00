//! Edge-by-edge correction of the simplified partition function.
//!
//! For each deleted equivalence edge, two scalars computed in the
//! simplified model drive the corrections:
//!
//!   z_ij = sum_x theta_i(x) * theta_j(x)       (divisor)
//!   y_ij = sum_x Pr'(X_i = x | X_j = x)        (multiplier)
//!
//! EC-Z divides the simplified partition function by the product of the
//! z terms; EC-G additionally multiplies by the product of the y terms.
//! Either correction is exact for a single deleted edge when its
//! assumptions hold (EC-Z needs the endpoints independent, EC-G does not),
//! and on a tree-structured simplified model EC-Z coincides with the Bethe
//! free energy approximation, which this module can also evaluate
//! independently from node and edge beliefs.

use std::collections::{BTreeMap, BTreeSet};

use crate::edbp::{EdgeParameters, ParametrizedModel};
use crate::error::{Error, Result};
use crate::inference::{log_partition, marginal, mutual_information};
use crate::model::{EquivalenceEdge, FactorId, FactorNetwork, VarId};

/// Per-edge correction quantities, all in natural logs except `mi`.
#[derive(Debug, Clone)]
pub struct CorrectionTerms {
    pub edge_index: usize,
    pub edge: EquivalenceEdge,
    /// Endpoints mapped back to the unextended model, for reporting.
    pub original: (VarId, VarId),
    pub log_z: f64,
    pub log_y: f64,
    /// Mutual information between the edge endpoints in the simplified
    /// model, in nats.
    pub mi: f64,
}

/// The assembled corrections for one parametrized model.
#[derive(Debug, Clone)]
pub struct CorrectionReport {
    pub log_z_prime: f64,
    pub terms: Vec<CorrectionTerms>,
    pub log_z_ecz: f64,
    pub log_z_ecg: f64,
    /// Deleted edges ordered by descending correction magnitude `|log y|`,
    /// the order in which partial corrections pay off fastest.
    pub partial_order: Vec<usize>,
    /// Partial EC-G estimates along `partial_order`: entry `k` applies the
    /// first `k` y-factors on top of EC-Z, so the curve starts at EC-Z and
    /// ends at EC-G.
    pub partial_curve: Vec<f64>,
    pub n_deleted: usize,
}

impl CorrectionReport {
    pub fn term(&self, edge_index: usize) -> Option<&CorrectionTerms> {
        self.terms.iter().find(|t| t.edge_index == edge_index)
    }

    /// The dual-energy form of the corrected partition function:
    /// `(n - 1) log Z' - sum_ij log Z'_ij`, where each `Z'_ij` is the
    /// partition function with the single edge (i, j) recovered and all
    /// other parameters held fixed. Algebraically `-log Z_ecg`; reported
    /// for inspection.
    pub fn dual_energy(&self) -> f64 {
        let n = self.n_deleted as f64;
        let sum_single: f64 = self
            .terms
            .iter()
            .map(|t| self.log_z_prime + t.log_y - t.log_z)
            .sum();
        (n - 1.0) * self.log_z_prime - sum_single
    }
}

/// The EC-Z divisor for one edge.
pub fn z_term(params: &EdgeParameters) -> f64 {
    params
        .theta_i
        .iter()
        .zip(&params.theta_j)
        .map(|(a, b)| a * b)
        .sum()
}

/// The EC-G multiplier for one edge, from the exact pair joint in the
/// simplified model.
pub fn y_term(model: &ParametrizedModel, edge_index: usize) -> Result<f64> {
    let edge = model.edge(edge_index);
    let query: BTreeSet<VarId> = [edge.i, edge.j].into_iter().collect();
    let joint = marginal(model.net_prime(), &query)?;
    // Clones are appended after originals, so the sorted scope is (i, j).
    debug_assert_eq!(joint.scope, vec![edge.i, edge.j]);
    let card = edge.card;
    let mut y = 0.0;
    for x in 0..card {
        let p_j: f64 = (0..card).map(|xi| joint.probs[xi * card + x]).sum();
        if p_j <= 0.0 {
            return Err(Error::ZeroConditional(format!(
                "variable {} has zero mass in state {x}",
                edge.j
            )));
        }
        y += joint.probs[x * card + x] / p_j;
    }
    Ok(y)
}

/// Compute every per-edge term and assemble the corrected estimates.
/// Expects the model at (or near) a fixed point.
pub fn correct(model: &ParametrizedModel) -> Result<CorrectionReport> {
    let log_z_prime = log_partition(model.net_prime())?;
    let mut terms = Vec::with_capacity(model.deleted().len());
    for &e in model.deleted() {
        let edge = model.edge(e);
        let z = z_term(model.parameters(e));
        let y = y_term(model, e)?;
        let mi = mutual_information(
            model.net_prime(),
            &[edge.i].into_iter().collect(),
            &[edge.j].into_iter().collect(),
        )?;
        terms.push(CorrectionTerms {
            edge_index: e,
            edge,
            original: model.base().original_edge(e),
            log_z: z.ln(),
            log_y: y.ln(),
            mi,
        });
    }
    let sum_log_z: f64 = terms.iter().map(|t| t.log_z).sum();
    let sum_log_y: f64 = terms.iter().map(|t| t.log_y).sum();
    let log_z_ecz = log_z_prime - sum_log_z;
    let log_z_ecg = log_z_ecz + sum_log_y;
    let mut partial_order: Vec<usize> = terms.iter().map(|t| t.edge_index).collect();
    let magnitude: BTreeMap<usize, f64> = terms
        .iter()
        .map(|t| (t.edge_index, t.log_y.abs()))
        .collect();
    partial_order.sort_by(|a, b| {
        magnitude[b]
            .partial_cmp(&magnitude[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(b))
    });
    let n_deleted = terms.len();
    let mut report = CorrectionReport {
        log_z_prime,
        terms,
        log_z_ecz,
        log_z_ecg,
        partial_order: partial_order.clone(),
        partial_curve: Vec::new(),
        n_deleted,
    };
    report.partial_curve = (0..=n_deleted)
        .map(|k| partial_ec_g(&report, &partial_order, k))
        .collect();
    Ok(report)
}

/// Partial EC-G: apply the y-factors of the first `k` edges of `order` on
/// top of the EC-Z estimate. Factors commute, so the value depends only on
/// the prefix as a set.
pub fn partial_ec_g(report: &CorrectionReport, order: &[usize], k: usize) -> f64 {
    let mut value = report.log_z_ecz;
    for &e in &order[..k] {
        let term = report
            .term(e)
            .expect("order must list deleted edges from this report");
        value += term.log_y;
    }
    value
}

/// Log partition function of the model with this single edge recovered and
/// all other edge parameters held fixed: `log Z' + log y_ij - log z_ij`.
pub fn single_edge_recovered_log_z(report: &CorrectionReport, edge_index: usize) -> f64 {
    let term = report
        .term(edge_index)
        .expect("edge must be deleted in this report");
    report.log_z_prime + term.log_y - term.log_z
}

/// Node and edge beliefs extracted from a simplified model, keyed by the
/// unextended network's variable and factor ids. Edge beliefs are laid out
/// in the original factor's scope order.
#[derive(Debug, Clone)]
pub struct BetheBeliefs {
    pub node: BTreeMap<VarId, Vec<f64>>,
    pub edge: BTreeMap<FactorId, Vec<f64>>,
}

/// Read the beliefs a tree-structured parametrization induces for an
/// original pairwise network: node marginals for original variables, and
/// for each original edge the pair joint over its (possibly cloned) scope
/// in the simplified model. These are exactly the iterative-BP beliefs at
/// the corresponding fixed point.
pub fn ibp_beliefs(
    model: &ParametrizedModel,
    original: &FactorNetwork,
) -> Result<BetheBeliefs> {
    let base = model.base();
    if base.net.factors.len() < original.factors.len() {
        return Err(Error::Shape(
            "extended model does not derive from this network".into(),
        ));
    }
    let net_prime = model.net_prime();
    let mut node = BTreeMap::new();
    for v in 0..original.num_variables() {
        let m = marginal(net_prime, &[v].into_iter().collect())?;
        node.insert(v, m.probs);
    }
    let mut edge = BTreeMap::new();
    for (fid, f) in original.factors.iter().enumerate() {
        if f.scope.len() != 2 {
            continue;
        }
        let ext_scope = &base.net.factors[fid].scope;
        for (pos, &v) in ext_scope.iter().enumerate() {
            if base.original_of(v) != f.scope[pos] {
                return Err(Error::Shape(format!(
                    "factor {fid} scope does not map back to the original network"
                )));
            }
        }
        let (a, b) = (ext_scope[0], ext_scope[1]);
        let joint = marginal(net_prime, &[a, b].into_iter().collect())?;
        let cards = net_prime.cardinalities();
        let (ca, cb) = (cards[a], cards[b]);
        let mut probs = vec![0.0; ca * cb];
        // marginal() returns ascending scope; transpose if needed so the
        // layout follows the factor's scope order.
        if joint.scope == vec![a, b] {
            probs.copy_from_slice(&joint.probs);
        } else {
            for xa in 0..ca {
                for xb in 0..cb {
                    probs[xa * cb + xb] = joint.probs[xb * ca + xa];
                }
            }
        }
        edge.insert(fid, probs);
    }
    Ok(BetheBeliefs { node, edge })
}

/// The Bethe free energy of a pairwise network under supplied beliefs:
/// average energy minus approximate entropy,
///
///   U = - sum_edges E[log psi(X_i, X_j)] - sum_nodes E[log psi(X_i)]
///   H = sum_edges H(X_i, X_j) - sum_nodes (n_i - 1) H(X_i)
///
/// with `n_i` the neighbor count in this network and the `0 log 0 = 0`
/// convention. A belief resting on a zero potential entry is an error.
pub fn bethe_free_energy(original: &FactorNetwork, beliefs: &BetheBeliefs) -> Result<f64> {
    let mut neighbors: Vec<BTreeSet<VarId>> = vec![BTreeSet::new(); original.num_variables()];
    let mut pair_entropy_done: BTreeSet<(VarId, VarId)> = BTreeSet::new();
    let mut energy = 0.0;
    let mut entropy = 0.0;
    let cards = original.cardinalities();

    for (fid, f) in original.factors.iter().enumerate() {
        match f.scope.len() {
            1 => {
                let v = f.scope[0];
                let b = beliefs
                    .node
                    .get(&v)
                    .ok_or_else(|| Error::Shape(format!("missing node belief for {v}")))?;
                energy -= expected_log(b, &f.table, f.log_scale)?;
            }
            2 => {
                let (u, w) = (f.scope[0], f.scope[1]);
                neighbors[u].insert(w);
                neighbors[w].insert(u);
                let b = beliefs
                    .edge
                    .get(&fid)
                    .ok_or_else(|| Error::Shape(format!("missing edge belief for factor {fid}")))?;
                energy -= expected_log(b, &f.table, f.log_scale)?;
                let key = (u.min(w), u.max(w));
                if pair_entropy_done.insert(key) {
                    entropy += entropy_of(b);
                }
            }
            _ => {
                return Err(Error::Shape(format!(
                    "factor {fid} has arity {}, Bethe energies need a pairwise network",
                    f.scope.len()
                )))
            }
        }
    }
    for v in 0..original.num_variables() {
        let b = beliefs
            .node
            .get(&v)
            .ok_or_else(|| Error::Shape(format!("missing node belief for {v}")))?;
        if b.len() != cards[v] {
            return Err(Error::Shape(format!("node belief for {v} has wrong length")));
        }
        let n_i = neighbors[v].len() as f64;
        entropy -= (n_i - 1.0) * entropy_of(b);
    }
    Ok(energy - entropy)
}

fn expected_log(belief: &[f64], table: &[f64], log_scale: f64) -> Result<f64> {
    if belief.len() != table.len() {
        return Err(Error::Shape(
            "belief and potential table lengths differ".into(),
        ));
    }
    let mut e = 0.0;
    for (&b, &t) in belief.iter().zip(table) {
        if b <= 0.0 {
            continue;
        }
        if t <= 0.0 {
            return Err(Error::Support(format!(
                "belief mass {b} on a zero potential entry"
            )));
        }
        e += b * (t.ln() + log_scale);
    }
    Ok(e)
}

fn entropy_of(belief: &[f64]) -> f64 {
    belief
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum()
}
