//! Brute-force enumeration reference for the partition function, marginals,
//! and mutual information. Deliberately artless: a flat sum over every
//! joint configuration, used to pin down what the faster paths must return.
//! Exposed through the CLI (`exact --brute`) so results can be checked
//! without trusting the elimination engine.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::inference::{mi_of_joint, JointTable};
use crate::model::{FactorNetwork, VarId};

/// Cap on the number of joint states enumeration will walk.
#[derive(Debug, Clone, Copy)]
pub struct EnumerationBudget {
    pub max_states: usize,
}

impl Default for EnumerationBudget {
    fn default() -> Self {
        EnumerationBudget {
            max_states: 1 << 24,
        }
    }
}

fn joint_states(net: &FactorNetwork, budget: &EnumerationBudget) -> Result<usize> {
    let mut states = 1usize;
    for v in &net.variables {
        states = states
            .checked_mul(v.cardinality)
            .filter(|&s| s <= budget.max_states)
            .ok_or(Error::BudgetExceeded {
                states: usize::MAX,
                budget: budget.max_states,
            })?;
    }
    Ok(states)
}

/// Log weight of one full configuration: sum of entry logs plus scales.
/// Returns negative infinity when any entry is zero.
fn config_log_weight(net: &FactorNetwork, assignment: &[usize]) -> f64 {
    let mut log_w = 0.0;
    for f in &net.factors {
        let mut idx = 0usize;
        for &v in &f.scope {
            idx = idx * net.cardinality(v) + assignment[v];
        }
        let t = f.table[idx];
        if t == 0.0 {
            return f64::NEG_INFINITY;
        }
        log_w += t.ln() + f.log_scale;
    }
    log_w
}

fn next_assignment(assignment: &mut [usize], cards: &[usize]) -> bool {
    for pos in (0..assignment.len()).rev() {
        assignment[pos] += 1;
        if assignment[pos] < cards[pos] {
            return true;
        }
        assignment[pos] = 0;
    }
    false
}

/// Exact log partition function by direct transcription of the defining
/// sum, accumulated against a running maximum so that widely scaled terms
/// do not overflow.
pub fn brute_log_partition(net: &FactorNetwork, budget: &EnumerationBudget) -> Result<f64> {
    joint_states(net, budget)?;
    let cards = net.cardinalities();
    let mut assignment = vec![0usize; net.num_variables()];
    let mut running_max = f64::NEG_INFINITY;
    let mut scaled_sum = 0.0f64;
    loop {
        let lw = config_log_weight(net, &assignment);
        if lw > f64::NEG_INFINITY {
            if lw > running_max {
                scaled_sum = scaled_sum * (running_max - lw).exp() + 1.0;
                running_max = lw;
            } else {
                scaled_sum += (lw - running_max).exp();
            }
        }
        if !next_assignment(&mut assignment, &cards) {
            break;
        }
    }
    if running_max == f64::NEG_INFINITY {
        return Err(Error::ZeroPartition);
    }
    Ok(running_max + scaled_sum.ln())
}

/// Exact normalized joint over `query` by enumeration.
pub fn brute_marginal(
    net: &FactorNetwork,
    query: &BTreeSet<VarId>,
    budget: &EnumerationBudget,
) -> Result<JointTable> {
    joint_states(net, budget)?;
    for &v in query {
        if v >= net.num_variables() {
            return Err(Error::Index(format!("query names unknown variable {v}")));
        }
    }
    let cards = net.cardinalities();
    let scope: Vec<VarId> = query.iter().cloned().collect();
    let cells: usize = scope.iter().map(|&v| cards[v]).product();

    // First pass pins the running max; second accumulates per query cell.
    let log_z = brute_log_partition(net, budget)?;
    let mut probs = vec![0.0f64; cells];
    let mut assignment = vec![0usize; net.num_variables()];
    loop {
        let lw = config_log_weight(net, &assignment);
        if lw > f64::NEG_INFINITY {
            let mut cell = 0usize;
            for &v in &scope {
                cell = cell * cards[v] + assignment[v];
            }
            probs[cell] += (lw - log_z).exp();
        }
        if !next_assignment(&mut assignment, &cards) {
            break;
        }
    }
    let total: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= total;
    }
    Ok(JointTable {
        scope,
        probs,
        log_norm: log_z,
    })
}

/// Exact mutual information in nats between disjoint sets.
pub fn brute_mi(
    net: &FactorNetwork,
    a: &BTreeSet<VarId>,
    b: &BTreeSet<VarId>,
    budget: &EnumerationBudget,
) -> Result<f64> {
    if !a.is_disjoint(b) {
        return Err(Error::Scope(
            "mutual information requires disjoint variable sets".into(),
        ));
    }
    let union: BTreeSet<VarId> = a.union(b).cloned().collect();
    let joint = brute_marginal(net, &union, budget)?;
    Ok(mi_of_joint(&joint, &net.cardinalities(), a, b))
}
