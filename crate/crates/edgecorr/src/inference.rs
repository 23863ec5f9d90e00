//! Exact inference by variable elimination: log partition function,
//! normalized joint marginals over small query sets, factor-excluded
//! derivative queries, and mutual information.
//!
//! All intermediate tables carry a `log_scale`, renormalized to a unit
//! maximum after every product and marginalization. Keeping the scale per
//! table rather than per entry preserves the exact zeros of equivalence
//! factors, which per-entry logs cannot represent.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::model::{decode, Factor, FactorId, FactorNetwork, VarId};

/// A variable elimination order over the non-query variables, with the
/// width the greedy simulation encountered (largest intermediate scope
/// minus one).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EliminationOrder {
    pub order: Vec<VarId>,
    pub induced_width: usize,
}

/// An exact normalized joint distribution over a small query scope.
/// `log_norm` is the log of the mass that was divided out, i.e. the log
/// partition function of the queried network.
#[derive(Debug, Clone)]
pub struct JointTable {
    pub scope: Vec<VarId>,
    pub probs: Vec<f64>,
    pub log_norm: f64,
}

impl JointTable {
    /// Marginalize onto a subset of this table's scope (ascending ids).
    pub fn marginal_onto_with_cards(
        &self,
        cards: &[usize],
        sub: &BTreeSet<VarId>,
    ) -> JointTable {
        let keep: Vec<VarId> = self.scope.iter().cloned().filter(|v| sub.contains(v)).collect();
        let out_len: usize = keep.iter().map(|&v| cards[v]).product();
        let mut probs = vec![0.0; out_len];
        let mut assignment = vec![0usize; self.scope.len()];
        for (idx, &p) in self.probs.iter().enumerate() {
            decode(idx, &self.scope, cards, &mut assignment);
            let mut out = 0usize;
            for (pos, &v) in self.scope.iter().enumerate() {
                if sub.contains(&v) {
                    out = out * cards[v] + assignment[pos];
                }
            }
            probs[out] += p;
        }
        JointTable {
            scope: keep,
            probs,
            log_norm: self.log_norm,
        }
    }
}

/// Greedy min-fill elimination order over the variables not in `keep`.
/// Ties break on the lowest variable id, so orders are reproducible.
pub fn min_fill_order(net: &FactorNetwork, keep: &BTreeSet<VarId>) -> EliminationOrder {
    let n = net.num_variables();
    // Dense adjacency; the models here stay small enough that n^2 bits of
    // bookkeeping beats set churn in the inner fill loop.
    let mut adjacent = vec![false; n * n];
    let connect = |matrix: &mut [bool], u: VarId, w: VarId| {
        matrix[u * n + w] = true;
        matrix[w * n + u] = true;
    };
    for f in &net.factors {
        for (a, &u) in f.scope.iter().enumerate() {
            for &w in &f.scope[a + 1..] {
                connect(&mut adjacent, u, w);
            }
        }
    }
    let mut alive = vec![true; n];
    let eliminable = (0..n).filter(|v| !keep.contains(v)).count();
    let mut order = Vec::with_capacity(eliminable);
    let mut induced_width = 0usize;
    let mut nbrs: Vec<VarId> = Vec::with_capacity(n);
    for _ in 0..eliminable {
        let mut best: Option<(usize, VarId)> = None;
        for v in 0..n {
            if !alive[v] || keep.contains(&v) {
                continue;
            }
            nbrs.clear();
            nbrs.extend((0..n).filter(|&u| alive[u] && adjacent[v * n + u]));
            let mut fill = 0usize;
            for (a, &u) in nbrs.iter().enumerate() {
                for &w in &nbrs[a + 1..] {
                    if !adjacent[u * n + w] {
                        fill += 1;
                    }
                }
            }
            if best.is_none_or(|(best_fill, best_v)| (fill, v) < (best_fill, best_v)) {
                best = Some((fill, v));
            }
        }
        let (_, v) = best.expect("an eliminable variable remains");
        nbrs.clear();
        nbrs.extend((0..n).filter(|&u| alive[u] && adjacent[v * n + u]));
        induced_width = induced_width.max(nbrs.len());
        for (a, &u) in nbrs.iter().enumerate() {
            for &w in &nbrs[a + 1..] {
                connect(&mut adjacent, u, w);
            }
        }
        alive[v] = false;
        order.push(v);
    }
    EliminationOrder { order, induced_width }
}

/// Multiply two factors into their scope union (first operand's scope
/// order, then the second's new variables).
fn multiply(a: &Factor, b: &Factor, cards: &[usize]) -> Factor {
    let mut scope = a.scope.clone();
    for &v in &b.scope {
        if !scope.contains(&v) {
            scope.push(v);
        }
    }
    let len: usize = scope.iter().map(|&v| cards[v]).product();
    let a_pos: Vec<Option<usize>> = scope
        .iter()
        .map(|v| a.scope.iter().position(|s| s == v))
        .collect();
    let b_pos: Vec<Option<usize>> = scope
        .iter()
        .map(|v| b.scope.iter().position(|s| s == v))
        .collect();
    let mut table = vec![0.0; len];
    let mut assignment = vec![0usize; scope.len()];
    let mut a_assign = vec![0usize; a.scope.len()];
    let mut b_assign = vec![0usize; b.scope.len()];
    for (idx, slot) in table.iter_mut().enumerate() {
        decode(idx, &scope, cards, &mut assignment);
        for (pos, m) in a_pos.iter().enumerate() {
            if let Some(p) = m {
                a_assign[*p] = assignment[pos];
            }
        }
        for (pos, m) in b_pos.iter().enumerate() {
            if let Some(p) = m {
                b_assign[*p] = assignment[pos];
            }
        }
        *slot = a.entry(&a_assign, cards) * b.entry(&b_assign, cards);
    }
    let mut out = Factor {
        scope,
        table,
        log_scale: a.log_scale + b.log_scale,
    };
    out.rescale_max();
    out
}

/// Sum a variable out of a factor.
fn sum_out(f: &Factor, var: VarId, cards: &[usize]) -> Factor {
    let pos = f
        .scope
        .iter()
        .position(|&v| v == var)
        .expect("var must be in scope");
    let scope: Vec<VarId> = f.scope.iter().cloned().filter(|&v| v != var).collect();
    let len: usize = scope.iter().map(|&v| cards[v]).product();
    let mut table = vec![0.0; len];
    let mut assignment = vec![0usize; f.scope.len()];
    for (idx, &t) in f.table.iter().enumerate() {
        decode(idx, &f.scope, cards, &mut assignment);
        let mut out = 0usize;
        for (p, &v) in f.scope.iter().enumerate() {
            if p != pos {
                out = out * cards[v] + assignment[p];
            }
        }
        table[out] += t;
    }
    let mut out = Factor {
        scope,
        table,
        log_scale: f.log_scale,
    };
    out.rescale_max();
    out
}

/// Eliminate every variable outside `keep` and return the single factor
/// over `keep` (ascending scope) that the surviving pieces multiply to.
/// Variables that appear in no factor contribute their cardinality, per the
/// defining sum over all joint configurations.
fn eliminate_to_scope(
    cards: &[usize],
    factors: &[Factor],
    keep: &BTreeSet<VarId>,
    order: &[VarId],
) -> Factor {
    let mut pool: Vec<Factor> = factors.to_vec();
    let mut extra_log_scale = 0.0f64;
    for &v in order {
        let (bucket, rest): (Vec<Factor>, Vec<Factor>) =
            pool.into_iter().partition(|f| f.scope.contains(&v));
        pool = rest;
        if bucket.is_empty() {
            // Unconstrained variable: summing 1 over its states.
            extra_log_scale += (cards[v] as f64).ln();
            continue;
        }
        let mut product = bucket[0].clone();
        for f in &bucket[1..] {
            product = multiply(&product, f, cards);
        }
        pool.push(sum_out(&product, v, cards));
    }
    let scope: Vec<VarId> = keep.iter().cloned().collect();
    let mut result = Factor {
        scope: scope.clone(),
        table: vec![1.0; scope.iter().map(|&v| cards[v]).product()],
        log_scale: extra_log_scale,
    };
    for f in &pool {
        result = multiply(&result, f, cards);
    }
    // multiply() keeps the first operand's scope order, which is `scope`.
    debug_assert_eq!(result.scope, scope);
    result
}

fn run_query(net: &FactorNetwork, keep: &BTreeSet<VarId>) -> Factor {
    let order = min_fill_order(net, keep);
    eliminate_to_scope(&net.cardinalities(), &net.factors, keep, &order.order)
}

/// Log partition function, exact up to floating point.
pub fn log_partition(net: &FactorNetwork) -> Result<f64> {
    let result = run_query(net, &BTreeSet::new());
    scalar_log(&result)
}

/// Log partition function under a caller-supplied elimination order, which
/// must cover every variable. Exists so order-invariance is testable.
pub fn log_partition_with_order(net: &FactorNetwork, order: &EliminationOrder) -> Result<f64> {
    let keep = BTreeSet::new();
    let covered: BTreeSet<VarId> = order.order.iter().cloned().collect();
    if covered.len() != order.order.len() || covered != (0..net.num_variables()).collect() {
        return Err(Error::Index(
            "elimination order must cover each variable exactly once".into(),
        ));
    }
    let result = eliminate_to_scope(&net.cardinalities(), &net.factors, &keep, &order.order);
    scalar_log(&result)
}

fn scalar_log(result: &Factor) -> Result<f64> {
    debug_assert_eq!(result.table.len(), 1);
    let mass = result.table[0];
    if mass <= 0.0 {
        return Err(Error::ZeroPartition);
    }
    Ok(result.log_scale + mass.ln())
}

/// Exact normalized joint marginal over `query`, scope in ascending id
/// order; `log_norm` is the network's log partition function.
pub fn marginal(net: &FactorNetwork, query: &BTreeSet<VarId>) -> Result<JointTable> {
    for &v in query {
        if v >= net.num_variables() {
            return Err(Error::Index(format!("query names unknown variable {v}")));
        }
    }
    let result = run_query(net, query);
    let total: f64 = result.table.iter().sum();
    if total <= 0.0 {
        return Err(Error::ZeroPartition);
    }
    Ok(JointTable {
        scope: result.scope,
        probs: result.table.iter().map(|&t| t / total).collect(),
        log_norm: result.log_scale + total.ln(),
    })
}

/// The derivative of the partition function with respect to a unary
/// factor: entry `x` of the returned factor (times `exp(log_scale)`) is the
/// sum over all configurations with `var = x` of the product of every
/// factor except the excluded one. Whenever the excluded entry is positive,
/// `d(x) * theta(x) / Z = Pr(var = x)`.
pub fn marginal_excluding_factor(
    net: &FactorNetwork,
    excluded: FactorId,
    var: VarId,
) -> Result<Factor> {
    let f = net
        .factors
        .get(excluded)
        .ok_or_else(|| Error::Index(format!("no factor {excluded}")))?;
    if f.scope != [var] {
        return Err(Error::Scope(format!(
            "factor {excluded} is not unary over variable {var}"
        )));
    }
    let keep: BTreeSet<VarId> = [var].into_iter().collect();
    // A unary factor contributes no graph edges, so planning on the full
    // network is planning on the excluded one.
    let order = min_fill_order(net, &keep);
    Ok(derivative_with_order(net, excluded, var, &order.order))
}

/// The [`marginal_excluding_factor`] computation under a caller-supplied
/// elimination order. Excluding a unary factor never changes the
/// interaction graph, so fixed-point loops can plan the order once per
/// model structure and reuse it every sweep.
pub(crate) fn derivative_with_order(
    net: &FactorNetwork,
    excluded: FactorId,
    var: VarId,
    order: &[VarId],
) -> Factor {
    let pool: Vec<Factor> = net
        .factors
        .iter()
        .enumerate()
        .filter(|(id, _)| *id != excluded)
        .map(|(_, f)| f.clone())
        .collect();
    let keep: BTreeSet<VarId> = [var].into_iter().collect();
    eliminate_to_scope(&net.cardinalities(), &pool, &keep, order)
}

/// Mutual information between disjoint variable sets, in nats, computed
/// from the exact joint over their union. `0 * log 0 = 0`; tiny negative
/// rounding is clamped to zero.
pub fn mutual_information(
    net: &FactorNetwork,
    a: &BTreeSet<VarId>,
    b: &BTreeSet<VarId>,
) -> Result<f64> {
    if !a.is_disjoint(b) {
        return Err(Error::Scope(
            "mutual information requires disjoint variable sets".into(),
        ));
    }
    let union: BTreeSet<VarId> = a.union(b).cloned().collect();
    let joint = marginal(net, &union)?;
    let cards = net.cardinalities();
    Ok(mi_of_joint(&joint, &cards, a, b))
}

pub(crate) fn mi_of_joint(
    joint: &JointTable,
    cards: &[usize],
    a: &BTreeSet<VarId>,
    b: &BTreeSet<VarId>,
) -> f64 {
    let pa = joint.marginal_onto_with_cards(cards, a);
    let pb = joint.marginal_onto_with_cards(cards, b);
    let mut assignment = vec![0usize; joint.scope.len()];
    let mut mi = 0.0;
    for (idx, &p) in joint.probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        decode(idx, &joint.scope, cards, &mut assignment);
        let mut ia = 0usize;
        let mut ib = 0usize;
        for (pos, &v) in joint.scope.iter().enumerate() {
            if a.contains(&v) {
                ia = ia * cards[v] + assignment[pos];
            }
            if b.contains(&v) {
                ib = ib * cards[v] + assignment[pos];
            }
        }
        mi += p * (p / (pa.probs[ia] * pb.probs[ib])).ln();
    }
    mi.max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{chain_net, three_clique, three_clique_flipped};
    use crate::model::Factor;
    use crate::oracle;

    fn budget() -> oracle::EnumerationBudget {
        oracle::EnumerationBudget::default()
    }

    #[test]
    fn min_fill_chain_width_one() {
        let net = chain_net(4);
        let order = min_fill_order(&net, &BTreeSet::new());
        assert_eq!(order.order.len(), 4);
        assert_eq!(order.induced_width, 1);
    }

    #[test]
    fn min_fill_keep_all_is_empty() {
        let net = chain_net(4);
        let keep: BTreeSet<_> = (0..4).collect();
        let order = min_fill_order(&net, &keep);
        assert!(order.order.is_empty());
        assert_eq!(order.induced_width, 0);
    }

    #[test]
    fn min_fill_grid_width_at_most_three() {
        let net = crate::bench::gen_grid(&crate::bench::GridSpec::new(3, 3, 11));
        let order = min_fill_order(&net, &BTreeSet::new());
        assert!(order.induced_width <= 3, "width {}", order.induced_width);
        // Exhaustive reference: the best width over every elimination
        // order. Eliminating a set leaves an order-independent fill graph,
        // so a subset DP covers all 9! orders.
        assert_eq!(exhaustive_min_width(&net), 3);
    }

    /// Minimum induced width over all elimination orders, by dynamic
    /// programming over eliminated subsets: the neighborhood of `v` after
    /// eliminating `S` is everything outside `S` reachable from `v`
    /// through `S`.
    fn exhaustive_min_width(net: &FactorNetwork) -> usize {
        let n = net.num_variables();
        assert!(n <= 16);
        let mut adjacent = vec![0u32; n];
        for f in &net.factors {
            for (a, &u) in f.scope.iter().enumerate() {
                for &w in &f.scope[a + 1..] {
                    adjacent[u] |= 1 << w;
                    adjacent[w] |= 1 << u;
                }
            }
        }
        let reach_degree = |v: usize, eliminated: u32| -> u32 {
            let mut seen = 1u32 << v;
            let mut frontier = 1u32 << v;
            let mut outside = 0u32;
            while frontier != 0 {
                let mut next = 0u32;
                let mut f = frontier;
                while f != 0 {
                    let u = f.trailing_zeros() as usize;
                    f &= f - 1;
                    outside |= adjacent[u] & !eliminated;
                    next |= adjacent[u] & eliminated & !seen;
                }
                seen |= next;
                frontier = next;
            }
            (outside & !(1 << v)).count_ones()
        };
        let full = (1u32 << n) - 1;
        let mut best = vec![u32::MAX; (full + 1) as usize];
        best[0] = 0;
        for set in 0u32..=full {
            let so_far = best[set as usize];
            if so_far == u32::MAX {
                continue;
            }
            let mut rest = full & !set;
            while rest != 0 {
                let v = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                let width = so_far.max(reach_degree(v, set));
                let next = set | (1 << v);
                if width < best[next as usize] {
                    best[next as usize] = width;
                }
            }
        }
        best[full as usize] as usize
    }

    #[test]
    fn three_clique_log_partition() {
        let lz = log_partition(&three_clique()).unwrap();
        assert!((lz - 0.91458_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn flipped_clique_log_partition() {
        let lz = log_partition(&three_clique_flipped()).unwrap();
        assert!((lz - 1.08542_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn normalized_unary_log_partition_is_zero() {
        let net = FactorNetwork::new(vec![2], vec![Factor::unary(0, vec![0.3, 0.7])]).unwrap();
        assert!(log_partition(&net).unwrap().abs() < 1e-15);
    }

    #[test]
    fn zero_partition_detected() {
        let net = FactorNetwork::new(
            vec![2],
            vec![
                Factor::unary(0, vec![1.0, 0.0]),
                Factor::unary(0, vec![0.0, 1.0]),
            ],
        )
        .unwrap();
        assert!(matches!(log_partition(&net), Err(Error::ZeroPartition)));
    }

    #[test]
    fn empty_query_marginal_is_scalar_one() {
        let net = three_clique();
        let m = marginal(&net, &BTreeSet::new()).unwrap();
        assert_eq!(m.probs, vec![1.0]);
        assert!((m.log_norm - 0.91458_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn marginal_matches_brute_force() {
        let net = three_clique();
        let q: BTreeSet<_> = [0].into_iter().collect();
        let m = marginal(&net, &q).unwrap();
        let b = oracle::brute_marginal(&net, &q, &budget()).unwrap();
        // 8-term enumeration gives (.74529, .16929) / .91458.
        assert!((m.probs[0] - 0.74529 / 0.91458).abs() < 1e-12);
        assert!((m.probs[0] - b.probs[0]).abs() < 1e-12);
        assert!((m.probs[1] - b.probs[1]).abs() < 1e-12);
    }

    #[test]
    fn pair_marginal_matches_brute_force() {
        let net = three_clique();
        let q: BTreeSet<_> = [1, 2].into_iter().collect();
        let m = marginal(&net, &q).unwrap();
        let b = oracle::brute_marginal(&net, &q, &budget()).unwrap();
        for (x, y) in m.probs.iter().zip(&b.probs) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn excluded_factor_of_lone_variable_is_ones() {
        let net = FactorNetwork::new(vec![2], vec![Factor::unary(0, vec![0.3, 0.7])]).unwrap();
        let d = marginal_excluding_factor(&net, 0, 0).unwrap();
        assert_eq!(d.table, vec![1.0, 1.0]);
        assert!(d.log_scale.abs() < 1e-15);
    }

    #[test]
    fn excluded_factor_on_uniform_chain_counts_states() {
        let net = FactorNetwork::new(
            vec![2, 3],
            vec![
                Factor::unary(0, vec![0.3, 0.7]),
                Factor::new(vec![0, 1], vec![1.0; 6]),
            ],
        )
        .unwrap();
        let d = marginal_excluding_factor(&net, 0, 0).unwrap();
        let scale = d.log_scale.exp();
        assert!((d.table[0] * scale - 3.0).abs() < 1e-12);
        assert!((d.table[1] * scale - 3.0).abs() < 1e-12);
    }

    #[test]
    fn excluded_factor_rejects_non_unary() {
        let net = three_clique();
        assert!(matches!(
            marginal_excluding_factor(&net, 0, 0),
            Err(Error::Scope(_))
        ));
    }

    #[test]
    fn derivative_identity_sums_to_partition() {
        let net = FactorNetwork::new(
            vec![2, 2, 2],
            vec![
                Factor::unary(0, vec![0.2, 0.9]),
                Factor::new(vec![0, 1], vec![0.3, 0.9, 0.4, 0.1]),
                Factor::new(vec![1, 2], vec![0.8, 0.2, 0.5, 0.5]),
            ],
        )
        .unwrap();
        let d = marginal_excluding_factor(&net, 0, 0).unwrap();
        let theta = &net.factors[0];
        let paired: f64 = d
            .table
            .iter()
            .zip(&theta.table)
            .map(|(a, b)| a * b)
            .sum();
        let lz = log_partition(&net).unwrap();
        let recon = d.log_scale + theta.log_scale + paired.ln();
        assert!((recon - lz).abs() < 1e-12);
    }

    #[test]
    fn mi_zero_for_disconnected() {
        let net = FactorNetwork::new(
            vec![2, 2],
            vec![
                Factor::unary(0, vec![0.3, 0.7]),
                Factor::unary(1, vec![0.6, 0.4]),
            ],
        )
        .unwrap();
        let a: BTreeSet<_> = [0].into_iter().collect();
        let b: BTreeSet<_> = [1].into_iter().collect();
        assert!(mutual_information(&net, &a, &b).unwrap() < 1e-15);
    }

    #[test]
    fn mi_log2_for_copied_pair() {
        let net = FactorNetwork::new(
            vec![2, 2],
            vec![
                Factor::equivalence(0, 1, 2),
                Factor::unary(0, vec![0.5, 0.5]),
                Factor::unary(1, vec![0.5, 0.5]),
            ],
        )
        .unwrap();
        let a: BTreeSet<_> = [0].into_iter().collect();
        let b: BTreeSet<_> = [1].into_iter().collect();
        let mi = mutual_information(&net, &a, &b).unwrap();
        assert!((mi - 2.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn mi_rejects_overlapping_sets() {
        let net = three_clique();
        let a: BTreeSet<_> = [0, 1].into_iter().collect();
        let b: BTreeSet<_> = [1, 2].into_iter().collect();
        assert!(matches!(
            mutual_information(&net, &a, &b),
            Err(Error::Scope(_))
        ));
    }

    #[test]
    fn custom_order_matches_min_fill() {
        let net = three_clique();
        let lz = log_partition(&net).unwrap();
        let order = EliminationOrder {
            order: vec![2, 0, 1],
            induced_width: 2,
        };
        let lz2 = log_partition_with_order(&net, &order).unwrap();
        assert!((lz - lz2).abs() < 1e-12);
    }
}
