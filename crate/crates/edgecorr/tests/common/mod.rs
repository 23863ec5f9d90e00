//! Shared fixtures for the integration suites: seeded random networks and
//! an independent flooding belief-propagation reference. Nothing here may
//! call into the code paths it is used to check.
//!
//! Each test target compiles this module separately and uses a different
//! subset of it.
#![allow(dead_code)]

use edgecorr::model::{Factor, FactorNetwork};
use edgecorr::rng::SplitMix64;

/// The three-variable clique with partition function 0.91458.
pub fn three_clique() -> FactorNetwork {
    FactorNetwork::new(
        vec![2, 2, 2],
        vec![
            Factor::new(vec![0, 1], vec![0.9, 0.1, 0.1, 0.9]),
            Factor::new(vec![0, 2], vec![0.1, 0.9, 0.9, 0.1]),
            Factor::new(vec![1, 2], vec![0.081, 0.810, 0.090, 0.900]),
        ],
    )
    .unwrap()
}

/// The complemented-potential variant with partition function 1.08542.
pub fn three_clique_flipped() -> FactorNetwork {
    FactorNetwork::new(
        vec![2, 2, 2],
        vec![
            Factor::new(vec![0, 1], vec![0.9, 0.1, 0.1, 0.9]),
            Factor::new(vec![0, 2], vec![0.1, 0.9, 0.9, 0.1]),
            Factor::new(vec![1, 2], vec![0.919, 0.190, 0.910, 0.100]),
        ],
    )
    .unwrap()
}

/// A random connected pairwise network over `n` binary variables with
/// strictly positive tables: a random tree backbone plus `extra_edges`
/// chords, and a unary potential on every variable. Entries live in
/// (0.05, 1) so reference propagation stays well behaved.
pub fn random_pairwise(seed: u64, n: usize, extra_edges: usize) -> FactorNetwork {
    let mut rng = SplitMix64::new(seed);
    let entry = |rng: &mut SplitMix64| 0.05 + 0.95 * rng.next_open01();
    let mut factors = Vec::new();
    for v in 1..n {
        let u = rng.next_index(v);
        factors.push(Factor::new(
            vec![u.min(v), u.max(v)],
            vec![
                entry(&mut rng),
                entry(&mut rng),
                entry(&mut rng),
                entry(&mut rng),
            ],
        ));
    }
    let mut attempts = 0;
    let mut added = 0;
    while added < extra_edges && attempts < extra_edges * 20 {
        attempts += 1;
        let u = rng.next_index(n);
        let w = rng.next_index(n);
        if u == w {
            continue;
        }
        let scope = vec![u.min(w), u.max(w)];
        if factors.iter().any(|f| f.scope == scope) {
            continue;
        }
        factors.push(Factor::new(
            scope,
            vec![
                entry(&mut rng),
                entry(&mut rng),
                entry(&mut rng),
                entry(&mut rng),
            ],
        ));
        added += 1;
    }
    for v in 0..n {
        factors.push(Factor::unary(v, vec![entry(&mut rng), entry(&mut rng)]));
    }
    FactorNetwork::new(vec![2; n], factors).unwrap()
}

/// A random network with mixed-arity factors (1 to 3) and mixed
/// cardinalities (2 to `max_card`), for format and conditioning tests.
pub fn random_mixed(seed: u64, n: usize, max_card: usize) -> FactorNetwork {
    let mut rng = SplitMix64::new(seed);
    let cards: Vec<usize> = (0..n).map(|_| 2 + rng.next_index(max_card - 1)).collect();
    let n_factors = 1 + rng.next_index(2 * n);
    let mut factors = Vec::new();
    for _ in 0..n_factors {
        let arity = 1 + rng.next_index(3.min(n));
        let scope = rng.sample_distinct(n, arity);
        let len: usize = scope.iter().map(|&v| cards[v]).product();
        let table: Vec<f64> = (0..len).map(|_| 0.01 + rng.next_f64()).collect();
        factors.push(Factor::new(scope, table));
    }
    FactorNetwork::new(cards, factors).unwrap()
}

/// Flooding (synchronous) belief propagation on a pairwise network,
/// independent of the library's inference engine. Returns per-variable
/// beliefs and whether messages converged.
pub struct BpResult {
    pub beliefs: Vec<Vec<f64>>,
    pub converged: bool,
}

pub fn flooding_bp(net: &FactorNetwork, max_iters: usize, tol: f64, damping: f64) -> BpResult {
    let n = net.num_variables();
    let cards: Vec<usize> = (0..n).map(|v| net.cardinality(v)).collect();
    // Node potentials: the product of unary factors per variable.
    let mut node_pot: Vec<Vec<f64>> = cards.iter().map(|&c| vec![1.0; c]).collect();
    let mut edges: Vec<(usize, usize, Vec<f64>)> = Vec::new();
    for f in &net.factors {
        match f.scope.len() {
            1 => {
                let v = f.scope[0];
                for (x, slot) in node_pot[v].iter_mut().enumerate() {
                    *slot *= f.table[x] * f.log_scale.exp();
                }
            }
            2 => edges.push((f.scope[0], f.scope[1], f.table.clone())),
            _ => panic!("flooding_bp expects a pairwise network"),
        }
    }
    // Messages indexed by (edge, direction): 0 = u->w, 1 = w->u.
    let mut messages: Vec<[Vec<f64>; 2]> = edges
        .iter()
        .map(|&(u, w, _)| {
            [
                vec![1.0 / cards[w] as f64; cards[w]],
                vec![1.0 / cards[u] as f64; cards[u]],
            ]
        })
        .collect();
    let incoming = |messages: &Vec<[Vec<f64>; 2]>, v: usize, skip: Option<usize>| -> Vec<f64> {
        let mut prod = node_pot[v].clone();
        for (eid, &(u, w, _)) in edges.iter().enumerate() {
            if Some(eid) == skip {
                continue;
            }
            if w == v {
                for (x, slot) in prod.iter_mut().enumerate() {
                    *slot *= messages[eid][0][x];
                }
            } else if u == v {
                for (x, slot) in prod.iter_mut().enumerate() {
                    *slot *= messages[eid][1][x];
                }
            }
        }
        prod
    };
    let mut converged = false;
    for _ in 0..max_iters {
        let mut next = messages.clone();
        let mut residual = 0.0f64;
        for (eid, &(u, w, ref table)) in edges.iter().enumerate() {
            // u -> w
            let from_u = incoming(&messages, u, Some(eid));
            let mut msg = vec![0.0; cards[w]];
            for xu in 0..cards[u] {
                for (xw, slot) in msg.iter_mut().enumerate() {
                    *slot += from_u[xu] * table[xu * cards[w] + xw];
                }
            }
            normalize(&mut msg);
            blend(&mut next[eid][0], &msg, damping);
            // w -> u
            let from_w = incoming(&messages, w, Some(eid));
            let mut msg = vec![0.0; cards[u]];
            for xw in 0..cards[w] {
                for (xu, slot) in msg.iter_mut().enumerate() {
                    *slot += from_w[xw] * table[xu * cards[w] + xw];
                }
            }
            normalize(&mut msg);
            blend(&mut next[eid][1], &msg, damping);
        }
        for (a, b) in messages.iter().zip(&next) {
            for dir in 0..2 {
                for (x, y) in a[dir].iter().zip(&b[dir]) {
                    residual = residual.max((x - y).abs());
                }
            }
        }
        messages = next;
        if residual < tol {
            converged = true;
            break;
        }
    }
    let beliefs = (0..n)
        .map(|v| {
            let mut b = incoming(&messages, v, None);
            normalize(&mut b);
            b
        })
        .collect();
    BpResult { beliefs, converged }
}

fn normalize(v: &mut [f64]) {
    let total: f64 = v.iter().sum();
    if total > 0.0 {
        for x in v {
            *x /= total;
        }
    }
}

fn blend(slot: &mut [f64], msg: &[f64], damping: f64) {
    for (s, &m) in slot.iter_mut().zip(msg) {
        *s = damping * *s + (1.0 - damping) * m;
    }
}

