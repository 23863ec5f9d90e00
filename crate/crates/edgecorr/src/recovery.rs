//! Choosing which equivalence edges to delete, ranking deleted edges for
//! recovery, and the recover-reiterate-recorrect sweep driver.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;
use std::time::Instant;

use crate::correction::{correct, CorrectionReport};
use crate::edbp::{edbp_iterate, init_parameters, ConvergenceReport, EdbpConfig, ParametrizedModel};
use crate::error::Result;
use crate::inference::{marginal, mi_of_joint, mutual_information};
use crate::model::{ExtendedModel, FactorNetwork, VarId};
use crate::rng::{derive_seed, SplitMix64};

/// Recovery scoring strategies. The registry is closed on purpose: new
/// heuristics get a variant here so every driver and report format learns
/// about them at compile time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Heuristic {
    Random,
    /// Endpoint mutual information in the simplified model; aims at edges
    /// that violate the zero-information correction assumption most.
    Mi,
    /// Pairwise mutual information against every other deleted edge; aims
    /// at edges whose general corrections interfere most.
    Mi2,
    /// Magnitude of the already-computed per-edge correction factor.
    CorrectionMagnitude,
}

impl Heuristic {
    pub fn name(&self) -> &'static str {
        match self {
            Heuristic::Random => "random",
            Heuristic::Mi => "mi",
            Heuristic::Mi2 => "mi2",
            Heuristic::CorrectionMagnitude => "magnitude",
        }
    }
}

impl std::fmt::Display for Heuristic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Heuristic {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "random" => Ok(Heuristic::Random),
            "mi" => Ok(Heuristic::Mi),
            "mi2" => Ok(Heuristic::Mi2),
            "magnitude" => Ok(Heuristic::CorrectionMagnitude),
            other => Err(format!(
                "unknown heuristic `{other}` (expected random, mi, mi2, magnitude)"
            )),
        }
    }
}

/// Deleted edges with their scores, sorted descending; ties break on the
/// lower edge index so rankings are reproducible.
#[derive(Debug, Clone)]
pub struct RecoveryRanking {
    pub heuristic: Heuristic,
    pub scores: Vec<(usize, f64)>,
    pub seed: Option<u64>,
}

impl RecoveryRanking {
    pub fn top(&self, k: usize) -> BTreeSet<usize> {
        self.scores.iter().take(k).map(|&(e, _)| e).collect()
    }
}

pub(crate) fn sort_scores(scores: &mut [(usize, f64)]) {
    scores.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
}

/// Pick the deletion set that makes the simplified model acyclic: a
/// uniformly random spanning tree (per connected component) of the
/// factor-incidence graph, where the incidences of ordinary factors are
/// mandatory and each equivalence factor is an atomic keep-or-delete edge.
/// Mandatory incidences are contracted and Wilson's loop-erased random
/// walk samples the tree over what remains, so every maximal keepable set
/// is equally likely. Returns the equivalence edges left out of the tree.
pub fn spanning_tree_cuts(model: &ExtendedModel, seed: u64) -> BTreeSet<usize> {
    let net = &model.net;
    let n = net.num_variables();
    let equiv_factors: BTreeSet<usize> = model.equiv_factor.iter().cloned().collect();

    // Contract the mandatory incidences with a union-find over variable
    // and factor nodes.
    let mut parent: Vec<usize> = (0..n + net.factors.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (fid, f) in net.factors.iter().enumerate() {
        if f.scope.len() < 2 || equiv_factors.contains(&fid) {
            continue;
        }
        for &v in &f.scope {
            let (a, b) = (find(&mut parent, v), find(&mut parent, n + fid));
            if a != b {
                parent[a] = b;
            }
        }
    }

    // Re-label the contracted components that equivalence edges touch.
    let mut label: BTreeMap<usize, usize> = BTreeMap::new();
    let mut endpoint = Vec::with_capacity(model.equiv_edges.len());
    for e in &model.equiv_edges {
        let id_of = |v: VarId, parent: &mut Vec<usize>, label: &mut BTreeMap<usize, usize>| {
            let root = find(parent, v);
            let next = label.len();
            *label.entry(root).or_insert(next)
        };
        let u = id_of(e.i, &mut parent, &mut label);
        let w = id_of(e.j, &mut parent, &mut label);
        endpoint.push((u, w));
    }
    let m = label.len();
    let mut adjacency: Vec<Vec<(usize, usize)>> = vec![Vec::new(); m];
    for (edge, &(u, w)) in endpoint.iter().enumerate() {
        if u != w {
            adjacency[u].push((w, edge));
            adjacency[w].push((u, edge));
        }
    }

    // Wilson's algorithm per component of the contracted multigraph.
    let mut rng = SplitMix64::new(seed);
    let mut in_tree = vec![false; m];
    let mut component = vec![usize::MAX; m];
    let mut n_components = 0usize;
    for start in 0..m {
        if component[start] != usize::MAX {
            continue;
        }
        let comp = n_components;
        n_components += 1;
        let mut queue = vec![start];
        component[start] = comp;
        while let Some(u) = queue.pop() {
            for &(w, _) in &adjacency[u] {
                if component[w] == usize::MAX {
                    component[w] = comp;
                    queue.push(w);
                }
            }
        }
        in_tree[start] = true;
    }
    let mut kept: BTreeSet<usize> = BTreeSet::new();
    let mut next: Vec<(usize, usize)> = vec![(usize::MAX, usize::MAX); m];
    for u in 0..m {
        if in_tree[u] {
            continue;
        }
        let mut v = u;
        while !in_tree[v] {
            let &(w, edge) = &adjacency[v][rng.next_index(adjacency[v].len())];
            next[v] = (w, edge);
            v = w;
        }
        let mut v = u;
        while !in_tree[v] {
            in_tree[v] = true;
            kept.insert(next[v].1);
            v = next[v].0;
        }
    }

    (0..model.equiv_edges.len())
        .filter(|e| !kept.contains(e))
        .collect()
}

/// Score deleted edges by endpoint mutual information in the simplified
/// model.
pub fn rank_mi(model: &ParametrizedModel) -> Result<RecoveryRanking> {
    let mut scores = Vec::with_capacity(model.deleted().len());
    for &e in model.deleted() {
        let edge = model.edge(e);
        let mi = mutual_information(
            model.net_prime(),
            &[edge.i].into_iter().collect(),
            &[edge.j].into_iter().collect(),
        )?;
        scores.push((e, mi));
    }
    sort_scores(&mut scores);
    Ok(RecoveryRanking {
        heuristic: Heuristic::Mi,
        scores,
        seed: None,
    })
}

/// Mutual information between two endpoint pairs, from one exact joint
/// over their union. When the pairs share a variable the entropy form
/// `H(A) + H(B) - H(A u B)` is used, which coincides with mutual
/// information on disjoint pairs.
fn pair_set_mi(
    net: &FactorNetwork,
    a: &BTreeSet<VarId>,
    b: &BTreeSet<VarId>,
) -> Result<f64> {
    let union: BTreeSet<VarId> = a.union(b).cloned().collect();
    let joint = marginal(net, &union)?;
    let cards = net.cardinalities();
    if a.is_disjoint(b) {
        return Ok(mi_of_joint(&joint, &cards, a, b));
    }
    let h = |probs: &[f64]| -> f64 {
        probs
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| -p * p.ln())
            .sum()
    };
    let pa = joint.marginal_onto_with_cards(&cards, a);
    let pb = joint.marginal_onto_with_cards(&cards, b);
    Ok((h(&pa.probs) + h(&pb.probs) - h(&joint.probs)).max(0.0))
}

/// Score each deleted edge by its summed pairwise mutual information with
/// every other deleted edge, with default query budget.
pub fn rank_mi2(model: &ParametrizedModel) -> Result<RecoveryRanking> {
    rank_mi2_with(model, 64, 0)
}

/// As [`rank_mi2`], with an explicit cap: when more than `exact_cap` edges
/// are deleted, each edge is scored against a fixed-size partner sample
/// drawn with `seed` instead of all pairs.
pub fn rank_mi2_with(
    model: &ParametrizedModel,
    exact_cap: usize,
    seed: u64,
) -> Result<RecoveryRanking> {
    let deleted: Vec<usize> = model.deleted().to_vec();
    let subsampled = deleted.len() > exact_cap;
    let mut rng = SplitMix64::new(seed);
    let mut scores = Vec::with_capacity(deleted.len());
    for &e in &deleted {
        let edge = model.edge(e);
        let a: BTreeSet<VarId> = [edge.i, edge.j].into_iter().collect();
        let partners: Vec<usize> = if subsampled {
            let others: Vec<usize> = deleted.iter().cloned().filter(|&o| o != e).collect();
            let picks = rng.sample_distinct(others.len(), exact_cap.min(others.len()));
            picks.into_iter().map(|p| others[p]).collect()
        } else {
            deleted.iter().cloned().filter(|&o| o != e).collect()
        };
        let mut total = 0.0;
        for o in partners {
            let other = model.edge(o);
            let b: BTreeSet<VarId> = [other.i, other.j].into_iter().collect();
            total += pair_set_mi(model.net_prime(), &a, &b)?;
        }
        scores.push((e, total));
    }
    sort_scores(&mut scores);
    Ok(RecoveryRanking {
        heuristic: Heuristic::Mi2,
        scores,
        seed: subsampled.then_some(seed),
    })
}

/// Score deleted edges by the magnitude of their computed correction
/// factor, `|log y|`. With corrections already in hand this is the order
/// in which partial corrections close the gap to the full estimate
/// fastest.
pub fn rank_correction_magnitude(report: &CorrectionReport) -> RecoveryRanking {
    let mut scores: Vec<(usize, f64)> = report
        .terms
        .iter()
        .map(|t| (t.edge_index, t.log_y.abs()))
        .collect();
    sort_scores(&mut scores);
    RecoveryRanking {
        heuristic: Heuristic::CorrectionMagnitude,
        scores,
        seed: None,
    }
}

/// Random ranking: independent uniform scores, seeded.
pub fn rank_random(model: &ParametrizedModel, seed: u64) -> RecoveryRanking {
    let mut rng = SplitMix64::new(seed);
    let mut scores: Vec<(usize, f64)> = model
        .deleted()
        .iter()
        .map(|&e| (e, rng.next_f64()))
        .collect();
    sort_scores(&mut scores);
    RecoveryRanking {
        heuristic: Heuristic::Random,
        scores,
        seed: Some(seed),
    }
}

/// Restore a set of deleted edges: their identity factors return, their
/// parameter factors go away, and the remaining edges keep their current
/// parameters as a warm start. The result must be re-iterated before its
/// corrections mean anything.
pub fn recover(model: &ParametrizedModel, edges: &BTreeSet<usize>) -> ParametrizedModel {
    let remaining: BTreeSet<usize> = model
        .deleted()
        .iter()
        .cloned()
        .filter(|e| !edges.contains(e))
        .collect();
    let params = model
        .all_parameters()
        .iter()
        .filter(|(e, _)| remaining.contains(e))
        .map(|(e, p)| (*e, p.clone()))
        .collect();
    ParametrizedModel::with_parameters(model.base().clone(), remaining, params)
}

/// Settings for a full recovery sweep.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub heuristic: Heuristic,
    pub k_step: usize,
    pub seed: u64,
    pub edbp: EdbpConfig,
    pub max_steps: Option<usize>,
    /// Exact-pair budget handed to the mi2 ranking.
    pub mi2_exact_cap: usize,
}

impl SweepConfig {
    pub fn new(heuristic: Heuristic, k_step: usize, seed: u64) -> Self {
        SweepConfig {
            heuristic,
            k_step,
            seed,
            edbp: EdbpConfig::default(),
            max_steps: None,
            mi2_exact_cap: 64,
        }
    }
}

/// One point of a recovery sweep: `k` edges recovered so far, the
/// iteration outcome at this point, and the corrections it produced.
#[derive(Debug, Clone)]
pub struct SweepStep {
    pub k: usize,
    pub convergence: ConvergenceReport,
    pub report: CorrectionReport,
    pub wall_ms: f64,
}

/// Delete a random spanning-tree complement, then alternate ranking,
/// recovering `k_step` edges, re-iterating from the previous fixed point,
/// and re-correcting, until every edge is recovered. Non-convergent steps
/// are flagged in place rather than dropped, so batch drivers can exclude
/// whole instances from their aggregates.
pub fn recovery_sweep(net: &FactorNetwork, config: &SweepConfig) -> Result<Vec<SweepStep>> {
    assert!(config.k_step >= 1, "k_step must be at least 1");
    let extended = crate::model::extend_all(net);
    let deleted = spanning_tree_cuts(&extended, config.seed);
    let mut model = init_parameters(extended, deleted);
    let mut steps: Vec<SweepStep> = Vec::new();
    let mut recovered = 0usize;
    loop {
        let started = Instant::now();
        let convergence = edbp_iterate(&mut model, &config.edbp)?;
        let report = correct(&model)?;
        let wall_ms = started.elapsed().as_secs_f64() * 1e3;
        let done = model.deleted().is_empty();
        let step_seed = derive_seed(config.seed, steps.len() as u64 + 1);
        let ranking = if done {
            None
        } else {
            Some(match config.heuristic {
                Heuristic::Random => rank_random(&model, step_seed),
                Heuristic::Mi => rank_mi(&model)?,
                Heuristic::Mi2 => rank_mi2_with(&model, config.mi2_exact_cap, step_seed)?,
                Heuristic::CorrectionMagnitude => rank_correction_magnitude(&report),
            })
        };
        steps.push(SweepStep {
            k: recovered,
            convergence,
            report,
            wall_ms,
        });
        if done || config.max_steps.is_some_and(|cap| steps.len() >= cap) {
            return Ok(steps);
        }
        let ranking = ranking.expect("set whenever edges remain");
        let batch = ranking.top(config.k_step);
        recovered += batch.len();
        model = recover(&model, &batch);
    }
}
