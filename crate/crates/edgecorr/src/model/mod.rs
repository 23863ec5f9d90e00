//! Factor networks, evidence conditioning, and the equivalence-edge
//! extension that turns any factor-variable adjacency into a deletable edge.

pub mod uai;

use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub type VarId = usize;
pub type FactorId = usize;

/// A discrete variable. Ids are dense `0..n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Variable {
    pub id: VarId,
    /// Number of states. At least 2 for free variables; 1 only as the
    /// result of conditioning.
    pub cardinality: usize,
}

/// A nonnegative table over an ordered scope, stored row-major with the
/// last scope variable varying fastest. The stored entries are implicitly
/// multiplied by `exp(log_scale)`, which lets long chains of products stay
/// inside f64 range without giving up exact zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct Factor {
    pub scope: Vec<VarId>,
    pub table: Vec<f64>,
    pub log_scale: f64,
}

impl Factor {
    pub fn new(scope: Vec<VarId>, table: Vec<f64>) -> Self {
        Factor {
            scope,
            table,
            log_scale: 0.0,
        }
    }

    /// Unary factor over `var`.
    pub fn unary(var: VarId, values: Vec<f64>) -> Self {
        Factor::new(vec![var], values)
    }

    /// The equivalence potential: 1 on the diagonal, 0 elsewhere.
    pub fn equivalence(i: VarId, j: VarId, card: usize) -> Self {
        let mut table = vec![0.0; card * card];
        for x in 0..card {
            table[x * card + x] = 1.0;
        }
        Factor::new(vec![i, j], table)
    }

    /// Entry at a full assignment to this factor's scope, excluding the
    /// `exp(log_scale)` prefactor.
    pub fn entry(&self, assignment: &[usize], cards: &[usize]) -> f64 {
        debug_assert_eq!(assignment.len(), self.scope.len());
        let mut idx = 0;
        for (pos, &v) in self.scope.iter().enumerate() {
            idx = idx * cards[v] + assignment[pos];
        }
        self.table[idx]
    }

    /// Divide out the maximum entry into `log_scale`, keeping the table in
    /// a friendly numeric range. A factor of exact zeros is left alone.
    pub fn rescale_max(&mut self) {
        let m = self.table.iter().cloned().fold(0.0_f64, f64::max);
        if m > 0.0 && m != 1.0 {
            for t in &mut self.table {
                *t /= m;
            }
            self.log_scale += m.ln();
        }
    }
}

/// Variables plus nonnegative factors; the model all inference runs on.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorNetwork {
    pub variables: Vec<Variable>,
    pub factors: Vec<Factor>,
}

impl FactorNetwork {
    /// Build and validate: scopes must name existing variables without
    /// duplicates, and each table length must match its scope.
    pub fn new(cardinalities: Vec<usize>, factors: Vec<Factor>) -> Result<Self> {
        let variables: Vec<Variable> = cardinalities
            .iter()
            .enumerate()
            .map(|(id, &cardinality)| Variable { id, cardinality })
            .collect();
        let net = FactorNetwork { variables, factors };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        for (id, v) in self.variables.iter().enumerate() {
            if v.id != id {
                return Err(Error::Shape(format!("variable ids not dense at {id}")));
            }
            if v.cardinality == 0 {
                return Err(Error::Shape(format!("variable {id} has cardinality 0")));
            }
        }
        for (fid, f) in self.factors.iter().enumerate() {
            let mut seen = vec![false; self.variables.len()];
            let mut len = 1usize;
            for &v in &f.scope {
                if v >= self.variables.len() {
                    return Err(Error::Index(format!(
                        "factor {fid} references unknown variable {v}"
                    )));
                }
                if seen[v] {
                    return Err(Error::Shape(format!(
                        "factor {fid} repeats variable {v} in its scope"
                    )));
                }
                seen[v] = true;
                len = len
                    .checked_mul(self.cardinality(v))
                    .ok_or_else(|| Error::Shape(format!("factor {fid} table overflows")))?;
            }
            if f.table.len() != len {
                return Err(Error::Shape(format!(
                    "factor {fid} has {} entries, scope wants {len}",
                    f.table.len()
                )));
            }
            if f.table.iter().any(|&t| t < 0.0 || !t.is_finite()) {
                return Err(Error::Shape(format!(
                    "factor {fid} has a negative or non-finite entry"
                )));
            }
            if !f.table.iter().any(|&t| t > 0.0) {
                return Err(Error::Shape(format!("factor {fid} is identically zero")));
            }
        }
        Ok(())
    }

    pub fn cardinality(&self, v: VarId) -> usize {
        self.variables[v].cardinality
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.variables.iter().map(|v| v.cardinality).collect()
    }

    pub fn num_variables(&self) -> usize {
        self.variables.len()
    }

    /// Slice every factor table at the observed values. Observed variables
    /// stay in place with cardinality 1, so variable ids are stable; the
    /// partition function of the result is the unnormalized probability of
    /// the evidence.
    pub fn condition(&self, evidence: &BTreeMap<VarId, usize>) -> Result<FactorNetwork> {
        for (&v, &x) in evidence {
            if v >= self.variables.len() {
                return Err(Error::Index(format!("evidence names unknown variable {v}")));
            }
            if x >= self.cardinality(v) {
                return Err(Error::Index(format!(
                    "evidence value {x} out of range for variable {v} (cardinality {})",
                    self.cardinality(v)
                )));
            }
        }
        if evidence.is_empty() {
            return Ok(self.clone());
        }
        let new_cards: Vec<usize> = self
            .variables
            .iter()
            .map(|v| if evidence.contains_key(&v.id) { 1 } else { v.cardinality })
            .collect();
        let mut factors = Vec::with_capacity(self.factors.len());
        for f in &self.factors {
            if f.scope.iter().all(|v| !evidence.contains_key(v)) {
                factors.push(f.clone());
                continue;
            }
            let out_len: usize = f.scope.iter().map(|&v| new_cards[v]).product();
            let mut table = vec![0.0; out_len];
            let mut out_assignment = vec![0usize; f.scope.len()];
            for (out_idx, slot) in table.iter_mut().enumerate() {
                decode(out_idx, &f.scope, &new_cards, &mut out_assignment);
                let mut src = 0usize;
                for (pos, &v) in f.scope.iter().enumerate() {
                    let value = match evidence.get(&v) {
                        Some(&x) => x,
                        None => out_assignment[pos],
                    };
                    src = src * self.cardinality(v) + value;
                }
                *slot = f.table[src];
            }
            factors.push(Factor {
                scope: f.scope.clone(),
                table,
                log_scale: f.log_scale,
            });
        }
        Ok(FactorNetwork {
            variables: new_cards
                .iter()
                .enumerate()
                .map(|(id, &cardinality)| Variable { id, cardinality })
                .collect(),
            factors,
        })
    }
}

/// Decode a linear table index into a per-scope-position assignment
/// (last scope variable fastest).
pub(crate) fn decode(mut idx: usize, scope: &[VarId], cards: &[usize], out: &mut [usize]) {
    for pos in (0..scope.len()).rev() {
        let c = cards[scope[pos]];
        out[pos] = idx % c;
        idx /= c;
    }
}

/// A deletable equivalence constraint between a variable and its clone.
/// `i` is the original, `j` the clone; both share `card` states.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EquivalenceEdge {
    pub i: VarId,
    pub j: VarId,
    pub card: usize,
}

/// A factor network together with the roster of equivalence edges that may
/// be deleted, and the clone-to-original map used to report results in
/// terms of the input model.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedModel {
    /// Contains the clone variables, the re-scoped factors, and one
    /// identity factor per equivalence edge (appended after the original
    /// factors, in `equiv_edges` order).
    pub net: FactorNetwork,
    pub equiv_edges: Vec<EquivalenceEdge>,
    /// Factor id of each equivalence edge's identity factor within `net`.
    pub equiv_factor: Vec<FactorId>,
    pub clone_of: BTreeMap<VarId, VarId>,
}

impl ExtendedModel {
    /// The original variable a clone stands for, following chains in case a
    /// clone is itself cut again.
    pub fn original_of(&self, mut v: VarId) -> VarId {
        while let Some(&orig) = self.clone_of.get(&v) {
            v = orig;
        }
        v
    }

    /// The original-model edge an equivalence edge stands for: the cut
    /// variable paired with the far endpoint of the factor its clone was
    /// moved into (the child end for CPT factors). Used by reports.
    pub fn original_edge(&self, edge: usize) -> (VarId, VarId) {
        let e = &self.equiv_edges[edge];
        let a = self.original_of(e.i);
        let host = self
            .net
            .factors
            .iter()
            .enumerate()
            .find(|(fid, f)| !self.equiv_factor.contains(fid) && f.scope.contains(&e.j));
        let b = match host {
            Some((_, f)) => f
                .scope
                .iter()
                .rev()
                .find(|&&v| v != e.j)
                .map(|&v| self.original_of(v))
                .unwrap_or(a),
            None => a,
        };
        (a, b)
    }
}

/// Introduce one clone per cut: the clone replaces the named variable in
/// the named factor's scope and an identity equivalence factor ties the two
/// together. With all equivalence constraints in place the extended model
/// has the same partition function as the input.
pub fn extend_for_deletion(
    net: &FactorNetwork,
    cuts: &[(FactorId, VarId)],
) -> Result<ExtendedModel> {
    let mut seen = std::collections::BTreeSet::new();
    for &(f, v) in cuts {
        if f >= net.factors.len() {
            return Err(Error::Index(format!("cut names unknown factor {f}")));
        }
        if !net.factors[f].scope.contains(&v) {
            return Err(Error::Scope(format!(
                "cut variable {v} is not in the scope of factor {f}"
            )));
        }
        if !seen.insert((f, v)) {
            return Err(Error::Scope(format!("duplicate cut ({f}, {v})")));
        }
    }
    let mut variables = net.variables.clone();
    let mut factors = net.factors.clone();
    let mut equiv_edges = Vec::with_capacity(cuts.len());
    let mut clone_of = BTreeMap::new();
    for &(f, v) in cuts {
        let card = net.cardinality(v);
        let clone = variables.len();
        variables.push(Variable {
            id: clone,
            cardinality: card,
        });
        let pos = factors[f]
            .scope
            .iter()
            .position(|&s| s == v)
            .expect("validated above");
        factors[f].scope[pos] = clone;
        equiv_edges.push(EquivalenceEdge { i: v, j: clone, card });
        clone_of.insert(clone, v);
    }
    let mut equiv_factor = Vec::with_capacity(equiv_edges.len());
    for e in &equiv_edges {
        equiv_factor.push(factors.len());
        factors.push(Factor::equivalence(e.i, e.j, e.card));
    }
    Ok(ExtendedModel {
        net: FactorNetwork { variables, factors },
        equiv_edges,
        equiv_factor,
        clone_of,
    })
}

/// Cut every factor of arity two or more at every scope position except the
/// last, so that each such factor keeps exactly one direct attachment and
/// every other adjacency becomes a deletable equivalence edge. For sorted
/// pairwise scopes this cuts the lower-indexed endpoint; for CPTs read from
/// BAYES files it keeps the child attached and makes each parent link
/// deletable.
pub fn extend_all(net: &FactorNetwork) -> ExtendedModel {
    let mut cuts = Vec::new();
    for (fid, f) in net.factors.iter().enumerate() {
        if f.scope.len() >= 2 {
            for &v in &f.scope[..f.scope.len() - 1] {
                cuts.push((fid, v));
            }
        }
    }
    extend_for_deletion(net, &cuts).expect("cuts derived from scopes are valid")
}
