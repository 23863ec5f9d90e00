//! Approximate the partition function of a discrete factor network by
//! deleting equivalence edges, parametrizing each deletion with a pair of
//! unary potentials found by fixed-point iteration, and correcting the
//! simplified partition function edge by edge.
//!
//! The pipeline:
//!
//! 1. [`model`] loads a network, conditions it on evidence, and extends it
//!    so that any factor-variable adjacency becomes a deletable
//!    equivalence edge.
//! 2. [`recovery::spanning_tree_cuts`] picks a deletion set that leaves a
//!    tree; [`edbp`] iterates the edge parameters to a fixed point.
//! 3. [`correction`] assembles the corrected estimates: EC-Z (divide by
//!    the per-edge `z` terms, the Bethe free energy value on trees) and
//!    EC-G (additionally multiply by the per-edge `y` terms, exact for a
//!    single deleted edge).
//! 4. [`recovery`] ranks deleted edges and recovers them batch by batch,
//!    trading treewidth for accuracy; [`bench`] measures the whole loop on
//!    seeded random families.
//!
//! [`oracle`] holds the brute-force enumeration everything is tested
//! against, and [`inference`] the variable-elimination engine the fast
//! paths run on.

pub mod bench;
pub mod correction;
pub mod edbp;
pub mod error;
pub mod inference;
pub mod model;
pub mod oracle;
pub mod recovery;
pub mod rng;

pub use error::{Error, Result};
pub use model::{EquivalenceEdge, ExtendedModel, Factor, FactorNetwork, Variable};

#[cfg(test)]
pub(crate) mod fixtures {
    use crate::model::{Factor, FactorNetwork};

    /// Three binary variables in a clique. The pairwise potentials are the
    /// running example used throughout the tests; its partition function
    /// is 0.91458 by an eight-term sum.
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

    /// The same clique with the (1, 2) potential complemented; partition
    /// function 1.08542.
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

    /// A chain of `n` binary variables with asymmetric couplings.
    pub fn chain_net(n: usize) -> FactorNetwork {
        let mut factors = Vec::new();
        for v in 0..n - 1 {
            factors.push(Factor::new(vec![v, v + 1], vec![0.7, 0.2, 0.4, 0.9]));
        }
        FactorNetwork::new(vec![2; n], factors).unwrap()
    }
}
