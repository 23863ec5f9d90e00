//! Seeded generators for the random model families experiments run on, and
//! a batch runner that measures corrected-estimate error against exact
//! inference. Everything here is a pure function of its spec and seed.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::inference::log_partition;
use crate::model::{Factor, FactorNetwork, VarId};
use crate::recovery::{recovery_sweep, Heuristic, SweepConfig};
use crate::rng::{derive_seed, SplitMix64};

/// A rows-by-cols lattice of binary variables with symmetric couplings
/// drawn from the union of a weak and a strong interval, plus random unary
/// potentials.
#[derive(Debug, Clone)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    /// Couplings land in `[low.0, low.1]` or `(high.0, high.1]`, a fair
    /// coin deciding the interval.
    pub coupling_low: (f64, f64),
    pub coupling_high: (f64, f64),
    pub seed: u64,
}

impl GridSpec {
    pub fn new(rows: usize, cols: usize, seed: u64) -> Self {
        GridSpec {
            rows,
            cols,
            coupling_low: (0.0, 0.1),
            coupling_high: (0.9, 1.0),
            seed,
        }
    }
}

/// A two-layer noisy-or network: root causes with random priors, sink
/// effects with random parent sets, random inhibitor probabilities, and a
/// small random leak. Evidence observes every sink, a chosen number of
/// them positively.
#[derive(Debug, Clone)]
pub struct NoisyOrSpec {
    pub roots: usize,
    pub sinks: usize,
    pub parents_per_sink: usize,
    pub positive_findings: usize,
    pub seed: u64,
}

/// One measured point of an experiment batch. Relative errors are
/// `|exp(log estimate - log exact) - 1|`.
#[derive(Debug, Clone)]
pub struct ExperimentRow {
    pub instance: String,
    pub family: String,
    pub heuristic: Heuristic,
    pub k: usize,
    pub converged: bool,
    pub rel_err_ecz: f64,
    pub rel_err_ecg: f64,
    pub wall_ms: f64,
}

impl ExperimentRow {
    pub const CSV_HEADER: &'static str =
        "instance,family,heuristic,k,converged,rel_err_ecz,rel_err_ecg,wall_ms";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{:.6e},{:.6e},{:.3}",
            self.instance,
            self.family,
            self.heuristic,
            self.k,
            self.converged,
            self.rel_err_ecz,
            self.rel_err_ecg,
            self.wall_ms
        )
    }
}

fn draw_in(rng: &mut SplitMix64, interval: (f64, f64)) -> f64 {
    interval.0 + rng.next_f64() * (interval.1 - interval.0)
}

/// Generate a lattice network. Draw order per node in row-major order:
/// the rightward coupling, then the downward coupling; unary potentials
/// follow after all couplings, one pair of entries per node.
pub fn gen_grid(spec: &GridSpec) -> FactorNetwork {
    let mut rng = SplitMix64::new(spec.seed);
    let id = |r: usize, c: usize| r * spec.cols + c;
    let mut factors = Vec::new();
    for r in 0..spec.rows {
        for c in 0..spec.cols {
            let mut couple = |a: VarId, b: VarId, rng: &mut SplitMix64| {
                let p = if rng.next_f64() < 0.5 {
                    draw_in(rng, spec.coupling_low)
                } else {
                    // Mirrored so the half-open end stays at the strong side.
                    spec.coupling_high.1 - rng.next_f64() * (spec.coupling_high.1 - spec.coupling_high.0)
                };
                factors.push(Factor::new(vec![a, b], vec![p, 1.0 - p, 1.0 - p, p]));
            };
            if c + 1 < spec.cols {
                couple(id(r, c), id(r, c + 1), &mut rng);
            }
            if r + 1 < spec.rows {
                couple(id(r, c), id(r + 1, c), &mut rng);
            }
        }
    }
    for v in 0..spec.rows * spec.cols {
        factors.push(Factor::unary(
            v,
            vec![rng.next_open01(), rng.next_open01()],
        ));
    }
    FactorNetwork::new(vec![2; spec.rows * spec.cols], factors)
        .expect("generated tables are well formed")
}

/// Generate a noisy-or network and its evidence. Draw order: root priors,
/// then per sink its parent set, inhibitors (in ascending parent order)
/// and leak, then the positive sink choice. State 1 is "on".
pub fn gen_noisyor(spec: &NoisyOrSpec) -> Result<(FactorNetwork, BTreeMap<VarId, usize>)> {
    if spec.parents_per_sink > spec.roots {
        return Err(Error::InfeasibleSpec(format!(
            "{} parents per sink with only {} roots",
            spec.parents_per_sink, spec.roots
        )));
    }
    if spec.positive_findings > spec.sinks {
        return Err(Error::InfeasibleSpec(format!(
            "{} positive findings with only {} sinks",
            spec.positive_findings, spec.sinks
        )));
    }
    let mut rng = SplitMix64::new(spec.seed);
    let n = spec.roots + spec.sinks;
    let mut factors = Vec::new();
    for root in 0..spec.roots {
        let p = rng.next_open01();
        factors.push(Factor::unary(root, vec![1.0 - p, p]));
    }
    for sink in 0..spec.sinks {
        let sink_var = spec.roots + sink;
        let parents = rng.sample_distinct(spec.roots, spec.parents_per_sink);
        let inhibitors: Vec<f64> = parents.iter().map(|_| rng.next_open01()).collect();
        let leak = rng.next_open01() * 0.1;
        let mut scope: Vec<VarId> = parents.clone();
        scope.push(sink_var);
        let rows = 1usize << parents.len();
        let mut table = vec![0.0; rows * 2];
        for row in 0..rows {
            // Parent states decode most-significant-first to match the
            // row-major table layout.
            let mut off = 1.0 - leak;
            for (pos, q) in inhibitors.iter().enumerate() {
                let bit = (row >> (parents.len() - 1 - pos)) & 1;
                if bit == 1 {
                    off *= q;
                }
            }
            table[row * 2] = off;
            table[row * 2 + 1] = 1.0 - off;
        }
        factors.push(Factor::new(scope, table));
    }
    let positives = rng.sample_distinct(spec.sinks, spec.positive_findings);
    let mut evidence = BTreeMap::new();
    for sink in 0..spec.sinks {
        let on = positives.binary_search(&sink).is_ok();
        evidence.insert(spec.roots + sink, usize::from(on));
    }
    let net = FactorNetwork::new(vec![2; n], factors).expect("generated tables are well formed");
    Ok((net, evidence))
}

/// An experiment family: the spec to generate instances from.
#[derive(Debug, Clone)]
pub enum FamilySpec {
    Grid(GridSpec),
    NoisyOr(NoisyOrSpec),
}

impl FamilySpec {
    fn family_name(&self) -> &'static str {
        match self {
            FamilySpec::Grid(_) => "grid",
            FamilySpec::NoisyOr(_) => "noisyor",
        }
    }

    fn base_seed(&self) -> u64 {
        match self {
            FamilySpec::Grid(s) => s.seed,
            FamilySpec::NoisyOr(s) => s.seed,
        }
    }

    /// Instantiate repetition `rep`: the spec's seed is re-derived so each
    /// repetition is an independent, reproducible instance.
    pub fn instantiate(&self, rep: usize) -> Result<(FactorNetwork, BTreeMap<VarId, usize>)> {
        let seed = derive_seed(self.base_seed(), rep as u64);
        match self {
            FamilySpec::Grid(s) => {
                let mut spec = s.clone();
                spec.seed = seed;
                Ok((gen_grid(&spec), BTreeMap::new()))
            }
            FamilySpec::NoisyOr(s) => {
                let mut spec = s.clone();
                spec.seed = seed;
                gen_noisyor(&spec)
            }
        }
    }
}

/// Run `repetitions` instances of each family through a recovery sweep and
/// report per-step relative errors against exact inference on the
/// conditioned network. Rows from non-convergent steps carry their flag so
/// downstream averaging can drop those instances; they are not removed
/// here.
pub fn run_experiment(
    families: &[FamilySpec],
    sweep: &SweepConfig,
    repetitions: usize,
) -> Result<Vec<ExperimentRow>> {
    let mut rows = Vec::new();
    for family in families {
        for rep in 0..repetitions {
            let (net, evidence) = family.instantiate(rep)?;
            let conditioned = net.condition(&evidence)?;
            let exact = log_partition(&conditioned)?;
            let mut config = sweep.clone();
            config.seed = derive_seed(sweep.seed, derive_seed(family.base_seed(), rep as u64));
            let steps = recovery_sweep(&conditioned, &config)?;
            let instance = format!("{}-s{}-r{}", family.family_name(), family.base_seed(), rep);
            for step in steps {
                rows.push(ExperimentRow {
                    instance: instance.clone(),
                    family: family.family_name().to_string(),
                    heuristic: config.heuristic,
                    k: step.k,
                    converged: step.convergence.converged,
                    rel_err_ecz: relative_error(step.report.log_z_ecz, exact),
                    rel_err_ecg: relative_error(step.report.log_z_ecg, exact),
                    wall_ms: step.wall_ms,
                });
            }
        }
    }
    Ok(rows)
}

/// `|Z_hat/Z - 1|`, evaluated in log space.
pub fn relative_error(log_estimate: f64, log_exact: f64) -> f64 {
    ((log_estimate - log_exact).exp() - 1.0).abs()
}

/// Mean relative errors by recovery count `k`, dropping every instance
/// that failed to converge at any step.
pub fn mean_errors_by_k(rows: &[ExperimentRow]) -> BTreeMap<usize, (f64, f64)> {
    let bad: std::collections::BTreeSet<&str> = rows
        .iter()
        .filter(|r| !r.converged)
        .map(|r| r.instance.as_str())
        .collect();
    let mut sums: BTreeMap<usize, (f64, f64, usize)> = BTreeMap::new();
    for row in rows.iter().filter(|r| !bad.contains(r.instance.as_str())) {
        let slot = sums.entry(row.k).or_insert((0.0, 0.0, 0));
        slot.0 += row.rel_err_ecz;
        slot.1 += row.rel_err_ecg;
        slot.2 += 1;
    }
    sums.into_iter()
        .map(|(k, (ecz, ecg, n))| (k, (ecz / n as f64, ecg / n as f64)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;

    #[test]
    fn smallest_grid_shape() {
        let net = gen_grid(&GridSpec::new(1, 2, 0));
        assert_eq!(net.num_variables(), 2);
        let pair = net.factors.iter().filter(|f| f.scope.len() == 2).count();
        let unary = net.factors.iter().filter(|f| f.scope.len() == 1).count();
        assert_eq!((pair, unary), (1, 2));
    }

    #[test]
    fn six_by_six_grid_shape() {
        let net = gen_grid(&GridSpec::new(6, 6, 1));
        assert_eq!(net.num_variables(), 36);
        let pair = net.factors.iter().filter(|f| f.scope.len() == 2).count();
        assert_eq!(pair, 60);
    }

    #[test]
    fn grid_generation_is_deterministic() {
        let a = gen_grid(&GridSpec::new(4, 4, 99));
        let b = gen_grid(&GridSpec::new(4, 4, 99));
        assert_eq!(a, b);
    }

    #[test]
    fn grid_couplings_land_in_declared_intervals() {
        let net = gen_grid(&GridSpec::new(5, 5, 7));
        for f in net.factors.iter().filter(|f| f.scope.len() == 2) {
            let p = f.table[0];
            assert!((0.0..=0.1).contains(&p) || (0.9..=1.0).contains(&p), "p {p}");
            assert!((f.table[0] - f.table[3]).abs() < 1e-15);
            assert!((f.table[1] - f.table[2]).abs() < 1e-15);
        }
    }

    #[test]
    fn tiny_noisyor_shape_and_evidence() {
        let (net, ev) = gen_noisyor(&NoisyOrSpec {
            roots: 1,
            sinks: 1,
            parents_per_sink: 1,
            positive_findings: 0,
            seed: 0,
        })
        .unwrap();
        assert_eq!(net.num_variables(), 2);
        assert_eq!(ev, [(1, 0)].into_iter().collect());
    }

    #[test]
    fn noisyor_structure_counts() {
        let (net, _) = gen_noisyor(&NoisyOrSpec {
            roots: 8,
            sinks: 8,
            parents_per_sink: 4,
            positive_findings: 2,
            seed: 5,
        })
        .unwrap();
        assert_eq!(net.num_variables(), 16);
        let cpts = net.factors.iter().filter(|f| f.scope.len() == 5).count();
        let priors = net.factors.iter().filter(|f| f.scope.len() == 1).count();
        assert_eq!((cpts, priors), (8, 8));
    }

    #[test]
    fn noisyor_generation_is_deterministic() {
        let spec = NoisyOrSpec {
            roots: 4,
            sinks: 4,
            parents_per_sink: 2,
            positive_findings: 1,
            seed: 123,
        };
        let (a, ea) = gen_noisyor(&spec).unwrap();
        let (b, eb) = gen_noisyor(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(ea, eb);
    }

    #[test]
    fn noisyor_rejects_too_many_parents() {
        let err = gen_noisyor(&NoisyOrSpec {
            roots: 2,
            sinks: 1,
            parents_per_sink: 3,
            positive_findings: 0,
            seed: 0,
        })
        .unwrap_err();
        assert!(matches!(err, Error::InfeasibleSpec(_)));
    }

    #[test]
    fn noisyor_cpt_is_a_distribution_per_parent_row() {
        let (net, _) = gen_noisyor(&NoisyOrSpec {
            roots: 3,
            sinks: 2,
            parents_per_sink: 2,
            positive_findings: 1,
            seed: 11,
        })
        .unwrap();
        for f in net.factors.iter().filter(|f| f.scope.len() > 1) {
            for row in f.table.chunks(2) {
                assert!((row[0] + row[1] - 1.0).abs() < 1e-12);
                assert!(row[0] > 0.0 && row[1] > 0.0);
            }
        }
    }

    #[test]
    fn zero_repetitions_run_is_empty() {
        let rows = run_experiment(
            &[FamilySpec::Grid(GridSpec::new(2, 2, 0))],
            &SweepConfig::new(Heuristic::Random, 1, 0),
            0,
        )
        .unwrap();
        assert!(rows.is_empty());
    }

    #[test]
    fn final_step_error_vanishes() {
        let rows = run_experiment(
            &[FamilySpec::Grid(GridSpec::new(2, 3, 8))],
            &SweepConfig::new(Heuristic::Random, 1, 4),
            3,
        )
        .unwrap();
        for instance in ["grid-s8-r0", "grid-s8-r1", "grid-s8-r2"] {
            let last = rows
                .iter()
                .filter(|r| r.instance == instance)
                .max_by_key(|r| r.k)
                .unwrap();
            assert!(last.rel_err_ecz <= 1e-9, "{}", last.rel_err_ecz);
            assert!(last.rel_err_ecg <= 1e-9, "{}", last.rel_err_ecg);
        }
    }

    #[test]
    fn noisyor_zero_positive_findings_probability_matches_oracle() {
        let (net, ev) = gen_noisyor(&NoisyOrSpec {
            roots: 4,
            sinks: 3,
            parents_per_sink: 2,
            positive_findings: 0,
            seed: 31,
        })
        .unwrap();
        let conditioned = net.condition(&ev).unwrap();
        let lz = log_partition(&conditioned).unwrap();
        let brute =
            oracle::brute_log_partition(&conditioned, &oracle::EnumerationBudget::default())
                .unwrap();
        assert!((lz - brute).abs() < 1e-10);
    }
}
