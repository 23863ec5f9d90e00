//! Command-line frontend: exact inference, edge-deletion approximation
//! with corrections, recovery sweeps, seeded benchmark batches, and UAI
//! file conversion.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on computation errors
//! (zero partition mass, enumeration over budget, or non-convergence under
//! `--strict`).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use edgecorr::bench::{relative_error, ExperimentRow, FamilySpec, GridSpec, NoisyOrSpec};
use edgecorr::correction::{correct, CorrectionReport};
use edgecorr::edbp::{edbp_iterate, init_parameters, ConvergenceReport, EdbpConfig, Schedule};
use edgecorr::inference::{log_partition, marginal};
use edgecorr::model::uai;
use edgecorr::model::{extend_all, extend_for_deletion, FactorNetwork, VarId};
use edgecorr::oracle::{brute_log_partition, brute_marginal, EnumerationBudget};
use edgecorr::recovery::{recovery_sweep, spanning_tree_cuts, Heuristic, SweepConfig};

#[derive(Parser)]
#[command(
    name = "edgecorr",
    about = "Partition function approximation by edge deletion and correction",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exact log partition function and optional marginals.
    Exact(ExactArgs),
    /// Delete edges, iterate their parameters, and print the corrected
    /// partition function report.
    Approx(ApproxArgs),
    /// Recover deleted edges batch by batch, one CSV row per step.
    Sweep(SweepArgs),
    /// Run seeded experiment batches over random model families.
    Bench(BenchArgs),
    /// Rewrite a UAI model (MARKOV or BAYES) in MARKOV factor form.
    Convert(ConvertArgs),
}

#[derive(Args)]
struct ExactArgs {
    /// UAI model file.
    model: PathBuf,
    /// UAI .evid evidence file to condition on.
    #[arg(long)]
    evidence: Option<PathBuf>,
    /// Use brute-force enumeration instead of variable elimination.
    #[arg(long)]
    brute: bool,
    /// Print the marginal of a variable; repeatable.
    #[arg(long = "marginal", value_name = "VAR")]
    marginals: Vec<VarId>,
}

#[derive(Args)]
struct ApproxArgs {
    /// UAI model file.
    model: PathBuf,
    /// UAI .evid evidence file to condition on.
    #[arg(long)]
    evidence: Option<PathBuf>,
    /// Cut list file, one `factor_id variable_id` pair per line; every
    /// resulting equivalence edge is deleted.
    #[arg(long, conflicts_with = "spanning_tree")]
    cuts: Option<PathBuf>,
    /// Delete the complement of a random spanning tree (the default).
    #[arg(long)]
    spanning_tree: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-10)]
    tolerance: f64,
    #[arg(long, default_value_t = 1000)]
    max_iters: usize,
    #[arg(long, default_value_t = 0.0)]
    damping: f64,
    /// Update schedule: seq or sync.
    #[arg(long, default_value = "seq")]
    schedule: String,
    /// Fail (exit 2) when the iteration does not converge.
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// UAI model file.
    model: PathBuf,
    /// UAI .evid evidence file to condition on.
    #[arg(long)]
    evidence: Option<PathBuf>,
    /// Recovery heuristic: random, mi, mi2, or magnitude.
    #[arg(long, default_value = "random")]
    heuristic: String,
    /// Edges recovered per step.
    #[arg(long, default_value_t = 1)]
    k_step: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Stop after this many steps.
    #[arg(long)]
    max_steps: Option<usize>,
    /// Skip the exact reference computation (error columns stay empty).
    #[arg(long)]
    no_exact: bool,
    /// Fail (exit 2) when any step does not converge.
    #[arg(long)]
    strict: bool,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Model family: grid or noisyor.
    #[arg(long)]
    family: String,
    #[arg(long, default_value_t = 4)]
    rows: usize,
    #[arg(long, default_value_t = 4)]
    cols: usize,
    #[arg(long, default_value_t = 8)]
    roots: usize,
    #[arg(long, default_value_t = 8)]
    sinks: usize,
    #[arg(long, default_value_t = 4)]
    parents: usize,
    #[arg(long, default_value_t = 0)]
    positive: usize,
    #[arg(long, default_value_t = 10)]
    instances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "random")]
    heuristic: String,
    #[arg(long, default_value_t = 1)]
    k_step: usize,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ConvertArgs {
    /// UAI model file (MARKOV or BAYES).
    model: PathBuf,
    /// Write here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum CliError {
    Usage(String),
    Compute(String),
}

impl From<edgecorr::Error> for CliError {
    fn from(e: edgecorr::Error) -> Self {
        CliError::Compute(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let result = match cli.command {
        Command::Exact(args) => run_exact(args),
        Command::Approx(args) => run_approx(args),
        Command::Sweep(args) => run_sweep(args),
        Command::Bench(args) => run_bench(args),
        Command::Convert(args) => run_convert(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Compute(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn read_to_string(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Compute(format!("cannot read {}: {e}", path.display())))
}

fn load_model(path: &Path, evidence: &Option<PathBuf>) -> CliResult<FactorNetwork> {
    let net = uai::load_uai(&read_to_string(path)?)?;
    match evidence {
        None => Ok(net),
        Some(ev_path) => {
            let ev = uai::load_evidence(&read_to_string(ev_path)?)?;
            Ok(net.condition(&ev)?)
        }
    }
}

fn write_output(out: &Option<PathBuf>, content: &str) -> CliResult<()> {
    match out {
        None => {
            print!("{content}");
            Ok(())
        }
        Some(path) => std::fs::write(path, content)
            .map_err(|e| CliError::Compute(format!("cannot write {}: {e}", path.display()))),
    }
}

/// Print a log-space value under `name` in natural log, base 10, and, when
/// it fits an f64, in linear space.
fn push_log_value(out: &mut String, name: &str, log_value: f64) {
    let _ = writeln!(out, "log_{name} {log_value:.12e}");
    let _ = writeln!(out, "log10_{name} {:.12e}", log_value / std::f64::consts::LN_10);
    if log_value.abs() < 700.0 {
        let _ = writeln!(out, "{name} {:.12e}", log_value.exp());
    }
}

fn run_exact(args: ExactArgs) -> CliResult<()> {
    let net = load_model(&args.model, &args.evidence)?;
    let mut out = String::new();
    let log_z = if args.brute {
        brute_log_partition(&net, &EnumerationBudget::default())?
    } else {
        log_partition(&net)?
    };
    push_log_value(&mut out, "Z", log_z);
    for &v in &args.marginals {
        let table = if args.brute {
            brute_marginal(&net, &[v].into_iter().collect(), &EnumerationBudget::default())?
        } else {
            marginal(&net, &[v].into_iter().collect())?
        };
        let entries: Vec<String> = table.probs.iter().map(|p| format!("{p:.12e}")).collect();
        let _ = writeln!(out, "marginal {v} {}", entries.join(" "));
    }
    print!("{out}");
    Ok(())
}

fn parse_cuts(text: &str) -> CliResult<Vec<(usize, usize)>> {
    let mut cuts = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let parse = |tok: Option<&str>| -> CliResult<usize> {
            tok.ok_or_else(|| {
                CliError::Usage(format!("cuts line {}: expected two ids", lineno + 1))
            })?
            .parse()
            .map_err(|_| CliError::Usage(format!("cuts line {}: bad id", lineno + 1)))
        };
        let f = parse(parts.next())?;
        let v = parse(parts.next())?;
        cuts.push((f, v));
    }
    Ok(cuts)
}

fn parse_schedule(name: &str) -> CliResult<Schedule> {
    match name {
        "seq" => Ok(Schedule::Sequential),
        "sync" => Ok(Schedule::Synchronous),
        other => Err(CliError::Usage(format!(
            "unknown schedule `{other}` (expected seq or sync)"
        ))),
    }
}

fn format_report(report: &CorrectionReport, convergence: &ConvergenceReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "n_deleted {}", report.n_deleted);
    let _ = writeln!(out, "converged {}", convergence.converged);
    let _ = writeln!(out, "iterations {}", convergence.iterations);
    let _ = writeln!(out, "final_residual {:.6e}", convergence.final_residual);
    push_log_value(&mut out, "Z_prime", report.log_z_prime);
    push_log_value(&mut out, "Z_ecz", report.log_z_ecz);
    push_log_value(&mut out, "Z_ecg", report.log_z_ecg);
    let _ = writeln!(out, "dual_energy {:.12e}", report.dual_energy());
    for term in &report.terms {
        let _ = writeln!(
            out,
            "edge {} original {} {} log_z {:.12e} log_y {:.12e} mi {:.6e}",
            term.edge_index, term.original.0, term.original.1, term.log_z, term.log_y, term.mi
        );
    }
    out
}

fn run_approx(args: ApproxArgs) -> CliResult<()> {
    let net = load_model(&args.model, &args.evidence)?;
    let config = EdbpConfig {
        tolerance: args.tolerance,
        max_iters: args.max_iters,
        damping: args.damping,
        schedule: parse_schedule(&args.schedule)?,
    };
    let (extended, deleted) = match &args.cuts {
        Some(path) => {
            let cuts = parse_cuts(&read_to_string(path)?)?;
            let extended = extend_for_deletion(&net, &cuts)?;
            let all = (0..extended.equiv_edges.len()).collect();
            (extended, all)
        }
        None => {
            let extended = extend_all(&net);
            let deleted = spanning_tree_cuts(&extended, args.seed);
            (extended, deleted)
        }
    };
    let mut model = init_parameters(extended, deleted);
    let convergence = edbp_iterate(&mut model, &config)?;
    let report = correct(&model)?;
    print!("{}", format_report(&report, &convergence));
    if args.strict && !convergence.converged {
        return Err(CliError::Compute(format!(
            "iteration did not converge within {} sweeps (residual {:.3e})",
            convergence.iterations, convergence.final_residual
        )));
    }
    Ok(())
}

fn run_sweep(args: SweepArgs) -> CliResult<()> {
    let net = load_model(&args.model, &args.evidence)?;
    let heuristic = Heuristic::from_str(&args.heuristic).map_err(CliError::Usage)?;
    if args.k_step == 0 {
        return Err(CliError::Usage("--k-step must be at least 1".into()));
    }
    let instance = args
        .model
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into());
    let exact = if args.no_exact {
        None
    } else {
        Some(log_partition(&net)?)
    };
    let mut config = SweepConfig::new(heuristic, args.k_step, args.seed);
    config.max_steps = args.max_steps;
    let steps = recovery_sweep(&net, &config)?;
    let mut out = String::from(
        "instance,heuristic,k,converged,log_Z_exact,log_Z_ecz,log_Z_ecg,rel_err_ecz,rel_err_ecg,wall_ms\n",
    );
    let mut nonconverged = 0usize;
    for step in &steps {
        if !step.convergence.converged {
            nonconverged += 1;
        }
        let (exact_col, err_z, err_g) = match exact {
            Some(lz) => (
                format!("{lz:.12e}"),
                format!("{:.6e}", relative_error(step.report.log_z_ecz, lz)),
                format!("{:.6e}", relative_error(step.report.log_z_ecg, lz)),
            ),
            None => (String::new(), String::new(), String::new()),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{:.12e},{:.12e},{},{},{:.3}",
            instance,
            heuristic,
            step.k,
            step.convergence.converged,
            exact_col,
            step.report.log_z_ecz,
            step.report.log_z_ecg,
            err_z,
            err_g,
            step.wall_ms
        );
    }
    write_output(&args.out, &out)?;
    if args.strict && nonconverged > 0 {
        return Err(CliError::Compute(format!(
            "{nonconverged} sweep steps did not converge"
        )));
    }
    Ok(())
}

fn run_bench(args: BenchArgs) -> CliResult<()> {
    let heuristic = Heuristic::from_str(&args.heuristic).map_err(CliError::Usage)?;
    let family = match args.family.as_str() {
        "grid" => FamilySpec::Grid(GridSpec::new(args.rows, args.cols, args.seed)),
        "noisyor" => FamilySpec::NoisyOr(NoisyOrSpec {
            roots: args.roots,
            sinks: args.sinks,
            parents_per_sink: args.parents,
            positive_findings: args.positive,
            seed: args.seed,
        }),
        other => {
            return Err(CliError::Usage(format!(
                "unknown family `{other}` (expected grid or noisyor)"
            )))
        }
    };
    let sweep = SweepConfig::new(heuristic, args.k_step, args.seed);
    let rows = edgecorr::bench::run_experiment(&[family], &sweep, args.instances)?;
    let mut out = String::from(ExperimentRow::CSV_HEADER);
    out.push('\n');
    for row in &rows {
        out.push_str(&row.to_csv());
        out.push('\n');
    }
    write_output(&args.out, &out)
}

fn run_convert(args: ConvertArgs) -> CliResult<()> {
    let net = uai::load_uai(&read_to_string(&args.model)?)?;
    write_output(&args.out, &uai::save_uai(&net))
}
