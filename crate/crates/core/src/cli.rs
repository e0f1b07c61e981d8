//! Command-line front end.
//!
//! Exit codes are shared by every subcommand: 10 for SAT, 20 for UNSAT,
//! 2 when a proof tree does not fit the network, 1 for any other error.
//! Logging is controlled by `INCREMARK_LOG` (`error`, `info`, `debug`, ...).

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use log::info;

use crate::abstraction::{analyze, Analysis};
use crate::bench::{self, BenchConfig, Perturbation, Scope};
use crate::error::{Error, Result};
use crate::incremental::{verify_incremental, Mode};
use crate::model::{load_network, load_property, save_network, Network, SafetyProperty, Verdict};
use crate::proof_tree::ProofTree;
use crate::reluplex::{solve, SearchParams};
use crate::simplex_core::{initialize, Encoding};

pub const EXIT_SAT: i32 = 10;
pub const EXIT_UNSAT: i32 = 20;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_SHAPE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "incremark", version, about = "Verify ReLU networks and re-verify them after small weight changes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve a query from scratch.
    Verify(VerifyArgs),
    /// Re-verify a modified network using a stored proof tree.
    Reverify(ReverifyArgs),
    /// Print the abstraction bounds of every neuron.
    Bounds(QueryArgs),
    /// Write a randomly perturbed copy of a network.
    Perturb(PerturbArgs),
    /// Compare scratch and incremental solving over a perturbation sweep.
    Bench(BenchArgs),
    /// Decide a small query by enumerating activation patterns.
    Oracle(QueryArgs),
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long)]
    pub net: PathBuf,
    #[arg(long)]
    pub prop: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub query: QueryArgs,
    #[arg(long)]
    pub tree_out: Option<PathBuf>,
    /// Local-search steps per node before splitting.
    #[arg(long)]
    pub budget: Option<usize>,
    /// Logged for reproducibility records; the search is deterministic.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Print the initial tableau and bounds to stderr.
    #[arg(long)]
    pub dump_tableau: bool,
}

#[derive(Debug, Args)]
pub struct ReverifyArgs {
    #[command(flatten)]
    pub query: QueryArgs,
    #[arg(long)]
    pub tree: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Lazy)]
    pub mode: Mode,
    #[arg(long)]
    pub tree_out: Option<PathBuf>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub budget: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PerturbArgs {
    #[arg(long)]
    pub net: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    pub fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Scope::Weights)]
    pub scope: Scope,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub query: QueryArgs,
    #[arg(long, value_delimiter = ',', default_values_t = [0.001, 0.01, 0.03, 0.05])]
    pub gammas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [1.0])]
    pub fractions: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Scope::Weights)]
    pub scope: Scope,
    #[arg(long, value_enum, default_value_t = Mode::Lazy)]
    pub mode: Mode,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Skip the pattern-enumeration cross-check.
    #[arg(long)]
    pub no_oracle: bool,
}

fn check_flags(cmd: &Command) -> Result<()> {
    let bad = |msg: String| Err(Error::InvalidArgument(msg));
    match cmd {
        Command::Perturb(a) => {
            if !(a.gamma >= 0.0 && a.gamma.is_finite()) {
                return bad(format!("--gamma must be a finite non-negative number, got {}", a.gamma));
            }
            if !(a.fraction > 0.0 && a.fraction <= 1.0) {
                return bad(format!("--fraction must lie in (0, 1], got {}", a.fraction));
            }
        }
        Command::Bench(a) => {
            if let Some(g) = a.gammas.iter().find(|g| !(**g >= 0.0 && g.is_finite())) {
                return bad(format!("gamma {g} is not a finite non-negative number"));
            }
            if let Some(f) = a.fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
                return bad(format!("fraction {f} is outside (0, 1]"));
            }
            if a.trials == 0 || a.jobs == 0 {
                return bad("--trials and --jobs must be positive".into());
            }
        }
        _ => {}
    }
    Ok(())
}

fn load_query(q: &QueryArgs) -> Result<(Network, SafetyProperty)> {
    let net = load_network(&q.net)?;
    let prop = load_property(&q.prop, &net)?;
    prop.check_against(&net)?;
    Ok((net, prop))
}

fn verdict_line(v: &Verdict) -> String {
    match v {
        Verdict::Sat(x) => {
            let xs: Vec<String> = x.iter().map(|v| format!("{v}")).collect();
            format!("SAT {}", xs.join(" "))
        }
        Verdict::Unsat => "UNSAT".to_string(),
    }
}

fn verdict_code(v: &Verdict) -> i32 {
    if v.is_sat() {
        EXIT_SAT
    } else {
        EXIT_UNSAT
    }
}

fn params(budget: Option<usize>) -> SearchParams {
    SearchParams { local_budget: budget, ..SearchParams::default() }
}

fn verify(a: &VerifyArgs, out: &mut dyn Write) -> Result<i32> {
    let (net, prop) = load_query(&a.query)?;
    if let Some(seed) = a.seed {
        info!("seed {seed}");
    }
    if a.dump_tableau {
        if let Analysis::Feasible(b) = analyze(&net, &prop.input_box, &[])? {
            if !prop.is_vacuous() {
                eprintln!("{}", initialize(&net, &prop, &b)?.dump(&Encoding::new(&net, &prop)));
            }
        }
    }
    let (verdict, tree) = solve(&net, &prop, &params(a.budget))?;
    if let Some(path) = &a.tree_out {
        tree.save(path)?;
    }
    writeln!(out, "{}", verdict_line(&verdict))?;
    Ok(verdict_code(&verdict))
}

fn reverify(a: &ReverifyArgs, out: &mut dyn Write) -> Result<i32> {
    let (net, prop) = load_query(&a.query)?;
    let stored = ProofTree::load(&a.tree)?;
    let r = verify_incremental(&net, &prop, &stored, a.mode, &params(a.budget))?;
    if let Some(path) = &a.tree_out {
        r.tree.save(path)?;
    }
    writeln!(out, "{}", verdict_line(&r.verdict))?;
    let json = serde_json::to_string_pretty(&r.report)?;
    match &a.report {
        Some(path) => std::fs::write(path, json)?,
        None => writeln!(out, "{json}")?,
    }
    Ok(verdict_code(&r.verdict))
}

fn bounds(a: &QueryArgs, out: &mut dyn Write) -> Result<i32> {
    let (net, prop) = load_query(a)?;
    let b = match analyze(&net, &prop.input_box, &[])? {
        Analysis::Feasible(b) => b,
        Analysis::Infeasible(n) => {
            writeln!(out, "infeasible at {n}")?;
            return Ok(0);
        }
    };
    let layout = net.layout();
    for i in 0..layout.count {
        let id = crate::model::NeuronId(i);
        writeln!(out, "{id} [{:.6}, {:.6}]", b.lo(id), b.hi(id))?;
    }
    for (post, rel) in b.relations() {
        writeln!(
            out,
            "relu {} -> {post} {:?} lower {:.6}*x{:+.6} upper {:.6}*x{:+.6}",
            rel.pre, rel.phase, rel.lower.slope, rel.lower.intercept, rel.upper.slope, rel.upper.intercept
        )?;
    }
    Ok(0)
}

fn perturb(a: &PerturbArgs) -> Result<i32> {
    let net = load_network(&a.net)?;
    let p = Perturbation { gamma: a.gamma, fraction: a.fraction, seed: a.seed, scope: a.scope };
    let changed = bench::perturb(&net, &p);
    if changed == net {
        std::fs::copy(&a.net, &a.out)?;
    } else {
        save_network(&changed, &a.out)?;
    }
    Ok(0)
}

fn run_bench(a: &BenchArgs, out: &mut dyn Write) -> Result<i32> {
    let (net, prop) = load_query(&a.query)?;
    let cfg = BenchConfig {
        gammas: a.gammas.clone(),
        fractions: a.fractions.clone(),
        trials: a.trials,
        seed: a.seed,
        scope: a.scope,
        mode: a.mode,
        params: SearchParams::default(),
        jobs: a.jobs,
        use_oracle: !a.no_oracle,
    };
    let rows = bench::compare(&net, &prop, &cfg)?;
    match &a.out {
        Some(path) => bench::write_csv(&rows, std::fs::File::create(path)?)?,
        None => bench::write_csv(&rows, &mut *out)?,
    }
    let summary = bench::summarize(&rows);
    let mut report: Box<dyn Write> = if a.out.is_some() { Box::new(&mut *out) } else { Box::new(std::io::stderr()) };
    for s in &summary {
        let pct = s.mean_replay_pct.map_or_else(|| "NA".to_string(), |p| format!("{p:.1}%"));
        writeln!(report, "gamma {:<6} runs {:<4} replay {pct:<7} speedup {:.2}x", s.gamma, s.runs, s.speedup)?;
    }
    let disagreements = rows.iter().filter(|r| !r.agree).count();
    if disagreements > 0 {
        writeln!(report, "{disagreements} runs disagree")?;
        return Ok(EXIT_ERROR);
    }
    Ok(0)
}

fn oracle(a: &QueryArgs, out: &mut dyn Write) -> Result<i32> {
    let (net, prop) = load_query(a)?;
    let v = bench::oracle(&net, &prop)?;
    writeln!(out, "{}", verdict_line(&v))?;
    Ok(verdict_code(&v))
}

fn dispatch(cmd: &Command, out: &mut dyn Write) -> Result<i32> {
    check_flags(cmd)?;
    match cmd {
        Command::Verify(a) => verify(a, out),
        Command::Reverify(a) => reverify(a, out),
        Command::Bounds(a) => bounds(a, out),
        Command::Perturb(a) => perturb(a),
        Command::Bench(a) => run_bench(a, out),
        Command::Oracle(a) => oracle(a, out),
    }
}

/// Parses `args` (program name first), runs the command writing to
/// `out`, and returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { 0 };
        }
    };
    match dispatch(&cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, Error::ShapeMismatch { .. }) {
                EXIT_SHAPE
            } else {
                EXIT_ERROR
            }
        }
    }
}

pub fn init_logging() {
    let env = env_logger::Env::new().filter_or("INCREMARK_LOG", "warn");
    let _ = env_logger::Builder::from_env(env).try_init();
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    fn run_str(args: &[&str]) -> (i32, String) {
        let mut buf = Vec::new();
        let code = run(std::iter::once("incremark").chain(args.iter().copied()), &mut buf);
        (code, String::from_utf8(buf).unwrap())
    }

    #[test]
    fn missing_file_is_an_error() {
        let (code, _) = run_str(&["verify", "--net", "/nonexistent.rnn", "--prop", "/nonexistent.prop"]);
        assert_eq!(code, EXIT_ERROR);
    }

    #[test]
    fn bad_flags_are_rejected_before_io() {
        let (code, _) = run_str(&["perturb", "--net", "/nonexistent", "--out", "/nonexistent2", "--gamma", "-1"]);
        assert_eq!(code, EXIT_ERROR);
        assert!(!Path::new("/nonexistent2").exists());
        let (code, _) = run_str(&["verify", "--bogus"]);
        assert_eq!(code, EXIT_ERROR);
    }
}
