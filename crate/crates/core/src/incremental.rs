//! Re-verification of a modified network by replaying a stored proof tree.
//!
//! The stored witness is tried first. Then the tree is pruned with the new
//! abstraction and the open branches around the SAT leaf are re-solved.
//! Finally every UNSAT leaf is replayed. A leaf whose
//! certificate no longer holds is re-solved from that leaf downward.

use std::time::Instant;

use log::{debug, info};
use serde::Serialize;

use crate::abstraction::{analyze, is_property_refuted, Analysis, Bounds};
use crate::error::{Error, Result};
use crate::lp::{self, Feasibility, Tightening};
use crate::model::{validate_witness, Network, SafetyProperty, Verdict};
use crate::proof_tree::{NodeStatus, ProofTree, TreeVerdict};
use crate::reluplex::{search_from, solve, SearchParams, Seed};
use crate::simplex_core::{check_unsat_rows, initialize, row_is_unsat, Configuration, Encoding, RowVerdict};

/// How an UNSAT leaf certificate is re-checked.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Rebuild the stored basis and check the stored key row.
    Strict,
    /// Check every row of the initial tableau against LP-tightened bounds.
    #[default]
    Lazy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LeafOutcome {
    /// The stored counterexample is still a counterexample.
    WitnessValid,
    /// The UNSAT certificate was re-established without search.
    Replayed,
    /// Replay failed; search below the leaf proved it UNSAT.
    FallbackUnsat,
    /// Replay failed; search below the leaf found a counterexample.
    FallbackSat,
    /// A SAT or unexplored leaf re-solved to UNSAT.
    ResolvedUnsat,
    ResolvedSat,
    /// Removed by pruning with the new bounds.
    Pruned,
    /// Not needed once the verdict was known.
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeafRecord {
    pub leaf: usize,
    pub was: NodeStatus,
    pub outcome: LeafOutcome,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Timings {
    pub analysis_ms: f64,
    pub prune_ms: f64,
    pub sat_phase_ms: f64,
    pub unsat_phase_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IncrementalReport {
    pub mode: Mode,
    pub verdict: &'static str,
    pub witness: Option<Vec<f64>>,
    pub leaves: Vec<LeafRecord>,
    /// UNSAT leaves whose certificate replayed.
    pub replayed: usize,
    /// UNSAT leaves that needed search.
    pub fallback: usize,
    pub pruned: usize,
    /// `100·replayed / (replayed + fallback)`, absent without visited UNSAT leaves.
    pub replay_pct: Option<f64>,
    pub timings: Timings,
}

impl IncrementalReport {
    fn new(mode: Mode) -> Self {
        Self {
            mode,
            verdict: "unsat",
            witness: None,
            leaves: Vec::new(),
            replayed: 0,
            fallback: 0,
            pruned: 0,
            replay_pct: None,
            timings: Timings::default(),
        }
    }

    fn record(&mut self, leaf: usize, was: NodeStatus, outcome: LeafOutcome) {
        match outcome {
            LeafOutcome::Replayed => self.replayed += 1,
            LeafOutcome::FallbackSat | LeafOutcome::FallbackUnsat => self.fallback += 1,
            LeafOutcome::Pruned => self.pruned += 1,
            _ => {}
        }
        self.leaves.push(LeafRecord { leaf, was, outcome });
    }
}

/// Result of [`verify_incremental`]: the verdict, the updated tree for
/// the next round, and what happened to each stored leaf.
#[derive(Debug, Clone)]
pub struct Reverification {
    pub verdict: Verdict,
    pub tree: ProofTree,
    pub report: IncrementalReport,
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

pub fn verify_incremental(
    net: &Network,
    prop: &SafetyProperty,
    stored: &ProofTree,
    mode: Mode,
    params: &SearchParams,
) -> Result<Reverification> {
    let start = Instant::now();
    stored.check_compatible(net, prop)?;
    prop.check_against(net)?;
    let mut report = IncrementalReport::new(mode);

    let t = Instant::now();
    let root_bounds = match analyze(net, &prop.input_box, &[])? {
        Analysis::Feasible(b) if !is_property_refuted(&b, prop) => Some(b),
        _ => None,
    };
    report.timings.analysis_ms = ms(t);
    let Some(root_bounds) = root_bounds else {
        info!("property refuted by the abstraction of the new network");
        let (verdict, tree) = solve(net, prop, params)?;
        for n in stored.leaves() {
            report.record(n.id, n.status, LeafOutcome::Skipped);
        }
        return Ok(finish(verdict, tree, report, start));
    };

    if let Some(sat) = stored.sat_leaf() {
        if let Some(x) = sat.witness.as_ref().filter(|x| validate_witness(net, prop, x)) {
            debug!("stored witness still violates the property");
            for n in stored.leaves() {
                let outcome = if n.id == sat.id { LeafOutcome::WitnessValid } else { LeafOutcome::Skipped };
                report.record(n.id, n.status, outcome);
            }
            return Ok(finish(Verdict::Sat(x.clone()), stored.clone(), report, start));
        }
    }

    let t = Instant::now();
    let mut tree = stored.clone();
    let statuses: Vec<(usize, NodeStatus)> = stored.leaves().map(|n| (n.id, n.status)).collect();
    let pruned = tree.prune(&root_bounds);
    report.timings.prune_ms = ms(t);
    for id in &pruned {
        let was = statuses.iter().find(|(i, _)| i == id).map_or(NodeStatus::Unsolved, |s| s.1);
        report.record(*id, was, LeafOutcome::Pruned);
    }
    let c0 = initialize(net, prop, &root_bounds)?;

    let t = Instant::now();
    let sat_leaf = tree.sat_leaf().map(|n| n.id);
    let mut open = tree.leaves_with(NodeStatus::Unsolved);
    if let Some(s) = sat_leaf {
        let mut keyed = Vec::with_capacity(open.len());
        for id in open {
            keyed.push((tree.distance(s, id)?, id));
        }
        keyed.sort_unstable();
        open = std::iter::once(s).chain(keyed.into_iter().map(|(_, id)| id)).collect();
    }
    let unsat: Vec<usize> = tree.leaves_with(NodeStatus::Unsat);
    let mut order: Vec<(usize, NodeStatus)> = open
        .iter()
        .map(|id| (*id, if Some(*id) == sat_leaf { NodeStatus::Sat } else { NodeStatus::Unsolved }))
        .collect();
    let sat_phase = order.len();
    order.extend(unsat.iter().map(|id| (*id, NodeStatus::Unsat)));

    let mut found = None;
    let mut phase_start = t;
    for (i, &(id, was)) in order.iter().enumerate() {
        if i == sat_phase {
            report.timings.sat_phase_ms = ms(phase_start);
            phase_start = Instant::now();
        }
        if found.is_some() {
            report.record(id, was, LeafOutcome::Skipped);
            continue;
        }
        let (outcome, witness) = if was == NodeStatus::Unsat {
            let r = replay_leaf(net, prop, &mut tree, id, mode, &c0, params)?;
            (r.outcome, r.witness)
        } else {
            let witness = search_from(net, prop, &mut tree, id, params, None)?;
            let outcome = if witness.is_some() { LeafOutcome::ResolvedSat } else { LeafOutcome::ResolvedUnsat };
            (outcome, witness)
        };
        report.record(id, was, outcome);
        found = witness;
    }
    if order.len() <= sat_phase {
        report.timings.sat_phase_ms = ms(phase_start);
    } else {
        report.timings.unsat_phase_ms = ms(phase_start);
    }
    let verdict = found.map_or(Verdict::Unsat, Verdict::Sat);
    Ok(finish(verdict, tree, report, start))
}

fn finish(verdict: Verdict, mut tree: ProofTree, mut report: IncrementalReport, start: Instant) -> Reverification {
    tree.verdict = if verdict.is_sat() { TreeVerdict::Sat } else { TreeVerdict::Unsat };
    report.verdict = verdict.label();
    report.witness = verdict.witness().map(<[f64]>::to_vec);
    let visited = report.replayed + report.fallback;
    report.replay_pct = (visited > 0).then(|| 100.0 * report.replayed as f64 / visited as f64);
    report.timings.total_ms = ms(start);
    info!(
        "re-verification: {} ({} replayed, {} fell back, {} pruned)",
        report.verdict, report.replayed, report.fallback, report.pruned
    );
    Reverification { verdict, tree, report }
}

/// What happened to one UNSAT leaf.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafResult {
    pub outcome: LeafOutcome,
    pub witness: Option<Vec<f64>>,
}

/// Replays the UNSAT leaf `leaf` of `tree` on `net`, re-solving below it
/// if the certificate no longer holds.
pub fn solve_leaf(
    net: &Network,
    prop: &SafetyProperty,
    tree: &mut ProofTree,
    leaf: usize,
    mode: Mode,
    params: &SearchParams,
) -> Result<LeafResult> {
    let Analysis::Feasible(root) = analyze(net, &prop.input_box, &[])? else {
        return Ok(LeafResult { outcome: LeafOutcome::Replayed, witness: None });
    };
    let c0 = initialize(net, prop, &root)?;
    replay_leaf(net, prop, tree, leaf, mode, &c0, params)
}

fn replay_leaf(
    net: &Network,
    prop: &SafetyProperty,
    tree: &mut ProofTree,
    leaf: usize,
    mode: Mode,
    c0: &Configuration,
    params: &SearchParams,
) -> Result<LeafResult> {
    let replayed = Ok(LeafResult { outcome: LeafOutcome::Replayed, witness: None });
    let asserts = tree.asserts_of(leaf)?;
    let Analysis::Feasible(bounds) = analyze(net, &prop.input_box, &asserts)? else {
        return replayed;
    };
    let relax = lp::build(net, prop, &asserts, &bounds);
    if relax.feasibility()? == Feasibility::Infeasible {
        return replayed;
    }
    let enc = Encoding::new(net, prop);
    let node = tree.node(leaf)?.clone();

    let seed = match (mode, node.basis.as_deref(), node.key_row_var) {
        (Mode::Strict, Some(basis), Some(key)) => match c0.tableau.gauss_to_basis(basis) {
            Ok(tab) => {
                let row = tab.row(key).ok_or(Error::Internal(format!("key {key} not basic after rebasing")))?;
                let mut vars = vec![key];
                vars.extend((0..row.len()).filter(|j| row[*j] != 0.0).map(crate::model::NeuronId));
                let Some(ranges) = relax.tighten(&vars)? else { return replayed };
                let (mut lower, mut upper) = enc.variable_bounds(net, prop, &bounds);
                for (v, r) in vars.iter().zip(&ranges) {
                    lower[v.0] = lower[v.0].max(r.lo);
                    upper[v.0] = upper[v.0].min(r.hi);
                }
                if row_is_unsat(&tab, key, &lower, &upper) {
                    return replayed;
                }
                Seed { config: Configuration::new(tab, lower, upper, enc.relus(), enc.layout.inputs.clone()), bounds }
            }
            Err(Error::Singular(v)) => {
                debug!("leaf {leaf}: stored basis singular at {v}, checking lazily");
                match lazy_check(net, prop, &asserts, &enc, c0)? {
                    None => return replayed,
                    Some(seed) => seed,
                }
            }
            Err(e) => return Err(e),
        },
        _ => match lazy_check(net, prop, &asserts, &enc, c0)? {
            None => return replayed,
            Some(seed) => seed,
        },
    };

    debug!("leaf {leaf}: certificate failed, searching below it");
    let witness = search_from(net, prop, tree, leaf, params, Some(seed))?;
    let outcome = if witness.is_some() { LeafOutcome::FallbackSat } else { LeafOutcome::FallbackUnsat };
    Ok(LeafResult { outcome, witness })
}

/// `None` when some row of the initial tableau is contradicted by the
/// tightened bounds; otherwise a search seed built from those bounds.
fn lazy_check(
    net: &Network,
    prop: &SafetyProperty,
    asserts: &[crate::abstraction::Assertion],
    enc: &Encoding,
    c0: &Configuration,
) -> Result<Option<Seed>> {
    let bounds: Bounds = match lp::tighten_inputs_then_repropagate(net, prop, asserts)? {
        Tightening::Infeasible => return Ok(None),
        Tightening::Bounds { bounds, .. } => bounds,
    };
    let (lower, upper) = enc.variable_bounds(net, prop, &bounds);
    if let RowVerdict::UnsatRow(_) = check_unsat_rows(&c0.tableau, &lower, &upper) {
        return Ok(None);
    }
    let config = Configuration::new(c0.tableau.clone(), lower, upper, enc.relus(), enc.layout.inputs.clone());
    Ok(Some(Seed { config, bounds }))
}
