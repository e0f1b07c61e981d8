//! Case-splitting search over ReLU phases, recording its [`ProofTree`].
//!
//! Every node re-runs the abstraction under the assertions on its path,
//! copies the configuration of its parent with the new bounds, and then
//! runs bounded local search. A node whose search gets stuck is split on
//! the uncertain ReLU that was repaired most often. The `≤ 0` child is
//! explored first and the search stops at the first genuine counterexample.

use std::rc::Rc;

use log::{debug, trace};

use crate::abstraction::{analyze, Analysis, Assertion, Bounds};
use crate::error::{Error, Result};
use crate::lp::{self, Feasibility};
use crate::model::{validate_witness, Network, NeuronId, SafetyProperty, Verdict};
use crate::proof_tree::ProofTree;
use crate::simplex_core::{
    initialize, row_is_unsat, Configuration, Encoding, Repair, RowVerdict, EPS_BOUND, EPS_PIVOT,
};

/// Knobs of the search. The defaults suit networks with a few dozen ReLUs.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchParams {
    /// Repair steps per node before splitting. `None` scales with the
    /// number of uncertain ReLUs: `max(200, 50·k)`.
    pub local_budget: Option<usize>,
    /// Split as soon as one uncertain pair has been repaired this often.
    pub split_threshold: Option<u32>,
    /// Refuse to go deeper than this many assertions.
    pub max_depth: Option<usize>,
}

impl Default for SearchParams {
    fn default() -> Self {
        Self { local_budget: None, split_threshold: Some(5), max_depth: None }
    }
}

/// Counters collected during one search.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SearchStats {
    pub nodes: usize,
    pub repair_steps: usize,
    pub lp_calls: usize,
}

/// A ready-made starting point for the first node of a search.
#[derive(Debug, Clone)]
pub struct Seed {
    pub config: Configuration,
    pub bounds: Bounds,
}

/// Decides `prop` on `net` from scratch.
pub fn solve(net: &Network, prop: &SafetyProperty, params: &SearchParams) -> Result<(Verdict, ProofTree)> {
    let (verdict, tree, _) = solve_with_stats(net, prop, params)?;
    Ok((verdict, tree))
}

pub fn solve_with_stats(
    net: &Network,
    prop: &SafetyProperty,
    params: &SearchParams,
) -> Result<(Verdict, ProofTree, SearchStats)> {
    prop.check_against(net)?;
    let mut tree = ProofTree::new(net, prop);
    let mut stats = SearchStats::default();
    let root = tree.root();
    let found = search_from_with_stats(net, prop, &mut tree, root, params, None, &mut stats)?;
    let verdict = match found {
        Some(x) => Verdict::Sat(x),
        None => Verdict::Unsat,
    };
    Ok((verdict, tree, stats))
}

/// Re-solves the subtree rooted at leaf `leaf` of `tree`, growing the tree
/// in place. Returns the counterexample if one is found below the leaf.
pub fn search_from(
    net: &Network,
    prop: &SafetyProperty,
    tree: &mut ProofTree,
    leaf: usize,
    params: &SearchParams,
    seed: Option<Seed>,
) -> Result<Option<Vec<f64>>> {
    search_from_with_stats(net, prop, tree, leaf, params, seed, &mut SearchStats::default())
}

fn search_from_with_stats(
    net: &Network,
    prop: &SafetyProperty,
    tree: &mut ProofTree,
    leaf: usize,
    params: &SearchParams,
    seed: Option<Seed>,
    stats: &mut SearchStats,
) -> Result<Option<Vec<f64>>> {
    tree.reopen(leaf)?;
    let enc = Encoding::new(net, prop);
    let basis0 = enc.initial_basis(net, prop);
    if prop.is_vacuous() {
        let key = basis0.first().copied().unwrap_or(NeuronId(0));
        tree.mark_unsat(leaf, basis0, key)?;
        return Ok(None);
    }
    let mut searcher = Searcher { net, prop, params, enc, basis0, tree, stats };
    let asserts = searcher.tree.asserts_of(leaf)?;
    let mut stack = vec![Pending { id: leaf, asserts, parent: None }];
    let mut seed = seed;
    while let Some(task) = stack.pop() {
        match searcher.visit(&task, seed.take())? {
            Visit::Closed => {}
            Visit::Found(x) => return Ok(Some(x)),
            Visit::Split(neuron, config) => {
                let (neg, pos) = searcher.tree.split(task.id, neuron)?;
                let config = Rc::new(*config);
                let with = |a: Assertion| {
                    let mut v = task.asserts.clone();
                    v.push(a);
                    v
                };
                let pos_task = Pending { id: pos, asserts: with(Assertion::nonneg(neuron)), parent: Some(config.clone()) };
                let neg_task = Pending { id: neg, asserts: with(Assertion::nonpos(neuron)), parent: Some(config) };
                stack.push(pos_task);
                stack.push(neg_task);
            }
        }
    }
    Ok(None)
}

struct Pending {
    id: usize,
    asserts: Vec<Assertion>,
    parent: Option<Rc<Configuration>>,
}

enum Visit {
    Closed,
    Found(Vec<f64>),
    Split(NeuronId, Box<Configuration>),
}

struct Searcher<'a> {
    net: &'a Network,
    prop: &'a SafetyProperty,
    params: &'a SearchParams,
    enc: Encoding,
    basis0: Vec<NeuronId>,
    tree: &'a mut ProofTree,
    stats: &'a mut SearchStats,
}

impl Searcher<'_> {
    fn visit(&mut self, task: &Pending, seed: Option<Seed>) -> Result<Visit> {
        self.stats.nodes += 1;
        if let Some(max) = self.params.max_depth {
            if task.asserts.len() > max {
                return Err(Error::Internal(format!("search exceeded depth {max}")));
            }
        }
        let (mut cfg, bounds) = match seed {
            Some(Seed { config, bounds }) => (config, bounds),
            None => {
                let bounds = match analyze(self.net, &self.prop.input_box, &task.asserts)? {
                    Analysis::Feasible(b) => b,
                    Analysis::Infeasible(n) => {
                        debug!("node {}: abstraction empty at {n}", task.id);
                        let key = if self.basis0.contains(&n) { n } else { self.basis0[0] };
                        self.tree.mark_unsat(task.id, self.basis0.clone(), key)?;
                        return Ok(Visit::Closed);
                    }
                };
                let cfg = match &task.parent {
                    Some(parent) => {
                        let mut cfg = Configuration::clone(parent);
                        let (lower, upper) = self.bounds_of(&bounds);
                        cfg.set_bounds(lower, upper);
                        cfg.reset_violations();
                        cfg
                    }
                    None => {
                        let mut cfg = initialize(self.net, self.prop, &bounds)?;
                        let (lower, upper) = self.bounds_of(&bounds);
                        cfg.set_bounds(lower, upper);
                        cfg
                    }
                };
                (cfg, bounds)
            }
        };

        if let Some(v) = cfg.crossed_bound() {
            let key = bring_into_basis(&mut cfg, v)?;
            self.close(task.id, &cfg, key)?;
            return Ok(Visit::Closed);
        }
        if let RowVerdict::UnsatRow(k) = cfg.check_unsat_rows() {
            self.close(task.id, &cfg, k)?;
            return Ok(Visit::Closed);
        }

        let uncertain: Vec<NeuronId> =
            cfg.relus.iter().map(|l| l.pre).filter(|p| cfg.is_uncertain(*p)).collect();
        let budget = match (uncertain.is_empty(), self.params.local_budget) {
            (true, _) => 20 * (cfg.tableau.nvars() + cfg.tableau.row_count()).max(50),
            (false, Some(b)) => b,
            (false, None) => (50 * uncertain.len()).max(200),
        };
        let threshold = if uncertain.is_empty() { None } else { self.params.split_threshold };

        let outcome = self.local_search(&mut cfg, budget, threshold, &uncertain)?;
        match outcome {
            Repair::Satisfied(x) => {
                if let Some(x) = self.genuine(x) {
                    self.tree.mark_sat(task.id, Some(cfg.basis()), x.clone())?;
                    return Ok(Visit::Found(x));
                }
                trace!("node {}: local optimum fails forward check", task.id);
            }
            Repair::Conflict(b) if row_is_unsat(&cfg.tableau, b, &cfg.lower, &cfg.upper) => {
                self.close(task.id, &cfg, b)?;
                return Ok(Visit::Closed);
            }
            Repair::Conflict(_) => {
                if let RowVerdict::UnsatRow(k) = cfg.check_unsat_rows() {
                    self.close(task.id, &cfg, k)?;
                    return Ok(Visit::Closed);
                }
            }
            Repair::Stuck(_) | Repair::Progress => {}
        }

        if uncertain.is_empty() {
            return self.decide_linear(task, &cfg, &bounds);
        }
        let stats = cfg.violation_stats();
        let neuron = uncertain
            .iter()
            .copied()
            .max_by(|a, b| {
                let ca = stats.iter().find(|(p, _)| p == a).map_or(0, |s| s.1);
                let cb = stats.iter().find(|(p, _)| p == b).map_or(0, |s| s.1);
                ca.cmp(&cb).then(b.cmp(a))
            })
            .expect("uncertain is nonempty");
        debug!("node {}: split on {neuron}", task.id);
        Ok(Visit::Split(neuron, Box::new(cfg)))
    }

    fn bounds_of(&self, bounds: &Bounds) -> (Vec<f64>, Vec<f64>) {
        let (mut lower, mut upper) = self.enc.variable_bounds(self.net, self.prop, bounds);
        for (l, u) in lower.iter_mut().zip(upper.iter_mut()) {
            if *l > *u && *l <= *u + EPS_BOUND {
                let mid = 0.5 * (*l + *u);
                *l = mid;
                *u = mid;
            }
        }
        (lower, upper)
    }

    fn local_search(
        &mut self,
        cfg: &mut Configuration,
        budget: usize,
        threshold: Option<u32>,
        uncertain: &[NeuronId],
    ) -> Result<Repair> {
        for _ in 0..budget {
            self.stats.repair_steps += 1;
            match cfg.repair_step()? {
                Repair::Progress => {
                    if let Some(t) = threshold {
                        let hot = cfg.violation_stats().iter().any(|(p, c)| *c >= t && uncertain.contains(p));
                        if hot {
                            return Ok(Repair::Stuck(cfg.violation_stats()));
                        }
                    }
                }
                done => return Ok(done),
            }
        }
        Ok(Repair::Stuck(cfg.violation_stats()))
    }

    /// Clamps to the input box and keeps the point only if it really violates the property.
    fn genuine(&self, x: Vec<f64>) -> Option<Vec<f64>> {
        let x: Vec<f64> = x.iter().zip(&self.prop.input_box).map(|(v, iv)| v.max(iv.lo).min(iv.hi)).collect();
        validate_witness(self.net, self.prop, &x).then_some(x)
    }

    fn close(&mut self, id: usize, cfg: &Configuration, key: NeuronId) -> Result<()> {
        debug!("node {id}: UNSAT by row of {key}");
        self.tree.mark_unsat(id, cfg.basis(), key)
    }

    /// With every ReLU phase fixed the branch is a linear program.
    fn decide_linear(&mut self, task: &Pending, cfg: &Configuration, bounds: &Bounds) -> Result<Visit> {
        self.stats.lp_calls += 1;
        let relax = lp::build(self.net, self.prop, &task.asserts, bounds);
        match relax.feasibility()? {
            Feasibility::Infeasible => {
                let key = cfg.basis()[0];
                self.close(task.id, cfg, key)?;
                Ok(Visit::Closed)
            }
            Feasibility::Feasible(point) => {
                let x: Vec<f64> = relax.encoding.layout.inputs.iter().map(|v| point[v.0]).collect();
                match self.genuine(x) {
                    Some(x) => {
                        self.tree.mark_sat(task.id, Some(cfg.basis()), x.clone())?;
                        Ok(Visit::Found(x))
                    }
                    None => Err(Error::Internal(format!("linear branch at node {} gave a spurious point", task.id))),
                }
            }
            Feasibility::Unknown => {
                Err(Error::Internal(format!("linear branch at node {} is numerically undecided", task.id)))
            }
        }
    }
}

/// Makes `v` basic by pivoting on its largest coefficient. Falls back to
/// the first basic variable when `v` appears in no row.
fn bring_into_basis(cfg: &mut Configuration, v: NeuronId) -> Result<NeuronId> {
    if cfg.tableau.is_basic(v) {
        return Ok(v);
    }
    let best = cfg
        .tableau
        .rows()
        .map(|(b, row)| (b, row[v.0].abs()))
        .filter(|(_, c)| *c > EPS_PIVOT)
        .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
    match best {
        Some((b, _)) => {
            cfg.pivot(b, v)?;
            Ok(v)
        }
        None => Ok(cfg.basis()[0]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abstraction::tests::random_net;
    use crate::model::samples::{base, threshold_property, threshold_property_at, variant_small};
    use crate::model::{Interval, OutputConstraint};
    use crate::proof_tree::NodeStatus;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use std::collections::BTreeSet;

    #[test]
    fn base_query_is_sat_at_the_expected_leaf() {
        let (v, tree) = solve(&base(), &threshold_property(), &SearchParams::default()).unwrap();
        let x = v.witness().expect("sat");
        assert!(validate_witness(&base(), &threshold_property(), x));
        tree.validate().unwrap();
        let sat = tree.sat_leaf().unwrap().id;
        let set: BTreeSet<Assertion> = tree.asserts_of(sat).unwrap().into_iter().collect();
        let want: BTreeSet<Assertion> =
            [Assertion::nonpos(NeuronId(2)), Assertion::nonneg(NeuronId(3))].into_iter().collect();
        assert_eq!(set, want);
    }

    #[test]
    fn high_threshold_is_unsat_at_root() {
        let (v, tree) = solve(&base(), &threshold_property_at(2.0), &SearchParams::default()).unwrap();
        assert_eq!(v, Verdict::Unsat);
        assert_eq!(tree.len(), 1);
        assert_eq!(tree.nodes[0].status, NodeStatus::Unsat);
        tree.validate().unwrap();
    }

    #[test]
    fn variant_is_sat() {
        let (v, _) = solve(&variant_small(), &threshold_property(), &SearchParams::default()).unwrap();
        assert!(validate_witness(&variant_small(), &threshold_property(), v.witness().unwrap()));
    }

    #[test]
    fn vacuous_property_is_unsat() {
        let prop = SafetyProperty::new(threshold_property().input_box, vec![]).unwrap();
        let (v, tree) = solve(&base(), &prop, &SearchParams::default()).unwrap();
        assert_eq!(v, Verdict::Unsat);
        tree.validate().unwrap();
    }

    /// Dense grid evaluation; a grid hit proves SAT.
    fn grid_hit(net: &Network, prop: &SafetyProperty) -> bool {
        let n = 24;
        let m = prop.input_box.len();
        let total = (n + 1usize).pow(m as u32);
        (0..total).any(|mut k| {
            let x: Vec<f64> = prop
                .input_box
                .iter()
                .map(|iv| {
                    let t = (k % (n + 1)) as f64 / n as f64;
                    k /= n + 1;
                    iv.lo + t * iv.width()
                })
                .collect();
            validate_witness(net, prop, &x)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn unsat_is_never_contradicted_by_sampling(seed in 0u64..10_000, t in -0.5f64..1.5) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let net = random_net(&mut rng, &[2, 4, 3, 1]);
            let prop = SafetyProperty::new(
                vec![Interval::new(-1.0, 1.0); 2],
                vec![OutputConstraint::new(vec![1.0], t)],
            ).unwrap();
            let (v, tree) = solve(&net, &prop, &SearchParams::default()).unwrap();
            tree.validate().unwrap();
            match v {
                Verdict::Sat(x) => prop_assert!(validate_witness(&net, &prop, &x)),
                Verdict::Unsat => prop_assert!(!grid_hit(&net, &prop)),
            }
        }
    }
}
