//! Linear programming over the triangle relaxation of a ReLU network.
//!
//! [`LinearProgram`] is a small bounded-variable simplex: phase one reuses
//! the bound repair of [`simplex_core`](crate::simplex_core), phase two is a
//! primal simplex with Bland's rule and bound flips. Both phases share one
//! iteration cap; hitting it is reported rather than treated as an answer.

use log::debug;

use crate::abstraction::{analyze, Analysis, Assertion, Bounds, Phase};
use crate::error::Result;
use crate::model::{Interval, Network, NeuronId, SafetyProperty};
use crate::simplex_core::{fix_bound_step, BoundFix, Encoding, Equation, Tableau, EPS_BOUND, EPS_PIVOT};

const EPS_COST: f64 = 1e-9;
/// Tightened bounds are loosened by this much to absorb rounding.
const LOOSEN: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmp {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub terms: Vec<(usize, f64)>,
    pub cmp: Cmp,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Infeasible,
    /// Optimal value and a point attaining it.
    Optimal(f64, Vec<f64>),
    Unbounded,
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Feasibility {
    Feasible(Vec<f64>),
    Infeasible,
    /// The iteration cap was hit before a decision.
    Unknown,
}

impl Feasibility {
    /// Unknown counts as feasible, which is the safe reading for pruning.
    pub fn is_feasible(&self) -> bool {
        !matches!(self, Feasibility::Infeasible)
    }
}

/// Variables with (possibly infinite) bounds and linear constraints.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinearProgram {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub constraints: Vec<Constraint>,
}

struct State {
    tab: Tableau,
    lower: Vec<f64>,
    upper: Vec<f64>,
    alpha: Vec<f64>,
    iterations: usize,
    cap: usize,
}

impl LinearProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_vars(&self) -> usize {
        self.lower.len()
    }

    pub fn add_var(&mut self, lo: f64, hi: f64) -> usize {
        self.lower.push(lo);
        self.upper.push(hi);
        self.lower.len() - 1
    }

    pub fn add_constraint(&mut self, terms: Vec<(usize, f64)>, cmp: Cmp, rhs: f64) {
        self.constraints.push(Constraint { terms, cmp, rhs });
    }

    fn phase_one(&self) -> Result<std::result::Result<State, Feasibility>> {
        let n = self.num_vars();
        let m = self.constraints.len();
        let mut lower = self.lower.clone();
        let mut upper = self.upper.clone();
        for v in 0..n {
            if lower[v] > upper[v] + EPS_BOUND {
                return Ok(Err(Feasibility::Infeasible));
            }
            if lower[v] > upper[v] {
                upper[v] = lower[v];
            }
        }
        let mut equations = Vec::with_capacity(m);
        for (r, c) in self.constraints.iter().enumerate() {
            let (lo, hi) = match c.cmp {
                Cmp::Le => (f64::NEG_INFINITY, c.rhs),
                Cmp::Ge => (c.rhs, f64::INFINITY),
                Cmp::Eq => (c.rhs, c.rhs),
            };
            lower.push(lo);
            upper.push(hi);
            let terms = c.terms.iter().map(|&(v, a)| (NeuronId(v), a)).collect();
            equations.push(Equation { defined: NeuronId(n + r), terms });
        }
        let tab = Tableau::from_equations(n + m, &equations)?;
        let mut alpha: Vec<f64> = (0..n + m)
            .map(|v| {
                if lower[v].is_finite() {
                    lower[v]
                } else if upper[v].is_finite() {
                    upper[v]
                } else {
                    0.0
                }
            })
            .collect();
        tab.update_basics(&mut alpha);
        let mut st = State { tab, lower, upper, alpha, iterations: 0, cap: 50 * (n + 2 * m).max(1) };
        loop {
            if st.iterations >= st.cap {
                return Ok(Err(Feasibility::Unknown));
            }
            st.iterations += 1;
            match fix_bound_step(&mut st.tab, &st.lower, &st.upper, &mut st.alpha)? {
                BoundFix::Done => return Ok(Ok(st)),
                BoundFix::Pivoted => {}
                BoundFix::Conflict(b) => {
                    let gap = (st.lower[b.0] - st.alpha[b.0]).max(st.alpha[b.0] - st.upper[b.0]);
                    if gap > EPS_BOUND {
                        return Ok(Err(Feasibility::Infeasible));
                    }
                    return Ok(Err(Feasibility::Unknown));
                }
            }
        }
    }

    pub fn feasibility(&self) -> Result<Feasibility> {
        Ok(match self.phase_one()? {
            Ok(st) => Feasibility::Feasible(st.alpha[..self.num_vars()].to_vec()),
            Err(f) => f,
        })
    }

    /// Minimizes `Σ objective[j]·x_j`.
    pub fn minimize(&self, objective: &[(usize, f64)]) -> Result<LpOutcome> {
        match self.phase_one()? {
            Ok(mut st) => st.minimize(objective, self.num_vars()),
            Err(Feasibility::Infeasible) => Ok(LpOutcome::Infeasible),
            Err(_) => Ok(LpOutcome::IterationLimit),
        }
    }

    /// Lower and upper optimum of each listed variable. Sides that are
    /// unbounded or undecided keep the variable's declared bound.
    pub fn bound_range(&self, vars: &[usize]) -> Result<Option<Vec<Interval>>> {
        let st = match self.phase_one()? {
            Ok(st) => st,
            Err(Feasibility::Infeasible) => return Ok(None),
            Err(_) => return Ok(Some(vars.iter().map(|&v| Interval::new(self.lower[v], self.upper[v])).collect())),
        };
        let mut out = Vec::with_capacity(vars.len());
        for &v in vars {
            let mut lo = self.lower[v];
            let mut hi = self.upper[v];
            if let LpOutcome::Optimal(val, _) = st.clone_state().minimize(&[(v, 1.0)], self.num_vars())? {
                lo = lo.max(val - LOOSEN * (1.0 + val.abs()));
            }
            if let LpOutcome::Optimal(val, _) = st.clone_state().minimize(&[(v, -1.0)], self.num_vars())? {
                hi = hi.min(-val + LOOSEN * (1.0 + val.abs()));
            }
            if lo > hi {
                let mid = 0.5 * (lo + hi);
                lo = mid;
                hi = mid;
            }
            out.push(Interval::new(lo, hi));
        }
        Ok(Some(out))
    }
}

impl State {
    fn clone_state(&self) -> State {
        State {
            tab: self.tab.clone(),
            lower: self.lower.clone(),
            upper: self.upper.clone(),
            alpha: self.alpha.clone(),
            iterations: self.iterations,
            cap: self.cap,
        }
    }

    fn minimize(&mut self, objective: &[(usize, f64)], n: usize) -> Result<LpOutcome> {
        let nv = self.tab.nvars();
        let mut cost = vec![0.0; nv];
        for &(v, c) in objective {
            cost[v] += c;
        }
        loop {
            if self.iterations >= self.cap {
                return Ok(LpOutcome::IterationLimit);
            }
            self.iterations += 1;
            let mut reduced = cost.clone();
            for (b, row) in self.tab.rows() {
                let cb = cost[b.0];
                reduced[b.0] = 0.0;
                if cb != 0.0 {
                    for (d, a) in reduced.iter_mut().zip(row) {
                        *d += cb * a;
                    }
                }
            }
            for (b, _) in self.tab.rows() {
                reduced[b.0] = 0.0;
            }
            let entering = (0..nv).find_map(|j| {
                if self.tab.is_basic(NeuronId(j)) {
                    return None;
                }
                if reduced[j] < -EPS_COST && self.alpha[j] < self.upper[j] {
                    Some((j, 1.0))
                } else if reduced[j] > EPS_COST && self.alpha[j] > self.lower[j] {
                    Some((j, -1.0))
                } else {
                    None
                }
            });
            let Some((j, dir)) = entering else {
                let value = (0..nv).map(|v| cost[v] * self.alpha[v]).sum();
                return Ok(LpOutcome::Optimal(value, self.alpha[..n].to_vec()));
            };
            let mut step = self.upper[j] - self.lower[j];
            let mut leaving: Option<(NeuronId, f64)> = None;
            for b in self.tab.basis() {
                let a = self.tab.row(b).unwrap()[j];
                if a.abs() <= EPS_PIVOT {
                    continue;
                }
                let rate = a * dir;
                let (limit, target) = if rate > 0.0 {
                    ((self.upper[b.0] - self.alpha[b.0]) / rate, self.upper[b.0])
                } else {
                    ((self.lower[b.0] - self.alpha[b.0]) / rate, self.lower[b.0])
                };
                let limit = limit.max(0.0);
                if limit < step {
                    step = limit;
                    leaving = Some((b, target));
                }
            }
            if !step.is_finite() {
                return Ok(LpOutcome::Unbounded);
            }
            match leaving {
                Some((b, target)) => {
                    self.tab.pivot(b, NeuronId(j))?;
                    self.alpha[j] += dir * step;
                    self.alpha[b.0] = target;
                }
                None => {
                    self.alpha[j] = if dir > 0.0 { self.upper[j] } else { self.lower[j] };
                }
            }
            self.tab.update_basics(&mut self.alpha);
        }
    }
}

/// The triangle relaxation of a query branch over the variables of its [`Encoding`].
#[derive(Debug, Clone, PartialEq)]
pub struct Relaxation {
    pub lp: LinearProgram,
    pub encoding: Encoding,
}

/// Builds the relaxation from bounds computed under the same assertions.
///
/// It holds the tableau equations and the variable bounds of the
/// configuration. Uncertain ReLUs add their triangle, decided ones an equality.
pub fn build(net: &Network, prop: &SafetyProperty, asserts: &[Assertion], bounds: &Bounds) -> Relaxation {
    let encoding = Encoding::new(net, prop);
    let (mut lower, mut upper) = encoding.variable_bounds(net, prop, bounds);
    for a in asserts {
        match a.sign {
            crate::abstraction::Sign::NonNeg => lower[a.neuron.0] = lower[a.neuron.0].max(0.0),
            crate::abstraction::Sign::NonPos => upper[a.neuron.0] = upper[a.neuron.0].min(0.0),
        }
    }
    let mut lp = LinearProgram { lower, upper, constraints: Vec::new() };
    for eq in encoding.equations(net, prop) {
        let mut terms = vec![(eq.defined.0, 1.0)];
        terms.extend(eq.terms.iter().map(|&(v, a)| (v.0, -a)));
        lp.add_constraint(terms, Cmp::Eq, 0.0);
    }
    for link in encoding.relus() {
        let (pre, post) = (link.pre.0, link.post.0);
        let rel = bounds.relation(link.post).expect("every ReLU output has a relation");
        match rel.phase {
            Phase::Uncertain => {
                lp.add_constraint(vec![(post, 1.0), (pre, -1.0)], Cmp::Ge, 0.0);
                lp.add_constraint(vec![(post, 1.0), (pre, -rel.upper.slope)], Cmp::Le, rel.upper.intercept);
            }
            Phase::Active => lp.add_constraint(vec![(post, 1.0), (pre, -1.0)], Cmp::Eq, 0.0),
            Phase::Inactive => lp.add_constraint(vec![(post, 1.0)], Cmp::Eq, 0.0),
        }
    }
    Relaxation { lp, encoding }
}

impl Relaxation {
    pub fn feasibility(&self) -> Result<Feasibility> {
        self.lp.feasibility()
    }

    pub fn feasible(&self) -> Result<bool> {
        Ok(self.feasibility()?.is_feasible())
    }

    /// LP bounds of the listed variables, `None` when the relaxation is infeasible.
    pub fn tighten(&self, vars: &[NeuronId]) -> Result<Option<Vec<Interval>>> {
        let idx: Vec<usize> = vars.iter().map(|v| v.0).collect();
        self.lp.bound_range(&idx)
    }
}

/// Outcome of [`tighten_inputs_then_repropagate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Tightening {
    Bounds { bounds: Bounds, input_box: Vec<Interval> },
    Infeasible,
}

/// Shrinks the input box by LP over the relaxation of the branch, then
/// recomputes the abstraction on the smaller box. The result is
/// intersected with the original bounds.
pub fn tighten_inputs_then_repropagate(
    net: &Network,
    prop: &SafetyProperty,
    asserts: &[Assertion],
) -> Result<Tightening> {
    let Analysis::Feasible(bounds) = analyze(net, &prop.input_box, asserts)? else {
        return Ok(Tightening::Infeasible);
    };
    let relax = build(net, prop, asserts, &bounds);
    let inputs = relax.encoding.layout.inputs.clone();
    let Some(ranges) = relax.tighten(&inputs)? else {
        return Ok(Tightening::Infeasible);
    };
    let input_box: Vec<Interval> = ranges
        .iter()
        .zip(&prop.input_box)
        .map(|(r, b)| Interval::new(r.lo.max(b.lo), r.hi.min(b.hi).max(r.lo.max(b.lo))))
        .collect();
    debug!("tightened input box {:?}", input_box);
    let Analysis::Feasible(mut tight) = analyze(net, &input_box, asserts)? else {
        return Ok(Tightening::Infeasible);
    };
    tight.intersect_with(&bounds);
    Ok(Tightening::Bounds { bounds: tight, input_box })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::samples::{base, threshold_property};

    fn relax_for(asserts: &[Assertion]) -> Relaxation {
        let net = base();
        let prop = threshold_property();
        let b = analyze(&net, &prop.input_box, asserts).unwrap().into_bounds().unwrap();
        build(&net, &prop, asserts, &b)
    }

    #[test]
    fn small_lp_optimum() {
        // max x + y s.t. x + 2y <= 4, 3x + y <= 6, x, y >= 0 -> (1.6, 1.2)
        let mut lp = LinearProgram::new();
        let x = lp.add_var(0.0, f64::INFINITY);
        let y = lp.add_var(0.0, f64::INFINITY);
        lp.add_constraint(vec![(x, 1.0), (y, 2.0)], Cmp::Le, 4.0);
        lp.add_constraint(vec![(x, 3.0), (y, 1.0)], Cmp::Le, 6.0);
        let LpOutcome::Optimal(v, p) = lp.minimize(&[(x, -1.0), (y, -1.0)]).unwrap() else { panic!() };
        assert!((v + 2.8).abs() < 1e-9);
        assert!((p[0] - 1.6).abs() < 1e-9 && (p[1] - 1.2).abs() < 1e-9);
    }

    #[test]
    fn lp_status_cases() {
        let mut lp = LinearProgram::new();
        let x = lp.add_var(0.0, f64::INFINITY);
        assert_eq!(lp.minimize(&[(x, -1.0)]).unwrap(), LpOutcome::Unbounded);
        lp.add_constraint(vec![(x, 1.0)], Cmp::Le, -1.0);
        assert_eq!(lp.feasibility().unwrap(), Feasibility::Infeasible);
        assert!(LinearProgram::new().feasibility().unwrap().is_feasible());
    }

    #[test]
    fn triangle_of_first_unit() {
        let r = relax_for(&[]);
        let tri = r
            .lp
            .constraints
            .iter()
            .find(|c| c.cmp == Cmp::Le && c.terms[0] == (4, 1.0))
            .unwrap();
        assert!((tri.terms[1].1 + 0.8 / 1.8).abs() < 1e-12);
        assert!((tri.rhs - 0.8 / 1.8).abs() < 1e-12);
    }

    #[test]
    fn decided_units_become_equalities() {
        let r = relax_for(&[Assertion::nonpos(NeuronId(2))]);
        assert!(r.lp.constraints.iter().any(|c| c.cmp == Cmp::Eq && c.terms == vec![(4, 1.0)]));
        let r = relax_for(&[Assertion::nonneg(NeuronId(2))]);
        assert!(r.lp.constraints.iter().any(|c| c.cmp == Cmp::Eq && c.terms == vec![(4, 1.0), (2, -1.0)]));
    }

    #[test]
    fn both_units_off_is_infeasible() {
        let both = [Assertion::nonpos(NeuronId(2)), Assertion::nonpos(NeuronId(3))];
        assert!(!relax_for(&both).feasible().unwrap());
        assert!(relax_for(&[]).feasible().unwrap());
        let t = tighten_inputs_then_repropagate(&base(), &threshold_property(), &both).unwrap();
        assert_eq!(t, Tightening::Infeasible);
    }

    #[test]
    fn tighten_respects_assertions_and_property() {
        let r = relax_for(&[Assertion::nonneg(NeuronId(3))]);
        let iv = r.tighten(&[NeuronId(3), NeuronId(6)]).unwrap().unwrap();
        assert!(iv[0].lo >= -1e-9);
        assert!(iv[1].lo >= 0.3 - 1e-9);
    }

    #[test]
    fn input_tightening_never_widens() {
        let net = base();
        let prop = threshold_property();
        let plain = analyze(&net, &prop.input_box, &[]).unwrap().into_bounds().unwrap();
        let Tightening::Bounds { bounds, input_box } = tighten_inputs_then_repropagate(&net, &prop, &[]).unwrap() else {
            panic!("branch is feasible")
        };
        for (a, b) in input_box.iter().zip(&prop.input_box) {
            assert!(a.lo >= b.lo && a.hi <= b.hi);
        }
        for i in 0..plain.len() {
            assert!(bounds.lo(NeuronId(i)) >= plain.lo(NeuronId(i)));
            assert!(bounds.hi(NeuronId(i)) <= plain.hi(NeuronId(i)));
        }
    }
}
