//! Tableau pivoting and the local repair loop of a Reluplex configuration.
//!
//! A configuration keeps every variable of the [`Encoding`] together with
//! bounds and an assignment. Rows express each basic variable as a linear
//! combination of non-basic ones. Constants never appear in rows: each
//! equation owns a slack variable whose bounds pin it to the constant.

use std::fmt::Write as _;

use log::trace;

use crate::abstraction::{Bounds, Phase};
use crate::error::{Error, Result};
use crate::model::{Network, NeuronId, NeuronLayout, SafetyProperty};

pub const EPS_PIVOT: f64 = 1e-8;
pub const EPS_ROW: f64 = 1e-7;
pub const EPS_BOUND: f64 = 1e-7;

/// Violation threshold of the repair loop. Repairs assign exact bound
/// values, so anything above rounding noise counts as a violation.
const EPS_FIX: f64 = 1e-9;
const EPS_ZERO: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq)]
pub struct Tableau {
    nvars: usize,
    basic: Vec<NeuronId>,
    row_of: Vec<Option<usize>>,
    rows: Vec<Vec<f64>>,
}

/// `defined = Σ terms`, one original equation of the encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct Equation {
    pub defined: NeuronId,
    pub terms: Vec<(NeuronId, f64)>,
}

impl Tableau {
    /// Builds a tableau in which each equation's `defined` variable is basic.
    /// Basic variables occurring on a right-hand side are substituted away.
    pub fn from_equations(nvars: usize, equations: &[Equation]) -> Result<Self> {
        let mut t = Tableau {
            nvars,
            basic: Vec::with_capacity(equations.len()),
            row_of: vec![None; nvars],
            rows: Vec::with_capacity(equations.len()),
        };
        for eq in equations {
            if eq.defined.0 >= nvars || t.row_of[eq.defined.0].is_some() {
                return Err(Error::Internal(format!("{} cannot define a second row", eq.defined)));
            }
            let mut row = vec![0.0; nvars];
            for &(v, c) in &eq.terms {
                row[v.0] += c;
            }
            t.row_of[eq.defined.0] = Some(t.rows.len());
            t.basic.push(eq.defined);
            t.rows.push(row);
        }
        for _ in 0..=equations.len() {
            let mut changed = false;
            for r in 0..t.rows.len() {
                for k in 0..t.rows.len() {
                    let b = t.basic[k].0;
                    let c = t.rows[r][b];
                    if k != r && c != 0.0 {
                        t.rows[r][b] = 0.0;
                        let (src, dst) = if k < r {
                            let (a, b) = t.rows.split_at_mut(r);
                            (&a[k], &mut b[0])
                        } else {
                            let (a, b) = t.rows.split_at_mut(k);
                            (&b[0], &mut a[r])
                        };
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += c * s;
                        }
                        changed = true;
                    }
                }
                if t.rows[r][t.basic[r].0] != 0.0 {
                    return Err(Error::Internal(format!("{} depends on itself", t.basic[r])));
                }
            }
            if !changed {
                return Ok(t);
            }
        }
        Err(Error::Internal("cyclic equation system".into()))
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    /// Basic variables in ascending id order.
    pub fn basis(&self) -> Vec<NeuronId> {
        let mut b = self.basic.clone();
        b.sort();
        b
    }

    pub fn is_basic(&self, v: NeuronId) -> bool {
        self.row_of[v.0].is_some()
    }

    /// Coefficients of the row defining basic variable `v`.
    pub fn row(&self, v: NeuronId) -> Option<&[f64]> {
        self.row_of[v.0].map(|r| self.rows[r].as_slice())
    }

    /// `(basic, coefficients)` pairs in row storage order.
    pub fn rows(&self) -> impl Iterator<Item = (NeuronId, &[f64])> {
        self.basic.iter().copied().zip(self.rows.iter().map(Vec::as_slice))
    }

    /// Makes `entering` basic in place of `leaving`.
    pub fn pivot(&mut self, leaving: NeuronId, entering: NeuronId) -> Result<()> {
        let r = self.row_of[leaving.0].ok_or(Error::Internal(format!("{leaving} is not basic")))?;
        if self.row_of[entering.0].is_some() {
            return Err(Error::Internal(format!("{entering} is already basic")));
        }
        let a = self.rows[r][entering.0];
        if a.abs() <= EPS_PIVOT {
            return Err(Error::PivotTooSmall { leaving, entering, coeff: a });
        }
        let mut new = std::mem::take(&mut self.rows[r]);
        for c in new.iter_mut() {
            *c = -*c / a;
        }
        new[entering.0] = 0.0;
        new[leaving.0] = 1.0 / a;
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let b = row[entering.0];
            if b == 0.0 {
                continue;
            }
            row[entering.0] = 0.0;
            for (d, s) in row.iter_mut().zip(&new) {
                *d += b * s;
                if d.abs() < EPS_ZERO {
                    *d = 0.0;
                }
            }
        }
        self.rows[r] = new;
        self.basic[r] = entering;
        self.row_of[leaving.0] = None;
        self.row_of[entering.0] = Some(r);
        Ok(())
    }

    /// Recomputes every basic variable from the non-basic assignment.
    pub fn update_basics(&self, alpha: &mut [f64]) {
        for (b, row) in self.basic.iter().zip(&self.rows) {
            alpha[b.0] = dot(row, alpha);
        }
    }

    /// Largest absolute row residual of `alpha`.
    pub fn residual(&self, alpha: &[f64]) -> f64 {
        self.rows().map(|(b, row)| (alpha[b.0] - dot(row, alpha)).abs()).fold(0.0, f64::max)
    }

    /// Brings `target` into the basis by sequential pivoting. Each missing
    /// target variable replaces the non-target basic variable whose row has
    /// the largest coefficient for it.
    pub fn gauss_to_basis(&self, target: &[NeuronId]) -> Result<Tableau> {
        if target.len() != self.rows.len() {
            return Err(Error::Internal(format!(
                "target basis has {} variables, tableau has {} rows",
                target.len(),
                self.rows.len()
            )));
        }
        let mut in_target = vec![false; self.nvars];
        for t in target {
            if t.0 >= self.nvars || in_target[t.0] {
                return Err(Error::Internal(format!("invalid target variable {t}")));
            }
            in_target[t.0] = true;
        }
        let mut out = self.clone();
        for &t in target {
            if out.is_basic(t) {
                continue;
            }
            let best = out
                .rows()
                .filter(|(b, _)| !in_target[b.0])
                .map(|(b, row)| (b, row[t.0].abs()))
                .fold(None, |acc: Option<(NeuronId, f64)>, cur| match acc {
                    Some(a) if a.1 >= cur.1 => Some(a),
                    _ => Some(cur),
                });
            match best {
                Some((leaving, mag)) if mag > EPS_PIVOT => out.pivot(leaving, t)?,
                _ => return Err(Error::Singular(t)),
            }
        }
        Ok(out)
    }
}

fn dot(row: &[f64], alpha: &[f64]) -> f64 {
    row.iter().zip(alpha).filter(|(c, _)| **c != 0.0).map(|(c, a)| c * a).sum()
}

/// Interval range of a row's right-hand side.
pub fn row_range(row: &[f64], lower: &[f64], upper: &[f64]) -> (f64, f64) {
    let mut lo = 0.0;
    let mut hi = 0.0;
    for (j, &c) in row.iter().enumerate() {
        if c > 0.0 {
            lo += c * lower[j];
            hi += c * upper[j];
        } else if c < 0.0 {
            lo += c * upper[j];
            hi += c * lower[j];
        }
    }
    (lo, hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowVerdict {
    Feasible,
    UnsatRow(NeuronId),
}

/// Whether the row of basic `v` cannot be satisfied within the bounds.
/// An empty bound interval of `v` counts as a contradiction of its row.
pub fn row_is_unsat(tab: &Tableau, v: NeuronId, lower: &[f64], upper: &[f64]) -> bool {
    let Some(row) = tab.row(v) else { return false };
    if lower[v.0] > upper[v.0] + EPS_BOUND {
        return true;
    }
    let (lo, hi) = row_range(row, lower, upper);
    lower[v.0] > hi + EPS_BOUND || upper[v.0] < lo - EPS_BOUND
}

/// First row, by basic variable id, whose right-hand side range misses the
/// bounds of its basic variable.
pub fn check_unsat_rows(tab: &Tableau, lower: &[f64], upper: &[f64]) -> RowVerdict {
    tab.basis()
        .into_iter()
        .find(|v| row_is_unsat(tab, *v, lower, upper))
        .map_or(RowVerdict::Feasible, RowVerdict::UnsatRow)
}

pub(crate) enum BoundFix {
    /// All basic variables are within bounds.
    Done,
    Pivoted,
    /// The row of this basic variable cannot move towards its bound.
    Conflict(NeuronId),
}

/// One step of the bound repair of the general simplex: the lowest-id basic
/// variable outside its bounds is pivoted with the lowest-id non-basic
/// variable that can move it, then set to the violated bound.
pub(crate) fn fix_bound_step(tab: &mut Tableau, lower: &[f64], upper: &[f64], alpha: &mut [f64]) -> Result<BoundFix> {
    let Some(b) = tab
        .basis()
        .into_iter()
        .find(|b| alpha[b.0] < lower[b.0] - EPS_FIX || alpha[b.0] > upper[b.0] + EPS_FIX)
    else {
        return Ok(BoundFix::Done);
    };
    let increase = alpha[b.0] < lower[b.0];
    let row = tab.row(b).unwrap();
    let entering = (0..tab.nvars).map(NeuronId).find(|&j| {
        let c = row[j.0];
        if c.abs() <= EPS_PIVOT {
            return false;
        }
        let up = (c > 0.0) == increase;
        if up {
            alpha[j.0] < upper[j.0] - EPS_ZERO
        } else {
            alpha[j.0] > lower[j.0] + EPS_ZERO
        }
    });
    let Some(j) = entering else {
        return Ok(BoundFix::Conflict(b));
    };
    trace!("bound fix: {b} leaves, {j} enters");
    tab.pivot(b, j)?;
    alpha[b.0] = if increase { lower[b.0] } else { upper[b.0] };
    tab.update_basics(alpha);
    Ok(BoundFix::Pivoted)
}

/// The variables introduced for a network and a property, in id order:
/// network neurons, ReLU slacks, constant slacks of affine rows, constant
/// slacks of ReLU rows, property variables, constant slacks of property rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoding {
    pub layout: NeuronLayout,
    pub relu_slacks: Vec<NeuronId>,
    pub affine_consts: Vec<NeuronId>,
    pub relu_consts: Vec<NeuronId>,
    /// Per negated constraint, its variable when it is not a plain output bound.
    pub prop_vars: Vec<Option<NeuronId>>,
    pub prop_consts: Vec<NeuronId>,
    pub nvars: usize,
}

/// A ReLU pair with the slack `post − pre` of its inequality.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReluLink {
    pub pre: NeuronId,
    pub post: NeuronId,
    pub slack: NeuronId,
}

impl Encoding {
    pub fn new(net: &Network, prop: &SafetyProperty) -> Self {
        let layout = net.layout();
        let mut next = layout.count;
        let mut take = |n: usize| -> Vec<NeuronId> {
            let ids = (next..next + n).map(NeuronId).collect();
            next += n;
            ids
        };
        let relu_slacks = take(layout.relu_pairs.len());
        let affine_count = layout.layers.iter().map(|l| l.pre.len()).sum();
        let affine_consts = take(affine_count);
        let relu_consts = take(layout.relu_pairs.len());
        let general = prop.negated.iter().filter(|c| c.single_output().is_none()).count();
        let mut vars = take(general).into_iter();
        let prop_vars = prop
            .negated
            .iter()
            .map(|c| if c.single_output().is_none() { vars.next() } else { None })
            .collect();
        let prop_consts = take(general);
        Self {
            layout,
            relu_slacks,
            affine_consts,
            relu_consts,
            prop_vars,
            prop_consts,
            nvars: next,
        }
    }

    pub fn relus(&self) -> Vec<ReluLink> {
        self.layout
            .relu_pairs
            .iter()
            .zip(&self.relu_slacks)
            .map(|(p, s)| ReluLink { pre: p.pre, post: p.post, slack: *s })
            .collect()
    }

    pub fn row_count(&self) -> usize {
        self.affine_consts.len() + self.relu_slacks.len() + self.prop_consts.len()
    }

    /// The original equations; the defined variable of each is its initial basic variable.
    pub fn equations(&self, net: &Network, prop: &SafetyProperty) -> Vec<Equation> {
        let mut eqs = Vec::with_capacity(self.row_count());
        let mut consts = self.affine_consts.iter();
        let mut prev = self.layout.inputs.clone();
        for (layer, ids) in net.layers().iter().zip(&self.layout.layers) {
            for (row, pre) in layer.weights.iter().zip(&ids.pre) {
                let mut terms: Vec<(NeuronId, f64)> =
                    prev.iter().zip(row).filter(|(_, w)| **w != 0.0).map(|(v, w)| (*v, *w)).collect();
                terms.push((*consts.next().unwrap(), -1.0));
                eqs.push(Equation { defined: *pre, terms });
            }
            prev = ids.values().to_vec();
        }
        for (link, k) in self.relus().iter().zip(&self.relu_consts) {
            eqs.push(Equation {
                defined: link.slack,
                terms: vec![(link.post, 1.0), (link.pre, -1.0), (*k, -1.0)],
            });
        }
        let mut consts = self.prop_consts.iter();
        for (c, var) in prop.negated.iter().zip(&self.prop_vars) {
            if let Some(p) = var {
                let mut terms: Vec<(NeuronId, f64)> = self
                    .layout
                    .outputs
                    .iter()
                    .zip(&c.coeffs)
                    .filter(|(_, a)| **a != 0.0)
                    .map(|(y, a)| (*y, *a))
                    .collect();
                terms.push((*consts.next().unwrap(), -1.0));
                eqs.push(Equation { defined: *p, terms });
            }
        }
        eqs
    }

    pub fn initial_basis(&self, net: &Network, prop: &SafetyProperty) -> Vec<NeuronId> {
        let mut b: Vec<NeuronId> = self.equations(net, prop).iter().map(|e| e.defined).collect();
        b.sort();
        b
    }

    /// Variable bounds from the abstraction and the property.
    pub fn variable_bounds(&self, net: &Network, prop: &SafetyProperty, bounds: &Bounds) -> (Vec<f64>, Vec<f64>) {
        let mut lower = vec![0.0; self.nvars];
        let mut upper = vec![0.0; self.nvars];
        for i in 0..self.layout.count {
            lower[i] = bounds.lo(NeuronId(i));
            upper[i] = bounds.hi(NeuronId(i));
        }
        for (link, _) in self.relus().iter().zip(&self.relu_consts) {
            lower[link.slack.0] = (-bounds.hi(link.pre)).max(0.0);
            upper[link.slack.0] = (-bounds.lo(link.pre)).max(0.0);
        }
        let biases = net.layers().iter().flat_map(|l| l.bias.iter());
        for (k, b) in self.affine_consts.iter().zip(biases) {
            lower[k.0] = -b;
            upper[k.0] = -b;
        }
        for (c, var) in prop.negated.iter().zip(&self.prop_vars) {
            match (var, c.single_output()) {
                (Some(p), _) => {
                    let range = crate::abstraction::output_range(bounds, &c.coeffs);
                    lower[p.0] = range.lo.max(c.rhs);
                    upper[p.0] = range.hi;
                }
                (None, Some((j, a))) => {
                    let y = self.layout.outputs[j].0;
                    let t = c.rhs / a;
                    if a > 0.0 {
                        lower[y] = lower[y].max(t);
                    } else {
                        upper[y] = upper[y].min(t);
                    }
                }
                (None, None) => unreachable!("general constraints always get a variable"),
            }
        }
        (lower, upper)
    }

    /// Short role description of a variable, used in dumps.
    pub fn describe(&self, v: NeuronId) -> String {
        let l = &self.layout;
        if l.inputs.contains(&v) {
            return "input".into();
        }
        if l.outputs.contains(&v) {
            return "output".into();
        }
        for ids in &l.layers {
            if ids.pre.contains(&v) {
                return "pre".into();
            }
            if ids.post.as_ref().is_some_and(|p| p.contains(&v)) {
                return "post".into();
            }
        }
        if self.relu_slacks.contains(&v) {
            "relu slack".into()
        } else if self.prop_vars.contains(&Some(v)) {
            "property".into()
        } else {
            "constant".into()
        }
    }
}

/// Per uncertain ReLU input, how often the repair loop had to fix its pair.
pub type ViolationStats = Vec<(NeuronId, u32)>;

#[derive(Debug, Clone, PartialEq)]
pub enum Repair {
    Progress,
    /// Assignment of the input neurons that satisfies the whole configuration.
    Satisfied(Vec<f64>),
    /// No repair applies; statistics for split selection.
    Stuck(ViolationStats),
    /// The row of this basic variable cannot reach its bound.
    Conflict(NeuronId),
}

/// The state `(B, T, R, l, u, α)` of the search.
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration {
    pub tableau: Tableau,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub alpha: Vec<f64>,
    pub relus: Vec<ReluLink>,
    inputs: Vec<NeuronId>,
    violations: Vec<u32>,
}

/// The initial configuration: each equation's defined variable is basic,
/// non-basic variables start at their lower bound.
pub fn initialize(net: &Network, prop: &SafetyProperty, bounds: &Bounds) -> Result<Configuration> {
    if prop.is_vacuous() {
        return Err(Error::InvalidProperty("the negated property is empty; nothing to search".into()));
    }
    prop.check_against(net)?;
    let enc = Encoding::new(net, prop);
    let tableau = Tableau::from_equations(enc.nvars, &enc.equations(net, prop))?;
    let (lower, upper) = enc.variable_bounds(net, prop, bounds);
    Ok(Configuration::new(tableau, lower, upper, enc.relus(), enc.layout.inputs.clone()))
}

impl Configuration {
    pub fn new(tableau: Tableau, lower: Vec<f64>, upper: Vec<f64>, relus: Vec<ReluLink>, inputs: Vec<NeuronId>) -> Self {
        let mut alpha = lower.clone();
        tableau.update_basics(&mut alpha);
        let violations = vec![0; relus.len()];
        Self { tableau, lower, upper, alpha, relus, inputs, violations }
    }

    pub fn basis(&self) -> Vec<NeuronId> {
        self.tableau.basis()
    }

    pub fn pivot(&mut self, leaving: NeuronId, entering: NeuronId) -> Result<()> {
        self.tableau.pivot(leaving, entering)
    }

    pub fn check_unsat_rows(&self) -> RowVerdict {
        check_unsat_rows(&self.tableau, &self.lower, &self.upper)
    }

    /// Replaces the tableau (same solution set, other basis) and refreshes basics.
    pub fn set_tableau(&mut self, tableau: Tableau) {
        self.tableau = tableau;
        self.clamp_nonbasic();
    }

    /// Installs new bounds, moving non-basic values inside them.
    pub fn set_bounds(&mut self, lower: Vec<f64>, upper: Vec<f64>) {
        self.lower = lower;
        self.upper = upper;
        self.clamp_nonbasic();
    }

    fn clamp_nonbasic(&mut self) {
        for v in 0..self.alpha.len() {
            if !self.tableau.is_basic(NeuronId(v)) {
                self.alpha[v] = self.alpha[v].max(self.lower[v]).min(self.upper[v]);
            }
        }
        self.tableau.update_basics(&mut self.alpha);
    }

    pub fn reset_violations(&mut self) {
        self.violations.iter_mut().for_each(|c| *c = 0);
    }

    pub fn violation_stats(&self) -> ViolationStats {
        self.relus.iter().zip(&self.violations).map(|(r, c)| (r.pre, *c)).collect()
    }

    /// First variable whose lower bound exceeds its upper bound.
    pub fn crossed_bound(&self) -> Option<NeuronId> {
        (0..self.lower.len()).find(|&v| self.lower[v] > self.upper[v] + EPS_BOUND).map(NeuronId)
    }

    pub fn is_uncertain(&self, pre: NeuronId) -> bool {
        self.lower[pre.0] < 0.0 && self.upper[pre.0] > 0.0
    }

    pub fn relu_phase(&self, link: &ReluLink) -> Phase {
        if self.lower[link.pre.0] >= 0.0 {
            Phase::Active
        } else if self.upper[link.pre.0] <= 0.0 {
            Phase::Inactive
        } else {
            Phase::Uncertain
        }
    }

    fn in_bounds(&self, v: NeuronId, value: f64) -> bool {
        value >= self.lower[v.0] - EPS_FIX && value <= self.upper[v.0] + EPS_FIX
    }

    fn relu_violated(&self, link: &ReluLink) -> bool {
        (self.alpha[link.post.0] - self.alpha[link.pre.0].max(0.0)).abs() > EPS_FIX
    }

    /// Sets `v := value`, first pivoting `v` out of the basis if needed.
    /// `keep` must not enter the basis, since it anchors the target value.
    fn assign(&mut self, v: NeuronId, value: f64, keep: NeuronId) -> Result<bool> {
        if let Some(row) = self.tableau.row(v) {
            let entering = (0..row.len()).map(NeuronId).find(|&j| {
                j != keep && row[j.0].abs() > EPS_PIVOT && self.upper[j.0] > self.lower[j.0]
            });
            let Some(j) = entering else { return Ok(false) };
            self.tableau.pivot(v, j)?;
        }
        self.alpha[v.0] = value;
        self.tableau.update_basics(&mut self.alpha);
        Ok(true)
    }

    /// One local-search step: a bound repair if some basic variable is out
    /// of bounds, otherwise a repair of the first violated ReLU pair.
    pub fn repair_step(&mut self) -> Result<Repair> {
        match fix_bound_step(&mut self.tableau, &self.lower, &self.upper, &mut self.alpha)? {
            BoundFix::Pivoted => return Ok(Repair::Progress),
            BoundFix::Conflict(b) => return Ok(Repair::Conflict(b)),
            BoundFix::Done => {}
        }
        let Some(i) = self.relus.iter().position(|l| self.relu_violated(l)) else {
            let x = self.inputs.iter().map(|v| self.alpha[v.0]).collect();
            return Ok(Repair::Satisfied(x));
        };
        self.violations[i] += 1;
        let link = self.relus[i];
        trace!("relu fix on ({}, {})", link.pre, link.post);
        let forward = self.alpha[link.pre.0].max(0.0);
        if self.in_bounds(link.post, forward) && self.assign(link.post, forward, link.pre)? {
            return Ok(Repair::Progress);
        }
        let backward = self.alpha[link.post.0];
        let backward = if backward > 0.0 { backward } else { self.alpha[link.pre.0].min(0.0) };
        if self.in_bounds(link.pre, backward) && self.assign(link.pre, backward, link.post)? {
            return Ok(Repair::Progress);
        }
        Ok(Repair::Stuck(self.violation_stats()))
    }

    /// Repeats [`repair_step`](Self::repair_step) up to `budget` times.
    pub fn local_search(&mut self, budget: usize) -> Result<Repair> {
        for _ in 0..budget {
            match self.repair_step()? {
                Repair::Progress => continue,
                done => return Ok(done),
            }
        }
        Ok(Repair::Stuck(self.violation_stats()))
    }

    /// Human-readable tableau and bounds table.
    pub fn dump(&self, enc: &Encoding) -> String {
        let mut out = String::new();
        for b in self.tableau.basis() {
            let row = self.tableau.row(b).unwrap();
            let terms: Vec<String> = row
                .iter()
                .enumerate()
                .filter(|(_, c)| **c != 0.0)
                .map(|(j, c)| format!("{c:+.4}*{}", NeuronId(j)))
                .collect();
            writeln!(out, "{b} = {}", terms.join(" ")).unwrap();
        }
        writeln!(out, "{:<6} {:<11} {:>10} {:>10} {:>10}", "var", "role", "l", "u", "alpha").unwrap();
        for v in 0..self.alpha.len() {
            let id = NeuronId(v);
            let mark = if self.tableau.is_basic(id) { "*" } else { " " };
            writeln!(
                out,
                "{:<6} {:<11} {:>10.4} {:>10.4} {:>10.4}",
                format!("{id}{mark}"),
                enc.describe(id),
                self.lower[v],
                self.upper[v],
                self.alpha[v]
            )
            .unwrap();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abstraction::analyze;
    use crate::model::samples::{base, threshold_property};

    fn v(i: usize) -> NeuronId {
        NeuronId(i)
    }

    fn base_config() -> Configuration {
        let net = base();
        let prop = threshold_property();
        let b = analyze(&net, &prop.input_box, &[]).unwrap().into_bounds().unwrap();
        initialize(&net, &prop, &b).unwrap()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-9
    }

    #[test]
    fn initial_configuration_of_base_network() {
        let c = base_config();
        assert_eq!(c.basis(), vec![v(2), v(3), v(6), v(7), v(8)]);
        let expect_l = [-1.0, -1.0, -1.0, -1.6, 0.0, 0.0, 0.3, 0.0, 0.0, 0.1, 0.0, 0.0, 0.0, 0.0];
        let expect_u = [1.0, 1.0, 0.8, 1.6, 0.8, 1.6, 1.28, 1.0, 1.6, 0.1, 0.0, 0.0, 0.0, 0.0];
        let expect_a = [-1.0, -1.0, 0.4, 0.0, 0.0, 0.0, 0.0, -0.4, 0.0, 0.1, 0.0, 0.0, 0.0, 0.0];
        for i in 0..14 {
            assert!(close(c.lower[i], expect_l[i]), "l of v{i}");
            assert!(close(c.upper[i], expect_u[i]), "u of v{i}");
            assert!(close(c.alpha[i], expect_a[i]), "alpha of v{i}");
        }
        // x7 = -0.2 x1 + 0.7 x2 + x5 + x9 - x12
        let row = c.tableau.row(v(7)).unwrap();
        for (j, e) in [(0, -0.2), (1, 0.7), (4, 1.0), (9, 1.0), (12, -1.0)] {
            assert!(close(row[j], e));
        }
        assert_eq!(row.iter().filter(|c| **c != 0.0).count(), 5);
    }

    #[test]
    fn pivots_reproduce_hand_computed_tableaus() {
        let mut c = base_config();
        c.pivot(v(7), v(4)).unwrap();
        assert_eq!(c.basis(), vec![v(2), v(3), v(4), v(6), v(8)]);
        let x5 = c.tableau.row(v(4)).unwrap().to_vec();
        for (j, e) in [(0, 0.2), (1, -0.7), (7, 1.0), (9, -1.0), (12, 1.0)] {
            assert!(close(x5[j], e));
        }
        let y = c.tableau.row(v(6)).unwrap().to_vec();
        for (j, e) in [(0, 0.08), (1, -0.28), (5, 0.6), (7, 0.4), (9, -0.4), (11, -1.0), (12, 0.4)] {
            assert!(close(y[j], e), "y coeff {j}");
        }
        c.pivot(v(6), v(5)).unwrap();
        assert_eq!(c.basis(), vec![v(2), v(3), v(4), v(5), v(8)]);
        let x6 = c.tableau.row(v(5)).unwrap();
        assert!(close(x6[6], 1.0 / 0.6));
        assert!(close(x6[9], 0.4 / 0.6));
        // Assignment of the base network after the second pivot.
        let mut alpha = vec![0.0; 14];
        alpha[0] = -1.0;
        alpha[1] = -1.0;
        alpha[6] = 0.3;
        alpha[9] = 0.1;
        c.tableau.update_basics(&mut alpha);
        assert!((alpha[5] - 0.2333).abs() < 1e-3);
        assert!((alpha[4] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn one_row_inversion() {
        let eq = Equation { defined: v(0), terms: vec![(v(1), 2.0)] };
        let mut t = Tableau::from_equations(2, &[eq]).unwrap();
        t.pivot(v(0), v(1)).unwrap();
        assert_eq!(t.row(v(1)).unwrap(), &[0.5, 0.0]);
        assert!(t.pivot(v(1), v(1)).is_err());
    }

    #[test]
    fn tiny_pivot_is_rejected() {
        let eq = Equation { defined: v(0), terms: vec![(v(1), 1e-10), (v(2), 1.0)] };
        let mut t = Tableau::from_equations(3, &[eq]).unwrap();
        assert!(matches!(t.pivot(v(0), v(1)), Err(Error::PivotTooSmall { .. })));
    }

    #[test]
    fn unsat_row_rules() {
        let eq = Equation { defined: v(0), terms: vec![(v(1), 1.0), (v(2), 1.0)] };
        let t = Tableau::from_equations(3, &[eq]).unwrap();
        assert_eq!(check_unsat_rows(&t, &[3.0, 0.0, 0.0], &[5.0, 1.0, 1.0]), RowVerdict::UnsatRow(v(0)));
        assert_eq!(check_unsat_rows(&t, &[-5.0, 0.0, 0.0], &[-1.0, 1.0, 1.0]), RowVerdict::UnsatRow(v(0)));
        assert_eq!(check_unsat_rows(&t, &[0.0, 0.0, 0.0], &[1.0, 1.0, 1.0]), RowVerdict::Feasible);
    }

    #[test]
    fn relu_conflict_after_two_pivots() {
        // Replays the state with x6 = 0.233 while x4 = 0.
        let mut c = base_config();
        c.pivot(v(7), v(4)).unwrap();
        c.pivot(v(6), v(5)).unwrap();
        c.alpha[6] = 0.3;
        c.alpha[7] = 0.0;
        c.tableau.update_basics(&mut c.alpha);
        assert!(c.relus.iter().all(|l| c.in_bounds(l.pre, c.alpha[l.pre.0])));
        let r = c.repair_step().unwrap();
        assert_eq!(r, Repair::Progress);
        assert_eq!(c.violation_stats(), vec![(v(2), 0), (v(3), 1)]);
    }

    #[test]
    fn satisfied_when_everything_holds() {
        let net = base();
        let prop = threshold_property();
        let b = analyze(&net, &prop.input_box, &[]).unwrap().into_bounds().unwrap();
        let mut c = initialize(&net, &prop, &b).unwrap();
        let x = [0.675, 0.05];
        let vals = net.evaluate_neurons(&x).unwrap();
        c.alpha[..7].copy_from_slice(&vals);
        // Non-basic inputs and ReLU outputs decide everything else.
        for (i, val) in vals.iter().enumerate() {
            if !c.tableau.is_basic(v(i)) {
                c.alpha[i] = *val;
            }
        }
        c.tableau.update_basics(&mut c.alpha);
        assert!(matches!(c.repair_step().unwrap(), Repair::Satisfied(w) if close(w[0], 0.675) && close(w[1], 0.05)));
    }

    #[test]
    fn oscillating_repairs_exhaust_the_budget() {
        let mut c = base_config();
        let r = c.local_search(40).unwrap();
        let Repair::Stuck(stats) = r else { panic!("expected budget exhaustion, got {r:?}") };
        assert!(stats.iter().map(|s| s.1).sum::<u32>() > 2);
    }

    #[test]
    fn gauss_to_current_basis_is_identity_and_reaches_target() {
        let c = base_config();
        let same = c.tableau.gauss_to_basis(&c.basis()).unwrap();
        assert_eq!(same.basis(), c.basis());
        for (b, row) in c.tableau.rows() {
            assert_eq!(same.row(b).unwrap(), row);
        }
        let target = [v(2), v(3), v(4), v(6), v(8)];
        let t1 = c.tableau.gauss_to_basis(&target).unwrap();
        let mut manual = c.tableau.clone();
        manual.pivot(v(7), v(4)).unwrap();
        for (b, row) in manual.rows() {
            let other = t1.row(b).unwrap();
            assert!(row.iter().zip(other).all(|(a, b)| (a - b).abs() < 1e-12));
        }
        // x11 occurs only in the row of y, which stays basic.
        assert!(matches!(c.tableau.gauss_to_basis(&[v(2), v(3), v(6), v(7), v(11)]), Err(Error::Singular(v)) if v == NeuronId(11)));
    }
}
