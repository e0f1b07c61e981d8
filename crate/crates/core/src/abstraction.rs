//! DeepPoly-style bound propagation.
//!
//! Every neuron gets a concrete interval. Pre-activation neurons are bounded
//! by back-substituting their affine definition through all earlier layers
//! down to the input box. The tightest concretization over all layers wins. ReLU outputs additionally carry one linear lower and one
//! linear upper relation over their pre-activation neuron.
//!
//! Sign assertions on pre-activation neurons clamp the interval before the
//! ReLU case split, so `x ≤ 0` turns an uncertain unit into a dead one.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Interval, Network, NeuronId, NeuronLayout, SafetyProperty};
use crate::simplex_core::EPS_BOUND;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    NonNeg,
    NonPos,
}

impl Sign {
    pub fn flip(self) -> Self {
        match self {
            Sign::NonNeg => Sign::NonPos,
            Sign::NonPos => Sign::NonNeg,
        }
    }
}

/// `neuron ≥ 0` or `neuron ≤ 0` on the pre-activation side of a ReLU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Assertion {
    pub neuron: NeuronId,
    pub sign: Sign,
}

impl Assertion {
    pub fn nonneg(neuron: NeuronId) -> Self {
        Self { neuron, sign: Sign::NonNeg }
    }

    pub fn nonpos(neuron: NeuronId) -> Self {
        Self { neuron, sign: Sign::NonPos }
    }

    pub fn negate(self) -> Self {
        Self { neuron: self.neuron, sign: self.sign.flip() }
    }

    /// Whether a concrete value of the neuron is consistent with the assertion.
    pub fn admits(&self, value: f64, tol: f64) -> bool {
        match self.sign {
            Sign::NonNeg => value >= -tol,
            Sign::NonPos => value <= tol,
        }
    }
}

impl fmt::Display for Assertion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.sign {
            Sign::NonNeg => write!(f, "{} >= 0", self.neuron),
            Sign::NonPos => write!(f, "{} <= 0", self.neuron),
        }
    }
}

/// `slope · x_pre + intercept`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearBound {
    pub slope: f64,
    pub intercept: f64,
}

impl LinearBound {
    pub const ZERO: Self = Self { slope: 0.0, intercept: 0.0 };
    pub const IDENTITY: Self = Self { slope: 1.0, intercept: 0.0 };

    pub fn eval(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Active,
    Inactive,
    Uncertain,
}

/// Symbolic bounds of one ReLU output in terms of its input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReluRelation {
    pub pre: NeuronId,
    pub phase: Phase,
    pub lower: LinearBound,
    pub upper: LinearBound,
}

impl ReluRelation {
    fn from_interval(pre: NeuronId, l: f64, u: f64) -> Self {
        if l >= 0.0 {
            Self { pre, phase: Phase::Active, lower: LinearBound::IDENTITY, upper: LinearBound::IDENTITY }
        } else if u <= 0.0 {
            Self { pre, phase: Phase::Inactive, lower: LinearBound::ZERO, upper: LinearBound::ZERO }
        } else {
            let slope = u / (u - l);
            Self {
                pre,
                phase: Phase::Uncertain,
                lower: LinearBound::ZERO,
                upper: LinearBound { slope, intercept: -slope * l },
            }
        }
    }
}

/// Concrete intervals for every network neuron plus ReLU relations.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
    relations: BTreeMap<NeuronId, ReluRelation>,
    outputs: Vec<NeuronId>,
}

impl Bounds {
    pub fn lo(&self, id: NeuronId) -> f64 {
        self.lower[id.0]
    }

    pub fn hi(&self, id: NeuronId) -> f64 {
        self.upper[id.0]
    }

    pub fn interval(&self, id: NeuronId) -> Interval {
        Interval::new(self.lower[id.0], self.upper[id.0])
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    /// Relation of a post-activation neuron.
    pub fn relation(&self, post: NeuronId) -> Option<&ReluRelation> {
        self.relations.get(&post)
    }

    pub fn relations(&self) -> impl Iterator<Item = (NeuronId, &ReluRelation)> {
        self.relations.iter().map(|(k, v)| (*k, v))
    }

    pub fn outputs(&self) -> &[NeuronId] {
        &self.outputs
    }

    /// A ReLU input is uncertain iff its interval strictly contains zero.
    pub fn is_uncertain(&self, pre: NeuronId) -> bool {
        self.lower[pre.0] < 0.0 && self.upper[pre.0] > 0.0
    }

    pub fn uncertain_count(&self) -> usize {
        self.relations.values().filter(|r| r.phase == Phase::Uncertain).count()
    }

    /// Intersects every concrete interval with the one in `other`.
    pub fn intersect_with(&mut self, other: &Bounds) {
        for i in 0..self.lower.len() {
            self.intersect(other, i);
        }
    }

    fn intersect(&mut self, other: &Bounds, id: usize) {
        self.lower[id] = self.lower[id].max(other.lower[id]);
        self.upper[id] = self.upper[id].min(other.upper[id]);
    }
}

/// Result of [`analyze`]: bounds, or the neuron whose asserted sign
/// contradicts its box-derived interval.
#[derive(Debug, Clone, PartialEq)]
pub enum Analysis {
    Feasible(Bounds),
    Infeasible(NeuronId),
}

impl Analysis {
    pub fn bounds(&self) -> Option<&Bounds> {
        match self {
            Analysis::Feasible(b) => Some(b),
            Analysis::Infeasible(_) => None,
        }
    }

    pub fn into_bounds(self) -> Option<Bounds> {
        match self {
            Analysis::Feasible(b) => Some(b),
            Analysis::Infeasible(_) => None,
        }
    }
}

/// Checks that every assertion names a ReLU input.
pub fn check_assertions(layout: &NeuronLayout, asserts: &[Assertion]) -> Result<()> {
    for a in asserts {
        if layout.relu_of_pre(a.neuron).is_none() {
            return Err(Error::InvalidAssertion(a.neuron));
        }
    }
    Ok(())
}

fn concretize(coeffs: &[f64], constant: f64, lo: &[f64], hi: &[f64], upper: bool) -> f64 {
    coeffs.iter().enumerate().fold(constant, |acc, (j, &c)| {
        let pick_hi = (c > 0.0) == upper;
        acc + c * if pick_hi { hi[j] } else { lo[j] }
    })
}

struct Propagator<'a> {
    net: &'a Network,
    layout: NeuronLayout,
    lower: Vec<f64>,
    upper: Vec<f64>,
    /// Per hidden layer, the relation of each unit.
    relations: Vec<Vec<ReluRelation>>,
}

impl Propagator<'_> {
    fn values_bounds(&self, layer: usize) -> (Vec<f64>, Vec<f64>) {
        let ids = if layer == 0 {
            &self.layout.inputs
        } else {
            self.layout.layers[layer - 1].values()
        };
        (ids.iter().map(|id| self.lower[id.0]).collect(), ids.iter().map(|id| self.upper[id.0]).collect())
    }

    /// Bound of row `row` of affine layer `layer` by back-substitution.
    fn bound(&self, layer: usize, row: usize, upper: bool) -> f64 {
        let l = &self.net.layers()[layer];
        let mut coeffs = l.weights[row].clone();
        let mut constant = l.bias[row];
        let (lo, hi) = self.values_bounds(layer);
        let mut best = concretize(&coeffs, constant, &lo, &hi, upper);
        for k in (0..layer).rev() {
            // Replace layer-k ReLU outputs by their relations over the inputs.
            for (j, c) in coeffs.iter_mut().enumerate() {
                let rel = &self.relations[k][j];
                let lin = if (*c > 0.0) == upper { rel.upper } else { rel.lower };
                constant += *c * lin.intercept;
                *c *= lin.slope;
            }
            let prev = &self.net.layers()[k];
            let mut next = vec![0.0; prev.fan_in()];
            for (j, &c) in coeffs.iter().enumerate() {
                if c == 0.0 {
                    continue;
                }
                constant += c * prev.bias[j];
                for (n, w) in next.iter_mut().zip(&prev.weights[j]) {
                    *n += c * w;
                }
            }
            coeffs = next;
            let (lo, hi) = self.values_bounds(k);
            let v = concretize(&coeffs, constant, &lo, &hi, upper);
            best = if upper { best.min(v) } else { best.max(v) };
        }
        best
    }
}

fn propagate(
    net: &Network,
    input_box: &[Interval],
    asserts: &[Assertion],
    prior: Option<&Bounds>,
) -> Analysis {
    let layout = net.layout();
    let n = layout.count;
    let mut p = Propagator {
        net,
        lower: vec![0.0; n],
        upper: vec![0.0; n],
        relations: Vec::with_capacity(net.layers().len()),
        layout,
    };
    for (id, iv) in p.layout.inputs.iter().zip(input_box) {
        p.lower[id.0] = iv.lo;
        p.upper[id.0] = iv.hi;
    }
    let mut relations = BTreeMap::new();
    for layer in 0..net.layers().len() {
        let ids = p.layout.layers[layer].clone();
        for (row, id) in ids.pre.iter().enumerate() {
            let mut l = p.bound(layer, row, false);
            let mut u = p.bound(layer, row, true);
            if let Some(prior) = prior {
                l = l.max(prior.lower[id.0]);
                u = u.min(prior.upper[id.0]);
            }
            for a in asserts.iter().filter(|a| a.neuron == *id) {
                match a.sign {
                    Sign::NonNeg => l = l.max(0.0),
                    Sign::NonPos => u = u.min(0.0),
                }
            }
            if l > u + EPS_BOUND {
                return Analysis::Infeasible(*id);
            }
            if l > u {
                let mid = 0.5 * (l + u);
                l = mid;
                u = mid;
            }
            p.lower[id.0] = l;
            p.upper[id.0] = u;
        }
        if let Some(post) = &ids.post {
            let rels: Vec<ReluRelation> = ids
                .pre
                .iter()
                .map(|pre| ReluRelation::from_interval(*pre, p.lower[pre.0], p.upper[pre.0]))
                .collect();
            for (rel, out) in rels.iter().zip(post) {
                let (l, u) = match rel.phase {
                    Phase::Active => (p.lower[rel.pre.0], p.upper[rel.pre.0]),
                    Phase::Inactive => (0.0, 0.0),
                    Phase::Uncertain => (0.0, p.upper[rel.pre.0]),
                };
                p.lower[out.0] = l;
                p.upper[out.0] = u;
                relations.insert(*out, *rel);
            }
            p.relations.push(rels);
        }
    }
    let mut bounds = Bounds {
        lower: p.lower,
        upper: p.upper,
        relations,
        outputs: p.layout.outputs.clone(),
    };
    if let Some(prior) = prior {
        bounds.intersect_with(prior);
    }
    Analysis::Feasible(bounds)
}

/// Runs the abstraction on `input_box` under `asserts`.
///
/// Assertions are applied one prefix at a time: the bounds under
/// `asserts[..k]` constrain the propagation under `asserts[..k + 1]`. Hence
/// appending an assertion never widens any interval, and a child node of a
/// search tree, whose assertion list extends its parent's, is analyzed at
/// least as tightly as the parent.
pub fn analyze(net: &Network, input_box: &[Interval], asserts: &[Assertion]) -> Result<Analysis> {
    if input_box.len() != net.input_dim() {
        return Err(Error::Dimension(format!(
            "box has {} intervals, network has {} inputs",
            input_box.len(),
            net.input_dim()
        )));
    }
    if input_box.iter().any(|iv| iv.lo > iv.hi) {
        return Err(Error::InvalidProperty("empty input interval".into()));
    }
    check_assertions(&net.layout(), asserts)?;
    let mut current = propagate(net, input_box, &[], None);
    for k in 1..=asserts.len() {
        let Analysis::Feasible(prior) = &current else { break };
        current = propagate(net, input_box, &asserts[..k], Some(prior));
    }
    Ok(current)
}

/// Interval range of `Σ coeffs[j]·y_j` over the output bounds.
pub fn output_range(bounds: &Bounds, coeffs: &[f64]) -> Interval {
    let lo: Vec<f64> = bounds.outputs.iter().map(|id| bounds.lo(*id)).collect();
    let hi: Vec<f64> = bounds.outputs.iter().map(|id| bounds.hi(*id)).collect();
    Interval::new(concretize(coeffs, 0.0, &lo, &hi, false), concretize(coeffs, 0.0, &lo, &hi, true))
}

/// True when some negated constraint cannot be met anywhere within the
/// bounds, which proves the property. A vacuous negation is refuted.
pub fn is_property_refuted(bounds: &Bounds, prop: &SafetyProperty) -> bool {
    prop.negated.is_empty()
        || prop
            .negated
            .iter()
            .any(|c| output_range(bounds, &c.coeffs).hi < c.rhs - EPS_BOUND)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::model::samples::{base, threshold_property, threshold_property_at};
    use crate::model::OutputConstraint;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_box() -> Vec<Interval> {
        vec![Interval::new(-1.0, 1.0); 2]
    }

    fn plain(net: &Network, b: &[Interval]) -> Bounds {
        analyze(net, b, &[]).unwrap().into_bounds().unwrap()
    }

    #[test]
    fn base_network_bounds() {
        let b = plain(&base(), &unit_box());
        let close = |a: f64, e: f64| (a - e).abs() < 1e-12;
        assert!(close(b.lo(NeuronId(2)), -1.0) && close(b.hi(NeuronId(2)), 0.8));
        assert!(close(b.lo(NeuronId(3)), -1.6) && close(b.hi(NeuronId(3)), 1.6));
        assert!(close(b.hi(NeuronId(4)), 0.8) && close(b.hi(NeuronId(5)), 1.6));
        assert!(close(b.lo(NeuronId(6)), 0.0) && close(b.hi(NeuronId(6)), 1.28));
        let r5 = b.relation(NeuronId(4)).unwrap();
        assert!(close(r5.upper.slope, 0.8 / 1.8) && close(r5.upper.intercept, 0.8 / 1.8));
        assert_eq!(r5.lower, LinearBound::ZERO);
        let r6 = b.relation(NeuronId(5)).unwrap();
        assert!(close(r6.upper.slope, 0.5) && close(r6.upper.intercept, 0.8));
    }

    #[test]
    fn nonpos_assertion_kills_unit() {
        let a = analyze(&base(), &unit_box(), &[Assertion::nonpos(NeuronId(3))]).unwrap();
        let b = a.into_bounds().unwrap();
        assert_eq!(b.hi(NeuronId(3)), 0.0);
        assert_eq!(b.hi(NeuronId(5)), 0.0);
        assert!((b.hi(NeuronId(6)) - 0.32).abs() < 1e-12);
        assert_eq!(b.relation(NeuronId(5)).unwrap().phase, Phase::Inactive);
    }

    #[test]
    fn empty_assertions_are_bit_identical() {
        let a = analyze(&base(), &unit_box(), &[]).unwrap();
        let b = analyze(&base(), &unit_box(), &[]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn contradicting_assertion_is_infeasible() {
        let b = vec![Interval::new(0.5, 1.0), Interval::new(-1.0, -0.5)];
        // x4 = 0.8 x1 - 0.8 x2 >= 0.8 on this box.
        let a = analyze(&base(), &b, &[Assertion::nonpos(NeuronId(3))]).unwrap();
        assert_eq!(a, Analysis::Infeasible(NeuronId(3)));
    }

    #[test]
    fn assertion_on_non_relu_is_rejected() {
        let err = analyze(&base(), &unit_box(), &[Assertion::nonneg(NeuronId(6))]);
        assert!(matches!(err, Err(Error::InvalidAssertion(NeuronId(6)))));
    }

    #[test]
    fn refutation() {
        let b = plain(&base(), &unit_box());
        assert!(!is_property_refuted(&b, &threshold_property()));
        assert!(is_property_refuted(&b, &threshold_property_at(2.0)));
        let vacuous = SafetyProperty::new(unit_box(), vec![]).unwrap();
        assert!(is_property_refuted(&b, &vacuous));
        let neg = SafetyProperty::new(unit_box(), vec![OutputConstraint::new(vec![-1.0], 0.01)]).unwrap();
        assert!(is_property_refuted(&b, &neg));
    }

    pub(crate) fn random_net(rng: &mut ChaCha8Rng, dims: &[usize]) -> Network {
        crate::bench::random_network(rng, dims)
    }

    #[test]
    fn adding_assertions_never_widens() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let net = random_net(&mut rng, &[2, 4, 4, 1]);
            let layout = net.layout();
            let b = unit_box();
            let mut asserts = Vec::new();
            let mut prev = plain(&net, &b);
            for pair in &layout.relu_pairs {
                if !prev.is_uncertain(pair.pre) || rng.gen_bool(0.4) {
                    continue;
                }
                let a = if rng.gen_bool(0.5) { Assertion::nonneg(pair.pre) } else { Assertion::nonpos(pair.pre) };
                asserts.push(a);
                let Analysis::Feasible(next) = analyze(&net, &b, &asserts).unwrap() else { break };
                for i in 0..layout.count {
                    assert!(next.lower[i] >= prev.lower[i] - 1e-12, "lower widened at v{i}");
                    assert!(next.upper[i] <= prev.upper[i] + 1e-12, "upper widened at v{i}");
                }
                prev = next;
            }
        }
    }
}
