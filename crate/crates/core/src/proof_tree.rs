//! The search tree of a solve, kept as a replayable certificate.
//!
//! Edges carry sign assertions on ReLU inputs. Each UNSAT leaf stores the
//! basis of its last configuration and the basic variable of the row that
//! proved the contradiction; the SAT leaf stores its witness. Nothing else
//! about the search is persisted.

use std::collections::BTreeSet;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::abstraction::{Assertion, Bounds, Sign};
use crate::error::{Error, Result};
use crate::model::{Network, NeuronId, SafetyProperty, Verdict};
use crate::simplex_core::EPS_BOUND;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeStatus {
    Internal,
    Unsat,
    Sat,
    /// Never explored because a SAT leaf ended the search first.
    Unsolved,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TreeVerdict {
    Sat,
    Unsat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: usize,
    pub parent: Option<usize>,
    #[serde(rename = "assert")]
    pub assertion: Option<Assertion>,
    pub status: NodeStatus,
    pub basis: Option<Vec<NeuronId>>,
    pub key_row_var: Option<NeuronId>,
    pub witness: Option<Vec<f64>>,
}

impl Node {
    fn fresh(id: usize, parent: Option<usize>, assertion: Option<Assertion>) -> Self {
        Self {
            id,
            parent,
            assertion,
            status: NodeStatus::Unsolved,
            basis: None,
            key_row_var: None,
            witness: None,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.status != NodeStatus::Internal
    }
}

/// A leaf together with its assertion path.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafRef {
    pub id: usize,
    pub asserts: Vec<Assertion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProofTree {
    pub version: u32,
    pub dims: Vec<usize>,
    pub prop_hash: String,
    pub verdict: TreeVerdict,
    pub nodes: Vec<Node>,
}

impl ProofTree {
    /// A tree holding only an unexplored root.
    pub fn new(net: &Network, prop: &SafetyProperty) -> Self {
        Self {
            version: FORMAT_VERSION,
            dims: net.dims().to_vec(),
            prop_hash: prop.fingerprint(),
            verdict: TreeVerdict::Unsat,
            nodes: vec![Node::fresh(0, None, None)],
        }
    }

    pub fn root(&self) -> usize {
        self.nodes.iter().find(|n| n.parent.is_none()).map_or(0, |n| n.id)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn index(&self, id: usize) -> Result<usize> {
        // Ids are allocated in increasing order, so the vector stays sorted.
        self.nodes
            .binary_search_by_key(&id, |n| n.id)
            .map_err(|_| Error::TreeFormat(format!("unknown node id {id}")))
    }

    pub fn node(&self, id: usize) -> Result<&Node> {
        Ok(&self.nodes[self.index(id)?])
    }

    pub fn node_mut(&mut self, id: usize) -> Result<&mut Node> {
        let i = self.index(id)?;
        Ok(&mut self.nodes[i])
    }

    pub fn children(&self, id: usize) -> Vec<usize> {
        self.nodes.iter().filter(|n| n.parent == Some(id)).map(|n| n.id).collect()
    }

    fn next_id(&self) -> usize {
        self.nodes.last().map_or(0, |n| n.id + 1)
    }

    /// Splits leaf `id` on `neuron`; returns the `≤ 0` child then the `≥ 0` child.
    pub fn split(&mut self, id: usize, neuron: NeuronId) -> Result<(usize, usize)> {
        let node = self.node_mut(id)?;
        node.status = NodeStatus::Internal;
        node.basis = None;
        node.key_row_var = None;
        node.witness = None;
        let neg = self.next_id();
        self.nodes.push(Node::fresh(neg, Some(id), Some(Assertion::nonpos(neuron))));
        self.nodes.push(Node::fresh(neg + 1, Some(id), Some(Assertion::nonneg(neuron))));
        Ok((neg, neg + 1))
    }

    pub fn mark_unsat(&mut self, id: usize, basis: Vec<NeuronId>, key_row_var: NeuronId) -> Result<()> {
        let node = self.node_mut(id)?;
        node.status = NodeStatus::Unsat;
        node.basis = Some(basis);
        node.key_row_var = Some(key_row_var);
        node.witness = None;
        Ok(())
    }

    pub fn mark_sat(&mut self, id: usize, basis: Option<Vec<NeuronId>>, witness: Vec<f64>) -> Result<()> {
        let node = self.node_mut(id)?;
        node.status = NodeStatus::Sat;
        node.basis = basis;
        node.key_row_var = None;
        node.witness = Some(witness);
        self.verdict = TreeVerdict::Sat;
        Ok(())
    }

    /// Turns a leaf back into an unexplored node, dropping its features.
    pub fn reopen(&mut self, id: usize) -> Result<()> {
        let node = self.node_mut(id)?;
        if !node.is_leaf() {
            return Err(Error::TreeFormat(format!("node {id} is not a leaf")));
        }
        *node = Node::fresh(node.id, node.parent, node.assertion);
        Ok(())
    }

    /// Edge labels from the root down to `id`, root first.
    pub fn asserts_of(&self, id: usize) -> Result<Vec<Assertion>> {
        let mut out = Vec::new();
        let mut cur = self.node(id)?;
        while let Some(p) = cur.parent {
            if let Some(a) = cur.assertion {
                out.push(a);
            }
            cur = self.node(p)?;
        }
        out.reverse();
        Ok(out)
    }

    /// Size of the symmetric difference of the two assertion sets.
    pub fn distance(&self, a: usize, b: usize) -> Result<usize> {
        let sa: BTreeSet<Assertion> = self.asserts_of(a)?.into_iter().collect();
        let sb: BTreeSet<Assertion> = self.asserts_of(b)?.into_iter().collect();
        Ok(sa.symmetric_difference(&sb).count())
    }

    pub fn leaves(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(|n| n.is_leaf())
    }

    pub fn leaves_with(&self, status: NodeStatus) -> Vec<usize> {
        self.leaves().filter(|n| n.status == status).map(|n| n.id).collect()
    }

    pub fn leaf_ref(&self, id: usize) -> Result<LeafRef> {
        if !self.node(id)?.is_leaf() {
            return Err(Error::TreeFormat(format!("node {id} is not a leaf")));
        }
        Ok(LeafRef { id, asserts: self.asserts_of(id)? })
    }

    pub fn sat_leaf(&self) -> Option<&Node> {
        self.leaves().find(|n| n.status == NodeStatus::Sat)
    }

    pub fn to_verdict(&self) -> Verdict {
        match self.sat_leaf().and_then(|n| n.witness.clone()) {
            Some(w) => Verdict::Sat(w),
            None => Verdict::Unsat,
        }
    }

    fn subtree(&self, id: usize) -> Vec<usize> {
        let mut out = vec![id];
        let mut i = 0;
        while i < out.len() {
            out.extend(self.children(out[i]));
            i += 1;
        }
        out
    }

    /// Removes every edge whose assertion contradicts `bounds`, together
    /// with the subtree below it. The surviving sibling takes the place of
    /// its parent, so the tree stays binary. Returns the removed leaf ids.
    pub fn prune(&mut self, bounds: &Bounds) -> Vec<usize> {
        let mut removed_leaves = Vec::new();
        loop {
            let dead = self.nodes.iter().find(|n| {
                n.assertion.is_some_and(|a| match a.sign {
                    Sign::NonNeg => bounds.hi(a.neuron) < -EPS_BOUND,
                    Sign::NonPos => bounds.lo(a.neuron) > EPS_BOUND,
                }) && n.parent.is_some()
            });
            let Some(dead) = dead.map(|n| (n.id, n.parent.unwrap())) else { break };
            let (dead, parent) = dead;
            let doomed = self.subtree(dead);
            removed_leaves.extend(doomed.iter().filter(|id| self.node(**id).is_ok_and(Node::is_leaf)));
            self.nodes.retain(|n| !doomed.contains(&n.id));
            let survivor = self.children(parent).into_iter().next();
            let p = self.node(parent).cloned().expect("parent exists");
            self.nodes.retain(|n| n.id != parent);
            if let Some(s) = survivor {
                let node = self.node_mut(s).expect("survivor exists");
                node.parent = p.parent;
                node.assertion = p.assertion;
            } else {
                // Both sides contradict; cannot happen for one interval.
                self.nodes.push(Node::fresh(p.id, p.parent, p.assertion));
                self.nodes.sort_by_key(|n| n.id);
            }
        }
        removed_leaves.sort_unstable();
        removed_leaves
    }

    /// Checks the structural invariants of a solve tree.
    pub fn validate(&self) -> Result<()> {
        let roots = self.nodes.iter().filter(|n| n.parent.is_none()).count();
        if roots != 1 {
            return Err(Error::TreeFormat(format!("{roots} roots")));
        }
        if !self.nodes.windows(2).all(|w| w[0].id < w[1].id) {
            return Err(Error::TreeFormat("node ids must be strictly increasing".into()));
        }
        for n in &self.nodes {
            if let Some(p) = n.parent {
                if self.node(p)?.status != NodeStatus::Internal {
                    return Err(Error::TreeFormat(format!("parent of node {} is a leaf", n.id)));
                }
                if n.assertion.is_none() {
                    return Err(Error::TreeFormat(format!("edge into node {} has no assertion", n.id)));
                }
            }
            match n.status {
                NodeStatus::Internal => {
                    let kids = self.children(n.id);
                    let labels: Vec<Assertion> = kids.iter().filter_map(|k| self.node(*k).ok()?.assertion).collect();
                    let ok = labels.len() == 2 && labels[0].neuron == labels[1].neuron && labels[0].sign != labels[1].sign;
                    if !ok {
                        return Err(Error::TreeFormat(format!("node {} is not a proper binary split", n.id)));
                    }
                }
                NodeStatus::Unsat => match (&n.basis, n.key_row_var) {
                    (Some(b), Some(k)) if b.contains(&k) => {}
                    _ => return Err(Error::TreeFormat(format!("UNSAT leaf {} lacks a key row in its basis", n.id))),
                },
                NodeStatus::Sat | NodeStatus::Unsolved => {}
            }
        }
        let sats = self.leaves_with(NodeStatus::Sat).len();
        if sats > 1 {
            return Err(Error::TreeFormat("more than one SAT leaf".into()));
        }
        if sats == 0 && !self.leaves_with(NodeStatus::Unsolved).is_empty() && self.verdict == TreeVerdict::Unsat {
            return Err(Error::TreeFormat("unsolved leaves in an UNSAT tree".into()));
        }
        Ok(())
    }

    /// Errors when `net` has another shape; warns when the property differs.
    pub fn check_compatible(&self, net: &Network, prop: &SafetyProperty) -> Result<()> {
        if self.dims != net.dims() {
            return Err(Error::ShapeMismatch { expected: self.dims.clone(), found: net.dims().to_vec() });
        }
        if self.prop_hash != prop.fingerprint() {
            warn!("proof tree was recorded for a different property; replay stays sound but may fall back often");
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            version: u32,
        }
        let header: Header = serde_json::from_str(text)?;
        if header.version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(header.version));
        }
        let tree: ProofTree = serde_json::from_str(text)?;
        tree.validate()?;
        Ok(tree)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::abstraction::analyze;
    use crate::model::samples::{base, threshold_property};
    use crate::model::{Interval, OutputConstraint};
    use proptest::prelude::*;

    const X3: NeuronId = NeuronId(2);
    const X4: NeuronId = NeuronId(3);

    /// The hand-built search tree of the base network: split on x4, then
    /// on x3 under both branches; the x4 ≥ 0, x3 ≤ 0 leaf is SAT.
    pub(crate) fn sample_tree() -> ProofTree {
        let mut t = ProofTree::new(&base(), &threshold_property());
        let basis = vec![NeuronId(2), NeuronId(3), NeuronId(6), NeuronId(7), NeuronId(8)];
        let (v1, v2) = t.split(0, X4).unwrap();
        let (v3, v4) = t.split(v1, X3).unwrap();
        let (v5, _v6) = t.split(v2, X3).unwrap();
        t.mark_unsat(v3, basis.clone(), NeuronId(6)).unwrap();
        t.mark_unsat(v4, basis.clone(), NeuronId(6)).unwrap();
        t.mark_sat(v5, Some(basis), vec![0.675, 0.05]).unwrap();
        t
    }

    #[test]
    fn sample_tree_shape() {
        let t = sample_tree();
        t.validate().unwrap();
        assert_eq!(t.leaves_with(NodeStatus::Unsat), vec![3, 4]);
        assert_eq!(t.leaves_with(NodeStatus::Unsolved), vec![6]);
        assert_eq!(t.sat_leaf().unwrap().id, 5);
    }

    #[test]
    fn assertion_paths() {
        let t = sample_tree();
        let set = |v: usize| -> BTreeSet<Assertion> { t.asserts_of(v).unwrap().into_iter().collect() };
        assert_eq!(set(5), [Assertion::nonneg(X4), Assertion::nonpos(X3)].into_iter().collect());
        assert_eq!(set(3), [Assertion::nonpos(X4), Assertion::nonpos(X3)].into_iter().collect());
        assert!(t.asserts_of(0).unwrap().is_empty());
        assert!(t.asserts_of(99).is_err());
    }

    #[test]
    fn distances() {
        let t = sample_tree();
        assert_eq!(t.distance(5, 5).unwrap(), 0);
        assert_eq!(t.distance(5, 6).unwrap(), 2);
        assert_eq!(t.distance(3, 6).unwrap(), 4);
    }

    #[test]
    fn prune_keeps_tree_when_both_signs_possible() {
        let prop = threshold_property();
        let b = analyze(&base(), &prop.input_box, &[]).unwrap().into_bounds().unwrap();
        let mut t = sample_tree();
        assert!(t.prune(&b).is_empty());
        assert_eq!(t, sample_tree());
    }

    #[test]
    fn prune_removes_contradicted_branch() {
        // x4 = 0.8 (x1 - x2) lies in [-1.6, -0.8] on this box, so x4 >= 0 is dead.
        let box_ = vec![Interval::new(-1.0, -0.5), Interval::new(0.5, 1.0)];
        let b = analyze(&base(), &box_, &[]).unwrap().into_bounds().unwrap();
        assert!(b.hi(X4) < -0.5);
        let mut t = sample_tree();
        // x3 is negative on this box as well, so only the x3 <= 0, x4 <= 0 leaf survives.
        assert!(b.hi(X3) < 0.0);
        assert_eq!(t.prune(&b), vec![4, 5, 6]);
        let ids: Vec<usize> = t.nodes.iter().map(|n| n.id).collect();
        assert_eq!(ids, vec![3]);
        assert_eq!(t.root(), 3);
        assert!(t.asserts_of(3).unwrap().is_empty());
        t.validate().unwrap();
        let mut root_only = ProofTree::new(&base(), &threshold_property());
        assert!(root_only.prune(&b).is_empty());
    }

    #[test]
    fn json_round_trip_and_format() {
        let t = sample_tree();
        let text = t.to_json().unwrap();
        assert_eq!(ProofTree::from_json(&text).unwrap(), t);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["verdict"], "sat");
        assert_eq!(v["nodes"][1]["assert"]["sign"], "nonpos");
        assert_eq!(v["nodes"][1]["assert"]["neuron"], 3);
        assert_eq!(v["nodes"][0]["assert"], serde_json::Value::Null);
        assert_eq!(v["nodes"][3]["key_row_var"], 6);
        let bumped = text.replacen("\"version\": 1", "\"version\": 2", 1);
        assert!(matches!(ProofTree::from_json(&bumped), Err(Error::UnsupportedVersion(2))));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let t = sample_tree();
        let wide = crate::model::Network::new(vec![
            crate::model::Layer::new(vec![vec![1.0, 1.0, 1.0]], vec![0.0], crate::model::Activation::None),
        ])
        .unwrap();
        let prop = SafetyProperty::new(vec![Interval::new(0.0, 1.0); 3], vec![OutputConstraint::new(vec![1.0], 0.0)]).unwrap();
        assert!(matches!(t.check_compatible(&wide, &prop), Err(Error::ShapeMismatch { .. })));
        assert!(t.check_compatible(&base(), &crate::model::samples::threshold_property_at(0.5)).is_ok());
    }

    /// Random complete trees over `relus` neurons built by random splits.
    pub(crate) fn random_tree(seed: u64, relus: usize, splits: usize) -> ProofTree {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut t = ProofTree::new(&base(), &threshold_property());
        for _ in 0..splits {
            let leaves: Vec<usize> = t.leaves().map(|n| n.id).collect();
            let leaf = leaves[rng.gen_range(0..leaves.len())];
            let used: BTreeSet<NeuronId> = t.asserts_of(leaf).unwrap().iter().map(|a| a.neuron).collect();
            let free: Vec<usize> = (0..relus).filter(|i| !used.contains(&NeuronId(*i))).collect();
            if free.is_empty() {
                continue;
            }
            t.split(leaf, NeuronId(free[rng.gen_range(0..free.len())])).unwrap();
        }
        for id in t.leaves_with(NodeStatus::Unsolved) {
            t.mark_unsat(id, vec![NeuronId(0)], NeuronId(0)).unwrap();
        }
        t
    }

    #[test]
    fn large_tree_round_trips() {
        let t = random_tree(3, 40, 5000);
        assert_eq!(t.len(), 10001);
        assert_eq!(ProofTree::from_json(&t.to_json().unwrap()).unwrap(), t);
    }

    proptest! {
        #[test]
        fn distance_is_a_metric(seed in 0u64..1000) {
            let t = random_tree(seed, 6, 12);
            let leaves: Vec<usize> = t.leaves().map(|n| n.id).collect();
            for &a in &leaves {
                prop_assert_eq!(t.distance(a, a).unwrap(), 0);
                for &b in &leaves {
                    let ab = t.distance(a, b).unwrap();
                    prop_assert_eq!(ab, t.distance(b, a).unwrap());
                    prop_assert_eq!(ab == 0, a == b);
                    for &c in &leaves {
                        prop_assert!(ab <= t.distance(a, c).unwrap() + t.distance(c, b).unwrap());
                    }
                }
            }
        }
    }
}
