//! Leaf distances and pruning on a recorded proof tree.

use incremark::abstraction::analyze;
use incremark::model::samples::{base, threshold_property_at};
use incremark::model::Interval;
use incremark::proof_tree::{NodeStatus, ProofTree};
use incremark::reluplex::{solve, SearchParams};

fn main() -> incremark::Result<()> {
    let prop = threshold_property_at(1.0);
    let (_, tree) = solve(&base(), &prop, &SearchParams::default())?;
    let text = tree.to_json()?;
    let tree = ProofTree::from_json(&text)?;
    println!("{} nodes, {} bytes of JSON", tree.len(), text.len());

    let leaves: Vec<usize> = tree.leaves().map(|n| n.id).collect();
    for &a in &leaves {
        let row: Vec<usize> = leaves.iter().map(|&b| tree.distance(a, b)).collect::<Result<_, _>>()?;
        println!("leaf {a:>2}: distances {row:?}");
    }

    // On a smaller box some branches become impossible and are cut away.
    let small = vec![Interval::new(-1.0, -0.5), Interval::new(0.5, 1.0)];
    let bounds = analyze(&base(), &small, &[])?.into_bounds().expect("feasible box");
    let mut pruned = tree.clone();
    let removed = pruned.prune(&bounds);
    println!("pruning removed leaves {removed:?}; {} UNSAT leaves remain", pruned.leaves_with(NodeStatus::Unsat).len());
    Ok(())
}
