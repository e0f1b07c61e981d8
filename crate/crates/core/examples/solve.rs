//! Solves a query from scratch and writes the proof tree as JSON.
//!
//! `cargo run --example solve -- data/base.rnn data/threshold.prop tree.json`

use incremark::model::{load_network, load_property};
use incremark::reluplex::{solve_with_stats, SearchParams};

fn main() -> incremark::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let dir = env!("CARGO_MANIFEST_DIR");
    let net_path = args.first().cloned().unwrap_or(format!("{dir}/data/base.rnn"));
    let prop_path = args.get(1).cloned().unwrap_or(format!("{dir}/data/threshold.prop"));
    let net = load_network(&net_path)?;
    let prop = load_property(&prop_path, &net)?;

    let (verdict, tree, stats) = solve_with_stats(&net, &prop, &SearchParams::default())?;
    println!("{} after {} nodes, {} repair steps", verdict.label(), stats.nodes, stats.repair_steps);
    if let Some(x) = verdict.witness() {
        println!("counterexample {x:?} gives {:?}", net.evaluate(x)?);
    }
    for leaf in tree.leaves() {
        let path: Vec<String> = tree.asserts_of(leaf.id)?.iter().map(ToString::to_string).collect();
        println!("leaf {} {:?}: {}", leaf.id, leaf.status, path.join(", "));
    }
    if let Some(out) = args.get(2) {
        tree.save(out)?;
        println!("tree written to {out}");
    }
    Ok(())
}
