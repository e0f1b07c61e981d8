//! Symbolic bound propagation on the two-neuron sample network.

use incremark::abstraction::{analyze, Analysis, Assertion};
use incremark::model::samples::{base, threshold_property};
use incremark::NeuronId;

fn main() -> incremark::Result<()> {
    let net = base();
    let prop = threshold_property();
    let Analysis::Feasible(b) = analyze(&net, &prop.input_box, &[])? else { unreachable!() };
    for i in 0..b.len() {
        let id = NeuronId(i);
        println!("{id}: [{:.3}, {:.3}]", b.lo(id), b.hi(id));
    }
    for (post, rel) in b.relations() {
        println!("{} -> {post}: {:?}, upper slope {:.4}", rel.pre, rel.phase, rel.upper.slope);
    }

    // Fixing the second hidden unit to its inactive phase tightens the output.
    let asserts = [Assertion::nonpos(NeuronId(3))];
    if let Analysis::Feasible(b) = analyze(&net, &prop.input_box, &asserts)? {
        println!("with {}: output in [{:.3}, {:.3}]", asserts[0], b.lo(NeuronId(6)), b.hi(NeuronId(6)));
    }
    Ok(())
}
