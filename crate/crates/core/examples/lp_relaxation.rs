//! The triangle relaxation of a branch and LP-based input tightening.

use incremark::abstraction::{analyze, Assertion};
use incremark::lp::{build, tighten_inputs_then_repropagate, Tightening};
use incremark::model::samples::{base, threshold_property};
use incremark::NeuronId;

fn main() -> incremark::Result<()> {
    let net = base();
    let prop = threshold_property();
    for asserts in [vec![], vec![Assertion::nonneg(NeuronId(3))], vec![Assertion::nonpos(NeuronId(2)), Assertion::nonpos(NeuronId(3))]] {
        let bounds = analyze(&net, &prop.input_box, &asserts)?.into_bounds().expect("feasible");
        let relax = build(&net, &prop, &asserts, &bounds);
        let label: Vec<String> = asserts.iter().map(ToString::to_string).collect();
        println!("[{}] relaxation has {} constraints, feasible: {}", label.join(", "), relax.lp.constraints.len(), relax.feasible()?);
        match tighten_inputs_then_repropagate(&net, &prop, &asserts)? {
            Tightening::Bounds { input_box, .. } => println!("  tightened inputs {input_box:?}"),
            Tightening::Infeasible => println!("  branch is infeasible"),
        }
    }
    Ok(())
}
