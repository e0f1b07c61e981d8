//! Builds the initial configuration of the sample query, prints it, and
//! walks a few repair steps of the local search.

use incremark::abstraction::analyze;
use incremark::model::samples::{base, threshold_property};
use incremark::simplex_core::{initialize, Encoding, Repair};

fn main() -> incremark::Result<()> {
    let net = base();
    let prop = threshold_property();
    let bounds = analyze(&net, &prop.input_box, &[])?.into_bounds().expect("feasible box");
    let enc = Encoding::new(&net, &prop);
    let mut cfg = initialize(&net, &prop, &bounds)?;
    println!("{}", cfg.dump(&enc));
    for step in 1..=20 {
        match cfg.repair_step()? {
            Repair::Progress => println!("step {step}: basis {:?}", cfg.basis()),
            other => {
                println!("step {step}: {other:?}");
                break;
            }
        }
    }
    Ok(())
}
