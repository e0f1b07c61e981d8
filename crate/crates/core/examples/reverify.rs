//! Re-verifies both weight variants of the sample network against the
//! proof tree of the original, in both replay modes.

use incremark::bench::oracle;
use incremark::incremental::{verify_incremental, Mode};
use incremark::model::samples::{base, threshold_property_at, variant_large, variant_small};
use incremark::reluplex::{solve, SearchParams};

fn main() -> incremark::Result<()> {
    let params = SearchParams::default();
    for t in [0.3, 1.2] {
        let prop = threshold_property_at(t);
        let (v, tree) = solve(&base(), &prop, &params)?;
        println!("threshold {t}: original is {}", v.label());
        for (name, net) in [("small change", variant_small()), ("large change", variant_large())] {
            for mode in [Mode::Strict, Mode::Lazy] {
                let r = verify_incremental(&net, &prop, &tree, mode, &params)?;
                println!(
                    "  {name} {mode:?}: {} (oracle {}), replayed {} fell back {}",
                    r.verdict.label(),
                    oracle(&net, &prop)?.label(),
                    r.report.replayed,
                    r.report.fallback
                );
            }
        }
    }
    Ok(())
}
