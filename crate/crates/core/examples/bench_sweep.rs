//! A perturbation sweep on a random 2-5-5-1 network, printed as CSV.

use incremark::bench::{compare, random_instance, summarize, write_csv, BenchConfig};

fn main() -> incremark::Result<()> {
    let (net, prop) = random_instance(7, &[2, 5, 5, 1]);
    let cfg = BenchConfig { fractions: vec![0.1, 0.3, 0.5], trials: 3, jobs: 4, ..BenchConfig::default() };
    let rows = compare(&net, &prop, &cfg)?;
    write_csv(&rows, std::io::stdout().lock())?;
    for s in summarize(&rows) {
        println!("gamma {}: replay {:?}", s.gamma, s.mean_replay_pct);
    }
    Ok(())
}
