//! Local robustness of a small classifier as a set of threshold queries.

use incremark::model::{make_robustness_queries, Activation, Layer, Network};
use incremark::reluplex::{solve, SearchParams};

fn main() -> incremark::Result<()> {
    let net = Network::new(vec![
        Layer::new(vec![vec![1.0, -0.5], vec![-0.3, 0.9], vec![0.6, 0.6]], vec![0.0, 0.1, -0.2], Activation::Relu),
        Layer::new(vec![vec![1.0, -1.0, 0.5], vec![-0.7, 1.2, 0.3]], vec![0.0, 0.0], Activation::None),
    ])?;
    let x0 = [0.8, 0.1];
    for radius in [0.05, 0.2, 0.6] {
        let queries = make_robustness_queries(&net, &x0, radius, None)?;
        let mut robust = true;
        for q in &queries {
            let (v, _) = solve(&net, q, &SearchParams::default())?;
            if let Some(x) = v.witness() {
                println!("radius {radius}: label flips at {x:?}");
                robust = false;
            }
        }
        if robust {
            println!("radius {radius}: robust");
        }
    }
    Ok(())
}
