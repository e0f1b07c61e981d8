//! Weight perturbation and the exhaustive small-instance oracle, plus the
//! scratch-versus-incremental comparison harness.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use log::{info, warn};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::incremental::{verify_incremental, Mode};
use crate::lp::{Cmp, Constraint, Feasibility, LinearProgram};
use crate::model::{
    validate_witness, Activation, Interval, Layer, Network, OutputConstraint, SafetyProperty, Verdict,
};
use crate::proof_tree::ProofTree;
use crate::reluplex::{solve, SearchParams};

/// The oracle refuses networks with more ReLUs than this.
pub const ORACLE_MAX_RELUS: usize = 16;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    #[default]
    Weights,
    /// Weights and biases.
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Perturbation {
    pub gamma: f64,
    pub fraction: f64,
    pub seed: u64,
    pub scope: Scope,
}

/// Redraws `⌈fraction · n⌉` of the `n` perturbable entries, chosen
/// without replacement. An entry `w` is redrawn uniformly from
/// `[(1−γ)w, (1+γ)w]`; every other entry is left bit-for-bit unchanged.
pub fn perturb(net: &Network, p: &Perturbation) -> Network {
    let mut out = net.clone();
    let mut slots: Vec<(usize, usize, Option<usize>)> = Vec::new();
    for (l, layer) in net.layers().iter().enumerate() {
        for (i, row) in layer.weights.iter().enumerate() {
            slots.extend((0..row.len()).map(|j| (l, i, Some(j))));
        }
        if p.scope == Scope::All {
            slots.extend((0..layer.bias.len()).map(|i| (l, i, None)));
        }
    }
    if p.gamma == 0.0 || slots.is_empty() {
        return out;
    }
    let count = ((p.fraction.clamp(0.0, 1.0) * slots.len() as f64).ceil() as usize).min(slots.len());
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut chosen = sample(&mut rng, slots.len(), count).into_vec();
    chosen.sort_unstable();
    let layers = out.layers_mut();
    for k in chosen {
        let (l, i, j) = slots[k];
        let entry = match j {
            Some(j) => &mut layers[l].weights[i][j],
            None => &mut layers[l].bias[i],
        };
        let w = *entry;
        let (a, b) = ((1.0 - p.gamma) * w, (1.0 + p.gamma) * w);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        *entry = lo + (hi - lo) * rng.gen::<f64>();
    }
    out
}

/// Decides the query exactly by walking all activation patterns.
///
/// Patterns are built neuron by neuron; a partial pattern whose sign
/// constraints are already LP-infeasible is not extended. Each complete
/// pattern turns the network into an affine map, so the final LP is exact.
pub fn oracle(net: &Network, prop: &SafetyProperty) -> Result<Verdict> {
    prop.check_against(net)?;
    let k = net.relu_count();
    if k > ORACLE_MAX_RELUS {
        return Err(Error::TooManyRelus { count: k, max: ORACLE_MAX_RELUS });
    }
    if prop.is_vacuous() {
        return Ok(Verdict::Unsat);
    }
    let m = net.input_dim();
    let inputs: Vec<Affine> = (0..m)
        .map(|i| {
            let mut a = vec![0.0; m + 1];
            a[i] = 1.0;
            a
        })
        .collect();
    let walker = Walker { net, prop, m };
    let mut cons = Vec::new();
    Ok(match walker.layer(0, &inputs, &mut cons)? {
        Some(x) => Verdict::Sat(x),
        None => Verdict::Unsat,
    })
}

/// Coefficients over the inputs followed by a constant.
type Affine = Vec<f64>;

struct Walker<'a> {
    net: &'a Network,
    prop: &'a SafetyProperty,
    m: usize,
}

impl Walker<'_> {
    fn apply(&self, layer: &Layer, prev: &[Affine]) -> Vec<Affine> {
        layer
            .weights
            .iter()
            .zip(&layer.bias)
            .map(|(row, b)| {
                let mut acc = vec![0.0; self.m + 1];
                for (w, e) in row.iter().zip(prev) {
                    for (a, c) in acc.iter_mut().zip(e) {
                        *a += w * c;
                    }
                }
                acc[self.m] += b;
                acc
            })
            .collect()
    }

    fn constraint(&self, e: &Affine, cmp: Cmp, rhs: f64) -> Constraint {
        let terms = (0..self.m).filter(|i| e[*i] != 0.0).map(|i| (i, e[i])).collect();
        Constraint { terms, cmp, rhs: rhs - e[self.m] }
    }

    fn program(&self, cons: &[Constraint]) -> LinearProgram {
        LinearProgram {
            lower: self.prop.input_box.iter().map(|iv| iv.lo).collect(),
            upper: self.prop.input_box.iter().map(|iv| iv.hi).collect(),
            constraints: cons.to_vec(),
        }
    }

    fn layer(&self, l: usize, prev: &[Affine], cons: &mut Vec<Constraint>) -> Result<Option<Vec<f64>>> {
        let layers = self.net.layers();
        if l == layers.len() {
            return self.finish(prev, cons);
        }
        let pre = self.apply(&layers[l], prev);
        match layers[l].activation {
            Activation::None => self.layer(l + 1, &pre, cons),
            Activation::Relu => self.neuron(l, &pre, 0, &mut Vec::new(), cons),
        }
    }

    fn neuron(
        &self,
        l: usize,
        pre: &[Affine],
        j: usize,
        post: &mut Vec<Affine>,
        cons: &mut Vec<Constraint>,
    ) -> Result<Option<Vec<f64>>> {
        if j == pre.len() {
            return self.layer(l + 1, post, cons);
        }
        for active in [true, false] {
            let cmp = if active { Cmp::Ge } else { Cmp::Le };
            cons.push(self.constraint(&pre[j], cmp, 0.0));
            if self.program(cons).feasibility()? != Feasibility::Infeasible {
                post.push(if active { pre[j].clone() } else { vec![0.0; self.m + 1] });
                let found = self.neuron(l, pre, j + 1, post, cons)?;
                post.pop();
                if found.is_some() {
                    cons.pop();
                    return Ok(found);
                }
            }
            cons.pop();
        }
        Ok(None)
    }

    fn finish(&self, outputs: &[Affine], cons: &mut Vec<Constraint>) -> Result<Option<Vec<f64>>> {
        let base = cons.len();
        for c in &self.prop.negated {
            let mut e = vec![0.0; self.m + 1];
            for (a, y) in c.coeffs.iter().zip(outputs) {
                for (acc, v) in e.iter_mut().zip(y) {
                    *acc += a * v;
                }
            }
            cons.push(self.constraint(&e, Cmp::Ge, c.rhs));
        }
        let verdict = self.program(cons).feasibility()?;
        cons.truncate(base);
        match verdict {
            Feasibility::Feasible(x) if validate_witness(self.net, self.prop, &x) => Ok(Some(x)),
            Feasibility::Feasible(x) => {
                warn!("oracle LP point {x:?} fails the forward check");
                Ok(None)
            }
            Feasibility::Unknown => {
                warn!("oracle LP undecided for one activation pattern");
                Ok(None)
            }
            Feasibility::Infeasible => Ok(None),
        }
    }
}

/// Fully connected network with weights in `[-1, 1)` and biases in
/// `[-0.5, 0.5)`; ReLU on every layer but the last.
pub fn random_network(rng: &mut impl Rng, dims: &[usize]) -> Network {
    let layers = dims
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let weights = (0..w[1]).map(|_| (0..w[0]).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            let bias = (0..w[1]).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let act = if i + 2 == dims.len() { Activation::None } else { Activation::Relu };
            Layer::new(weights, bias, act)
        })
        .collect();
    Network::new(layers).expect("dims describe a valid network")
}

/// A random network with a random sub-box of `[-1, 1]^m` and a threshold
/// on the first output placed near the sampled maximum, so that both
/// verdicts are common.
pub fn random_instance(seed: u64, dims: &[usize]) -> (Network, SafetyProperty) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = random_network(&mut rng, dims);
    let input_box: Vec<Interval> = (0..dims[0])
        .map(|_| {
            let a: f64 = rng.gen_range(-1.0..1.0);
            let b: f64 = rng.gen_range(-1.0..1.0);
            let (lo, hi) = (a.min(b), a.max(b));
            if hi - lo < 0.1 {
                Interval::new((lo - 0.05).max(-1.0), (hi + 0.05).min(1.0))
            } else {
                Interval::new(lo, hi)
            }
        })
        .collect();
    let (mut best, mut worst) = (f64::NEG_INFINITY, f64::INFINITY);
    for _ in 0..256 {
        let x: Vec<f64> = input_box.iter().map(|iv| iv.lo + iv.width() * rng.gen::<f64>()).collect();
        let y = net.evaluate(&x).expect("arity matches")[0];
        best = best.max(y);
        worst = worst.min(y);
    }
    let t = best + (rng.gen::<f64>() - 0.5) * 0.4 * (best - worst).max(1e-3);
    let mut coeffs = vec![0.0; *dims.last().unwrap()];
    coeffs[0] = 1.0;
    let prop = SafetyProperty::new(input_box, vec![OutputConstraint::new(coeffs, t)]).expect("finite box");
    (net, prop)
}

/// One row of the comparison CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub gamma: f64,
    pub fraction: f64,
    pub seed: u64,
    pub verdict_scratch: &'static str,
    pub ms_scratch: f64,
    pub verdict_inc: &'static str,
    pub ms_inc: f64,
    /// Percentage, or `NA` when no UNSAT leaf was visited.
    pub replay_pct: String,
    pub agree: bool,
    #[serde(skip)]
    pub verdict_oracle: Option<&'static str>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub gammas: Vec<f64>,
    pub fractions: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub scope: Scope,
    pub mode: Mode,
    pub params: SearchParams,
    /// Worker threads; runs are independent.
    pub jobs: usize,
    /// Cross-check each run against [`oracle`] when the network is small enough.
    pub use_oracle: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            gammas: vec![0.001, 0.01, 0.03, 0.05],
            fractions: vec![1.0],
            trials: 1,
            seed: 0,
            scope: Scope::Weights,
            mode: Mode::Lazy,
            params: SearchParams::default(),
            jobs: 1,
            use_oracle: true,
        }
    }
}

impl BenchConfig {
    /// Every perturbation of the sweep, γ-major. Seeds count up from `seed`.
    pub fn perturbations(&self) -> Vec<Perturbation> {
        let mut out = Vec::new();
        for &gamma in &self.gammas {
            for &fraction in &self.fractions {
                for _ in 0..self.trials {
                    let seed = self.seed.wrapping_add(out.len() as u64);
                    out.push(Perturbation { gamma, fraction, seed, scope: self.scope });
                }
            }
        }
        out
    }
}

/// Solves the base query once, then compares scratch and incremental
/// solving on every perturbed network of the sweep.
pub fn compare(net: &Network, prop: &SafetyProperty, cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    let (_, tree) = solve(net, prop, &cfg.params)?;
    compare_with_tree(net, prop, &tree, &cfg.perturbations(), cfg)
}

pub fn compare_with_tree(
    net: &Network,
    prop: &SafetyProperty,
    tree: &ProofTree,
    perturbations: &[Perturbation],
    cfg: &BenchConfig,
) -> Result<Vec<BenchRow>> {
    let with_oracle = cfg.use_oracle && net.relu_count() <= ORACLE_MAX_RELUS;
    let run = |p: &Perturbation| run_one(net, prop, tree, p, cfg, with_oracle);
    let jobs = cfg.jobs.max(1).min(perturbations.len().max(1));
    if jobs == 1 {
        return perturbations.iter().map(run).collect();
    }
    let chunk = perturbations.len().div_ceil(jobs);
    std::thread::scope(|s| {
        let handles: Vec<_> = perturbations
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(run).collect::<Result<Vec<_>>>()))
            .collect();
        let mut rows = Vec::with_capacity(perturbations.len());
        for h in handles {
            rows.extend(h.join().map_err(|_| Error::Internal("bench worker panicked".into()))??);
        }
        Ok(rows)
    })
}

fn round_ms(since: Instant) -> f64 {
    (since.elapsed().as_secs_f64() * 1e6).round() / 1e3
}

fn run_one(
    net: &Network,
    prop: &SafetyProperty,
    tree: &ProofTree,
    p: &Perturbation,
    cfg: &BenchConfig,
    with_oracle: bool,
) -> Result<BenchRow> {
    let changed = perturb(net, p);
    let t = Instant::now();
    let (scratch, _) = solve(&changed, prop, &cfg.params)?;
    let ms_scratch = round_ms(t);
    let t = Instant::now();
    let inc = verify_incremental(&changed, prop, tree, cfg.mode, &cfg.params)?;
    let ms_inc = round_ms(t);
    let verdict_oracle = if with_oracle { Some(oracle(&changed, prop)?.label()) } else { None };
    let agree = scratch.is_sat() == inc.verdict.is_sat()
        && verdict_oracle.is_none_or(|o| o == scratch.label());
    if !agree {
        warn!("disagreement at gamma={} fraction={} seed={}", p.gamma, p.fraction, p.seed);
    }
    Ok(BenchRow {
        gamma: p.gamma,
        fraction: p.fraction,
        seed: p.seed,
        verdict_scratch: scratch.label(),
        ms_scratch,
        verdict_inc: inc.verdict.label(),
        ms_inc,
        replay_pct: inc.report.replay_pct.map_or_else(|| "NA".to_string(), |v| format!("{v:.1}")),
        agree,
        verdict_oracle,
    })
}

pub fn write_csv(rows: &[BenchRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Internal(format!("csv: {e}")))?;
    }
    w.flush()?;
    Ok(())
}

/// Per γ: number of runs, mean replay percentage over runs that visited
/// an UNSAT leaf, and mean speed ratio scratch/incremental.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GammaSummary {
    pub gamma: f64,
    pub runs: usize,
    pub mean_replay_pct: Option<f64>,
    pub speedup: f64,
}

pub fn summarize(rows: &[BenchRow]) -> Vec<GammaSummary> {
    let mut groups: BTreeMap<u64, Vec<&BenchRow>> = BTreeMap::new();
    for r in rows {
        groups.entry(r.gamma.to_bits()).or_default().push(r);
    }
    let mut out: Vec<GammaSummary> = groups
        .into_values()
        .map(|g| {
            let pcts: Vec<f64> = g.iter().filter_map(|r| r.replay_pct.parse().ok()).collect();
            let mean_replay_pct = (!pcts.is_empty()).then(|| pcts.iter().sum::<f64>() / pcts.len() as f64);
            let scratch: f64 = g.iter().map(|r| r.ms_scratch).sum();
            let inc: f64 = g.iter().map(|r| r.ms_inc).sum();
            GammaSummary { gamma: g[0].gamma, runs: g.len(), mean_replay_pct, speedup: scratch / inc.max(1e-9) }
        })
        .collect();
    out.sort_by(|a, b| a.gamma.total_cmp(&b.gamma));
    for s in &out {
        info!("gamma {}: {} runs, replay {:?}", s.gamma, s.runs, s.mean_replay_pct);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::samples::{base, threshold_property, threshold_property_at};

    fn weights(net: &Network) -> Vec<f64> {
        net.layers().iter().flat_map(|l| l.weights.iter().flatten().copied().chain(l.bias.iter().copied())).collect()
    }

    #[test]
    fn zero_gamma_is_identity() {
        let p = Perturbation { gamma: 0.0, fraction: 1.0, seed: 7, scope: Scope::All };
        assert_eq!(perturb(&base(), &p), base());
    }

    #[test]
    fn half_of_ten_weights_change() {
        // 4 + 4 + 2 = 10 weights.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = random_network(&mut rng, &[2, 2, 2, 1]);
        for seed in 0..20 {
            let p = Perturbation { gamma: 0.05, fraction: 0.5, seed, scope: Scope::Weights };
            let a = weights(&net);
            let b = weights(&perturb(&net, &p));
            let diff = a.iter().zip(&b).filter(|(x, y)| x.to_bits() != y.to_bits()).count();
            assert_eq!(diff, 5);
        }
    }

    #[test]
    fn sampled_values_stay_in_interval() {
        let net = Network::new(vec![Layer::new(vec![vec![0.2, -0.2]], vec![0.0], Activation::None)]).unwrap();
        for seed in 0..200 {
            let p = Perturbation { gamma: 0.05, fraction: 1.0, seed, scope: Scope::Weights };
            let changed = perturb(&net, &p);
            let w = &changed.layers()[0].weights[0];
            assert!((0.19..=0.21).contains(&w[0]));
            assert!((-0.21..=-0.19).contains(&w[1]));
        }
    }

    #[test]
    fn perturbation_is_deterministic() {
        let p = Perturbation { gamma: 0.03, fraction: 0.3, seed: 42, scope: Scope::All };
        assert_eq!(perturb(&base(), &p), perturb(&base(), &p));
    }

    #[test]
    fn oracle_on_base() {
        let v = oracle(&base(), &threshold_property()).unwrap();
        assert!(validate_witness(&base(), &threshold_property(), v.witness().unwrap()));
        assert_eq!(oracle(&base(), &threshold_property_at(2.0)).unwrap(), Verdict::Unsat);
    }

    #[test]
    fn oracle_on_linear_net() {
        let net = Network::new(vec![Layer::new(vec![vec![1.0, 1.0]], vec![0.0], Activation::None)]).unwrap();
        let prop = |t| {
            SafetyProperty::new(vec![Interval::new(0.0, 1.0); 2], vec![OutputConstraint::new(vec![1.0], t)]).unwrap()
        };
        assert!(oracle(&net, &prop(1.5)).unwrap().is_sat());
        assert_eq!(oracle(&net, &prop(2.5)).unwrap(), Verdict::Unsat);
    }

    #[test]
    fn oracle_refuses_large_nets() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = random_network(&mut rng, &[2, 17, 1]);
        let prop = SafetyProperty::new(vec![Interval::new(0.0, 1.0); 2], vec![OutputConstraint::new(vec![1.0], 0.0)])
            .unwrap();
        assert!(matches!(oracle(&net, &prop), Err(Error::TooManyRelus { count: 17, .. })));
    }

    #[test]
    fn csv_header_and_determinism() {
        let cfg = BenchConfig { trials: 2, fractions: vec![0.5], ..BenchConfig::default() };
        let rows = compare(&base(), &threshold_property_at(1.0), &cfg).unwrap();
        assert_eq!(rows.len(), 8);
        assert!(rows.iter().all(|r| r.agree));
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "gamma,fraction,seed,verdict_scratch,ms_scratch,verdict_inc,ms_inc,replay_pct,agree"
        );
        let again = compare(&base(), &threshold_property_at(1.0), &BenchConfig { jobs: 3, ..cfg }).unwrap();
        let strip = |rs: &[BenchRow]| -> Vec<_> {
            rs.iter().map(|r| (r.seed, r.verdict_scratch, r.verdict_inc, r.replay_pct.clone())).collect()
        };
        assert_eq!(strip(&rows), strip(&again));
        assert_eq!(summarize(&rows).len(), 4);
    }

    #[test]
    fn oracle_agrees_with_search() {
        for seed in 0..200 {
            let dims: &[usize] = if seed % 2 == 0 { &[2, 5, 5, 1] } else { &[3, 8, 1] };
            let (net, prop) = random_instance(1000 + seed, dims);
            let (v, _) = solve(&net, &prop, &SearchParams::default()).unwrap();
            assert_eq!(oracle(&net, &prop).unwrap().is_sat(), v.is_sat(), "seed {seed}");
        }
    }

    #[test]
    fn random_instances_have_both_verdicts() {
        let mut sat = 0;
        for seed in 0..40 {
            let (net, prop) = random_instance(seed, &[2, 5, 5, 1]);
            sat += usize::from(oracle(&net, &prop).unwrap().is_sat());
        }
        assert!((5..=35).contains(&sat), "{sat} of 40 SAT");
    }
}
