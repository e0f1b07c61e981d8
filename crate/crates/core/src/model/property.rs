use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::network::Network;
use super::text;
use crate::error::{Error, Result};

/// Slack allowed when re-checking a counterexample by forward evaluation.
pub const EPS_SAT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, v: f64, tol: f64) -> bool {
        v >= self.lo - tol && v <= self.hi + tol
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// `Σ coeffs[j]·y_j ≥ rhs`, one conjunct of the negated property.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputConstraint {
    pub coeffs: Vec<f64>,
    pub rhs: f64,
}

impl OutputConstraint {
    pub fn new(coeffs: Vec<f64>, rhs: f64) -> Self {
        Self { coeffs, rhs }
    }

    pub fn value(&self, y: &[f64]) -> f64 {
        self.coeffs.iter().zip(y).map(|(a, y)| a * y).sum()
    }

    pub fn holds(&self, y: &[f64], tol: f64) -> bool {
        self.value(y) >= self.rhs - tol
    }

    /// The single output index when exactly one coefficient is nonzero.
    pub fn single_output(&self) -> Option<(usize, f64)> {
        let mut nz = self.coeffs.iter().enumerate().filter(|(_, a)| **a != 0.0);
        match (nz.next(), nz.next()) {
            (Some((j, a)), None) => Some((j, *a)),
            _ => None,
        }
    }
}

/// An input box together with the negation of the output property, as a
/// conjunction of linear constraints. An empty conjunction stands for a
/// property with nothing to violate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyProperty {
    pub input_box: Vec<Interval>,
    pub negated: Vec<OutputConstraint>,
}

impl SafetyProperty {
    pub fn new(input_box: Vec<Interval>, negated: Vec<OutputConstraint>) -> Result<Self> {
        for (i, iv) in input_box.iter().enumerate() {
            if !(iv.lo.is_finite() && iv.hi.is_finite()) || iv.lo > iv.hi {
                return Err(Error::InvalidProperty(format!(
                    "input {} has invalid range [{}, {}]",
                    i + 1,
                    iv.lo,
                    iv.hi
                )));
            }
        }
        if negated.iter().any(|c| !c.rhs.is_finite() || c.coeffs.iter().any(|a| !a.is_finite())) {
            return Err(Error::InvalidProperty("non-finite output constraint".into()));
        }
        Ok(Self { input_box, negated })
    }

    pub fn is_vacuous(&self) -> bool {
        self.negated.is_empty()
    }

    pub fn check_against(&self, net: &Network) -> Result<()> {
        if self.input_box.len() != net.input_dim() {
            return Err(Error::Dimension(format!(
                "property box has {} inputs, network has {}",
                self.input_box.len(),
                net.input_dim()
            )));
        }
        if let Some(c) = self.negated.iter().find(|c| c.coeffs.len() != net.output_dim()) {
            return Err(Error::Dimension(format!(
                "output constraint has {} coefficients, network has {} outputs",
                c.coeffs.len(),
                net.output_dim()
            )));
        }
        Ok(())
    }

    pub fn with_box(&self, input_box: Vec<Interval>) -> Self {
        Self {
            input_box,
            negated: self.negated.clone(),
        }
    }

    /// Hex SHA-256 of the canonical text form.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(text::format_property(self).as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Verdict {
    Unsat,
    Sat(Vec<f64>),
}

impl Verdict {
    pub fn is_sat(&self) -> bool {
        matches!(self, Verdict::Sat(_))
    }

    pub fn label(&self) -> &'static str {
        match self {
            Verdict::Unsat => "unsat",
            Verdict::Sat(_) => "sat",
        }
    }

    pub fn witness(&self) -> Option<&[f64]> {
        match self {
            Verdict::Sat(x) => Some(x),
            Verdict::Unsat => None,
        }
    }
}

/// Forward-evaluates `x` and checks it is a genuine counterexample.
pub fn validate_witness(net: &Network, prop: &SafetyProperty, x: &[f64]) -> bool {
    if x.len() != prop.input_box.len()
        || !x.iter().zip(&prop.input_box).all(|(v, iv)| iv.contains(*v, EPS_SAT))
    {
        return false;
    }
    let Ok(y) = net.evaluate(x) else {
        return false;
    };
    !prop.negated.is_empty() && prop.negated.iter().all(|c| c.holds(&y, EPS_SAT))
}

/// One query per competing label of an L∞ robustness ball around `x0`.
/// The property holds iff every query is UNSAT. `domain` clips the ball.
pub fn make_robustness_queries(
    net: &Network,
    x0: &[f64],
    radius: f64,
    domain: Option<&[Interval]>,
) -> Result<Vec<SafetyProperty>> {
    if radius.is_nan() || radius <= 0.0 {
        return Err(Error::InvalidProperty(format!("radius must be positive, got {radius}")));
    }
    let y0 = net.evaluate(x0)?;
    let best = y0.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let winners: Vec<usize> = (0..y0.len()).filter(|&i| y0[i] == best).collect();
    if winners.len() != 1 {
        return Err(Error::ArgmaxTie);
    }
    let label = winners[0];
    let mut input_box: Vec<Interval> =
        x0.iter().map(|&v| Interval::new(v - radius, v + radius)).collect();
    if let Some(domain) = domain {
        if domain.len() != x0.len() {
            return Err(Error::Dimension("clipping domain arity differs from x0".into()));
        }
        for (iv, d) in input_box.iter_mut().zip(domain) {
            iv.lo = iv.lo.max(d.lo);
            iv.hi = iv.hi.min(d.hi);
        }
    }
    (0..y0.len())
        .filter(|&j| j != label)
        .map(|j| {
            let mut coeffs = vec![0.0; y0.len()];
            coeffs[j] = 1.0;
            coeffs[label] = -1.0;
            SafetyProperty::new(input_box.clone(), vec![OutputConstraint::new(coeffs, 0.0)])
        })
        .collect()
}
