//! The `relunet` network format and the `prop` property format.
//!
//! Both are UTF-8, whitespace separated, with `#` starting a comment that runs
//! to the end of the line. Numbers are written in Rust's shortest round-trip
//! notation, so `format(parse(s)) == s` for canonically formatted files.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use super::network::{Activation, Layer, Network};
use super::property::{Interval, OutputConstraint, SafetyProperty};
use crate::error::{Error, Result};

struct Lines<'a> {
    inner: Box<dyn Iterator<Item = (usize, Vec<&'a str>)> + 'a>,
    last_line: usize,
}

impl<'a> Lines<'a> {
    fn new(src: &'a str) -> Self {
        let inner = src.lines().enumerate().filter_map(|(i, line)| {
            let body = line.split('#').next().unwrap_or("");
            let toks: Vec<&str> = body.split_whitespace().collect();
            (!toks.is_empty()).then_some((i + 1, toks))
        });
        Self {
            inner: Box::new(inner),
            last_line: 0,
        }
    }

    fn next(&mut self, what: &str) -> Result<(usize, Vec<&'a str>)> {
        match self.inner.next() {
            Some((n, toks)) => {
                self.last_line = n;
                Ok((n, toks))
            }
            None => Err(Error::Parse {
                line: self.last_line + 1,
                msg: format!("unexpected end of input, expected {what}"),
            }),
        }
    }

    fn peek_done(&mut self) -> Option<(usize, Vec<&'a str>)> {
        let item = self.inner.next();
        if let Some((n, _)) = &item {
            self.last_line = *n;
        }
        item
    }
}

fn parse_num<T: FromStr>(tok: &str, line: usize) -> Result<T> {
    tok.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("invalid number `{tok}`"),
    })
}

fn parse_row(toks: &[&str], line: usize, expected: usize, what: &str) -> Result<Vec<f64>> {
    if toks.len() != expected {
        return Err(Error::Parse {
            line,
            msg: format!("{what}: expected {expected} values, found {}", toks.len()),
        });
    }
    let row: Vec<f64> = toks.iter().map(|t| parse_num(t, line)).collect::<Result<_>>()?;
    if let Some(v) = row.iter().find(|v| !v.is_finite()) {
        return Err(Error::Parse {
            line,
            msg: format!("non-finite value {v}"),
        });
    }
    Ok(row)
}

fn expect_keyword(toks: &[&str], line: usize, kw: &str) -> Result<()> {
    if toks.first() != Some(&kw) {
        return Err(Error::Parse {
            line,
            msg: format!("expected `{kw}`, found `{}`", toks.first().unwrap_or(&"")),
        });
    }
    Ok(())
}

pub fn parse_network(src: &str) -> Result<Network> {
    let mut lines = Lines::new(src);
    let (n, header) = lines.next("header `relunet 1`")?;
    if header != ["relunet", "1"] {
        return Err(Error::Parse {
            line: n,
            msg: "expected header `relunet 1`".into(),
        });
    }
    let (n, toks) = lines.next("`dims` line")?;
    expect_keyword(&toks, n, "dims")?;
    let dims: Vec<usize> = toks[1..].iter().map(|t| parse_num(t, n)).collect::<Result<_>>()?;
    if dims.len() < 2 || dims.contains(&0) {
        return Err(Error::Parse {
            line: n,
            msg: "dims needs at least two positive widths".into(),
        });
    }
    let mut layers = Vec::with_capacity(dims.len() - 1);
    for i in 1..dims.len() {
        let (n, toks) = lines.next("`layer` line")?;
        expect_keyword(&toks, n, "layer")?;
        if toks.len() != 3 || parse_num::<usize>(toks[1], n)? != i {
            return Err(Error::Parse {
                line: n,
                msg: format!("expected `layer {i} relu|none`"),
            });
        }
        let activation = match toks[2] {
            "relu" => Activation::Relu,
            "none" => Activation::None,
            other => {
                return Err(Error::Parse {
                    line: n,
                    msg: format!("unknown activation `{other}`"),
                })
            }
        };
        let mut weights = Vec::with_capacity(dims[i]);
        for _ in 0..dims[i] {
            let (n, toks) = lines.next("weight row")?;
            weights.push(parse_row(&toks, n, dims[i - 1], "weight row")?);
        }
        let (n, toks) = lines.next("bias row")?;
        let bias = parse_row(&toks, n, dims[i], "bias row")?;
        layers.push(Layer::new(weights, bias, activation));
    }
    if let Some((n, _)) = lines.peek_done() {
        return Err(Error::Parse {
            line: n,
            msg: "trailing content after last layer".into(),
        });
    }
    Network::new(layers)
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(" ")
}

pub fn format_network(net: &Network) -> String {
    let mut out = String::from("relunet 1\n");
    let dims: Vec<String> = net.dims().iter().map(usize::to_string).collect();
    writeln!(out, "dims {}", dims.join(" ")).unwrap();
    for (i, layer) in net.layers().iter().enumerate() {
        let act = match layer.activation {
            Activation::Relu => "relu",
            Activation::None => "none",
        };
        writeln!(out, "layer {} {act}", i + 1).unwrap();
        for row in &layer.weights {
            writeln!(out, "{}", join(row)).unwrap();
        }
        writeln!(out, "{}", join(&layer.bias)).unwrap();
    }
    out
}

pub fn parse_property(src: &str, inputs: usize) -> Result<SafetyProperty> {
    let mut lines = Lines::new(src);
    let (n, toks) = lines.next("`box`")?;
    if toks != ["box"] {
        return Err(Error::Parse {
            line: n,
            msg: "expected `box`".into(),
        });
    }
    let mut input_box = Vec::with_capacity(inputs);
    for _ in 0..inputs {
        let (n, toks) = lines.next("input range `lo hi`")?;
        let r = parse_row(&toks, n, 2, "input range")?;
        if r[0] > r[1] {
            return Err(Error::Parse {
                line: n,
                msg: format!("empty range [{}, {}]", r[0], r[1]),
            });
        }
        input_box.push(Interval::new(r[0], r[1]));
    }
    let mut negated = Vec::new();
    while let Some((n, toks)) = lines.peek_done() {
        expect_keyword(&toks, n, "ge")?;
        if toks.len() < 3 {
            return Err(Error::Parse {
                line: n,
                msg: "expected `ge c a1 ... an`".into(),
            });
        }
        let vals = parse_row(&toks[1..], n, toks.len() - 1, "constraint")?;
        negated.push(OutputConstraint::new(vals[1..].to_vec(), vals[0]));
    }
    if let Some(arity) = negated.first().map(|c| c.coeffs.len()) {
        if negated.iter().any(|c| c.coeffs.len() != arity) {
            return Err(Error::Parse {
                line: lines.last_line,
                msg: "constraints have differing output arity".into(),
            });
        }
    }
    SafetyProperty::new(input_box, negated)
}

pub fn format_property(prop: &SafetyProperty) -> String {
    let mut out = String::from("box\n");
    for iv in &prop.input_box {
        writeln!(out, "{} {}", iv.lo, iv.hi).unwrap();
    }
    for c in &prop.negated {
        writeln!(out, "ge {} {}", c.rhs, join(&c.coeffs)).unwrap();
    }
    out
}

pub fn load_network(path: impl AsRef<Path>) -> Result<Network> {
    parse_network(&std::fs::read_to_string(path)?)
}

pub fn save_network(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, format_network(net))?;
    Ok(())
}

/// Loads a property and checks its arity against `net`.
pub fn load_property(path: impl AsRef<Path>, net: &Network) -> Result<SafetyProperty> {
    let prop = parse_property(&std::fs::read_to_string(path)?, net.input_dim())?;
    prop.check_against(net)?;
    Ok(prop)
}

pub fn save_property(prop: &SafetyProperty, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, format_property(prop))?;
    Ok(())
}
