//! Line-oriented text form of a factor graph.
//!
//! ```text
//! NODE idx x y theta
//! PRIOR idx x y theta sigma
//! BETWEEN i j dfwd dlat dtheta sigma
//! NONHOL i j sigma
//! LOOP i j dfwd dlat dtheta sigma
//! ```
//!
//! `PRIOR`, `BETWEEN` and `LOOP` take one sigma for all channels, or
//! `sigma sigma_theta`, or one per channel.
//!
//! The first `PRIOR` on node 0 is read back as the origin prior. Without
//! `NODE` lines the initial estimate is chained from the origin prior
//! through the `BETWEEN` factors.

use std::fmt::Write as _;
use std::io::BufRead;

use super::{Factor, FactorGraph, FactorKind};
use crate::error::{Error, Result};
use crate::geometry::{BodyIncrement, Pose2};

pub fn dump_graph(g: &FactorGraph<f64>, with_nodes: bool) -> String {
    let mut out = String::new();
    if with_nodes {
        for (k, p) in g.initial.iter().enumerate() {
            let _ = writeln!(out, "NODE {k} {:.17e} {:.17e} {:.17e}", p.x(), p.y(), p.theta());
        }
    }
    for f in &g.factors {
        let _ = match *f {
            Factor::Prior {
                node,
                measurement: m,
                sigma,
                ..
            } => {
                let _ = write!(out, "PRIOR {node} {:.17e} {:.17e} {:.17e}", m.x(), m.y(), m.theta());
                write_sigmas(&mut out, &sigma);
                writeln!(out)
            }
            Factor::Between {
                kind,
                from,
                to,
                measurement: m,
                sigma,
            } => {
                let tag = if kind == FactorKind::LoopClosure { "LOOP" } else { "BETWEEN" };
                let _ = write!(
                    out,
                    "{tag} {from} {to} {:.17e} {:.17e} {:.17e}",
                    m.d_fwd(),
                    m.d_lat(),
                    m.d_theta(),
                );
                write_sigmas(&mut out, &sigma);
                writeln!(out)
            }
            Factor::NonHolonomic { from, to, sigma } => writeln!(out, "NONHOL {from} {to} {sigma:.17e}"),
        };
    }
    out
}

fn num<T: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T> {
    tok.ok_or_else(|| Error::Parse {
        line,
        msg: format!("missing {what}"),
    })?
    .parse()
    .map_err(|_| Error::Parse {
        line,
        msg: format!("bad {what}"),
    })
}

fn write_sigmas(out: &mut String, sigma: &[f64; 3]) {
    let _ = write!(out, " {:.17e}", sigma[0]);
    if sigma[1] != sigma[0] {
        let _ = write!(out, " {:.17e}", sigma[1]);
    }
    if sigma[2] != sigma[0] || sigma[1] != sigma[0] {
        let _ = write!(out, " {:.17e}", sigma[2]);
    }
}

fn read_sigmas<'a>(it: &mut impl Iterator<Item = &'a str>, line: usize) -> Result<[f64; 3]> {
    let s0: f64 = num(it.next(), line, "sigma")?;
    let extra: Vec<f64> = it.map(|t| num(Some(t), line, "sigma")).collect::<Result<_>>()?;
    match extra.as_slice() {
        [] => Ok([s0; 3]),
        [st] => Ok([s0, s0, *st]),
        [sl, st] => Ok([s0, *sl, *st]),
        _ => Err(Error::Parse {
            line,
            msg: "too many fields".into(),
        }),
    }
}

enum Parsed {
    Node(usize, Pose2<f64>),
    Factor(Factor<f64>),
}

fn parse_line(text: &str, line: usize, seen_origin: &mut bool) -> Result<Option<Parsed>> {
    let text = text.trim();
    if text.is_empty() || text.starts_with('#') {
        return Ok(None);
    }
    let mut it = text.split_whitespace();
    let tag = it.next().unwrap_or_default();
    let parsed = match tag {
        "NODE" => {
            let k = num(it.next(), line, "index")?;
            let p = Pose2::try_new(num(it.next(), line, "x")?, num(it.next(), line, "y")?, num(it.next(), line, "theta")?)?;
            Parsed::Node(k, p)
        }
        "PRIOR" => {
            let node: usize = num(it.next(), line, "index")?;
            let m = Pose2::try_new(num(it.next(), line, "x")?, num(it.next(), line, "y")?, num(it.next(), line, "theta")?)?;
            let sigma = read_sigmas(&mut it, line)?;
            let kind = if node == 0 && !*seen_origin {
                *seen_origin = true;
                FactorKind::OriginPrior
            } else {
                FactorKind::FixPrior
            };
            Parsed::Factor(Factor::Prior {
                kind,
                node,
                measurement: m,
                sigma,
            })
        }
        "BETWEEN" | "LOOP" => {
            let from = num(it.next(), line, "from")?;
            let to = num(it.next(), line, "to")?;
            let m = BodyIncrement::new(
                num(it.next(), line, "dfwd")?,
                num(it.next(), line, "dlat")?,
                num(it.next(), line, "dtheta")?,
            );
            let sigma = read_sigmas(&mut it, line)?;
            let kind = if tag == "LOOP" {
                FactorKind::LoopClosure
            } else {
                FactorKind::Odometry
            };
            Parsed::Factor(Factor::Between {
                kind,
                from,
                to,
                measurement: m,
                sigma,
            })
        }
        "NONHOL" => Parsed::Factor(Factor::NonHolonomic {
            from: num(it.next(), line, "from")?,
            to: num(it.next(), line, "to")?,
            sigma: num(it.next(), line, "sigma")?,
        }),
        other => {
            return Err(Error::Parse {
                line,
                msg: format!("unknown record {other:?}"),
            })
        }
    };
    if it.next().is_some() {
        return Err(Error::Parse {
            line,
            msg: "trailing fields".into(),
        });
    }
    Ok(Some(parsed))
}

pub fn load_graph<R: BufRead>(reader: R) -> Result<FactorGraph<f64>> {
    let mut nodes: Vec<(usize, Pose2<f64>)> = Vec::new();
    let mut factors = Vec::new();
    let mut seen_origin = false;
    for (k, line) in reader.lines().enumerate() {
        match parse_line(&line?, k + 1, &mut seen_origin)? {
            Some(Parsed::Node(i, p)) => nodes.push((i, p)),
            Some(Parsed::Factor(f)) => factors.push(f),
            None => {}
        }
    }
    let n = factors
        .iter()
        .map(|f| {
            let (a, b) = f.nodes();
            a.max(b.unwrap_or(0)) + 1
        })
        .chain(nodes.iter().map(|(i, _)| i + 1))
        .max()
        .unwrap_or(0);
    let initial = if nodes.is_empty() {
        chain_initial(n, &factors)
    } else {
        let mut slots = vec![None; n];
        for (i, p) in nodes {
            slots[i] = Some(p);
        }
        slots
            .into_iter()
            .enumerate()
            .map(|(i, p)| p.ok_or_else(|| Error::invalid(format!("NODE {i} missing"))))
            .collect::<Result<_>>()?
    };
    let mut g = FactorGraph::new(initial);
    for f in factors {
        g.add(f)?;
    }
    Ok(g)
}

fn chain_initial(n: usize, factors: &[Factor<f64>]) -> Vec<Pose2<f64>> {
    let mut init: Vec<Option<Pose2<f64>>> = vec![None; n];
    for f in factors {
        if let Factor::Prior {
            node, measurement, ..
        } = *f
        {
            init[node].get_or_insert(measurement);
        }
    }
    if n > 0 && init[0].is_none() {
        init[0] = Some(Pose2::identity());
    }
    for k in 1..n {
        if let Some(prev) = init[k - 1] {
            let step = factors.iter().find_map(|f| match *f {
                Factor::Between {
                    kind: FactorKind::Odometry,
                    from,
                    to,
                    measurement,
                    ..
                } if from == k - 1 && to == k => Some(measurement),
                _ => None,
            });
            if let Some(m) = step {
                init[k] = Some(prev.compose(&m));
            }
        }
        if init[k].is_none() {
            init[k] = init[k - 1];
        }
    }
    init.into_iter().map(|p| p.unwrap_or_else(Pose2::identity)).collect()
}
