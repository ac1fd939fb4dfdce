//! Line-oriented text format for models.
//!
//! ```text
//! # comment
//! var T1
//! var F dim 3
//! prior T1 T2
//!   prec 1 -1 -1 1
//!   info 0 0
//!   scale 0
//! end
//! meas M1 owner 0 parents T1 B1 coeffs 1 1 offset 0 noise 0.25 obs 19.5
//! query 0 T1 B1
//! ```
//!
//! `prec` is row-major over the stacked dimensions of the variables as
//! listed on the `prior` line; the parser realigns entries to the canonical
//! sorted scope, so any listing order names the same factor. Floats are
//! printed with Rust's shortest round-trip formatting, so
//! `parse_model(print_model(m)) == m` exactly. The `obs` field is optional;
//! everything else in a `meas` line is required. Declaration order of
//! variables and measurements is the id order.

use nalgebra::{DMatrix, DVector};

use crate::gauss::{GaussianFactor, Scope, VarId};
use crate::NodeId;

use super::{ModelError, ProbModel};

pub fn print_model(model: &ProbModel) -> String {
    let mut out = String::new();
    for d in model.vars() {
        if d.var.dim() == 1 {
            out.push_str(&format!("var {}\n", d.name));
        } else {
            out.push_str(&format!("var {} dim {}\n", d.name, d.var.dim()));
        }
    }
    for p in model.priors() {
        out.push_str("prior");
        for v in p.scope().iter() {
            out.push_str(&format!(" {}", model.var_name(v)));
        }
        out.push('\n');
        out.push_str("  prec");
        for i in 0..p.dim() {
            for j in 0..p.dim() {
                out.push_str(&format!(" {}", p.precision()[(i, j)]));
            }
        }
        out.push('\n');
        out.push_str("  info");
        for i in 0..p.dim() {
            out.push_str(&format!(" {}", p.information()[i]));
        }
        out.push('\n');
        out.push_str(&format!("  scale {}\n", p.log_scale()));
        out.push_str("end\n");
    }
    for m in model.measurements() {
        out.push_str(&format!("meas {} owner {} parents", m.name, m.owner.0));
        for v in m.parents.iter() {
            out.push_str(&format!(" {}", model.var_name(v)));
        }
        out.push_str(" coeffs");
        for c in &m.coeffs {
            out.push_str(&format!(" {c}"));
        }
        out.push_str(&format!(" offset {} noise {}", m.offset, m.noise_var));
        if let Some(o) = m.observed {
            out.push_str(&format!(" obs {o}"));
        }
        out.push('\n');
    }
    for (node, q) in model.queries() {
        out.push_str(&format!("query {}", node.0));
        for v in q.iter() {
            out.push_str(&format!(" {}", model.var_name(v)));
        }
        out.push('\n');
    }
    out
}

pub fn parse_model(text: &str) -> Result<ProbModel, ModelError> {
    let mut model = ProbModel::new();
    let err = |line: usize, msg: &str| ModelError::Parse {
        line,
        msg: msg.into(),
    };
    let mut lines = text.lines().enumerate().peekable();
    while let Some((idx, raw)) = lines.next() {
        let lineno = idx + 1;
        let line = strip_comment(raw);
        let mut tok = line.split_whitespace();
        let Some(head) = tok.next() else { continue };
        match head {
            "var" => {
                let name = tok
                    .next()
                    .ok_or_else(|| err(lineno, "var needs a name"))?
                    .to_string();
                if model.var_by_name(&name).is_some() {
                    return Err(err(lineno, &format!("duplicate variable {name}")));
                }
                let mut dim = 1u16;
                match (tok.next(), tok.next()) {
                    (None, _) => {}
                    (Some("dim"), Some(d)) => {
                        dim = d.parse().map_err(|_| err(lineno, "bad dimension"))?;
                        if dim == 0 {
                            return Err(err(lineno, "dimension must be positive"));
                        }
                    }
                    _ => return Err(err(lineno, "expected `dim <n>` or end of line")),
                }
                model.add_var(name, dim);
            }
            "prior" => {
                let mut vars = Vec::new();
                for name in tok {
                    vars.push(
                        model
                            .var_by_name(name)
                            .ok_or_else(|| err(lineno, &format!("unknown variable {name}")))?,
                    );
                }
                if vars.is_empty() {
                    return Err(err(lineno, "prior needs at least one variable"));
                }
                let listed = vars.clone();
                let scope = Scope::new(vars);
                if listed.len() != scope.len() {
                    return Err(err(lineno, "duplicate variable in prior scope"));
                }
                // Matrix entries are written in the listed variable order;
                // map each listed coordinate to its slot in the sorted scope.
                let mut pos = Vec::with_capacity(scope.total_dim());
                for v in &listed {
                    let off = scope.offset_of(*v).unwrap();
                    for k in 0..v.dim() as usize {
                        pos.push(off + k);
                    }
                }
                let d = scope.total_dim();
                let mut prec = None;
                let mut info = None;
                let mut scale = None;
                loop {
                    let Some((bidx, braw)) = lines.next() else {
                        return Err(err(lineno, "prior block not closed with `end`"));
                    };
                    let blineno = bidx + 1;
                    let bline = strip_comment(braw);
                    let mut btok = bline.split_whitespace();
                    match btok.next() {
                        None => continue,
                        Some("prec") => {
                            let vals = parse_floats(btok, blineno)?;
                            if vals.len() != d * d {
                                return Err(err(blineno, "prec entry count mismatch"));
                            }
                            let listed = DMatrix::from_row_slice(d, d, &vals);
                            let mut m = DMatrix::zeros(d, d);
                            for (li, &si) in pos.iter().enumerate() {
                                for (lj, &sj) in pos.iter().enumerate() {
                                    m[(si, sj)] = listed[(li, lj)];
                                }
                            }
                            prec = Some(m);
                        }
                        Some("info") => {
                            let vals = parse_floats(btok, blineno)?;
                            if vals.len() != d {
                                return Err(err(blineno, "info entry count mismatch"));
                            }
                            let mut v = DVector::zeros(d);
                            for (li, &si) in pos.iter().enumerate() {
                                v[si] = vals[li];
                            }
                            info = Some(v);
                        }
                        Some("scale") => {
                            let vals = parse_floats(btok, blineno)?;
                            if vals.len() != 1 {
                                return Err(err(blineno, "scale takes one value"));
                            }
                            scale = Some(vals[0]);
                        }
                        Some("end") => break,
                        Some(other) => {
                            return Err(err(blineno, &format!("unexpected token {other}")))
                        }
                    }
                }
                let prec = prec.ok_or_else(|| err(lineno, "prior block missing prec"))?;
                let info = info.unwrap_or_else(|| DVector::zeros(d));
                let factor =
                    GaussianFactor::from_information(scope, prec, info, scale.unwrap_or(0.0))
                        .map_err(|e| err(lineno, &e.to_string()))?;
                model.add_prior(factor);
            }
            "meas" => {
                let name = tok
                    .next()
                    .ok_or_else(|| err(lineno, "meas needs a name"))?
                    .to_string();
                let rest: Vec<&str> = tok.collect();
                let mut i = 0usize;
                let mut owner = None;
                let mut parents: Vec<VarId> = Vec::new();
                let mut coeffs: Vec<f64> = Vec::new();
                let mut offset = 0.0;
                let mut noise = None;
                let mut obs = None;
                while i < rest.len() {
                    match rest[i] {
                        "owner" => {
                            i += 1;
                            let v: u32 = rest
                                .get(i)
                                .and_then(|s| s.parse().ok())
                                .ok_or_else(|| err(lineno, "bad owner"))?;
                            owner = Some(NodeId(v));
                            i += 1;
                        }
                        "parents" => {
                            i += 1;
                            while i < rest.len() && !is_keyword(rest[i]) {
                                parents.push(model.var_by_name(rest[i]).ok_or_else(|| {
                                    err(lineno, &format!("unknown variable {}", rest[i]))
                                })?);
                                i += 1;
                            }
                        }
                        "coeffs" => {
                            i += 1;
                            while i < rest.len() && !is_keyword(rest[i]) {
                                coeffs.push(
                                    rest[i]
                                        .parse()
                                        .map_err(|_| err(lineno, "bad coefficient"))?,
                                );
                                i += 1;
                            }
                        }
                        "offset" => {
                            i += 1;
                            offset = rest
                                .get(i)
                                .and_then(|s| s.parse().ok())
                                .ok_or_else(|| err(lineno, "bad offset"))?;
                            i += 1;
                        }
                        "noise" => {
                            i += 1;
                            noise = Some(
                                rest.get(i)
                                    .and_then(|s| s.parse().ok())
                                    .ok_or_else(|| err(lineno, "bad noise"))?,
                            );
                            i += 1;
                        }
                        "obs" => {
                            i += 1;
                            obs = Some(
                                rest.get(i)
                                    .and_then(|s| s.parse().ok())
                                    .ok_or_else(|| err(lineno, "bad observation"))?,
                            );
                            i += 1;
                        }
                        other => return Err(err(lineno, &format!("unexpected token {other}"))),
                    }
                }
                let owner = owner.ok_or_else(|| err(lineno, "meas missing owner"))?;
                let noise = noise.ok_or_else(|| err(lineno, "meas missing noise"))?;
                if parents.is_empty() {
                    return Err(err(lineno, "meas needs at least one parent"));
                }
                // Coefficients are written in sorted-parent order; parents as
                // listed may be unsorted, so realign.
                let listed = parents.clone();
                let scope = Scope::new(parents);
                if listed.len() != scope.len() {
                    return Err(err(lineno, "duplicate parent"));
                }
                if coeffs.len() != scope.len() {
                    return Err(err(lineno, "coefficient count mismatch"));
                }
                let mut aligned = vec![0.0; coeffs.len()];
                for (c, v) in coeffs.iter().zip(listed.iter()) {
                    let pos = scope.vars().iter().position(|w| w == v).unwrap();
                    aligned[pos] = *c;
                }
                model.add_measurement(name, owner, scope, aligned, offset, noise, obs);
            }
            "query" => {
                let node: u32 = tok
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| err(lineno, "query needs a node id"))?;
                let mut vars = Vec::new();
                for name in tok {
                    vars.push(
                        model
                            .var_by_name(name)
                            .ok_or_else(|| err(lineno, &format!("unknown variable {name}")))?,
                    );
                }
                model.set_query(NodeId(node), Scope::new(vars));
            }
            other => return Err(err(lineno, &format!("unknown directive {other}"))),
        }
    }
    Ok(model)
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    }
}

fn is_keyword(tok: &str) -> bool {
    matches!(
        tok,
        "owner" | "parents" | "coeffs" | "offset" | "noise" | "obs"
    )
}

fn parse_floats<'a>(
    tok: impl Iterator<Item = &'a str>,
    lineno: usize,
) -> Result<Vec<f64>, ModelError> {
    tok.map(|s| {
        s.parse::<f64>().map_err(|_| ModelError::Parse {
            line: lineno,
            msg: format!("bad number {s}"),
        })
    })
    .collect()
}
