//! Plain-text model files.
//!
//! ```text
//! [model]
//! label = triad
//! dim = 3
//! alpha = 1
//! epsilon = 0.1
//! delta = 0
//!
//! [A]
//! 1 0 0
//! 0 1 0
//! 0 0 1
//!
//! [B]            # optional, defaults to zero
//! ...
//!
//! [N]
//! 1 x2*x3 -> 1
//! -2 x1*x2 -> 3
//!
//! [Z]
//! 1 0 0
//! 0 1 0
//! ```
//!
//! Coefficients are exact rationals written as `num/den` (integers and
//! finite decimals are accepted on input). Monomials are `*`-separated
//! powers `x<k>` or `x<k>^<p>` with 1-based variable indices, or `1` for a
//! constant; components are 1-based. `#` starts a comment.

use std::fmt::Write as _;

use num_traits::Zero;

use super::{ModelSpec, RationalMatrix};
use crate::error::{Error, Result};
use crate::poly::{format_rational, parse_rational, PolyVectorField, Rational};

/// Serialize a model into the canonical text form.
pub fn to_model_file(model: &ModelSpec) -> String {
    let d = model.dim();
    let mut s = String::new();
    let _ = writeln!(s, "[model]");
    let _ = writeln!(s, "label = {}", model.label());
    let _ = writeln!(s, "dim = {d}");
    let _ = writeln!(s, "alpha = {}", model.alpha());
    let _ = writeln!(s, "epsilon = {}", model.epsilon());
    let _ = writeln!(s, "delta = {}", model.delta());
    let write_matrix = |s: &mut String, name: &str, m: &RationalMatrix| {
        let _ = writeln!(s, "\n[{name}]");
        for row in m {
            let cells: Vec<String> = row.iter().map(format_rational).collect();
            let _ = writeln!(s, "{}", cells.join(" "));
        }
    };
    write_matrix(&mut s, "A", model.a());
    write_matrix(&mut s, "B", model.b());
    let _ = writeln!(s, "\n[N]");
    for (comp, p) in model.nonlinearity().components().iter().enumerate() {
        for (e, c) in p.terms() {
            let _ = writeln!(s, "{} {} -> {}", format_rational(c), format_monomial(e), comp + 1);
        }
    }
    let _ = writeln!(s, "\n[Z]");
    for v in model.noise() {
        let cells: Vec<String> = v.iter().map(format_rational).collect();
        let _ = writeln!(s, "{}", cells.join(" "));
    }
    s
}

fn format_monomial(e: &[u32]) -> String {
    let parts: Vec<String> = e
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0)
        .map(|(i, &p)| {
            if p == 1 {
                format!("x{}", i + 1)
            } else {
                format!("x{}^{}", i + 1, p)
            }
        })
        .collect();
    if parts.is_empty() {
        "1".to_string()
    } else {
        parts.join("*")
    }
}

fn parse_monomial(s: &str, dim: usize, line: usize) -> Result<Vec<u32>> {
    let err = |msg: String| Error::Parse { line, msg };
    let mut e = vec![0u32; dim];
    if s.trim() == "1" {
        return Ok(e);
    }
    for factor in s.split('*') {
        let factor = factor.trim();
        let rest = factor
            .strip_prefix('x')
            .ok_or_else(|| err(format!("bad monomial factor '{factor}'")))?;
        let (var, pow) = match rest.split_once('^') {
            Some((v, p)) => (
                v,
                p.parse::<u32>().map_err(|_| err(format!("bad power in '{factor}'")))?,
            ),
            None => (rest, 1),
        };
        let var: usize = var
            .parse()
            .map_err(|_| err(format!("bad variable index in '{factor}'")))?;
        if var == 0 || var > dim {
            return Err(err(format!("variable x{var} out of range 1..={dim}")));
        }
        e[var - 1] += pow;
    }
    Ok(e)
}

fn parse_row(line_text: &str, dim: usize, line: usize) -> Result<Vec<Rational>> {
    let row: Vec<Rational> = line_text
        .split_whitespace()
        .map(|t| {
            parse_rational(t).ok_or_else(|| Error::Parse {
                line,
                msg: format!("bad number '{t}'"),
            })
        })
        .collect::<Result<_>>()?;
    if row.len() != dim {
        return Err(Error::Parse {
            line,
            msg: format!("expected {dim} entries, found {}", row.len()),
        });
    }
    Ok(row)
}

/// Parse a model file.
pub fn parse_model_file(text: &str) -> Result<ModelSpec> {
    let mut section = String::new();
    let mut label = "model".to_string();
    let mut dim: Option<usize> = None;
    let mut alpha = 1.0;
    let mut epsilon = 0.1;
    let mut delta = 0.0;
    let mut a_rows: Vec<(usize, String)> = Vec::new();
    let mut b_rows: Vec<(usize, String)> = Vec::new();
    let mut n_terms: Vec<(usize, String)> = Vec::new();
    let mut z_rows: Vec<(usize, String)> = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if content.starts_with('[') && content.ends_with(']') {
            section = content[1..content.len() - 1].trim().to_ascii_lowercase();
            continue;
        }
        match section.as_str() {
            "model" => {
                let (k, v) = content.split_once('=').ok_or(Error::Parse {
                    line,
                    msg: "expected key = value".into(),
                })?;
                let (k, v) = (k.trim(), v.trim());
                let num = |v: &str| -> Result<f64> {
                    v.parse::<f64>()
                        .ok()
                        .or_else(|| parse_rational(v).map(|r| crate::poly::rational_to_f64(&r)))
                        .ok_or(Error::Parse {
                            line,
                            msg: format!("bad number '{v}'"),
                        })
                };
                match k {
                    "label" => label = v.to_string(),
                    "dim" => {
                        dim = Some(v.parse().map_err(|_| Error::Parse {
                            line,
                            msg: format!("bad dim '{v}'"),
                        })?)
                    }
                    "alpha" => alpha = num(v)?,
                    "epsilon" => epsilon = num(v)?,
                    "delta" => delta = num(v)?,
                    other => {
                        return Err(Error::Parse {
                            line,
                            msg: format!("unknown key '{other}'"),
                        })
                    }
                }
            }
            "a" => a_rows.push((line, content.to_string())),
            "b" => b_rows.push((line, content.to_string())),
            "n" => n_terms.push((line, content.to_string())),
            "z" => z_rows.push((line, content.to_string())),
            "" => {
                return Err(Error::Parse {
                    line,
                    msg: "content before the first section".into(),
                })
            }
            other => {
                return Err(Error::Parse {
                    line,
                    msg: format!("unknown section [{other}]"),
                })
            }
        }
    }
    let dim = dim.ok_or(Error::Parse {
        line: 0,
        msg: "missing dim".into(),
    })?;
    if dim == 0 {
        return Err(Error::Parse {
            line: 0,
            msg: "dim must be positive".into(),
        });
    }
    let matrix = |rows: &[(usize, String)], name: &str, required: bool| -> Result<RationalMatrix> {
        if rows.is_empty() && !required {
            return Ok(vec![vec![Rational::zero(); dim]; dim]);
        }
        if rows.len() != dim {
            return Err(Error::Parse {
                line: rows.first().map(|r| r.0).unwrap_or(0),
                msg: format!("[{name}] needs {dim} rows, found {}", rows.len()),
            });
        }
        rows.iter().map(|(l, t)| parse_row(t, dim, *l)).collect()
    };
    let a = matrix(&a_rows, "A", true)?;
    let b = matrix(&b_rows, "B", false)?;
    let mut n = PolyVectorField::zero(dim);
    for (line, t) in &n_terms {
        let line = *line;
        let (lhs, comp) = t.split_once("->").ok_or(Error::Parse {
            line,
            msg: "expected 'coeff monomial -> component'".into(),
        })?;
        let comp: usize = comp.trim().parse().map_err(|_| Error::Parse {
            line,
            msg: format!("bad component '{}'", comp.trim()),
        })?;
        if comp == 0 || comp > dim {
            return Err(Error::Parse {
                line,
                msg: format!("component {comp} out of range 1..={dim}"),
            });
        }
        let mut parts = lhs.split_whitespace();
        let coeff = parts.next().and_then(parse_rational).ok_or(Error::Parse {
            line,
            msg: "bad coefficient".into(),
        })?;
        let mono: String = parts.collect::<Vec<_>>().join("");
        if mono.is_empty() {
            return Err(Error::Parse {
                line,
                msg: "missing monomial".into(),
            });
        }
        let e = parse_monomial(&mono, dim, line)?;
        n.add_term(comp - 1, e, coeff);
    }
    let z = z_rows
        .iter()
        .map(|(l, t)| parse_row(t, dim, *l))
        .collect::<Result<Vec<_>>>()?;
    ModelSpec::new(label, a, b, n, z, alpha, epsilon, delta)
}

pub fn read_model_file(path: &std::path::Path) -> Result<ModelSpec> {
    let text = std::fs::read_to_string(path)?;
    parse_model_file(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_lorenz96, build_sabra, build_triad};
    use crate::poly::rational_from_int;

    fn same_model(a: &ModelSpec, b: &ModelSpec) -> bool {
        a.label() == b.label()
            && a.a() == b.a()
            && a.b() == b.b()
            && a.nonlinearity() == b.nonlinearity()
            && a.noise() == b.noise()
            && a.alpha() == b.alpha()
            && a.epsilon() == b.epsilon()
            && a.delta() == b.delta()
    }

    #[test]
    fn builtins_round_trip() {
        let models = [
            build_lorenz96(5, &[1.0, 0.5, 0.0, 0.0, 0.0], 0.1, 1.0).unwrap(),
            build_sabra(3, 0.5, &[1.0, 1.0, 0.0], &[1.0, 1.0, 0.0], 0.05, 0.5).unwrap(),
            build_triad(
                [rational_from_int(1), rational_from_int(1), rational_from_int(-2)],
                1.0,
                0.75,
                0.025,
                1.0,
            )
            .unwrap(),
        ];
        for m in &models {
            let text = to_model_file(m);
            let back = parse_model_file(&text).unwrap();
            assert!(same_model(m, &back), "{text}");
            assert_eq!(m.model_hash(), back.model_hash());
        }
    }

    #[test]
    fn parses_handwritten_triad() {
        let text = "
# triad example
[model]
label = hand
dim = 3
epsilon = 1/10

[A]
1 0 0
0 1 0
0 0 1

[N]
1 x2*x3 -> 1
1 x1*x3 -> 2
-2 x1*x2 -> 3

[Z]
1 0 0
0 1 0
";
        let m = parse_model_file(text).unwrap();
        assert!((m.epsilon() - 0.1).abs() < 1e-15);
        assert!(m.check_structure().all_pass());
        assert_eq!(m.noise_count(), 2);
    }

    #[test]
    fn reports_line_of_errors() {
        let text = "[model]\ndim = 2\n[A]\n1 0\n0 x\n";
        match parse_model_file(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("{other:?}"),
        }
        let text = "[model]\ndim = 2\n[A]\n1 0\n0 1\n[N]\n1 x3 -> 1\n";
        assert!(parse_model_file(text).is_err());
        let text = "[model]\ndim = 2\n[A]\n1 0\n0 1\n[N]\n1 x1^2 -> 3\n";
        assert!(parse_model_file(text).is_err());
    }
}
