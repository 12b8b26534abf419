//! Parsers for matrix files, density lists and key=value config files.

use so3_bgk::{Error, Mat3, Result};
use std::collections::BTreeMap;

/// A 3×3 matrix: three non-empty lines of three numbers separated by
/// whitespace or commas; `#` starts a comment.
pub fn parse_matrix(text: &str) -> Result<Mat3> {
    let mut rows: Vec<[f64; 3]> = Vec::new();
    let mut last_line = 0;
    for (ln, raw) in text.lines().enumerate() {
        let line_no = ln + 1;
        last_line = line_no;
        let line = raw.split('#').next().unwrap_or("");
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::new();
        let mut col = 0;
        for tok in tokens(line) {
            col = tok.0;
            let v: f64 = tok.1.parse().map_err(|_| Error::Parse {
                line: line_no,
                column: tok.0,
                message: format!("'{}' is not a number", tok.1),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line: line_no,
                    column: tok.0,
                    message: "entries must be finite".into(),
                });
            }
            row.push(v);
        }
        if row.len() != 3 {
            return Err(Error::Parse {
                line: line_no,
                column: if row.len() > 3 { col } else { raw.trim_end().len() + 1 },
                message: format!("expected 3 entries in row {}, found {}", rows.len() + 1, row.len()),
            });
        }
        if rows.len() == 3 {
            return Err(Error::Parse {
                line: line_no,
                column: 1,
                message: "more than 3 rows".into(),
            });
        }
        rows.push([row[0], row[1], row[2]]);
    }
    if rows.len() != 3 {
        return Err(Error::Parse {
            line: last_line + 1,
            column: 1,
            message: format!("expected 3 rows, found {}", rows.len()),
        });
    }
    Ok(Mat3::new([rows[0], rows[1], rows[2]]))
}

/// `(1-based column, token)` pairs.
fn tokens(line: &str) -> impl Iterator<Item = (usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in line.char_indices() {
        let sep = ch.is_whitespace() || ch == ',';
        match (sep, start) {
            (false, None) => start = Some(i),
            (true, Some(s)) => {
                out.push((s + 1, &line[s..i]));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s + 1, &line[s..]));
    }
    out.into_iter()
}

#[derive(Clone, Debug, PartialEq)]
pub enum RhoSpec {
    Range { min: f64, max: f64, n: usize },
    List(Vec<f64>),
}

impl RhoSpec {
    pub fn values(&self) -> Vec<f64> {
        match self {
            RhoSpec::List(v) => v.clone(),
            RhoSpec::Range { min, max, n } => (0..*n)
                .map(|k| {
                    if *n == 1 {
                        *min
                    } else {
                        min + (max - min) * k as f64 / (*n - 1) as f64
                    }
                })
                .collect(),
        }
    }
}

fn number(s: &str) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("'{s}' is not a number")))?;
    if !v.is_finite() {
        return Err(Error::InvalidArgument(format!("'{s}' is not finite")));
    }
    Ok(v)
}

/// `a:b:n`, a comma list, or a single value.
pub fn parse_rho(s: &str) -> Result<RhoSpec> {
    let parts: Vec<&str> = s.split(':').collect();
    match parts.len() {
        3 => {
            let min = number(parts[0])?;
            let max = number(parts[1])?;
            let n: usize = parts[2]
                .trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("'{}' is not a point count", parts[2])))?;
            if n == 0 || !(min < max) && n > 1 || min > max {
                return Err(Error::InvalidArgument(format!("empty density range '{s}'")));
            }
            Ok(RhoSpec::Range { min, max, n })
        }
        1 => {
            let v = s.split(',').map(number).collect::<Result<Vec<_>>>()?;
            Ok(RhoSpec::List(v))
        }
        _ => Err(Error::InvalidArgument(format!(
            "density '{s}' must be a:b:n, a comma list or a single value"
        ))),
    }
}

/// `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: ln + 1,
            column: 1,
            message: "expected key = value".into(),
        })?;
        let key = k.trim().replace('_', "-");
        if key.is_empty() {
            return Err(Error::Parse {
                line: ln + 1,
                column: 1,
                message: "empty key".into(),
            });
        }
        out.insert(key, v.trim().to_string());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_ok() {
        let m = parse_matrix("1 0 0\n0, 2, 0 # diag\n\n0 0 3\n").unwrap();
        assert_eq!(m.diag(), [1.0, 2.0, 3.0]);
    }

    #[test]
    fn matrix_errors_carry_locations() {
        match parse_matrix("1 0 0\n0 2\n0 0 3\n") {
            Err(Error::Parse { line, column, .. }) => assert_eq!((line, column), (2, 4)),
            other => panic!("{other:?}"),
        }
        match parse_matrix("1 0 0\n0 x 0\n0 0 3\n") {
            Err(Error::Parse { line, column, .. }) => assert_eq!((line, column), (2, 3)),
            other => panic!("{other:?}"),
        }
        match parse_matrix("1 0 0\n0 1 0\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(parse_matrix("1 0 0 4\n0 1 0\n0 0 1\n").is_err());
    }

    #[test]
    fn rho_specs() {
        let r = parse_rho("0:12:240").unwrap();
        let v = r.values();
        assert_eq!(v.len(), 240);
        assert_eq!((v[0], v[239]), (0.0, 12.0));
        assert_eq!(parse_rho("7,8,10").unwrap(), RhoSpec::List(vec![7.0, 8.0, 10.0]));
        assert_eq!(parse_rho("8").unwrap(), RhoSpec::List(vec![8.0]));
        assert!(parse_rho("3:1:5").is_err());
        assert!(parse_rho("0:1:0").is_err());
        assert!(parse_rho("a,b").is_err());
        assert!(parse_rho("1:2").is_err());
    }

    #[test]
    fn config_lines() {
        let c = parse_config("seed = 3\n# note\nnodes_s3=40\n").unwrap();
        assert_eq!(c["seed"], "3");
        assert_eq!(c["nodes-s3"], "40");
        assert!(parse_config("oops\n").is_err());
    }
}
