//! Geometry description files.
//!
//! ```text
//! file      = { line } ;
//! line      = blank | comment | section | entry ;
//! comment   = "#" { any } ;
//! section   = "[" name "]" ;
//! entry     = key "=" value ;
//! tuple     = "(" expr { "," expr } ")" ;
//! ```
//!
//! Header entries (before any section): `name`, `dim`, `h_dim`, `vars`
//! (comma-separated identifiers). Sections:
//!
//! * `[frame]`: exactly `dim` entries `Name = tuple`, each tuple with `dim`
//!   expressions over `vars`. The first `h_dim` fields span H.
//! * `[connection]` (optional): either `kind = flat | frame-parallel`, or
//!   entries `G(k,i,j) = expr` (1-based, unlisted entries are zero) giving
//!   Christoffel symbols with `(nabla_Y X)^k = Y^i d_i X^k + G(k,i,j) Y^i X^j`.
//! * `[charts]`, `[maps]` (optional): named maps `R^dim -> R^dim` as tuples
//!   over `vars`.
//! * `[curves]` (optional): named curves as tuples over the single variable
//!   `t`.

use crate::error::{Error, Result};
use crate::expr::{parse_at, Expression};

/// One `key = value` entry with its source position.
#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
    /// 1-based column where `value` starts.
    pub value_column: usize,
}

/// A line-oriented `key = value` document with `[section]` headers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Document {
    pub header: Vec<Entry>,
    pub sections: Vec<(String, usize, Vec<Entry>)>,
}

impl Document {
    pub fn parse(text: &str) -> Result<Self> {
        let mut doc = Document::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            };
            let trimmed = content.trim();
            if trimmed.is_empty() {
                continue;
            }
            if let Some(rest) = trimmed.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| Error::Schema {
                    line,
                    message: format!("malformed section header `{trimmed}`"),
                })?;
                let name = name.trim();
                if doc.sections.iter().any(|(n, _, _)| n == name) {
                    return Err(Error::Schema {
                        line,
                        message: format!("duplicate section [{name}]"),
                    });
                }
                doc.sections.push((name.to_string(), line, Vec::new()));
                continue;
            }
            let eq = content.find('=').ok_or_else(|| Error::Schema {
                line,
                message: format!("expected `key = value`, found `{trimmed}`"),
            })?;
            let key = content[..eq].trim().to_string();
            if key.is_empty() {
                return Err(Error::Schema {
                    line,
                    message: "empty key".into(),
                });
            }
            let after = &content[eq + 1..];
            let lead = after.len() - after.trim_start().len();
            let value_column = content[..eq + 1 + lead].chars().count() + 1;
            let entry = Entry {
                key,
                value: after.trim().to_string(),
                line,
                value_column,
            };
            let target = match doc.sections.last_mut() {
                Some((_, _, entries)) => entries,
                None => &mut doc.header,
            };
            if target.iter().any(|e| e.key == entry.key) {
                return Err(Error::Schema {
                    line,
                    message: format!("duplicate key `{}`", entry.key),
                });
            }
            target.push(entry);
        }
        Ok(doc)
    }

    pub fn header_value(&self, key: &str) -> Option<&Entry> {
        self.header.iter().find(|e| e.key == key)
    }

    pub fn section(&self, name: &str) -> Option<&[Entry]> {
        self.sections
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, _, e)| e.as_slice())
    }
}

/// Parses `(e1, e2, ...)` into expressions over `vars`.
pub fn parse_tuple(entry: &Entry, vars: &[String]) -> Result<Vec<Expression>> {
    let v = entry.value.as_str();
    let open = v.find('(').filter(|&i| v[..i].trim().is_empty());
    let (Some(open), true) = (open, v.ends_with(')')) else {
        return Err(Error::Syntax {
            line: entry.line,
            column: entry.value_column,
            message: "expected a parenthesized tuple `(e1, ..., en)`".into(),
        });
    };
    let inner = &v[open + 1..v.len() - 1];
    let mut pieces = Vec::new();
    let mut depth = 0i32;
    let mut start = 0usize;
    for (i, ch) in inner.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                pieces.push((start, &inner[start..i]));
                start = i + 1;
            }
            _ => {}
        }
    }
    pieces.push((start, &inner[start..]));
    let base = entry.value_column + v[..open + 1].chars().count();
    pieces
        .into_iter()
        .map(|(offset, text)| {
            let column = base + inner[..offset].chars().count();
            parse_at(text, vars, entry.line, column)
        })
        .collect()
}

/// Connection data attached to a geometry file.
#[derive(Clone, Debug, PartialEq)]
pub enum ConnectionSpec {
    Flat,
    FrameParallel,
    /// `n^3` entries indexed `[k][i][j]` (flattened row-major).
    Table(Vec<Expression>),
}

/// A validated geometry description.
#[derive(Clone, Debug, PartialEq)]
pub struct GeometrySpec {
    pub name: String,
    pub dim: usize,
    pub h_dim: usize,
    pub vars: Vec<String>,
    /// `dim` named fields, each with `dim` component expressions.
    pub frame: Vec<(String, Vec<Expression>)>,
    pub connection: Option<ConnectionSpec>,
    pub charts: Vec<(String, Vec<Expression>)>,
    pub maps: Vec<(String, Vec<Expression>)>,
    pub curves: Vec<(String, Vec<Expression>)>,
}

impl GeometrySpec {
    pub fn q(&self) -> usize {
        self.dim - self.h_dim
    }

    pub fn frame_field(&self, name: &str) -> Option<usize> {
        self.frame.iter().position(|(n, _)| n == name)
    }

    pub fn chart(&self, name: &str) -> Option<&[Expression]> {
        find_named(&self.charts, name)
    }

    pub fn map(&self, name: &str) -> Option<&[Expression]> {
        find_named(&self.maps, name)
    }

    pub fn curve(&self, name: &str) -> Option<&[Expression]> {
        find_named(&self.curves, name)
    }
}

fn find_named<'a>(list: &'a [(String, Vec<Expression>)], name: &str) -> Option<&'a [Expression]> {
    list.iter()
        .find(|(n, _)| n == name)
        .map(|(_, e)| e.as_slice())
}

fn required<'a>(doc: &'a Document, key: &str) -> Result<&'a Entry> {
    doc.header_value(key).ok_or_else(|| Error::Schema {
        line: 1,
        message: format!("missing header key `{key}`"),
    })
}

fn parse_usize(entry: &Entry) -> Result<usize> {
    entry.value.parse().map_err(|_| Error::Schema {
        line: entry.line,
        message: format!("`{}` must be a non-negative integer", entry.key),
    })
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_alphabetic() || c == '_')
        && chars.all(|c| c.is_alphanumeric() || c == '_')
        && !matches!(s, "sin" | "cos" | "exp")
}

fn named_tuples(
    entries: &[Entry],
    vars: &[String],
    arity: usize,
    what: &str,
) -> Result<Vec<(String, Vec<Expression>)>> {
    entries
        .iter()
        .map(|e| {
            let exprs = parse_tuple(e, vars)?;
            if exprs.len() != arity {
                return Err(Error::DimensionMismatch(format!(
                    "line {}: {what} `{}` has {} components, expected {arity}",
                    e.line,
                    e.key,
                    exprs.len()
                )));
            }
            Ok((e.key.clone(), exprs))
        })
        .collect()
}

fn parse_connection(entries: &[Entry], vars: &[String], dim: usize) -> Result<ConnectionSpec> {
    if let Some(kind) = entries.iter().find(|e| e.key == "kind") {
        if entries.len() > 1 {
            return Err(Error::Schema {
                line: kind.line,
                message: "`kind` cannot be combined with table entries".into(),
            });
        }
        return match kind.value.as_str() {
            "flat" => Ok(ConnectionSpec::Flat),
            "frame-parallel" => Ok(ConnectionSpec::FrameParallel),
            other => Err(Error::Schema {
                line: kind.line,
                message: format!("unknown connection kind `{other}`"),
            }),
        };
    }
    let mut table: Vec<Expression> = (0..dim * dim * dim)
        .map(|_| Expression::constant(0.0, vars))
        .collect();
    for e in entries {
        let bad = || Error::Schema {
            line: e.line,
            message: format!("expected `G(k,i,j)`, found `{}`", e.key),
        };
        let inner = e
            .key
            .strip_prefix("G(")
            .and_then(|s| s.strip_suffix(')'))
            .ok_or_else(bad)?;
        let idx: Vec<usize> = inner
            .split(',')
            .map(|s| s.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad())?;
        if idx.len() != 3 || idx.iter().any(|&i| i == 0 || i > dim) {
            return Err(Error::DimensionMismatch(format!(
                "line {}: Christoffel index out of range in `{}`",
                e.line, e.key
            )));
        }
        let expr = parse_at(&e.value, vars, e.line, e.value_column)?;
        table[((idx[0] - 1) * dim + (idx[1] - 1)) * dim + (idx[2] - 1)] = expr;
    }
    Ok(ConnectionSpec::Table(table))
}

/// Parses and validates a geometry description.
pub fn parse_geometry(text: &str) -> Result<GeometrySpec> {
    let doc = Document::parse(text)?;
    for e in &doc.header {
        if !matches!(e.key.as_str(), "name" | "dim" | "h_dim" | "vars") {
            return Err(Error::Schema {
                line: e.line,
                message: format!("unknown header key `{}`", e.key),
            });
        }
    }
    for (name, line, _) in &doc.sections {
        if !matches!(
            name.as_str(),
            "frame" | "connection" | "charts" | "maps" | "curves"
        ) {
            return Err(Error::Schema {
                line: *line,
                message: format!("unknown section [{name}]"),
            });
        }
    }
    let name = required(&doc, "name")?.value.clone();
    let dim_entry = required(&doc, "dim")?;
    let dim = parse_usize(dim_entry)?;
    let h_entry = required(&doc, "h_dim")?;
    let h_dim = parse_usize(h_entry)?;
    if dim == 0 {
        return Err(Error::Schema {
            line: dim_entry.line,
            message: "dim must be positive".into(),
        });
    }
    if h_dim == 0 || h_dim >= dim {
        return Err(Error::Schema {
            line: h_entry.line,
            message: format!("need 1 <= h_dim < dim (so that q >= 1), got h_dim = {h_dim}, dim = {dim}"),
        });
    }
    let vars_entry = required(&doc, "vars")?;
    let vars: Vec<String> = vars_entry
        .value
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    if let Some(bad) = vars.iter().find(|v| !is_identifier(v)) {
        return Err(Error::Schema {
            line: vars_entry.line,
            message: format!("invalid variable name `{bad}`"),
        });
    }
    for (i, v) in vars.iter().enumerate() {
        if vars[..i].contains(v) {
            return Err(Error::Schema {
                line: vars_entry.line,
                message: format!("duplicate variable `{v}`"),
            });
        }
    }
    if vars.len() != dim {
        return Err(Error::DimensionMismatch(format!(
            "line {}: {} variables declared for dim = {dim}",
            vars_entry.line,
            vars.len()
        )));
    }

    let frame_entries = doc.section("frame").ok_or_else(|| Error::Schema {
        line: 1,
        message: "missing [frame] section".into(),
    })?;
    let frame = named_tuples(frame_entries, &vars, dim, "frame field")?;
    if frame.len() != dim {
        return Err(Error::DimensionMismatch(format!(
            "frame has {} fields, expected {dim}",
            frame.len()
        )));
    }
    let connection = doc
        .section("connection")
        .map(|e| parse_connection(e, &vars, dim))
        .transpose()?;
    let charts = named_tuples(doc.section("charts").unwrap_or(&[]), &vars, dim, "chart")?;
    let maps = named_tuples(doc.section("maps").unwrap_or(&[]), &vars, dim, "map")?;
    let t = vec!["t".to_string()];
    let curves = named_tuples(doc.section("curves").unwrap_or(&[]), &t, dim, "curve")?;

    Ok(GeometrySpec {
        name,
        dim,
        h_dim,
        vars,
        frame,
        connection,
        charts,
        maps,
        curves,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEIS: &str = "\
name = heis3
dim = 3
h_dim = 2
vars = x, y, z

[frame]
X1 = (1, 0, -y/2)
X2 = (0, 1, x/2)
X3 = (0, 0, 1)
";

    #[test]
    fn heisenberg_parses() {
        let g = parse_geometry(HEIS).unwrap();
        assert_eq!(g.name, "heis3");
        assert_eq!((g.dim, g.h_dim, g.q()), (3, 2, 1));
        assert_eq!(g.frame[0].1[2].to_string(), "-y/2");
        assert_eq!(g.frame_field("X2"), Some(1));
        assert!(g.connection.is_none());
    }

    #[test]
    fn q_must_be_positive() {
        let text = HEIS.replace("h_dim = 2", "h_dim = 3");
        assert!(matches!(
            parse_geometry(&text),
            Err(Error::Schema { line: 3, .. })
        ));
    }

    #[test]
    fn frame_shape_is_checked() {
        let short = HEIS.replace("X3 = (0, 0, 1)\n", "");
        assert!(matches!(
            parse_geometry(&short),
            Err(Error::DimensionMismatch(_))
        ));
        let thin = HEIS.replace("(0, 0, 1)", "(0, 1)");
        assert!(matches!(
            parse_geometry(&thin),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn expression_errors_carry_file_positions() {
        let text = HEIS.replace("x/2)", "w/2)");
        assert_eq!(
            parse_geometry(&text).unwrap_err(),
            Error::UnknownIdentifier {
                name: "w".into(),
                line: 8,
                column: 13
            }
        );
        let text = HEIS.replace("-y/2", "-y/*2");
        assert!(matches!(
            parse_geometry(&text),
            Err(Error::Syntax { line: 7, column: 16, .. })
        ));
    }

    #[test]
    fn connection_table() {
        let text = format!("{HEIS}\n[connection]\nG(3,2,1) = 0.5\n");
        let g = parse_geometry(&text).unwrap();
        let Some(ConnectionSpec::Table(t)) = g.connection else {
            panic!("expected table");
        };
        assert_eq!(t[2 * 9 + 3].eval::<f64>(&[0.0, 0.0, 0.0]).unwrap(), 0.5);
        assert_eq!(t[0].eval::<f64>(&[0.0, 0.0, 0.0]).unwrap(), 0.0);

        let text = format!("{HEIS}\n[connection]\nkind = frame-parallel\n");
        assert_eq!(
            parse_geometry(&text).unwrap().connection,
            Some(ConnectionSpec::FrameParallel)
        );
        let text = format!("{HEIS}\n[connection]\nG(4,1,1) = 1\n");
        assert!(parse_geometry(&text).is_err());
    }

    #[test]
    fn curves_use_t() {
        let text = format!("{HEIS}\n[curves]\na = (t, t, t^2)\n");
        let g = parse_geometry(&text).unwrap();
        let c = g.curve("a").unwrap();
        assert_eq!(c[2].eval(&[3.0_f64]).unwrap(), 9.0);
        let bad = format!("{HEIS}\n[curves]\na = (t, x, t^2)\n");
        assert!(matches!(
            parse_geometry(&bad),
            Err(Error::UnknownIdentifier { .. })
        ));
    }

    #[test]
    fn unknown_keys_and_sections() {
        assert!(matches!(
            parse_geometry(&format!("colour = red\n{HEIS}")),
            Err(Error::Schema { line: 1, .. })
        ));
        assert!(matches!(
            parse_geometry(&format!("{HEIS}\n[extras]\n")),
            Err(Error::Schema { .. })
        ));
        assert!(matches!(
            parse_geometry("name = a\ndim = 3\n"),
            Err(Error::Schema { .. })
        ));
    }
}
