//! Sample restrictions: conjunctions of `operand OP operand` joined by `&`,
//! where OP is one of `==`, `!=`, `<`, `<=`, `>`, `>=`.

use std::fmt;

use super::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl Op {
    fn holds(self, ord: std::cmp::Ordering) -> bool {
        use std::cmp::Ordering::*;
        match self {
            Op::Eq => ord == Equal,
            Op::Ne => ord != Equal,
            Op::Lt => ord == Less,
            Op::Le => ord != Greater,
            Op::Gt => ord == Greater,
            Op::Ge => ord != Less,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Operand {
    Column(String),
    Number(f64),
    Text(String),
}

#[derive(Debug, Clone, PartialEq)]
struct Clause {
    lhs: Operand,
    op: Op,
    rhs: Operand,
}

/// A parsed sample filter.
#[derive(Debug, Clone, PartialEq)]
pub struct Filter {
    source: String,
    clauses: Vec<Clause>,
}

impl fmt::Display for Filter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

fn parse_operand(tok: &str) -> Result<Operand> {
    let tok = tok.trim();
    if tok.is_empty() {
        return Err(Error::Filter("missing operand".into()));
    }
    if let Some(inner) = tok
        .strip_prefix('"')
        .and_then(|t| t.strip_suffix('"'))
        .or_else(|| tok.strip_prefix('\'').and_then(|t| t.strip_suffix('\'')))
    {
        return Ok(Operand::Text(inner.to_string()));
    }
    if let Ok(v) = tok.parse::<f64>() {
        return Ok(Operand::Number(v));
    }
    let valid = tok
        .chars()
        .next()
        .map(|c| c.is_alphabetic() || c == '_')
        .unwrap_or(false)
        && tok.chars().all(|c| c.is_alphanumeric() || c == '_' || c == '.');
    if !valid {
        return Err(Error::Filter(format!("bad operand `{tok}`")));
    }
    Ok(Operand::Column(tok.to_string()))
}

fn parse_clause(text: &str) -> Result<Clause> {
    // longest operators first so `<=` is not read as `<`
    const OPS: [(&str, Op); 6] = [
        ("==", Op::Eq),
        ("!=", Op::Ne),
        ("<=", Op::Le),
        (">=", Op::Ge),
        ("<", Op::Lt),
        (">", Op::Gt),
    ];
    let found = OPS
        .iter()
        .filter_map(|(s, op)| text.find(s).map(|pos| (pos, *s, *op)))
        .min_by_key(|(pos, s, _)| (*pos, std::cmp::Reverse(s.len())));
    let (pos, sym, op) =
        found.ok_or_else(|| Error::Filter(format!("no comparison operator in `{}`", text.trim())))?;
    let lhs = parse_operand(&text[..pos])?;
    let rhs_text = &text[pos + sym.len()..];
    if rhs_text.trim_start().starts_with(['=', '<', '>', '!']) {
        return Err(Error::Filter(format!("malformed operator in `{}`", text.trim())));
    }
    let rhs = parse_operand(rhs_text)?;
    Ok(Clause { lhs, op, rhs })
}

impl Filter {
    pub fn parse(expr: &str) -> Result<Self> {
        if expr.trim().is_empty() {
            return Err(Error::Filter("empty expression".into()));
        }
        let clauses = expr
            .split('&')
            .map(|part| {
                if part.trim().is_empty() {
                    Err(Error::Filter("empty clause in conjunction".into()))
                } else {
                    parse_clause(part)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            source: expr.trim().to_string(),
            clauses,
        })
    }

    /// Column names referenced by the filter.
    pub fn columns(&self) -> Vec<String> {
        let mut out = Vec::new();
        for c in &self.clauses {
            for op in [&c.lhs, &c.rhs] {
                if let Operand::Column(name) = op {
                    if !out.contains(name) {
                        out.push(name.clone());
                    }
                }
            }
        }
        out
    }

    fn evaluate(&self, data: &Dataset) -> Result<Vec<bool>> {
        let mut keep = vec![true; data.n_rows()];
        for clause in &self.clauses {
            for (row, k) in keep.iter_mut().enumerate() {
                if *k {
                    *k = clause_holds(clause, data, row)?;
                }
            }
        }
        Ok(keep)
    }
}

enum Value<'a> {
    Num(f64),
    Str(&'a str),
}

fn value<'a>(op: &'a Operand, data: &'a Dataset, row: usize) -> Result<Value<'a>> {
    Ok(match op {
        Operand::Number(v) => Value::Num(*v),
        Operand::Text(s) => Value::Str(s),
        Operand::Column(name) => {
            let col = data
                .column(name)
                .map_err(|_| Error::Filter(format!("unknown column `{name}`")))?;
            match col.numeric() {
                Some(v) => Value::Num(v[row]),
                None => Value::Str(&col.raw()[row]),
            }
        }
    })
}

fn clause_holds(clause: &Clause, data: &Dataset, row: usize) -> Result<bool> {
    let l = value(&clause.lhs, data, row)?;
    let r = value(&clause.rhs, data, row)?;
    let ord = match (l, r) {
        (Value::Num(a), Value::Num(b)) => a
            .partial_cmp(&b)
            .ok_or_else(|| Error::Filter("comparison with NaN".into()))?,
        (Value::Str(a), Value::Str(b)) => a.cmp(b),
        (Value::Num(a), Value::Str(b)) => a.to_string().as_str().cmp(b),
        (Value::Str(a), Value::Num(b)) => a.cmp(b.to_string().as_str()),
    };
    Ok(clause.op.holds(ord))
}

/// Keep the rows of `data` where `filter` holds.
pub fn apply_sample_filter(data: &Dataset, filter: &Filter) -> Result<Dataset> {
    let keep = filter.evaluate(data)?;
    Ok(data.select_rows(&keep))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Column;

    fn ages() -> Dataset {
        Dataset::new(vec![
            Column::from_f64("age", &[24.0, 25.0, 26.0]),
            Column::new("state", vec!["NY".into(), "CA".into(), "NY".into()]),
        ])
        .unwrap()
    }

    #[test]
    fn keeps_rows_meeting_threshold() {
        let f = Filter::parse("age>=25").unwrap();
        let d = apply_sample_filter(&ages(), &f).unwrap();
        assert_eq!(d.n_rows(), 2);
        assert_eq!(d.column("age").unwrap().numeric().unwrap(), &[25.0, 26.0]);
    }

    #[test]
    fn tautology_is_identity() {
        let f = Filter::parse("1==1").unwrap();
        assert_eq!(apply_sample_filter(&ages(), &f).unwrap(), ages());
    }

    #[test]
    fn dangling_operator_is_a_parse_error() {
        assert!(matches!(Filter::parse("age >= "), Err(Error::Filter(_))));
        assert!(matches!(Filter::parse("age"), Err(Error::Filter(_))));
        assert!(matches!(Filter::parse("age >== 3"), Err(Error::Filter(_))));
    }

    #[test]
    fn conjunction_and_text_comparison() {
        let f = Filter::parse("age > 24 & state == \"NY\"").unwrap();
        assert_eq!(f.columns(), vec!["age".to_string(), "state".to_string()]);
        let d = apply_sample_filter(&ages(), &f).unwrap();
        assert_eq!(d.n_rows(), 1);
        let f = Filter::parse("state != NY").unwrap();
        // bare word on the right is read as a column name
        assert!(apply_sample_filter(&ages(), &f).is_err());
    }

    #[test]
    fn unknown_column_is_an_error() {
        let f = Filter::parse("height < 3").unwrap();
        assert!(apply_sample_filter(&ages(), &f).is_err());
    }
}
