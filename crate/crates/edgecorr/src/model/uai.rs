//! Reader and writer for the UAI model format (MARKOV / BAYES preambles)
//! and the companion `.evid` evidence files. Whitespace-insensitive;
//! exponent-notation reals accepted. BAYES models are read as plain factor
//! lists, one factor per CPT.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::{Factor, FactorNetwork, VarId};

struct Tokens<'a> {
    rest: &'a str,
    line: usize,
    column: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        Tokens {
            rest: text,
            line: 1,
            column: 1,
        }
    }

    fn next(&mut self) -> Option<(&'a str, usize, usize)> {
        let mut chars = self.rest.char_indices();
        let mut start = None;
        for (i, ch) in chars.by_ref() {
            if ch.is_whitespace() {
                if ch == '\n' {
                    self.line += 1;
                    self.column = 1;
                } else {
                    self.column += 1;
                }
            } else {
                start = Some(i);
                break;
            }
        }
        let start = start?;
        let (tok_line, tok_col) = (self.line, self.column);
        let mut end = self.rest.len();
        for (i, ch) in self.rest[start..].char_indices() {
            if ch.is_whitespace() {
                end = start + i;
                break;
            }
            self.column += 1;
        }
        let tok = &self.rest[start..end];
        self.rest = &self.rest[end..];
        Some((tok, tok_line, tok_col))
    }

    fn expect(&mut self, what: &str) -> Result<(&'a str, usize, usize)> {
        self.next().ok_or_else(|| Error::Parse {
            line: self.line,
            column: self.column,
            message: format!("unexpected end of input, expected {what}"),
        })
    }

    fn usize(&mut self, what: &str) -> Result<usize> {
        let (tok, line, column) = self.expect(what)?;
        tok.parse::<usize>().map_err(|_| Error::Parse {
            line,
            column,
            message: format!("expected {what}, found `{tok}`"),
        })
    }

    fn real(&mut self, what: &str) -> Result<f64> {
        let (tok, line, column) = self.expect(what)?;
        let value = tok.parse::<f64>().map_err(|_| Error::Parse {
            line,
            column,
            message: format!("expected {what}, found `{tok}`"),
        })?;
        if !value.is_finite() || value < 0.0 {
            return Err(Error::Parse {
                line,
                column,
                message: format!("table entry `{tok}` is not a finite nonnegative real"),
            });
        }
        Ok(value)
    }
}

/// Parse a UAI model file.
pub fn load_uai(text: &str) -> Result<FactorNetwork> {
    let mut toks = Tokens::new(text);
    let (kind, line, column) = toks.expect("model type")?;
    if kind != "MARKOV" && kind != "BAYES" {
        return Err(Error::Parse {
            line,
            column,
            message: format!("expected MARKOV or BAYES, found `{kind}`"),
        });
    }
    let n_vars = toks.usize("variable count")?;
    let mut cards = Vec::with_capacity(n_vars);
    for _ in 0..n_vars {
        let c = toks.usize("variable cardinality")?;
        if c == 0 {
            return Err(Error::Shape("variable with cardinality 0".into()));
        }
        cards.push(c);
    }
    let n_factors = toks.usize("factor count")?;
    let mut scopes: Vec<Vec<VarId>> = Vec::with_capacity(n_factors);
    for _ in 0..n_factors {
        let arity = toks.usize("factor arity")?;
        let mut scope = Vec::with_capacity(arity);
        for _ in 0..arity {
            let v = toks.usize("scope variable id")?;
            if v >= n_vars {
                return Err(Error::Index(format!(
                    "scope references unknown variable {v}"
                )));
            }
            scope.push(v);
        }
        scopes.push(scope);
    }
    let mut factors = Vec::with_capacity(n_factors);
    for scope in scopes {
        let expected: usize = scope.iter().map(|&v| cards[v]).product();
        let stated = toks.usize("table size")?;
        if stated != expected {
            return Err(Error::Shape(format!(
                "table declares {stated} entries, scope wants {expected}"
            )));
        }
        let mut table = Vec::with_capacity(stated);
        for _ in 0..stated {
            table.push(toks.real("table entry")?);
        }
        factors.push(Factor::new(scope, table));
    }
    FactorNetwork::new(cards, factors)
}

/// Render a network in UAI MARKOV form. Scale factors are folded back into
/// the printed entries, so `load_uai(save_uai(net))` reproduces the network
/// values; converting a BAYES input through this writer yields its MARKOV
/// factor form.
pub fn save_uai(net: &FactorNetwork) -> String {
    let mut out = String::new();
    out.push_str("MARKOV\n");
    let _ = writeln!(out, "{}", net.num_variables());
    let cards: Vec<String> = net
        .variables
        .iter()
        .map(|v| v.cardinality.to_string())
        .collect();
    let _ = writeln!(out, "{}", cards.join(" "));
    let _ = writeln!(out, "{}", net.factors.len());
    for f in &net.factors {
        let mut row = f.scope.len().to_string();
        for v in &f.scope {
            let _ = write!(row, " {v}");
        }
        out.push_str(&row);
        out.push('\n');
    }
    for f in &net.factors {
        out.push('\n');
        let _ = writeln!(out, "{}", f.table.len());
        let scale = f.log_scale.exp();
        let entries: Vec<String> = f
            .table
            .iter()
            .map(|&t| format!("{:.17e}", t * scale))
            .collect();
        let _ = writeln!(out, "{}", entries.join(" "));
    }
    out
}

/// Parse a `.evid` evidence file: observation count followed by
/// variable/value pairs.
pub fn load_evidence(text: &str) -> Result<BTreeMap<VarId, usize>> {
    let mut toks = Tokens::new(text);
    let count = toks.usize("evidence count")?;
    let mut evidence = BTreeMap::new();
    for _ in 0..count {
        let var = toks.usize("evidence variable id")?;
        let value = toks.usize("evidence value")?;
        evidence.insert(var, value);
    }
    Ok(evidence)
}

/// Render evidence in `.evid` form.
pub fn save_evidence(evidence: &BTreeMap<VarId, usize>) -> String {
    let mut out = format!("{}", evidence.len());
    for (v, x) in evidence {
        let _ = write!(out, " {v} {x}");
    }
    out.push('\n');
    out
}
