//! `DBRSFG` graph files and 8-bit binary PGM images.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::graph::{FactorGraph, GraphError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("invalid model spec: {0}")]
    Spec(String),
}

fn parse_err(line: usize, message: impl Into<String>) -> ModelError {
    ModelError::Parse {
        line,
        message: message.into(),
    }
}

/// Serializes a graph in the `DBRSFG 1` text format.
pub fn write_graph(graph: &FactorGraph) -> String {
    let mut out = String::new();
    out.push_str("DBRSFG 1\n");
    let _ = writeln!(out, "{} {}", graph.num_variables(), graph.num_factors());
    out.push_str(&join(graph.cardinalities()));
    out.push('\n');
    for f in graph.factors() {
        let _ = write!(out, "{}", f.scope().len());
        for v in f.scope() {
            let _ = write!(out, " {v}");
        }
        out.push('\n');
        out.push_str(&join(f.table()));
        out.push('\n');
    }
    out
}

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    let mut s = String::new();
    for (i, x) in items.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{x}");
    }
    s
}

/// Parses the `DBRSFG 1` text format. Blank lines are skipped.
pub fn read_graph(text: &str) -> Result<FactorGraph, ModelError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let mut next = |what: &str| {
        lines.next().ok_or_else(|| {
            parse_err(
                text.lines().count() + 1,
                format!("unexpected end of file, expected {what}"),
            )
        })
    };

    let (ln, header) = next("header")?;
    if header.split_whitespace().collect::<Vec<_>>() != ["DBRSFG", "1"] {
        return Err(parse_err(ln, format!("bad header {header:?}, expected \"DBRSFG 1\"")));
    }
    let (ln, counts) = next("variable and factor counts")?;
    let counts: Vec<usize> = parse_list(ln, counts)?;
    let [n_vars, n_factors] = counts[..] else {
        return Err(parse_err(ln, "expected `<n_vars> <n_factors>`"));
    };
    let (ln, cards) = if n_vars == 0 { (ln, "") } else { next("cardinalities")? };
    let cards: Vec<usize> = parse_list(ln, cards)?;
    if cards.len() != n_vars {
        return Err(parse_err(
            ln,
            format!("expected {n_vars} cardinalities, found {}", cards.len()),
        ));
    }
    if let Some(v) = cards.iter().position(|&c| c == 0) {
        return Err(parse_err(ln, format!("variable {v} has cardinality 0")));
    }

    let mut factors = Vec::with_capacity(n_factors);
    for fi in 0..n_factors {
        let (ln, scope_line) = next("factor scope")?;
        let nums: Vec<usize> = parse_list(ln, scope_line)?;
        let Some((&arity, scope)) = nums.split_first() else {
            return Err(parse_err(ln, "empty scope line"));
        };
        if arity == 0 || scope.len() != arity {
            return Err(parse_err(
                ln,
                format!("factor {fi}: arity {arity} but {} variables listed", scope.len()),
            ));
        }
        if let Some(&v) = scope.iter().find(|&&v| v >= n_vars) {
            return Err(parse_err(ln, format!("factor {fi}: variable {v} out of range")));
        }
        let size: usize = scope.iter().map(|&v| cards[v]).product();
        let (ln, table_line) = next("factor table")?;
        let table: Vec<f64> = parse_list(ln, table_line)?;
        if table.len() != size {
            return Err(parse_err(
                ln,
                format!("factor {fi}: table has {} entries, expected {size}", table.len()),
            ));
        }
        if let Some(i) = table.iter().position(|&t| !(t.is_finite() && t > 0.0)) {
            return Err(parse_err(
                ln,
                format!("factor {fi}: entry {i} is {}; entries must be positive", table[i]),
            ));
        }
        factors.push((scope.to_vec(), table));
    }
    if let Some((ln, _)) = lines.next() {
        return Err(parse_err(ln, "trailing content after the last factor"));
    }
    Ok(FactorGraph::new(cards, factors)?)
}

fn parse_list<T: std::str::FromStr>(line: usize, text: &str) -> Result<Vec<T>, ModelError> {
    text.split_whitespace()
        .map(|tok| {
            tok.parse()
                .map_err(|_| parse_err(line, format!("cannot parse {tok:?}")))
        })
        .collect()
}

pub fn save_graph(graph: &FactorGraph, path: impl AsRef<Path>) -> Result<(), ModelError> {
    fs::write(path, write_graph(graph))?;
    Ok(())
}

pub fn load_graph(path: impl AsRef<Path>) -> Result<FactorGraph, ModelError> {
    read_graph(&fs::read_to_string(path)?)
}

/// A grayscale 8-bit image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    /// Row-major pixels.
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    /// Parses a binary P5 file with maxval 255. `#` comments in the header are allowed.
    pub fn from_pgm(bytes: &[u8]) -> Result<Self, ModelError> {
        let mut fields = Vec::with_capacity(4);
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(parse_err(1, "truncated PGM header"));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        if fields[0] != "P5" {
            return Err(parse_err(1, format!("expected P5 magic, found {:?}", fields[0])));
        }
        let num = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| parse_err(1, format!("bad PGM header field {s:?}")))
        };
        let (width, height, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
        if maxval != 255 {
            return Err(parse_err(1, format!("only 8-bit PGM supported, maxval {maxval}")));
        }
        pos += 1;
        let pixels = bytes
            .get(pos..pos + width * height)
            .ok_or_else(|| parse_err(1, "truncated PGM data"))?;
        Ok(Self {
            width,
            height,
            pixels: pixels.to_vec(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        fs::write(path, self.to_pgm())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        Self::from_pgm(&fs::read(path)?)
    }
}
