//! Sparse count files, model files, vocabularies and the ranked-tuple report.
//!
//! All indices in files are 1-based.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{GrmError, Result};
use crate::family::Family;
use crate::model::GrmModel;
use crate::tensor::Key;

pub const MODEL_FORMAT_VERSION: u32 = 1;
const MODEL_MAGIC: &str = "grm-model";

/// Sparse `n × p` data as `(instance, variable, value)` triplets, 0-based.
#[derive(Debug, Clone, PartialEq)]
pub struct CountMatrix {
    pub n: usize,
    pub p: usize,
    pub triplets: Vec<(usize, usize, f64)>,
}

impl CountMatrix {
    /// Nonzero entries of a dense row-major matrix.
    pub fn from_dense(x: &[Vec<f64>]) -> Result<Self> {
        let p = x.first().map(|r| r.len()).unwrap_or(0);
        let mut triplets = Vec::new();
        for (i, row) in x.iter().enumerate() {
            if row.len() != p {
                return Err(GrmError::DimensionMismatch {
                    expected: p,
                    got: row.len(),
                });
            }
            for (v, &c) in row.iter().enumerate() {
                if c != 0.0 {
                    triplets.push((i, v, c));
                }
            }
        }
        Ok(CountMatrix { n: x.len(), p, triplets })
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut x = vec![vec![0.0; self.p]; self.n];
        for &(i, v, c) in &self.triplets {
            x[i][v] = c;
        }
        x
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| GrmError::Io(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| GrmError::Io(format!("{}: {e}", path.display())))
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let line = raw.split('#').next().unwrap_or("").trim();
        (!line.is_empty()).then_some((i + 1, line))
    })
}

fn parse_field<T: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T> {
    let tok = tok.ok_or_else(|| GrmError::Parse {
        line,
        msg: format!("missing {what}"),
    })?;
    tok.parse().map_err(|_| GrmError::Parse {
        line,
        msg: format!("invalid {what} '{tok}'"),
    })
}

fn expect_end<'a>(mut toks: impl Iterator<Item = &'a str>, line: usize) -> Result<()> {
    match toks.next() {
        None => Ok(()),
        Some(t) => Err(GrmError::Parse {
            line,
            msg: format!("unexpected trailing field '{t}'"),
        }),
    }
}

/// Parses the counts format: a header `n p nnz`, then `nnz` lines `i v c`.
pub fn parse_counts(text: &str) -> Result<CountMatrix> {
    let mut lines = content_lines(text);
    let (hline, header) = lines.next().ok_or_else(|| GrmError::Parse {
        line: 1,
        msg: "missing header 'n p nnz'".into(),
    })?;
    let mut toks = header.split_whitespace();
    let n: usize = parse_field(toks.next(), hline, "n")?;
    let p: usize = parse_field(toks.next(), hline, "p")?;
    let nnz: usize = parse_field(toks.next(), hline, "nnz")?;
    expect_end(toks, hline)?;

    let mut seen = HashSet::with_capacity(nnz);
    let mut triplets = Vec::with_capacity(nnz);
    let mut last_line = hline;
    for (line, content) in lines {
        last_line = line;
        if triplets.len() == nnz {
            return Err(GrmError::Parse {
                line,
                msg: format!("more than the {nnz} entries announced in the header"),
            });
        }
        let mut toks = content.split_whitespace();
        let i: usize = parse_field(toks.next(), line, "instance index")?;
        let v: usize = parse_field(toks.next(), line, "variable index")?;
        let c: f64 = parse_field(toks.next(), line, "count")?;
        expect_end(toks, line)?;
        if i == 0 || i > n {
            return Err(GrmError::Range {
                line,
                msg: format!("instance index {i} outside 1..={n}"),
            });
        }
        if v == 0 || v > p {
            return Err(GrmError::Range {
                line,
                msg: format!("variable index {v} outside 1..={p}"),
            });
        }
        if !(c >= 0.0) || !c.is_finite() {
            return Err(GrmError::Parse {
                line,
                msg: format!("count must be a finite value >= 0, got {c}"),
            });
        }
        if !seen.insert((i, v)) {
            return Err(GrmError::Parse {
                line,
                msg: format!("duplicate entry ({i}, {v})"),
            });
        }
        triplets.push((i - 1, v - 1, c));
    }
    if triplets.len() != nnz {
        return Err(GrmError::Parse {
            line: last_line,
            msg: format!("header announces {nnz} entries, found {}", triplets.len()),
        });
    }
    Ok(CountMatrix { n, p, triplets })
}

pub fn read_counts(path: impl AsRef<Path>) -> Result<CountMatrix> {
    parse_counts(&read_text(path.as_ref())?)
}

/// Inverse of [`parse_counts`]; values use the shortest decimal that reads back exactly.
pub fn format_counts(m: &CountMatrix) -> String {
    let mut out = String::new();
    writeln!(out, "{} {} {}", m.n, m.p, m.triplets.len()).unwrap();
    for &(i, v, c) in &m.triplets {
        writeln!(out, "{} {} {}", i + 1, v + 1, c).unwrap();
    }
    out
}

pub fn write_counts(path: impl AsRef<Path>, m: &CountMatrix) -> Result<()> {
    write_text(path.as_ref(), &format_counts(m))
}

/// The versioned text form of a model. Values are written with `{:?}`, the
/// shortest decimal that parses back to the same bits.
pub fn format_model(m: &GrmModel) -> String {
    let mut out = String::new();
    writeln!(out, "{MODEL_MAGIC}").unwrap();
    writeln!(out, "version {MODEL_FORMAT_VERSION}").unwrap();
    writeln!(out, "family {}", m.family()).unwrap();
    writeln!(out, "p {}", m.p()).unwrap();
    writeln!(out, "k {}", m.k()).unwrap();
    writeln!(out, "simplified {}", m.simplified()).unwrap();
    for ((l, j), t) in m.blocks() {
        writeln!(out, "tensor {l} {j} {}", t.nnz()).unwrap();
        for (key, value) in t.iter() {
            for i in key {
                write!(out, "{} ", i + 1).unwrap();
            }
            writeln!(out, "{value:?}").unwrap();
        }
    }
    out
}

pub fn write_model(path: impl AsRef<Path>, m: &GrmModel) -> Result<()> {
    write_text(path.as_ref(), &format_model(m))
}

fn header_value<'a>(lines: &mut impl Iterator<Item = (usize, &'a str)>, name: &str) -> Result<(usize, &'a str)> {
    let (line, content) = lines.next().ok_or_else(|| GrmError::Parse {
        line: 0,
        msg: format!("missing '{name}' field"),
    })?;
    match content.split_once(char::is_whitespace) {
        Some((field, value)) if field == name => Ok((line, value.trim())),
        _ => Err(GrmError::Parse {
            line,
            msg: format!("expected '{name} <value>', got '{content}'"),
        }),
    }
}

pub fn parse_model(text: &str) -> Result<GrmModel> {
    let mut lines = content_lines(text);
    match lines.next() {
        Some((_, MODEL_MAGIC)) => {}
        Some((line, other)) => {
            return Err(GrmError::Parse {
                line,
                msg: format!("expected '{MODEL_MAGIC}', got '{other}'"),
            })
        }
        None => {
            return Err(GrmError::Parse {
                line: 1,
                msg: "empty model file".into(),
            })
        }
    }
    let (_, version) = header_value(&mut lines, "version")?;
    if version != MODEL_FORMAT_VERSION.to_string() {
        return Err(GrmError::Version(version.to_string()));
    }
    let (line, family) = header_value(&mut lines, "family")?;
    let family: Family = family.parse().map_err(|_| GrmError::Parse {
        line,
        msg: format!("unknown family '{family}'"),
    })?;
    let (line, p) = header_value(&mut lines, "p")?;
    let p: usize = parse_field(Some(p), line, "p")?;
    let (line, k) = header_value(&mut lines, "k")?;
    let k: usize = parse_field(Some(k), line, "k")?;
    let (line, simplified) = header_value(&mut lines, "simplified")?;
    let simplified: bool = parse_field(Some(simplified), line, "simplified flag")?;
    let mut model = GrmModel::new(family, p, k, simplified).map_err(|e| GrmError::Parse {
        line,
        msg: e.to_string(),
    })?;

    let mut seen: HashSet<(usize, usize, Key)> = HashSet::new();
    while let Some((line, content)) = lines.next() {
        let mut toks = content.split_whitespace();
        if toks.next() != Some("tensor") {
            return Err(GrmError::Parse {
                line,
                msg: format!("expected 'tensor <ell> <j> <nnz>', got '{content}'"),
            });
        }
        let l: usize = parse_field(toks.next(), line, "ell")?;
        let j: usize = parse_field(toks.next(), line, "j")?;
        let nnz: usize = parse_field(toks.next(), line, "nnz")?;
        expect_end(toks, line)?;
        if model.tensor(l, j).is_none() {
            return Err(GrmError::Range {
                line,
                msg: format!("block ({l}, {j}) does not exist in this model"),
            });
        }
        for _ in 0..nnz {
            let (eline, entry) = lines.next().ok_or_else(|| GrmError::Parse {
                line,
                msg: format!("block ({l}, {j}) ends before its {nnz} entries"),
            })?;
            let toks: Vec<&str> = entry.split_whitespace().collect();
            if toks.len() != l + 1 {
                return Err(GrmError::Parse {
                    line: eline,
                    msg: format!("expected {l} indices and a value"),
                });
            }
            let mut key: Key = Vec::with_capacity(l);
            for t in &toks[..l] {
                let i: usize = parse_field(Some(t), eline, "index")?;
                if i == 0 || i > p {
                    return Err(GrmError::Range {
                        line: eline,
                        msg: format!("index {i} outside 1..={p}"),
                    });
                }
                key.push(i - 1);
            }
            let value: f64 = parse_field(Some(toks[l]), eline, "value")?;
            let mut sorted = key.clone();
            sorted.sort_unstable();
            if !seen.insert((l, j, sorted)) {
                return Err(GrmError::Parse {
                    line: eline,
                    msg: "duplicate tensor entry".into(),
                });
            }
            model.tensor_mut(l, j)?.set(&key, value).map_err(|e| GrmError::Parse {
                line: eline,
                msg: e.to_string(),
            })?;
        }
    }
    Ok(model)
}

pub fn read_model(path: impl AsRef<Path>) -> Result<GrmModel> {
    parse_model(&read_text(path.as_ref())?)
}

/// One token per line; line `v` names variable `v`.
pub fn read_vocab(path: impl AsRef<Path>) -> Result<Vec<String>> {
    Ok(read_text(path.as_ref())?.lines().map(|l| l.trim().to_string()).collect())
}

/// Names `x1, x2, …` for models without a vocabulary.
pub fn default_vocab(p: usize) -> Vec<String> {
    (1..=p).map(|v| format!("x{v}")).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedEntry {
    pub key: Key,
    pub value: f64,
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportSection {
    pub l: usize,
    pub j: usize,
    pub positive: Vec<RankedEntry>,
    pub negative: Vec<RankedEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub sections: Vec<ReportSection>,
}

/// The `top_n` most positive and most negative entries of every block.
///
/// Order-1 blocks have no sign-based meaning of their own (they hold the
/// node-wise linear terms), so they are ranked as "largest"/"smallest".
/// Ties are broken by the lexicographic order of the keys.
pub fn report_top(m: &GrmModel, vocab: &[String], top_n: usize) -> Result<Report> {
    if vocab.len() < m.p() {
        return Err(GrmError::DimensionMismatch {
            expected: m.p(),
            got: vocab.len(),
        });
    }
    let entry = |key: &Key, value: f64| RankedEntry {
        key: key.clone(),
        value,
        tokens: key.iter().map(|&i| vocab[i].clone()).collect(),
    };
    let mut sections = Vec::new();
    for ((l, j), t) in m.blocks() {
        let (mut pos, mut neg): (Vec<(&Key, f64)>, Vec<(&Key, f64)>) = if l == 1 {
            let all: Vec<(&Key, f64)> = t.iter().collect();
            (all.clone(), all)
        } else {
            (
                t.iter().filter(|(_, v)| *v > 0.0).collect(),
                t.iter().filter(|(_, v)| *v < 0.0).collect(),
            )
        };
        pos.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        neg.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
        sections.push(ReportSection {
            l,
            j,
            positive: pos.into_iter().take(top_n).map(|(k, v)| entry(k, v)).collect(),
            negative: neg.into_iter().take(top_n).map(|(k, v)| entry(k, v)).collect(),
        });
    }
    Ok(Report { sections })
}

fn render_list(out: &mut String, title: &str, entries: &[RankedEntry], sep: &str) {
    writeln!(out, "{title}").unwrap();
    for e in entries {
        writeln!(out, "{:7.4}  {}", e.value, e.tokens.join(sep)).unwrap();
    }
    writeln!(out).unwrap();
}

impl Report {
    /// Plain-text listing, one header line per list.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for s in &self.sections {
            let (pos, neg) = if s.l == 1 { ("Largest", "Smallest") } else { ("Positive", "Negative") };
            render_list(
                &mut out,
                &format!("<<< {pos} {}-tuples, j = {}, ell = {} >>>", s.l, s.j, s.l),
                &s.positive,
                " + ",
            );
            render_list(
                &mut out,
                &format!("<<< {neg} {}-tuples, j = {}, ell = {} >>>", s.l, s.j, s.l),
                &s.negative,
                " - ",
            );
        }
        out
    }
}
