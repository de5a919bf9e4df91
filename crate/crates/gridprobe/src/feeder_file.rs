//! Plain-text feeder description.
//!
//! ```text
//! # comment
//! [lines]
//! # id  from  to  r  x  switchable  status
//! L1    0     1   1.0  1.0  no  on
//! L2    1     2   2.0  1.0  yes off
//!
//! [loads]
//! # bus  p  q
//! 1  0.5  0.16
//! ```
//!
//! Bus 0 is the substation. Buses without a load row carry no load.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use gridprobe_core::feeder::{Feeder, Line, Load};

use crate::error::{io_err, Error, Result};

#[derive(Debug, Clone)]
pub struct FeederDocument {
    pub feeder: Feeder,
    pub line_ids: Vec<String>,
}

impl FeederDocument {
    /// Serializes back to the text format; `parse` of the output reproduces
    /// the feeder exactly.
    pub fn to_text(&self) -> String {
        let f = &self.feeder;
        let mut out = String::from("[lines]\n# id  from  to  r  x  switchable  status\n");
        for ((id, line), &on) in self.line_ids.iter().zip(f.lines()).zip(f.status()) {
            let _ = writeln!(
                out,
                "{id} {} {} {} {} {} {}",
                line.from,
                line.to,
                line.r,
                line.x,
                if line.switchable { "yes" } else { "no" },
                if on { "on" } else { "off" }
            );
        }
        out.push_str("\n[loads]\n# bus  p  q\n");
        for (bus, load) in f.loads().iter().enumerate().skip(1) {
            if load.p != 0.0 || load.q != 0.0 {
                let _ = writeln!(out, "{bus} {} {}", load.p, load.q);
            }
        }
        out
    }

    pub fn line_index(&self, id: &str) -> Option<usize> {
        self.line_ids.iter().position(|l| l == id)
    }
}

pub fn load_feeder(path: impl AsRef<Path>) -> Result<Feeder> {
    Ok(load_feeder_document(path)?.feeder)
}

pub fn load_feeder_document(path: impl AsRef<Path>) -> Result<FeederDocument> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_feeder(&text).map_err(|e| match e {
        Error::Parse {
            line, column, message, ..
        } => Error::Parse {
            path: Some(PathBuf::from(path)),
            line,
            column,
            message,
        },
        other => other,
    })
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    None,
    Lines,
    Loads,
}

struct Token<'a> {
    text: &'a str,
    column: usize,
}

fn tokens(line: &str) -> Vec<Token<'_>> {
    let body = line.split('#').next().unwrap_or("");
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in body.char_indices().chain([(body.len(), ' ')]) {
        match (c.is_whitespace(), start) {
            (false, None) => start = Some(i),
            (true, Some(s)) => {
                out.push(Token {
                    text: &body[s..i],
                    column: body[..s].chars().count() + 1,
                });
                start = None;
            }
            _ => {}
        }
    }
    out
}

fn err(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: None,
        line,
        column,
        message: message.into(),
    }
}

fn parse_num<T: std::str::FromStr>(tok: &Token<'_>, line: usize, what: &str) -> Result<T> {
    tok.text
        .parse()
        .map_err(|_| err(line, tok.column, format!("{what}: cannot parse `{}`", tok.text)))
}

fn parse_flag(tok: &Token<'_>, line: usize, yes: &[&str], no: &[&str], what: &str) -> Result<bool> {
    let t = tok.text.to_ascii_lowercase();
    if yes.contains(&t.as_str()) {
        Ok(true)
    } else if no.contains(&t.as_str()) {
        Ok(false)
    } else {
        Err(err(line, tok.column, format!("{what}: expected one of {yes:?} or {no:?}, got `{}`", tok.text)))
    }
}

pub fn parse_feeder(text: &str) -> Result<FeederDocument> {
    let mut section = Section::None;
    let mut lines_header = 0;
    let mut ids: Vec<String> = Vec::new();
    let mut id_rows: HashMap<String, usize> = HashMap::new();
    let mut lines: Vec<Line> = Vec::new();
    let mut status: Vec<bool> = Vec::new();
    let mut loads: Vec<(usize, usize, usize, Load)> = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let ln = i + 1;
        let toks = tokens(raw);
        let Some(first) = toks.first() else { continue };
        if first.text.starts_with('[') {
            section = match first.text {
                "[lines]" => {
                    lines_header = ln;
                    Section::Lines
                }
                "[loads]" => Section::Loads,
                other => return Err(err(ln, first.column, format!("unknown section `{other}`"))),
            };
            if let Some(extra) = toks.get(1) {
                return Err(err(ln, extra.column, "unexpected text after section header"));
            }
            continue;
        }
        match section {
            Section::None => return Err(err(ln, first.column, "data before the first section header")),
            Section::Lines => {
                if toks.len() != 7 {
                    let col = toks.get(7).map_or(raw.len() + 1, |t| t.column);
                    return Err(err(ln, col, format!("line rows have 7 fields, found {}", toks.len())));
                }
                let id = toks[0].text.to_string();
                if let Some(prev) = id_rows.get(&id) {
                    return Err(err(ln, toks[0].column, format!("duplicate line id `{id}` (first on line {prev})")));
                }
                let from: usize = parse_num(&toks[1], ln, "from bus")?;
                let to: usize = parse_num(&toks[2], ln, "to bus")?;
                if from == to {
                    return Err(err(ln, toks[2].column, "line connects a bus to itself"));
                }
                let r: f64 = parse_num(&toks[3], ln, "resistance")?;
                let x: f64 = parse_num(&toks[4], ln, "reactance")?;
                if !(r > 0.0 && r.is_finite()) {
                    return Err(err(ln, toks[3].column, format!("resistance must be positive, got {r}")));
                }
                if !(x > 0.0 && x.is_finite()) {
                    return Err(err(ln, toks[4].column, format!("reactance must be positive, got {x}")));
                }
                let sw = parse_flag(&toks[5], ln, &["yes", "true", "1"], &["no", "false", "0"], "switchable")?;
                let on = parse_flag(&toks[6], ln, &["on", "closed", "1"], &["off", "open", "0"], "status")?;
                let mut line = Line::new(from, to, r, x);
                if sw {
                    line = line.switchable();
                }
                id_rows.insert(id.clone(), ln);
                ids.push(id);
                lines.push(line);
                status.push(on);
            }
            Section::Loads => {
                if toks.len() != 3 {
                    let col = toks.get(3).map_or(raw.len() + 1, |t| t.column);
                    return Err(err(ln, col, format!("load rows have 3 fields, found {}", toks.len())));
                }
                let bus: usize = parse_num(&toks[0], ln, "bus")?;
                if bus == 0 {
                    return Err(err(ln, toks[0].column, "the substation carries no load"));
                }
                let p = parse_num(&toks[1], ln, "p")?;
                let q = parse_num(&toks[2], ln, "q")?;
                loads.push((ln, toks[0].column, bus, Load { p, q }));
            }
        }
    }
    if lines.is_empty() {
        return Err(err(lines_header.max(1), 1, "no lines"));
    }
    let bus_count = lines.iter().map(|l| l.from.max(l.to)).max().unwrap_or(0) + 1;
    let mut load_vec = vec![Load { p: 0.0, q: 0.0 }; bus_count];
    let mut seen = vec![0usize; bus_count];
    for (ln, col, bus, load) in loads {
        if bus >= bus_count {
            return Err(err(ln, col, format!("bus {bus} is not an endpoint of any line")));
        }
        if seen[bus] != 0 {
            return Err(err(ln, col, format!("bus {bus} already has a load (line {})", seen[bus])));
        }
        seen[bus] = ln;
        load_vec[bus] = load;
    }
    let feeder = Feeder::new(bus_count, lines, status, load_vec)
        .map_err(|e| err(lines_header, 1, e.to_string()))?;
    if !feeder.candidate_graph_connected() {
        return Err(err(lines_header, 1, "candidate lines do not connect all buses"));
    }
    Ok(FeederDocument { feeder, line_ids: ids })
}
