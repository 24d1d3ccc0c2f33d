//! Plain-text tabular MDP format.
//!
//! ```text
//! <num_states> <num_actions> <discount>
//! <r(0,0)> <P(0|0,0)> ... <P(S-1|0,0)>
//! <r(0,1)> <P(0|0,1)> ...
//! ...
//! ```
//!
//! One line per `(s, a)` pair in state-major order. Blank lines and lines
//! starting with `#` are ignored.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::TabularMdp;
use crate::error::{Error, Result};

pub fn to_text(mdp: &TabularMdp) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{} {} {}",
        mdp.num_states(),
        mdp.num_actions(),
        mdp.discount()
    );
    for s in 0..mdp.num_states() {
        for a in 0..mdp.num_actions() {
            let _ = write!(out, "{}", mdp.reward(s, a));
            for p in mdp.kernel_row(s, a) {
                let _ = write!(out, " {p}");
            }
            out.push('\n');
        }
    }
    out
}

pub fn parse_text(source: &str, origin: &Path) -> Result<TabularMdp> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        message,
    };
    let mut lines = source
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (header_line, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "missing header line".into()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 3 {
        return Err(parse_err(
            header_line,
            format!("header needs `|S| |A| gamma`, found {} fields", fields.len()),
        ));
    }
    let num_states: usize = fields[0]
        .parse()
        .map_err(|e| parse_err(header_line, format!("|S|: {e}")))?;
    let num_actions: usize = fields[1]
        .parse()
        .map_err(|e| parse_err(header_line, format!("|A|: {e}")))?;
    let discount: f64 = fields[2]
        .parse()
        .map_err(|e| parse_err(header_line, format!("gamma: {e}")))?;

    let pairs = num_states * num_actions;
    let mut reward = Vec::with_capacity(pairs);
    let mut transition = Vec::with_capacity(pairs * num_states);
    for _ in 0..pairs {
        let (line_no, line) = lines
            .next()
            .ok_or_else(|| parse_err(header_line, format!("expected {pairs} pair lines")))?;
        let values = line
            .split_whitespace()
            .map(|tok| tok.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| parse_err(line_no, e.to_string()))?;
        if values.len() != num_states + 1 {
            return Err(parse_err(
                line_no,
                format!("expected {} numbers, found {}", num_states + 1, values.len()),
            ));
        }
        reward.push(values[0]);
        transition.extend_from_slice(&values[1..]);
    }
    if let Some((line_no, _)) = lines.next() {
        return Err(parse_err(line_no, "trailing data after the last pair".into()));
    }
    TabularMdp::new(num_states, num_actions, transition, reward, discount)
}

pub fn read_text(path: &Path) -> Result<TabularMdp> {
    let source = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_text(&source, path)
}

/// Loads an MDP by extension: `.json` for the structured form, anything
/// else as plain text.
pub fn load_mdp(path: &Path) -> Result<TabularMdp> {
    if path.extension().is_some_and(|ext| ext == "json") {
        let source = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&source)?)
    } else {
        read_text(path)
    }
}
