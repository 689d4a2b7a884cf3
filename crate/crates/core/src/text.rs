//! Row → natural-language serialization.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Cell, ColumnKind, Dataset, TableSchema};
use crate::error::{Error, Result};

/// Token limit of the reference table encoder.
pub const DEFAULT_TOKEN_LIMIT: usize = 512;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SerializedRow {
    pub row_id: u64,
    pub text: String,
    pub estimated_tokens: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenBudget {
    Ok,
    Warn { excess: usize },
}

/// Formats a real with at most six significant digits and no trailing
/// zeros, following C's `%g`.
pub fn format_number(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    // Round to 6 significant digits first so the exponent reflects carries.
    let sci = format!("{:.5e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn render_cell(cell: &Cell, kind: ColumnKind) -> String {
    match cell {
        None => "missing".to_string(),
        Some(v) => match kind {
            ColumnKind::Numeric => v
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .map(format_number)
                .unwrap_or_else(|| v.clone()),
            ColumnKind::Categorical => v.clone(),
        },
    }
}

pub fn estimate_tokens(text: &str) -> usize {
    let words = text.split_whitespace().count();
    (words * 13).div_ceil(10)
}

/// "The <column> is <value>." for each feature column in schema order.
pub fn serialize_row(row_id: u64, row: &[Cell], schema: &TableSchema) -> SerializedRow {
    let text = schema
        .columns
        .iter()
        .zip(row)
        .map(|(col, cell)| format!("The {} is {}.", col.name, render_cell(cell, col.kind)))
        .collect::<Vec<_>>()
        .join(" ");
    let estimated_tokens = estimate_tokens(&text);
    SerializedRow {
        row_id,
        text,
        estimated_tokens,
    }
}

pub fn serialize_dataset(d: &Dataset) -> Vec<SerializedRow> {
    d.rows
        .iter()
        .zip(&d.row_ids)
        .map(|(row, &id)| serialize_row(id, row, &d.schema))
        .collect()
}

pub fn check_token_budget(s: &SerializedRow, limit: usize) -> TokenBudget {
    if s.estimated_tokens > limit {
        TokenBudget::Warn {
            excess: s.estimated_tokens - limit,
        }
    } else {
        TokenBudget::Ok
    }
}

#[derive(Serialize, Deserialize)]
struct CorpusLine {
    row_id: u64,
    text: String,
}

/// Writes one `{"row_id": …, "text": …}` object per line.
pub fn write_corpus(rows: &[SerializedRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in rows {
        let line = serde_json::to_string(&CorpusLine {
            row_id: r.row_id,
            text: r.text.clone(),
        })?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<SerializedRow>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let CorpusLine { row_id, text } = serde_json::from_str(&line)?;
        let estimated_tokens = estimate_tokens(&text);
        out.push(SerializedRow {
            row_id,
            text,
            estimated_tokens,
        });
    }
    Ok(out)
}
