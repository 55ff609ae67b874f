//! Markdown table rendering and tolerant parsing.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The label of the query row in a statistics table.
pub const QUERY_ROW: &str = "QUERY";

fn clean_cell(cell: &str) -> String {
    let mut s = cell.trim();
    for marker in ["**", "__"] {
        while let Some(inner) = s.strip_prefix(marker).and_then(|t| t.strip_suffix(marker)) {
            s = inner.trim();
        }
    }
    s.replace("**", "").trim().to_string()
}

fn is_separator(cells: &[String]) -> bool {
    cells
        .iter()
        .all(|c| !c.is_empty() && c.chars().all(|ch| matches!(ch, '-' | ':' | ' ')))
}

/// Splits every pipe-delimited line into trimmed cells, tolerating missing
/// outer pipes, padding and bold markers. Separator rows are dropped; other
/// lines without a pipe are ignored.
pub fn parse_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .filter(|l| l.contains('|'))
        .filter_map(|line| {
            let t = line.trim();
            let t = t.strip_prefix('|').unwrap_or(t);
            let t = t.strip_suffix('|').unwrap_or(t);
            let cells: Vec<String> = t.split('|').map(clean_cell).collect();
            (!is_separator(&cells)).then_some(cells)
        })
        .collect()
}

/// Data rows of a table whose first header cell is `Index`: header rows are
/// skipped and rows with a different cell count are rejected individually.
pub fn parse_indexed_table(text: &str, columns: usize) -> Vec<Vec<String>> {
    parse_rows(text)
        .into_iter()
        .filter(|r| r.len() == columns)
        .filter(|r| !r[0].eq_ignore_ascii_case("index"))
        .collect()
}

pub fn render_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = format!("| {} |\n", header.join(" | "));
    out.push_str(&format!("|{}\n", "---|".repeat(header.len())));
    for r in rows {
        out.push_str(&format!("| {} |\n", r.join(" | ")));
    }
    out.pop();
    out
}

/// Formats `x` with four significant digits: positional notation for
/// magnitudes in `[1e-4, 1e6)`, scientific otherwise.
pub fn sig4(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let e = x.abs().log10().floor() as i32;
    let rounded: f64 = format!("{x:.3e}").parse().expect("formatted float parses");
    let e = if rounded.abs() >= 10f64.powi(e + 1) { e + 1 } else { e };
    if (-4..6).contains(&e) {
        let decimals = (3 - e).max(0) as usize;
        format!("{rounded:.decimals$}")
    } else {
        format!("{x:.3e}")
    }
}

fn parse_number(s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::invalid(format!("not a number: `{s}`")))
}

/// Per-class mean and standard deviation of selected features, plus the
/// query's values.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsTable {
    pub features: Vec<String>,
    pub class_rows: BTreeMap<String, Vec<(f64, f64)>>,
    pub query_row: Vec<f64>,
}

impl StatsTable {
    pub fn to_markdown(&self) -> String {
        let mut header = vec!["Activity"];
        header.extend(self.features.iter().map(String::as_str));
        let mut rows: Vec<Vec<String>> = self
            .class_rows
            .iter()
            .map(|(class, cells)| {
                std::iter::once(class.clone())
                    .chain(cells.iter().map(|(m, s)| format!("{} ± {}", sig4(*m), sig4(*s))))
                    .collect()
            })
            .collect();
        rows.push(
            std::iter::once(QUERY_ROW.to_string())
                .chain(self.query_row.iter().map(|v| sig4(*v)))
                .collect(),
        );
        render_table(&header, &rows)
    }

    /// Parses a table rendered by [`StatsTable::to_markdown`]; values come
    /// back at the rendered precision.
    pub fn from_markdown(text: &str) -> Result<Self> {
        let rows = parse_rows(text);
        let (header, body) = rows
            .split_first()
            .ok_or_else(|| Error::invalid("empty statistics table"))?;
        let features: Vec<String> = header.iter().skip(1).cloned().collect();
        let mut class_rows = BTreeMap::new();
        let mut query_row = None;
        for r in body {
            if r.len() != features.len() + 1 {
                return Err(Error::invalid(format!("row `{}` has {} cells", r[0], r.len())));
            }
            if r[0] == QUERY_ROW {
                query_row = Some(r[1..].iter().map(|c| parse_number(c)).collect::<Result<Vec<_>>>()?);
                continue;
            }
            let cells = r[1..]
                .iter()
                .map(|c| {
                    let (m, s) = c
                        .split_once('±')
                        .ok_or_else(|| Error::invalid(format!("cell `{c}` lacks ±")))?;
                    Ok((parse_number(m)?, parse_number(s)?))
                })
                .collect::<Result<Vec<_>>>()?;
            class_rows.insert(r[0].clone(), cells);
        }
        Ok(Self {
            features,
            class_rows,
            query_row: query_row.ok_or_else(|| Error::invalid("statistics table lacks a QUERY row"))?,
        })
    }

    /// Average over features of `|query - mean| / max(std, eps)` per class.
    pub fn z_distances(&self, eps: f64) -> BTreeMap<String, f64> {
        let d = self.features.len().max(1) as f64;
        self.class_rows
            .iter()
            .map(|(class, cells)| {
                let total: f64 = cells
                    .iter()
                    .zip(&self.query_row)
                    .map(|((m, s), q)| (q - m).abs() / s.max(eps))
                    .sum();
                (class.clone(), total / d)
            })
            .collect()
    }
}
