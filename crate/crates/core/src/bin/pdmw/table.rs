//! Output tables rendered either as aligned text or as JSON.

use serde_json::{Map, Value};

#[derive(Debug, Clone)]
pub struct Table {
    pub title: &'static str,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(title: &'static str, columns: &[&'static str]) -> Self {
        Table {
            title,
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// Left-aligned columns separated by two spaces, no trailing blanks.
    pub fn text(&self) -> String {
        let mut widths: Vec<usize> = self.columns.iter().map(|c| c.chars().count()).collect();
        for row in &self.rows {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let line = |cells: Vec<&str>| {
            let mut out = String::new();
            for (i, (cell, w)) in cells.iter().zip(&widths).enumerate() {
                if i > 0 {
                    out.push_str("  ");
                }
                out.push_str(cell);
                out.extend(std::iter::repeat_n(' ', w - cell.chars().count()));
            }
            out.trim_end().to_string() + "\n"
        };
        let mut out = line(self.columns.clone());
        for row in &self.rows {
            out.push_str(&line(row.iter().map(String::as_str).collect()));
        }
        out
    }

    pub fn json(&self) -> Value {
        Value::Array(
            self.rows
                .iter()
                .map(|row| {
                    let obj: Map<String, Value> = self
                        .columns
                        .iter()
                        .zip(row)
                        .map(|(c, v)| (c.to_string(), Value::String(v.clone())))
                        .collect();
                    Value::Object(obj)
                })
                .collect(),
        )
    }
}

/// Renders one or more tables. Several tables become titled text blocks, or
/// one JSON object keyed by title.
pub fn render(tables: &[Table], json: bool) -> String {
    if json {
        let value = match tables {
            [one] => one.json(),
            many => Value::Object(
                many.iter()
                    .map(|t| (t.title.to_string(), t.json()))
                    .collect(),
            ),
        };
        return serde_json::to_string_pretty(&value).expect("json renders") + "\n";
    }
    match tables {
        [one] => one.text(),
        many => many
            .iter()
            .map(|t| format!("[{}]\n{}", t.title, t.text()))
            .collect::<Vec<_>>()
            .join("\n"),
    }
}
