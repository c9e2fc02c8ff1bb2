//! Result tables in the `score [coverage]` cell style: two decimals, leading
//! zero dropped (`.82 [.81]`, `-.25`, `1.00`).

use std::fmt::Write as _;

use super::ScoredResult;

pub fn format_score(x: f64) -> String {
    let s = format!("{x:.2}");
    if let Some(rest) = s.strip_prefix("-0.") {
        format!("-.{rest}")
    } else if let Some(rest) = s.strip_prefix("0.") {
        format!(".{rest}")
    } else {
        s
    }
}

pub fn format_cell(r: &ScoredResult) -> String {
    format!("{} [{}]", format_score(r.score), format_score(r.coverage))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub name: String,
    /// One cell per column; `Err` carries the failure message for the task.
    pub cells: Vec<Result<ScoredResult, String>>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub columns: Vec<String>,
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn new(columns: Vec<String>) -> Self {
        Report {
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push_row(&mut self, name: impl Into<String>, cells: Vec<Result<ScoredResult, String>>) {
        assert_eq!(cells.len(), self.columns.len(), "row width must match the header");
        self.rows.push(ReportRow {
            name: name.into(),
            cells,
        });
    }

    pub fn has_errors(&self) -> bool {
        self.rows.iter().flat_map(|r| &r.cells).any(Result::is_err)
    }

    /// Aligned plain-text table.
    pub fn render_text(&self) -> String {
        let cell_text = |c: &Result<ScoredResult, String>| match c {
            Ok(r) => format_cell(r),
            Err(_) => "error".to_string(),
        };
        let mut table: Vec<Vec<String>> = vec![std::iter::once(String::new()).chain(self.columns.iter().cloned()).collect()];
        for row in &self.rows {
            table.push(std::iter::once(row.name.clone()).chain(row.cells.iter().map(cell_text)).collect());
        }
        let widths: Vec<usize> = (0..=self.columns.len())
            .map(|c| table.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();

        let mut out = String::new();
        for r in &table {
            let mut line = String::new();
            for (c, text) in r.iter().enumerate() {
                if c == 0 {
                    let _ = write!(line, "{text:<w$}", w = widths[c]);
                } else {
                    let _ = write!(line, "  {text:>w$}", w = widths[c]);
                }
            }
            out.push_str(line.trim_end());
            out.push('\n');
        }
        out
    }

    /// One line per cell: `row,column,score,coverage,n_used,n_total,error`.
    pub fn render_csv(&self) -> String {
        let mut out = String::from("row,column,score,coverage,n_used,n_total,error\n");
        for row in &self.rows {
            for (col, cell) in self.columns.iter().zip(&row.cells) {
                match cell {
                    Ok(r) => {
                        let _ = writeln!(
                            out,
                            "{},{},{},{},{},{},",
                            csv_field(&row.name),
                            csv_field(col),
                            r.score,
                            r.coverage,
                            r.n_used,
                            r.n_total
                        );
                    }
                    Err(e) => {
                        let _ = writeln!(out, "{},{},,,,,{}", csv_field(&row.name), csv_field(col), csv_field(e));
                    }
                }
            }
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
