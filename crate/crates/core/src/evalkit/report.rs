use std::fmt::Write as _;
use std::path::Path;

use super::{Cell, MetricReport};
use crate::dataio::{read_locked, write_locked};
use crate::error::Result;

pub fn write_report(path: &Path, report: &MetricReport) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    write_locked(path, text.as_bytes())
}

pub fn read_report(path: &Path) -> Result<MetricReport> {
    Ok(serde_json::from_slice(&read_locked(path)?)?)
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

fn table(header: &[String], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut width = vec![0; cols];
    for r in std::iter::once(header).chain(rows.iter().map(|r| r.as_slice())) {
        for (i, c) in r.iter().enumerate() {
            width[i] = width[i].max(c.chars().count());
        }
    }
    let line = |r: &[String]| {
        let cells: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(i, c)| if i == 0 { format!("{c:<w$}", w = width[i]) } else { format!("{c:>w$}", w = width[i]) })
            .collect();
        cells.join("  ").trim_end().to_string()
    };
    let mut out = String::new();
    writeln!(out, "{}", line(header)).unwrap();
    writeln!(out, "{}", width.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  ")).unwrap();
    for r in rows {
        writeln!(out, "{}", line(r)).unwrap();
    }
    out
}

/// Models as rows, EM/PM/MR per split as columns, percentages. Rows and
/// splits keep their first-seen order; later reports for the same pair win.
pub fn render_comparison(reports: &[MetricReport]) -> String {
    let mut models: Vec<&str> = Vec::new();
    let mut splits: Vec<&str> = Vec::new();
    for r in reports {
        if !models.contains(&r.model.as_str()) {
            models.push(&r.model);
        }
        if !splits.contains(&r.split.as_str()) {
            splits.push(&r.split);
        }
    }
    let mut header = vec!["model".to_string()];
    for s in &splits {
        for m in ["EM", "PM", "MR"] {
            header.push(format!("{s} {m}"));
        }
    }
    let rows: Vec<Vec<String>> = models
        .iter()
        .map(|m| {
            let mut row = vec![m.to_string()];
            for s in &splits {
                match reports.iter().rev().find(|r| r.model == *m && r.split == *s) {
                    Some(r) => row.extend([pct(r.overall.em), pct(r.overall.pm), pct(r.overall.mr)]),
                    None => row.extend(["-".to_string(), "-".to_string(), "-".to_string()]),
                }
            }
            row
        })
        .collect();
    table(&header, &rows)
}

fn cell_row(label: String, c: &Cell) -> Vec<String> {
    vec![label, c.n.to_string(), pct(c.em), pct(c.pm), pct(c.mr)]
}

/// Overall, Super-Section and page-range tables of one report.
pub fn render_breakdowns(r: &MetricReport) -> String {
    let header: Vec<String> = ["group", "n", "EM", "PM", "MR"].iter().map(|s| s.to_string()).collect();
    let mut out = format!("{} on {}\n\n", r.model, r.split);
    out += &table(&header, &[cell_row("overall".into(), &r.overall)]);
    out.push('\n');
    let ss: Vec<_> = r.by_super_section.iter().map(|(k, c)| cell_row(k.short_label().to_string(), c)).collect();
    out += &table(&header, &ss);
    out.push('\n');
    let pages: Vec<_> = r
        .by_pages
        .iter()
        .map(|(k, c)| cell_row(if *k == 9 { "9+ pages".to_string() } else { format!("{k} pages") }, c))
        .collect();
    out += &table(&header, &pages);
    for n in &r.notes {
        out += &format!("\nnote: {n}");
    }
    out.push('\n');
    out
}
