//! Per-split question tables (CSV).

use std::collections::{BTreeSet, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use crate::docmodel::{QASample, SuperSection};
use crate::error::{Error, Result};
use crate::ingest::map_super_section;

use super::{read_locked, write_locked};

pub const SPLIT_HEADER: [&str; 7] = ["question", "document_id", "answer_objt_id", "super_section", "id", "page_range", "context"];

/// Question rows of one split.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SplitTable {
    pub rows: Vec<QASample>,
}

impl SplitTable {
    pub fn new(rows: Vec<QASample>) -> Self {
        SplitTable { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Row-level and table-level invariant violations.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut ids = HashSet::new();
        for (i, row) in self.rows.iter().enumerate() {
            if !ids.insert(row.id) {
                out.push(format!("row {}: duplicate id {}", i + 1, row.id));
            }
            for v in row.violations(None) {
                out.push(format!("row {}: {v}", i + 1));
            }
        }
        out
    }

    pub fn document_ids(&self) -> BTreeSet<&str> {
        self.rows.iter().map(|r| r.document_id.as_str()).collect()
    }
}

/// Cell text for a Super-Section.
pub fn super_section_cell(s: SuperSection) -> &'static str {
    match s {
        SuperSection::Intro => "introduction",
        SuperSection::MM => "materials and methods",
        SuperSection::RD => "results and discussion",
        SuperSection::Concl => "conclusion",
        SuperSection::Other => "other",
        SuperSection::Table => "table",
        SuperSection::Figure => "figure",
    }
}

/// Reads a Super-Section cell: our own vocabulary, short labels, variant
/// names, or any first-level title known to the alignment table.
pub fn parse_super_section_cell(cell: &str) -> SuperSection {
    let key = cell.trim().to_lowercase();
    for s in SuperSection::ALL {
        if key == super_section_cell(s) || key == s.short_label().to_lowercase() || key == format!("{s:?}").to_lowercase() {
            return s;
        }
    }
    map_super_section(&key)
}

fn format_ids(ids: &BTreeSet<u32>) -> String {
    let inner: Vec<String> = ids.iter().map(u32::to_string).collect();
    format!("[{}]", inner.join(", "))
}

fn parse_ids(cell: &str) -> Result<BTreeSet<u32>, String> {
    let t = cell.trim();
    let inner = t.strip_prefix('[').and_then(|s| s.strip_suffix(']')).unwrap_or(t);
    let mut out = BTreeSet::new();
    for part in inner.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let id = part.parse::<u32>().map_err(|_| format!("bad object id {part:?} in {cell:?}"))?;
        out.insert(id);
    }
    if out.is_empty() {
        return Err(format!("empty answer list {cell:?}"));
    }
    Ok(out)
}

fn parse_range(cell: &str) -> Result<(usize, usize), String> {
    let t = cell.trim();
    let inner = t
        .strip_prefix('(')
        .and_then(|s| s.strip_suffix(')'))
        .ok_or_else(|| format!("page range {cell:?} is not a (start, end) tuple"))?;
    let parts: Vec<&str> = inner.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [a, b] => {
            let a = a.parse().map_err(|_| format!("bad page {a:?} in {cell:?}"))?;
            let b = b.parse().map_err(|_| format!("bad page {b:?} in {cell:?}"))?;
            Ok((a, b))
        }
        _ => Err(format!("page range {cell:?} needs two entries")),
    }
}

/// Serializes a table to CSV with the fixed seven-column header.
pub fn write_split_to<W: Write>(table: &SplitTable, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    let csv_err = |row: usize, e: csv::Error| Error::Csv { row, message: e.to_string() };
    w.write_record(SPLIT_HEADER).map_err(|e| csv_err(0, e))?;
    for (i, r) in table.rows.iter().enumerate() {
        let ids = format_ids(&r.answer_objt_ids);
        let id = r.id.to_string();
        let range = format!("({}, {})", r.page_range.0, r.page_range.1);
        let fields = [
            r.question.as_str(),
            r.document_id.as_str(),
            ids.as_str(),
            super_section_cell(r.super_section),
            id.as_str(),
            range.as_str(),
            r.context.as_deref().unwrap_or(""),
        ];
        w.write_record(fields).map_err(|e| csv_err(i + 1, e))?;
    }
    w.flush().map_err(|e| Error::Csv { row: table.rows.len(), message: e.to_string() })?;
    Ok(())
}

/// Parses a CSV table. Row numbers in errors count data rows from 1.
pub fn read_split_from<R: Read>(input: R) -> Result<SplitTable> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = reader.headers().map_err(|e| Error::Csv { row: 0, message: e.to_string() })?;
    let got: Vec<String> = header.iter().map(|h| h.trim().to_lowercase()).collect();
    if got != SPLIT_HEADER {
        return Err(Error::Csv { row: 0, message: format!("unexpected header {:?}", header.iter().collect::<Vec<_>>()) });
    }
    let mut rows = Vec::new();
    let mut ids = HashSet::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let bad = |message: String| Error::Csv { row, message };
        let rec = record.map_err(|e| bad(e.to_string()))?;
        let question = rec[0].to_string();
        if question.trim().is_empty() {
            return Err(bad("empty question".into()));
        }
        let answer_objt_ids = parse_ids(&rec[2]).map_err(bad)?;
        let super_section = parse_super_section_cell(&rec[3]);
        let id: u64 = rec[4].trim().parse().map_err(|_| bad(format!("bad id {:?}", &rec[4])))?;
        let page_range = parse_range(&rec[5]).map_err(bad)?;
        let context = match rec[6].trim() {
            "" | "N/A" => None,
            _ => Some(rec[6].to_string()),
        };
        let sample = QASample {
            question,
            document_id: rec[1].to_string(),
            answer_objt_ids,
            super_section,
            id,
            page_range,
            context,
        };
        if let Some(v) = sample.violations(None).into_iter().next() {
            return Err(bad(v));
        }
        if !ids.insert(id) {
            return Err(bad(format!("duplicate id {id}")));
        }
        rows.push(sample);
    }
    Ok(SplitTable { rows })
}

/// Writes a table under an exclusive lock on the target file.
pub fn write_split(table: &SplitTable, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_split_to(table, &mut buf)?;
    write_locked(path, &buf)
}

pub fn read_split(path: &Path) -> Result<SplitTable> {
    let bytes = read_locked(path)?;
    read_split_from(bytes.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(id: u64, ids: &[u32], s: SuperSection, range: (usize, usize)) -> QASample {
        QASample {
            question: format!("What is question {id}?"),
            document_id: "PMC8987314".into(),
            answer_objt_ids: ids.iter().copied().collect(),
            super_section: s,
            id,
            page_range: range,
            context: (!s.is_visual()).then(|| "Total hip arthroplasty, \"THA\", is common.\nSecond line.".to_string()),
        }
    }

    fn to_string(t: &SplitTable) -> String {
        let mut buf = Vec::new();
        write_split_to(t, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn list_and_tuple_cells() {
        let t = SplitTable::new(vec![sample(21045, &[7, 8], SuperSection::Intro, (0, 1))]);
        let text = to_string(&t);
        assert!(text.starts_with("question,document_id,answer_objt_id,super_section,id,page_range,context\n"));
        assert!(text.contains(",\"[7, 8]\",introduction,21045,\"(0, 1)\","), "{text}");
        assert_eq!(read_split_from(text.as_bytes()).unwrap(), t);
    }

    #[test]
    fn empty_table_is_header_only() {
        let text = to_string(&SplitTable::default());
        assert_eq!(text, "question,document_id,answer_objt_id,super_section,id,page_range,context\n");
        assert!(read_split_from(text.as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn visual_row_has_null_context() {
        let t = SplitTable::new(vec![sample(36776, &[64], SuperSection::Table, (2, 6))]);
        let text = to_string(&t);
        assert!(text.trim_end().ends_with("\"(2, 6)\","));
        assert_eq!(read_split_from(text.as_bytes()).unwrap().rows[0].context, None);
    }

    #[test]
    fn reads_rows_in_the_published_style() {
        let text = "question,document_id,answer_objt_id,super_section,id,page_range,context\n\
            What was the role of pyridine-2-aldoxime in the activation process?,PMC8697031,[32],conclusions,20635,\"(3, 4)\",\"In summary, we have first noticed...\"\n\
            Can you locate the graphic that depicts the connection between GERD and atrophic gastritis?,PMC8900577,[68],figure,37893,\"(4, 9)\",N/A\n";
        let t = read_split_from(text.as_bytes()).unwrap();
        assert_eq!(t.rows[0].super_section, SuperSection::Concl);
        assert_eq!(t.rows[1].super_section, SuperSection::Figure);
        assert_eq!(t.rows[1].context, None);
        assert_eq!(t.rows[1].page_range, (4, 9));
    }

    #[test]
    fn malformed_cells_report_row() {
        let header = "question,document_id,answer_objt_id,super_section,id,page_range,context\n";
        let good = "What is X here today?,D,[1],results,1,\"(0, 0)\",ctx\n";
        for bad in [
            "What is Y here today?,D,[x],results,2,\"(0, 0)\",ctx\n",
            "What is Y here today?,D,[1],results,2,\"(0 0)\",ctx\n",
            "What is Y here today?,D,[],results,2,\"(0, 0)\",ctx\n",
            "What is Y here today?,D,[1],results,2,\"(3, 1)\",ctx\n",
            "What is Y here today?,D,[1],results,1,\"(0, 0)\",ctx\n",
            "What is Y here today?,D,[1],table,2,\"(0, 0)\",ctx\n",
        ] {
            let text = format!("{header}{good}{bad}");
            match read_split_from(text.as_bytes()) {
                Err(Error::Csv { row, .. }) => assert_eq!(row, 2, "{bad}"),
                other => panic!("{bad}: {other:?}"),
            }
        }
    }

    #[test]
    fn wrong_header_rejected() {
        assert!(matches!(read_split_from("a,b\n".as_bytes()), Err(Error::Csv { row: 0, .. })));
    }

    #[test]
    fn super_section_cells_round_trip() {
        for s in SuperSection::ALL {
            assert_eq!(parse_super_section_cell(super_section_cell(s)), s);
            assert_eq!(parse_super_section_cell(s.short_label()), s);
        }
        assert_eq!(parse_super_section_cell("Patients and Methods"), SuperSection::MM);
    }

    fn arb_sample() -> impl Strategy<Value = QASample> {
        (
            "[A-Za-z,\"' ]{1,30}\\?",
            "[A-Z]{3}[0-9]{1,7}",
            prop::collection::btree_set(0u32..500, 1..6),
            prop::sample::select(SuperSection::ALL.to_vec()),
            0usize..20,
            0usize..5,
            "[A-Za-z0-9,.;\"'\n ]{0,60}[a-z]",
        )
            .prop_map(|(question, document_id, answer_objt_ids, super_section, start, len, ctx)| QASample {
                question,
                document_id,
                answer_objt_ids,
                super_section,
                id: 0,
                page_range: (start, start + len),
                context: (!super_section.is_visual()).then_some(ctx),
            })
    }

    proptest! {
        #[test]
        fn csv_round_trip(rows in prop::collection::vec(arb_sample(), 0..12)) {
            let rows: Vec<QASample> = rows.into_iter().enumerate().map(|(i, mut r)| { r.id = i as u64 * 7 + 1; r }).collect();
            let t = SplitTable::new(rows);
            let text = to_string(&t);
            prop_assert_eq!(read_split_from(text.as_bytes()).unwrap(), t);
        }
    }
}
