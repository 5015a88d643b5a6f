//! First-level section titles and the Super-Section they aggregate into.

use crate::docmodel::SuperSection;

/// One row of the section alignment table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SectionAlignment {
    pub title: &'static str,
    pub hyper_section: &'static str,
    pub super_section: SuperSection,
    /// Number of first-level sections with this title in the source collection.
    pub count: u32,
}

const fn row(title: &'static str, hyper_section: &'static str, super_section: SuperSection, count: u32) -> SectionAlignment {
    SectionAlignment { title, hyper_section, super_section, count }
}

use SuperSection::{Concl, Intro, Other, MM, RD};

/// Every row of the alignment table, in table order. Repeated rows are kept as listed.
pub const SECTION_ALIGNMENT: &[SectionAlignment] = &[
    row("introduction", "introduction or backgrounds", Intro, 5359),
    row("background", "introduction or backgrounds", Intro, 107),
    row("aim", "aim", Intro, 21),
    row("materials and methods", "method and material", MM, 2463),
    row("material and methods", "method and material", MM, 180),
    row("methods and materials", "method and material", MM, 36),
    row("data and methodologies", "method and material", MM, 24),
    row("subjects and methods", "method and material", MM, 74),
    row("patients and methods", "method", MM, 208),
    row("methods", "method", MM, 1021),
    row("methodology", "method", MM, 62),
    row("research design and methods", "method", MM, 34),
    row("treatment", "treatment", MM, 26),
    row("data availability", "data availability", MM, 51),
    row("data availability statement", "data availability", MM, 21),
    row("experimental", "experiments", MM, 71),
    row("experimental section", "experiments", MM, 64),
    row("experimental procedures", "experiments", MM, 37),
    row("results", "results", RD, 2462),
    row("result", "results", RD, 25),
    row("results and discussion", "results and discussion", RD, 306),
    row("results and discussions", "results and discussion", RD, 20),
    row("discussion", "discussions", RD, 1096),
    row("discussions", "discussions", RD, 15),
    row("findings", "findings", RD, 18),
    row("statistical analysis", "statistical analysis", RD, 28),
    row("limitations", "limitations", RD, 91),
    row("study limitations", "limitations", RD, 14),
    row("strengths and limitations", "strengths and limitations", RD, 19),
    row("summary", "summary", RD, 53),
    row("key points", "key points", RD, 28),
    row("key summary points", "key points", RD, 38),
    row("article highlights", "key points", RD, 34),
    row("disclosures", "disclosure", RD, 89),
    row("disclosure", "disclosure", RD, 50),
    row("conclusions", "conclusion", Concl, 1231),
    row("conclusion", "conclusion", Concl, 1125),
    row("concluding remarks", "conclusion", Concl, 38),
    row("discussion and conclusions", "discussion and conclusion", Concl, 21),
    row("discussion and conclusion", "discussion and conclusion", Concl, 16),
    row("discussion and conclusion", "discussion and conclusion", Concl, 16),
    row("discussion and conclusions", "discussion and conclusion", Concl, 21),
    row("future directions", "future direction", Concl, 20),
    row("future perspectives", "future direction", Concl, 18),
    row("future directions", "future direction", Concl, 20),
    row("future perspectives", "future direction", Concl, 18),
    row("electronic supplementary material", "supplementary", Other, 43),
    row("supplementary material", "supplementary", Other, 1044),
    row("supplemental material", "supplementary", Other, 96),
    row("supplementary data", "supplementary", Other, 85),
    row("supplementary", "supplementary", Other, 73),
    row("supplementary information", "supplementary", Other, 32),
    row("supplementary materials", "supplementary", Other, 28),
    row("conflict of interest", "conflict of interest", Other, 315),
    row("conflicts of interest", "conflict of interest", Other, 240),
    row("declarations", "conflict of interest", Other, 68),
    row("declaration of competing interest", "conflict of interest", Other, 206),
    row("conflict of interest statement", "conflict of interest", Other, 51),
    row("competing interests", "conflict of interest", Other, 31),
    row("conflict of interests", "conflict of interest", Other, 25),
    row("declaration of interest", "conflict of interest", Other, 22),
    row("funding", "funding and supports", Other, 262),
    row("funding information", "funding and supports", Other, 32),
    row("supporting information", "funding and supports", Other, 284),
    row("funding sources", "funding and supports", Other, 23),
    row("sources of funding", "funding and supports", Other, 17),
    row("credit authorship contribution statement", "author contributions", Other, 62),
    row("author contributions", "author contributions", Other, 388),
    row("author contribution statement", "author contributions", Other, 31),
    row("author contribution", "author contributions", Other, 24),
    row("acknowledgments", "acknowledgments", Other, 58),
    row("acknowledgements", "acknowledgments", Other, 55),
    row("ethical approval", "ethical approval", Other, 27),
];

/// Exact lookup of a lowercased, trimmed first-level title; unknown titles are `Other`.
pub fn map_super_section(first_level_title: &str) -> SuperSection {
    let key = first_level_title.trim();
    SECTION_ALIGNMENT
        .iter()
        .find(|r| r.title == key)
        .map(|r| r.super_section)
        .unwrap_or(SuperSection::Other)
}

/// Canonical form of a raw heading: lowercase, collapsed whitespace, leading
/// enumerators ("2.", "II.", "3)") and trailing punctuation removed.
pub fn normalize_section_title(raw: &str) -> String {
    let lowered = raw.to_lowercase();
    let collapsed = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
    let mut s = collapsed.as_str();
    if let Some((head, rest)) = s.split_once(' ') {
        let core = head.trim_end_matches(['.', ')', ':']);
        let is_enum = !core.is_empty()
            && (core.chars().all(|c| c.is_ascii_digit() || c == '.')
                || core.chars().all(|c| matches!(c, 'i' | 'v' | 'x')) && head.len() > core.len());
        if is_enum {
            s = rest;
        }
    }
    s.trim_end_matches(['.', ':', ';']).trim().to_string()
}
