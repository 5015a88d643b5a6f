//! Extraction of text nodes from JATS-style article XML.

use roxmltree::{Node, ParsingOptions};

use crate::error::{Error, Result};

use super::sections::normalize_section_title;
use super::{NodeType, XmlNode};

/// Elements whose text never belongs to the surrounding paragraph.
const DETACHED: &[&str] = &["fig", "table-wrap", "list", "disp-formula", "table", "fn", "supplementary-material"];

fn collapse(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn text_of(node: Node, skip: &[&str]) -> String {
    let mut out = String::new();
    collect_text(node, skip, &mut out);
    collapse(&out)
}

fn collect_text(node: Node, skip: &[&str], out: &mut String) {
    for child in node.children() {
        if child.is_text() {
            out.push_str(child.text().unwrap_or(""));
        } else if child.is_element() && !skip.contains(&child.tag_name().name()) {
            // block-level children are separated by a space
            if matches!(child.tag_name().name(), "p" | "title" | "label" | "list-item" | "sec") {
                out.push(' ');
            }
            collect_text(child, skip, out);
            out.push_str(if matches!(child.tag_name().name(), "p" | "title" | "label") { " " } else { "" });
        }
    }
}

fn child<'a, 'i>(node: Node<'a, 'i>, name: &str) -> Option<Node<'a, 'i>> {
    node.children().find(|c| c.has_tag_name(name))
}

struct Collector {
    nodes: Vec<XmlNode>,
}

impl Collector {
    fn push(&mut self, node_type: NodeType, text: String, section_path: &[String]) {
        if !text.is_empty() {
            self.nodes.push(XmlNode { node_type, text, section_path: section_path.to_vec() });
        }
    }

    fn caption(&mut self, float: Node, node_type: NodeType, path: &[String]) {
        let label = child(float, "label").map(|l| text_of(l, &[])).unwrap_or_default();
        let caption = child(float, "caption").map(|c| text_of(c, &[])).unwrap_or_default();
        let text = collapse(&format!("{label} {caption}"));
        self.push(node_type, text, path);
    }

    /// Walks a block container, emitting paragraphs, lists, captions, and nested sections.
    fn block(&mut self, node: Node, path: &[String]) {
        for c in node.children().filter(Node::is_element) {
            match c.tag_name().name() {
                "sec" => self.section(c, path),
                "p" => {
                    self.push(NodeType::Paragraph, text_of(c, DETACHED), path);
                    // floats and lists nested in a paragraph are their own nodes
                    self.block(c, path);
                }
                "list" => self.push(NodeType::List, text_of(c, &["fig", "table-wrap"]), path),
                "fig" => self.caption(c, NodeType::FigureCaption, path),
                "table-wrap" => self.caption(c, NodeType::TableCaption, path),
                "fig-group" | "table-wrap-group" | "boxed-text" => self.block(c, path),
                _ => {}
            }
        }
    }

    fn section(&mut self, sec: Node, parent: &[String]) {
        let title = child(sec, "title").map(|t| text_of(t, &[])).unwrap_or_default();
        let mut path = parent.to_vec();
        if !title.is_empty() {
            path.push(normalize_section_title(&title));
            self.push(NodeType::SectionTitle, title, &path);
        }
        self.block(sec, &path);
    }
}

/// Flattens an article into typed text nodes in document order.
///
/// Front matter yields the article title and one abstract node; body and
/// back-matter sections yield titles, paragraphs, lists, and float captions,
/// each tagged with the normalized titles of its enclosing sections.
pub fn parse_article_xml(xml: &str) -> Result<Vec<XmlNode>> {
    let opts = ParsingOptions { allow_dtd: true, ..Default::default() };
    let doc = roxmltree::Document::parse_with_options(xml, opts).map_err(|e| Error::Xml(e.to_string()))?;
    let root = doc.root_element();
    let mut out = Collector { nodes: Vec::new() };

    if let Some(title) = root.descendants().find(|n| n.has_tag_name("article-title") && n.ancestors().any(|a| a.has_tag_name("title-group"))) {
        out.push(NodeType::ArticleTitle, text_of(title, &[]), &["title".to_string()]);
    }
    if let Some(abs) = root.descendants().find(|n| n.has_tag_name("abstract") && n.attribute("abstract-type").is_none()) {
        out.push(NodeType::Abstract, text_of(abs, &["title"]), &["abstract".to_string()]);
    }
    if let Some(body) = child(root, "body") {
        out.block(body, &[]);
    }
    if let Some(back) = child(root, "back") {
        for c in back.children().filter(Node::is_element) {
            match c.tag_name().name() {
                "sec" => out.section(c, &[]),
                "ack" => {
                    let title = child(c, "title").map(|t| text_of(t, &[])).unwrap_or_else(|| "Acknowledgments".into());
                    let path = vec![normalize_section_title(&title)];
                    out.push(NodeType::SectionTitle, title, &path);
                    out.block(c, &path);
                }
                _ => {}
            }
        }
    }
    if let Some(floats) = child(root, "floats-group") {
        out.block(floats, &[]);
    }
    if out.nodes.is_empty() {
        return Err(Error::Xml("article has no text nodes".into()));
    }
    Ok(out.nodes)
}

#[cfg(test)]
mod tests {
    use super::*;

    const ARTICLE: &str = r#"<?xml version="1.0"?>
<!DOCTYPE article PUBLIC "-//NLM//DTD JATS (Z39.96) Journal Archiving and Interchange DTD v1.2 20190208//EN" "JATS-archivearticle1.dtd">
<article>
  <front><article-meta>
    <title-group><article-title>Long-term outcomes of <italic>hip</italic> replacement</article-title></title-group>
    <abstract><sec><title>Background</title><p>We report outcomes.</p></sec><sec><title>Results</title><p>All good.</p></sec></abstract>
  </article-meta></front>
  <body>
    <sec><title>1. Introduction</title>
      <p>Hip replacement is common <xref ref-type="bibr" rid="b1">[1]</xref>.</p>
    </sec>
    <sec><title>2. Materials and Methods</title>
      <sec><title>2.1 Cohort</title>
        <p>We enrolled patients.<fig id="f1"><label>Figure 1</label><caption><p>Flow of patients.</p></caption></fig></p>
        <list><list-item><p>first item</p></list-item><list-item><p>second item</p></list-item></list>
      </sec>
      <table-wrap id="t1"><label>Table 1</label><caption><title>Baseline data</title></caption><table><tr><td>42</td></tr></table></table-wrap>
    </sec>
  </body>
  <back><ack><p>We thank the staff.</p></ack><ref-list><ref>ignored</ref></ref-list></back>
</article>"#;

    #[test]
    fn extracts_typed_nodes_with_paths() {
        let nodes = parse_article_xml(ARTICLE).unwrap();
        let summary: Vec<(NodeType, &str, Vec<&str>)> = nodes
            .iter()
            .map(|n| (n.node_type, n.text.as_str(), n.section_path.iter().map(String::as_str).collect()))
            .collect();
        assert_eq!(
            summary,
            vec![
                (NodeType::ArticleTitle, "Long-term outcomes of hip replacement", vec!["title"]),
                (NodeType::Abstract, "We report outcomes. All good.", vec!["abstract"]),
                (NodeType::SectionTitle, "1. Introduction", vec!["introduction"]),
                (NodeType::Paragraph, "Hip replacement is common [1].", vec!["introduction"]),
                (NodeType::SectionTitle, "2. Materials and Methods", vec!["materials and methods"]),
                (NodeType::SectionTitle, "2.1 Cohort", vec!["materials and methods", "cohort"]),
                (NodeType::Paragraph, "We enrolled patients.", vec!["materials and methods", "cohort"]),
                (NodeType::FigureCaption, "Figure 1 Flow of patients.", vec!["materials and methods", "cohort"]),
                (NodeType::List, "first item second item", vec!["materials and methods", "cohort"]),
                (NodeType::TableCaption, "Table 1 Baseline data", vec!["materials and methods"]),
                (NodeType::SectionTitle, "Acknowledgments", vec!["acknowledgments"]),
                (NodeType::Paragraph, "We thank the staff.", vec!["acknowledgments"]),
            ]
        );
    }

    #[test]
    fn malformed_xml_is_an_error() {
        assert!(matches!(parse_article_xml("<article><body>"), Err(Error::Xml(_))));
        assert!(matches!(parse_article_xml("<article/>"), Err(Error::Xml(_))));
    }
}
