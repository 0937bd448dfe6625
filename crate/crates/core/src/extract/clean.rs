use scraper::node::Element;
use scraper::{Html, Node};
use serde::{Deserialize, Serialize};

use crate::corpus::RawDocument;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanDocument {
    pub doc_id: String,
    pub url: String,
    pub text: String,
    /// Characters removed over original characters.
    pub removed_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CleanSkip {
    EmptyHtml,
    NotText,
}

/// Subtrees removed outright.
pub const DROPPED_TAGS: &[&str] = &[
    "script", "style", "nav", "header", "footer", "aside", "form", "iframe", "noscript",
    "template", "head", "svg", "object", "embed",
];

/// Class/id patterns marking boilerplate. A pattern matches when its parts
/// appear consecutively among the parts of a class or id, parts being split
/// on `-`, `_` and camelCase boundaries.
pub const BOILERPLATE_PATTERNS: &[&str] = &[
    "ad", "ads", "advert", "advertisement", "banner", "promo", "sidebar", "cookie", "share",
    "comment-form", "breadcrumb", "breadcrumbs", "menu",
];

const VERBATIM_TAGS: &[&str] = &["pre", "code", "math", "samp", "kbd"];

// class names marking typeset math, kept verbatim like `<math>`
const MATH_CLASSES: &[&str] = &["math", "mathjax", "katex", "latex", "tex"];

const BLOCK_TAGS: &[&str] = &[
    "address", "article", "blockquote", "body", "caption", "center", "dd", "details", "dialog",
    "div", "dl", "dt", "fieldset", "figcaption", "figure", "h1", "h2", "h3", "h4", "h5", "h6",
    "hr", "html", "legend", "li", "main", "ol", "p", "pre", "section", "summary", "table",
    "tbody", "tfoot", "thead", "tr", "ul",
];

const CELL_TAGS: &[&str] = &["td", "th"];

#[derive(Debug, Clone)]
pub struct Cleaner {
    patterns: Vec<Vec<String>>,
}

impl Default for Cleaner {
    fn default() -> Self {
        Self::with_extra_patterns(&[])
    }
}

/// Splits an identifier on `-`, `_`, whitespace and lower-to-upper case changes.
pub fn identifier_parts(ident: &str) -> Vec<String> {
    let mut parts = Vec::new();
    let mut cur = String::new();
    let mut prev_lower = false;
    for c in ident.chars() {
        if c == '-' || c == '_' || c.is_whitespace() {
            if !cur.is_empty() {
                parts.push(std::mem::take(&mut cur));
            }
            prev_lower = false;
            continue;
        }
        if c.is_uppercase() && prev_lower && !cur.is_empty() {
            parts.push(std::mem::take(&mut cur));
        }
        prev_lower = c.is_lowercase() || c.is_ascii_digit();
        cur.extend(c.to_lowercase());
    }
    if !cur.is_empty() {
        parts.push(cur);
    }
    parts
}

impl Cleaner {
    pub fn with_extra_patterns(extra: &[String]) -> Self {
        let patterns = BOILERPLATE_PATTERNS
            .iter()
            .map(|p| p.to_string())
            .chain(extra.iter().cloned())
            .map(|p| identifier_parts(&p))
            .filter(|p| !p.is_empty())
            .collect();
        Self { patterns }
    }

    fn is_boilerplate(&self, el: &Element) -> bool {
        let idents = el.classes().chain(el.id());
        for ident in idents {
            let parts = identifier_parts(ident);
            for pat in &self.patterns {
                if parts.windows(pat.len()).any(|w| w == pat.as_slice()) {
                    return true;
                }
            }
        }
        false
    }

    pub fn clean(&self, doc: &RawDocument) -> Result<CleanDocument, CleanSkip> {
        let text = self.clean_str(&doc.html)?;
        let original = doc.html.chars().count();
        let kept = text.chars().count();
        let removed_fraction = if original == 0 {
            0.0
        } else {
            (1.0 - kept as f64 / original as f64).clamp(0.0, 1.0)
        };
        Ok(CleanDocument {
            doc_id: doc.id.clone(),
            url: doc.url.clone(),
            text,
            removed_fraction,
        })
    }

    pub fn clean_str(&self, html: &str) -> Result<String, CleanSkip> {
        if html.trim().is_empty() {
            return Err(CleanSkip::EmptyHtml);
        }
        if looks_binary(html) {
            return Err(CleanSkip::NotText);
        }
        let dom = Html::parse_document(html);
        let mut out = TextSink::default();
        enum Step<'a> {
            Enter(ego_tree::NodeRef<'a, Node>),
            Leave { block: bool, verbatim: bool },
        }
        let mut stack = vec![Step::Enter(dom.tree.root())];
        while let Some(step) = stack.pop() {
            match step {
                Step::Leave { block, verbatim } => {
                    if verbatim {
                        out.verbatim -= 1;
                    }
                    if block {
                        out.line_break();
                    }
                }
                Step::Enter(node) => match node.value() {
                    Node::Text(t) => out.push(t),
                    Node::Element(el) => {
                        let name = el.name();
                        if DROPPED_TAGS.contains(&name) || self.is_boilerplate(el) {
                            continue;
                        }
                        if name == "br" {
                            out.hard_break();
                            continue;
                        }
                        let block = BLOCK_TAGS.contains(&name);
                        let verbatim = VERBATIM_TAGS.contains(&name)
                            || el.classes().any(|c| MATH_CLASSES.contains(&c.to_ascii_lowercase().as_str()));
                        if block {
                            out.line_break();
                        } else if CELL_TAGS.contains(&name) {
                            out.space();
                        }
                        if verbatim {
                            out.verbatim += 1;
                        }
                        stack.push(Step::Leave { block, verbatim });
                        stack.extend(node.children().rev().map(Step::Enter));
                    }
                    Node::Document | Node::Fragment => {
                        stack.extend(node.children().rev().map(Step::Enter));
                    }
                    _ => {}
                },
            }
        }
        Ok(finish(&out.buf))
    }
}

pub fn clean_html(doc: &RawDocument) -> Result<CleanDocument, CleanSkip> {
    Cleaner::default().clean(doc)
}

fn looks_binary(s: &str) -> bool {
    let mut bad = 0usize;
    let mut total = 0usize;
    for c in s.chars().take(1 << 16) {
        total += 1;
        if c == '\0' {
            return true;
        }
        if c == '\u{FFFD}' || (c.is_control() && !matches!(c, '\t' | '\n' | '\r' | '\x0c')) {
            bad += 1;
        }
    }
    bad * 10 > total
}

#[derive(Default)]
struct TextSink {
    buf: String,
    pending_space: bool,
    verbatim: usize,
}

impl TextSink {
    fn at_line_start(&self) -> bool {
        self.buf.is_empty() || self.buf.ends_with('\n')
    }

    fn push(&mut self, text: &str) {
        if self.verbatim > 0 {
            if self.pending_space && !self.at_line_start() {
                self.buf.push(' ');
            }
            self.pending_space = false;
            self.buf.push_str(text);
            return;
        }
        for c in text.chars() {
            if c.is_whitespace() {
                self.pending_space = true;
            } else {
                if self.pending_space && !self.at_line_start() {
                    self.buf.push(' ');
                }
                self.pending_space = false;
                self.buf.push(c);
            }
        }
    }

    fn space(&mut self) {
        self.pending_space = true;
    }

    fn trim_trailing_spaces(&mut self) {
        let keep = self.buf.trim_end_matches([' ', '\t']).len();
        self.buf.truncate(keep);
        self.pending_space = false;
    }

    fn line_break(&mut self) {
        self.trim_trailing_spaces();
        if !self.at_line_start() {
            self.buf.push('\n');
        }
    }

    fn hard_break(&mut self) {
        self.trim_trailing_spaces();
        self.buf.push('\n');
    }
}

/// Trims line ends, collapses runs of three or more blank lines to one, and
/// breaks up anything that would read as a tag.
fn finish(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut blanks = 0usize;
    for line in raw.lines().map(str::trim_end) {
        if line.is_empty() {
            blanks += 1;
            continue;
        }
        if !out.is_empty() {
            let keep = if blanks >= 3 { 1 } else { blanks };
            (0..=keep).for_each(|_| out.push('\n'));
        }
        blanks = 0;
        push_defanged(&mut out, line);
    }
    out
}

fn push_defanged(out: &mut String, line: &str) {
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        out.push(c);
        if c == '<' && chars.peek().is_some_and(|n| n.is_ascii_alphabetic()) {
            out.push(' ');
        }
    }
}
