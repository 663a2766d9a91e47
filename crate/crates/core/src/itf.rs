//! Line-oriented parser for the indented text format.
//!
//! The format is the small indentation-based subset of YAML the intent
//! documents use: mappings of `key: value` lines, nested blocks introduced by
//! a bare `key:` line indented two further spaces, and sequences of `- `
//! items whose inline mapping continues at the item's content column. No
//! anchors, no flow style, no multi-line scalars. Blank lines and `#` comment
//! lines are ignored. The parser produces a generic spanned tree; callers
//! interpret it against their own schema.

use std::fmt;

use thiserror::Error;

/// A parsed node together with the line/column where it starts (1-based).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Spanned {
    pub value: Value,
    pub line: usize,
    pub col: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Value {
    Scalar(String),
    Map(Vec<MapEntry>),
    Seq(Vec<Spanned>),
    /// A `key:` line followed by a dedent or end of input.
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MapEntry {
    pub key: String,
    pub key_line: usize,
    pub key_col: usize,
    pub value: Spanned,
}

impl Value {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Value::Scalar(_) => "scalar",
            Value::Map(_) => "mapping",
            Value::Seq(_) => "sequence",
            Value::Empty => "empty block",
        }
    }
}

impl Spanned {
    pub fn as_scalar(&self) -> Option<&str> {
        match &self.value {
            Value::Scalar(s) => Some(s.as_str()),
            _ => None,
        }
    }

    pub fn as_map(&self) -> Option<&[MapEntry]> {
        match &self.value {
            Value::Map(entries) => Some(entries),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, column {col}: {kind}")]
pub struct ItfError {
    pub line: usize,
    pub col: usize,
    pub kind: ItfErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ItfErrorKind {
    TabInIndentation,
    BadIndentation { expected: usize, found: usize },
    DuplicateKey(String),
    MissingColon,
    EmptyKey,
    EmptySequenceItem,
    EmptyDocument,
}

impl fmt::Display for ItfErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        match self {
            ItfErrorKind::TabInIndentation => write!(f, "tab character in indentation"),
            ItfErrorKind::BadIndentation { expected, found } => {
                write!(f, "malformed indentation: expected {expected} spaces, found {found}")
            }
            ItfErrorKind::DuplicateKey(k) => write!(f, "duplicate key `{k}`"),
            ItfErrorKind::MissingColon => write!(f, "expected `key: value` or `key:`"),
            ItfErrorKind::EmptyKey => write!(f, "empty key before `:`"),
            ItfErrorKind::EmptySequenceItem => write!(f, "`-` with no content"),
            ItfErrorKind::EmptyDocument => write!(f, "document contains no content"),
        }
    }
}

struct Line<'a> {
    no: usize,
    indent: usize,
    text: &'a str,
}

struct Parser<'a> {
    lines: Vec<Line<'a>>,
    pos: usize,
}

/// Parse a complete document. The root is always a mapping.
pub fn parse(input: &str) -> Result<Spanned, ItfError> {
    let mut lines = Vec::new();
    for (idx, raw) in input.lines().enumerate() {
        let no = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let indent = raw.len() - raw.trim_start_matches(' ').len();
        let rest = &raw[indent..];
        if rest.starts_with('\t') {
            return Err(ItfError { line: no, col: indent + 1, kind: ItfErrorKind::TabInIndentation });
        }
        if rest.trim_start().starts_with('#') {
            continue;
        }
        lines.push(Line { no, indent, text: rest.trim_end() });
    }
    if lines.is_empty() {
        return Err(ItfError { line: 1, col: 1, kind: ItfErrorKind::EmptyDocument });
    }
    let first = &lines[0];
    if first.indent != 0 {
        return Err(ItfError {
            line: first.no,
            col: first.indent + 1,
            kind: ItfErrorKind::BadIndentation { expected: 0, found: first.indent },
        });
    }
    let mut parser = Parser { lines, pos: 0 };
    let root = parser.parse_block(0)?;
    if let Some(extra) = parser.peek() {
        return Err(ItfError {
            line: extra.no,
            col: extra.indent + 1,
            kind: ItfErrorKind::BadIndentation { expected: 0, found: extra.indent },
        });
    }
    Ok(root)
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Line<'a>> {
        self.lines.get(self.pos)
    }

    fn parse_block(&mut self, indent: usize) -> Result<Spanned, ItfError> {
        let line = self.peek().expect("parse_block called with a current line");
        if line.indent > indent {
            return Err(ItfError {
                line: line.no,
                col: line.indent + 1,
                kind: ItfErrorKind::BadIndentation { expected: indent, found: line.indent },
            });
        }
        if line.text.starts_with("- ") || line.text == "-" {
            self.parse_seq(indent)
        } else {
            self.parse_map(indent)
        }
    }

    fn parse_seq(&mut self, indent: usize) -> Result<Spanned, ItfError> {
        let (start_line, start_col) = {
            let l = self.peek().unwrap();
            (l.no, l.indent + 1)
        };
        let mut items = Vec::new();
        while let Some(line) = self.peek() {
            if line.indent != indent || !(line.text.starts_with("- ") || line.text == "-") {
                if line.indent > indent {
                    return Err(ItfError {
                        line: line.no,
                        col: line.indent + 1,
                        kind: ItfErrorKind::BadIndentation { expected: indent, found: line.indent },
                    });
                }
                break;
            }
            if line.text == "-" {
                return Err(ItfError {
                    line: line.no,
                    col: line.indent + 1,
                    kind: ItfErrorKind::EmptySequenceItem,
                });
            }
            let item_line = line.no;
            let content = line.text[2..].trim_start();
            if content.is_empty() {
                return Err(ItfError {
                    line: item_line,
                    col: indent + 3,
                    kind: ItfErrorKind::EmptySequenceItem,
                });
            }
            let content_col = indent + 2 + 1;
            if let Some((key, rest)) = split_key(content) {
                // Inline mapping: first entry on the dash line, continuation
                // entries two columns deeper than the dash.
                self.pos += 1;
                let first = self.entry_value(key, rest, item_line, content_col, indent + 2)?;
                let mut entries = vec![first];
                while let Some(next) = self.peek() {
                    if next.indent != indent + 2 || next.text.starts_with("- ") || next.text == "-" {
                        if next.indent > indent + 2 {
                            return Err(ItfError {
                                line: next.no,
                                col: next.indent + 1,
                                kind: ItfErrorKind::BadIndentation {
                                    expected: indent + 2,
                                    found: next.indent,
                                },
                            });
                        }
                        break;
                    }
                    let (no, col, text) = (next.no, next.indent + 1, next.text);
                    let (key, rest) = split_key(text).ok_or(ItfError {
                        line: no,
                        col,
                        kind: ItfErrorKind::MissingColon,
                    })?;
                    self.pos += 1;
                    let entry = self.entry_value(key, rest, no, col, indent + 2)?;
                    if entries.iter().any(|e: &MapEntry| e.key == entry.key) {
                        return Err(ItfError {
                            line: no,
                            col,
                            kind: ItfErrorKind::DuplicateKey(entry.key),
                        });
                    }
                    entries.push(entry);
                }
                items.push(Spanned {
                    value: Value::Map(entries),
                    line: item_line,
                    col: content_col,
                });
            } else {
                self.pos += 1;
                items.push(Spanned {
                    value: Value::Scalar(content.to_string()),
                    line: item_line,
                    col: content_col,
                });
            }
        }
        Ok(Spanned { value: Value::Seq(items), line: start_line, col: start_col })
    }

    fn parse_map(&mut self, indent: usize) -> Result<Spanned, ItfError> {
        let (start_line, start_col) = {
            let l = self.peek().unwrap();
            (l.no, l.indent + 1)
        };
        let mut entries: Vec<MapEntry> = Vec::new();
        while let Some(line) = self.peek() {
            if line.indent != indent {
                if line.indent > indent {
                    return Err(ItfError {
                        line: line.no,
                        col: line.indent + 1,
                        kind: ItfErrorKind::BadIndentation { expected: indent, found: line.indent },
                    });
                }
                break;
            }
            if line.text.starts_with("- ") || line.text == "-" {
                break;
            }
            let (no, col, text) = (line.no, line.indent + 1, line.text);
            let (key, rest) =
                split_key(text).ok_or(ItfError { line: no, col, kind: ItfErrorKind::MissingColon })?;
            self.pos += 1;
            let entry = self.entry_value(key, rest, no, col, indent)?;
            if entries.iter().any(|e| e.key == entry.key) {
                return Err(ItfError { line: no, col, kind: ItfErrorKind::DuplicateKey(entry.key) });
            }
            entries.push(entry);
        }
        Ok(Spanned { value: Value::Map(entries), line: start_line, col: start_col })
    }

    /// Build one map entry. `rest` is the text after the colon; an empty rest
    /// introduces a nested block indented two past the key.
    fn entry_value(
        &mut self,
        key: &str,
        rest: &str,
        key_line: usize,
        key_col: usize,
        key_indent: usize,
    ) -> Result<MapEntry, ItfError> {
        if key.is_empty() {
            return Err(ItfError { line: key_line, col: key_col, kind: ItfErrorKind::EmptyKey });
        }
        let value = if rest.is_empty() {
            match self.peek() {
                Some(next) if next.indent == key_indent + 2 => self.parse_block(key_indent + 2)?,
                Some(next) if next.indent > key_indent => {
                    return Err(ItfError {
                        line: next.no,
                        col: next.indent + 1,
                        kind: ItfErrorKind::BadIndentation {
                            expected: key_indent + 2,
                            found: next.indent,
                        },
                    });
                }
                _ => Spanned { value: Value::Empty, line: key_line, col: key_col },
            }
        } else {
            Spanned {
                value: Value::Scalar(rest.to_string()),
                line: key_line,
                col: key_col + key.len() + 2,
            }
        };
        Ok(MapEntry { key: key.to_string(), key_line, key_col, value })
    }
}

/// Split `key: value` or `key:`; returns `(key, value)` with value possibly
/// empty. Returns `None` when the line has no colon terminator for the key.
fn split_key(text: &str) -> Option<(&str, &str)> {
    let colon = text.find(':')?;
    let key = &text[..colon];
    if key.chars().any(|c| c.is_whitespace()) {
        return None;
    }
    let after = &text[colon + 1..];
    if after.is_empty() {
        Some((key, ""))
    } else if let Some(rest) = after.strip_prefix(' ') {
        Some((key, rest.trim()))
    } else {
        // `a:b` with no space is an opaque scalar line, not a key.
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map_keys(node: &Spanned) -> Vec<String> {
        node.as_map()
            .unwrap()
            .iter()
            .map(|e| e.key.clone())
            .collect()
    }

    #[test]
    fn parses_nested_document() {
        let doc = "intentid: intent_a\ntargets:\n  - id: OSS-01\n    operation: maintain\n    operand: SLA\n    oparams:\n      network: Edge-smart-factory-01\n";
        let root = parse(doc).unwrap();
        assert_eq!(map_keys(&root), vec!["intentid", "targets"]);
        let targets = &root.as_map().unwrap()[1].value;
        let items = match &targets.value {
            Value::Seq(items) => items,
            other => panic!("expected sequence, got {other:?}"),
        };
        assert_eq!(items.len(), 1);
        let entry_keys: Vec<_> = items[0].as_map().unwrap().iter().map(|e| e.key.as_str()).collect();
        assert_eq!(entry_keys, vec!["id", "operation", "operand", "oparams"]);
    }

    #[test]
    fn blank_lines_and_comments_are_ignored() {
        let doc = "# header\n\na: 1\n\n# trailing\nb: 2\n";
        let root = parse(doc).unwrap();
        assert_eq!(map_keys(&root), vec!["a", "b"]);
    }

    #[test]
    fn duplicate_key_reports_position() {
        let err = parse("a: 1\nb: 2\na: 3\n").unwrap_err();
        assert_eq!(err.line, 3);
        assert_eq!(err.col, 1);
        assert_eq!(err.kind, ItfErrorKind::DuplicateKey("a".into()));
    }

    #[test]
    fn tab_indentation_is_rejected() {
        let err = parse("a:\n\tb: 1\n").unwrap_err();
        assert_eq!(err.kind, ItfErrorKind::TabInIndentation);
        assert_eq!(err.line, 2);
    }

    #[test]
    fn odd_indent_is_rejected() {
        let err = parse("a:\n   b: 1\n").unwrap_err();
        assert!(matches!(err.kind, ItfErrorKind::BadIndentation { expected: 2, found: 3 }));
    }

    #[test]
    fn empty_nested_block_is_empty_value() {
        let root = parse("a:\nb: 2\n").unwrap();
        let entries = root.as_map().unwrap();
        assert_eq!(entries[0].value.value, Value::Empty);
    }

    #[test]
    fn scalar_values_keep_colons() {
        let root = parse("k: mlfo:OSS-01\n").unwrap();
        let entries = root.as_map().unwrap();
        assert_eq!(entries[0].value.as_scalar(), Some("mlfo:OSS-01"));
    }

    #[test]
    fn bare_dash_is_rejected() {
        let err = parse("xs:\n  -\n").unwrap_err();
        assert_eq!(err.kind, ItfErrorKind::EmptySequenceItem);
    }
}
