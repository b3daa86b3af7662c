//! Python source handling: parsing, syntax diagnostics and normalized unparsing.

mod unparse;

use std::fmt;

use rustpython_parser::ast::{self, Stmt};
use rustpython_parser::Parse;
use serde::{Deserialize, Serialize};

pub use unparse::unparse_suite;

pub type Suite = Vec<Stmt>;

/// 1-based line, 0-based column (in characters).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SourceLocation {
    pub line: usize,
    pub column: usize,
}

impl fmt::Display for SourceLocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntaxDiagnostic {
    pub location: SourceLocation,
    pub message: String,
}

impl fmt::Display for SyntaxDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.location.line, self.message)
    }
}

/// Byte offset to line/column conversion.
pub struct LineIndex<'a> {
    source: &'a str,
    line_starts: Vec<usize>,
}

impl<'a> LineIndex<'a> {
    pub fn new(source: &'a str) -> Self {
        let mut line_starts = vec![0];
        line_starts.extend(source.match_indices('\n').map(|(i, _)| i + 1));
        Self {
            source,
            line_starts,
        }
    }

    pub fn locate(&self, offset: usize) -> SourceLocation {
        let offset = offset.min(self.source.len());
        let line = self.line_starts.partition_point(|&s| s <= offset);
        let start = self.line_starts[line - 1];
        let column = self
            .source
            .get(start..offset)
            .map_or(offset - start, |s| s.chars().count());
        SourceLocation { line, column }
    }
}

pub fn parse_module(source: &str) -> Result<Suite, SyntaxDiagnostic> {
    ast::Suite::parse(source, "<candidate>").map_err(|err| {
        let offset = usize::from(err.offset);
        SyntaxDiagnostic {
            location: LineIndex::new(source).locate(offset),
            message: err.error.to_string(),
        }
    })
}

/// Canonical text of a program: parse, then unparse. Two sources with equal
/// normalized text have equal syntax trees modulo formatting and comments.
pub fn normalize(source: &str) -> Result<String, SyntaxDiagnostic> {
    parse_module(source).map(|suite| unparse_suite(&suite))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn locate_lines_and_columns() {
        let idx = LineIndex::new("ab\ncd\n\nef");
        assert_eq!(idx.locate(0), SourceLocation { line: 1, column: 0 });
        assert_eq!(idx.locate(4), SourceLocation { line: 2, column: 1 });
        assert_eq!(idx.locate(6), SourceLocation { line: 3, column: 0 });
        assert_eq!(idx.locate(8), SourceLocation { line: 4, column: 1 });
    }

    #[test]
    fn syntax_error_reports_line() {
        let err = parse_module("x = 1\ndef f(x) return x\n").unwrap_err();
        assert_eq!(err.location.line, 2);
        assert!(parse_module("").unwrap().is_empty());
    }
}
