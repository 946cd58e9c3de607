//! The INI dialect shared by configuration files and mock-server rule files.
//!
//! * `[section]` headers
//! * `key = value` entries; the value is trimmed on both sides
//! * whole-line comments starting with `#` or `;`
//! * a value whose line ends in a backslash continues on the next line; the
//!   backslash is dropped and the lines are joined with `\n`
//!
//! Section order and entry order are preserved, since rule files depend on it.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IniEntry {
    pub key: String,
    pub value: String,
    /// 1-based line number of the key.
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IniSection {
    pub name: String,
    pub line: usize,
    pub entries: Vec<IniEntry>,
}

impl IniSection {
    /// Last value given for `key`, if any.
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .rev()
            .find(|e| e.key == key)
            .map(|e| e.value.as_str())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IniDocument {
    pub sections: Vec<IniSection>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct IniError {
    pub line: usize,
    pub message: String,
}

impl IniError {
    fn new(line: usize, message: impl Into<String>) -> Self {
        Self {
            line,
            message: message.into(),
        }
    }
}

pub fn parse(text: &str) -> Result<IniDocument, IniError> {
    let mut doc = IniDocument::default();
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));

    while let Some((lineno, raw)) = lines.next() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| IniError::new(lineno, "unterminated section header"))?
                .trim();
            if name.is_empty() {
                return Err(IniError::new(lineno, "empty section name"));
            }
            doc.sections.push(IniSection {
                name: name.to_owned(),
                line: lineno,
                entries: Vec::new(),
            });
            continue;
        }

        let (key, value) = line.split_once('=').ok_or_else(|| {
            IniError::new(lineno, format!("expected `key = value`, found `{line}`"))
        })?;
        let key = key.trim();
        if key.is_empty() {
            return Err(IniError::new(lineno, "empty key"));
        }
        let section = doc
            .sections
            .last_mut()
            .ok_or_else(|| IniError::new(lineno, format!("key `{key}` outside of any section")))?;

        let mut value = value.trim().to_owned();
        while value.ends_with('\\') {
            value.pop();
            let Some((_, next)) = lines.next() else { break };
            value.push('\n');
            value.push_str(next.trim_end());
        }
        section.entries.push(IniEntry {
            key: key.to_owned(),
            value,
            line: lineno,
        });
    }
    Ok(doc)
}

/// Formats `value` so that [`parse`] reads it back unchanged.
///
/// Values must not have leading or trailing whitespace, and no line of a
/// multi-line value may end in a backslash.
pub fn format_value(value: &str) -> String {
    value.replace('\n', "\\\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input() {
        assert_eq!(parse("").unwrap(), IniDocument::default());
        assert_eq!(
            parse("\n# only a comment\n; another\n")
                .unwrap()
                .sections
                .len(),
            0
        );
    }

    #[test]
    fn sections_and_entries_keep_order() {
        let doc = parse("[b]\nx = 1\n[a]\ny = two words \nx=3\n").unwrap();
        let names: Vec<_> = doc.sections.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, ["b", "a"]);
        assert_eq!(doc.sections[1].get("y"), Some("two words"));
        assert_eq!(doc.sections[1].entries[1].line, 5);
    }

    #[test]
    fn comment_leader_is_a_plain_value() {
        let doc = parse("[prompt-bash]\ncomment = #\n").unwrap();
        assert_eq!(doc.sections[0].get("comment"), Some("#"));
    }

    #[test]
    fn continuation_lines() {
        let doc = parse("[s]\nk = first \\\n  second\\\nthird\nz = 1\n").unwrap();
        assert_eq!(doc.sections[0].get("k"), Some("first \n  second\nthird"));
        assert_eq!(doc.sections[0].get("z"), Some("1"));
    }

    #[test]
    fn continuation_at_eof() {
        let doc = parse("[s]\nk = a\\").unwrap();
        assert_eq!(doc.sections[0].get("k"), Some("a"));
    }

    #[test]
    fn syntax_errors_report_line() {
        assert_eq!(parse("[s]\n\nnot an entry\n").unwrap_err().line, 3);
        assert_eq!(parse("k = v\n").unwrap_err().line, 1);
        assert_eq!(parse("[open\n").unwrap_err().line, 1);
        assert_eq!(parse("[s]\n = v\n").unwrap_err().line, 2);
    }

    #[test]
    fn formatted_values_read_back() {
        let value = "line one\nline two = with equals\n# not a comment";
        let text = format!("[s]\nk = {}\n", format_value(value));
        assert_eq!(parse(&text).unwrap().sections[0].get("k"), Some(value));
    }
}
