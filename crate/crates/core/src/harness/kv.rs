use std::fmt::Display;
use std::str::FromStr;

use super::{HarnessError, Origin};

#[derive(Debug, Clone, PartialEq)]
pub struct KvEntry {
    pub key: String,
    pub value: String,
    /// Position of the key.
    pub origin: Origin,
    /// Position of the value, for value errors.
    pub value_origin: Origin,
}

/// Ordered `key = value` entries with unique keys.
///
/// Blank lines and lines whose first non-blank character is `#` are skipped.
/// A line consisting of `---` ends the document.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvDocument {
    entries: Vec<KvEntry>,
}

fn valid_key(key: &str) -> bool {
    !key.is_empty()
        && key
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-'))
}

impl KvDocument {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        Self::parse_with_body(text).map(|(doc, _)| doc)
    }

    /// Also returns whatever follows the `---` line, if there is one.
    pub fn parse_with_body(text: &str) -> Result<(Self, Option<&str>), HarnessError> {
        let mut doc = Self::default();
        let mut offset = 0;
        for (idx, raw) in text.split_inclusive('\n').enumerate() {
            offset += raw.len();
            let line = idx + 1;
            let content = raw.trim_end_matches(['\n', '\r']);
            let trimmed = content.trim();
            if trimmed == "---" {
                return Ok((doc, Some(&text[offset..])));
            }
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let indent = content.len() - content.trim_start().len();
            let Some(eq) = content.find('=') else {
                return Err(HarnessError::Syntax {
                    line,
                    column: indent + 1,
                    message: "expected `key = value`".into(),
                });
            };
            let key = content[..eq].trim();
            if !valid_key(key) {
                return Err(HarnessError::Syntax {
                    line,
                    column: indent + 1,
                    message: format!("invalid key `{key}`"),
                });
            }
            let after = &content[eq + 1..];
            let value = after.trim();
            let value_column = eq + 2 + (after.len() - after.trim_start().len());
            if value.is_empty() {
                return Err(HarnessError::Syntax {
                    line,
                    column: value_column,
                    message: format!("missing value for `{key}`"),
                });
            }
            if let Some(first) = doc.get(key) {
                return Err(HarnessError::Syntax {
                    line,
                    column: indent + 1,
                    message: format!("duplicate key `{key}` (first set at {})", first.origin),
                });
            }
            doc.entries.push(KvEntry {
                key: key.to_string(),
                value: value.to_string(),
                origin: Origin::Line {
                    line,
                    column: indent + 1,
                },
                value_origin: Origin::Line {
                    line,
                    column: value_column,
                },
            });
        }
        Ok((doc, None))
    }

    pub fn entries(&self) -> &[KvEntry] {
        &self.entries
    }

    pub fn get(&self, key: &str) -> Option<&KvEntry> {
        self.entries.iter().find(|e| e.key == key)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.get(key).is_some()
    }

    /// Sets `key`, replacing an existing value in place.
    pub fn set(&mut self, key: &str, value: impl Into<String>, origin: Origin) {
        let value = value.into();
        match self.entries.iter_mut().find(|e| e.key == key) {
            Some(e) => {
                e.value = value;
                e.origin = origin;
                e.value_origin = origin;
            }
            None => self.entries.push(KvEntry {
                key: key.to_string(),
                value,
                origin,
                value_origin: origin,
            }),
        }
    }

    pub fn remove(&mut self, key: &str) -> Option<KvEntry> {
        let idx = self.entries.iter().position(|e| e.key == key)?;
        Some(self.entries.remove(idx))
    }

    /// Applies a `KEY=VALUE` override; later overrides win.
    pub fn apply_override(&mut self, spec: &str) -> Result<(), HarnessError> {
        let bad = |message: String| HarnessError::Invalid {
            key: spec.to_string(),
            origin: Origin::Override,
            message,
        };
        let (key, value) = spec
            .split_once('=')
            .ok_or_else(|| bad("expected KEY=VALUE".into()))?;
        let (key, value) = (key.trim(), value.trim());
        if !valid_key(key) {
            return Err(bad(format!("invalid key `{key}`")));
        }
        if value.is_empty() {
            return Err(bad(format!("missing value for `{key}`")));
        }
        self.set(key, value, Origin::Override);
        Ok(())
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{} = {}\n", e.key, e.value))
            .collect()
    }

    /// Best position for an error about `key`: the entry itself, or the first
    /// entry under `key.` when `key` names a group.
    pub fn locate(&self, key: &str) -> Origin {
        if let Some(e) = self.get(key) {
            return e.value_origin;
        }
        let prefix = format!("{key}.");
        self.entries
            .iter()
            .find(|e| e.key.starts_with(&prefix))
            .map_or(Origin::Document, |e| e.origin)
    }

    /// Fills in the position of a document-level error from this document.
    pub(crate) fn relocate(&self, err: HarnessError) -> HarnessError {
        match err {
            HarnessError::Invalid {
                key,
                origin: Origin::Document,
                message,
            } => HarnessError::Invalid {
                origin: self.locate(&key),
                key,
                message,
            },
            other => other,
        }
    }
}

/// Reads typed values from a document and tracks which keys were used, so
/// that leftovers can be reported as unknown.
pub(crate) struct KvReader<'a> {
    doc: &'a KvDocument,
    used: Vec<bool>,
}

impl<'a> KvReader<'a> {
    pub fn new(doc: &'a KvDocument) -> Self {
        Self {
            doc,
            used: vec![false; doc.entries.len()],
        }
    }

    pub fn document(&self) -> &'a KvDocument {
        self.doc
    }

    pub fn raw(&mut self, key: &str) -> Option<&'a KvEntry> {
        let idx = self.doc.entries.iter().position(|e| e.key == key)?;
        self.used[idx] = true;
        Some(&self.doc.entries[idx])
    }

    /// Marks every key under `prefix` as used and returns them in order.
    pub fn prefixed(&mut self, prefix: &str) -> Vec<&'a KvEntry> {
        let mut out = Vec::new();
        for (idx, e) in self.doc.entries.iter().enumerate() {
            if e.key.starts_with(prefix) {
                self.used[idx] = true;
                out.push(e);
            }
        }
        out
    }

    pub fn error(entry: &KvEntry, message: impl Into<String>) -> HarnessError {
        HarnessError::Invalid {
            key: entry.key.clone(),
            origin: entry.value_origin,
            message: message.into(),
        }
    }

    pub fn get<T>(&mut self, key: &str) -> Result<Option<T>, HarnessError>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some(e) => parse_value(e).map(Some),
        }
    }

    pub fn get_or<T>(&mut self, key: &str, default: T) -> Result<T, HarnessError>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T>(&mut self, key: &str) -> Result<T, HarnessError>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.get(key)?
            .ok_or_else(|| HarnessError::Missing(key.to_string()))
    }

    pub fn list(&mut self, key: &str) -> Result<Option<Vec<f64>>, HarnessError> {
        match self.raw(key) {
            None => Ok(None),
            Some(e) => parse_list(e).map(Some),
        }
    }

    /// A real value that must be finite and strictly positive.
    pub fn positive(&mut self, key: &str) -> Result<Option<f64>, HarnessError> {
        let Some(v) = self.get::<f64>(key)? else {
            return Ok(None);
        };
        if !(v.is_finite() && v > 0.0) {
            let e = self.doc.get(key).expect("entry just read");
            return Err(Self::error(e, format!("must be positive, got {v}")));
        }
        Ok(Some(v))
    }

    /// Errors on the first entry nobody read.
    pub fn finish(self) -> Result<(), HarnessError> {
        match self.used.iter().position(|u| !u) {
            None => Ok(()),
            Some(idx) => {
                let e = &self.doc.entries[idx];
                Err(HarnessError::UnknownKey {
                    key: e.key.clone(),
                    origin: e.origin,
                })
            }
        }
    }
}

fn parse_value<T>(e: &KvEntry) -> Result<T, HarnessError>
where
    T: FromStr,
    T::Err: Display,
{
    e.value
        .parse::<T>()
        .map_err(|err| KvReader::error(e, format!("cannot parse `{}`: {err}", e.value)))
}

pub(crate) fn parse_list(e: &KvEntry) -> Result<Vec<f64>, HarnessError> {
    e.value
        .split(',')
        .map(|part| {
            let part = part.trim();
            part.parse::<f64>().map_err(|err| {
                KvReader::error(e, format!("cannot parse list item `{part}`: {err}"))
            })
        })
        .collect()
}

pub(crate) fn join_floats(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_entries_comments_and_body() {
        let text = "# header\nstates = 3\n\n  discount=0.9\n---\nstep,x\n";
        let (doc, body) = KvDocument::parse_with_body(text).unwrap();
        assert_eq!(doc.entries().len(), 2);
        assert_eq!(doc.get("discount").unwrap().value, "0.9");
        assert_eq!(
            doc.get("discount").unwrap().origin,
            Origin::Line { line: 4, column: 3 }
        );
        assert_eq!(body, Some("step,x\n"));
    }

    #[test]
    fn reports_positions() {
        let err = KvDocument::parse("a = 1\nnonsense\n").unwrap_err();
        assert_eq!(
            err,
            HarnessError::Syntax {
                line: 2,
                column: 1,
                message: "expected `key = value`".into()
            }
        );
        let err = KvDocument::parse("a = 1\na = 2\n").unwrap_err();
        assert!(err
            .to_string()
            .starts_with("line 2, column 1: duplicate key `a`"));
        let err = KvDocument::parse("a =   \n").unwrap_err();
        assert!(matches!(err, HarnessError::Syntax { line: 1, .. }));
    }

    #[test]
    fn overrides_are_last_writer_wins() {
        let mut doc = KvDocument::parse("a = 1\n").unwrap();
        doc.apply_override("a=2").unwrap();
        doc.apply_override("b = x").unwrap();
        doc.apply_override("a=3").unwrap();
        assert_eq!(doc.to_text(), "a = 3\nb = x\n");
        assert!(doc.apply_override("novalue").is_err());
    }

    #[test]
    fn reader_flags_unused_and_bad_values() {
        let doc = KvDocument::parse("rate = -1\nsteps = ten\nextra = 1\n").unwrap();
        let mut r = KvReader::new(&doc);
        let err = r.positive("rate").unwrap_err();
        assert_eq!(err.key(), Some("rate"));
        assert!(err.to_string().contains("must be positive"));
        let err = r.get::<u64>("steps").unwrap_err();
        assert!(err.to_string().starts_with("line 2, column 9: steps:"));
        let err = r.finish().unwrap_err();
        assert_eq!(err.to_string(), "line 3, column 1: unknown key `extra`");
    }
}
