//! Passage collections. TSV on disk: `passage_id<TAB>text`, UTF-8.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Passage {
    pub id: String,
    pub text: String,
}

impl Passage {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Passage {
            id: id.into(),
            text: text.into(),
        }
    }
}

/// Resolves passage ids to their text.
pub trait PassageStore {
    fn text(&self, id: &str) -> Option<&str>;
}

/// An in-memory collection keyed by passage id.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    passages: BTreeMap<String, String>,
}

impl Corpus {
    /// Builds a corpus, rejecting duplicate ids.
    pub fn from_passages(passages: impl IntoIterator<Item = Passage>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for p in passages {
            if p.id.is_empty() {
                return Err(Error::invalid("empty passage id"));
            }
            if map.insert(p.id.clone(), p.text).is_some() {
                return Err(Error::invalid(format!("duplicate passage id {:?}", p.id)));
            }
        }
        Ok(Corpus { passages: map })
    }

    pub fn read_tsv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::parse_tsv(std::io::BufReader::new(file), &path.display().to_string())
    }

    pub fn parse_tsv(reader: impl BufRead, name: &str) -> Result<Self> {
        let mut passages = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(name, e))?;
            let line = line.strip_suffix('\r').unwrap_or(&line);
            if line.trim().is_empty() {
                continue;
            }
            let (id, text) = line.split_once('\t').ok_or_else(|| Error::Parse {
                path: name.to_owned(),
                line: i + 1,
                message: "expected passage_id<TAB>text".into(),
            })?;
            passages.push(Passage::new(id.trim(), text));
        }
        Self::from_passages(passages).map_err(|e| match e {
            Error::InvalidInput(m) => Error::Parse {
                path: name.to_owned(),
                line: 0,
                message: m,
            },
            other => other,
        })
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }

    /// Passages in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.passages.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn passages(&self) -> impl Iterator<Item = Passage> + '_ {
        self.iter().map(|(id, text)| Passage::new(id, text))
    }
}

impl PassageStore for Corpus {
    fn text(&self, id: &str) -> Option<&str> {
        self.passages.get(id).map(String::as_str)
    }
}

impl PassageStore for BTreeMap<String, String> {
    fn text(&self, id: &str) -> Option<&str> {
        self.get(id).map(String::as_str)
    }
}

impl PassageStore for std::collections::HashMap<String, String> {
    fn text(&self, id: &str) -> Option<&str> {
        self.get(id).map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_tsv_and_rejects_duplicates() {
        let c = Corpus::parse_tsv("b\tsecond\na\tfirst passage\n\n".as_bytes(), "t").unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.iter().map(|(id, _)| id).collect::<Vec<_>>(), ["a", "b"]);
        assert_eq!(c.text("a"), Some("first passage"));

        assert!(Corpus::parse_tsv("a\tx\na\ty\n".as_bytes(), "t").is_err());
        assert!(Corpus::parse_tsv("no tab here\n".as_bytes(), "t").is_err());
    }
}
