//! On-disk index layout:
//!
//! ```text
//! <dir>/manifest.json   format, version, preprocessing fingerprint, stats
//! <dir>/passages.tsv    passage_id<TAB>length, in id order
//! <dir>/postings.tsv    term<TAB>cf<TAB>doc:tf doc:tf ...
//! ```

use std::fmt::Write as _;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::InvertedIndex;
use crate::error::{Error, Result};
use crate::io_util;
use crate::preproc::{self, Term};

pub const INDEX_FORMAT_VERSION: u32 = 1;
const FORMAT_NAME: &str = "convres-index";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    format_version: u32,
    preprocessing: String,
    num_passages: usize,
    num_terms: usize,
    total_tokens: u64,
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

impl InvertedIndex {
    pub fn save(&self, dir: &Path) -> Result<()> {
        io_util::write_dir_atomic(dir, |staging| {
            let manifest = Manifest {
                format: FORMAT_NAME.into(),
                format_version: INDEX_FORMAT_VERSION,
                preprocessing: self.preprocessing.clone(),
                num_passages: self.num_passages(),
                num_terms: self.num_terms(),
                total_tokens: self.total_tokens,
            };
            let mut json = serde_json::to_string_pretty(&manifest)?;
            json.push('\n');
            io_util::write_atomic(&staging.join("manifest.json"), json.as_bytes())?;

            let mut docs = String::new();
            for (id, len) in self.doc_ids.iter().zip(&self.doc_len) {
                writeln!(docs, "{id}\t{len}").expect("string write");
            }
            io_util::write_atomic(&staging.join("passages.tsv"), docs.as_bytes())?;

            let mut postings = String::new();
            for (term, stats) in &self.terms {
                write!(postings, "{term}\t{}\t", stats.collection_freq).expect("string write");
                for (i, p) in stats.postings.iter().enumerate() {
                    if i > 0 {
                        postings.push(' ');
                    }
                    write!(postings, "{}:{}", p.doc, p.tf).expect("string write");
                }
                postings.push('\n');
            }
            io_util::write_atomic(&staging.join("postings.tsv"), postings.as_bytes())
        })
    }

    /// Loads an index, rejecting unknown format versions and indexes built
    /// with a different preprocessing pipeline.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join("manifest.json");
        let raw = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: Manifest = serde_json::from_str(&raw)?;
        if manifest.format != FORMAT_NAME || manifest.format_version != INDEX_FORMAT_VERSION {
            return Err(Error::Incompatible {
                path: dir.to_owned(),
                message: format!(
                    "expected {FORMAT_NAME} v{INDEX_FORMAT_VERSION}, found {} v{}",
                    manifest.format, manifest.format_version
                ),
            });
        }
        if manifest.preprocessing != preproc::fingerprint() {
            return Err(Error::Incompatible {
                path: dir.to_owned(),
                message: format!(
                    "index preprocessing {:?} differs from this build's {:?}",
                    manifest.preprocessing,
                    preproc::fingerprint()
                ),
            });
        }

        let docs_path = dir.join("passages.tsv");
        let file = std::fs::File::open(&docs_path).map_err(|e| Error::io(&docs_path, e))?;
        let mut doc_ids = Vec::new();
        let mut stored_len = Vec::new();
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&docs_path, e))?;
            let (id, len) = line
                .split_once('\t')
                .ok_or_else(|| parse_err(&docs_path, i + 1, "expected id<TAB>length"))?;
            let len: u32 = len.parse().map_err(|_| parse_err(&docs_path, i + 1, "bad length"))?;
            doc_ids.push(id.to_owned());
            stored_len.push(len);
        }
        if !doc_ids.windows(2).all(|w| w[0] < w[1]) {
            return Err(parse_err(&docs_path, 0, "passage ids not strictly sorted"));
        }

        let post_path = dir.join("postings.tsv");
        let file = std::fs::File::open(&post_path).map_err(|e| Error::io(&post_path, e))?;
        let mut doc_terms: Vec<Vec<(Term, u32)>> = vec![Vec::new(); doc_ids.len()];
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&post_path, e))?;
            let err = |m: &str| parse_err(&post_path, i + 1, m);
            let mut fields = line.split('\t');
            let (Some(term), Some(_cf), Some(list), None) =
                (fields.next(), fields.next(), fields.next(), fields.next())
            else {
                return Err(err("expected term<TAB>cf<TAB>postings"));
            };
            let term = Term::parse(term).ok_or_else(|| err("term is not in normal form"))?;
            for entry in list.split(' ') {
                let (doc, tf) = entry.split_once(':').ok_or_else(|| err("expected doc:tf"))?;
                let doc: usize = doc.parse().map_err(|_| err("bad doc number"))?;
                let tf: u32 = tf.parse().map_err(|_| err("bad tf"))?;
                doc_terms
                    .get_mut(doc)
                    .ok_or_else(|| err("doc number out of range"))?
                    .push((term.clone(), tf));
            }
        }
        for v in &mut doc_terms {
            v.sort();
        }
        let index = InvertedIndex::from_doc_terms(doc_ids, doc_terms, manifest.preprocessing);
        if index.doc_len != stored_len
            || index.total_tokens != manifest.total_tokens
            || index.num_terms() != manifest.num_terms
            || index.num_passages() != manifest.num_passages
        {
            return Err(Error::Incompatible {
                path: dir.to_owned(),
                message: "stored statistics disagree with postings".into(),
            });
        }
        index.check()?;
        Ok(index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Passage;

    #[test]
    fn save_load_round_trip_and_rejections() {
        let index = InvertedIndex::build([
            Passage::new("b", "Saosin released their first album"),
            Passage::new("a", "the band saosin formed in 2003"),
            Passage::new("c", ""),
        ])
        .unwrap();
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("idx");
        index.save(&dir).unwrap();
        assert_eq!(InvertedIndex::load(&dir).unwrap(), index);

        let manifest = dir.join("manifest.json");
        let text = std::fs::read_to_string(&manifest).unwrap();
        std::fs::write(&manifest, text.replace(&preproc::fingerprint(), "other-pipeline")).unwrap();
        assert!(matches!(InvertedIndex::load(&dir), Err(Error::Incompatible { .. })));

        std::fs::write(&manifest, text.replace("\"format_version\": 1", "\"format_version\": 9")).unwrap();
        assert!(matches!(InvertedIndex::load(&dir), Err(Error::Incompatible { .. })));
    }
}
